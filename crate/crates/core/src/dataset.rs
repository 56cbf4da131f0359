//! Right-censored survival data: loading, standardization and fold splits.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{DcsmError, Result};

/// Smallest admissible time, as a fraction of the time scale.
pub const TIME_FLOOR: f64 = 1e-9;
const STD_FLOOR: f64 = 1e-8;

/// One instance: features, last-followed time, event indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub features: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

/// Affine feature standardization plus time scaling, expressed relative to
/// raw (as loaded) values so it can be replayed on held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub time_scale: f64,
}

impl Transform {
    pub fn identity(dim: usize) -> Self {
        Transform {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
            time_scale: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.time_scale == 1.0
            && self.means.iter().all(|&m| m == 0.0)
            && self.stds.iter().all(|&s| s == 1.0)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// Column means, population standard deviations (floored) and the max time.
    pub fn fit(features: ArrayView2<f64>, times: &[f64]) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(DcsmError::InvalidData(format!(
                "standardization needs at least 2 records, got {n}"
            )));
        }
        let means: Vec<f64> = features.mean_axis(Axis(0)).expect("nonempty").to_vec();
        let stds: Vec<f64> = features
            .axis_iter(Axis(1))
            .zip(&means)
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
                var.sqrt().max(STD_FLOOR)
            })
            .collect();
        let time_scale = times.iter().cloned().fold(0.0, f64::max);
        if !time_scale.is_finite() || time_scale <= 0.0 {
            return Err(DcsmError::InvalidData(
                "maximum time must be positive and finite".into(),
            ));
        }
        Ok(Transform {
            means,
            stds,
            time_scale,
        })
    }

    pub fn apply_features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert_features(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Raw time to scaled time; zero times are floored first.
    pub fn apply_time(&self, t: f64) -> f64 {
        t.max(TIME_FLOOR * self.time_scale) / self.time_scale
    }

    pub fn invert_time(&self, t: f64) -> f64 {
        t * self.time_scale
    }

    /// `outer ∘ self`: applying `self` then `outer` equals applying the result.
    fn then(&self, outer: &Transform) -> Transform {
        let means = self
            .means
            .iter()
            .zip(&self.stds)
            .zip(&outer.means)
            .map(|((m1, s1), m2)| m1 + s1 * m2)
            .collect();
        let stds = self
            .stds
            .iter()
            .zip(&outer.stds)
            .map(|(s1, s2)| s1 * s2)
            .collect();
        Transform {
            means,
            stds,
            time_scale: self.time_scale * outer.time_scale,
        }
    }
}

/// Feature matrix plus per-instance (time, event), stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    features: Array2<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
    feature_names: Vec<String>,
    transform: Transform,
}

impl SurvivalDataset {
    /// Build a raw (untransformed) dataset.
    pub fn new(
        features: Array2<f64>,
        times: Vec<f64>,
        events: Vec<bool>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let d = features.ncols();
        let transform = Transform::identity(d);
        Self::with_transform(features, times, events, feature_names, transform)
    }

    fn with_transform(
        features: Array2<f64>,
        times: Vec<f64>,
        events: Vec<bool>,
        feature_names: Vec<String>,
        transform: Transform,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(DcsmError::EmptyData("dataset has no records".into()));
        }
        if times.len() != n || events.len() != n {
            return Err(DcsmError::InvalidData(format!(
                "{} feature rows but {} times and {} events",
                n,
                times.len(),
                events.len()
            )));
        }
        if feature_names.len() != features.ncols() || transform.dim() != features.ncols() {
            return Err(DcsmError::DimensionMismatch {
                expected: features.ncols(),
                got: feature_names.len(),
            });
        }
        if let Some((i, _)) = features
            .outer_iter()
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(DcsmError::InvalidData(format!(
                "record {i} has a non-finite feature"
            )));
        }
        if let Some((i, t)) = times
            .iter()
            .enumerate()
            .find(|(_, t)| !t.is_finite() || **t < 0.0)
        {
            return Err(DcsmError::InvalidData(format!(
                "record {i} has invalid time {t}"
            )));
        }
        Ok(SurvivalDataset {
            features,
            times,
            events,
            feature_names,
            transform,
        })
    }

    /// Generic column names `f0..f{d-1}`.
    pub fn default_names(dim: usize) -> Vec<String> {
        (0..dim).map(|j| format!("f{j}")).collect()
    }

    pub fn from_records(records: &[SurvivalRecord]) -> Result<Self> {
        let d = records.first().map(|r| r.features.len()).unwrap_or(0);
        if let Some(r) = records.iter().find(|r| r.features.len() != d) {
            return Err(DcsmError::DimensionMismatch {
                expected: d,
                got: r.features.len(),
            });
        }
        let flat: Vec<f64> = records.iter().flat_map(|r| r.features.clone()).collect();
        let features = Array2::from_shape_vec((records.len(), d), flat)
            .map_err(|e| DcsmError::InvalidData(e.to_string()))?;
        Self::new(
            features,
            records.iter().map(|r| r.time).collect(),
            records.iter().map(|r| r.event).collect(),
            Self::default_names(d),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn time_scale(&self) -> f64 {
        self.transform.time_scale
    }

    pub fn is_raw(&self) -> bool {
        self.transform.is_identity()
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn record(&self, i: usize) -> SurvivalRecord {
        SurvivalRecord {
            features: self.features.row(i).to_vec(),
            time: self.times[i],
            event: self.events[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = SurvivalRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Times and features mapped back to raw units.
    pub fn raw_times(&self) -> Vec<f64> {
        self.times
            .iter()
            .map(|&t| self.transform.invert_time(t))
            .collect()
    }

    /// Rows at `indices`, keeping the current transform.
    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            features: self.features.select(Axis(0), indices),
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
            feature_names: self.feature_names.clone(),
            transform: self.transform.clone(),
        }
    }

    /// Standardize features and max-scale times using statistics of this
    /// dataset. The combined raw-to-stored transform is recorded.
    pub fn standardize_and_scale(&self) -> Result<SurvivalDataset> {
        let step = Transform::fit(self.features.view(), &self.times)?;
        let out = self.apply_step(&step);
        Ok(out)
    }

    /// Replay a transform fitted elsewhere onto this raw dataset.
    pub fn apply_transform(&self, transform: &Transform) -> Result<SurvivalDataset> {
        if !self.is_raw() {
            return Err(DcsmError::InvalidData(
                "transform can only be replayed onto raw data".into(),
            ));
        }
        if transform.dim() != self.dim() {
            return Err(DcsmError::DimensionMismatch {
                expected: transform.dim(),
                got: self.dim(),
            });
        }
        Ok(self.apply_step(transform))
    }

    fn apply_step(&self, step: &Transform) -> SurvivalDataset {
        let mut features = self.features.clone();
        for mut row in features.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&step.means).zip(&step.stds) {
                *v = (*v - m) / s;
            }
        }
        SurvivalDataset {
            features,
            times: self.times.iter().map(|&t| step.apply_time(t)).collect(),
            events: self.events.clone(),
            feature_names: self.feature_names.clone(),
            transform: self.transform.then(step),
        }
    }

    /// Map stored values back to raw units.
    pub fn inverse_transform(&self) -> SurvivalDataset {
        let mut features = self.features.clone();
        for mut row in features.outer_iter_mut() {
            let raw = self
                .transform
                .invert_features(row.as_slice().expect("contiguous"));
            row.assign(&ArrayView1::from(&raw));
        }
        SurvivalDataset {
            features,
            times: self.raw_times(),
            events: self.events.clone(),
            feature_names: self.feature_names.clone(),
            transform: Transform::identity(self.dim()),
        }
    }

    pub fn kfold(&self, fold_count: usize, seed: u64) -> Result<FoldSplit> {
        FoldSplit::new(self.len(), fold_count, seed)
    }

    /// Load a CSV with a header row. All columns other than the time and
    /// event columns become features, in file order.
    pub fn load_csv(path: impl AsRef<Path>, time_column: &str, event_column: &str) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DcsmError::MissingColumn(name.to_string()))
        };
        let time_idx = find(time_column)?;
        let event_idx = find(event_column)?;
        let feature_cols: Vec<usize> = (0..headers.len())
            .filter(|&j| j != time_idx && j != event_idx)
            .collect();
        let names: Vec<String> = feature_cols
            .iter()
            .map(|&j| headers[j].to_string())
            .collect();

        let mut flat = Vec::new();
        let mut times = Vec::new();
        let mut events = Vec::new();
        for (row_no, rec) in reader.records().enumerate() {
            let row = row_no + 1;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let cell = |j: usize| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("");
                let v: f64 = raw.parse().map_err(|_| DcsmError::Parse {
                    row,
                    column: headers[j].to_string(),
                    message: format!("`{raw}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(DcsmError::Parse {
                        row,
                        column: headers[j].to_string(),
                        message: "non-finite value".into(),
                    });
                }
                Ok(v)
            };
            for &j in &feature_cols {
                flat.push(cell(j)?);
            }
            let t = cell(time_idx)?;
            if t < 0.0 {
                return Err(DcsmError::Parse {
                    row,
                    column: time_column.to_string(),
                    message: "time must be nonnegative".into(),
                });
            }
            times.push(t);
            let ev = rec.get(event_idx).unwrap_or("");
            events.push(parse_event(ev).ok_or_else(|| DcsmError::Parse {
                row,
                column: event_column.to_string(),
                message: format!("event must be 0 or 1, got `{ev}`"),
            })?);
        }
        if times.is_empty() {
            return Err(DcsmError::EmptyData(format!(
                "{} has no data rows",
                path.display()
            )));
        }
        let features = Array2::from_shape_vec((times.len(), feature_cols.len()), flat)
            .map_err(|e| DcsmError::InvalidData(e.to_string()))?;
        Self::new(features, times, events, names)
    }

    /// Write the dataset (in stored units) as `features..., time, event`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("time");
        header.push("event");
        w.write_record(&header)?;
        let mut buf = Vec::with_capacity(self.dim() + 2);
        for i in 0..self.len() {
            buf.clear();
            buf.extend(self.features.row(i).iter().map(|v| v.to_string()));
            buf.push(self.times[i].to_string());
            buf.push(if self.events[i] { "1" } else { "0" }.to_string());
            w.write_record(&buf)?;
        }
        w.flush()
    }
}

fn parse_event(s: &str) -> Option<bool> {
    match s {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => match s.parse::<f64>() {
            Ok(1.0) => Some(true),
            Ok(0.0) => Some(false),
            _ => None,
        },
    }
}

fn csv_error(path: &Path, e: csv::Error) -> DcsmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DcsmError::io(path, io),
        other => DcsmError::InvalidData(format!("{}: {:?}", path.display(), other)),
    }
}

/// Assignment of each record to one of `fold_count` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_count: usize,
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    /// Shuffle `0..n` with the seeded generator and deal the permutation
    /// round-robin, so fold sizes differ by at most one.
    pub fn new(n: usize, fold_count: usize, seed: u64) -> Result<Self> {
        if fold_count < 2 || fold_count > n {
            return Err(DcsmError::Config(format!(
                "fold count must be in [2, {n}], got {fold_count}"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut crate::seeded_rng(seed));
        let mut assignments = vec![0; n];
        for (pos, &idx) in perm.iter().enumerate() {
            assignments[idx] = pos % fold_count;
        }
        Ok(FoldSplit {
            fold_count,
            assignments,
        })
    }

    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}
