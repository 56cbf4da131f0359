//! Cluster-structured synthetic survival data with Uniform features,
//! cluster-specific Weibull event times and independent censoring.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Open01, Weibull};
use serde::Serialize;

use crate::dataset::SurvivalDataset;
use crate::error::{DcsmError, Result};
use crate::exec::Execution;
use crate::persist::write_atomic;

pub const GRID_SIZES: [usize; 6] = [200, 500, 1000, 3000, 5000, 10000];
pub const GRID_DIMS: [usize; 6] = [10, 20, 50, 200, 500, 1000];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub k_true: usize,
    pub censoring_fraction: f64,
    pub shape_range: (f64, f64),
    pub base_log_scale_range: (f64, f64),
    pub coef_scale: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 1000,
            d: 10,
            k_true: 2,
            censoring_fraction: 0.3,
            shape_range: (0.9, 2.0),
            base_log_scale_range: (-0.5, 0.5),
            coef_scale: 1.0,
            separation: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Wider center spread, wider base log-scale range and less dispersed
    /// Weibull noise than the defaults, for recovery experiments.
    pub fn well_separated() -> Self {
        SyntheticConfig {
            shape_range: (2.0, 4.0),
            base_log_scale_range: (-1.5, 1.5),
            separation: 2.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DcsmError::Config(m));
        if self.n < 2 || self.d == 0 || self.k_true == 0 {
            return bad(format!(
                "need n ≥ 2, d ≥ 1, k ≥ 1 (got n={}, d={}, k={})",
                self.n, self.d, self.k_true
            ));
        }
        if !(0.0..1.0).contains(&self.censoring_fraction) {
            return bad(format!(
                "censoring fraction must lie in [0, 1), got {}",
                self.censoring_fraction
            ));
        }
        let (lo, hi) = self.shape_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("invalid shape range ({lo}, {hi})"));
        }
        let (lo, hi) = self.base_log_scale_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return bad(format!("invalid base log-scale range ({lo}, {hi})"));
        }
        if !(self.coef_scale >= 0.0 && self.separation >= 0.0) {
            return bad("coef_scale and separation must be nonnegative".into());
        }
        Ok(())
    }
}

/// Ground truth for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterParams {
    pub shape: f64,
    pub base_log_scale: f64,
    pub coefficients: Vec<f64>,
    pub center: Vec<f64>,
}

impl ClusterParams {
    /// Log of the median latent time for an instance sitting at the cluster
    /// center.
    pub fn center_log_median(&self) -> f64 {
        let eta: f64 = self
            .center
            .iter()
            .zip(&self.coefficients)
            .map(|(u, b)| u * b)
            .sum();
        self.base_log_scale + eta + std::f64::consts::LN_2.ln() / self.shape
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: SurvivalDataset,
    pub true_labels: Vec<usize>,
    pub true_params: Vec<ClusterParams>,
    pub uncensored_times: Vec<f64>,
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draw a dataset:
/// 1. label uniform over the clusters;
/// 2. one center per cluster, coordinates uniform in ±separation;
/// 3. features = center + Uniform(±0.5) noise per coordinate;
/// 4. latent time ~ Weibull(μ_c, exp(b_c + β_c·x));
/// 5. censor with probability `censoring_fraction`, observing a time
///    uniform strictly below the latent one.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = crate::seeded_rng(cfg.seed);
    let coef_bound = cfg.coef_scale / (cfg.d as f64).sqrt();
    let params: Vec<ClusterParams> = (0..cfg.k_true)
        .map(|_| {
            let center = (0..cfg.d)
                .map(|_| uniform(&mut rng, -cfg.separation, cfg.separation))
                .collect();
            let shape = uniform(&mut rng, cfg.shape_range.0, cfg.shape_range.1);
            let base_log_scale = uniform(
                &mut rng,
                cfg.base_log_scale_range.0,
                cfg.base_log_scale_range.1,
            );
            let coefficients = (0..cfg.d)
                .map(|_| uniform(&mut rng, -coef_bound, coef_bound))
                .collect();
            ClusterParams {
                shape,
                base_log_scale,
                coefficients,
                center,
            }
        })
        .collect();

    let mut features = Array2::zeros((cfg.n, cfg.d));
    let mut labels = Vec::with_capacity(cfg.n);
    let mut latent = Vec::with_capacity(cfg.n);
    let mut times = Vec::with_capacity(cfg.n);
    let mut events = Vec::with_capacity(cfg.n);
    for (i, mut row) in features.outer_iter_mut().enumerate() {
        let c = rng.random_range(0..cfg.k_true);
        let p = &params[c];
        for (x, u) in row.iter_mut().zip(&p.center) {
            *x = u + rng.random_range(-0.5..0.5);
        }
        let eta: f64 = row.iter().zip(&p.coefficients).map(|(x, b)| x * b).sum();
        let law = Weibull::new((p.base_log_scale + eta).exp(), p.shape)
            .map_err(|e| DcsmError::Config(format!("instance {i}: {e}")))?;
        let t: f64 = law.sample(&mut rng);
        let censored = rng.random::<f64>() < cfg.censoring_fraction;
        if censored {
            let u: f64 = Open01.sample(&mut rng);
            times.push(t * u);
            events.push(false);
        } else {
            times.push(t);
            events.push(true);
        }
        labels.push(c);
        latent.push(t);
    }
    let dataset = SurvivalDataset::new(
        features,
        times,
        events,
        SurvivalDataset::default_names(cfg.d),
    )?;
    Ok(SyntheticDataset {
        dataset,
        true_labels: labels,
        true_params: params,
        uncensored_times: latent,
    })
}

impl SyntheticDataset {
    /// Smallest gap in center log-median time over all cluster pairs; 0 for a
    /// single cluster.
    pub fn survival_separation(&self) -> f64 {
        let m: Vec<f64> = self
            .true_params
            .iter()
            .map(ClusterParams::center_log_median)
            .collect();
        let mut gap = f64::INFINITY;
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                gap = gap.min((m[i] - m[j]).abs());
            }
        }
        if gap.is_finite() {
            gap
        } else {
            0.0
        }
    }
}

pub fn write_labels<W: Write>(labels: &[usize], mut out: W) -> std::io::Result<()> {
    writeln!(out, "instance_id,true_cluster")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}

/// Write `dataset` and its labels next to each other, atomically.
pub fn write_dataset(sd: &SyntheticDataset, data_path: &Path, labels_path: &Path) -> Result<()> {
    write_atomic(data_path, |w| sd.dataset.write_csv(w))?;
    write_atomic(labels_path, |w| write_labels(&sd.true_labels, w))
}

#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub data_file: String,
    pub labels_file: String,
    pub censored_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridManifest {
    pub base: SyntheticConfig,
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub cells: Vec<GridCell>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Generate every (n, d) cell of the benchmark grid into `out_dir`, with a
/// per-cell seed derived from the base seed and the cell index.
pub fn generate_grid(
    base: &SyntheticConfig,
    out_dir: &Path,
    exec: Execution,
) -> Result<GridManifest> {
    generate_grid_with(base, &GRID_SIZES, &GRID_DIMS, out_dir, exec)
}

pub fn generate_grid_with(
    base: &SyntheticConfig,
    sizes: &[usize],
    dims: &[usize],
    out_dir: &Path,
    exec: Execution,
) -> Result<GridManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| DcsmError::io(out_dir, e))?;
    let cells: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&n| dims.iter().map(move |&d| (n, d)))
        .collect();
    let results = exec.map_range(cells.len(), |idx| -> Result<GridCell> {
        let (n, d) = cells[idx];
        let cfg = SyntheticConfig {
            n,
            d,
            seed: crate::mix_seed(base.seed, idx as u64),
            ..base.clone()
        };
        let sd = generate(&cfg)?;
        let data_file = format!("synthetic_n{n}_d{d}.csv");
        let labels_file = format!("synthetic_n{n}_d{d}_labels.csv");
        let path = |f: &str| -> PathBuf { out_dir.join(f) };
        write_dataset(&sd, &path(&data_file), &path(&labels_file))?;
        let censored = sd.dataset.len() - sd.dataset.event_count();
        Ok(GridCell {
            n,
            d,
            seed: cfg.seed,
            data_file,
            labels_file,
            censored_fraction: censored as f64 / n as f64,
        })
    });
    let manifest = GridManifest {
        base: base.clone(),
        sizes: sizes.to_vec(),
        dims: dims.to_vec(),
        cells: results.into_iter().collect::<Result<_>>()?,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("serializable");
    write_atomic(&out_dir.join(MANIFEST_FILE), |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")
    })?;
    Ok(manifest)
}
