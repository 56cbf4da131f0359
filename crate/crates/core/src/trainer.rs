//! Mini-batch training, early stopping, grid search and k-fold
//! cross-validation.

use std::fmt;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::dataset::{FoldSplit, SurvivalDataset};
use crate::error::{DcsmError, Result};
use crate::exec::Execution;
use crate::metrics::{self, CIndexResult, LogRankResult};
use crate::model::{Batch, DcsmModel, LossBreakdown};
use crate::optim::Adam;
use crate::weibull::fit_single_mle;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub k_experts: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k_experts: 2,
            lambda: 1.0,
            learning_rate: 1e-3,
            hidden: vec![50],
            batch_size: 128,
            max_epochs: 500,
            patience: 20,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

pub const DEFAULT_LAMBDAS: [f64; 3] = [0.5, 0.75, 1.0];
pub const DEFAULT_LEARNING_RATES: [f64; 2] = [1e-3, 1e-4];

pub fn default_hidden_grid() -> Vec<Vec<usize>> {
    vec![vec![50], vec![50, 50]]
}

/// The 3 × 2 × 2 grid over trade-off weight, step size and architecture,
/// other fields taken from `base`.
pub fn default_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    cartesian(
        base,
        &DEFAULT_LAMBDAS,
        &DEFAULT_LEARNING_RATES,
        &default_hidden_grid(),
    )
}

pub fn cartesian(
    base: &TrainConfig,
    lambdas: &[f64],
    learning_rates: &[f64],
    hiddens: &[Vec<usize>],
) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for &lambda in lambdas {
        for &learning_rate in learning_rates {
            for hidden in hiddens {
                out.push(TrainConfig {
                    lambda,
                    learning_rate,
                    hidden: hidden.clone(),
                    ..base.clone()
                });
            }
        }
    }
    out
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s == "none" || s == "[]" {
        return Ok(vec![]);
    }
    s.trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| DcsmError::Config(format!("bad layer width `{w}`")))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| DcsmError::Config(format!("`{key}`: cannot parse `{v}`")))
}

/// `key = value` lines; `#` starts a comment.
fn kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DcsmError::Config(format!("line {}: expected `key = value`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k_experts" => self.k_experts = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "hidden" => self.hidden = parse_hidden(value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "val_fraction" => self.val_fraction = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => return Err(DcsmError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a flat key-value config file on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv_lines(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "k_experts = {}\nlambda = {}\nlearning_rate = {}\nhidden = {}\nbatch_size = {}\n\
             max_epochs = {}\npatience = {}\nval_fraction = {}\nseed = {}\n",
            self.k_experts,
            self.lambda,
            self.learning_rate,
            hidden.join(","),
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.val_fraction,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DcsmError::Config(m.to_string()));
        if self.k_experts == 0 {
            return bad("k_experts must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be nonnegative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "K={} λ={} lr={} hidden={:?}",
            self.k_experts, self.lambda, self.learning_rate, self.hidden
        )
    }
}

/// Expand a grid file: `lambda`, `learning_rate` take comma lists, `hidden`
/// takes `|`-separated alternatives (`50 | 50,50`); other keys are scalars.
pub fn parse_grid_text(text: &str, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
    let mut base = base.clone();
    let mut lambdas = vec![base.lambda];
    let mut lrs = vec![base.learning_rate];
    let mut hiddens = vec![base.hidden.clone()];
    for (k, v) in kv_lines(text)? {
        match k.as_str() {
            "lambda" => {
                lambdas = v
                    .split(',')
                    .map(|s| parse_num(&k, s))
                    .collect::<Result<_>>()?
            }
            "learning_rate" => {
                lrs = v
                    .split(',')
                    .map(|s| parse_num(&k, s))
                    .collect::<Result<_>>()?
            }
            "hidden" => hiddens = v.split('|').map(parse_hidden).collect::<Result<_>>()?,
            _ => base.set(&k, &v)?,
        }
    }
    Ok(cartesian(&base, &lambdas, &lrs, &hiddens))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(skip)]
    pub train: LossBreakdown,
    #[serde(skip)]
    pub validation: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Losses of the freshly initialized model (epoch 0).
    pub initial: EpochRecord,
    /// One entry per completed epoch, starting at epoch 1.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub model: DcsmModel,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// Shuffle into mini-batches, then swap events into any batch that has none
/// (taking them from batches holding at least two).
fn make_batches<R: Rng>(events: &[bool], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..events.len()).collect();
    idx.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let count = |b: &Vec<usize>| b.iter().filter(|&&i| events[i]).count();
    for a in 0..batches.len() {
        if count(&batches[a]) > 0 {
            continue;
        }
        let Some(b) = (0..batches.len()).find(|&b| count(&batches[b]) >= 2) else {
            break;
        };
        let pos_b = batches[b]
            .iter()
            .position(|&i| events[i])
            .expect("has events");
        let (x, y) = (batches[a][0], batches[b][pos_b]);
        batches[a][0] = y;
        batches[b][pos_b] = x;
    }
    batches
}

fn dataset_loss(model: &DcsmModel, ds: &SurvivalDataset) -> Result<LossBreakdown> {
    model.total_loss(&Batch::from_dataset(ds)?)
}

/// Train on a standardized dataset. A validation split is held out for
/// early stopping; the best-epoch parameters are returned.
pub fn fit(ds: &SurvivalDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = ds.len();
    if n < 2 {
        return Err(DcsmError::InvalidData(
            "training needs at least 2 records".into(),
        ));
    }
    let mut rng = crate::seeded_rng(crate::mix_seed(cfg.seed, 2));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = perm.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let train = ds.subset(&train_idx);
    let val = ds.subset(&val_idx);

    let prior = fit_single_mle(&train)?;
    let mut model = DcsmModel::init(
        &train,
        &cfg.hidden,
        cfg.k_experts,
        prior,
        cfg.lambda,
        cfg.seed,
    )?;
    let mut params = model.parameters();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);

    let initial = EpochRecord {
        epoch: 0,
        train: dataset_loss(&model, &train)?,
        validation: dataset_loss(&model, &val)?,
    };
    if !initial.train.is_finite() || !initial.validation.is_finite() {
        return Err(DcsmError::NonFinite { epoch: 0 });
    }

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        for batch_idx in make_batches(train.events(), cfg.batch_size, &mut rng) {
            let x = train.features().select(Axis(0), &batch_idx);
            let t: Vec<f64> = batch_idx.iter().map(|&i| train.times()[i]).collect();
            let e: Vec<bool> = batch_idx.iter().map(|&i| train.events()[i]).collect();
            let (_, grads) = model.loss_gradients(&Batch::new(x.view(), &t, &e)?)?;
            let g = grads.flatten();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(DcsmError::NonFinite { epoch });
            }
            opt.step(&mut params, &g);
            model.set_parameters(&params)?;
        }
        let record = EpochRecord {
            epoch,
            train: dataset_loss(&model, &train)?,
            validation: dataset_loss(&model, &val)?,
        };
        if !record.train.is_finite() || !record.validation.is_finite() {
            return Err(DcsmError::NonFinite { epoch });
        }
        history.push(record);
        if record.validation.total < best_val {
            best_val = record.validation.total;
            best_epoch = epoch;
            best_params.clone_from(&params);
        } else if epoch - best_epoch >= cfg.patience {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }
    model.set_parameters(&best_params)?;
    log::debug!(
        "fit {cfg}: best epoch {best_epoch}/{} val {best_val:.6}",
        history.len()
    );
    Ok(TrainReport {
        initial,
        history,
        best_epoch,
        stop_reason,
        model,
    })
}

/// Held-out metrics of a trained model on prepared data.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub c_index: CIndexResult,
    /// `None` when the model put every instance into one cluster.
    pub logrank: Option<LogRankResult>,
    pub cluster_sizes: Vec<usize>,
    pub clusters: Vec<usize>,
    pub risks: Vec<f64>,
}

pub fn evaluate(
    model: &DcsmModel,
    prepared: &SurvivalDataset,
    exec: Execution,
) -> Result<Evaluation> {
    let risks = model.risk_scores(prepared.features(), exec)?;
    let c_index =
        metrics::concordance_index_with(exec, prepared.times(), prepared.events(), &risks)?;
    let clusters = model.assign_clusters(prepared.features())?;
    let mut cluster_sizes = vec![0; model.k()];
    for &c in &clusters {
        cluster_sizes[c] += 1;
    }
    let (compact, used) = metrics::compact_labels(&clusters);
    let logrank = if used.len() >= 2 && prepared.event_count() > 0 {
        Some(metrics::logrank_test(
            prepared.times(),
            prepared.events(),
            &compact,
        )?)
    } else {
        None
    };
    Ok(Evaluation {
        c_index,
        logrank,
        cluster_sizes,
        clusters,
        risks,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CvRow {
    pub config_index: usize,
    pub fold: usize,
    pub c_index: f64,
    pub logrank_chi2: Option<f64>,
    pub logrank_p: Option<f64>,
    pub val_loss: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStd {
            mean,
            std,
            count: n,
        })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvSummary {
    pub config_index: usize,
    pub c_index: Option<MeanStd>,
    pub logrank_chi2: Option<MeanStd>,
    pub val_loss: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub folds: usize,
    pub configs: Vec<TrainConfig>,
    pub rows: Vec<CvRow>,
    pub summaries: Vec<CvSummary>,
    pub selected: usize,
    pub warnings: Vec<String>,
}

impl CvReport {
    pub fn selected_config(&self) -> &TrainConfig {
        &self.configs[self.selected]
    }
}

enum FoldOutcome {
    Row(CvRow),
    Skipped(String),
}

fn run_fold(
    ds: &SurvivalDataset,
    split: &FoldSplit,
    cfg: &TrainConfig,
    config_index: usize,
    fold: usize,
) -> Result<FoldOutcome> {
    let held_raw = ds.subset(&split.held_out(fold));
    if held_raw.event_count() == 0 {
        return Ok(FoldOutcome::Skipped(format!(
            "config {config_index} fold {fold}: held-out fold has no events, skipped"
        )));
    }
    let train = ds.subset(&split.training(fold)).standardize_and_scale()?;
    let report = fit(&train, cfg)?;
    let model = report.model;
    let held = model.prepare(&held_raw)?;
    let eval = match evaluate(&model, &held, Execution::Sequential) {
        Ok(e) => e,
        Err(DcsmError::NoComparablePairs) => {
            return Ok(FoldOutcome::Skipped(format!(
                "config {config_index} fold {fold}: no comparable pairs, skipped"
            )))
        }
        Err(e) => return Err(e),
    };
    let val_loss = model.total_loss(&Batch::from_dataset(&held)?)?.total;
    Ok(FoldOutcome::Row(CvRow {
        config_index,
        fold,
        c_index: eval.c_index.value,
        logrank_chi2: eval.logrank.as_ref().map(|l| l.chi2),
        logrank_p: eval.logrank.as_ref().map(|l| l.p_value),
        val_loss,
        best_epoch: report.best_epoch,
    }))
}

/// Cross-validated grid search over `configs` on a raw dataset. Each
/// config × fold job trains on the fold complement (standardized on that
/// complement only) and scores the held-out fold. Jobs run under `exec`;
/// results are merged by (config, fold) so the report does not depend on it.
pub fn grid_search(
    ds: &SurvivalDataset,
    configs: &[TrainConfig],
    folds: usize,
    seed: u64,
    exec: Execution,
) -> Result<CvReport> {
    if configs.is_empty() {
        return Err(DcsmError::Config(
            "grid search needs at least one config".into(),
        ));
    }
    if !ds.is_raw() {
        return Err(DcsmError::InvalidData(
            "grid search expects raw (unstandardized) data".into(),
        ));
    }
    for c in configs {
        c.validate()?;
    }
    let split = ds.kfold(folds, seed)?;
    let outcomes = exec.map_range(configs.len() * folds, |job| {
        let (ci, fold) = (job / folds, job % folds);
        run_fold(ds, &split, &configs[ci], ci, fold)
    });

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for outcome in outcomes {
        match outcome? {
            FoldOutcome::Row(r) => rows.push(r),
            FoldOutcome::Skipped(w) => {
                log::warn!("{w}");
                warnings.push(w)
            }
        }
    }

    let summaries: Vec<CvSummary> = (0..configs.len())
        .map(|ci| {
            let mine: Vec<&CvRow> = rows.iter().filter(|r| r.config_index == ci).collect();
            let c: Vec<f64> = mine.iter().map(|r| r.c_index).collect();
            let lr: Vec<f64> = mine.iter().filter_map(|r| r.logrank_chi2).collect();
            let vl: Vec<f64> = mine.iter().map(|r| r.val_loss).collect();
            CvSummary {
                config_index: ci,
                c_index: MeanStd::of(&c),
                logrank_chi2: MeanStd::of(&lr),
                val_loss: MeanStd::of(&vl),
            }
        })
        .collect();

    let key = |s: &CvSummary| {
        (
            s.c_index.map(|m| m.mean).unwrap_or(f64::NEG_INFINITY),
            s.logrank_chi2.map(|m| m.mean).unwrap_or(f64::NEG_INFINITY),
        )
    };
    let mut selected = 0;
    for s in &summaries[1..] {
        let (a, b) = (key(s), key(&summaries[selected]));
        if a.0 > b.0 || (a.0 == b.0 && a.1 > b.1) {
            selected = s.config_index;
        }
    }
    Ok(CvReport {
        folds,
        configs: configs.to_vec(),
        rows,
        summaries,
        selected,
        warnings,
    })
}
