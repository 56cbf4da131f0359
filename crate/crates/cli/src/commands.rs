use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use dcsm::metrics::{self, KMCurve};
use dcsm::model::argmax;
use dcsm::persist::{self, write_atomic};
use dcsm::synthetic::{self, SyntheticConfig};
use dcsm::trainer::{self, TrainConfig};
use dcsm::{DcsmModel, Execution, SurvivalDataset};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::svg;

pub fn run(cli: Cli) -> CliResult<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Simulate(a) => simulate(a, exec),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a, exec),
        Command::Cluster(a) => cluster(a),
        Command::Cv(a) => cv(a, exec),
        Command::ExportKm(a) => export_km(a),
        Command::ExportExperts(a) => export_experts(a),
    }
}

fn load_data(path: &Path, cols: &Columns) -> CliResult<SurvivalDataset> {
    Ok(SurvivalDataset::load_csv(
        path,
        &cols.time_col,
        &cols.event_col,
    )?)
}

fn load_model(path: &Path) -> CliResult<DcsmModel> {
    Ok(persist::load(path)?)
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// `dir/stem{suffix}` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json value");
    write_atomic(path, |w| writeln!(w, "{text}"))?;
    Ok(())
}

fn simulate(a: SimulateArgs, exec: Execution) -> CliResult<()> {
    let mut cfg = if a.well_separated {
        SyntheticConfig::well_separated()
    } else {
        SyntheticConfig::default()
    };
    cfg.n = a.n;
    cfg.d = a.d;
    cfg.k_true = a.clusters;
    cfg.censoring_fraction = a.censoring;
    cfg.seed = a.seed;
    if let Some(s) = a.separation {
        cfg.separation = s;
    }
    cfg.validate()?;

    if a.grid {
        let m = synthetic::generate_grid(&cfg, &a.out, exec)?;
        println!(
            "wrote {} datasets and {} to {}",
            m.cells.len(),
            synthetic::MANIFEST_FILE,
            a.out.display()
        );
        return Ok(());
    }
    let sd = synthetic::generate(&cfg)?;
    let labels = sibling(&a.out, "_labels.csv");
    synthetic::write_dataset(&sd, &a.out, &labels)?;
    let manifest = json!({
        "config": cfg,
        "true_params": sd.true_params,
        "survival_separation": sd.survival_separation(),
        "data_file": a.out.file_name().map(|s| s.to_string_lossy()),
        "labels_file": labels.file_name().map(|s| s.to_string_lossy()),
    });
    write_json(&sibling(&a.out, "_manifest.json"), &manifest)?;
    let censored = sd.dataset.len() - sd.dataset.event_count();
    println!(
        "wrote {} records ({} features, {} clusters, {:.1}% censored) to {}",
        sd.dataset.len(),
        sd.dataset.dim(),
        cfg.k_true,
        100.0 * censored as f64 / sd.dataset.len() as f64,
        a.out.display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        cfg.merge_text(&read_text(path)?)?;
    }
    if let Some(v) = a.k {
        cfg.k_experts = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = &a.hidden {
        cfg.set("hidden", v)?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.val_fraction {
        cfg.val_fraction = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> CliResult<()> {
    let cfg = train_config(&a)?;
    let raw = load_data(&a.data, &a.columns)?;
    let prepared = raw.standardize_and_scale()?;
    let report = trainer::fit(&prepared, &cfg)?;
    persist::save(&report.model, &a.model_out)?;
    let best = report.best();
    println!("trained {cfg} on {} records", raw.len());
    println!(
        "epochs run: {} (best {}, {:?})",
        report.history.len(),
        report.best_epoch,
        report.stop_reason
    );
    for (name, l) in [("train", best.train), ("validation", best.validation)] {
        println!(
            "{name:<10} total {:.6}  elbo_u {:.6}  elbo_c {:.6}  prior {:.6}",
            l.total, l.elbo_u, l.elbo_c, l.prior_loss
        );
    }
    println!("model written to {}", a.model_out.display());
    Ok(())
}

/// `instance_id,true_cluster` rows, indexed by instance id.
fn read_labels(path: &Path, n: usize) -> CliResult<Vec<usize>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != "instance_id,true_cluster" {
        return Err(CliError::Data(format!(
            "{}: expected header `instance_id,true_cluster`",
            path.display()
        )));
    }
    let mut labels = vec![None; n];
    for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || CliError::Data(format!("{}: bad label row {}", path.display(), row + 1));
        let (id, c) = line.split_once(',').ok_or_else(bad)?;
        let id: usize = id.trim().parse().map_err(|_| bad())?;
        let c: usize = c.trim().parse().map_err(|_| bad())?;
        *labels.get_mut(id).ok_or_else(bad)? = Some(c);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| {
                CliError::Data(format!("{}: no label for instance {i}", path.display()))
            })
        })
        .collect()
}

fn evaluate(a: EvaluateArgs, exec: Execution) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let raw = load_data(&a.data, &a.columns)?;
    let prepared = model.prepare(&raw)?;
    let ev = trainer::evaluate(&model, &prepared, exec)?;

    let mut m = Map::new();
    m.insert("n".into(), json!(raw.len()));
    m.insert("c_index".into(), json!(ev.c_index.value));
    m.insert(
        "comparable_pairs".into(),
        json!(ev.c_index.comparable_pairs),
    );
    match &ev.logrank {
        Some(lr) => {
            m.insert("logrank_chi2".into(), json!(lr.chi2));
            m.insert("logrank_p".into(), json!(lr.p_value));
            let groups = ev.cluster_sizes.iter().filter(|&&s| s > 0).count();
            let even = metrics::stratify_by_risk(&ev.risks, groups);
            let base = metrics::logrank_test(prepared.times(), prepared.events(), &even)?;
            m.insert("even_split_logrank_chi2".into(), json!(base.chi2));
        }
        None => {
            m.insert("logrank_chi2".into(), json!("n/a"));
            m.insert("logrank_p".into(), json!("n/a"));
        }
    }
    m.insert("cluster_sizes".into(), json!(ev.cluster_sizes));
    if let Some(path) = &a.labels {
        let truth = read_labels(path, raw.len())?;
        let acc = metrics::clustering_accuracy(&ev.clusters, &truth);
        m.insert("accuracy".into(), acc.map_or(json!("n/a"), |v| json!(v)));
    }
    write_json(&a.out, &Value::Object(m.clone()))?;

    println!(
        "C-index {:.4} over {} comparable pairs",
        ev.c_index.value, ev.c_index.comparable_pairs
    );
    match &ev.logrank {
        Some(lr) => println!(
            "log-rank chi2 {:.4} (dof {}, p = {:.3e})",
            lr.chi2, lr.dof, lr.p_value
        ),
        None => println!("log-rank n/a (single cluster)"),
    }
    println!("cluster sizes {:?}", ev.cluster_sizes);
    if let Some(acc) = m.get("accuracy") {
        println!("clustering accuracy {acc}");
    }
    Ok(())
}

fn cluster(a: ClusterArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let raw = load_data(&a.data, &a.columns)?;
    let prepared = model.prepare(&raw)?;
    let w = model.weights_matrix(prepared.features())?;
    let k = model.k();
    let mut sizes = vec![0usize; k];
    write_atomic(&a.out, |out| {
        write!(out, "instance_id,cluster")?;
        for j in 0..k {
            write!(out, ",alpha_{j}")?;
        }
        writeln!(out)?;
        for (i, row) in w.outer_iter().enumerate() {
            let c = argmax(row.as_slice().expect("contiguous rows"));
            sizes[c] += 1;
            write!(out, "{i},{c}")?;
            for v in row {
                write!(out, ",{v:.10}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    })?;
    println!("assigned {} instances; cluster sizes {sizes:?}", raw.len());
    Ok(())
}

const DEFAULT_GRID: &str =
    "lambda = 0.5, 0.75, 1\nlearning_rate = 0.001, 0.0001\nhidden = 50 | 50,50\n";

fn cv_configs(a: &CvArgs) -> CliResult<Vec<TrainConfig>> {
    let mut base = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(v) = a.k {
        base.k_experts = v;
    }
    if let Some(v) = a.epochs {
        base.max_epochs = v;
    }
    if let Some(v) = a.patience {
        base.patience = v;
    }
    if let Some(v) = a.batch_size {
        base.batch_size = v;
    }
    let mut text = DEFAULT_GRID.to_string();
    if let Some(path) = &a.grid_file {
        text.push_str(&read_text(path)?);
        text.push('\n');
    }
    for (key, v) in [
        ("lambda", &a.lambdas),
        ("learning_rate", &a.lrs),
        ("hidden", &a.hiddens),
    ] {
        if let Some(v) = v {
            text.push_str(&format!("{key} = {v}\n"));
        }
    }
    Ok(trainer::parse_grid_text(&text, &base)?)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn cv(a: CvArgs, exec: Execution) -> CliResult<()> {
    let configs = cv_configs(&a)?;
    let raw = load_data(&a.data, &a.columns)?;
    let report = trainer::grid_search(&raw, &configs, a.folds, a.seed, exec)?;

    write_atomic(&a.out, |out| {
        writeln!(
            out,
            "config_index,fold,k_experts,lambda,learning_rate,hidden,c_index,logrank_chi2,logrank_p,val_loss,best_epoch"
        )?;
        for r in &report.rows {
            let c = &report.configs[r.config_index];
            let hidden: Vec<String> = c.hidden.iter().map(|h| h.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.config_index,
                r.fold,
                c.k_experts,
                c.lambda,
                c.learning_rate,
                hidden.join("x"),
                r.c_index,
                opt_cell(r.logrank_chi2),
                opt_cell(r.logrank_p),
                r.val_loss,
                r.best_epoch
            )?;
        }
        Ok(())
    })?;
    let selected_path = a
        .selected_out
        .clone()
        .unwrap_or_else(|| sibling(&a.out, "_selected.conf"));
    let selected = report.selected_config();
    write_atomic(&selected_path, |w| {
        w.write_all(selected.to_text().as_bytes())
    })?;

    println!(
        "{}-fold cross-validation over {} configs",
        report.folds,
        configs.len()
    );
    println!(
        "{:>3}  {:<32}  {:>15}  {:>17}",
        "#", "config", "C-index", "LogRank"
    );
    for s in &report.summaries {
        let mark = if s.config_index == report.selected {
            "*"
        } else {
            " "
        };
        let show = |m: Option<trainer::MeanStd>| m.map_or("n/a".to_string(), |m| m.to_string());
        println!(
            "{:>2}{mark}  {:<32}  {:>15}  {:>17}",
            s.config_index,
            report.configs[s.config_index].to_string(),
            show(s.c_index),
            show(s.logrank_chi2)
        );
    }
    println!("selected config {}: {selected}", report.selected);
    println!(
        "report written to {}, selected config to {}",
        a.out.display(),
        selected_path.display()
    );
    Ok(())
}

fn export_km(a: ExportKmArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let raw = load_data(&a.data, &a.columns)?;
    let prepared = model.prepare(&raw)?;
    let clusters = model.assign_clusters(prepared.features())?;
    let mut curves: Vec<(usize, KMCurve)> = Vec::new();
    for k in 0..model.k() {
        let idx: Vec<usize> = (0..raw.len()).filter(|&i| clusters[i] == k).collect();
        if idx.is_empty() {
            log::warn!("cluster {k} is empty; omitted");
            continue;
        }
        let sub = raw.subset(&idx);
        curves.push((k, metrics::kaplan_meier(sub.times(), sub.events())?));
    }
    write_atomic(&a.out, |out| {
        writeln!(out, "cluster,time,survival,at_risk,events")?;
        for (k, c) in &curves {
            for i in 0..c.event_times.len() {
                writeln!(
                    out,
                    "{k},{},{},{},{}",
                    c.event_times[i], c.survival[i], c.at_risk[i], c.events[i]
                )?;
            }
        }
        Ok(())
    })?;
    if let Some(path) = &a.svg {
        let doc = svg::km_plot(&curves);
        write_atomic(path, |w| w.write_all(doc.as_bytes()))?;
    }
    println!(
        "wrote {} Kaplan-Meier curves to {}",
        curves.len(),
        a.out.display()
    );
    Ok(())
}

pub const EXPERT_POINTS: usize = 200;

fn export_experts(a: ExportExpertsArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let tmax = a.tmax.unwrap_or_else(|| model.time_scale());
    if !(tmax > 0.0 && tmax.is_finite()) {
        return Err(CliError::Usage(format!(
            "--tmax must be positive, got {tmax}"
        )));
    }
    let grid: Vec<f64> = (1..=EXPERT_POINTS)
        .map(|j| tmax * j as f64 / EXPERT_POINTS as f64)
        .collect();
    let ts = model.time_scale();
    write_atomic(&a.out, |out| {
        write!(out, "expert,shape,scale")?;
        for t in &grid {
            write!(out, ",{t}")?;
        }
        writeln!(out)?;
        for (k, e) in model.experts.iter().enumerate() {
            let (shape, scale) = (e.shape(), e.scale() * ts);
            write!(out, "{k},{shape},{scale}")?;
            for &t in &grid {
                write!(out, ",{}", (-(t / scale).powf(shape)).exp())?;
            }
            writeln!(out)?;
        }
        Ok(())
    })?;
    println!(
        "wrote {} expert curves ({EXPERT_POINTS} points up to t = {tmax}) to {}",
        model.k(),
        a.out.display()
    );
    Ok(())
}
