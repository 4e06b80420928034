//! End-to-end steps over a run directory.
//!
//! ```text
//! run/
//!   config.toml  provenance.json  dataset.jsonl
//!   model/  envmodel.json  explainer/  log.csv
//!   metrics.csv  metrics_rows.csv  metrics.json  explanations/*.dot
//!   ablation/  sweep/  bench.csv
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::datagen::{generate, split};
use crate::error::{Error, Result};
use crate::graph::{export_dot, read_jsonl, write_jsonl, Dataset, Graph, SplitTag};
use crate::gvag::train::write_loss_log;
use crate::gvag::{train_explainer, Explainer, ExplainerConfig};
use crate::metrics::{evaluate_with_baselines, write_metrics_csv, write_metrics_json, write_rows_csv, MetricsReport};
use crate::npaf::{fit_npaf, EnvModel, NpafConfig};
use crate::recon::{runtime_probe, write_probe_csv};
use crate::target::{train_target, write_train_log, TargetModel};
use crate::tensor::params::read_to_string;

pub const DATASET: &str = "dataset.jsonl";
pub const MODEL_DIR: &str = "model";
pub const ENV_MODEL: &str = "envmodel.json";
pub const EXPLAINER_DIR: &str = "explainer";
pub const LOSS_LOG: &str = "log.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_ROWS: &str = "metrics_rows.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const EXPLANATIONS_DIR: &str = "explanations";
pub const PROVENANCE: &str = "provenance.json";

/// Names of the ablation variants, in output order.
pub const ABLATIONS: [&str; 6] = ["full", "no_lar", "no_con", "no_mi", "no_rr", "npaf_k1"];

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::structural(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Records which config produced `artifact` in `provenance.json`.
fn stamp(dir: &Path, artifact: &str, cfg: &RunConfig) -> Result<()> {
    let path = dir.join(PROVENANCE);
    let mut map: BTreeMap<String, String> = match read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Document {
            path: path.clone(),
            message: e.to_string(),
        })?,
        Err(Error::Missing(_)) => BTreeMap::new(),
        Err(e) => return Err(e),
    };
    map.insert(artifact.to_string(), cfg.hash());
    write_json(&map, &path)
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    read_jsonl(&dir.join(DATASET))
}

fn split_of(ds: &Dataset, tag: SplitTag) -> Result<Vec<&Graph>> {
    if ds.split.is_none() {
        return Err(Error::State("dataset has no split assignment".into()));
    }
    let graphs = ds.subset(tag);
    if graphs.is_empty() {
        return Err(Error::config("eval.split", format!("split {tag:?} is empty")));
    }
    Ok(graphs)
}

/// Generates and splits the dataset.
pub fn gen(cfg: &RunConfig, dir: &Path) -> Result<Dataset> {
    ensure_dir(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?).map_err(|e| Error::io(dir.join("config.toml"), e))?;
    let ds = generate(&cfg.gen)?;
    let ds = split(&ds, cfg.split.kind, cfg.split.domain, &cfg.split.config())?;
    write_jsonl(&ds, &dir.join(DATASET))?;
    stamp(dir, DATASET, cfg)?;
    Ok(ds)
}

pub fn class_count(ds: &Dataset) -> usize {
    ds.graphs.iter().map(|g| g.label() + 1).max().unwrap_or(1)
}

pub fn train_gnn(cfg: &RunConfig, dir: &Path) -> Result<TargetModel> {
    let ds = load_dataset(dir)?;
    let train = split_of(&ds, SplitTag::Train)?;
    let (model, log) = train_target(&train, class_count(&ds), &cfg.target)?;
    let mdir = dir.join(MODEL_DIR);
    model.save(&mdir)?;
    write_train_log(&log, &mdir.join("train_log.csv"))?;
    stamp(dir, MODEL_DIR, cfg)?;
    Ok(model)
}

pub fn fit_env(cfg: &RunConfig, dir: &Path) -> Result<EnvModel> {
    let ds = load_dataset(dir)?;
    let env = fit_npaf(&split_of(&ds, SplitTag::Train)?, &cfg.npaf)?;
    env.save(&dir.join(ENV_MODEL))?;
    stamp(dir, ENV_MODEL, cfg)?;
    Ok(env)
}

fn fit_explainer(cfg: &RunConfig, ecfg: &ExplainerConfig, train: &[&Graph], model: &TargetModel, env: &EnvModel) -> Result<(Explainer, Vec<crate::gvag::train::EpochLog>)> {
    let out = train_explainer(train, model, env, &model.fingerprint(), ecfg)?;
    if let Some(reason) = &out.diverged {
        log::warn!("explainer training stopped early: {reason}");
    }
    let mut explainer = out.explainer;
    explainer.set_config_hash(cfg.hash());
    Ok((explainer, out.log))
}

pub fn train_gvag(cfg: &RunConfig, dir: &Path) -> Result<Explainer> {
    let ds = load_dataset(dir)?;
    let model = TargetModel::load(&dir.join(MODEL_DIR))?;
    let env = EnvModel::load(&dir.join(ENV_MODEL))?;
    let (explainer, log) = fit_explainer(cfg, &cfg.explainer, &split_of(&ds, SplitTag::Train)?, &model, &env)?;
    explainer.save(&dir.join(EXPLAINER_DIR))?;
    write_loss_log(&log, &dir.join(LOSS_LOG))?;
    stamp(dir, EXPLAINER_DIR, cfg)?;
    Ok(explainer)
}

/// Loads the model and explainer, refusing pairs that were not trained together.
pub fn load_pair(dir: &Path) -> Result<(TargetModel, Explainer)> {
    let model = TargetModel::load(&dir.join(MODEL_DIR))?;
    let explainer = Explainer::load(&dir.join(EXPLAINER_DIR))?;
    let hash = model.fingerprint();
    if explainer.model_hash() != hash {
        return Err(Error::State(format!(
            "explainer was trained against model {}, found {}",
            explainer.model_hash(),
            hash
        )));
    }
    Ok((model, explainer))
}

/// Explains one dataset graph, writing DOT and JSON masks; returns the DOT path.
pub fn explain(dir: &Path, index: usize) -> Result<PathBuf> {
    let ds = load_dataset(dir)?;
    let g = ds
        .graphs
        .get(index)
        .ok_or_else(|| Error::config("graph", format!("index {index} out of range for {} graphs", ds.len())))?;
    let (model, explainer) = load_pair(dir)?;
    let e = explainer.explain(&model, g)?;
    let out = dir.join(EXPLANATIONS_DIR);
    ensure_dir(&out)?;
    let dot = out.join(format!("graph_{index}.dot"));
    export_dot(g, &e, &dot)?;
    write_json(&e, &out.join(format!("graph_{index}.json")))?;
    Ok(dot)
}

fn evaluate_explainer(model: &TargetModel, explainer: &Explainer, graphs: &[&Graph], method: &str, seed: u64) -> Result<Vec<MetricsReport>> {
    evaluate_with_baselines(model, method, graphs, |g| explainer.explain(model, g), seed)
}

fn write_reports(reports: &[MetricsReport], dir: &Path) -> Result<()> {
    write_metrics_csv(reports, &dir.join(METRICS_CSV))?;
    write_rows_csv(reports, &dir.join(METRICS_ROWS))?;
    write_metrics_json(reports, &dir.join(METRICS_JSON))
}

pub fn evaluate(cfg: &RunConfig, dir: &Path, tag: Option<SplitTag>) -> Result<Vec<MetricsReport>> {
    let ds = load_dataset(dir)?;
    let (model, explainer) = load_pair(dir)?;
    let tag = tag.unwrap_or(cfg.eval.split);
    let graphs = split_of(&ds, tag)?;
    let reports = evaluate_explainer(&model, &explainer, &graphs, "open", cfg.eval.seed)?;
    write_reports(&reports, dir)?;
    let out = dir.join(EXPLANATIONS_DIR);
    ensure_dir(&out)?;
    for i in ds.indices(tag).into_iter().take(cfg.eval.dot_count) {
        let g = &ds.graphs[i];
        export_dot(g, &explainer.explain(&model, g)?, &out.join(format!("graph_{i}.dot")))?;
    }
    stamp(dir, METRICS_CSV, cfg)?;
    Ok(reports)
}

/// Every step from generation to evaluation.
pub fn run_all(cfg: &RunConfig, dir: &Path) -> Result<Vec<MetricsReport>> {
    gen(cfg, dir)?;
    train_gnn(cfg, dir)?;
    fit_env(cfg, dir)?;
    train_gvag(cfg, dir)?;
    evaluate(cfg, dir, None)
}

/// Config of one ablation variant.
pub fn ablation_config(cfg: &RunConfig, variant: &str) -> Result<(ExplainerConfig, NpafConfig)> {
    let mut e = cfg.explainer.clone();
    let mut n = cfg.npaf.clone();
    match variant {
        "full" => {}
        "no_lar" => e.weights.lar = 0.0,
        "no_con" => e.weights.con = 0.0,
        "no_mi" => e.weights.mi = 0.0,
        "no_rr" => e.weights.rr = 0.0,
        "npaf_k1" => n.k = 1,
        other => return Err(Error::config("ablation", format!("unknown variant {other}"))),
    }
    Ok((e, n))
}

/// Trains one explainer per variant and reports OPEN's metrics for each,
/// with the method column naming the variant.
pub fn ablate(cfg: &RunConfig, dir: &Path, tag: Option<SplitTag>) -> Result<Vec<MetricsReport>> {
    let ds = load_dataset(dir)?;
    let model = TargetModel::load(&dir.join(MODEL_DIR))?;
    let train = split_of(&ds, SplitTag::Train)?;
    let eval = split_of(&ds, tag.unwrap_or(cfg.eval.split))?;
    let out = dir.join("ablation");
    ensure_dir(&out)?;
    let mut reports = Vec::new();
    for variant in ABLATIONS {
        let (ecfg, ncfg) = ablation_config(cfg, variant)?;
        let env = fit_npaf(&train, &ncfg)?;
        let (explainer, log) = fit_explainer(cfg, &ecfg, &train, &model, &env)?;
        let vdir = out.join(variant);
        explainer.save(&vdir)?;
        write_loss_log(&log, &vdir.join(LOSS_LOG))?;
        let mut r = evaluate_explainer(&model, &explainer, &eval, variant, cfg.eval.seed)?;
        reports.push(r.swap_remove(0));
    }
    write_metrics_csv(&reports, &out.join(METRICS_CSV))?;
    write_rows_csv(&reports, &out.join(METRICS_ROWS))?;
    stamp(dir, "ablation", cfg)?;
    Ok(reports)
}

/// Grid over inference density and the LAR and reconstruction weights.
/// Density only changes reconstruction, so it reuses the trained explainer.
pub fn sweep(cfg: &RunConfig, dir: &Path) -> Result<Vec<MetricsReport>> {
    let ds = load_dataset(dir)?;
    let (model, base) = load_pair(dir)?;
    let env = EnvModel::load(&dir.join(ENV_MODEL))?;
    let train = split_of(&ds, SplitTag::Train)?;
    let eval = split_of(&ds, cfg.eval.split)?;
    let mut reports = Vec::new();
    for &d in &cfg.sweep.densities {
        let mut ex = base.clone();
        let mut recon = ex.recon().clone();
        recon.density = d;
        ex.set_recon(recon);
        let mut r = evaluate_explainer(&model, &ex, &eval, &format!("density={d}"), cfg.eval.seed)?;
        reports.push(r.swap_remove(0));
    }
    let grids: [(&str, &[f64]); 2] = [("lar", &cfg.sweep.lar_weights), ("recon", &cfg.sweep.recon_weights)];
    for (name, values) in grids {
        for &w in values {
            let mut ecfg = cfg.explainer.clone();
            match name {
                "lar" => ecfg.weights.lar = w,
                _ => ecfg.weights.recon = w,
            }
            let (ex, _) = fit_explainer(cfg, &ecfg, &train, &model, &env)?;
            let mut r = evaluate_explainer(&model, &ex, &eval, &format!("{name}={w}"), cfg.eval.seed)?;
            reports.push(r.swap_remove(0));
        }
    }
    let out = dir.join("sweep");
    ensure_dir(&out)?;
    write_metrics_csv(&reports, &out.join(METRICS_CSV))?;
    stamp(dir, "sweep", cfg)?;
    Ok(reports)
}

pub fn bench(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let b = &cfg.bench;
    let rows = runtime_probe(&b.sizes, b.max_iter, b.repeats, b.seed)?;
    let path = dir.join("bench.csv");
    write_probe_csv(&rows, &path)?;
    Ok(path)
}
