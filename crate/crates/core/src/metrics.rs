//! Explanation quality: fidelity, unfaithfulness, density, ground-truth
//! recovery and timing.

use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{complement_graph, induced_subgraph, Explanation, Graph};
use crate::target::BlackBox;

/// Floor applied to the explanation's class probabilities inside the KL.
pub const GEF_FLOOR: f64 = 1e-12;
pub const TIMING_CALLS: usize = 100;

/// `(fid+, fid−)` indicators for one explanation.
pub fn fidelity<M: BlackBox + ?Sized>(model: &M, g: &Graph, e: &Explanation) -> Result<(f64, f64)> {
    let y = model.predict(g, None)?.label;
    let yc = model.predict(&induced_subgraph(g, e)?, None)?.label;
    let ys = model.predict(&complement_graph(g, e)?, None)?.label;
    Ok((f64::from(u8::from(ys != y)), f64::from(u8::from(yc != y))))
}

/// `1 − exp(−KL(p ‖ q))` with `q` floored.
pub fn gef_from_probs(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(GEF_FLOOR)).ln())
        .sum();
    1.0 - (-kl.max(0.0)).exp()
}

pub fn gef<M: BlackBox + ?Sized>(model: &M, g: &Graph, e: &Explanation) -> Result<f64> {
    let p = model.predict(g, None)?.class_probs;
    let q = model.predict(&induced_subgraph(g, e)?, None)?.class_probs;
    Ok(gef_from_probs(&p, &q))
}

/// `(ρ_v, ρ_e)`; an edgeless graph has edge density 0.
pub fn density(g: &Graph, e: &Explanation) -> (f64, f64) {
    let rv = if g.node_count() == 0 {
        0.0
    } else {
        e.selected_nodes() as f64 / g.node_count() as f64
    };
    let re = if g.edge_count() == 0 {
        0.0
    } else {
        e.selected_edges() as f64 / g.edge_count() as f64
    };
    (rv, re)
}

/// Edge precision and recall against the planted motif, if there is one.
pub fn gt_precision_recall(g: &Graph, e: &Explanation) -> Option<(f64, f64)> {
    let gt = g.gt_motif()?;
    let truth = gt.edges.iter().filter(|&&b| b).count();
    let chosen = e.selected_edges();
    let hit = e.edge_mask.iter().zip(&gt.edges).filter(|(a, b)| **a && **b).count();
    let precision = if chosen == 0 { 0.0 } else { hit as f64 / chosen as f64 };
    let recall = if truth == 0 { 0.0 } else { hit as f64 / truth as f64 };
    Some((precision, recall))
}

/// `k` uniformly random edges and their endpoints.
pub fn random_explanation(g: &Graph, k: usize, rng: &mut ChaCha8Rng) -> Result<Explanation> {
    let m = g.edge_count();
    let mut mask = vec![false; m];
    for i in sample(rng, m, k.min(m)) {
        mask[i] = true;
    }
    Explanation::from_edges(g, mask, 0.0)
}

/// The `k` edges with the largest endpoint degree sum; ties favor lower
/// edge indices.
pub fn top_degree_explanation(g: &Graph, k: usize) -> Result<Explanation> {
    let deg = g.degrees();
    let mut order: Vec<usize> = (0..g.edge_count()).collect();
    order.sort_by_key(|&i| {
        let (a, b) = g.edges()[i];
        std::cmp::Reverse(deg[a] + deg[b])
    });
    let mut mask = vec![false; g.edge_count()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    Explanation::from_edges(g, mask, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRow {
    pub method: String,
    pub graph: usize,
    pub fid_plus: f64,
    pub fid_minus: f64,
    pub gef: f64,
    pub rho_v: f64,
    pub rho_e: f64,
    pub gt_precision: Option<f64>,
    pub gt_recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub graphs: usize,
    pub fid_plus: f64,
    pub fid_minus: f64,
    pub gef: f64,
    pub rho_v: f64,
    pub rho_e: f64,
    pub gt_precision: f64,
    pub gt_recall: f64,
    /// Wall seconds for 100 explain calls; `None` if not measured.
    pub t100: Option<f64>,
    pub rows: Vec<GraphRow>,
}

impl MetricsReport {
    /// Averages per-graph rows; ground-truth means cover graphs with a motif.
    pub fn from_rows(method: &str, rows: Vec<GraphRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::config("split", "no graphs to evaluate"));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&GraphRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let gt: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| Some((r.gt_precision?, r.gt_recall?)))
            .collect();
        let (gp, gr) = if gt.is_empty() {
            (0.0, 0.0)
        } else {
            let k = gt.len() as f64;
            (gt.iter().map(|x| x.0).sum::<f64>() / k, gt.iter().map(|x| x.1).sum::<f64>() / k)
        };
        Ok(Self {
            method: method.to_string(),
            graphs: rows.len(),
            fid_plus: mean(|r| r.fid_plus),
            fid_minus: mean(|r| r.fid_minus),
            gef: mean(|r| r.gef),
            rho_v: mean(|r| r.rho_v),
            rho_e: mean(|r| r.rho_e),
            gt_precision: gp,
            gt_recall: gr,
            t100: None,
            rows,
        })
    }
}

/// Scores one explanation, predicting `g` itself only once.
pub fn graph_row<M: BlackBox + ?Sized>(model: &M, method: &str, index: usize, g: &Graph, e: &Explanation) -> Result<GraphRow> {
    e.validate(g)?;
    let full = model.predict(g, None)?;
    let pc = model.predict(&induced_subgraph(g, e)?, None)?;
    let ps = model.predict(&complement_graph(g, e)?, None)?;
    let (rho_v, rho_e) = density(g, e);
    let gt = gt_precision_recall(g, e);
    Ok(GraphRow {
        method: method.to_string(),
        graph: index,
        fid_plus: f64::from(u8::from(ps.label != full.label)),
        fid_minus: f64::from(u8::from(pc.label != full.label)),
        gef: gef_from_probs(&full.class_probs, &pc.class_probs),
        rho_v,
        rho_e,
        gt_precision: gt.map(|x| x.0),
        gt_recall: gt.map(|x| x.1),
    })
}

pub fn evaluate_explanations<M: BlackBox + ?Sized>(model: &M, method: &str, graphs: &[&Graph], explanations: &[Explanation]) -> Result<MetricsReport> {
    if graphs.len() != explanations.len() {
        return Err(Error::structural("one explanation per graph is required"));
    }
    let rows = graphs
        .iter()
        .zip(explanations)
        .enumerate()
        .map(|(i, (g, e))| graph_row(model, method, i, g, e))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(method, rows)
}

/// Wall seconds for exactly 100 calls, cycling through `graphs`.
pub fn time_100<F>(graphs: &[&Graph], mut explain: F) -> Result<f64>
where
    F: FnMut(&Graph) -> Result<Explanation>,
{
    if graphs.is_empty() {
        return Err(Error::config("split", "no graphs to time"));
    }
    let start = Instant::now();
    for i in 0..TIMING_CALLS {
        std::hint::black_box(explain(graphs[i % graphs.len()])?);
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Evaluates a method and its two baselines, each baseline matched to the
/// method's per-graph edge count.
pub fn evaluate_with_baselines<M, F>(model: &M, method: &str, graphs: &[&Graph], mut explain: F, seed: u64) -> Result<Vec<MetricsReport>>
where
    M: BlackBox + ?Sized,
    F: FnMut(&Graph) -> Result<Explanation>,
{
    if graphs.is_empty() {
        return Err(Error::config("split", "no graphs to evaluate"));
    }
    let ours = graphs.iter().map(|g| explain(g)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random = graphs
        .iter()
        .zip(&ours)
        .map(|(g, e)| random_explanation(g, e.selected_edges(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let degree = graphs
        .iter()
        .zip(&ours)
        .map(|(g, e)| top_degree_explanation(g, e.selected_edges()))
        .collect::<Result<Vec<_>>>()?;
    let mut main = evaluate_explanations(model, method, graphs, &ours)?;
    main.t100 = Some(time_100(graphs, &mut explain)?);
    let mut rand_report = evaluate_explanations(model, "random", graphs, &random)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cursor = 0usize;
    rand_report.t100 = Some(time_100(graphs, |g| {
        let k = ours[cursor % ours.len()].selected_edges();
        cursor += 1;
        random_explanation(g, k, &mut rng)
    })?);
    let mut deg_report = evaluate_explanations(model, "top_degree", graphs, &degree)?;
    let mut cursor = 0usize;
    deg_report.t100 = Some(time_100(graphs, |g| {
        let k = ours[cursor % ours.len()].selected_edges();
        cursor += 1;
        top_degree_explanation(g, k)
    })?);
    Ok(vec![main, rand_report, deg_report])
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, e.into())
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// Summary CSV; the timing column is last so determinism checks can drop it.
pub fn write_metrics_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["method", "graphs", "fid_plus", "fid_minus", "gef", "rho_v", "rho_e", "gt_precision", "gt_recall", "t100"])
        .map_err(|e| csv_err(path, e))?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            r.graphs.to_string(),
            fmt(r.fid_plus),
            fmt(r.fid_minus),
            fmt(r.gef),
            fmt(r.rho_v),
            fmt(r.rho_e),
            fmt(r.gt_precision),
            fmt(r.gt_recall),
            r.t100.map(fmt).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rows_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["method", "graph", "fid_plus", "fid_minus", "gef", "rho_v", "rho_e", "gt_precision", "gt_recall"])
        .map_err(|e| csv_err(path, e))?;
    for r in reports.iter().flat_map(|r| &r.rows) {
        let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
        w.write_record([
            r.method.clone(),
            r.graph.to_string(),
            fmt(r.fid_plus),
            fmt(r.fid_minus),
            fmt(r.gef),
            fmt(r.rho_v),
            fmt(r.rho_e),
            opt(r.gt_precision),
            opt(r.gt_recall),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Summaries without per-graph rows.
pub fn write_metrics_json(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let slim: Vec<MetricsReport> = reports
        .iter()
        .map(|r| MetricsReport {
            rows: Vec::new(),
            ..r.clone()
        })
        .collect();
    let text = serde_json::to_string_pretty(&slim).map_err(|e| Error::structural(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};
    use crate::target::{Prediction, TargetModel, TargetShape};
    use approx::assert_abs_diff_eq;

    fn graphs(n: usize) -> Vec<Graph> {
        generate(&GenConfig {
            num_graphs: n,
            seed: 5,
            ..GenConfig::default()
        })
        .unwrap()
        .graphs
    }

    fn model() -> TargetModel {
        TargetModel::init(
            TargetShape {
                feature_dim: 6,
                hidden: 8,
                layers: 2,
                class_count: 3,
            },
            4,
        )
        .unwrap()
    }

    /// Predicts class = edge count mod 3, with a confident distribution.
    struct EdgeParity;

    impl BlackBox for EdgeParity {
        fn predict(&self, g: &Graph, _: Option<usize>) -> Result<Prediction> {
            let label = g.edge_count() % 3;
            let mut class_probs = vec![0.1; 3];
            class_probs[label] = 0.8;
            Ok(Prediction {
                class_probs,
                label,
                loss: 0.0,
                node_embeddings: ndarray::Array2::zeros((g.node_count(), 1)),
                graph_embedding: vec![0.0],
            })
        }
    }

    #[test]
    fn fidelity_edge_cases() {
        let m = model();
        for g in graphs(5) {
            assert_eq!(fidelity(&m, &g, &Explanation::full(&g)).unwrap().1, 0.0);
            assert_eq!(fidelity(&m, &g, &Explanation::empty(&g)).unwrap().0, 0.0);
        }
    }

    #[test]
    fn fidelity_matches_direct_predictions() {
        let gs = graphs(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in &gs {
            let e = random_explanation(g, g.edge_count() / 3, &mut rng).unwrap();
            let (plus, minus) = fidelity(&EdgeParity, g, &e).unwrap();
            let y = g.edge_count() % 3;
            let gc = induced_subgraph(g, &e).unwrap().edge_count() % 3;
            let gs = complement_graph(g, &e).unwrap().edge_count() % 3;
            assert_eq!(minus, if gc != y { 1.0 } else { 0.0 });
            assert_eq!(plus, if gs != y { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn gef_cases() {
        assert_eq!(gef_from_probs(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert_abs_diff_eq!(gef_from_probs(&[1.0, 0.0], &[0.5, 0.5]), 0.5, epsilon = 1e-12);
        let g = gef_from_probs(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((0.0..1.0).contains(&g));
    }

    #[test]
    fn density_cases() {
        let g = &graphs(1)[0];
        assert_eq!(density(g, &Explanation::full(g)), (1.0, 1.0));
        assert_eq!(density(g, &Explanation::empty(g)), (0.0, 0.0));
        let half = g.edge_count() / 2;
        let mask: Vec<bool> = (0..g.edge_count()).map(|i| i < half).collect();
        let e = Explanation::from_edges(g, mask, 0.0).unwrap();
        let (rv, re) = density(g, &e);
        assert_eq!(re, half as f64 / g.edge_count() as f64);
        assert_eq!(rv, e.selected_nodes() as f64 / g.node_count() as f64);
    }

    #[test]
    fn ground_truth_explainer_has_full_recall() {
        let gs = graphs(30);
        let refs: Vec<&Graph> = gs.iter().collect();
        let m = model();
        let reports = evaluate_with_baselines(
            &m,
            "truth",
            &refs,
            |g| Explanation::new(g, g.gt_motif().unwrap().nodes.clone(), g.gt_motif().unwrap().edges.clone(), 0.0),
            0,
        )
        .unwrap();
        assert_eq!(reports[0].gt_recall, 1.0);
        assert_eq!(reports[0].gt_precision, 1.0);
        assert!(reports[1].gt_recall < 1.0);
        for r in &reports {
            assert!(r.t100.is_some());
            assert_abs_diff_eq!(r.fid_minus, r.rows.iter().map(|x| x.fid_minus).sum::<f64>() / r.graphs as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(r.rho_e, reports[0].rho_e, epsilon = 1e-12);
        }
    }

    #[test]
    fn random_baseline_density_and_closure() {
        let gs = graphs(40);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for g in &gs {
            let k = (0.3 * g.edge_count() as f64).round() as usize;
            let e = random_explanation(g, k, &mut rng).unwrap();
            e.validate(g).unwrap();
            let (_, re) = density(g, &e);
            assert!((re - 0.3).abs() <= 0.5 / g.edge_count() as f64 + 1e-12);
            top_degree_explanation(g, k).unwrap().validate(g).unwrap();
        }
    }

    #[test]
    fn empty_split_is_an_error() {
        let m = model();
        assert!(evaluate_with_baselines(&m, "x", &[], |g| Ok(Explanation::empty(g)), 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let gs = graphs(3);
        let refs: Vec<&Graph> = gs.iter().collect();
        let m = model();
        let reports = evaluate_with_baselines(&m, "full", &refs, |g| Ok(Explanation::full(g)), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&reports, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",t100"));
        assert_eq!(text.lines().count(), 4);
        let rows = dir.path().join("rows.csv");
        write_rows_csv(&reports, &rows).unwrap();
        assert_eq!(std::fs::read_to_string(rows).unwrap().lines().count(), 10);
        write_metrics_json(&reports, &dir.path().join("m.json")).unwrap();
    }
}
