//! Non-parametric environment inference.
//!
//! Structure environments cluster pooled WL embeddings; feature
//! environments cluster node-mean features restricted to the dimensions
//! judged environment-driven by the JS screen. Causal node and edge
//! partitions are stored for every fitted graph.

pub mod causal;
pub mod js;
pub mod kmeans;
pub mod wl;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use causal::{causal_edges, causal_nodes, CausalPartition, NodeScores};
pub use js::js_divergence;
pub use kmeans::{kmeans, kmeans_restarts, nearest, KMeans};
pub use wl::{embed_graph, structure_features, wl_embed, StructureEmbeddings};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::params::read_to_string;
use crate::tensor::Matrix;

pub const ENV_MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NpafConfig {
    pub k: usize,
    pub wl_iterations: usize,
    pub js_theta: f64,
    /// Alternations between feature clustering and `Dim_env` refinement.
    pub refine_rounds: usize,
    /// Seeded k-means runs per clustering; the lowest inertia wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NpafConfig {
    fn default() -> Self {
        Self {
            k: 5,
            wl_iterations: 3,
            js_theta: 0.2,
            refine_rounds: 5,
            restarts: 10,
            seed: 0,
        }
    }
}

impl NpafConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("npaf.k", "must be at least 1"));
        }
        if self.wl_iterations == 0 {
            return Err(Error::config("npaf.wl_iterations", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::config("npaf.restarts", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.js_theta) {
            return Err(Error::config("npaf.js_theta", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Statistics of one `(E^s, Y)` group used to score nodes of unseen graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub structure_env: usize,
    pub label: usize,
    pub mean: Vec<f64>,
    pub count: usize,
    pub threshold: f64,
    pub graphs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub js_theta: f64,
    pub edge_std_multiplier: f64,
    pub node_rule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvModel {
    pub v: u32,
    pub k: usize,
    pub wl_iterations: usize,
    pub feature_dim: usize,
    pub structure_centers: Vec<Vec<f64>>,
    pub feature_centers: Vec<Vec<f64>>,
    pub structure_labels: Vec<usize>,
    pub feature_labels: Vec<usize>,
    pub dim_env: Vec<usize>,
    /// `true` when the JS screen kept no dimension and all were used.
    pub dim_env_fallback: bool,
    pub thresholds: Thresholds,
    pub groups: Vec<GroupStat>,
    pub partitions: Vec<CausalPartition>,
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Matrix {
    let dim = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j])
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Mean over nodes of the chosen feature columns (zeros for no nodes).
pub fn pooled_env_features(g: &Graph, dims: &[usize]) -> Vec<f64> {
    let n = g.node_count();
    let x = g.features();
    dims.iter()
        .map(|&d| if n == 0 { 0.0 } else { x.column(d).sum() / n as f64 })
        .collect()
}

fn select_dims(scores: &[f64], theta: f64, among: &[usize]) -> Vec<usize> {
    among.iter().copied().filter(|&d| scores[d] <= theta).collect()
}

/// JS screen over `(node type, Y)` groups; dimensions at or below `theta`.
pub fn env_feature_dims(graphs: &[&Graph], theta: f64) -> Vec<usize> {
    let dim = graphs.first().map_or(0, |g| g.feature_dim());
    let ranges = js::feature_ranges(graphs, dim);
    let scores = js::label_type_js(graphs, &ranges);
    select_dims(&scores, theta, &(0..dim).collect::<Vec<_>>())
}

fn cluster_features(graphs: &[&Graph], dims: &[usize], cfg: &NpafConfig) -> Result<KMeans> {
    let rows: Vec<Vec<f64>> = graphs.iter().map(|g| pooled_env_features(g, dims)).collect();
    kmeans_restarts(&rows_to_matrix(&rows), cfg.k, cfg.seed.wrapping_add(1), cfg.restarts)
}

/// Fits structure and feature environments plus causal partitions.
/// Needs at least `k` graphs.
pub fn fit_npaf(graphs: &[&Graph], cfg: &NpafConfig) -> Result<EnvModel> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::config("dataset", "NPAF needs a nonempty train split"));
    }
    let feature_dim = graphs[0].feature_dim();
    let embeds: Vec<StructureEmbeddings> = graphs.iter().map(|g| embed_graph(g, cfg.wl_iterations)).collect();
    let pooled: Vec<Vec<f64>> = embeds.iter().map(|e| e.graph.clone()).collect();
    let structure = kmeans_restarts(&rows_to_matrix(&pooled), cfg.k, cfg.seed, cfg.restarts)?;

    let ranges = js::feature_ranges(graphs, feature_dim);
    let label_js = js::label_type_js(graphs, &ranges);
    let all_dims: Vec<usize> = (0..feature_dim).collect();
    let candidates = select_dims(&label_js, cfg.js_theta, &all_dims);
    let mut fallback = candidates.is_empty();
    let mut dims = if fallback {
        log::warn!("no feature dimension passed the environment screen; using all {feature_dim}");
        all_dims.clone()
    } else {
        candidates.clone()
    };
    let mut features = cluster_features(graphs, &dims, cfg)?;
    if !fallback {
        for _ in 0..cfg.refine_rounds {
            let Some(within) = js::within_env_type_js(graphs, &features.assignments, &ranges) else {
                break;
            };
            let mut refined = select_dims(&within, cfg.js_theta, &candidates);
            if refined.is_empty() {
                log::warn!("refinement removed every candidate dimension; keeping the screen result");
                refined = candidates.clone();
            }
            if refined == dims {
                break;
            }
            dims = refined;
            features = cluster_features(graphs, &dims, cfg)?;
        }
    }
    if dims.is_empty() {
        fallback = true;
        dims = all_dims;
        features = cluster_features(graphs, &dims, cfg)?;
    }

    // causal nodes per (E^s, Y) group
    let mut by_group: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in graphs.iter().enumerate() {
        by_group.entry((structure.assignments[i], g.label())).or_default().push(i);
    }
    let mut node_masks: Vec<Vec<bool>> = vec![Vec::new(); graphs.len()];
    let mut groups = Vec::new();
    for ((env, label), members) in by_group {
        let mats: Vec<&Matrix> = members.iter().map(|&i| &embeds[i].nodes).collect();
        let s = causal_nodes(&mats);
        for (&i, mask) in members.iter().zip(s.causal) {
            node_masks[i] = mask;
        }
        groups.push(GroupStat {
            structure_env: env,
            label,
            mean: s.mean,
            count: s.count,
            threshold: s.threshold,
            graphs: members.len(),
        });
    }
    let structure_centers = matrix_to_rows(&structure.centers);
    let partitions = graphs
        .iter()
        .zip(node_masks)
        .enumerate()
        .map(|(i, (g, nodes))| {
            let center = &structure_centers[structure.assignments[i]];
            let (_, edges) = causal_edges(g, center, cfg.wl_iterations);
            CausalPartition { nodes, edges }
        })
        .collect();

    Ok(EnvModel {
        v: ENV_MODEL_VERSION,
        k: cfg.k,
        wl_iterations: cfg.wl_iterations,
        feature_dim,
        structure_centers,
        feature_centers: matrix_to_rows(&features.centers),
        structure_labels: structure.assignments,
        feature_labels: features.assignments,
        dim_env: dims,
        dim_env_fallback: fallback,
        thresholds: Thresholds {
            js_theta: cfg.js_theta,
            edge_std_multiplier: causal::EDGE_STD_MULTIPLIER,
            node_rule: "group median".into(),
        },
        groups,
        partitions,
    })
}

/// Environment labels of one graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvLabels {
    pub structure: usize,
    pub feature: usize,
}

impl EnvModel {
    fn check(&self) -> Result<()> {
        if self.structure_centers.is_empty() || self.feature_centers.is_empty() {
            return Err(Error::State("environment model has no fitted centers".into()));
        }
        Ok(())
    }

    /// Nearest structure and feature centers; ties go to the lower index.
    pub fn infer_env(&self, g: &Graph) -> Result<EnvLabels> {
        self.check()?;
        if g.feature_dim() != self.feature_dim {
            return Err(Error::structural(format!(
                "graph feature dim {} does not match the environment model ({})",
                g.feature_dim(),
                self.feature_dim
            )));
        }
        let h = embed_graph(g, self.wl_iterations).graph;
        let f = pooled_env_features(g, &self.dim_env);
        let s = nearest(&rows_to_matrix(&self.structure_centers), ndarray::ArrayView1::from(&h)).0;
        let e = nearest(&rows_to_matrix(&self.feature_centers), ndarray::ArrayView1::from(&f)).0;
        Ok(EnvLabels {
            structure: s,
            feature: e,
        })
    }

    /// Causal partition for a graph outside the fitted set, scored against
    /// the stored group statistics of its inferred `(E^s, predicted label)`.
    pub fn partition_for(&self, g: &Graph, label: usize) -> Result<CausalPartition> {
        let env = self.infer_env(g)?;
        let embed = embed_graph(g, self.wl_iterations);
        let nodes = match self
            .groups
            .iter()
            .find(|s| s.structure_env == env.structure && s.label == label && s.graphs > 1)
        {
            Some(stat) => embed
                .nodes
                .rows()
                .into_iter()
                .map(|r| causal::gradient_norm(r, &stat.mean, stat.count) > stat.threshold + 1e-9)
                .collect(),
            None => vec![false; g.node_count()],
        };
        let (_, edges) = causal_edges(g, &self.structure_centers[env.structure], self.wl_iterations);
        Ok(CausalPartition { nodes, edges })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::structural(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: EnvModel = serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Document {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if m.v != ENV_MODEL_VERSION {
            return Err(Error::Document {
                path: path.to_path_buf(),
                message: format!("unsupported version {}", m.v),
            });
        }
        Ok(m)
    }
}
