//! Graph variational generator.
//!
//! A batch forward pass encodes nodes through the NodeVAE and graphs
//! through the graph encoder, then decodes node and edge logits with two
//! decoder pairs: the first yields the existence probabilities used for
//! sampling, the second feeds the causal-structure regularizer.

pub mod losses;
pub mod train;

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nodevae::{self, decode_node, encode_node, split_gaussian};
use crate::npaf::EnvLabels;
pub use crate::recon::{graph_log_prob, ProbMap, PROB_EPS};
use crate::tensor::nn::{init_mlp2, mlp2_forward, Activation, Mlp2Shape};
use crate::tensor::{reparameterize, Matrix, ParamStore, Tape, Var};

pub use losses::{LossBreakdown, LossWeights};
pub use train::{train_explainer, Explainer, ExplainerConfig, TrainOutcome};

pub const ENV_STRUCTURE: &str = "env.structure";
pub const ENV_FEATURE: &str = "env.feature";
pub const GRAPH_ENCODER: &str = "gvag.enc";
pub const NODE_DECODER: &str = "gvag.node";
pub const EDGE_DECODER: &str = "gvag.edge";
pub const CAUSAL_NODE_DECODER: &str = "gvag.node2";
pub const CAUSAL_EDGE_DECODER: &str = "gvag.edge2";

/// Layer widths shared by every perceptron of the explainer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Arch {
    pub env_dim: usize,
    pub latent: usize,
    pub hidden: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            env_dim: 16,
            latent: 16,
            hidden: 32,
        }
    }
}

/// Registers every explainer parameter for target embeddings of width
/// `embed_dim` and `k` environments.
pub fn init_params(embed_dim: usize, k: usize, arch: Arch, rng: &mut impl Rng) -> Result<ParamStore> {
    if embed_dim == 0 || k == 0 || arch.env_dim == 0 || arch.latent == 0 || arch.hidden == 0 {
        return Err(Error::config("explainer", "dimensions must be positive"));
    }
    let mut s = ParamStore::new();
    s.insert_glorot(ENV_STRUCTURE, k, arch.env_dim, rng)?;
    s.insert_glorot(ENV_FEATURE, k, arch.env_dim, rng)?;
    nodevae::init_nodevae(&mut s, embed_dim, arch.env_dim, arch.hidden, arch.latent, rng)?;
    let (l, e, h) = (arch.latent, arch.env_dim, arch.hidden);
    let mlp = |input, output| Mlp2Shape {
        input,
        hidden: h,
        output,
    };
    init_mlp2(&mut s, GRAPH_ENCODER, mlp(embed_dim + e, 2 * l), rng)?;
    for name in [NODE_DECODER, CAUSAL_NODE_DECODER] {
        init_mlp2(&mut s, name, mlp(2 * l + e, 1), rng)?;
    }
    for name in [EDGE_DECODER, CAUSAL_EDGE_DECODER] {
        init_mlp2(&mut s, name, mlp(3 * l + e, 1), rng)?;
    }
    Ok(s)
}

/// What the generator needs to know about one graph.
#[derive(Clone, Copy, Debug)]
pub struct GraphView<'a> {
    pub node_embeddings: &'a Matrix,
    pub graph_embedding: &'a [f64],
    pub env: EnvLabels,
    pub edges: &'a [(usize, usize)],
}

/// Row bookkeeping for a stacked batch.
#[derive(Clone, Debug)]
pub struct Layout {
    pub node_start: Vec<usize>,
    pub edge_start: Vec<usize>,
    pub node_graph: Rc<[usize]>,
    pub edge_graph: Rc<[usize]>,
    pub edge_src: Rc<[usize]>,
    pub edge_dst: Rc<[usize]>,
}

impl Layout {
    pub fn new(views: &[GraphView]) -> Self {
        let mut node_start = Vec::with_capacity(views.len() + 1);
        let mut edge_start = Vec::with_capacity(views.len() + 1);
        let (mut ng, mut eg, mut src, mut dst) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut n0, mut e0) = (0, 0);
        for (b, v) in views.iter().enumerate() {
            node_start.push(n0);
            edge_start.push(e0);
            let n = v.node_embeddings.nrows();
            ng.extend(std::iter::repeat_n(b, n));
            for &(a, c) in v.edges {
                eg.push(b);
                src.push(n0 + a);
                dst.push(n0 + c);
            }
            n0 += n;
            e0 += v.edges.len();
        }
        node_start.push(n0);
        edge_start.push(e0);
        Self {
            node_start,
            edge_start,
            node_graph: ng.into(),
            edge_graph: eg.into(),
            edge_src: src.into(),
            edge_dst: dst.into(),
        }
    }

    pub fn nodes(&self, b: usize) -> std::ops::Range<usize> {
        self.node_start[b]..self.node_start[b + 1]
    }

    pub fn edges(&self, b: usize) -> std::ops::Range<usize> {
        self.edge_start[b]..self.edge_start[b + 1]
    }

    pub fn total_nodes(&self) -> usize {
        *self.node_start.last().unwrap_or(&0)
    }

    pub fn total_edges(&self) -> usize {
        *self.edge_start.last().unwrap_or(&0)
    }
}

/// Reparameterization noise for one batch; zeros give the mean embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub nodes: Matrix,
    pub graphs: Matrix,
}

impl Noise {
    pub fn zeros(layout: &Layout, graphs: usize, latent: usize) -> Self {
        Self {
            nodes: Array2::zeros((layout.total_nodes(), latent)),
            graphs: Array2::zeros((graphs, latent)),
        }
    }

    pub fn sample(layout: &Layout, graphs: usize, latent: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal));
        Self {
            nodes: draw(layout.total_nodes(), latent),
            graphs: draw(graphs, latent),
        }
    }
}

/// Tape handles produced by [`forward`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub h_nodes: Var,
    pub mu_nodes: Var,
    pub logvar_nodes: Var,
    pub z_nodes: Var,
    pub h_hat: Var,
    pub mu_graph: Var,
    pub logvar_graph: Var,
    pub z_graph: Var,
    /// `B × env_dim`, mean of the structure and feature environment rows.
    pub env_graph: Var,
    pub node_logits: Var,
    pub edge_logits: Var,
    pub node_prob: Var,
    pub edge_prob: Var,
    pub causal_node_logits: Var,
    pub causal_edge_logits: Var,
}

/// `ε + (1 − 2ε)·σ(l)`.
pub fn logits_to_prob(tape: &mut Tape, logits: Var) -> Var {
    let s = tape.sigmoid(logits);
    let s = tape.scale(s, 1.0 - 2.0 * PROB_EPS);
    tape.offset(s, PROB_EPS)
}

/// Mean of the structure and feature environment rows per graph.
pub fn env_graph(tape: &mut Tape, store: &ParamStore, envs: &[EnvLabels]) -> Result<Var> {
    let st = tape.param(store, ENV_STRUCTURE)?;
    let ft = tape.param(store, ENV_FEATURE)?;
    let k = tape.shape(st).0;
    if envs.iter().any(|e| e.structure >= k || e.feature >= k) {
        return Err(Error::structural(format!("environment label outside the {k}-row table")));
    }
    let s = tape.gather_rows(st, envs.iter().map(|e| e.structure).collect());
    let f = tape.gather_rows(ft, envs.iter().map(|e| e.feature).collect());
    let sum = tape.add(s, f);
    Ok(tape.scale(sum, 0.5))
}

/// `(μ_G, log σ_G²)` from `[h_G ‖ e_G]`, one row per graph.
pub fn encode_graph(tape: &mut Tape, store: &ParamStore, h_graph: Var, e_graph: Var) -> Result<(Var, Var)> {
    if tape.shape(h_graph).0 != tape.shape(e_graph).0 {
        return Err(Error::structural("encode_graph: row count mismatch"));
    }
    let x = tape.concat_cols(&[h_graph, e_graph]);
    let out = mlp2_forward(tape, store, GRAPH_ENCODER, x, Activation::Relu)?;
    split_gaussian(tape, out)
}

/// Node and edge logits from one decoder pair.
pub fn decode_logits(
    tape: &mut Tape,
    store: &ParamStore,
    decoders: (&str, &str),
    z_graph: Var,
    z_nodes: Var,
    e_graph: Var,
    layout: &Layout,
) -> Result<(Var, Var)> {
    let zg_n = tape.gather_rows(z_graph, layout.node_graph.clone());
    let eg_n = tape.gather_rows(e_graph, layout.node_graph.clone());
    let xn = tape.concat_cols(&[zg_n, z_nodes, eg_n]);
    let node = mlp2_forward(tape, store, decoders.0, xn, Activation::Relu)?;
    let zg_e = tape.gather_rows(z_graph, layout.edge_graph.clone());
    let eg_e = tape.gather_rows(e_graph, layout.edge_graph.clone());
    let zs = tape.gather_rows(z_nodes, layout.edge_src.clone());
    let zd = tape.gather_rows(z_nodes, layout.edge_dst.clone());
    let xe = tape.concat_cols(&[zg_e, zs, zd, eg_e]);
    let edge = mlp2_forward(tape, store, decoders.1, xe, Activation::Relu)?;
    Ok((node, edge))
}

fn stack_inputs(views: &[GraphView], layout: &Layout) -> Result<(Matrix, Matrix)> {
    let dim = views.first().map_or(0, |v| v.graph_embedding.len());
    let mut h = Array2::zeros((layout.total_nodes(), dim));
    let mut hg = Array2::zeros((views.len(), dim));
    for (b, v) in views.iter().enumerate() {
        if v.graph_embedding.len() != dim || v.node_embeddings.ncols() != dim {
            return Err(Error::structural("embedding width differs across the batch"));
        }
        h.slice_mut(ndarray::s![layout.nodes(b), ..]).assign(v.node_embeddings);
        hg.row_mut(b).assign(&ndarray::ArrayView1::from(v.graph_embedding));
    }
    Ok((h, hg))
}

/// Full generator pass over a batch.
pub fn forward(tape: &mut Tape, store: &ParamStore, views: &[GraphView], layout: &Layout, noise: &Noise) -> Result<Forward> {
    let (h, hg) = stack_inputs(views, layout)?;
    let envs: Vec<EnvLabels> = views.iter().map(|v| v.env).collect();
    let e_graph = env_graph(tape, store, &envs)?;
    let ft = tape.param(store, ENV_FEATURE)?;
    let node_env: Rc<[usize]> = layout.node_graph.iter().map(|&b| envs[b].feature).collect();
    let e_nodes = tape.gather_rows(ft, node_env);

    let h_nodes = tape.constant(h);
    let (mu_nodes, logvar_nodes) = encode_node(tape, store, h_nodes, e_nodes)?;
    let nn = tape.constant(noise.nodes.clone());
    let z_nodes = reparameterize(tape, mu_nodes, logvar_nodes, nn)?;
    let h_hat = decode_node(tape, store, z_nodes, e_nodes)?;

    let h_graph = tape.constant(hg);
    let (mu_graph, logvar_graph) = encode_graph(tape, store, h_graph, e_graph)?;
    let ng = tape.constant(noise.graphs.clone());
    let z_graph = reparameterize(tape, mu_graph, logvar_graph, ng)?;

    let (node_logits, edge_logits) =
        decode_logits(tape, store, (NODE_DECODER, EDGE_DECODER), z_graph, z_nodes, e_graph, layout)?;
    let (causal_node_logits, causal_edge_logits) = decode_logits(
        tape,
        store,
        (CAUSAL_NODE_DECODER, CAUSAL_EDGE_DECODER),
        z_graph,
        z_nodes,
        e_graph,
        layout,
    )?;
    let node_prob = logits_to_prob(tape, node_logits);
    let edge_prob = logits_to_prob(tape, edge_logits);
    Ok(Forward {
        h_nodes,
        mu_nodes,
        logvar_nodes,
        z_nodes,
        h_hat,
        mu_graph,
        logvar_graph,
        z_graph,
        env_graph: e_graph,
        node_logits,
        edge_logits,
        node_prob,
        edge_prob,
        causal_node_logits,
        causal_edge_logits,
    })
}

/// Per-graph probability maps read off a forward pass.
pub fn prob_maps(tape: &Tape, fwd: &Forward, layout: &Layout) -> Vec<ProbMap> {
    let np = tape.value(fwd.node_prob);
    let ep = tape.value(fwd.edge_prob);
    (0..layout.node_start.len() - 1)
        .map(|b| ProbMap {
            node_prob: layout.nodes(b).map(|i| np[[i, 0]]).collect(),
            edge_prob: layout.edges(b).map(|k| ep[[k, 0]]).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(mut s: ParamStore, keep_env: bool) -> ParamStore {
        let names: Vec<String> = s.names().map(String::from).collect();
        for n in names {
            if !(keep_env && n.starts_with("env.")) {
                s.value_mut(&n).unwrap().fill(0.0);
            }
        }
        s
    }

    fn fixture() -> (Vec<Matrix>, Vec<Vec<f64>>, Vec<Vec<(usize, usize)>>) {
        let h1 = array![[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [1.0, 1.0, 0.0]];
        let h2 = array![[0.2, 0.3, 0.1], [0.2, 0.3, 0.1]];
        let g1 = vec![2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        let g2 = vec![0.2, 0.3, 0.1];
        (vec![h1, h2], vec![g1, g2], vec![vec![(0, 1), (1, 2)], vec![(0, 1)]])
    }

    #[test]
    fn zero_decoders_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let store = zeroed(init_params(3, 2, Arch::default(), &mut rng).unwrap(), true);
        let (h, g, e) = fixture();
        let env = EnvLabels {
            structure: 1,
            feature: 0,
        };
        let views: Vec<GraphView> = (0..2)
            .map(|b| GraphView {
                node_embeddings: &h[b],
                graph_embedding: &g[b],
                env,
                edges: &e[b],
            })
            .collect();
        let layout = Layout::new(&views);
        let mut tape = Tape::new();
        let noise = Noise::sample(&layout, 2, 16, &mut rng);
        let fwd = forward(&mut tape, &store, &views, &layout, &noise).unwrap();
        for pm in prob_maps(&tape, &fwd, &layout) {
            assert!(pm.node_prob.iter().chain(&pm.edge_prob).all(|&p| p == 0.5));
        }
        assert!(tape.value(fwd.mu_graph).iter().all(|&x| x == 0.0));
        assert!(tape.value(fwd.logvar_graph).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_nodes_get_identical_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = init_params(3, 2, Arch::default(), &mut rng).unwrap();
        let (h, g, e) = fixture();
        let env = EnvLabels {
            structure: 0,
            feature: 1,
        };
        let views = [GraphView {
            node_embeddings: &h[1],
            graph_embedding: &g[1],
            env,
            edges: &e[1],
        }];
        let layout = Layout::new(&views);
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, &store, &views, &layout, &Noise::zeros(&layout, 1, 16)).unwrap();
        let pm = &prob_maps(&tape, &fwd, &layout)[0];
        assert_eq!(pm.node_prob[0], pm.node_prob[1]);
        assert!(pm.node_prob.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn graph_encoder_and_node_decoder_match_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let store = init_params(3, 2, Arch::default(), &mut rng).unwrap();
        let (h, g, e) = fixture();
        let env = EnvLabels {
            structure: 1,
            feature: 1,
        };
        let views = [GraphView {
            node_embeddings: &h[0],
            graph_embedding: &g[0],
            env,
            edges: &e[0],
        }];
        let layout = Layout::new(&views);
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, &store, &views, &layout, &Noise::zeros(&layout, 1, 16)).unwrap();
        let p = |n: &str| store.value(n).unwrap().clone();
        let mlp = |prefix: &str, x: &Matrix| {
            let hid = (x.dot(&p(&format!("{prefix}.w1"))) + p(&format!("{prefix}.b1"))).mapv(|v| v.max(0.0));
            hid.dot(&p(&format!("{prefix}.w2"))) + p(&format!("{prefix}.b2"))
        };
        let eg = (&p(ENV_STRUCTURE).row(1) + &p(ENV_FEATURE).row(1)) * 0.5;
        let eg = eg.insert_axis(ndarray::Axis(0));
        let hg = array![[2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]];
        let out = mlp(GRAPH_ENCODER, &ndarray::concatenate![ndarray::Axis(1), hg, eg]);
        let mu_g = out.slice(ndarray::s![.., 0..16]).to_owned();
        for j in 0..16 {
            assert_abs_diff_eq!(tape.value(fwd.mu_graph)[[0, j]], mu_g[[0, j]], epsilon = 1e-12);
        }
        // node 2 decoder input: [z_G ‖ z_2 ‖ e_G] with zero noise, z = μ
        let z2 = tape.value(fwd.mu_nodes).row(2).to_owned().insert_axis(ndarray::Axis(0));
        let logit = mlp(NODE_DECODER, &ndarray::concatenate![ndarray::Axis(1), mu_g, z2, eg]);
        let prob = PROB_EPS + (1.0 - 2.0 * PROB_EPS) * crate::tensor::sigmoid(logit[[0, 0]]);
        assert_abs_diff_eq!(tape.value(fwd.node_prob)[[2, 0]], prob, epsilon = 1e-12);
    }
}
