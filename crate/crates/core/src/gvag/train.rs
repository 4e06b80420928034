//! Explainer training and inference.

use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{self, LossBreakdown, LossWeights};
use super::{encode_graph, forward, init_params, prob_maps, Arch, Forward, GraphView, Layout, Noise, ProbMap};
use crate::error::{Error, Result};
use crate::graph::{complement_graph, induced_subgraph, Explanation, Graph};
use crate::nodevae::{nodevae_loss, NodeVaeWeights};
use crate::npaf::{CausalPartition, EnvLabels, EnvModel};
use crate::recon::{reconstruct_edge_first, sample_subgraph_train, ReconConfig};
use crate::target::BlackBox;
use crate::tensor::params::read_to_string;
use crate::tensor::tape::check_finite;
use crate::tensor::{reparameterize, Adam, Matrix, ParamStore, Tape, Var};

pub const EXPLAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sampled subgraphs per graph per step.
    pub samples: usize,
    pub temperature: f64,
    pub seed: u64,
    pub arch: Arch,
    pub weights: LossWeights,
    pub nodevae: NodeVaeWeights,
    pub recon: ReconConfig,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 1e-4,
            epochs: 10,
            batch_size: 64,
            samples: 4,
            temperature: losses::CON_TEMPERATURE,
            seed: 0,
            arch: Arch::default(),
            weights: LossWeights::default(),
            nodevae: NodeVaeWeights::default(),
            recon: ReconConfig::default(),
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("explainer.lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("explainer.weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("explainer.batch_size", "must be at least 1"));
        }
        if self.samples == 0 {
            return Err(Error::config("explainer.samples", "must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("explainer.temperature", "must be positive"));
        }
        if self.arch.env_dim == 0 || self.arch.latent == 0 || self.arch.hidden == 0 {
            return Err(Error::config("explainer.arch", "widths must be positive"));
        }
        self.weights.validate()?;
        if !(self.nodevae.mse >= 0.0 && self.nodevae.kl >= 0.0) {
            return Err(Error::config("explainer.nodevae", "weights must be non-negative"));
        }
        self.recon.validate()
    }
}

/// Fixed per-graph inputs: everything the black box and NPAF say about it.
#[derive(Clone, Debug)]
struct GraphCache {
    h: Matrix,
    hg: Vec<f64>,
    env: EnvLabels,
    label: usize,
    loss: f64,
    partition: CausalPartition,
    perturbed_hg: Vec<f64>,
    perturbed_env: EnvLabels,
}

fn graph_inputs<M: BlackBox + ?Sized>(model: &M, env: &EnvModel, g: &Graph) -> Result<(Matrix, Vec<f64>, EnvLabels, usize, f64)> {
    let p = model.predict(g, None)?;
    let labels = env.infer_env(g)?;
    Ok((p.node_embeddings, p.graph_embedding, labels, p.label, p.loss))
}

/// Replaces the environment columns of each node with those of a random
/// node from a graph in a different feature environment.
fn perturb(g: &Graph, donors: &[&Graph], dims: &[usize], rng: &mut impl Rng) -> Result<Graph> {
    let Some(donor) = donors.choose(rng) else {
        return Ok(g.clone());
    };
    if donor.node_count() == 0 {
        return Ok(g.clone());
    }
    let mut x = g.features().clone();
    for i in 0..g.node_count() {
        let j = rng.random_range(0..donor.node_count());
        for &d in dims {
            x[[i, d]] = donor.features()[[j, d]];
        }
    }
    g.with_features(x)
}

fn build_cache<M: BlackBox + ?Sized>(graphs: &[&Graph], model: &M, env: &EnvModel, rng: &mut impl Rng) -> Result<Vec<GraphCache>> {
    let fitted = env.partitions.len() == graphs.len()
        && graphs
            .iter()
            .zip(&env.partitions)
            .all(|(g, p)| p.nodes.len() == g.node_count() && p.edges.len() == g.edge_count());
    let mut base = Vec::with_capacity(graphs.len());
    for g in graphs {
        base.push(graph_inputs(model, env, g)?);
    }
    let mut out = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let (h, hg, labels, y, loss) = base[i].clone();
        let partition = if fitted {
            env.partitions[i].clone()
        } else {
            env.partition_for(g, y)?
        };
        let donors: Vec<&Graph> = graphs
            .iter()
            .zip(&base)
            .filter(|(_, b)| b.2.feature != labels.feature)
            .map(|(g, _)| *g)
            .collect();
        let pg = perturb(g, &donors, &env.dim_env, rng)?;
        let pred = model.predict(&pg, None)?;
        let perturbed_env = env.infer_env(&pg)?;
        out.push(GraphCache {
            h,
            hg,
            env: labels,
            label: y,
            loss,
            partition,
            perturbed_hg: pred.graph_embedding,
            perturbed_env,
        });
    }
    Ok(out)
}

/// One sampled explanation with the black-box quantities it needs.
#[derive(Clone, Debug)]
struct Sample {
    nodes: Vec<usize>,
    edges: Vec<usize>,
    matched: bool,
    l_diff: f64,
    l_s: f64,
    l_c: f64,
    n_sub: usize,
    n_prior: usize,
}

/// Inputs of the objective for one batch, frozen so that it can be
/// re-evaluated for finite differences.
#[derive(Clone, Debug)]
struct Prepared {
    members: Vec<usize>,
    layout: Layout,
    noise: Noise,
    perturbed_noise: Matrix,
    samples: Vec<Sample>,
    lar_previous: Option<f64>,
}

struct Terms {
    nodevae: Var,
    mi: Var,
    rr: Var,
    con: Var,
    lar: Var,
    causal: Var,
    hinge: Var,
    subg_node: Var,
    total: Var,
}

/// Loss terms that can be probed individually.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    NodeVae,
    Mi,
    Rr,
    Con,
    Lar,
    Causal,
    Hinge,
    SubgNode,
    Final,
}

impl Term {
    pub const ALL: [Term; 9] = [
        Term::NodeVae,
        Term::Mi,
        Term::Rr,
        Term::Con,
        Term::Lar,
        Term::Causal,
        Term::Hinge,
        Term::SubgNode,
        Term::Final,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::NodeVae => "nodevae",
            Term::Mi => "mi",
            Term::Rr => "rr",
            Term::Con => "con",
            Term::Lar => "lar",
            Term::Causal => "causal",
            Term::Hinge => "hinge",
            Term::SubgNode => "subg_node",
            Term::Final => "final",
        }
    }
}

struct Trainer<'a, M: BlackBox + ?Sized> {
    graphs: &'a [&'a Graph],
    model: &'a M,
    cache: Vec<GraphCache>,
    cfg: &'a ExplainerConfig,
}

impl<'a, M: BlackBox + ?Sized> Trainer<'a, M> {
    fn views(&self, members: &[usize]) -> Vec<GraphView<'_>> {
        members
            .iter()
            .map(|&i| GraphView {
                node_embeddings: &self.cache[i].h,
                graph_embedding: &self.cache[i].hg,
                env: self.cache[i].env,
                edges: self.graphs[i].edges(),
            })
            .collect()
    }

    /// Forward pass, Algorithm-1 sampling and black-box scoring.
    fn prepare(&self, store: &ParamStore, members: Vec<usize>, lar_previous: Option<f64>, rng: &mut impl Rng) -> Result<(Prepared, Tape, Forward)> {
        let views = self.views(&members);
        let layout = Layout::new(&views);
        let latent = self.cfg.arch.latent;
        let noise = Noise::sample(&layout, members.len(), latent, rng);
        let perturbed_noise = Noise::sample(&layout, members.len(), latent, rng).graphs;
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, store, &views, &layout, &noise)?;
        let maps = prob_maps(&tape, &fwd, &layout);
        let mut samples = Vec::with_capacity(members.len() * self.cfg.samples);
        for (b, (&gi, pm)) in members.iter().zip(&maps).enumerate() {
            let g = self.graphs[gi];
            let c = &self.cache[gi];
            for _ in 0..self.cfg.samples {
                let e = sample_subgraph_train(pm, g, &self.cfg.recon, rng)?;
                samples.push(self.score(g, c, &e, &layout, b)?);
            }
        }
        let prepared = Prepared {
            members,
            layout,
            noise,
            perturbed_noise,
            samples,
            lar_previous,
        };
        Ok((prepared, tape, fwd))
    }

    fn score(&self, g: &Graph, c: &GraphCache, e: &Explanation, layout: &Layout, b: usize) -> Result<Sample> {
        let gc = induced_subgraph(g, e)?;
        let gs = complement_graph(g, e)?;
        let pc = self.model.predict(&gc, Some(c.label))?;
        let ps = self.model.predict(&gs, Some(c.label))?;
        let n0 = layout.node_start[b];
        let e0 = layout.edge_start[b];
        Ok(Sample {
            nodes: (0..g.node_count()).filter(|&i| e.node_mask[i]).map(|i| n0 + i).collect(),
            edges: (0..g.edge_count()).filter(|&k| e.edge_mask[k]).map(|k| e0 + k).collect(),
            matched: pc.label == c.label,
            l_diff: pc.loss - c.loss,
            l_s: ps.loss,
            l_c: pc.loss,
            n_sub: e.selected_nodes(),
            n_prior: self.cfg.recon.prior_nodes(g.node_count()),
        })
    }

    fn objective(&self, tape: &mut Tape, store: &ParamStore, fwd: &Forward, prep: &Prepared) -> Result<Terms> {
        let cfg = self.cfg;
        let s = &prep.samples;
        let nvae = nodevae_loss(tape, fwd.h_nodes, fwd.h_hat, fwd.mu_nodes, fwd.logvar_nodes, cfg.nodevae)?;

        // per-sample log Prob(G_c) as selection-matrix products
        let total_nodes = prep.layout.total_nodes();
        let total_edges = prep.layout.total_edges();
        let mut sel_n = Array2::zeros((s.len(), total_nodes));
        let mut sel_e = Array2::zeros((s.len(), total_edges));
        for (r, smp) in s.iter().enumerate() {
            for &i in &smp.nodes {
                sel_n[[r, i]] = 1.0;
            }
            for &k in &smp.edges {
                sel_e[[r, k]] = 1.0;
            }
        }
        let ln_n = tape.ln(fwd.node_prob);
        let sn = tape.constant(sel_n);
        let lp = tape.matmul(sn, ln_n);
        let log_prob = if total_edges > 0 {
            let ln_e = tape.ln(fwd.edge_prob);
            let se = tape.constant(sel_e);
            let lpe = tape.matmul(se, ln_e);
            tape.add(lp, lpe)
        } else {
            lp
        };
        let matched: Vec<bool> = s.iter().map(|x| x.matched).collect();
        let l_diff: Vec<f64> = s.iter().map(|x| x.l_diff).collect();
        let elements: Vec<usize> = s.iter().map(|x| x.nodes.len() + x.edges.len()).collect();
        let mi = losses::mi_loss(tape, log_prob, &matched);
        let gm = losses::geometric_mean_probs(tape, log_prob, &elements);
        let rr = losses::rr_loss(tape, gm, &l_diff);
        let now = if l_diff.is_empty() {
            0.0
        } else {
            l_diff.iter().sum::<f64>() / l_diff.len() as f64
        };
        let lar = losses::lar(tape, gm, now, prep.lar_previous.unwrap_or(now));

        let node_labels: Vec<Vec<bool>> = prep.members.iter().map(|&i| self.cache[i].partition.nodes.clone()).collect();
        let edge_labels: Vec<Vec<bool>> = prep.members.iter().map(|&i| self.cache[i].partition.edges.clone()).collect();
        let causal = losses::causal_reg(
            tape,
            fwd.causal_node_logits,
            fwd.causal_edge_logits,
            &prep.layout,
            &node_labels,
            &edge_labels,
        )?;

        // contrastive over originals and their perturbed counterparts
        let b = prep.members.len();
        let dim = self.cache[prep.members[0]].perturbed_hg.len();
        let phg = Array2::from_shape_fn((b, dim), |(r, c)| self.cache[prep.members[r]].perturbed_hg[c]);
        let penv: Vec<EnvLabels> = prep.members.iter().map(|&i| self.cache[i].perturbed_env).collect();
        let pe = super::env_graph(tape, store, &penv)?;
        let ph = tape.constant(phg);
        let (pmu, plv) = encode_graph(tape, store, ph, pe)?;
        let pn = tape.constant(prep.perturbed_noise.clone());
        let pz = reparameterize(tape, pmu, plv, pn)?;
        let z_all = tape.concat_rows(&[fwd.z_graph, pz]);
        let mut labels: Vec<usize> = prep.members.iter().map(|&i| self.cache[i].label).collect();
        labels.extend_from_within(..);
        let con = losses::contrastive_loss(tape, z_all, &labels, cfg.temperature)?;

        let l_s: Vec<f64> = s.iter().map(|x| x.l_s).collect();
        let l_c: Vec<f64> = s.iter().map(|x| x.l_c).collect();
        let n_sub: Vec<usize> = s.iter().map(|x| x.n_sub).collect();
        let n_prior: Vec<usize> = s.iter().map(|x| x.n_prior).collect();
        let hinge = tape.constant_scalar(losses::hinge_reg(&l_s, &l_c));
        let subg_node = tape.constant_scalar(losses::subg_node_reg(&l_diff, &n_sub, &n_prior));

        let w = cfg.weights;
        let mut acc = tape.scale(nvae, w.nodevae);
        let a = tape.scale(mi, w.mi);
        let r = tape.scale(rr, w.rr);
        let recon = tape.add(a, r);
        let recon = tape.scale(recon, w.recon);
        acc = tape.add(acc, recon);
        let c = tape.scale(con, w.con);
        acc = tape.add(acc, c);
        let l = tape.scale(lar, w.lar);
        acc = tape.add(acc, l);
        acc = tape.add(acc, causal);
        acc = tape.add(acc, hinge);
        let total = tape.add(acc, subg_node);
        Ok(Terms {
            nodevae: nvae,
            mi,
            rr,
            con,
            lar,
            causal,
            hinge,
            subg_node,
            total,
        })
    }
}

fn breakdown(tape: &Tape, t: &Terms) -> LossBreakdown {
    LossBreakdown {
        nodevae: tape.scalar(t.nodevae),
        mi: tape.scalar(t.mi),
        rr: tape.scalar(t.rr),
        con: tape.scalar(t.con),
        lar: tape.scalar(t.lar),
        causal: tape.scalar(t.causal),
        hinge: tape.scalar(t.hinge),
        subg_node: tape.scalar(t.subg_node),
        total: tape.scalar(t.total),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub explainer: Explainer,
    pub log: Vec<EpochLog>,
    /// Set when a non-finite objective stopped training early; the
    /// explainer then holds the last finite parameters.
    pub diverged: Option<String>,
}

/// Trains the generator against a frozen black box.
///
/// `graphs` should be the graphs `env` was fitted on, in the same order, so
/// the stored causal partitions are reused; otherwise partitions are
/// recomputed from the environment model.
pub fn train_explainer<M: BlackBox + ?Sized>(
    graphs: &[&Graph],
    model: &M,
    env: &EnvModel,
    model_hash: &str,
    cfg: &ExplainerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::config("dataset", "explainer training needs a nonempty train split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cache = build_cache(graphs, model, env, &mut rng)?;
    let embed_dim = cache[0].hg.len();
    let mut store = init_params(embed_dim, env.k, cfg.arch, &mut rng)?;
    let trainer = Trainer {
        graphs,
        model,
        cache,
        cfg,
    };
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut previous: Option<f64> = None;
    let mut diverged = None;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0.0;
        let (mut diff_sum, mut diff_count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (prep, mut tape, fwd) = trainer.prepare(&store, chunk.to_vec(), previous, &mut rng)?;
            let terms = trainer.objective(&mut tape, &store, &fwd, &prep)?;
            let parts = breakdown(&tape, &terms);
            if let Err(e) = losses::final_loss(&parts, &cfg.weights).and_then(|_| check_finite(&tape, terms.total, "objective")) {
                diverged = Some(e.to_string());
                break 'epochs;
            }
            let backup = store.clone();
            tape.backward(terms.total).accumulate_into(&tape, &mut store);
            opt.step(&mut store);
            if !store.all_finite() {
                store = backup;
                diverged = Some(format!("non-finite parameters in epoch {}", epoch + 1));
                break 'epochs;
            }
            diff_sum += prep.samples.iter().map(|s| s.l_diff).sum::<f64>();
            diff_count += prep.samples.len();
            add_into(&mut sum, &parts);
            batches += 1.0;
        }
        scale(&mut sum, 1.0 / batches);
        log::debug!("explainer epoch {} total {:.4}", epoch + 1, sum.total);
        log.push(EpochLog {
            epoch: epoch + 1,
            losses: sum,
        });
        previous = Some(if diff_count == 0 { 0.0 } else { diff_sum / diff_count as f64 });
    }
    Ok(TrainOutcome {
        explainer: Explainer {
            params: store,
            arch: cfg.arch,
            embed_dim,
            env: env.clone(),
            recon: cfg.recon.clone(),
            model_hash: model_hash.to_string(),
            config_hash: String::new(),
        },
        log,
        diverged,
    })
}

fn add_into(acc: &mut LossBreakdown, x: &LossBreakdown) {
    acc.nodevae += x.nodevae;
    acc.mi += x.mi;
    acc.rr += x.rr;
    acc.con += x.con;
    acc.lar += x.lar;
    acc.causal += x.causal;
    acc.hinge += x.hinge;
    acc.subg_node += x.subg_node;
    acc.total += x.total;
}

fn scale(acc: &mut LossBreakdown, k: f64) {
    for v in [
        &mut acc.nodevae,
        &mut acc.mi,
        &mut acc.rr,
        &mut acc.con,
        &mut acc.lar,
        &mut acc.causal,
        &mut acc.hinge,
        &mut acc.subg_node,
        &mut acc.total,
    ] {
        *v *= k;
    }
}

pub fn write_loss_log(rows: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    w.write_record(["epoch", "nodevae", "mi", "rr", "con", "lar", "causal", "hinge", "subg_node", "total"])
        .map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        let l = &r.losses;
        let fields = [l.nodevae, l.mi, l.rr, l.con, l.lar, l.causal, l.hinge, l.subg_node, l.total];
        let mut rec = vec![r.epoch.to_string()];
        rec.extend(fields.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Frozen batch for checking the gradient of each loss term.
pub struct LossProbe<'a, M: BlackBox + ?Sized> {
    trainer: Trainer<'a, M>,
    prepared: Prepared,
    params: ParamStore,
}

impl<'a, M: BlackBox + ?Sized> LossProbe<'a, M> {
    /// Prepares one batch over all of `graphs` with fresh parameters; the
    /// previous-epoch loss gap is set to 0 so the reward term is active.
    pub fn new(graphs: &'a [&'a Graph], model: &'a M, env: &EnvModel, cfg: &'a ExplainerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let cache = build_cache(graphs, model, env, &mut rng)?;
        let params = init_params(cache[0].hg.len(), env.k, cfg.arch, &mut rng)?;
        let trainer = Trainer {
            graphs,
            model,
            cache,
            cfg,
        };
        let (prepared, _, _) = trainer.prepare(&params, (0..graphs.len()).collect(), Some(0.0), &mut rng)?;
        Ok(Self {
            trainer,
            prepared,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Rebuilds the batch objective on `tape` and returns one of its terms.
    pub fn term(&self, tape: &mut Tape, store: &ParamStore, term: Term) -> Result<Var> {
        let views = self.trainer.views(&self.prepared.members);
        let fwd = forward(tape, store, &views, &self.prepared.layout, &self.prepared.noise)?;
        let t = self.trainer.objective(tape, store, &fwd, &self.prepared)?;
        Ok(match term {
            Term::NodeVae => t.nodevae,
            Term::Mi => t.mi,
            Term::Rr => t.rr,
            Term::Con => t.con,
            Term::Lar => t.lar,
            Term::Causal => t.causal,
            Term::Hinge => t.hinge,
            Term::SubgNode => t.subg_node,
            Term::Final => t.total,
        })
    }

    /// All term values at the probe's parameters.
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let views = self.trainer.views(&self.prepared.members);
        let fwd = forward(&mut tape, &self.params, &views, &self.prepared.layout, &self.prepared.noise)?;
        let t = self.trainer.objective(&mut tape, &self.params, &fwd, &self.prepared)?;
        Ok(breakdown(&tape, &t))
    }
}

/// On-disk description of a trained explainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainerManifest {
    pub v: u32,
    pub embed_dim: usize,
    pub k: usize,
    pub arch: Arch,
    pub recon: ReconConfig,
    pub model_hash: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explainer {
    params: ParamStore,
    arch: Arch,
    embed_dim: usize,
    env: EnvModel,
    recon: ReconConfig,
    model_hash: String,
    config_hash: String,
}

impl Explainer {
    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn env_model(&self) -> &EnvModel {
        &self.env
    }

    pub fn recon(&self) -> &ReconConfig {
        &self.recon
    }

    pub fn set_recon(&mut self, recon: ReconConfig) {
        self.recon = recon;
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn set_config_hash(&mut self, hash: impl Into<String>) {
        self.config_hash = hash.into();
    }

    /// Existence probabilities at the mean latent codes.
    pub fn prob_map<M: BlackBox + ?Sized>(&self, model: &M, g: &Graph) -> Result<ProbMap> {
        let (h, hg, env, _, _) = graph_inputs(model, &self.env, g)?;
        if hg.len() != self.embed_dim {
            return Err(Error::structural(format!(
                "model embeddings have width {}, explainer expects {}",
                hg.len(),
                self.embed_dim
            )));
        }
        let views = [GraphView {
            node_embeddings: &h,
            graph_embedding: &hg,
            env,
            edges: g.edges(),
        }];
        let layout = Layout::new(&views);
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, &self.params, &views, &layout, &Noise::zeros(&layout, 1, self.arch.latent))?;
        Ok(prob_maps(&tape, &fwd, &layout).remove(0))
    }

    /// Deterministic explanation via edge-first reconstruction.
    pub fn explain<M: BlackBox + ?Sized>(&self, model: &M, g: &Graph) -> Result<Explanation> {
        if g.node_count() == 0 {
            return Ok(Explanation::empty(g));
        }
        let pm = self.prob_map(model, g)?;
        reconstruct_edge_first(&pm, g, &self.recon)
    }

    pub fn manifest(&self) -> ExplainerManifest {
        ExplainerManifest {
            v: EXPLAINER_VERSION,
            embed_dim: self.embed_dim,
            k: self.env.k,
            arch: self.arch,
            recon: self.recon.clone(),
            model_hash: self.model_hash.clone(),
            config_hash: self.config_hash.clone(),
        }
    }

    /// Writes `manifest.json`, `params.json` and `envmodel.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest()).map_err(|e| Error::structural(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.params.save(&dir.join("params.json"))?;
        self.env.save(&dir.join("envmodel.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let m: ExplainerManifest = serde_json::from_str(&read_to_string(&path)?).map_err(|e| Error::Document {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if m.v != EXPLAINER_VERSION {
            return Err(Error::Document {
                path,
                message: format!("unsupported version {}", m.v),
            });
        }
        let shapes = init_params(m.embed_dim, m.k, m.arch, &mut ChaCha8Rng::seed_from_u64(0))?.manifest();
        let params = ParamStore::load(&dir.join("params.json"), &shapes)?;
        let env = EnvModel::load(&dir.join("envmodel.json"))?;
        if env.k != m.k {
            return Err(Error::structural("environment model and manifest disagree on K"));
        }
        Ok(Self {
            params,
            arch: m.arch,
            embed_dim: m.embed_dim,
            env,
            recon: m.recon,
            model_hash: m.model_hash,
            config_hash: m.config_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};
    use crate::npaf::{fit_npaf, NpafConfig};
    use crate::target::{train_target, TargetConfig, TargetModel};
    use crate::tensor::grad_check;

    fn setup(n: usize) -> (Vec<Graph>, TargetModel, EnvModel) {
        let ds = generate(&GenConfig {
            num_graphs: n,
            seed: 3,
            ..GenConfig::default()
        })
        .unwrap();
        let refs: Vec<&Graph> = ds.graphs.iter().collect();
        let (model, _) = train_target(
            &refs,
            3,
            &TargetConfig {
                epochs: 2,
                hidden: 8,
                ..TargetConfig::default()
            },
        )
        .unwrap();
        let env = fit_npaf(
            &refs,
            &NpafConfig {
                k: 2,
                ..NpafConfig::default()
            },
        )
        .unwrap();
        (ds.graphs, model, env)
    }

    fn small_cfg() -> ExplainerConfig {
        ExplainerConfig {
            epochs: 1,
            batch_size: 4,
            samples: 2,
            arch: Arch {
                env_dim: 4,
                latent: 4,
                hidden: 6,
            },
            ..ExplainerConfig::default()
        }
    }

    #[test]
    fn smoke_checkpoint_and_determinism() {
        let (graphs, model, env) = setup(10);
        let refs: Vec<&Graph> = graphs.iter().collect();
        let cfg = small_cfg();
        let out = train_explainer(&refs, &model, &env, &model.fingerprint(), &cfg).unwrap();
        assert!(out.diverged.is_none());
        assert_eq!(out.log.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        out.explainer.save(dir.path()).unwrap();
        let back = Explainer::load(dir.path()).unwrap();
        assert_eq!(back, out.explainer);
        let again = train_explainer(&refs, &model, &env, &model.fingerprint(), &cfg).unwrap();
        assert_eq!(again.explainer.params(), out.explainer.params());
        for g in &graphs {
            let e = back.explain(&model, g).unwrap();
            e.validate(g).unwrap();
        }
        let log_path = dir.path().join("log.csv");
        write_loss_log(&out.log, &log_path).unwrap();
        assert_eq!(std::fs::read_to_string(log_path).unwrap().lines().count(), 2);
    }

    #[test]
    fn every_term_passes_gradient_check() {
        let (graphs, model, env) = setup(3);
        let refs: Vec<&Graph> = graphs.iter().collect();
        let cfg = small_cfg();
        let probe = LossProbe::new(&refs, &model, &env, &cfg).unwrap();
        let parts = probe.breakdown().unwrap();
        assert!((losses::final_loss(&parts, &cfg.weights).unwrap() - parts.total).abs() < 1e-12);
        for term in Term::ALL {
            let report = grad_check(|t, p| probe.term(t, p, term), probe.params(), 1e-5, 400, 1).unwrap();
            assert!(report.max_rel_error <= 1e-4, "{}: {report:?}", term.name());
        }
    }
}
