//! The classifier under explanation: mean-aggregation message passing,
//! mean pooling and a linear read-out.
//!
//! Layer `l` computes `H' = relu(H W_self + mean_{j ~ i} H_j W_nbr + b)`.
//! Explainers see the model only through [`BlackBox::predict`].

use std::path::Path;
use std::rc::Rc;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::params::read_to_string;
use crate::tensor::tape::{check_finite, softmax_rows};
use crate::tensor::{Adam, Matrix, ParamStore, Tape, Var};

/// Output of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub label: usize,
    /// `-ln class_probs[reference]`.
    pub loss: f64,
    /// Last message-passing layer, one row per node.
    pub node_embeddings: Matrix,
    pub graph_embedding: Vec<f64>,
}

/// The only view of a trained model that explainers receive.
pub trait BlackBox: Sync {
    /// `reference` defaults to the predicted label.
    fn predict(&self, g: &Graph, reference: Option<usize>) -> Result<Prediction>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            epochs: 20,
            batch_size: 64,
            lr: 0.01,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("target.layers", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("target.hidden", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("target.batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("target.lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("target.weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Architecture record stored next to the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetShape {
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub class_count: usize,
}

impl TargetShape {
    fn manifest(&self) -> Vec<(String, (usize, usize))> {
        let mut m = Vec::new();
        for l in 0..self.layers {
            let input = if l == 0 { self.feature_dim } else { self.hidden };
            m.push((layer_name(l, "w_self"), (input, self.hidden)));
            m.push((layer_name(l, "w_nbr"), (input, self.hidden)));
            m.push((layer_name(l, "b"), (1, self.hidden)));
        }
        m.push(("gnn.cls.w".into(), (self.hidden, self.class_count)));
        m.push(("gnn.cls.b".into(), (1, self.class_count)));
        m.sort();
        m
    }
}

fn layer_name(l: usize, part: &str) -> String {
    format!("gnn.l{l}.{part}")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    shape: TargetShape,
    params: ParamStore,
}

impl TargetModel {
    /// Glorot-initialized weights, zero biases.
    pub fn init(shape: TargetShape, seed: u64) -> Result<Self> {
        if shape.class_count == 0 || shape.layers == 0 || shape.hidden == 0 {
            return Err(Error::config("target", "class_count, layers and hidden must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, (r, c)) in shape.manifest() {
            if name.ends_with(".b") {
                params.insert_zeros(name, r, c)?;
            } else {
                params.insert_glorot(name, r, c, &mut rng)?;
            }
        }
        Ok(Self { shape, params })
    }

    pub fn from_params(shape: TargetShape, params: ParamStore) -> Result<Self> {
        if params.manifest() != shape.manifest() {
            return Err(Error::structural("parameter set does not match the model shape"));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> TargetShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn p(&self, name: &str) -> &Matrix {
        self.params.value(name).expect("manifest checked at construction")
    }

    /// Node embeddings and class logits for a single graph, without a tape.
    fn forward(&self, g: &Graph) -> (Matrix, Array1<f64>) {
        let adj = g.adjacency();
        let mut h = g.features().clone();
        for l in 0..self.shape.layers {
            let nbr = neighbor_mean(&h, &adj);
            let mut next = h.dot(self.p(&layer_name(l, "w_self"))) + nbr.dot(self.p(&layer_name(l, "w_nbr")));
            next += &self.p(&layer_name(l, "b")).row(0);
            next.mapv_inplace(|x| x.max(0.0));
            h = next;
        }
        let pooled = h.mean_axis(Axis(0)).expect("nonempty graph");
        let logits = pooled.dot(self.p("gnn.cls.w")) + self.p("gnn.cls.b").row(0);
        (h, logits)
    }

    /// Batched forward on the tape; one logit row per graph.
    fn forward_batch(&self, tape: &mut Tape, graphs: &[&Graph]) -> Result<Var> {
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut x = Array2::zeros((total, self.shape.feature_dim));
        let mut nbrs = Vec::with_capacity(total);
        let mut segments = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for g in graphs {
            let n = g.node_count();
            x.slice_mut(ndarray::s![offset..offset + n, ..]).assign(g.features());
            nbrs.extend(g.adjacency().into_iter().map(|l| l.into_iter().map(|j| j + offset).collect::<Vec<_>>()));
            segments.push((offset, n));
            offset += n;
        }
        let nbrs: Rc<[Vec<usize>]> = nbrs.into();
        let mut h = tape.constant(x);
        for l in 0..self.shape.layers {
            let agg = tape.neighbor_mean(h, nbrs.clone());
            let ws = tape.param(&self.params, &layer_name(l, "w_self"))?;
            let wn = tape.param(&self.params, &layer_name(l, "w_nbr"))?;
            let b = tape.param(&self.params, &layer_name(l, "b"))?;
            let a = tape.matmul(h, ws);
            let c = tape.matmul(agg, wn);
            let s = tape.add(a, c);
            let s = tape.add_row(s, b);
            h = tape.relu(s);
        }
        let pooled = tape.segment_mean(h, segments.into());
        let w = tape.param(&self.params, "gnn.cls.w")?;
        let b = tape.param(&self.params, "gnn.cls.b")?;
        let logits = tape.matmul(pooled, w);
        Ok(tape.add_row(logits, b))
    }

    pub fn accuracy(&self, graphs: &[&Graph]) -> Result<f64> {
        if graphs.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for g in graphs {
            if self.predict(g, None)?.label == g.label() {
                correct += 1;
            }
        }
        Ok(correct as f64 / graphs.len() as f64)
    }

    /// sha256 of the serialized checkpoint, used to pair explainers with
    /// the model they were trained against.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(&self.params.to_checkpoint()).expect("checkpoint serializes");
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.shape).expect("shape serializes"));
        h.update(text);
        hex::encode(h.finalize())
    }

    /// Writes `shape.json` and `params.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shape_path = dir.join("shape.json");
        let text = serde_json::to_string_pretty(&self.shape).map_err(|e| Error::structural(e.to_string()))?;
        std::fs::write(&shape_path, text).map_err(|e| Error::io(&shape_path, e))?;
        self.params.save(&dir.join("params.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let shape_path = dir.join("shape.json");
        let shape: TargetShape =
            serde_json::from_str(&read_to_string(&shape_path)?).map_err(|e| Error::Document {
                path: shape_path,
                message: e.to_string(),
            })?;
        let params = ParamStore::load(&dir.join("params.json"), &shape.manifest())?;
        Self::from_params(shape, params)
    }
}

impl BlackBox for TargetModel {
    fn predict(&self, g: &Graph, reference: Option<usize>) -> Result<Prediction> {
        if g.feature_dim() != self.shape.feature_dim {
            return Err(Error::structural(format!(
                "graph has feature dim {}, model expects {}",
                g.feature_dim(),
                self.shape.feature_dim
            )));
        }
        let c = self.shape.class_count;
        if let Some(r) = reference {
            if r >= c {
                return Err(Error::structural(format!("reference label {r} out of range for {c} classes")));
            }
        }
        let (node_embeddings, graph_embedding, class_probs) = if g.node_count() == 0 {
            (
                Array2::zeros((0, self.shape.hidden)),
                vec![0.0; self.shape.hidden],
                vec![1.0 / c as f64; c],
            )
        } else {
            let (h, logits) = self.forward(g);
            let pooled = h.mean_axis(Axis(0)).expect("nonempty graph").to_vec();
            let probs = softmax_rows(&logits.insert_axis(Axis(0))).row(0).to_vec();
            (h, pooled, probs)
        };
        let label = argmax(&class_probs);
        let reference = reference.unwrap_or(label);
        let loss = -class_probs[reference].max(f64::MIN_POSITIVE).ln();
        Ok(Prediction {
            class_probs,
            label,
            loss,
            node_embeddings,
            graph_embedding,
        })
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn neighbor_mean(h: &Matrix, adj: &[Vec<usize>]) -> Matrix {
    let mut out = Array2::zeros(h.dim());
    for (i, list) in adj.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let mut row = out.row_mut(i);
        for &j in list {
            row += &h.row(j);
        }
        row /= list.len() as f64;
    }
    out
}

/// Mini-batch Adam on cross-entropy. Zero epochs return the initial model.
pub fn train_target(train: &[&Graph], class_count: usize, cfg: &TargetConfig) -> Result<(TargetModel, Vec<TrainLogRow>)> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::config("dataset", "train split is empty"))?;
    let feature_dim = first.feature_dim();
    if let Some(g) = train.iter().find(|g| g.feature_dim() != feature_dim || g.label() >= class_count) {
        return Err(Error::structural(format!(
            "train graph with feature dim {} and label {} does not fit the model",
            g.feature_dim(),
            g.label()
        )));
    }
    let shape = TargetShape {
        feature_dim,
        hidden: cfg.hidden,
        layers: cfg.layers,
        class_count,
    };
    let mut model = TargetModel::init(shape, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Graph> = chunk.iter().map(|&i| train[i]).collect();
            let targets: Rc<[usize]> = batch.iter().map(|g| g.label()).collect();
            let mut tape = Tape::new();
            let logits = model.forward_batch(&mut tape, &batch)?;
            let loss = tape.cross_entropy(logits, targets);
            check_finite(&tape, loss, "target cross-entropy")?;
            loss_sum += tape.scalar(loss) * batch.len() as f64;
            tape.backward(loss).accumulate_into(&tape, &mut model.params);
            opt.step(&mut model.params);
        }
        log.push(TrainLogRow {
            epoch: epoch + 1,
            loss: loss_sum / train.len() as f64,
            accuracy: model.accuracy(train)?,
        });
        log::debug!("target epoch {} loss {:.4}", epoch + 1, loss_sum / train.len() as f64);
    }
    Ok((model, log))
}

pub fn write_train_log(rows: &[TrainLogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tiny_shape(layers: usize) -> TargetShape {
        TargetShape {
            feature_dim: 2,
            hidden: 2,
            layers,
            class_count: 2,
        }
    }

    fn path2() -> Graph {
        Graph::new(2, vec![(0, 1)], array![[1.0, 0.0], [0.0, 2.0]], vec![0, 0], 0).unwrap()
    }

    #[test]
    fn one_layer_two_node_path_matches_hand_computation() {
        let mut params = ParamStore::new();
        params.insert("gnn.l0.w_self", array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        params.insert("gnn.l0.w_nbr", array![[0.5, 0.0], [0.0, -1.0]]).unwrap();
        params.insert("gnn.l0.b", array![[0.0, 1.0]]).unwrap();
        params.insert("gnn.cls.w", array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        params.insert("gnn.cls.b", array![[0.0, 0.0]]).unwrap();
        let model = TargetModel::from_params(tiny_shape(1), params).unwrap();
        let p = model.predict(&path2(), Some(1)).unwrap();
        // node 0: [1,0] + [0*0.5, 2*-1] + [0,1] = [1,-1] -> relu [1,0]
        // node 1: [0,2] + [0.5, 0] + [0,1] = [0.5,3]
        assert_eq!(p.node_embeddings, array![[1.0, 0.0], [0.5, 3.0]]);
        assert_eq!(p.graph_embedding, vec![0.75, 1.5]);
        let z = (-0.75f64).exp();
        let expected1 = 1.0 / (1.0 + z);
        assert_abs_diff_eq!(p.class_probs[1], expected1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.class_probs[0], 1.0 - expected1, epsilon = 1e-12);
        assert_eq!(p.label, 1);
        assert_abs_diff_eq!(p.loss, -expected1.ln(), epsilon = 1e-12);
    }

    #[test]
    fn empty_graph_is_uniform() {
        let model = TargetModel::init(tiny_shape(3), 0).unwrap();
        let p = model.predict(&Graph::empty(2, 0), None).unwrap();
        assert_eq!(p.class_probs, vec![0.5, 0.5]);
        assert_eq!(p.label, 0);
        assert!(p.graph_embedding.iter().all(|&x| x == 0.0));
        assert_eq!(p.node_embeddings.nrows(), 0);
    }

    #[test]
    fn permutation_invariant_and_deterministic() {
        let ds = generate(&GenConfig {
            num_graphs: 5,
            ..GenConfig::default()
        })
        .unwrap();
        let shape = TargetShape {
            feature_dim: 6,
            hidden: 8,
            layers: 3,
            class_count: 3,
        };
        let model = TargetModel::init(shape, 4).unwrap();
        for g in &ds.graphs {
            let n = g.node_count();
            let perm: Vec<usize> = (0..n).rev().collect();
            let a = model.predict(g, None).unwrap();
            let b = model.predict(&g.permuted(&perm).unwrap(), None).unwrap();
            for (x, y) in a.class_probs.iter().zip(&b.class_probs) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
            assert_eq!(a, model.predict(g, None).unwrap());
            assert_abs_diff_eq!(a.class_probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn batched_forward_agrees_with_single_graph_forward() {
        let ds = generate(&GenConfig {
            num_graphs: 4,
            ..GenConfig::default()
        })
        .unwrap();
        let shape = TargetShape {
            feature_dim: 6,
            hidden: 5,
            layers: 2,
            class_count: 3,
        };
        let model = TargetModel::init(shape, 1).unwrap();
        let refs: Vec<&Graph> = ds.graphs.iter().collect();
        let mut tape = Tape::new();
        let logits = model.forward_batch(&mut tape, &refs).unwrap();
        for (k, g) in refs.iter().enumerate() {
            let (_, single) = model.forward(g);
            for c in 0..3 {
                assert_abs_diff_eq!(tape.value(logits)[[k, c]], single[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_epochs_return_the_initial_model() {
        let ds = generate(&GenConfig {
            num_graphs: 10,
            ..GenConfig::default()
        })
        .unwrap();
        let refs: Vec<&Graph> = ds.graphs.iter().collect();
        let cfg = TargetConfig {
            epochs: 0,
            ..TargetConfig::default()
        };
        let (model, log) = train_target(&refs, 3, &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(model, TargetModel::init(model.shape(), cfg.seed).unwrap());
    }

    #[test]
    fn single_class_reaches_full_accuracy() {
        let ds = generate(&GenConfig {
            num_graphs: 40,
            motif_set: vec![crate::datagen::Motif::Pentagon],
            ..GenConfig::default()
        })
        .unwrap();
        let refs: Vec<&Graph> = ds.graphs.iter().collect();
        let cfg = TargetConfig {
            epochs: 3,
            ..TargetConfig::default()
        };
        let (model, log) = train_target(&refs, 1, &cfg).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(model.accuracy(&refs).unwrap(), 1.0);
    }

    #[test]
    fn small_motif_run_learns_and_round_trips() {
        let ds = generate(&GenConfig {
            num_graphs: 300,
            seed: 2,
            ..GenConfig::default()
        })
        .unwrap();
        let refs: Vec<&Graph> = ds.graphs.iter().collect();
        let cfg = TargetConfig {
            epochs: 10,
            ..TargetConfig::default()
        };
        let (model, log) = train_target(&refs, 3, &cfg).unwrap();
        assert!(log.last().unwrap().accuracy >= 0.9, "{log:?}");
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = TargetModel::load(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.fingerprint(), model.fingerprint());
        let log_path = dir.path().join("log.csv");
        write_train_log(&log, &log_path).unwrap();
        let text = std::fs::read_to_string(log_path).unwrap();
        assert!(text.starts_with("epoch,loss,accuracy\n"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(TargetModel::load(&dir.path().join("nope")), Err(Error::Missing(_))));
    }
}
