//! Synthetic motif graphs with planted ground truth and environments.
//!
//! Each graph is a connected base graph plus one motif joined by a single
//! bridge edge. The label is the motif; the environment is the base family,
//! which is also written into the environment feature dimensions.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    BaseFamily, Dataset, EnvMeta, Graph, GroundTruth, ShiftDescriptor, ShiftDomain, ShiftKind, SplitAssignment,
    SplitTag,
};

pub const MOTIF_NODES: usize = 5;
pub const SIZE_BUCKETS: usize = 5;
pub const NODE_TYPE_BASE: usize = 0;
pub const NODE_TYPE_MOTIF: usize = 1;
const CLASS_NOISE: f64 = 0.1;
const ENV_NOISE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// Square with a roof: 5 nodes, 6 edges.
    House,
    /// 5-cycle.
    Pentagon,
    /// 4-cycle with a one-node tail.
    Candy,
}

impl Motif {
    pub const ALL: [Motif; 3] = [Motif::House, Motif::Pentagon, Motif::Candy];

    pub fn edges(self) -> &'static [(usize, usize)] {
        match self {
            Motif::House => &[(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)],
            Motif::Pentagon => &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
            Motif::Candy => &[(0, 1), (1, 2), (2, 3), (0, 3), (3, 4)],
        }
    }

    fn role(self) -> usize {
        1 + Motif::ALL.iter().position(|&m| m == self).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub num_graphs: usize,
    /// Order matters: it fixes environment ids and the covariate split.
    pub base_families: Vec<BaseFamily>,
    pub base_size_range: (usize, usize),
    pub motif_set: Vec<Motif>,
    pub feature_dim: usize,
    pub env_dims: Vec<usize>,
    /// Probability that the base family is the one paired with the label.
    pub concept_corr: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_graphs: 2000,
            base_families: BaseFamily::ALL.to_vec(),
            base_size_range: (8, 20),
            motif_set: Motif::ALL.to_vec(),
            feature_dim: 6,
            env_dims: vec![4, 5],
            concept_corr: 0.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_graphs == 0 {
            return Err(Error::config("num_graphs", "must be at least 1"));
        }
        if self.base_families.is_empty() {
            return Err(Error::config("base_families", "must not be empty"));
        }
        let mut fams = self.base_families.clone();
        fams.sort();
        fams.dedup();
        if fams.len() != self.base_families.len() {
            return Err(Error::config("base_families", "duplicate family"));
        }
        if self.motif_set.is_empty() {
            return Err(Error::config("motif_set", "must not be empty"));
        }
        let mut motifs = self.motif_set.clone();
        motifs.sort_by_key(|m| m.role());
        motifs.dedup();
        if motifs.len() != self.motif_set.len() {
            return Err(Error::config("motif_set", "duplicate motif"));
        }
        let (lo, hi) = self.base_size_range;
        if lo < MOTIF_NODES || lo > hi {
            return Err(Error::config(
                "base_size_range",
                format!("need {MOTIF_NODES} <= min <= max, got ({lo}, {hi})"),
            ));
        }
        if !(0.0..=1.0).contains(&self.concept_corr) {
            return Err(Error::config("concept_corr", "must lie in [0, 1]"));
        }
        let mut dims = self.env_dims.clone();
        dims.sort_unstable();
        dims.dedup();
        if dims.len() != self.env_dims.len() || dims.iter().any(|&d| d >= self.feature_dim) {
            return Err(Error::config("env_dims", "must be distinct indices below feature_dim"));
        }
        if self.env_dims.len() >= self.feature_dim {
            return Err(Error::config("env_dims", "at least one class-informative dimension is required"));
        }
        Ok(())
    }

    fn class_dims(&self) -> Vec<usize> {
        (0..self.feature_dim).filter(|d| !self.env_dims.contains(d)).collect()
    }

    pub fn size_bucket(&self, base_size: usize) -> usize {
        let (lo, hi) = self.base_size_range;
        ((base_size - lo) * SIZE_BUCKETS) / (hi - lo + 1)
    }
}

fn base_edges(family: BaseFamily, n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    match family {
        BaseFamily::Path => (0..n - 1).map(|i| (i, i + 1)).collect(),
        BaseFamily::Cycle => {
            let mut e: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            e.push((0, n - 1));
            e
        }
        BaseFamily::Tree => (1..n).map(|i| (rng.random_range(0..i), i)).collect(),
        BaseFamily::Wheel => {
            let mut e: Vec<_> = (1..n).map(|i| (0, i)).collect();
            e.extend((1..n - 1).map(|i| (i, i + 1)));
            e.push((1, n - 1));
            e
        }
        BaseFamily::BarabasiAlbert => {
            let mut e = vec![(0, 1), (1, 2), (0, 2)];
            let mut ends = vec![0, 1, 1, 2, 0, 2];
            for v in 3..n {
                let first = ends[rng.random_range(0..ends.len())];
                let mut second = first;
                while second == first {
                    second = ends[rng.random_range(0..ends.len())];
                }
                for t in [first, second] {
                    e.push((t, v));
                    ends.push(t);
                    ends.push(v);
                }
            }
            e
        }
    }
}

/// Generates `cfg.num_graphs` graphs deterministically from `cfg.seed`.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let class_dims = cfg.class_dims();
    let families = cfg.base_families.len();
    let mut graphs = Vec::with_capacity(cfg.num_graphs);
    for _ in 0..cfg.num_graphs {
        let label = rng.random_range(0..cfg.motif_set.len());
        let motif = cfg.motif_set[label];
        let env_id = if rng.random::<f64>() < cfg.concept_corr {
            label % families
        } else {
            rng.random_range(0..families)
        };
        let family = cfg.base_families[env_id];
        let base_size = rng.random_range(cfg.base_size_range.0..=cfg.base_size_range.1);

        let mut edges = base_edges(family, base_size, &mut rng);
        let base_edge_count = edges.len();
        edges.extend(motif.edges().iter().map(|&(a, b)| (base_size + a, base_size + b)));
        let motif_edge_count = motif.edges().len();
        let anchor = rng.random_range(0..base_size);
        let attach = base_size + rng.random_range(0..MOTIF_NODES);
        edges.push((anchor, attach));

        let n = base_size + MOTIF_NODES;
        let mut x = Array2::zeros((n, cfg.feature_dim));
        let mut types = vec![NODE_TYPE_BASE; n];
        for i in 0..n {
            let role = if i < base_size { 0 } else { motif.role() };
            if i >= base_size {
                types[i] = NODE_TYPE_MOTIF;
            }
            let slot = class_dims[role % class_dims.len()];
            for &d in &class_dims {
                let noise: f64 = rng.sample(StandardNormal);
                x[[i, d]] = f64::from(u8::from(d == slot)) + CLASS_NOISE * noise;
            }
            for &d in &cfg.env_dims {
                let noise: f64 = rng.sample(StandardNormal);
                x[[i, d]] = env_id as f64 + ENV_NOISE * noise;
            }
        }
        let gt = GroundTruth {
            nodes: (0..n).map(|i| i >= base_size).collect(),
            edges: (0..edges.len())
                .map(|k| k >= base_edge_count && k < base_edge_count + motif_edge_count)
                .collect(),
        };
        let meta = EnvMeta {
            family,
            env_id,
            base_size,
            size_bucket: cfg.size_bucket(base_size),
            env_dims: cfg.env_dims.clone(),
        };
        let g = Graph::new(n, edges, x, types, label)?
            .with_env_meta(Some(meta))
            .with_gt_motif(Some(gt))?;
        graphs.push(g);
    }
    Ok(Dataset::new(graphs))
}

/// Knobs for [`split`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub seed: u64,
    /// Fraction of training-domain graphs held out as in-distribution test.
    pub id_test_fraction: f64,
    /// Concept shift: fraction of the dataset sent to test.
    pub test_fraction: f64,
    /// Concept shift: fraction of train graphs whose environment is the one
    /// paired with their label. Test uses `1 - train_corr`.
    pub train_corr: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            id_test_fraction: 0.15,
            test_fraction: 0.2,
            train_corr: 0.9,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("id_test_fraction", self.id_test_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.train_corr > 0.0 && self.train_corr <= 1.0) {
            return Err(Error::config("train_corr", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn domain_of(g: &Graph, domain: ShiftDomain) -> Result<usize> {
    let meta = g
        .env_meta()
        .ok_or_else(|| Error::config("dataset", "split needs env_meta on every graph"))?;
    Ok(match domain {
        ShiftDomain::Basis => meta.env_id,
        ShiftDomain::Size => meta.size_bucket,
    })
}

/// Assigns train / id-test / val / test tags for the requested shift.
///
/// * covariate: domain values (base family ids or size buckets) are sorted;
///   the last goes to test, the one before to val, the rest to train, which
///   is the 3:1:1 environment ratio for five domains.
/// * concept: a graph is *aligned* when its domain value equals
///   `label mod D` (D = number of domain values). Train is drawn with
///   `train_corr` aligned graphs, test with `1 - train_corr`, val takes the
///   remainder.
pub fn split(ds: &Dataset, kind: ShiftKind, domain: ShiftDomain, cfg: &SplitConfig) -> Result<Dataset> {
    cfg.validate()?;
    let values = ds
        .graphs
        .iter()
        .map(|g| domain_of(g, domain))
        .collect::<Result<Vec<_>>>()?;
    let mut distinct = values.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tags = vec![SplitTag::Val; ds.len()];
    let mut train_pool = Vec::new();

    match kind {
        ShiftKind::Covariate => {
            if distinct.len() < 3 {
                return Err(Error::config(
                    "base_families",
                    format!("covariate split needs >= 3 domains, found {}", distinct.len()),
                ));
            }
            let test_value = distinct[distinct.len() - 1];
            let val_value = distinct[distinct.len() - 2];
            for (i, &v) in values.iter().enumerate() {
                if v == test_value {
                    tags[i] = SplitTag::Test;
                } else if v == val_value {
                    tags[i] = SplitTag::Val;
                } else {
                    train_pool.push(i);
                }
            }
            hold_out(&mut train_pool, &mut tags, cfg.id_test_fraction, &mut rng);
        }
        ShiftKind::Concept => {
            if distinct.len() < 2 {
                return Err(Error::config(
                    "base_families",
                    format!("concept split needs >= 2 domains, found {}", distinct.len()),
                ));
            }
            let d = distinct.last().unwrap() + 1;
            let (mut aligned, mut unaligned): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| values[i] == ds.graphs[i].label() % d);
            aligned.shuffle(&mut rng);
            unaligned.shuffle(&mut rng);

            let test_size = (cfg.test_fraction * ds.len() as f64).round() as usize;
            let a_test = (((1.0 - cfg.train_corr) * test_size as f64).round() as usize).min(aligned.len());
            let u_test = (test_size - a_test).min(unaligned.len());
            for &i in aligned[..a_test].iter().chain(&unaligned[..u_test]) {
                tags[i] = SplitTag::Test;
            }
            let a_rest = &aligned[a_test..];
            let u_rest = &unaligned[u_test..];
            let u_train = ((a_rest.len() as f64 * (1.0 - cfg.train_corr) / cfg.train_corr).floor() as usize)
                .min(u_rest.len());
            let mut a_pool = a_rest.to_vec();
            let mut u_pool = u_rest[..u_train].to_vec();
            for &i in a_pool.iter().chain(&u_pool) {
                tags[i] = SplitTag::Train;
            }
            hold_out(&mut a_pool, &mut tags, cfg.id_test_fraction, &mut rng);
            hold_out(&mut u_pool, &mut tags, cfg.id_test_fraction, &mut rng);
            train_pool = a_pool;
            train_pool.extend(u_pool);
        }
    }
    for &i in &train_pool {
        tags[i] = SplitTag::Train;
    }
    if train_pool.is_empty() {
        return Err(Error::config("dataset", "split produced an empty train partition"));
    }
    Dataset::with_split(
        ds.graphs.clone(),
        SplitAssignment {
            tags,
            shift: ShiftDescriptor { kind, domain },
        },
    )
}

/// Moves a seeded `fraction` of `pool` to the in-distribution test split.
fn hold_out(pool: &mut Vec<usize>, tags: &mut [SplitTag], fraction: f64, rng: &mut impl Rng) {
    pool.shuffle(rng);
    let k = (fraction * pool.len() as f64).round() as usize;
    for &i in &pool[..k] {
        tags[i] = SplitTag::IdTest;
    }
    pool.drain(..k);
    pool.sort_unstable();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mutual_information;

    fn connected(g: &Graph) -> bool {
        let adj = g.adjacency();
        let mut seen = vec![false; g.node_count()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn single_graph_has_motif_sized_ground_truth() {
        let cfg = GenConfig {
            num_graphs: 1,
            base_families: vec![BaseFamily::Tree],
            motif_set: vec![Motif::House],
            ..GenConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.len(), 1);
        let gt = ds.graphs[0].gt_motif().unwrap();
        assert_eq!(gt.nodes.iter().filter(|&&b| b).count(), MOTIF_NODES);
        assert_eq!(gt.edges.iter().filter(|&&b| b).count(), Motif::House.edges().len());
    }

    #[test]
    fn every_graph_is_connected_and_ground_truth_is_motif_internal() {
        let ds = generate(&GenConfig {
            num_graphs: 300,
            seed: 5,
            ..GenConfig::default()
        })
        .unwrap();
        for g in &ds.graphs {
            assert!(connected(g));
            let gt = g.gt_motif().unwrap();
            let base = g.env_meta().unwrap().base_size;
            let motif = GenConfig::default().motif_set[g.label()];
            let selected: Vec<_> = g
                .edges()
                .iter()
                .zip(&gt.edges)
                .filter(|(_, &s)| s)
                .map(|(&e, _)| e)
                .collect();
            let expected: Vec<_> = motif.edges().iter().map(|&(a, b)| (a + base, b + base)).collect();
            assert_eq!(selected, expected);
            // the bridge has exactly one motif endpoint and is not ground truth
            let (k, _) = g
                .edges()
                .iter()
                .enumerate()
                .find(|(_, &(a, b))| (a < base) != (b < base))
                .unwrap();
            assert!(!gt.edges[k]);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = GenConfig {
            num_graphs: 50,
            seed: 9,
            ..GenConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn zero_concept_correlation_is_independent() {
        let ds = generate(&GenConfig {
            num_graphs: 2000,
            seed: 1,
            ..GenConfig::default()
        })
        .unwrap();
        let pairs: Vec<(usize, usize)> = ds
            .graphs
            .iter()
            .map(|g| (g.label(), g.env_meta().unwrap().env_id))
            .collect();
        let mi = mutual_information(&pairs);
        assert!(mi < 0.02, "mutual information {mi}");
    }

    #[test]
    fn full_concept_correlation_is_deterministic() {
        let ds = generate(&GenConfig {
            num_graphs: 300,
            concept_corr: 1.0,
            ..GenConfig::default()
        })
        .unwrap();
        for g in &ds.graphs {
            assert_eq!(g.env_meta().unwrap().env_id, g.label() % 5);
        }
    }

    #[test]
    fn config_errors() {
        let bad_size = GenConfig {
            base_size_range: (3, 10),
            ..GenConfig::default()
        };
        assert!(matches!(generate(&bad_size), Err(Error::Config { .. })));
        let bad_dims = GenConfig {
            env_dims: vec![6],
            ..GenConfig::default()
        };
        assert!(bad_dims.validate().is_err());
        let bad_corr = GenConfig {
            concept_corr: 1.5,
            ..GenConfig::default()
        };
        assert!(bad_corr.validate().is_err());
    }

    #[test]
    fn covariate_basis_split_separates_families() {
        let ds = generate(&GenConfig {
            num_graphs: 500,
            ..GenConfig::default()
        })
        .unwrap();
        let s = split(&ds, ShiftKind::Covariate, ShiftDomain::Basis, &SplitConfig::default()).unwrap();
        let fams = |tag| {
            let mut f: Vec<_> = s.subset(tag).iter().map(|g| g.env_meta().unwrap().env_id).collect();
            f.sort_unstable();
            f.dedup();
            f
        };
        assert_eq!(fams(SplitTag::Train), vec![0, 1, 2]);
        assert_eq!(fams(SplitTag::IdTest), vec![0, 1, 2]);
        assert_eq!(fams(SplitTag::Val), vec![3]);
        assert_eq!(fams(SplitTag::Test), vec![4]);
        assert_eq!(s.split.as_ref().unwrap().tags.len(), ds.len());
    }

    #[test]
    fn covariate_size_split_uses_buckets() {
        let ds = generate(&GenConfig {
            num_graphs: 400,
            ..GenConfig::default()
        })
        .unwrap();
        let s = split(&ds, ShiftKind::Covariate, ShiftDomain::Size, &SplitConfig::default()).unwrap();
        let max_train = s.subset(SplitTag::Train).iter().map(|g| g.env_meta().unwrap().size_bucket).max();
        let min_test = s.subset(SplitTag::Test).iter().map(|g| g.env_meta().unwrap().size_bucket).min();
        assert_eq!(max_train, Some(2));
        assert_eq!(min_test, Some(4));
    }

    #[test]
    fn one_family_covariate_is_an_error() {
        let ds = generate(&GenConfig {
            num_graphs: 30,
            base_families: vec![BaseFamily::Path],
            ..GenConfig::default()
        })
        .unwrap();
        let err = split(&ds, ShiftKind::Covariate, ShiftDomain::Basis, &SplitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn concept_split_correlations() {
        let ds = generate(&GenConfig {
            num_graphs: 2000,
            concept_corr: 0.5,
            seed: 3,
            ..GenConfig::default()
        })
        .unwrap();
        let s = split(&ds, ShiftKind::Concept, ShiftDomain::Basis, &SplitConfig::default()).unwrap();
        let corr = |tag| {
            let gs = s.subset(tag);
            let aligned = gs
                .iter()
                .filter(|g| g.env_meta().unwrap().env_id == g.label() % 5)
                .count();
            aligned as f64 / gs.len() as f64
        };
        assert!(corr(SplitTag::Train) >= 0.85, "train {}", corr(SplitTag::Train));
        assert!(corr(SplitTag::Test) <= 0.15, "test {}", corr(SplitTag::Test));
        assert!(s.subset(SplitTag::Train).len() > 800);
    }
}
