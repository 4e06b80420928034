//! Histogram Jensen-Shannon divergence and environment-dimension selection.

use std::collections::BTreeMap;

use crate::graph::Graph;

pub const BINS: usize = 16;

/// Per-dimension `(min, max)` over every node of `graphs`.
pub fn feature_ranges(graphs: &[&Graph], dim: usize) -> Vec<(f64, f64)> {
    let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
    for g in graphs {
        for row in g.features().rows() {
            for (d, &x) in row.iter().enumerate() {
                r[d].0 = r[d].0.min(x);
                r[d].1 = r[d].1.max(x);
            }
        }
    }
    r
}

/// Normalized `BINS`-bin histogram over `[lo, hi]`; `None` for no data.
pub fn histogram(values: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    if values.is_empty() {
        return None;
    }
    let mut h = vec![0.0; BINS];
    let width = hi - lo;
    for &x in values {
        let b = if width > 0.0 {
            (((x - lo) / width) * BINS as f64).floor().clamp(0.0, (BINS - 1) as f64) as usize
        } else {
            0
        };
        h[b] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    Some(h)
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            js += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            js += 0.5 * b * (b / m).log2();
        }
    }
    js.max(0.0)
}

/// Mean pairwise JS divergence of dimension `d` across node groups.
/// Constant dimensions and fewer than two groups give 0.
pub fn mean_pairwise_js(groups: &[Vec<f64>], range: (f64, f64)) -> f64 {
    if range.1 - range.0 <= 0.0 {
        return 0.0;
    }
    let hists: Vec<Vec<f64>> = groups
        .iter()
        .filter_map(|g| histogram(g, range.0, range.1))
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            total += js_divergence(&hists[i], &hists[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Per-dimension node values grouped by `key(graph index, node)`.
pub(crate) fn grouped_columns<K: Ord>(
    graphs: &[&Graph],
    dim: usize,
    mut key: impl FnMut(usize, usize) -> Option<K>,
) -> Vec<Vec<Vec<f64>>> {
    let mut groups: BTreeMap<K, Vec<Vec<f64>>> = BTreeMap::new();
    for (gi, g) in graphs.iter().enumerate() {
        for (v, row) in g.features().rows().into_iter().enumerate() {
            let Some(k) = key(gi, v) else { continue };
            let cols = groups.entry(k).or_insert_with(|| vec![Vec::new(); dim]);
            for (d, &x) in row.iter().enumerate() {
                cols[d].push(x);
            }
        }
    }
    // transpose to dim -> groups
    let mut out = vec![Vec::new(); dim];
    for cols in groups.into_values() {
        for (d, c) in cols.into_iter().enumerate() {
            out[d].push(c);
        }
    }
    out
}

/// Mean cross-group JS per dimension, grouping nodes by `(node type, label)`.
pub fn label_type_js(graphs: &[&Graph], ranges: &[(f64, f64)]) -> Vec<f64> {
    let dim = ranges.len();
    let cols = grouped_columns(graphs, dim, |gi, v| Some((graphs[gi].node_types()[v], graphs[gi].label())));
    cols.iter().zip(ranges).map(|(groups, &r)| mean_pairwise_js(groups, r)).collect()
}

/// Mean over environments of the cross-type JS per dimension, computed
/// within each feature environment. Environments holding a single node type
/// carry no information and are skipped; `None` when every one is skipped.
pub fn within_env_type_js(graphs: &[&Graph], envs: &[usize], ranges: &[(f64, f64)]) -> Option<Vec<f64>> {
    let dim = ranges.len();
    let mut env_ids: Vec<usize> = envs.to_vec();
    env_ids.sort_unstable();
    env_ids.dedup();
    let mut sum = vec![0.0; dim];
    let mut used = 0usize;
    for e in env_ids {
        let cols = grouped_columns(graphs, dim, |gi, v| (envs[gi] == e).then(|| graphs[gi].node_types()[v]));
        if cols.first().is_none_or(|groups| groups.len() < 2) {
            continue;
        }
        for (d, groups) in cols.iter().enumerate() {
            sum[d] += mean_pairwise_js(groups, ranges[d]);
        }
        used += 1;
    }
    (used > 0).then(|| sum.into_iter().map(|s| s / used as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn js_bounds() {
        let p = vec![0.5, 0.5, 0.0];
        assert_eq!(js_divergence(&p, &p), 0.0);
        assert_abs_diff_eq!(js_divergence(&[1.0, 0.0], &[0.0, 1.0]), 1.0, epsilon = 1e-12);
        // hand value: p=(1,0), q=(0.5,0.5): m=(0.75,0.25)
        let expected = 0.5 * (1.0f64 / 0.75).log2() + 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2());
        assert_abs_diff_eq!(js_divergence(&[1.0, 0.0], &[0.5, 0.5]), expected, epsilon = 1e-12);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 1.0, 0.5], 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(h[0], 1.0 / 3.0);
        assert_abs_diff_eq!(h[BINS - 1], 1.0 / 3.0);
        assert_abs_diff_eq!(h[BINS / 2], 1.0 / 3.0);
        assert!(histogram(&[], 0.0, 1.0).is_none());
    }

    #[test]
    fn identical_groups_and_constant_dims() {
        let g = vec![vec![0.1, 0.4, 0.9], vec![0.1, 0.4, 0.9]];
        assert_eq!(mean_pairwise_js(&g, (0.0, 1.0)), 0.0);
        assert_eq!(mean_pairwise_js(&[vec![2.0], vec![2.0]], (2.0, 2.0)), 0.0);
    }

    #[test]
    fn one_hot_of_label_is_near_one() {
        // three labels, value = 1 for the group's own slot
        let groups = vec![vec![1.0; 20], vec![0.0; 20], vec![0.0; 20]];
        // pairs (0,1),(0,2) give 1, (1,2) gives 0
        assert_abs_diff_eq!(mean_pairwise_js(&groups, (0.0, 1.0)), 2.0 / 3.0, epsilon = 1e-12);
        let two = vec![vec![1.0; 20], vec![0.0; 20]];
        assert_abs_diff_eq!(mean_pairwise_js(&two, (0.0, 1.0)), 1.0, epsilon = 1e-12);
    }
}
