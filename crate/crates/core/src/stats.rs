//! Small statistics helpers used for ground-truth comparisons.

use std::collections::HashMap;
use std::hash::Hash;

/// Adjusted Rand index between two labelings of the same items.
///
/// Returns 1.0 when both labelings put every item in a single cluster (or
/// are otherwise identical partitions with zero expected index variance).
pub fn adjusted_rand_index<A: Eq + Hash + Copy, B: Eq + Hash + Copy>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table: HashMap<(A, B), u64> = HashMap::new();
    let mut rows: HashMap<A, u64> = HashMap::new();
    let mut cols: HashMap<B, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let c2 = |k: u64| (k * k.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&k| c2(k)).sum();
    let sum_rows: f64 = rows.values().map(|&k| c2(k)).sum();
    let sum_cols: f64 = cols.values().map(|&k| c2(k)).sum();
    let total = c2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < f64::EPSILON {
        return if (index - expected).abs() < f64::EPSILON { 1.0 } else { 0.0 };
    }
    (index - expected) / (max_index - expected)
}

/// Plug-in mutual information (nats) of paired discrete observations.
pub fn mutual_information<A: Eq + Hash + Copy, B: Eq + Hash + Copy>(pairs: &[(A, B)]) -> f64 {
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let mut joint: HashMap<(A, B), f64> = HashMap::new();
    let mut pa: HashMap<A, f64> = HashMap::new();
    let mut pb: HashMap<B, f64> = HashMap::new();
    for &(x, y) in pairs {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c / n;
            pxy * (pxy / ((pa[&x] / n) * (pb[&y] / n))).ln()
        })
        .sum()
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_is_one_for_relabeled_partitions() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [5, 5, 3, 3, 9, 9];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_known_value() {
        // Worked example: contingency [[1,1,0],[1,0,1]]... computed by hand:
        // a = [0,0,0,1,1,1], b = [0,0,1,1,2,2]
        // index = C(2,2)+C(1,2)+C(1,2)+C(2,2) = 2, rows = 3+3 = 6, cols = 1+1+1 = 3
        // expected = 6*3/15 = 1.2, max = 4.5 → (2-1.2)/(4.5-1.2) = 0.2424...
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &b) - 0.8 / 3.3).abs() < 1e-12);
    }

    #[test]
    fn mi_of_independent_and_identical() {
        let pairs: Vec<(u8, u8)> = (0..4).flat_map(|x| (0..4).map(move |y| (x, y))).collect();
        assert!(mutual_information(&pairs).abs() < 1e-12);
        let same: Vec<(u8, u8)> = (0..4).map(|x| (x, x)).collect();
        assert!((mutual_information(&same) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
