//! Seeded k-means++ with Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const TOLERANCE: f64 = 1e-4;
pub const MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// `k × dim`.
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step; the last entry matches
    /// `assignments`.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `centers`; ties go to the lowest index.
pub fn nearest(centers: &Matrix, point: ndarray::ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(c, point);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign(points: &Matrix, centers: &Matrix) -> (Vec<usize>, Vec<f64>) {
    points.rows().into_iter().map(|p| nearest(centers, p)).unzip()
}

fn init_plus_plus(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.nrows();
    let mut centers = Matrix::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            0
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centers
}

/// Clusters the rows of `points` into `k` groups.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    let n = points.nrows();
    if n < k {
        return Err(Error::config("k", format!("{k} clusters requested for {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = init_plus_plus(points, k, &mut rng);
    let mut inertia = Vec::new();
    let (mut labels, mut dists) = assign(points, &centers);
    inertia.push(dists.iter().sum());
    for _ in 0..MAX_ITER {
        let mut sums = Matrix::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (p, &l) in points.rows().into_iter().zip(&labels) {
            let mut row = sums.row_mut(l);
            row += &p;
            counts[l] += 1;
        }
        let mut next = centers.clone();
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .unwrap_or(0);
                taken[far] = true;
                next.row_mut(c).assign(&points.row(far));
            }
        }
        let shift = centers
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        (labels, dists) = assign(points, &centers);
        inertia.push(dists.iter().sum());
        if shift < TOLERANCE {
            break;
        }
    }
    Ok(KMeans {
        centers,
        assignments: labels,
        inertia,
    })
}

/// Best of `restarts` seeded runs by final inertia; ties keep the earlier run.
pub fn kmeans_restarts(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    let mut best = kmeans(points, k, seed)?;
    for r in 1..restarts as u64 {
        let run = kmeans(points, k, seed.wrapping_add(r.wrapping_mul(0x9E37_79B9)))?;
        if run.final_inertia() < best.final_inertia() {
            best = run;
        }
    }
    Ok(best)
}

impl KMeans {
    pub fn final_inertia(&self) -> f64 {
        self.inertia.last().copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::adjusted_rand_index;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand_distr::StandardNormal;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = array![[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]];
        let km = kmeans(&pts, 1, 0).unwrap();
        assert_abs_diff_eq!(km.centers[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(km.centers[[0, 1]], 1.0, epsilon = 1e-12);
        assert_eq!(km.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn one_center_per_point() {
        let pts = array![[0.0], [5.0], [9.0], [20.0]];
        let km = kmeans(&pts, 4, 3).unwrap();
        assert_eq!(*km.inertia.last().unwrap(), 0.0);
        let mut a = km.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn identical_points_share_one_cluster() {
        let pts = Array2::from_elem((6, 2), 1.5);
        let km = kmeans(&pts, 3, 1).unwrap();
        assert!(km.assignments.iter().all(|&a| a == km.assignments[0]));
    }

    #[test]
    fn separated_blobs_recovered_and_inertia_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let pts = Array2::from_shape_fn((60, 2), |(i, _)| {
            let noise: f64 = rng.sample(StandardNormal);
            10.0 * truth[i] as f64 + 0.5 * noise
        });
        let km = kmeans(&pts, 2, 11).unwrap();
        assert_eq!(adjusted_rand_index(&km.assignments, &truth), 1.0);
        // brute force: each point is nearest to its own center
        for (p, &l) in pts.rows().into_iter().zip(&km.assignments) {
            assert_eq!(nearest(&km.centers, p).0, l);
        }
        assert!(km.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn invalid_k() {
        let pts = array![[0.0]];
        assert!(matches!(kmeans(&pts, 0, 0), Err(Error::Config { .. })));
        assert!(kmeans(&pts, 2, 0).is_err());
    }

    #[test]
    fn ties_go_to_the_lowest_center() {
        let centers = array![[0.0], [2.0]];
        assert_eq!(nearest(&centers, array![1.0].view()).0, 0);
    }

    #[test]
    fn restarts_never_worsen_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = Array2::from_shape_fn((60, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let single = kmeans(&pts, 4, 3).unwrap();
        let best = kmeans_restarts(&pts, 4, 3, 8).unwrap();
        assert!(best.final_inertia() <= single.final_inertia());
        assert_eq!(kmeans_restarts(&pts, 4, 3, 1).unwrap(), single);
    }
}
