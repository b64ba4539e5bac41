//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the seeded centroids.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // every point already coincides with a centroid
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(squared_distance(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Clusters `points` into `k` groups. Stops when assignments stop changing
/// or after `max_iters` Lloyd iterations. An empty cluster keeps its previous
/// centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= k <= n, got k = {k}, n = {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument(
            "k-means points must be finite and share one dimension".into(),
        ));
    }
    let mut rng = rng_for(seed, "kmeans");
    let mut centroids = seed_plus_plus(points, k, &mut rng);

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut inertia = 0.0;
        let a = points
            .iter()
            .map(|p| {
                let (i, d) = nearest(p, centroids);
                inertia += d;
                i
            })
            .collect();
        (a, inertia)
    };

    let (mut assignments, mut inertia) = assign(&centroids);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
        let (next, next_inertia) = assign(&centroids);
        debug_assert!(
            next_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "k-means inertia increased: {inertia} -> {next_inertia}"
        );
        trace.push(next_inertia);
        inertia = next_inertia;
        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        inertia,
        inertia_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_singletons() {
        let pts = vec![vec![0.0], vec![10.0]];
        let km = kmeans(&pts, 2, 3, 100).unwrap();
        let mut cs: Vec<f64> = km.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert_eq!(cs, [0.0, 10.0]);
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let km = kmeans(&pts, 1, 0, 100).unwrap();
        assert!((km.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_k() {
        let pts = vec![vec![0.0]];
        assert!(kmeans(&pts, 0, 0, 10).is_err());
        assert!(kmeans(&pts, 2, 0, 10).is_err());
    }

    #[test]
    fn identical_points() {
        let pts = vec![vec![1.0, 1.0]; 4];
        let km = kmeans(&pts, 3, 0, 10).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert_eq!(km.assignments, [0, 0, 0, 0]);
    }
}
