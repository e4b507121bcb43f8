use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PermeabilityField;
use crate::error::{invalid, Result};

const MAX_LLOYD_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding. Points already chosen have zero weight; if every
/// remaining weight is zero (duplicates) an unchosen point is drawn uniformly.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().zip(&chosen).filter(|(_, c)| !**c).map(|(d, _)| d).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in 0..n {
                if chosen[i] || d2[i] <= 0.0 {
                    continue;
                }
                pick = Some(i);
                target -= d2[i];
                if target <= 0.0 {
                    break;
                }
            }
            pick.expect("positive total weight has a candidate")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen[*i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(&points[i], &points[pick]));
        }
    }
    centers
}

/// Lloyd k-means over feature vectors; returns the cluster index of every point.
pub(crate) fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dim = points[0].len();
    let mut centers = seed_centers(points, k, rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centre
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centers[c] = sums[c].iter().map(|s| s * inv).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Clusters realizations by their flattened log-permeability vectors and
/// returns one uniformly drawn member index per non-empty cluster, in cluster
/// order.
pub fn cluster_realizations(
    fields: &[PermeabilityField],
    n_clusters: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if fields.is_empty() {
        return Err(invalid("cannot cluster an empty set of realizations"));
    }
    if n_clusters == 0 || n_clusters > fields.len() {
        return Err(invalid(format!(
            "cluster count must lie in 1..={}, got {n_clusters}",
            fields.len()
        )));
    }
    let dim = fields[0].len();
    if fields.iter().any(|f| f.len() != dim) {
        return Err(invalid("realizations have different cell counts"));
    }
    let points: Vec<Vec<f64>> = fields.iter().map(|f| f.log_values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = kmeans(&points, n_clusters, &mut rng);
    let mut reps = Vec::with_capacity(n_clusters);
    for c in 0..n_clusters {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if !members.is_empty() {
            reps.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(reps)
}
