use rand::Rng;

use crate::shape::ShapeVector;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations; returns hard labels and
/// the final within-cluster sum of squares.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(shapes: &[ShapeVector], k: usize, rng: &mut R, max_iters: usize) -> (Vec<usize>, f64) {
    let n = shapes.len();
    let dim = shapes[0].dim();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(shapes[rng.random_range(0..n)].coords().to_vec());
    let mut nearest: Vec<f64> = shapes.iter().map(|s| sq_dist(s.coords(), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = shapes[next].coords().to_vec();
        for (d, s) in nearest.iter_mut().zip(shapes) {
            *d = d.min(sq_dist(s.coords(), &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, s) in shapes.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = sq_dist(s.coords(), c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (s, &l) in shapes.iter().zip(&labels) {
            counts[l] += 1;
            for (a, c) in sums[l].iter_mut().zip(s.coords()) {
                *a += c;
            }
        }
        for j in 0..k {
            // Empty clusters keep their previous center.
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|v| v / counts[j] as f64).collect();
            }
        }
    }
    let inertia = shapes.iter().zip(&labels).map(|(s, &l)| sq_dist(s.coords(), &centers[l])).sum();
    (labels, inertia)
}
