//! High-dimensional EM for the subspace mixture.
//!
//! Everything happens in the raw `3M`-dimensional shape space. Covariance
//! eigenvectors are obtained from the `N × N` weighted Gram matrix whenever
//! there are fewer shapes than coordinates, so the `3M × 3M` covariance is
//! never formed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans_plus_plus;
use super::{log_sum_exp, MixtureComponent, ShapeMixture};
use crate::error::{Error, Result};
use crate::shape::ShapeDataset;

/// How the intrinsic dimension `d_k` is chosen at each M-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimPolicy {
    Fixed(usize),
    /// Smallest `d` whose leading eigenvalues explain at least this fraction
    /// of the component variance.
    VarianceFraction(f64),
}

impl Default for DimPolicy {
    fn default() -> Self {
        DimPolicy::VarianceFraction(0.95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub k: usize,
    pub dim_policy: DimPolicy,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { k: 3, dim_policy: DimPolicy::default(), seed: 0, max_iters: 100, tol: 1e-8, restarts: 5 }
    }
}

/// Result of [`fit_mixture`] for the best restart.
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub mixture: ShapeMixture,
    /// Dataset log-likelihood after every M-step.
    pub log_likelihood: Vec<f64>,
    /// `N × K` responsibilities from the final E-step.
    pub responsibilities: Vec<Vec<f64>>,
    /// Argmax of each row of `responsibilities`.
    pub labels: Vec<usize>,
    pub converged: bool,
    pub restart: usize,
    pub var_floor: f64,
}

const PI_FLOOR: f64 = 1e-6;

/// `1e-8 ×` the per-coordinate variance of the centered data.
///
/// Falls back to the uncentered second moment, then to 1, when the data has
/// no spread, so the floor stays strictly positive.
pub fn variance_floor(dataset: &ShapeDataset) -> f64 {
    let dim = dataset.ambient_dim() as f64;
    let mean = dataset.mean();
    let n = dataset.len() as f64;
    let centered: f64 = dataset.shapes().iter().map(|s| s.distance(&mean).powi(2)).sum::<f64>() / n / dim;
    let base = if centered > 0.0 {
        centered
    } else {
        let raw: f64 = dataset.shapes().iter().map(|s| s.coords().iter().map(|c| c * c).sum::<f64>()).sum::<f64>() / n / dim;
        if raw > 0.0 {
            raw
        } else {
            1.0
        }
    };
    1e-8 * base
}

/// Fit a `k`-component subspace mixture by EM with k-means++ restarts.
pub fn fit_mixture(dataset: &ShapeDataset, opts: &FitOptions) -> Result<MixtureFit> {
    let n = dataset.len();
    let k = opts.k;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Config(format!("{n} shapes cannot support {k} components")));
    }
    if let DimPolicy::VarianceFraction(t) = opts.dim_policy {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("variance fraction {t} outside (0, 1]")));
        }
    }
    if let DimPolicy::Fixed(0) = opts.dim_policy {
        return Err(Error::Config("fixed intrinsic dimension must be >= 1".into()));
    }
    let dim = dataset.ambient_dim();
    // Columns are shapes.
    let data = DMatrix::from_fn(dim, n, |r, c| dataset.shapes()[c].coords()[r]);
    let var_floor = variance_floor(dataset);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<MixtureFit> = None;
    let mut last_err = None;
    for restart in 0..opts.restarts.max(1) {
        let (labels, _) = kmeans_plus_plus(dataset.shapes(), k, &mut rng, 100);
        let resp: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
            .collect();
        match run_em(&data, resp, opts, var_floor) {
            Ok(mut fit) => {
                fit.restart = restart;
                let better = match &best {
                    None => true,
                    Some(b) => fit.log_likelihood.last() > b.log_likelihood.last(),
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(e @ Error::DegenerateComponent { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}

/// Run EM from a hard initial assignment instead of k-means++ restarts.
pub fn fit_mixture_from_labels(dataset: &ShapeDataset, labels: &[usize], opts: &FitOptions) -> Result<MixtureFit> {
    if labels.len() != dataset.len() || labels.iter().any(|&l| l >= opts.k) {
        return Err(Error::Config(format!("{} labels in 0..{} for {} shapes", labels.len(), opts.k, dataset.len())));
    }
    let dim = dataset.ambient_dim();
    let data = DMatrix::from_fn(dim, dataset.len(), |r, c| dataset.shapes()[c].coords()[r]);
    let resp = labels.iter().map(|&l| (0..opts.k).map(|j| if j == l { 1.0 } else { 0.0 }).collect()).collect();
    run_em(&data, resp, opts, variance_floor(dataset))
}

fn run_em(data: &DMatrix<f64>, mut resp: Vec<Vec<f64>>, opts: &FitOptions, var_floor: f64) -> Result<MixtureFit> {
    let k = opts.k;
    let mut dims: Vec<Option<usize>> = vec![None; k];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut mixture = None;
    for _ in 0..opts.max_iters.max(1) {
        let comps = (0..k)
            .into_par_iter()
            .map(|j| {
                let w: Vec<f64> = resp.iter().map(|r| r[j]).collect();
                m_step_component(j, data, &w, opts, dims[j], var_floor)
            })
            .collect::<Result<Vec<_>>>()?;
        dims = comps.iter().map(|c| Some(c.d())).collect();
        let mix = ShapeMixture::normalized(floor_proportions(comps))?;
        let (ll, new_resp) = e_step(&mix, data);
        resp = new_resp;
        let prev = trace.last().copied();
        trace.push(ll);
        mixture = Some(mix);
        if let Some(p) = prev {
            if (ll - p) / p.abs().max(f64::MIN_POSITIVE) < opts.tol {
                converged = true;
                break;
            }
        }
    }
    let labels = resp
        .iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok(MixtureFit {
        mixture: mixture.expect("at least one iteration"),
        log_likelihood: trace,
        responsibilities: resp,
        labels,
        converged,
        restart: 0,
        var_floor,
    })
}

fn floor_proportions(comps: Vec<MixtureComponent>) -> Vec<MixtureComponent> {
    comps
        .into_iter()
        .map(|c| {
            let pi = c.pi().max(PI_FLOOR);
            c.with_pi(pi)
        })
        .collect()
}

fn e_step(mix: &ShapeMixture, data: &DMatrix<f64>) -> (f64, Vec<Vec<f64>>) {
    let rows: Vec<(f64, Vec<f64>)> = (0..data.ncols())
        .into_par_iter()
        .map(|i| {
            let x = data.column(i).into_owned();
            let logs: Vec<f64> = mix
                .components()
                .iter()
                .map(|c| c.pi().ln() + c.log_density_centered(&(&x - c.mu())))
                .collect();
            let lse = log_sum_exp(&logs);
            let mut r: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            (lse, r)
        })
        .collect();
    let ll = rows.iter().map(|(l, _)| l).sum();
    (ll, rows.into_iter().map(|(_, r)| r).collect())
}

/// Eigenpairs of the weighted covariance, descending. Eigenvectors are only
/// returned for eigenvalues above `min_eig` when the Gram route is used.
fn weighted_eigen(centered: &DMatrix<f64>, min_eig: f64) -> (Vec<f64>, Vec<DVector<f64>>, f64) {
    // Zero-weight columns carry nothing; dropping them keeps exact zero rows
    // out of the Gram matrix.
    let active: Vec<usize> = (0..centered.ncols()).filter(|&c| centered.column(c).iter().any(|&v| v != 0.0)).collect();
    let centered = if active.len() < centered.ncols() { centered.select_columns(&active) } else { centered.clone() };
    let (dim, n) = centered.shape();
    if n == 0 {
        return (Vec::new(), Vec::new(), 0.0);
    }
    if n < dim {
        let gram = centered.tr_mul(&centered);
        let total = gram.trace();
        let (values, vectors) = robust_symmetric_eigen(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let vals: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
        let vecs = order
            .iter()
            .zip(&vals)
            .take_while(|(_, &v)| v > min_eig)
            .map(|(&i, &v)| &centered * vectors.column(i) / v.sqrt())
            .collect();
        (vals, vecs, total)
    } else {
        let cov = &centered * centered.transpose();
        let total = cov.trace();
        let (values, vectors) = robust_symmetric_eigen(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let vals: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
        let vecs = order.iter().map(|&i| vectors.column(i).into_owned()).collect();
        (vals, vecs, total)
    }
}

/// Symmetric eigendecomposition that retries with a diagonal shift when the
/// solver returns non-finite values (seen on rank-deficient PSD input).
fn robust_symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let scale = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for attempt in 0..4 {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += shift;
        }
        let eig = SymmetricEigen::new(a);
        if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).all(|v| v.is_finite()) {
            return (eig.eigenvalues.map(|v| v - shift), eig.eigenvectors);
        }
        shift = scale * 10f64.powi(attempt - 3);
    }
    panic!("symmetric eigensolver failed on a finite {n}x{n} matrix");
}

/// Modified Gram-Schmidt (applied twice), then completion with coordinate
/// axes until `d` orthonormal columns exist.
fn orthonormal_basis(mut cols: Vec<DVector<f64>>, d: usize, dim: usize) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut axis = 0;
    while basis.len() < d {
        let (mut v, from_axis) = if !cols.is_empty() {
            (cols.remove(0), false)
        } else {
            let mut e = DVector::zeros(dim);
            e[axis] = 1.0;
            axis += 1;
            (e, true)
        };
        let before = v.norm();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let after = v.norm();
        let keep = if from_axis { after > 0.5 } else { after > 1e-6 * before.max(f64::MIN_POSITIVE) };
        if keep && after > 0.0 {
            basis.push(v / after);
        }
    }
    DMatrix::from_columns(&basis)
}

fn m_step_component(
    index: usize,
    data: &DMatrix<f64>,
    weights: &[f64],
    opts: &FitOptions,
    prev_d: Option<usize>,
    var_floor: f64,
) -> Result<MixtureComponent> {
    let (dim, n) = data.shape();
    let total_w: f64 = weights.iter().sum();
    let threshold = opts.k as f64 * PI_FLOOR * n as f64;
    if !(total_w >= threshold) {
        return Err(Error::DegenerateComponent { component: index, weight: total_w, threshold });
    }
    let mu = data * DVector::from_column_slice(weights) / total_w;
    let mut centered = data.clone();
    for (c, &w) in weights.iter().enumerate() {
        // Negligible weights are flushed so subnormal products cannot reach
        // the eigensolver.
        let frac = w / total_w;
        let scale = if frac < 1e-30 { 0.0 } else { frac.sqrt() };
        let mut col = centered.column_mut(c);
        col -= &mu;
        col *= scale;
    }
    let (eigvals, eigvecs, total_var) = weighted_eigen(&centered, var_floor);
    let rank = eigvals.iter().filter(|&&v| v > var_floor).count();

    let mut d = match opts.dim_policy {
        DimPolicy::Fixed(d) => d,
        DimPolicy::VarianceFraction(tau) => {
            let mut d = eigvals.len();
            if total_var > 0.0 {
                let mut acc = 0.0;
                for (j, v) in eigvals.iter().enumerate() {
                    acc += v;
                    if acc >= tau * total_var {
                        d = j + 1;
                        break;
                    }
                }
            }
            d.min(rank.saturating_sub(1))
        }
    };
    // d never shrinks across iterations; a nested model keeps EM monotone.
    if let Some(p) = prev_d {
        d = d.max(p);
    }
    let d = d.clamp(1, dim - 1);

    let kept: f64 = eigvals.iter().take(d).sum();
    let sigma2 = ((total_var - kept).max(0.0) / (dim - d) as f64).max(var_floor);
    let lambda = DVector::from_iterator(
        d,
        (0..d).map(|j| eigvals.get(j).copied().unwrap_or(0.0).max(var_floor).max(sigma2)),
    );
    let vecs: Vec<DVector<f64>> = eigvecs.into_iter().take(d).collect();
    let psi = orthonormal_basis(vecs, d, dim);
    MixtureComponent::new(total_w / n as f64, mu, psi, lambda, sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_completion_is_orthonormal() {
        let v = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let b = orthonormal_basis(vec![v], 3, 4);
        let g = b.transpose() * &b;
        assert!((g - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn gram_route_matches_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let x = DMatrix::from_fn(9, 4, |_, _| rng.random::<f64>() - 0.5);
        let (gv, gvecs, gt) = weighted_eigen(&x, 1e-12);
        let cov = &x * x.transpose();
        let eig = SymmetricEigen::new(cov.clone());
        let mut dense: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        dense.sort_by(|a, b| b.total_cmp(a));
        assert!((gt - cov.trace()).abs() < 1e-12);
        for j in 0..4 {
            assert!((gv[j] - dense[j]).abs() < 1e-12);
            let v = &gvecs[j];
            assert!(((&cov * v) - v * gv[j]).amax() < 1e-10);
        }
    }
}
