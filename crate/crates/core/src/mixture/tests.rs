use super::*;
use crate::eval::adjusted_rand_index;
use nalgebra::{Cholesky, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_orthonormal(rng: &mut ChaCha8Rng, dim: usize, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, d, |_, _| rng.random::<f64>() - 0.5);
    let q = a.qr().q();
    q.columns(0, d).into_owned()
}

fn random_component(rng: &mut ChaCha8Rng, dim: usize, d: usize, sigma2: f64) -> MixtureComponent {
    let mu = DVector::from_fn(dim, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
    let psi = random_orthonormal(rng, dim, d);
    let mut lambda: Vec<f64> = (0..d).map(|_| sigma2 + 0.1 + 3.0 * rng.random::<f64>()).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    MixtureComponent::new(1.0, mu, psi, DVector::from_vec(lambda), sigma2).unwrap()
}

/// Dense log-pdf with `Σ = ΨΛΨᵀ + σ²(I − ΨΨᵀ)` via LU determinant and solve.
fn dense_log_pdf(c: &MixtureComponent, x: &DVector<f64>) -> f64 {
    let dim = c.ambient_dim();
    let psi = c.psi();
    let lam = DMatrix::from_diagonal(c.lambda());
    let proj = psi * psi.transpose();
    let sigma = psi * lam * psi.transpose() + (DMatrix::identity(dim, dim) - proj) * c.sigma2();
    let lu = sigma.clone().lu();
    let det = lu.determinant();
    let diff = x - c.mu();
    let sol = lu.solve(&diff).unwrap();
    -0.5 * (diff.dot(&sol) + det.ln() + dim as f64 * (2.0 * std::f64::consts::PI).ln())
}

fn shape(v: &DVector<f64>) -> ShapeVector {
    ShapeVector::new(v.as_slice().to_vec()).unwrap()
}

#[test]
fn density_mode_at_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = random_component(&mut rng, 6, 2, 0.3);
    let at_mean = c.log_density(&shape(c.mu())).unwrap();
    let expected = -0.5
        * (c.lambda().iter().map(|l| l.ln()).sum::<f64>()
            + 4.0 * c.sigma2().ln()
            + 6.0 * (2.0 * std::f64::consts::PI).ln());
    assert!((at_mean - expected).abs() < 1e-12);
    for _ in 0..50 {
        let x = c.mu() + DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.5);
        assert!(c.log_density(&shape(&x)).unwrap() < at_mean);
    }
}

#[test]
fn density_matches_dense_oracle_dim4() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = random_component(&mut rng, 4, 2, 0.25);
    for _ in 0..20 {
        let x = c.mu() + DVector::from_fn(4, |_, _| 3.0 * (rng.random::<f64>() - 0.5));
        let got = c.log_density_vec(&x).unwrap();
        assert!((got - dense_log_pdf(&c, &x)).abs() < 1e-8);
    }
}

#[test]
fn density_normalizes_in_two_dimensions() {
    // d = 1 inside a 2-D slice; the 3rd coordinate of the ShapeVector is
    // handled by evaluating the 2-D formula directly on the component parts.
    let lambda = 2.0;
    let sigma2 = 0.5;
    let logp = |x: f64, y: f64| {
        let beta = 0.6 * x + 0.8 * y;
        let rho2 = (x * x + y * y - beta * beta).max(0.0);
        -0.5 * (beta * beta / lambda + rho2 / sigma2 + lambda.ln() + sigma2.ln() + 2.0 * (2.0 * std::f64::consts::PI).ln())
    };
    // Monte Carlo over a uniform box of side 20 around the mode.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let x = 20.0 * (rng.random::<f64>() - 0.5);
        let y = 20.0 * (rng.random::<f64>() - 0.5);
        acc += logp(x, y).exp();
    }
    let integral = acc / n as f64 * 400.0;
    assert!((integral - 1.0).abs() < 0.02, "integral {integral}");

    // Same quantity through the component itself: embed the plane in R^3.
    let psi3 = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
    let c = MixtureComponent::new(1.0, DVector::zeros(3), psi3, DVector::from_vec(vec![lambda]), sigma2).unwrap();
    let s = ShapeVector::new(vec![0.7, -1.2, 0.0]).unwrap();
    let third = -0.5 * (sigma2.ln() + (2.0 * std::f64::consts::PI).ln());
    assert!((c.log_density(&s).unwrap() - (logp(0.7, -1.2) + third)).abs() < 1e-12);
}

#[test]
fn responsibilities_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = random_component(&mut rng, 6, 2, 0.2);
    let single = ShapeMixture::new(vec![c.clone()]).unwrap();
    let s = shape(&DVector::from_fn(6, |_, _| rng.random::<f64>()));
    assert_eq!(single.responsibilities(&s).unwrap().0, vec![1.0]);

    let twin = ShapeMixture::normalized(vec![c.clone(), c.clone()]).unwrap();
    let r = twin.responsibilities(&s).unwrap();
    assert!((r.0[0] - 0.5).abs() < 1e-15 && (r.0[1] - 0.5).abs() < 1e-15);

    // Separated by 100x every scale; compare against plain Bayes arithmetic.
    let psi = DMatrix::from_column_slice(6, 1, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let a = MixtureComponent::new(0.5, DVector::zeros(6), psi.clone(), DVector::from_vec(vec![1.0]), 0.5).unwrap();
    let b = MixtureComponent::new(0.5, DVector::from_element(6, 100.0), psi, DVector::from_vec(vec![1.0]), 0.5).unwrap();
    let mix = ShapeMixture::new(vec![a.clone(), b.clone()]).unwrap();
    let probe = shape(&DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
    let r = mix.responsibilities(&probe).unwrap();
    let pa = 0.5 * dense_log_pdf(&a, &probe.to_dvector()).exp();
    let lb = dense_log_pdf(&b, &probe.to_dvector()) - dense_log_pdf(&a, &probe.to_dvector());
    let oracle = 1.0 / (1.0 + lb.exp());
    assert!(pa > 0.0);
    assert!(r.0[0] > 0.999);
    assert!((r.0[0] - oracle).abs() < 1e-12);
    let r_mu = mix.responsibilities(&a.mean_shape()).unwrap();
    assert!(r_mu.0[0] > 0.999);
}

#[test]
fn projection_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = random_component(&mut rng, 9, 3, 0.1);
    assert!(c.project(&c.mean_shape()).unwrap().amax() < 1e-12);

    let l1 = c.lambda()[0];
    let s = c.mu() + c.psi().column(0) * l1.sqrt();
    let beta = c.project(&shape(&s)).unwrap();
    assert!((beta[0] - l1.sqrt()).abs() < 1e-12);
    assert!(beta[1].abs() < 1e-12 && beta[2].abs() < 1e-12);

    // Least-squares oracle: argmin_b ||s - mu - Psi b|| via normal equations.
    for _ in 0..20 {
        let s = DVector::from_fn(9, |_, _| 5.0 * (rng.random::<f64>() - 0.5));
        let beta = c.project(&shape(&s)).unwrap();
        let psi = c.psi();
        let normal = psi.transpose() * psi;
        let rhs = psi.transpose() * (&s - c.mu());
        let ls = normal.lu().solve(&rhs).unwrap();
        assert!((&beta - &ls).amax() < 1e-10);
        let residual = &s - c.mu() - psi * &beta;
        assert!((psi.transpose() * residual).amax() < 1e-10);
    }
}

#[test]
fn reconstruct_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = random_component(&mut rng, 9, 3, 0.1);
    let zero = DVector::zeros(3);
    assert_eq!(c.reconstruct(&zero, Clamp::Off).unwrap(), c.mean_shape());

    let s = shape(&DVector::from_fn(9, |_, _| rng.random::<f64>()));
    let once = c.regularize(&s, Clamp::Off).unwrap();
    let twice = c.regularize(&once, Clamp::Off).unwrap();
    assert!(once.distance(&twice) < 1e-10);

    let l1 = c.lambda()[0];
    let beta = DVector::from_vec(vec![10.0 * l1.sqrt(), 0.0, 0.0]);
    let out = c.reconstruct(&beta, Clamp::SdMultiple(3.0)).unwrap();
    let expected = c.mu() + c.psi().column(0) * (3.0 * l1.sqrt());
    assert!((out.to_dvector() - expected).amax() < 1e-12);

    assert!(matches!(c.reconstruct(&DVector::zeros(2), Clamp::Off), Err(Error::Dimension(_))));
    assert!(matches!(c.project(&ShapeVector::new(vec![0.0; 6]).unwrap()), Err(Error::Dimension(_))));
}

#[test]
fn vanishing_variance_samples_sit_on_means() {
    let floor = 1e-8;
    let dim = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let comps: Vec<_> = (0..2)
        .map(|k| {
            let psi = random_orthonormal(&mut rng, dim, 2);
            MixtureComponent::new(0.5, DVector::from_element(dim, 10.0 * k as f64), psi, DVector::from_vec(vec![floor, floor]), floor)
                .unwrap()
        })
        .collect();
    let mix = ShapeMixture::new(comps).unwrap();
    // The off-subspace draw has norm ~ sqrt(dim * floor).
    let scale = (floor * dim as f64).sqrt();
    for _ in 0..100 {
        let s = mix.sample_shape(&mut rng);
        let nearest = mix
            .components()
            .iter()
            .map(|c| (s.to_dvector() - c.mu()).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 3.0 * scale, "{nearest}");
    }
}

#[test]
fn sample_mean_and_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = random_component(&mut rng, 6, 2, 0.2);
    let mix = ShapeMixture::new(vec![c.clone()]).unwrap();
    let n = 10_000;
    let mut acc = DVector::zeros(6);
    let mut sq = DVector::zeros(6);
    for _ in 0..n {
        let s = mix.sample_shape(&mut rng).to_dvector();
        acc += &s;
        sq += s.component_mul(&s);
    }
    let mean = &acc / n as f64;
    let var = &sq / n as f64 - mean.component_mul(&mean);
    for i in 0..6 {
        let se = (var[i] / n as f64).sqrt();
        assert!((mean[i] - c.mu()[i]).abs() < 3.0 * se, "coord {i}");
    }

    let comps: Vec<_> = [0.2, 0.3, 0.5]
        .iter()
        .map(|&p| random_component(&mut rng, 6, 1, 0.1).with_pi(p))
        .collect();
    let mix = ShapeMixture::new(comps).unwrap();
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[mix.sample_with_component(&mut rng).0] += 1;
    }
    for (k, p) in [0.2, 0.3, 0.5].iter().enumerate() {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((counts[k] as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn dataset_log_likelihood_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = random_component(&mut rng, 6, 2, 0.3);
    let mix = ShapeMixture::new(vec![c.clone()]).unwrap();
    let ds = ShapeDataset::new(vec![c.mean_shape(), c.mean_shape()]).unwrap();
    assert!((mix.dataset_log_likelihood(&ds).unwrap() - 2.0 * c.log_density(&c.mean_shape()).unwrap()).abs() < 1e-12);

    let comps = vec![random_component(&mut rng, 6, 2, 0.3).with_pi(0.4), random_component(&mut rng, 6, 1, 0.2).with_pi(0.6)];
    let mix = ShapeMixture::new(comps).unwrap();
    let shapes: Vec<_> = (0..5).map(|_| shape(&DVector::from_fn(6, |_, _| 2.0 * rng.random::<f64>()))).collect();
    let ds = ShapeDataset::new(shapes.clone()).unwrap();
    let manual: f64 = shapes
        .iter()
        .map(|s| {
            mix.components()
                .iter()
                .map(|c| c.pi() * dense_log_pdf(c, &s.to_dvector()).exp())
                .sum::<f64>()
                .ln()
        })
        .sum();
    let ll = mix.dataset_log_likelihood(&ds).unwrap();
    assert!((ll - manual).abs() < 1e-9 * manual.abs());
    let doubled = ShapeDataset::new(shapes.iter().chain(shapes.iter()).cloned().collect()).unwrap();
    assert_eq!(mix.dataset_log_likelihood(&doubled).unwrap(), 2.0 * ll);
}

#[test]
fn fit_on_identical_shapes_hits_floor() {
    let s = ShapeVector::new(vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
    let ds = ShapeDataset::new(vec![s.clone(); 5]).unwrap();
    let fit = fit_mixture(&ds, &FitOptions { k: 1, ..Default::default() }).unwrap();
    let c = fit.mixture.component(0);
    assert!((c.mu() - s.to_dvector()).amax() < 1e-12);
    assert!(c.lambda().iter().all(|&l| l == fit.var_floor));
    assert_eq!(c.sigma2(), fit.var_floor);
}

/// Plain full-covariance EM used as an independent reference at small D.
fn full_cov_em(points: &[DVector<f64>], init: &[usize], k: usize, iters: usize) -> (Vec<DVector<f64>>, Vec<usize>) {
    let n = points.len();
    let dim = points[0].len();
    let mut resp: Vec<Vec<f64>> = init.iter().map(|&l| (0..k).map(|j| (j == l) as u8 as f64).collect()).collect();
    let mut means = vec![DVector::zeros(dim); k];
    for _ in 0..iters {
        let mut params = Vec::new();
        for j in 0..k {
            let w: f64 = resp.iter().map(|r| r[j]).sum();
            let mean = points.iter().zip(&resp).fold(DVector::zeros(dim), |a, (p, r)| a + p * r[j]) / w;
            let mut cov = DMatrix::zeros(dim, dim);
            for (p, r) in points.iter().zip(&resp) {
                let d = p - &mean;
                cov += &d * d.transpose() * r[j];
            }
            cov /= w;
            cov += DMatrix::identity(dim, dim) * 1e-9;
            let chol = Cholesky::new(cov).unwrap();
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            params.push((w / n as f64, mean.clone(), chol, logdet));
            means[j] = mean;
        }
        for (p, r) in points.iter().zip(resp.iter_mut()) {
            let logs: Vec<f64> = params
                .iter()
                .map(|(pi, m, ch, ld)| {
                    let d = p - m;
                    pi.ln() - 0.5 * (d.dot(&ch.solve(&d)) + ld)
                })
                .collect();
            *r = softmax_log(&logs);
        }
    }
    let labels = resp.iter().map(|r| if r[0] >= r[1] { 0 } else { 1 }).collect();
    (means, labels)
}

#[test]
fn recovers_two_planted_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sd = 0.1;
    let centers = [DVector::zeros(6), DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]) * (10.0 * sd)];
    let mut shapes = Vec::new();
    let mut truth = Vec::new();
    let mut points = Vec::new();
    for i in 0..120 {
        let c = i % 2;
        let p = &centers[c] + DVector::from_fn(6, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        shapes.push(shape(&p));
        points.push(p);
        truth.push(c);
    }
    let ds = ShapeDataset::new(shapes).unwrap();
    let fit = fit_mixture(&ds, &FitOptions { k: 2, seed: 1, ..Default::default() }).unwrap();
    assert_eq!(adjusted_rand_index(&fit.labels, &truth), 1.0);
    let (oracle_means, oracle_labels) = full_cov_em(&points, &truth, 2, 50);
    assert_eq!(adjusted_rand_index(&oracle_labels, &fit.labels), 1.0);
    for c in fit.mixture.components() {
        let nearest_planted = centers.iter().map(|m| (c.mu() - m).amax()).fold(f64::INFINITY, f64::min);
        assert!(nearest_planted < 0.1);
        let nearest_oracle = oracle_means.iter().map(|m| (c.mu() - m).amax()).fold(f64::INFINITY, f64::min);
        assert!(nearest_oracle < 1e-6, "{nearest_oracle}");
    }
}

#[test]
fn em_is_monotone_and_bases_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth: Vec<_> = (0..3).map(|_| random_component(&mut rng, 30, 3, 0.05)).collect();
    let mix = ShapeMixture::normalized(truth).unwrap();
    let shapes: Vec<_> = (0..60).map(|_| mix.sample_shape(&mut rng)).collect();
    let ds = ShapeDataset::new(shapes).unwrap();
    let fit = fit_mixture(&ds, &FitOptions { k: 3, seed: 2, tol: 1e-12, ..Default::default() }).unwrap();
    for w in fit.log_likelihood.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{:?}", fit.log_likelihood);
    }
    let last = *fit.log_likelihood.last().unwrap();
    assert!((fit.mixture.dataset_log_likelihood(&ds).unwrap() - last).abs() < 1e-9 * last.abs());
    for c in fit.mixture.components() {
        let g = c.psi().transpose() * c.psi();
        assert!((g - DMatrix::<f64>::identity(c.d(), c.d())).amax() < 1e-8);
    }
    let total: f64 = fit.mixture.components().iter().map(|c| c.pi()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn fit_errors() {
    let a = ShapeVector::new(vec![0.0; 6]).unwrap();
    let ds = ShapeDataset::new(vec![a.clone(), a.clone()]).unwrap();
    assert!(matches!(fit_mixture(&ds, &FitOptions { k: 3, ..Default::default() }), Err(Error::Config(_))));
    assert!(matches!(
        fit_mixture(&ds, &FitOptions { k: 2, restarts: 1, ..Default::default() }),
        Err(Error::DegenerateComponent { .. })
    ));
}

#[test]
fn json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mix = ShapeMixture::normalized(vec![random_component(&mut rng, 9, 2, 0.1), random_component(&mut rng, 9, 3, 0.2)]).unwrap();
    let back = ShapeMixture::from_json(&mix.to_json()).unwrap();
    assert_eq!(back, mix);
    let v: serde_json::Value = serde_json::from_str(&mix.to_json()).unwrap();
    assert_eq!(v["m"], 3);
    assert_eq!(v["ambient_dim"], 9);
    assert_eq!(v["components"][1]["psi"]["cols"], 3);
    assert!(v["components"][0]["mu"]["data_b64"].is_string());
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(logs in proptest::collection::vec(-50.0f64..50.0, 1..6), shift in -1e3f64..1e3) {
        let a = softmax_log(&logs);
        let shifted: Vec<f64> = logs.iter().map(|l| l + shift).collect();
        let b = softmax_log(&shifted);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x >= &0.0);
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn regularize_never_moves_away_from_subspace(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_component(&mut rng, 12, 3, 0.1);
        let s = shape(&DVector::from_fn(12, |_, _| 6.0 * (rng.random::<f64>() - 0.5)));
        let r = c.regularize(&s, Clamp::Off).unwrap();
        let dist = |x: &ShapeVector| {
            let cen = x.to_dvector() - c.mu();
            let b = c.psi().tr_mul(&cen);
            (cen - c.psi() * b).norm()
        };
        prop_assert!(dist(&r) <= dist(&s) + 1e-12);
        prop_assert!(dist(&r) < 1e-10);
        let rr = c.regularize(&r, Clamp::Off).unwrap();
        prop_assert!(r.distance(&rr) < 1e-10);
    }
}
