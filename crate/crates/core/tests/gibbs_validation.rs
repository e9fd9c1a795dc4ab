//! Distributional checks of the blocked Gibbs sampler.

use edpm_core::gibbs::{draw_data, gibbs_sweep, prior_joint_draw};
use edpm_core::linalg::Cholesky;
use edpm_core::model::{Dataset, EdpmState, GammaPrior, Hyperparams, TruncationLevels};
use edpm_core::rng;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn iid_se(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Standard error of a chain average from non-overlapping batch means.
fn batch_se(v: &[f64], batches: usize) -> f64 {
    let len = v.len() / batches;
    let means: Vec<f64> = v.chunks_exact(len).map(mean).collect();
    iid_se(&means)
}

#[test]
fn single_component_matches_normal_gamma_posterior() {
    // N = M = 1: θ, τ_θ follow the conjugate normal-gamma posterior
    //   E θ = A⁻¹(Xᵀy + C μ0),  A = XᵀX + C,
    //   τ_θ ~ Gamma(a + n/2, b + (yᵀy + μ0ᵀCμ0 - mᵀ A m)/2).
    let levels = TruncationLevels::new(vec![1]).unwrap();
    let mut h = Hyperparams::standard(&levels, 2);
    h.mu0 = vec![0.3, -0.2];
    h.c_y = vec![2.0, 0.5, 0.5, 1.0];
    h.precision_prior_theta = GammaPrior::new(2.0, 1.5);
    let x = vec![1.0, 0.5, -0.3, 2.0, 1.5, -1.0, 0.2, 0.7, -2.0, 1.1];
    let y = vec![1.2, 3.1, 0.4, 0.9, -1.5];
    let data = Dataset::new(x.clone(), y.clone(), 2).unwrap();

    let mut a = h.c_y.clone();
    let c_mu0 = rhs_c(&h);
    let mut rhs = c_mu0.clone();
    for i in 0..5 {
        let (x0, x1) = (x[2 * i], x[2 * i + 1]);
        a[0] += x0 * x0;
        a[1] += x0 * x1;
        a[2] += x1 * x0;
        a[3] += x1 * x1;
        rhs[0] += x0 * y[i];
        rhs[1] += x1 * y[i];
    }
    let post_mean = Cholesky::new(&a, 2).unwrap().solve(&rhs);
    let mam = post_mean[0] * (a[0] * post_mean[0] + a[1] * post_mean[1])
        + post_mean[1] * (a[2] * post_mean[0] + a[3] * post_mean[1]);
    let prior_quad = h.mu0[0] * c_mu0[0] + h.mu0[1] * c_mu0[1];
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let shape = 2.0 + 2.5;
    let rate = 1.5 + 0.5 * (yy + prior_quad - mam);
    let want_tau = shape / rate;

    let (mut s, _) = prior_joint_draw(&levels, &h, 0, 2, &mut rng::seeded(1)).unwrap();
    s.assign = edpm_core::model::Assignments { theta: vec![0; 5], psi: vec![0; 5] };
    let mut r = rng::seeded(2);
    let (mut t0, mut t1, mut tau) = (vec![], vec![], vec![]);
    for it in 0..40_000 {
        s = gibbs_sweep(&s, &data, &h, &mut r).unwrap();
        if it >= 1000 {
            t0.push(s.atoms.theta[0][0]);
            t1.push(s.atoms.theta[0][1]);
            tau.push(1.0 / (s.atoms.sigma_theta * s.atoms.sigma_theta));
        }
    }
    for (v, want) in [(&t0, post_mean[0]), (&t1, post_mean[1]), (&tau, want_tau)] {
        let se = batch_se(v, 100);
        assert!((mean(v) - want).abs() < 3.0 * se, "{} vs {want} (se {se})", mean(v));
    }
}

fn rhs_c(h: &Hyperparams) -> Vec<f64> {
    vec![
        h.c_y[0] * h.mu0[0] + h.c_y[1] * h.mu0[1],
        h.c_y[2] * h.mu0[0] + h.c_y[3] * h.mu0[1],
    ]
}

fn stats(s: &EdpmState, d: &Dataset) -> [f64; 4] {
    [
        s.alpha_theta,
        s.sticks.theta[0],
        s.assign.occupied_theta(&s.levels) as f64,
        d.responses().iter().sum::<f64>() / d.len() as f64,
    ]
}

#[test]
fn getting_it_right_small() {
    let levels = TruncationLevels::new(vec![2, 1]).unwrap();
    let mut h = Hyperparams::standard(&levels, 1);
    h.precision_prior_theta = GammaPrior::new(5.0, 5.0);
    h.precision_prior_psi = GammaPrior::new(5.0, 5.0);
    let (n, draws) = (6, 4000);
    let mut r = rng::seeded(10);
    let mut marginal: Vec<[f64; 4]> = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (s, d) = prior_joint_draw(&levels, &h, n, 1, &mut r).unwrap();
        marginal.push(stats(&s, &d));
    }
    let (mut s, mut d) = prior_joint_draw(&levels, &h, n, 1, &mut r).unwrap();
    let mut successive: Vec<[f64; 4]> = Vec::with_capacity(draws);
    for _ in 0..draws * 5 {
        s = gibbs_sweep(&s, &d, &h, &mut r).unwrap();
        d = draw_data(&s, &mut r);
        successive.push(stats(&s, &d));
    }
    for c in 0..4 {
        for power in [1, 2] {
            let a: Vec<f64> = marginal.iter().map(|v| v[c].powi(power)).collect();
            let b: Vec<f64> = successive.iter().map(|v| v[c].powi(power)).collect();
            let se = (iid_se(&a).powi(2) + batch_se(&b, 50).powi(2)).sqrt();
            assert!(
                (mean(&a) - mean(&b)).abs() < 3.0 * se,
                "stat {c} power {power}: {} vs {} (se {se})",
                mean(&a),
                mean(&b)
            );
        }
    }
}
