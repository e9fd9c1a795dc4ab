//! Synthetic EDPM datasets with known ground truth.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::model::{
    sample_stick_row, Assignments, AtomState, Dataset, EdpmState, StickState, TruncationLevels,
    WeightState,
};
use crate::rng;

/// Response-generating scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// `λ(x₁) N(xᵀθ, σ²) + (1 - λ(x₁)) t_ν`, with `ν = max(2 xᵀθ, ν_min)`.
    Mixture,
    /// `N(xᵀθ, σ²)`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    pub n_true: usize,
    pub m_true: usize,
    pub alpha_theta: f64,
    pub alpha_psi: f64,
    /// Noise scale of covariates and of the Gaussian response component.
    pub sigma: f64,
    pub mu_theta_prior: f64,
    pub sigma_theta_prior: f64,
    pub mu_psi_prior: f64,
    pub sigma_psi_prior: f64,
    pub scenario: Scenario,
    pub omega1: f64,
    pub omega2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub nu_min: f64,
    /// Shift the Student-t component to `xᵀθ` instead of 0.
    pub t_centered_at_mean: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            d: 5,
            n_true: 10,
            m_true: 6,
            alpha_theta: 1.0,
            alpha_psi: 1.0,
            sigma: 0.25,
            mu_theta_prior: 0.0,
            sigma_theta_prior: 1.0,
            mu_psi_prior: 0.0,
            sigma_psi_prior: 2.0,
            scenario: Scenario::Gaussian,
            omega1: 2.0,
            omega2: 2.0,
            mu1: 0.0,
            mu2: 1.0,
            nu_min: 1.0,
            t_centered_at_mean: false,
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(alloc::format!("{name} must be positive and finite, got {v}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.n_true == 0 || self.m_true == 0 {
            return Err(Error::Config("n, d, n_true and m_true must be at least 1".into()));
        }
        positive("alpha_theta", self.alpha_theta)?;
        positive("alpha_psi", self.alpha_psi)?;
        positive("sigma", self.sigma)?;
        positive("sigma_theta_prior", self.sigma_theta_prior)?;
        positive("sigma_psi_prior", self.sigma_psi_prior)?;
        if !self.mu_theta_prior.is_finite() || !self.mu_psi_prior.is_finite() {
            return Err(Error::Config("prior means must be finite".into()));
        }
        if self.scenario == Scenario::Mixture {
            positive("omega1", self.omega1)?;
            positive("omega2", self.omega2)?;
            positive("nu_min", self.nu_min)?;
            if !self.mu1.is_finite() || !self.mu2.is_finite() {
                return Err(Error::Config("mu1 and mu2 must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Everything used to produce a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub sticks: StickState,
    pub weights: WeightState,
    /// `sigma_theta` and `sigma_psi` both carry the configured `σ`.
    pub atoms: AtomState,
    pub assign: Assignments,
}

impl GroundTruth {
    pub fn levels(&self) -> TruncationLevels {
        self.weights.levels()
    }

    /// The generator viewed as a model state, for plugging into model-core.
    pub fn as_state(&self, alpha_theta: f64, alpha_psi: f64) -> EdpmState {
        let levels = self.levels();
        EdpmState {
            alpha_psi: alloc::vec![alpha_psi; levels.n_theta()],
            levels,
            sticks: self.sticks.clone(),
            weights: self.weights.clone(),
            atoms: self.atoms.clone(),
            assign: self.assign.clone(),
            alpha_theta,
        }
    }
}

/// Mixing weight of the Gaussian component given the first covariate.
pub fn lambda_weight(x1: f64, mu1: f64, mu2: f64, omega1: f64, omega2: f64) -> f64 {
    // ω₁e^{a} / (ω₁e^{a} + ω₂e^{b}) = 1 / (1 + (ω₂/ω₁) e^{b-a}), stable for large |x₁|.
    let a = -0.5 * omega1 * (x1 - mu1) * (x1 - mu1);
    let b = -0.5 * omega2 * (x1 - mu2) * (x1 - mu2);
    let log_ratio = libm::log(omega2 / omega1) + b - a;
    1.0 / (1.0 + libm::exp(log_ratio))
}

/// Scenario I response draw.
pub fn scenario1_draw_y<R: Rng + ?Sized>(
    x: &[f64],
    theta: &[f64],
    config: &SimConfig,
    rng: &mut R,
) -> f64 {
    let fit = crate::linalg::dot(x, theta);
    let lambda = lambda_weight(x[0], config.mu1, config.mu2, config.omega1, config.omega2);
    if rng.random::<f64>() < lambda {
        let z: f64 = rng.sample(StandardNormal);
        return fit + config.sigma * z;
    }
    let nu = f64::max(2.0 * fit, config.nu_min);
    let t = StudentT::new(nu).expect("positive degrees of freedom").sample(rng);
    if config.t_centered_at_mean {
        fit + t
    } else {
        t
    }
}

/// Scenario II response draw.
pub fn scenario2_draw_y<R: Rng + ?Sized>(x: &[f64], theta: &[f64], sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    crate::linalg::dot(x, theta) + sigma * z
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn normal_vec<R: Rng + ?Sized>(d: usize, mean: f64, sd: f64, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        })
        .collect()
}

/// Draws a dataset from the truncated generator described by `config`,
/// seeded by `config.seed`.
pub fn generate_dataset(config: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut r = rng::seeded(config.seed);
    TruncationLevels::uniform(config.n_true, config.m_true)?;
    let sticks = StickState {
        theta: sample_stick_row(config.n_true, config.alpha_theta, &mut r),
        psi: (0..config.n_true)
            .map(|_| sample_stick_row(config.m_true, config.alpha_psi, &mut r))
            .collect(),
    };
    let weights = WeightState::from_sticks(&sticks)?;
    let d = config.d;
    let theta: Vec<Vec<f64>> = (0..config.n_true)
        .map(|_| normal_vec(d, config.mu_theta_prior, config.sigma_theta_prior, &mut r))
        .collect();
    let psi: Vec<Vec<Vec<f64>>> = (0..config.n_true)
        .map(|_| {
            (0..config.m_true)
                .map(|_| normal_vec(d, config.mu_psi_prior, config.sigma_psi_prior, &mut r))
                .collect()
        })
        .collect();
    let mut xs = Vec::with_capacity(config.n * d);
    let mut ys = Vec::with_capacity(config.n);
    let mut assign = Assignments {
        theta: Vec::with_capacity(config.n),
        psi: Vec::with_capacity(config.n),
    };
    for _ in 0..config.n {
        let k = categorical(&weights.theta, &mut r);
        let j = categorical(&weights.psi[k], &mut r);
        let x: Vec<f64> = psi[k][j]
            .iter()
            .map(|mu| {
                let z: f64 = r.sample(StandardNormal);
                mu + config.sigma * z
            })
            .collect();
        let y = match config.scenario {
            Scenario::Mixture => scenario1_draw_y(&x, &theta[k], config, &mut r),
            Scenario::Gaussian => scenario2_draw_y(&x, &theta[k], config.sigma, &mut r),
        };
        assign.theta.push(k);
        assign.psi.push(j);
        xs.extend_from_slice(&x);
        ys.push(y);
    }
    let data = Dataset::new(xs, ys, d)?;
    let truth = GroundTruth {
        sticks,
        weights,
        atoms: AtomState {
            theta,
            psi,
            sigma_theta: config.sigma,
            sigma_psi: config.sigma,
        },
        assign,
    };
    Ok((data, truth))
}
