//! Domain types for the truncated enriched Dirichlet process mixture, the
//! square-breaking weight algebra, prior draws, the joint log-density and the
//! posterior-predictive regression function.
//!
//! Indices are zero-based throughout: θ-cluster `k` in `0..N`, ψ-subcluster
//! `j` in `0..M_k`. The final stick of every row is stored as exactly `1.0`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};
use crate::special::{ln_normal, log_sum_exp};

/// Largest value a free stick may take; keeps `ln(1 - v)` finite.
pub const MAX_FREE_STICK: f64 = 1.0 - f64::EPSILON / 2.0;

/// Covariates (`n x d`, row-major) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("covariate dimension must be at least 1".into()));
        }
        if y.is_empty() {
            return Err(Error::Dimension("dataset needs at least one observation".into()));
        }
        if x.len() != y.len() * dim {
            return Err(Error::Dimension(format!(
                "expected {} covariate values for {} rows of dimension {}, got {}",
                y.len() * dim,
                y.len(),
                dim,
                x.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite covariate at row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!("non-finite response at row {pos}")));
        }
        Ok(Self { x, y, dim })
    }

    /// A dataset with no observations, for prior-only sampling.
    pub fn empty(dim: usize) -> Self {
        Self {
            x: Vec::new(),
            y: Vec::new(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    /// Replaces responses and covariates in place, keeping the shape.
    pub(crate) fn overwrite(&mut self, x: Vec<f64>, y: Vec<f64>) {
        debug_assert_eq!(x.len(), y.len() * self.dim);
        self.x = x;
        self.y = y;
    }
}

/// Truncation levels: `N` θ-clusters and `M_k` ψ-subclusters for each.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TruncationLevels {
    m: Vec<usize>,
}

impl TruncationLevels {
    /// `m[k]` is the number of ψ-subclusters of θ-cluster `k`; `N = m.len()`.
    ///
    /// The planner never produces levels below 2, but degenerate single-atom
    /// truncations are accepted for testing reductions.
    pub fn new(m: Vec<usize>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if let Some(k) = m.iter().position(|&mk| mk == 0) {
            return Err(Error::Config(format!("M_{} must be at least 1", k + 1)));
        }
        Ok(Self { m })
    }

    pub fn uniform(n_theta: usize, m_psi: usize) -> Result<Self> {
        Self::new(vec![m_psi; n_theta])
    }

    pub fn n_theta(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self, k: usize) -> usize {
        self.m[k]
    }

    pub fn m_all(&self) -> &[usize] {
        &self.m
    }

    /// Total number of (θ, ψ) atom pairs, `Σ_k M_k`.
    pub fn total_pairs(&self) -> usize {
        self.m.iter().sum()
    }

    /// Offset of row `k` in a flattened `(k, j)` layout.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.m
            .iter()
            .map(|&mk| {
                let o = acc;
                acc += mk;
                o
            })
            .collect()
    }

    /// Flattened `(k, j)` pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.m
            .iter()
            .enumerate()
            .flat_map(|(k, &mk)| (0..mk).map(move |j| (k, j)))
    }
}

/// Shape/rate parameters of a Gamma prior. `(0, 0)` is the improper limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn is_proper(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        sample_gamma(self.shape, self.rate, rng)
    }
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

/// Hyperparameters of the Gaussian EDPM.
///
/// θ-atoms: `θ_k ~ N(mu0, σ_θ² C_y⁻¹)`; ψ-atoms: `μ_{kj,l} ~ N(m_l, c_{x,l})`.
/// `c_x` holds variances. Responses: `y ~ N(xᵀθ_k, σ_θ²)`; covariates:
/// `x_l ~ N(μ_{kj,l}, σ_ψ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub alpha_theta: f64,
    pub alpha_psi: Vec<f64>,
    pub mu0: Vec<f64>,
    /// Row-major `d x d` prior precision scale for θ-atoms.
    pub c_y: Vec<f64>,
    pub m: Vec<f64>,
    pub c_x: Vec<f64>,
    pub alpha_prior_theta: GammaPrior,
    pub alpha_prior_psi: GammaPrior,
    pub precision_prior_theta: GammaPrior,
    pub precision_prior_psi: GammaPrior,
}

impl Hyperparams {
    /// Unit concentrations, `mu0 = 0`, `C_y = I`, `m = 0`, `c_x = 4`, Gamma(1, 1) hyperpriors.
    pub fn standard(levels: &TruncationLevels, dim: usize) -> Self {
        let mut c_y = vec![0.0; dim * dim];
        for l in 0..dim {
            c_y[l * dim + l] = 1.0;
        }
        Self {
            alpha_theta: 1.0,
            alpha_psi: vec![1.0; levels.n_theta()],
            mu0: vec![0.0; dim],
            c_y,
            m: vec![0.0; dim],
            c_x: vec![4.0; dim],
            alpha_prior_theta: GammaPrior::default(),
            alpha_prior_psi: GammaPrior::default(),
            precision_prior_theta: GammaPrior::default(),
            precision_prior_psi: GammaPrior::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self, levels: &TruncationLevels) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("hyperparameter dimension must be at least 1".into()));
        }
        if !(self.alpha_theta > 0.0) {
            return Err(Error::Config("alpha_theta must be positive".into()));
        }
        if self.alpha_psi.len() != levels.n_theta() {
            return Err(Error::Config(format!(
                "alpha_psi has length {}, expected N = {}",
                self.alpha_psi.len(),
                levels.n_theta()
            )));
        }
        if self.alpha_psi.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("alpha_psi entries must be positive".into()));
        }
        if self.c_y.len() != d * d || self.m.len() != d || self.c_x.len() != d {
            return Err(Error::Config("base-measure parameters have inconsistent dimensions".into()));
        }
        if self.c_x.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config("c_x entries must be positive".into()));
        }
        for prior in [
            self.alpha_prior_theta,
            self.alpha_prior_psi,
            self.precision_prior_theta,
            self.precision_prior_psi,
        ] {
            if !(prior.shape >= 0.0 && prior.rate >= 0.0) {
                return Err(Error::Config("Gamma hyperprior parameters must be nonnegative".into()));
            }
        }
        Cholesky::new(&self.c_y, d)?;
        Ok(())
    }
}

/// Stick fractions; the last entry of each row is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StickState {
    pub theta: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
}

impl StickState {
    pub fn validate(&self, levels: &TruncationLevels) -> Result<()> {
        if self.theta.len() != levels.n_theta() || self.psi.len() != levels.n_theta() {
            return Err(Error::Dimension("stick rows do not match N".into()));
        }
        check_sticks(&self.theta)?;
        for (k, row) in self.psi.iter().enumerate() {
            if row.len() != levels.m(k) {
                return Err(Error::Dimension(format!("psi stick row {k} does not match M_k")));
            }
            check_sticks(row)?;
        }
        Ok(())
    }
}

/// Mixture weights derived from sticks.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub theta: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
}

impl WeightState {
    pub fn from_sticks(sticks: &StickState) -> Result<Self> {
        Ok(Self {
            theta: weights_from_sticks(&sticks.theta)?,
            psi: sticks
                .psi
                .iter()
                .map(|row| weights_from_sticks(row))
                .collect::<Result<_>>()?,
        })
    }

    pub fn levels(&self) -> TruncationLevels {
        TruncationLevels {
            m: self.psi.iter().map(Vec::len).collect(),
        }
    }

    /// `Σ_{k<N} p_k Σ_{j<M_k} p_{j|k}`: mass on atoms not touched by truncation.
    pub fn retained_mass(&self) -> f64 {
        let n = self.theta.len();
        self.theta[..n - 1]
            .iter()
            .zip(&self.psi)
            .map(|(pk, row)| pk * row[..row.len() - 1].iter().sum::<f64>())
            .sum()
    }
}

/// Atom values and noise scales.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomState {
    /// `N` regression coefficient vectors of length `d`.
    pub theta: Vec<Vec<f64>>,
    /// `psi[k][j]` is the covariate mean vector of pair `(k, j)`.
    pub psi: Vec<Vec<Vec<f64>>>,
    pub sigma_theta: f64,
    pub sigma_psi: f64,
}

impl AtomState {
    pub fn validate(&self, levels: &TruncationLevels, dim: usize) -> Result<()> {
        if !(self.sigma_theta > 0.0 && self.sigma_theta.is_finite())
            || !(self.sigma_psi > 0.0 && self.sigma_psi.is_finite())
        {
            return Err(Error::InvalidState("noise scales must be positive and finite".into()));
        }
        if self.theta.len() != levels.n_theta() || self.psi.len() != levels.n_theta() {
            return Err(Error::Dimension("atom rows do not match N".into()));
        }
        for (k, t) in self.theta.iter().enumerate() {
            if t.len() != dim || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidState(format!("theta atom {k} invalid")));
            }
            if self.psi[k].len() != levels.m(k) {
                return Err(Error::Dimension(format!("psi atom row {k} does not match M_k")));
            }
            for mu in &self.psi[k] {
                if mu.len() != dim || mu.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidState(format!("psi atom in row {k} invalid")));
                }
            }
        }
        Ok(())
    }
}

/// Cluster memberships `(K_i, J_i)` per observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignments {
    pub theta: Vec<usize>,
    pub psi: Vec<usize>,
}

impl Assignments {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn validate(&self, levels: &TruncationLevels) -> Result<()> {
        if self.theta.len() != self.psi.len() {
            return Err(Error::Dimension("assignment vectors differ in length".into()));
        }
        for (i, (&k, &j)) in self.theta.iter().zip(&self.psi).enumerate() {
            if k >= levels.n_theta() || j >= levels.m(k) {
                return Err(Error::InvalidState(format!(
                    "assignment of observation {i} out of range: ({k}, {j})"
                )));
            }
        }
        Ok(())
    }

    /// Counts `n_k` and `n_{kj}`.
    pub fn counts(&self, levels: &TruncationLevels) -> (Vec<usize>, Vec<Vec<usize>>) {
        let mut nk = vec![0; levels.n_theta()];
        let mut nkj: Vec<Vec<usize>> = levels.m_all().iter().map(|&m| vec![0; m]).collect();
        for (&k, &j) in self.theta.iter().zip(&self.psi) {
            nk[k] += 1;
            nkj[k][j] += 1;
        }
        (nk, nkj)
    }

    pub fn occupied_theta(&self, levels: &TruncationLevels) -> usize {
        self.counts(levels).0.iter().filter(|&&c| c > 0).count()
    }

    pub fn occupied_pairs(&self, levels: &TruncationLevels) -> usize {
        self.counts(levels)
            .1
            .iter()
            .flatten()
            .filter(|&&c| c > 0)
            .count()
    }
}

/// One full parameter state of the truncated model.
#[derive(Debug, Clone, PartialEq)]
pub struct EdpmState {
    pub levels: TruncationLevels,
    pub sticks: StickState,
    /// Cached; always equal to `WeightState::from_sticks(&sticks)`.
    pub weights: WeightState,
    pub atoms: AtomState,
    pub assign: Assignments,
    pub alpha_theta: f64,
    pub alpha_psi: Vec<f64>,
}

impl EdpmState {
    pub fn refresh_weights(&mut self) -> Result<()> {
        self.weights = WeightState::from_sticks(&self.sticks)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.atoms.theta[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        self.sticks.validate(&self.levels)?;
        self.atoms.validate(&self.levels, self.dim())?;
        self.assign.validate(&self.levels)?;
        if !(self.alpha_theta > 0.0) || self.alpha_psi.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidState("concentrations must be positive".into()));
        }
        Ok(())
    }
}

fn check_sticks(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidStick("empty stick row".into()));
    }
    if let Some(pos) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidStick(format!("entry {pos} = {} outside [0, 1]", v[pos])));
    }
    if v[v.len() - 1] != 1.0 {
        return Err(Error::InvalidStick("last stick must equal 1".into()));
    }
    Ok(())
}

/// `p_1 = v_1`, `p_k = v_k ∏_{h<k} (1 - v_h)`.
pub fn weights_from_sticks(v: &[f64]) -> Result<Vec<f64>> {
    check_sticks(v)?;
    let mut remaining = 1.0;
    let mut p = Vec::with_capacity(v.len());
    for &vk in v {
        p.push(vk * remaining);
        remaining *= 1.0 - vk;
    }
    Ok(p)
}

/// Inverse of [`weights_from_sticks`]: `v_k = p_k / Σ_{j≥k} p_j`.
///
/// The tail sums are accumulated from the back so no cancellation occurs.
pub fn sticks_from_weights(p: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::InvalidStick("empty weight vector".into()));
    }
    if p.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidStick("weights must be finite and nonnegative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidStick(format!("weights sum to {total}, not 1")));
    }
    let last = p.len() - 1;
    let mut tails = vec![0.0; p.len()];
    let mut acc = 0.0;
    for k in (0..p.len()).rev() {
        acc += p[k];
        tails[k] = acc;
    }
    let mut v = Vec::with_capacity(p.len());
    for k in 0..last {
        if tails[k] <= 0.0 {
            return Err(Error::DegenerateWeights { index: k });
        }
        v.push((p[k] / tails[k]).min(1.0));
    }
    v.push(1.0);
    Ok(v)
}

pub(crate) fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) || !rate.is_finite() {
        return Err(Error::Config(format!("invalid Gamma({shape}, rate {rate})")));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|_| Error::Config("invalid Gamma".into()))?;
    Ok(g.sample(rng))
}

/// Draws a free stick from Beta(a, b), clamped below [`MAX_FREE_STICK`].
pub(crate) fn sample_free_stick<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let beta = Beta::new(a, b).expect("beta parameters are positive");
    beta.sample(rng).min(MAX_FREE_STICK)
}

pub(crate) fn sample_stick_row<R: Rng + ?Sized>(len: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len - 1).map(|_| sample_free_stick(1.0, alpha, rng)).collect();
    row.push(1.0);
    row
}

/// Draws `θ ~ N(mu0, σ² C_y⁻¹)` given the Cholesky factor of `C_y`.
pub(crate) fn sample_theta_prior<R: Rng + ?Sized>(
    hyper: &Hyperparams,
    chol: &Cholesky,
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let z: Vec<f64> = (0..hyper.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let dev = chol.backward(&z);
    hyper
        .mu0
        .iter()
        .zip(dev)
        .map(|(m, e)| m + sigma * e)
        .collect()
}

pub(crate) fn sample_psi_prior<R: Rng + ?Sized>(hyper: &Hyperparams, rng: &mut R) -> Vec<f64> {
    hyper
        .m
        .iter()
        .zip(&hyper.c_x)
        .map(|(m, c)| {
            let z: f64 = rng.sample(StandardNormal);
            m + libm::sqrt(*c) * z
        })
        .collect()
}

/// Draws sticks, weights and atoms from the truncated prior with the
/// concentrations in `hyper`. Noise precisions come from their Gamma priors.
pub fn draw_truncated_edp<R: Rng + ?Sized>(
    levels: &TruncationLevels,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<(StickState, WeightState, AtomState)> {
    hyper.validate(levels)?;
    if !hyper.precision_prior_theta.is_proper() || !hyper.precision_prior_psi.is_proper() {
        return Err(Error::Config("precision priors must be proper to draw from them".into()));
    }
    let n_theta = levels.n_theta();
    let theta = sample_stick_row(n_theta, hyper.alpha_theta, rng);
    let psi: Vec<Vec<f64>> = (0..n_theta)
        .map(|k| sample_stick_row(levels.m(k), hyper.alpha_psi[k], rng))
        .collect();
    let sticks = StickState { theta, psi };
    let weights = WeightState::from_sticks(&sticks)?;

    let tau_theta = hyper.precision_prior_theta.sample(rng)?;
    let tau_psi = hyper.precision_prior_psi.sample(rng)?;
    let sigma_theta = 1.0 / libm::sqrt(tau_theta);
    let sigma_psi = 1.0 / libm::sqrt(tau_psi);
    let chol = Cholesky::new(&hyper.c_y, hyper.dim())?;
    let theta_atoms = (0..n_theta)
        .map(|_| sample_theta_prior(hyper, &chol, sigma_theta, rng))
        .collect();
    let psi_atoms = (0..n_theta)
        .map(|k| (0..levels.m(k)).map(|_| sample_psi_prior(hyper, rng)).collect())
        .collect();
    let atoms = AtomState {
        theta: theta_atoms,
        psi: psi_atoms,
        sigma_theta,
        sigma_psi,
    };
    Ok((sticks, weights, atoms))
}

/// Log-density of a response given covariates and a coefficient vector.
pub fn ln_response_density(y: f64, x: &[f64], theta: &[f64], sigma: f64) -> f64 {
    ln_normal(y, linalg::dot(x, theta), sigma * sigma)
}

/// Log-density of a covariate vector under an isotropic Gaussian atom.
pub fn ln_covariate_density(x: &[f64], mu: &[f64], sigma: f64) -> f64 {
    let var = sigma * sigma;
    x.iter().zip(mu).map(|(xl, ml)| ln_normal(*xl, *ml, var)).sum()
}

fn ln_beta_one(v: f64, alpha: f64) -> f64 {
    // Beta(1, α) density: α (1 - v)^(α - 1)
    libm::log(alpha) + (alpha - 1.0) * libm::log1p(-v)
}

/// Log-prior of sticks (given concentrations) and atoms (given scales).
pub fn log_prior(state: &EdpmState, hyper: &Hyperparams) -> Result<f64> {
    state.validate()?;
    hyper.validate(&state.levels)?;
    let d = hyper.dim();
    let n_theta = state.levels.n_theta();
    let mut total = 0.0;
    for &v in &state.sticks.theta[..n_theta - 1] {
        total += ln_beta_one(v, state.alpha_theta);
    }
    for (k, row) in state.sticks.psi.iter().enumerate() {
        for &v in &row[..row.len() - 1] {
            total += ln_beta_one(v, state.alpha_psi[k]);
        }
    }
    let chol = Cholesky::new(&hyper.c_y, d)?;
    let var_theta = state.atoms.sigma_theta * state.atoms.sigma_theta;
    for theta in &state.atoms.theta {
        let q = linalg::quad_form(&hyper.c_y, theta, &hyper.mu0);
        total += -0.5 * d as f64 * (crate::special::LN_2PI + libm::log(var_theta))
            + 0.5 * chol.ln_det()
            - 0.5 * q / var_theta;
    }
    for row in &state.atoms.psi {
        for mu in row {
            for l in 0..d {
                total += ln_normal(mu[l], hyper.m[l], hyper.c_x[l]);
            }
        }
    }
    Ok(total)
}

/// Per-observation terms `ln p_K + ln p_{J|K} + ln f(y|x, θ_K) + ln f(x|ψ_{J|K})`.
pub fn log_likelihood_terms(state: &EdpmState, data: &Dataset) -> Result<Vec<f64>> {
    state.validate()?;
    if state.assign.len() != data.len() {
        return Err(Error::Dimension("assignments do not match the dataset".into()));
    }
    if data.dim() != state.dim() {
        return Err(Error::Dimension("atom dimension does not match the dataset".into()));
    }
    let w = &state.weights;
    Ok((0..data.len())
        .map(|i| {
            let k = state.assign.theta[i];
            let j = state.assign.psi[i];
            let x = data.row(i);
            libm::log(w.theta[k])
                + libm::log(w.psi[k][j])
                + ln_response_density(data.y(i), x, &state.atoms.theta[k], state.atoms.sigma_theta)
                + ln_covariate_density(x, &state.atoms.psi[k][j], state.atoms.sigma_psi)
        })
        .collect())
}

/// Joint log-density of sticks, atoms, assignments and data, conditional on
/// the state's concentrations and noise scales.
pub fn log_joint(state: &EdpmState, data: &Dataset, hyper: &Hyperparams) -> Result<f64> {
    let prior = log_prior(state, hyper)?;
    let lik: f64 = log_likelihood_terms(state, data)?.iter().sum();
    Ok(prior + lik)
}

/// Value of the posterior-predictive regression function at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub value: f64,
    /// Set when every covariate-weighted term was zero in the log domain and
    /// the weight-only mixture mean was returned instead.
    pub underflow: bool,
}

/// `E(Y | X = x)` for a truncated state:
/// `Σ_kj p_k p_{j|k} f(x|ψ_kj) xᵀθ_k / Σ_kj p_k p_{j|k} f(x|ψ_kj)`.
pub fn expected_y_given_x(weights: &WeightState, atoms: &AtomState, x: &[f64]) -> Regression {
    let mut log_w = Vec::new();
    let mut means = Vec::new();
    let mut prior_w = Vec::new();
    for (k, row) in weights.psi.iter().enumerate() {
        let fitted = linalg::dot(x, &atoms.theta[k]);
        for (j, pj) in row.iter().enumerate() {
            let w = weights.theta[k] * pj;
            prior_w.push(w);
            means.push(fitted);
            log_w.push(libm::log(w) + ln_covariate_density(x, &atoms.psi[k][j], atoms.sigma_psi));
        }
    }
    let lse = log_sum_exp(&log_w);
    if !lse.is_finite() {
        let total: f64 = prior_w.iter().sum();
        let value = prior_w.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>() / total;
        return Regression {
            value,
            underflow: true,
        };
    }
    let value = log_w
        .iter()
        .zip(&means)
        .map(|(lw, m)| libm::exp(lw - lse) * m)
        .sum();
    Regression {
        value,
        underflow: false,
    }
}
