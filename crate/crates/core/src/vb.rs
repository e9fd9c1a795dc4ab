//! Mean-field coordinate-ascent variational inference for the truncated EDPM.
//!
//! `q` factorizes into Beta sticks (free sticks only), one categorical over
//! `(k, j)` pairs per observation, independent Gaussians per atom coordinate,
//! and Gamma (or fixed) noise precisions and concentrations. Every block
//! update is the exact coordinate optimum, so the ELBO never decreases.

use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};
use crate::model::{
    Assignments, AtomState, Dataset, EdpmState, GammaPrior, Hyperparams, StickState,
    TruncationLevels, WeightState,
};
use crate::rng;
use crate::special::{beta_entropy, digamma, gamma_entropy, gaussian_entropy, ln_gamma, LN_2PI};

/// Columns with less responsibility mass than this contribute no statistics.
pub const EMPTY_COLUMN_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFactor {
    pub a: f64,
    pub b: f64,
}

impl BetaFactor {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// `(E ln V, E ln(1 - V))`.
    pub fn expected_logs(&self) -> (f64, f64) {
        let s = digamma(self.a + self.b);
        (digamma(self.a) - s, digamma(self.b) - s)
    }
}

/// Independent Gaussians per coordinate: `mean[l]`, variance `var[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A positive scalar that is either held fixed or has a Gamma factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositiveFactor {
    Fixed(f64),
    Gamma { shape: f64, rate: f64 },
}

impl PositiveFactor {
    pub fn mean(&self) -> f64 {
        match *self {
            PositiveFactor::Fixed(v) => v,
            PositiveFactor::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn expected_ln(&self) -> f64 {
        match *self {
            PositiveFactor::Fixed(v) => libm::log(v),
            PositiveFactor::Gamma { shape, rate } => digamma(shape) - libm::log(rate),
        }
    }

    fn from_prior(prior: GammaPrior) -> Self {
        PositiveFactor::Gamma {
            shape: prior.shape,
            rate: prior.rate,
        }
    }

    fn is_fixed(&self) -> bool {
        matches!(self, PositiveFactor::Fixed(_))
    }

    /// `E ln p(value) - E ln q(value)`; zero when fixed.
    fn prior_minus_entropy_term(&self, prior: GammaPrior) -> f64 {
        match *self {
            PositiveFactor::Fixed(_) => 0.0,
            PositiveFactor::Gamma { shape, rate } => {
                let (a, b) = (prior.shape, prior.rate);
                a * libm::log(b) - ln_gamma(a) + (a - 1.0) * self.expected_ln()
                    - b * self.mean()
                    + gamma_entropy(shape, rate)
            }
        }
    }

    fn update(&mut self, prior: GammaPrior, extra_shape: f64, extra_rate: f64, factor: &'static str, index: usize) -> Result<()> {
        if self.is_fixed() {
            return Ok(());
        }
        let shape = prior.shape + extra_shape;
        let rate = prior.rate + extra_rate;
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::NumericalDegeneracy { factor, index });
        }
        *self = PositiveFactor::Gamma { shape, rate };
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Factors copied from the prior, uniform responsibilities.
    Prior,
    /// ψ-atom means seeded by greedy farthest-point covariate picks.
    KmeansLike,
    /// Uniform responsibilities mixed with seeded Dirichlet noise.
    RandomResp,
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(InitStrategy::Prior),
            "kmeans-like" => Ok(InitStrategy::KmeansLike),
            "random-resp" => Ok(InitStrategy::RandomResp),
            other => Err(Error::Config(alloc::format!("unknown init strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaviOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub strategy: InitStrategy,
    /// Hold concentrations at `hyper.alpha_theta` / `hyper.alpha_psi`.
    pub fixed_alpha: bool,
    /// Hold `(σ_θ, σ_ψ)` fixed instead of fitting Gamma precision factors.
    pub fixed_sigma: Option<(f64, f64)>,
}

impl Default for CaviOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-8,
            seed: 0,
            strategy: InitStrategy::KmeansLike,
            fixed_alpha: false,
            fixed_sigma: None,
        }
    }
}

/// Variational parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub levels: TruncationLevels,
    /// `N - 1` Beta factors.
    pub stick_theta: Vec<BetaFactor>,
    /// `M_k - 1` Beta factors per row.
    pub stick_psi: Vec<Vec<BetaFactor>>,
    /// Row-major `n x Σ M_k`, pairs ordered as [`TruncationLevels::pairs`].
    pub resp: Vec<f64>,
    pub atom_theta: Vec<GaussianFactor>,
    pub atom_psi: Vec<Vec<GaussianFactor>>,
    pub prec_theta: PositiveFactor,
    pub prec_psi: PositiveFactor,
    pub conc_theta: PositiveFactor,
    pub conc_psi: Vec<PositiveFactor>,
}

impl VariationalState {
    pub fn n_obs(&self) -> usize {
        self.resp.len() / self.levels.total_pairs()
    }

    pub fn resp_row(&self, i: usize) -> &[f64] {
        let p = self.levels.total_pairs();
        &self.resp[i * p..(i + 1) * p]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidState(alloc::format!("variational {what}")));
        let beta_ok = |f: &BetaFactor| f.a > 0.0 && f.b > 0.0 && f.a.is_finite() && f.b.is_finite();
        let pos_ok = |f: &PositiveFactor| match *f {
            PositiveFactor::Fixed(v) => v > 0.0 && v.is_finite(),
            PositiveFactor::Gamma { shape, rate } => {
                shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()
            }
        };
        if self.stick_theta.len() + 1 != self.levels.n_theta()
            || self.stick_psi.iter().enumerate().any(|(k, r)| r.len() + 1 != self.levels.m(k))
        {
            return bad("stick factor shape mismatch");
        }
        if !self.stick_theta.iter().chain(self.stick_psi.iter().flatten()).all(beta_ok) {
            return bad("Beta parameters must be positive");
        }
        if ![self.prec_theta, self.prec_psi, self.conc_theta]
            .iter()
            .chain(&self.conc_psi)
            .all(pos_ok)
        {
            return bad("Gamma parameters must be positive");
        }
        for i in 0..self.n_obs() {
            let row = self.resp_row(i);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 || row.iter().any(|r| !(*r >= 0.0)) {
                return bad("responsibility row is not a simplex");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaviResult {
    pub state: VariationalState,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// `E ln p_k` from Beta factors over the free sticks of one row.
fn expected_log_weights(sticks: &[BetaFactor]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sticks.len() + 1);
    let mut acc = 0.0;
    for f in sticks {
        let (lv, l1v) = f.expected_logs();
        out.push(acc + lv);
        acc += l1v;
    }
    out.push(acc);
    out
}

struct Moments {
    ln_w_theta: Vec<f64>,
    ln_w_psi: Vec<Vec<f64>>,
    tau_theta: f64,
    ln_tau_theta: f64,
    tau_psi: f64,
    ln_tau_psi: f64,
}

impl Moments {
    fn new(s: &VariationalState) -> Self {
        Self {
            ln_w_theta: expected_log_weights(&s.stick_theta),
            ln_w_psi: s.stick_psi.iter().map(|r| expected_log_weights(r)).collect(),
            tau_theta: s.prec_theta.mean(),
            ln_tau_theta: s.prec_theta.expected_ln(),
            tau_psi: s.prec_psi.mean(),
            ln_tau_psi: s.prec_psi.expected_ln(),
        }
    }
}

/// `E (y - xᵀθ)²` under a diagonal Gaussian factor for θ.
fn expected_sq_residual(y: f64, x: &[f64], f: &GaussianFactor) -> f64 {
    let r = y - linalg::dot(x, &f.mean);
    r * r + x.iter().zip(&f.var).map(|(xl, v)| xl * xl * v).sum::<f64>()
}

/// `Σ_l E (x_l - μ_l)²` under a diagonal Gaussian factor for μ.
fn expected_sq_distance(x: &[f64], f: &GaussianFactor) -> f64 {
    x.iter()
        .zip(f.mean.iter().zip(&f.var))
        .map(|(xl, (m, v))| (xl - m) * (xl - m) + v)
        .sum()
}

/// `E (θ - μ0)ᵀ C (θ - μ0)`.
fn expected_prior_quad(f: &GaussianFactor, hyper: &Hyperparams) -> f64 {
    let d = hyper.dim();
    linalg::quad_form(&hyper.c_y, &f.mean, &hyper.mu0)
        + (0..d).map(|l| hyper.c_y[l * d + l] * f.var[l]).sum::<f64>()
}

fn ln_lik_y(y: f64, x: &[f64], f: &GaussianFactor, mo: &Moments) -> f64 {
    0.5 * (mo.ln_tau_theta - LN_2PI) - 0.5 * mo.tau_theta * expected_sq_residual(y, x, f)
}

fn ln_lik_x(x: &[f64], f: &GaussianFactor, mo: &Moments) -> f64 {
    0.5 * x.len() as f64 * (mo.ln_tau_psi - LN_2PI) - 0.5 * mo.tau_psi * expected_sq_distance(x, f)
}

fn check_shapes(data: &Dataset, state: &VariationalState, hyper: &Hyperparams) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if hyper.dim() != data.dim() || state.atom_theta.first().map(|f| f.mean.len()) != Some(data.dim()) {
        return Err(Error::Dimension("data, hyperparameters and factors disagree on d".into()));
    }
    if state.n_obs() != data.len() || state.resp.len() != data.len() * state.levels.total_pairs() {
        return Err(Error::Dimension("responsibility table does not match the data".into()));
    }
    Ok(())
}

fn update_resp(data: &Dataset, s: &mut VariationalState) -> Result<()> {
    let mo = Moments::new(s);
    let levels = s.levels.clone();
    let p = levels.total_pairs();
    let mut ly = vec![0.0; levels.n_theta()];
    for i in 0..data.len() {
        let x = data.row(i);
        let y = data.y(i);
        for (k, l) in ly.iter_mut().enumerate() {
            *l = ln_lik_y(y, x, &s.atom_theta[k], &mo);
        }
        let row = &mut s.resp[i * p..(i + 1) * p];
        for (c, (k, j)) in levels.pairs().enumerate() {
            row[c] = mo.ln_w_theta[k] + mo.ln_w_psi[k][j] + ly[k] + ln_lik_x(x, &s.atom_psi[k][j], &mo);
        }
        let lse = crate::special::softmax_in_place(row);
        if !lse.is_finite() || row.iter().any(|r| !r.is_finite()) {
            return Err(Error::NumericalDegeneracy { factor: "resp", index: i });
        }
    }
    Ok(())
}

/// Per-pair responsibility mass `n_kj`, with near-empty pairs zeroed.
fn pair_mass(data_len: usize, s: &VariationalState) -> Vec<Vec<f64>> {
    let p = s.levels.total_pairs();
    let mut flat = vec![0.0; p];
    for i in 0..data_len {
        for (c, r) in s.resp[i * p..(i + 1) * p].iter().enumerate() {
            flat[c] += r;
        }
    }
    let offsets = s.levels.offsets();
    (0..s.levels.n_theta())
        .map(|k| {
            flat[offsets[k]..offsets[k] + s.levels.m(k)]
                .iter()
                .map(|&m| if m < EMPTY_COLUMN_MASS { 0.0 } else { m })
                .collect()
        })
        .collect()
}

/// `R_ik = Σ_j r_{i,(k,j)}`, row-major `n x N`, with near-empty columns zeroed.
fn theta_resp(data_len: usize, s: &VariationalState) -> Vec<f64> {
    let n_theta = s.levels.n_theta();
    let p = s.levels.total_pairs();
    let offsets = s.levels.offsets();
    let mut out = vec![0.0; data_len * n_theta];
    let mut col = vec![0.0; n_theta];
    for i in 0..data_len {
        let row = &s.resp[i * p..(i + 1) * p];
        for k in 0..n_theta {
            let v: f64 = row[offsets[k]..offsets[k] + s.levels.m(k)].iter().sum();
            out[i * n_theta + k] = v;
            col[k] += v;
        }
    }
    for (k, c) in col.iter().enumerate() {
        if *c < EMPTY_COLUMN_MASS {
            for i in 0..data_len {
                out[i * n_theta + k] = 0.0;
            }
        }
    }
    out
}

fn update_stick_row(factors: &mut [BetaFactor], mass: &[f64], alpha: f64) {
    let mut tail: f64 = mass.iter().sum();
    for (f, m) in factors.iter_mut().zip(mass) {
        tail = (tail - m).max(0.0);
        *f = BetaFactor {
            a: 1.0 + m,
            b: alpha + tail,
        };
    }
}

fn update_sticks(data_len: usize, s: &mut VariationalState) {
    let nkj = pair_mass(data_len, s);
    let nk: Vec<f64> = nkj.iter().map(|r| r.iter().sum()).collect();
    let a_theta = s.conc_theta.mean();
    update_stick_row(&mut s.stick_theta, &nk, a_theta);
    for k in 0..s.levels.n_theta() {
        let a = s.conc_psi[k].mean();
        update_stick_row(&mut s.stick_psi[k], &nkj[k], a);
    }
}

fn update_theta_atoms(data: &Dataset, s: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
    let d = data.dim();
    let n_theta = s.levels.n_theta();
    let r = theta_resp(data.len(), s);
    let tau = s.prec_theta.mean();
    let c_mu0 = linalg::mat_vec(&hyper.c_y, &hyper.mu0);
    for k in 0..n_theta {
        let mut a = hyper.c_y.clone();
        let mut rhs = c_mu0.clone();
        for i in 0..data.len() {
            let w = r[i * n_theta + k];
            if w == 0.0 {
                continue;
            }
            let x = data.row(i);
            let y = data.y(i);
            for p in 0..d {
                rhs[p] += w * x[p] * y;
                for q in 0..d {
                    a[p * d + q] += w * x[p] * x[q];
                }
            }
        }
        let f = &mut s.atom_theta[k];
        for l in 0..d {
            let all = a[l * d + l];
            let cross: f64 = (0..d).filter(|&q| q != l).map(|q| a[l * d + q] * f.mean[q]).sum();
            f.mean[l] = (rhs[l] - cross) / all;
            f.var[l] = 1.0 / (tau * all);
            if !(f.mean[l].is_finite() && f.var[l].is_finite() && f.var[l] > 0.0) {
                return Err(Error::NumericalDegeneracy { factor: "atom_theta", index: k });
            }
        }
    }
    Ok(())
}

fn update_psi_atoms(data: &Dataset, s: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
    let d = data.dim();
    let p = s.levels.total_pairs();
    let nkj = pair_mass(data.len(), s);
    let offsets = s.levels.offsets();
    let mut sums = vec![vec![0.0; d]; p];
    for i in 0..data.len() {
        let x = data.row(i);
        for (c, r) in s.resp[i * p..(i + 1) * p].iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            for l in 0..d {
                sums[c][l] += r * x[l];
            }
        }
    }
    let tau = s.prec_psi.mean();
    for k in 0..s.levels.n_theta() {
        for j in 0..s.levels.m(k) {
            let mass = nkj[k][j];
            let c = offsets[k] + j;
            let f = &mut s.atom_psi[k][j];
            for l in 0..d {
                let stat = if mass == 0.0 { 0.0 } else { sums[c][l] };
                let prec = tau * mass + 1.0 / hyper.c_x[l];
                f.var[l] = 1.0 / prec;
                f.mean[l] = (tau * stat + hyper.m[l] / hyper.c_x[l]) / prec;
                if !(f.mean[l].is_finite() && f.var[l] > 0.0) {
                    return Err(Error::NumericalDegeneracy { factor: "atom_psi", index: c });
                }
            }
        }
    }
    Ok(())
}

fn update_precisions(data: &Dataset, s: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
    let n = data.len() as f64;
    let d = data.dim() as f64;
    let n_theta = s.levels.n_theta();
    let p = s.levels.total_pairs();
    let r = theta_resp(data.len(), s);
    let mut ss_y = 0.0;
    let mut ss_x = 0.0;
    for i in 0..data.len() {
        let x = data.row(i);
        for k in 0..n_theta {
            let w = r[i * n_theta + k];
            if w > 0.0 {
                ss_y += w * expected_sq_residual(data.y(i), x, &s.atom_theta[k]);
            }
        }
        for (c, (k, j)) in s.levels.pairs().enumerate() {
            let w = s.resp[i * p + c];
            if w > 0.0 {
                ss_x += w * expected_sq_distance(x, &s.atom_psi[k][j]);
            }
        }
    }
    let ss_prior: f64 = s.atom_theta.iter().map(|f| expected_prior_quad(f, hyper)).sum();
    s.prec_theta.update(
        hyper.precision_prior_theta,
        0.5 * n + 0.5 * n_theta as f64 * d,
        0.5 * ss_y + 0.5 * ss_prior,
        "prec_theta",
        0,
    )?;
    s.prec_psi
        .update(hyper.precision_prior_psi, 0.5 * n * d, 0.5 * ss_x, "prec_psi", 0)
}

fn update_concentrations(s: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
    let lc = |row: &[BetaFactor]| -> f64 { row.iter().map(|f| f.expected_logs().1).sum() };
    let row_theta = lc(&s.stick_theta);
    s.conc_theta.update(
        hyper.alpha_prior_theta,
        s.stick_theta.len() as f64,
        -row_theta,
        "conc_theta",
        0,
    )?;
    for k in 0..s.levels.n_theta() {
        let row = lc(&s.stick_psi[k]);
        let len = s.stick_psi[k].len() as f64;
        s.conc_psi[k].update(hyper.alpha_prior_psi, len, -row, "conc_psi", k)?;
    }
    Ok(())
}

fn update_non_resp(data: &Dataset, s: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
    update_sticks(data.len(), s);
    update_theta_atoms(data, s, hyper)?;
    update_psi_atoms(data, s, hyper)?;
    update_precisions(data, s, hyper)?;
    update_concentrations(s, hyper)
}

/// One sweep: responsibilities, θ-sticks, ψ-sticks, θ-atoms, ψ-atoms,
/// precisions, concentrations.
pub fn cavi_step(data: &Dataset, state: &VariationalState, hyper: &Hyperparams) -> Result<VariationalState> {
    check_shapes(data, state, hyper)?;
    let mut s = state.clone();
    update_resp(data, &mut s)?;
    update_non_resp(data, &mut s, hyper)?;
    Ok(s)
}

fn check_modes(hyper: &Hyperparams, options: &CaviOptions) -> Result<()> {
    if !options.fixed_alpha && !(hyper.alpha_prior_theta.is_proper() && hyper.alpha_prior_psi.is_proper()) {
        return Err(Error::Config(
            "variational concentrations need proper Gamma hyperpriors (or fixed_alpha)".into(),
        ));
    }
    match options.fixed_sigma {
        Some((a, b)) if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) => {
            Err(Error::Config("fixed noise scales must be positive".into()))
        }
        None if !(hyper.precision_prior_theta.is_proper() && hyper.precision_prior_psi.is_proper()) => Err(
            Error::Config("variational precisions need proper Gamma priors (or fixed_sigma)".into()),
        ),
        _ => Ok(()),
    }
}

/// Builds an initial variational state.
pub fn init_variational(
    data: &Dataset,
    levels: &TruncationLevels,
    hyper: &Hyperparams,
    options: &CaviOptions,
) -> Result<VariationalState> {
    hyper.validate(levels)?;
    check_modes(hyper, options)?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if data.dim() != hyper.dim() {
        return Err(Error::Dimension("data and hyperparameters disagree on d".into()));
    }
    let d = data.dim();
    let n = data.len();
    let n_theta = levels.n_theta();
    let p = levels.total_pairs();

    let (conc_theta, conc_psi) = if options.fixed_alpha {
        (
            PositiveFactor::Fixed(hyper.alpha_theta),
            hyper.alpha_psi.iter().map(|a| PositiveFactor::Fixed(*a)).collect(),
        )
    } else {
        (
            PositiveFactor::from_prior(hyper.alpha_prior_theta),
            vec![PositiveFactor::from_prior(hyper.alpha_prior_psi); n_theta],
        )
    };
    let (prec_theta, prec_psi) = match options.fixed_sigma {
        Some((st, sp)) => (
            PositiveFactor::Fixed(1.0 / (st * st)),
            PositiveFactor::Fixed(1.0 / (sp * sp)),
        ),
        None => (
            PositiveFactor::from_prior(hyper.precision_prior_theta),
            PositiveFactor::from_prior(hyper.precision_prior_psi),
        ),
    };
    let stick_row = |len: usize, alpha: f64| vec![BetaFactor { a: 1.0, b: alpha }; len - 1];
    let tau = prec_theta.mean();
    let atom_theta = vec![
        GaussianFactor {
            mean: hyper.mu0.clone(),
            var: (0..d).map(|l| 1.0 / (tau * hyper.c_y[l * d + l])).collect(),
        };
        n_theta
    ];
    let prior_psi = GaussianFactor {
        mean: hyper.m.clone(),
        var: hyper.c_x.clone(),
    };
    let mut state = VariationalState {
        levels: levels.clone(),
        stick_theta: stick_row(n_theta, conc_theta.mean()),
        stick_psi: (0..n_theta).map(|k| stick_row(levels.m(k), conc_psi[k].mean())).collect(),
        resp: vec![1.0 / p as f64; n * p],
        atom_theta,
        atom_psi: levels.m_all().iter().map(|&m| vec![prior_psi.clone(); m]).collect(),
        prec_theta,
        prec_psi,
        conc_theta,
        conc_psi,
    };

    let mut r = rng::seeded(options.seed);
    match options.strategy {
        InitStrategy::Prior => {}
        InitStrategy::KmeansLike => {
            // Covariate clusters, largest first, are dealt round-robin over
            // θ-rows so the biggest groups land in distinct θ-clusters.
            let max_m = levels.m_all().iter().copied().max().unwrap_or(1);
            let order: Vec<(usize, usize)> = (0..max_m)
                .flat_map(|j| (0..n_theta).filter(move |&k| j < levels.m(k)).map(move |k| (k, j)))
                .collect();
            let seeds = farthest_points(data, p, r.random_range(0..n));
            let (centers, labels) = lloyd(data, seeds, KMEANS_ITERS);
            let mut sizes = vec![0usize; centers.len()];
            labels.iter().for_each(|&c| sizes[c] += 1);
            let mut by_size: Vec<usize> = (0..centers.len()).collect();
            by_size.sort_by(|a, b| sizes[*b].cmp(&sizes[*a]));
            let offsets = levels.offsets();
            let mut column = vec![0; centers.len()];
            for (&(k, j), &c) in order.iter().zip(&by_size) {
                state.atom_psi[k][j].mean = centers[c].clone();
                column[c] = offsets[k] + j;
            }
            let floor = KMEANS_SMOOTHING / p as f64;
            for (i, &c) in labels.iter().enumerate() {
                let row = &mut state.resp[i * p..(i + 1) * p];
                row.iter_mut().for_each(|v| *v = floor);
                row[column[c]] += 1.0 - KMEANS_SMOOTHING;
            }
            update_non_resp(data, &mut state, hyper)?;
            sort_by_mass(data.len(), &mut state);
            update_non_resp(data, &mut state, hyper)?;
        }
        InitStrategy::RandomResp => {
            let g = Gamma::new(1.0, 1.0).expect("unit Gamma");
            for i in 0..n {
                let row = &mut state.resp[i * p..(i + 1) * p];
                let draws: Vec<f64> = (0..p).map(|_| g.sample(&mut r)).collect();
                let total: f64 = draws.iter().sum();
                for (c, w) in row.iter_mut().zip(draws) {
                    *c = 0.5 / p as f64 + 0.5 * w / total;
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|c| *c /= s);
            }
            update_non_resp(data, &mut state, hyper)?;
        }
    }
    Ok(state)
}

/// Relabels ψ-columns within each row, and θ-rows among rows sharing the
/// same `M_k`, in decreasing order of responsibility mass. The level
/// sequence is unchanged. Sticks and concentrations are left for the caller
/// to refresh.
fn sort_by_mass(data_len: usize, s: &mut VariationalState) {
    let nkj = pair_mass(data_len, s);
    let nk: Vec<f64> = nkj.iter().map(|r| r.iter().sum()).collect();
    let mut rows: Vec<usize> = (0..nk.len()).collect();
    let mut sizes: Vec<usize> = s.levels.m_all().to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    for m in sizes {
        let slots: Vec<usize> = (0..nk.len()).filter(|&k| s.levels.m(k) == m).collect();
        let mut members = slots.clone();
        members.sort_by(|a, b| nk[*b].total_cmp(&nk[*a]));
        for (slot, k) in slots.into_iter().zip(members) {
            rows[slot] = k;
        }
    }
    let cols: Vec<Vec<usize>> = rows
        .iter()
        .map(|&k| {
            let mut c: Vec<usize> = (0..nkj[k].len()).collect();
            c.sort_by(|a, b| nkj[k][*b].total_cmp(&nkj[k][*a]));
            c
        })
        .collect();
    let old_offsets = s.levels.offsets();
    let p = s.levels.total_pairs();
    let mut resp = vec![0.0; s.resp.len()];
    for i in 0..data_len {
        let mut c = 0;
        for (new_k, &k) in rows.iter().enumerate() {
            for &j in &cols[new_k] {
                resp[i * p + c] = s.resp[i * p + old_offsets[k] + j];
                c += 1;
            }
        }
    }
    s.resp = resp;
    s.atom_theta = rows.iter().map(|&k| s.atom_theta[k].clone()).collect();
    s.atom_psi = rows
        .iter()
        .zip(&cols)
        .map(|(&k, c)| c.iter().map(|&j| s.atom_psi[k][j].clone()).collect())
        .collect();
    s.stick_psi = rows.iter().map(|&k| s.stick_psi[k].clone()).collect();
    s.conc_psi = rows.iter().map(|&k| s.conc_psi[k]).collect();
}

const KMEANS_ITERS: usize = 10;
const KMEANS_SMOOTHING: f64 = 0.1;

/// A few Lloyd iterations on the covariates. Returns centers and labels.
fn lloyd(data: &Dataset, seeds: Vec<usize>, iters: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = data.dim();
    let mut centers: Vec<Vec<f64>> = seeds.iter().map(|&i| data.row(i).to_vec()).collect();
    let mut labels = vec![0; data.len()];
    for _ in 0..=iters {
        for (i, label) in labels.iter_mut().enumerate() {
            let x = data.row(i);
            *label = (0..centers.len())
                .map(|c| (c, x.iter().zip(&centers[c]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
                .0;
        }
        let mut sums = vec![vec![0.0; d]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] > 0 {
                *center = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    (centers, labels)
}

/// Greedy farthest-point selection of `count` row indices starting at `first`.
/// Cycles through already-picked rows once every row has been used.
fn farthest_points(data: &Dataset, count: usize, first: usize) -> Vec<usize> {
    let n = data.len();
    let dist = |a: usize, b: usize| -> f64 {
        data.row(a).iter().zip(data.row(b)).map(|(u, v)| (u - v) * (u - v)).sum()
    };
    let mut picks = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, first)).collect();
    while picks.len() < count.min(n) {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        picks.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(i, next));
        }
    }
    let distinct = picks.len();
    for t in distinct..count {
        picks.push(picks[t % distinct]);
    }
    picks
}

/// Evidence lower bound `E_q ln p(data, latents) - E_q ln q`.
pub fn elbo(data: &Dataset, state: &VariationalState, hyper: &Hyperparams) -> Result<f64> {
    check_shapes(data, state, hyper)?;
    let s = state;
    let mo = Moments::new(s);
    let d = data.dim();
    let p = s.levels.total_pairs();
    let mut total = 0.0;

    // Sticks: E ln Beta(V | 1, α) = E ln α + (E α - 1) E ln(1 - V), plus entropy.
    let stick_terms = |row: &[BetaFactor], conc: &PositiveFactor| -> f64 {
        row.iter()
            .map(|f| {
                conc.expected_ln() + (conc.mean() - 1.0) * f.expected_logs().1 + beta_entropy(f.a, f.b)
            })
            .sum()
    };
    total += stick_terms(&s.stick_theta, &s.conc_theta);
    for k in 0..s.levels.n_theta() {
        total += stick_terms(&s.stick_psi[k], &s.conc_psi[k]);
    }
    total += s.conc_theta.prior_minus_entropy_term(hyper.alpha_prior_theta);
    for c in &s.conc_psi {
        total += c.prior_minus_entropy_term(hyper.alpha_prior_psi);
    }
    total += s.prec_theta.prior_minus_entropy_term(hyper.precision_prior_theta);
    total += s.prec_psi.prior_minus_entropy_term(hyper.precision_prior_psi);

    // θ-atoms: N(μ0, (τ C)⁻¹).
    let ln_det_c = Cholesky::new(&hyper.c_y, d)?.ln_det();
    for f in &s.atom_theta {
        total += 0.5 * (ln_det_c + d as f64 * (mo.ln_tau_theta - LN_2PI))
            - 0.5 * mo.tau_theta * expected_prior_quad(f, hyper);
        total += f.var.iter().map(|v| gaussian_entropy(*v)).sum::<f64>();
    }
    // ψ-atoms: independent N(m_l, c_l).
    for f in s.atom_psi.iter().flatten() {
        for l in 0..d {
            let c = hyper.c_x[l];
            let dm = f.mean[l] - hyper.m[l];
            total += -0.5 * (LN_2PI + libm::log(c)) - 0.5 * (dm * dm + f.var[l]) / c;
            total += gaussian_entropy(f.var[l]);
        }
    }
    // Assignments and likelihood.
    for i in 0..data.len() {
        let x = data.row(i);
        let y = data.y(i);
        let row = &s.resp[i * p..(i + 1) * p];
        let mut ly_k = f64::NAN;
        let mut last_k = usize::MAX;
        for (c, (k, j)) in s.levels.pairs().enumerate() {
            let r = row[c];
            if r == 0.0 {
                continue;
            }
            if k != last_k {
                ly_k = ln_lik_y(y, x, &s.atom_theta[k], &mo);
                last_k = k;
            }
            total += r
                * (mo.ln_w_theta[k] + mo.ln_w_psi[k][j] + ly_k + ln_lik_x(x, &s.atom_psi[k][j], &mo)
                    - libm::log(r));
        }
    }
    Ok(total)
}

/// Iterates [`cavi_step`] until the relative ELBO change drops below
/// `rel_tol` or `max_iters` sweeps have run.
pub fn run_cavi(
    data: &Dataset,
    levels: &TruncationLevels,
    hyper: &Hyperparams,
    options: &CaviOptions,
) -> Result<CaviResult> {
    if options.max_iters == 0 || !(options.rel_tol > 0.0) {
        return Err(Error::Config("max_iters must be >= 1 and rel_tol > 0".into()));
    }
    let mut state = init_variational(data, levels, hyper, options)?;
    let mut trace = Vec::with_capacity(options.max_iters);
    let mut converged = false;
    for _ in 0..options.max_iters {
        state = cavi_step(data, &state, hyper)?;
        let value = elbo(data, &state, hyper)?;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if libm::fabs(value - prev) < options.rel_tol * libm::fabs(value) {
                converged = true;
            }
        }
        trace.push(value);
        if converged {
            break;
        }
    }
    Ok(CaviResult {
        iterations: trace.len(),
        state,
        elbo_trace: trace,
        converged,
    })
}

/// Posterior means of the concentration factors.
pub fn estimate_alphas(state: &VariationalState) -> (f64, Vec<f64>) {
    (state.conc_theta.mean(), state.conc_psi.iter().map(|c| c.mean()).collect())
}

/// Point state for starting a Gibbs chain: factor means, `σ = (E τ)^{-1/2}`,
/// and row-wise responsibility argmax (ties to the smallest index).
pub fn warm_start_gibbs(state: &VariationalState) -> Result<EdpmState> {
    let levels = state.levels.clone();
    let row = |f: &[BetaFactor]| -> Vec<f64> {
        f.iter().map(BetaFactor::mean).chain(core::iter::once(1.0)).collect()
    };
    let sticks = StickState {
        theta: row(&state.stick_theta),
        psi: state.stick_psi.iter().map(|r| row(r)).collect(),
    };
    let weights = WeightState::from_sticks(&sticks)?;
    let pairs: Vec<(usize, usize)> = levels.pairs().collect();
    let mut assign = Assignments {
        theta: Vec::with_capacity(state.n_obs()),
        psi: Vec::with_capacity(state.n_obs()),
    };
    for i in 0..state.n_obs() {
        let r = state.resp_row(i);
        let best = r
            .iter()
            .enumerate()
            .fold(0, |b, (c, v)| if *v > r[b] { c } else { b });
        assign.theta.push(pairs[best].0);
        assign.psi.push(pairs[best].1);
    }
    let (alpha_theta, alpha_psi) = estimate_alphas(state);
    let out = EdpmState {
        sticks,
        weights,
        atoms: AtomState {
            theta: state.atom_theta.iter().map(|f| f.mean.clone()).collect(),
            psi: state
                .atom_psi
                .iter()
                .map(|r| r.iter().map(|f| f.mean.clone()).collect())
                .collect(),
            sigma_theta: 1.0 / libm::sqrt(state.prec_theta.mean()),
            sigma_psi: 1.0 / libm::sqrt(state.prec_psi.mean()),
        },
        assign,
        alpha_theta,
        alpha_psi,
        levels,
    };
    out.validate()?;
    Ok(out)
}
