//! Blocked Gibbs sampler for the truncated Gaussian EDPM.
//!
//! Block order per sweep: assignments, θ-sticks, ψ-sticks, atoms,
//! precisions, concentrations.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};
use crate::model::{
    draw_truncated_edp, expected_y_given_x, ln_covariate_density, sample_free_stick, sample_gamma,
    sample_psi_prior, Assignments, AtomState, Dataset, EdpmState, GammaPrior, Hyperparams,
    StickState, TruncationLevels,
};

/// Draws `(K_i, J_i)` for every observation. Returns the assignments and the
/// number of `(i, k, j)` log-weights scored.
pub fn sample_assignments<R: Rng + ?Sized>(
    state: &EdpmState,
    data: &Dataset,
    rng: &mut R,
) -> Result<(Assignments, u64)> {
    let levels = &state.levels;
    let pairs = levels.total_pairs();
    let ln_pair_weight: Vec<f64> = levels
        .pairs()
        .map(|(k, j)| libm::log(state.weights.theta[k]) + libm::log(state.weights.psi[k][j]))
        .collect();
    let var_y = state.atoms.sigma_theta * state.atoms.sigma_theta;
    let mut theta = Vec::with_capacity(data.len());
    let mut psi = Vec::with_capacity(data.len());
    let mut log_w = vec![0.0; pairs];
    let mut scored = 0u64;
    for i in 0..data.len() {
        let x = data.row(i);
        let y = data.y(i);
        let mut idx = 0;
        for k in 0..levels.n_theta() {
            let r = y - linalg::dot(x, &state.atoms.theta[k]);
            let resp = -0.5 * (crate::special::LN_2PI + libm::log(var_y)) - 0.5 * r * r / var_y;
            for j in 0..levels.m(k) {
                log_w[idx] = ln_pair_weight[idx]
                    + resp
                    + ln_covariate_density(x, &state.atoms.psi[k][j], state.atoms.sigma_psi);
                idx += 1;
            }
        }
        scored += pairs as u64;
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::DegenerateLikelihood { observation: i });
        }
        let total: f64 = log_w.iter().map(|lw| libm::exp(lw - max)).sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = pairs - 1;
        for (c, lw) in log_w.iter().enumerate() {
            let w = libm::exp(lw - max);
            if u < w {
                chosen = c;
                break;
            }
            u -= w;
        }
        // Rounding can leave `u` just above the final cumulative weight; fall
        // back to the last pair with positive weight.
        if chosen == pairs - 1 && log_w[chosen] == f64::NEG_INFINITY {
            chosen = log_w.iter().rposition(|lw| *lw > f64::NEG_INFINITY).unwrap_or(0);
        }
        let (k, j) = levels.pairs().nth(chosen).expect("index within pairs");
        theta.push(k);
        psi.push(j);
    }
    Ok((Assignments { theta, psi }, scored))
}

/// `V_k ~ Beta(n_k + 1, α + Σ_{h>k} n_h)` for every free stick; last stick is 1.
pub fn sample_sticks<R: Rng + ?Sized>(counts: &[usize], alpha: f64, rng: &mut R) -> Vec<f64> {
    let mut tail: usize = counts.iter().sum();
    let mut row = Vec::with_capacity(counts.len());
    for &c in &counts[..counts.len() - 1] {
        tail -= c;
        row.push(sample_free_stick(c as f64 + 1.0, alpha + tail as f64, rng));
    }
    row.push(1.0);
    row
}

fn free_log_complement(row: &[f64], block: &'static str, index: usize) -> Result<f64> {
    let mut total = 0.0;
    for &v in &row[..row.len() - 1] {
        if v >= 1.0 {
            return Err(Error::InfiniteRate { block, row: index });
        }
        total += libm::log1p(-v);
    }
    Ok(total)
}

/// `α^θ ~ Gamma(a + N - 1, b - Σ_{k<N} ln(1 - V_k))`, and per row
/// `α_k ~ Gamma(a + M_k - 1, b - Σ_{j<M_k} ln(1 - V_{j|k}))`.
/// The sums run over free sticks only.
pub fn sample_alphas<R: Rng + ?Sized>(
    sticks: &StickState,
    prior_theta: GammaPrior,
    prior_psi: GammaPrior,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let lc = free_log_complement(&sticks.theta, "theta", 0)?;
    let shape = prior_theta.shape + (sticks.theta.len() - 1) as f64;
    let alpha_theta = sample_gamma(shape, prior_theta.rate - lc, rng)?;
    let alpha_psi = sticks
        .psi
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let lc = free_log_complement(row, "psi", k)?;
            sample_gamma(prior_psi.shape + (row.len() - 1) as f64, prior_psi.rate - lc, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((alpha_theta, alpha_psi))
}

/// Draws θ-atoms and ψ-atoms from their full conditionals given the current
/// noise scales. Empty clusters draw from the base measure.
pub fn sample_atoms<R: Rng + ?Sized>(
    data: &Dataset,
    assign: &Assignments,
    levels: &TruncationLevels,
    hyper: &Hyperparams,
    sigma_theta: f64,
    sigma_psi: f64,
    rng: &mut R,
) -> Result<AtomState> {
    let d = hyper.dim();
    let n_theta = levels.n_theta();
    let mut gram = vec![vec![0.0; d * d]; n_theta];
    let mut xty = vec![vec![0.0; d]; n_theta];
    let mut sum_x: Vec<Vec<Vec<f64>>> = levels.m_all().iter().map(|&m| vec![vec![0.0; d]; m]).collect();
    let (_, nkj) = assign.counts(levels);
    for i in 0..data.len() {
        let (k, j) = (assign.theta[i], assign.psi[i]);
        let x = data.row(i);
        let y = data.y(i);
        for a in 0..d {
            xty[k][a] += x[a] * y;
            sum_x[k][j][a] += x[a];
            for b in 0..d {
                gram[k][a * d + b] += x[a] * x[b];
            }
        }
    }
    let c_mu0 = linalg::mat_vec(&hyper.c_y, &hyper.mu0);
    let mut theta = Vec::with_capacity(n_theta);
    for k in 0..n_theta {
        let precision: Vec<f64> = gram[k].iter().zip(&hyper.c_y).map(|(g, c)| g + c).collect();
        let chol = Cholesky::new(&precision, d)?;
        let rhs: Vec<f64> = xty[k].iter().zip(&c_mu0).map(|(a, b)| a + b).collect();
        let mean = chol.solve(&rhs);
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let dev = chol.backward(&z);
        theta.push(mean.iter().zip(dev).map(|(m, e)| m + sigma_theta * e).collect());
    }
    let var_psi = sigma_psi * sigma_psi;
    let psi = (0..n_theta)
        .map(|k| {
            (0..levels.m(k))
                .map(|j| {
                    if nkj[k][j] == 0 {
                        return sample_psi_prior(hyper, rng);
                    }
                    (0..d)
                        .map(|l| {
                            let prec = nkj[k][j] as f64 / var_psi + 1.0 / hyper.c_x[l];
                            let mean =
                                (sum_x[k][j][l] / var_psi + hyper.m[l] / hyper.c_x[l]) / prec;
                            let z: f64 = rng.sample(StandardNormal);
                            mean + z / libm::sqrt(prec)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(AtomState {
        theta,
        psi,
        sigma_theta,
        sigma_psi,
    })
}

/// Draws `(σ_θ, σ_ψ)` through their precisions.
///
/// `σ_θ⁻² ~ Gamma(a + n/2 + N d/2, b + Σ_i r_i²/2 + Σ_k (θ_k - μ0)ᵀ C_y (θ_k - μ0)/2)`;
/// the θ-atom terms appear because the base measure scales with `σ_θ²`.
/// `σ_ψ⁻² ~ Gamma(a + n d/2, b + Σ_{i,l} (x_il - μ_{K_i J_i l})²/2)`.
pub fn sample_precisions<R: Rng + ?Sized>(
    data: &Dataset,
    state: &EdpmState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let d = hyper.dim() as f64;
    let n = data.len() as f64;
    let mut ss_y = 0.0;
    let mut ss_x = 0.0;
    for i in 0..data.len() {
        let (k, j) = (state.assign.theta[i], state.assign.psi[i]);
        let x = data.row(i);
        let r = data.y(i) - linalg::dot(x, &state.atoms.theta[k]);
        ss_y += r * r;
        for (xl, ml) in x.iter().zip(&state.atoms.psi[k][j]) {
            ss_x += (xl - ml) * (xl - ml);
        }
    }
    let ss_prior: f64 = state
        .atoms
        .theta
        .iter()
        .map(|t| linalg::quad_form(&hyper.c_y, t, &hyper.mu0))
        .sum();
    let pt = hyper.precision_prior_theta;
    let pp = hyper.precision_prior_psi;
    let n_theta = state.levels.n_theta() as f64;
    let tau_theta = sample_gamma(
        pt.shape + 0.5 * n + 0.5 * n_theta * d,
        pt.rate + 0.5 * ss_y + 0.5 * ss_prior,
        rng,
    )?;
    let tau_psi = sample_gamma(pp.shape + 0.5 * n * d, pp.rate + 0.5 * ss_x, rng)?;
    Ok((1.0 / libm::sqrt(tau_theta), 1.0 / libm::sqrt(tau_psi)))
}

/// Per-sweep bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepStats {
    /// `(i, k, j)` assignment log-weights evaluated: `n · Σ_k M_k`.
    pub scored: u64,
}

/// One full blocked Gibbs sweep.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &EdpmState,
    data: &Dataset,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<EdpmState> {
    gibbs_sweep_with_stats(state, data, hyper, rng).map(|(s, _)| s)
}

pub fn gibbs_sweep_with_stats<R: Rng + ?Sized>(
    state: &EdpmState,
    data: &Dataset,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<(EdpmState, SweepStats)> {
    let levels = &state.levels;
    let mut next = state.clone();
    let (assign, scored) =
        sample_assignments(&next, data, rng).map_err(|e| e.in_block("assignments"))?;
    next.assign = assign;
    let (nk, nkj) = next.assign.counts(levels);
    next.sticks.theta = sample_sticks(&nk, next.alpha_theta, rng);
    for (k, counts) in nkj.iter().enumerate() {
        next.sticks.psi[k] = sample_sticks(counts, next.alpha_psi[k], rng);
    }
    next.refresh_weights().map_err(|e| e.in_block("sticks"))?;
    next.atoms = sample_atoms(
        data,
        &next.assign,
        levels,
        hyper,
        next.atoms.sigma_theta,
        next.atoms.sigma_psi,
        rng,
    )
    .map_err(|e| e.in_block("atoms"))?;
    let (st, sp) =
        sample_precisions(data, &next, hyper, rng).map_err(|e| e.in_block("precisions"))?;
    next.atoms.sigma_theta = st;
    next.atoms.sigma_psi = sp;
    let (at, ap) = sample_alphas(
        &next.sticks,
        hyper.alpha_prior_theta,
        hyper.alpha_prior_psi,
        rng,
    )
    .map_err(|e| e.in_block("alphas"))?;
    next.alpha_theta = at;
    next.alpha_psi = ap;
    Ok((next, SweepStats { scored }))
}

/// Chain length, burn-in, thinning and the covariate points at which `E(Y|X)`
/// is recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub probe_points: Vec<Vec<f64>>,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config("iterations must exceed burn_in".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Statistics recorded at one kept iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// One-based sweep index.
    pub iteration: usize,
    pub alpha_theta: f64,
    pub alpha_psi: Vec<f64>,
    pub occupied_theta: usize,
    pub occupied_pairs: usize,
    /// `E(Y|X)` at each probe point.
    pub regression: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainTrace {
    pub records: Vec<TraceRecord>,
    /// Assignment log-weights scored per sweep.
    pub scored_per_sweep: u64,
}

impl ChainTrace {
    /// `E(Y|X)` trace at probe `p`.
    pub fn regression_series(&self, p: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.regression[p]).collect()
    }
}

/// A chain that stopped early, with everything recorded up to the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("chain failed after {} kept records: {source}", partial.records.len())]
pub struct ChainFailure {
    pub partial: ChainTrace,
    #[source]
    pub source: Error,
}

impl From<ChainFailure> for Error {
    fn from(f: ChainFailure) -> Self {
        f.source
    }
}

fn record(state: &EdpmState, iteration: usize, probes: &[Vec<f64>]) -> TraceRecord {
    TraceRecord {
        iteration,
        alpha_theta: state.alpha_theta,
        alpha_psi: state.alpha_psi.clone(),
        occupied_theta: state.assign.occupied_theta(&state.levels),
        occupied_pairs: state.assign.occupied_pairs(&state.levels),
        regression: probes
            .iter()
            .map(|x| expected_y_given_x(&state.weights, &state.atoms, x).value)
            .collect(),
    }
}

/// Runs a chain from `init`, seeded by `config.seed`.
pub fn run_chain(
    data: &Dataset,
    hyper: &Hyperparams,
    init: &EdpmState,
    config: &ChainConfig,
) -> core::result::Result<ChainTrace, ChainFailure> {
    let fail = |partial: ChainTrace, source: Error| ChainFailure { partial, source };
    let mut trace = ChainTrace::default();
    if let Err(e) = config
        .validate()
        .and_then(|_| init.validate())
        .and_then(|_| hyper.validate(&init.levels))
    {
        return Err(fail(trace, e));
    }
    if config.probe_points.iter().any(|p| p.len() != data.dim()) {
        return Err(fail(trace, Error::Dimension("probe point dimension mismatch".into())));
    }
    let mut rng = crate::rng::seeded(config.seed);
    let mut state = init.clone();
    trace.records.reserve(config.kept());
    for t in 1..=config.iterations {
        match gibbs_sweep_with_stats(&state, data, hyper, &mut rng) {
            Ok((next, stats)) => {
                state = next;
                trace.scored_per_sweep = stats.scored;
            }
            Err(e) => return Err(fail(trace, e)),
        }
        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
            trace.records.push(record(&state, t, &config.probe_points));
        }
    }
    Ok(trace)
}

fn draw_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Draws fresh data given a state's assignments, atoms and noise scales.
pub fn draw_data<R: Rng + ?Sized>(state: &EdpmState, rng: &mut R) -> Dataset {
    let d = state.dim();
    let n = state.assign.len();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (k, j) = (state.assign.theta[i], state.assign.psi[i]);
        let start = x.len();
        for &mu in &state.atoms.psi[k][j] {
            let z: f64 = rng.sample(StandardNormal);
            x.push(mu + state.atoms.sigma_psi * z);
        }
        let fit = linalg::dot(&x[start..], &state.atoms.theta[k]);
        let z: f64 = rng.sample(StandardNormal);
        y.push(fit + state.atoms.sigma_theta * z);
    }
    if n == 0 {
        return Dataset::empty(d);
    }
    let mut data = Dataset::empty(d);
    data.overwrite(x, y);
    data
}

/// Draws concentrations (from their hyperpriors when proper), then sticks,
/// atoms, assignments and `n` observations of dimension `d` from the model.
pub fn prior_joint_draw<R: Rng + ?Sized>(
    levels: &TruncationLevels,
    hyper: &Hyperparams,
    n: usize,
    d: usize,
    rng: &mut R,
) -> Result<(EdpmState, Dataset)> {
    if hyper.dim() != d {
        return Err(Error::Dimension("hyperparameter dimension differs from d".into()));
    }
    let mut h = hyper.clone();
    if hyper.alpha_prior_theta.is_proper() {
        h.alpha_theta = hyper.alpha_prior_theta.sample(rng)?;
    }
    if hyper.alpha_prior_psi.is_proper() {
        for a in h.alpha_psi.iter_mut() {
            *a = hyper.alpha_prior_psi.sample(rng)?;
        }
    }
    let (sticks, weights, atoms) = draw_truncated_edp(levels, &h, rng)?;
    let mut theta = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    for _ in 0..n {
        let k = draw_categorical(&weights.theta, rng);
        let j = draw_categorical(&weights.psi[k], rng);
        theta.push(k);
        psi.push(j);
    }
    let state = EdpmState {
        levels: levels.clone(),
        sticks,
        weights,
        atoms,
        assign: Assignments { theta, psi },
        alpha_theta: h.alpha_theta,
        alpha_psi: h.alpha_psi,
    };
    let data = draw_data(&state, rng);
    Ok((state, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightState;
    use crate::rng;

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, libm::sqrt(var / n))
    }

    fn fixed_state(levels: TruncationLevels, d: usize, seed: u64) -> EdpmState {
        let hyper = Hyperparams::standard(&levels, d);
        let (s, _) = prior_joint_draw(&levels, &hyper, 0, d, &mut rng::seeded(seed)).unwrap();
        s
    }

    #[test]
    fn dominant_pair_always_chosen() {
        let levels = TruncationLevels::new(vec![2, 2]).unwrap();
        let mut state = fixed_state(levels, 1, 1);
        state.atoms.sigma_psi = 0.01;
        state.atoms.sigma_theta = 0.01;
        for k in 0..2 {
            state.atoms.theta[k] = vec![k as f64];
            for j in 0..2 {
                state.atoms.psi[k][j] = vec![10.0 * (2 * k + j) as f64];
            }
        }
        // x = 20 sits on pair (1, 0); y = x·θ_1 = 20.
        let data = Dataset::new(vec![20.0; 5], vec![20.0; 5], 1).unwrap();
        let mut r = rng::seeded(4);
        for _ in 0..50 {
            let (a, scored) = sample_assignments(&state, &data, &mut r).unwrap();
            assert!(a.theta.iter().all(|&k| k == 1));
            assert!(a.psi.iter().all(|&j| j == 0));
            assert_eq!(scored, 5 * 4);
        }
    }

    #[test]
    fn symmetric_pairs_split_evenly() {
        let levels = TruncationLevels::new(vec![1, 1]).unwrap();
        let mut state = fixed_state(levels, 1, 2);
        state.sticks.theta = vec![0.5, 1.0];
        state.refresh_weights().unwrap();
        state.atoms.theta = vec![vec![1.0], vec![1.0]];
        state.atoms.psi = vec![vec![vec![0.0]], vec![vec![0.0]]];
        let data = Dataset::new(vec![0.3], vec![0.1], 1).unwrap();
        let mut r = rng::seeded(8);
        let draws = 100_000;
        let ones: Vec<f64> = (0..draws)
            .map(|_| sample_assignments(&state, &data, &mut r).unwrap().0.theta[0] as f64)
            .collect();
        let (m, se) = mean_se(&ones);
        assert!((m - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn flat_likelihood_uniform_weights_is_uniform_over_pairs() {
        let levels = TruncationLevels::new(vec![2, 3]).unwrap();
        let mut state = fixed_state(levels.clone(), 1, 3);
        // p^θ = (1/2, 1/2); p^ψ rows uniform.
        state.sticks.theta = vec![0.5, 1.0];
        state.sticks.psi = vec![vec![0.5, 1.0], vec![1.0 / 3.0, 0.5, 1.0]];
        state.refresh_weights().unwrap();
        state.atoms.theta = vec![vec![0.0], vec![0.0]];
        state.atoms.psi = vec![vec![vec![0.0]; 2], vec![vec![0.0]; 3]];
        let data = Dataset::new(vec![0.2], vec![0.4], 1).unwrap();
        let mut r = rng::seeded(13);
        let draws = 60_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            let (a, _) = sample_assignments(&state, &data, &mut r).unwrap();
            let flat = levels.offsets()[a.theta[0]] + a.psi[0];
            counts[flat] += 1;
        }
        let probs = [0.25, 0.25, 0.5 / 3.0, 0.5 / 3.0, 0.5 / 3.0];
        for (c, p) in counts.iter().zip(probs) {
            let se = libm::sqrt(p * (1.0 - p) / draws as f64);
            assert!((*c as f64 / draws as f64 - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn degenerate_likelihood_reports_observation() {
        let levels = TruncationLevels::new(vec![2]).unwrap();
        let mut state = fixed_state(levels, 1, 4);
        state.weights = WeightState {
            theta: vec![0.0],
            psi: vec![vec![0.0, 0.0]],
        };
        let data = Dataset::new(vec![0.0], vec![0.0], 1).unwrap();
        assert_eq!(
            sample_assignments(&state, &data, &mut rng::seeded(1)).unwrap_err(),
            Error::DegenerateLikelihood { observation: 0 }
        );
    }

    #[test]
    fn sticks_with_no_data_follow_prior() {
        let mut r = rng::seeded(21);
        let v: Vec<f64> = (0..50_000).map(|_| sample_sticks(&[0, 0, 0], 2.0, &mut r)[0]).collect();
        let (m, se) = mean_se(&v);
        assert!((m - 1.0 / 3.0).abs() < 3.0 * se);
        assert_eq!(sample_sticks(&[0, 0, 0], 2.0, &mut r)[2], 1.0);
    }

    #[test]
    fn sticks_concentrate_with_counts() {
        let mut r = rng::seeded(22);
        let v: Vec<f64> = (0..10_000)
            .map(|_| sample_sticks(&[10_000, 0], 1.0, &mut r)[0])
            .collect();
        let (m, se) = mean_se(&v);
        let want = 10_001.0 / 10_002.0;
        assert!((m - want).abs() < 3.0 * se, "{m} vs {want} (se {se})");
    }

    #[test]
    fn stick_draws_are_reproducible() {
        let a = sample_sticks(&[3, 1, 4, 1], 0.7, &mut rng::seeded(5));
        let b = sample_sticks(&[3, 1, 4, 1], 0.7, &mut rng::seeded(5));
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_conditional_unit_exponential() {
        let v1 = 1.0 - libm::exp(-1.0);
        let sticks = StickState {
            theta: vec![v1, 1.0],
            psi: vec![vec![v1, 1.0], vec![v1, 1.0]],
        };
        let prior = GammaPrior::new(0.0, 0.0);
        let mut r = rng::seeded(6);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| sample_alphas(&sticks, prior, prior, &mut r).unwrap().0)
            .collect();
        let (m, se) = mean_se(&draws);
        assert!((m - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn alpha_conditional_with_vanishing_sticks_is_gamma_n_one() {
        let sticks = StickState {
            theta: vec![0.0, 0.0, 0.0, 1.0],
            psi: vec![vec![1.0]; 4],
        };
        let prior = GammaPrior::new(1.0, 1.0);
        let mut r = rng::seeded(7);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| sample_alphas(&sticks, prior, prior, &mut r).unwrap().0)
            .collect();
        let (m, se) = mean_se(&draws);
        assert!((m - 4.0).abs() < 3.0 * se);
    }

    #[test]
    fn alpha_conditional_rejects_unit_free_stick() {
        let sticks = StickState {
            theta: vec![1.0, 1.0],
            psi: vec![vec![1.0], vec![1.0]],
        };
        let p = GammaPrior::default();
        assert_eq!(
            sample_alphas(&sticks, p, p, &mut rng::seeded(1)).unwrap_err(),
            Error::InfiniteRate {
                block: "theta",
                row: 0
            }
        );
    }

    #[test]
    fn empty_cluster_atoms_match_base_measure() {
        let levels = TruncationLevels::new(vec![1, 1]).unwrap();
        let mut hyper = Hyperparams::standard(&levels, 1);
        hyper.mu0 = vec![1.5];
        hyper.c_y = vec![4.0];
        let data = Dataset::new(vec![1.0, 2.0], vec![3.0, 4.0], 1).unwrap();
        let assign = Assignments {
            theta: vec![0, 0],
            psi: vec![0, 0],
        };
        let mut r = rng::seeded(8);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| sample_atoms(&data, &assign, &levels, &hyper, 2.0, 1.0, &mut r).unwrap().theta[1][0])
            .collect();
        // Base measure: N(1.5, σ²/C) = N(1.5, 1).
        let (m, se) = mean_se(&draws);
        assert!((m - 1.5).abs() < 3.0 * se);
        let var = draws.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn dominant_prior_pulls_theta_to_mu0() {
        let levels = TruncationLevels::new(vec![1]).unwrap();
        let mut hyper = Hyperparams::standard(&levels, 1);
        hyper.mu0 = vec![-2.0];
        hyper.c_y = vec![1e10];
        let data = Dataset::new(vec![1.0, 2.0, 3.0], vec![5.0, 9.0, 1.0], 1).unwrap();
        let assign = Assignments {
            theta: vec![0; 3],
            psi: vec![0; 3],
        };
        let t = sample_atoms(&data, &assign, &levels, &hyper, 1.0, 1.0, &mut rng::seeded(9)).unwrap();
        assert!((t.theta[0][0] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn single_cluster_conjugate_mean() {
        // x = (1, 2, 3), y = (2, 3, 7), C = 0.5, μ0 = 1:
        // (Σx² + C)⁻¹ (Σxy + C μ0) = (14.5)⁻¹ (29 + 0.5) = 59/29.
        let levels = TruncationLevels::new(vec![1]).unwrap();
        let mut hyper = Hyperparams::standard(&levels, 1);
        hyper.mu0 = vec![1.0];
        hyper.c_y = vec![0.5];
        let data = Dataset::new(vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 7.0], 1).unwrap();
        let assign = Assignments {
            theta: vec![0; 3],
            psi: vec![0; 3],
        };
        let mut r = rng::seeded(10);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| sample_atoms(&data, &assign, &levels, &hyper, 0.5, 1.0, &mut r).unwrap().theta[0][0])
            .collect();
        let (m, se) = mean_se(&draws);
        assert!((m - 59.0 / 29.0).abs() < 3.0 * se, "{m}");
    }

    #[test]
    fn sweep_is_deterministic_and_keeps_support() {
        let levels = TruncationLevels::new(vec![2, 3, 2]).unwrap();
        let hyper = Hyperparams::standard(&levels, 2);
        let (s0, data) = prior_joint_draw(&levels, &hyper, 20, 2, &mut rng::seeded(31)).unwrap();
        let a = gibbs_sweep(&s0, &data, &hyper, &mut rng::seeded(1)).unwrap();
        let b = gibbs_sweep(&s0, &data, &hyper, &mut rng::seeded(1)).unwrap();
        assert_eq!(a, b);
        let mut s = a;
        let mut r = rng::seeded(2);
        for _ in 0..200 {
            s = gibbs_sweep(&s, &data, &hyper, &mut r).unwrap();
            s.validate().unwrap();
            assert_eq!(s.weights, WeightState::from_sticks(&s.sticks).unwrap());
            assert!(s.sticks.theta.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn chain_record_counts_and_reproducibility() {
        let levels = TruncationLevels::new(vec![2, 2]).unwrap();
        let hyper = Hyperparams::standard(&levels, 1);
        let (s0, data) = prior_joint_draw(&levels, &hyper, 10, 1, &mut rng::seeded(3)).unwrap();
        let mut cfg = ChainConfig {
            iterations: 6,
            burn_in: 5,
            thin: 1,
            seed: 77,
            probe_points: vec![vec![0.5]],
        };
        assert_eq!(run_chain(&data, &hyper, &s0, &cfg).unwrap().records.len(), 1);
        cfg.iterations = 47;
        cfg.thin = 4;
        let t1 = run_chain(&data, &hyper, &s0, &cfg).unwrap();
        assert_eq!(t1.records.len(), (47 - 5) / 4);
        let t2 = run_chain(&data, &hyper, &s0, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.scored_per_sweep, 10 * 4);
    }

    #[test]
    fn single_component_regression_trace_is_linear_fit() {
        let levels = TruncationLevels::new(vec![1]).unwrap();
        let hyper = Hyperparams::standard(&levels, 2);
        let (s0, data) = prior_joint_draw(&levels, &hyper, 8, 2, &mut rng::seeded(5)).unwrap();
        let x = vec![0.3, -1.2];
        let cfg = ChainConfig {
            iterations: 20,
            burn_in: 0,
            thin: 1,
            seed: 4,
            probe_points: vec![x.clone()],
        };
        // Replay the chain and compare against xᵀθ_1 at each iteration.
        let trace = run_chain(&data, &hyper, &s0, &cfg).unwrap();
        let mut r = rng::seeded(4);
        let mut s = s0;
        for rec in &trace.records {
            s = gibbs_sweep(&s, &data, &hyper, &mut r).unwrap();
            let fit = linalg::dot(&x, &s.atoms.theta[0]);
            assert!((rec.regression[0] - fit).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_rejects_bad_config() {
        let levels = TruncationLevels::new(vec![2]).unwrap();
        let hyper = Hyperparams::standard(&levels, 1);
        let (s0, data) = prior_joint_draw(&levels, &hyper, 3, 1, &mut rng::seeded(5)).unwrap();
        let cfg = ChainConfig {
            iterations: 5,
            burn_in: 5,
            thin: 1,
            seed: 0,
            probe_points: vec![],
        };
        let err = run_chain(&data, &hyper, &s0, &cfg).unwrap_err();
        assert!(err.partial.records.is_empty());
        assert!(matches!(err.source, Error::Config(_)));
    }

    #[test]
    fn prior_joint_draw_cluster_frequencies() {
        // Fixed α^θ = 1.5 (improper hyperprior keeps α at the configured value).
        let levels = TruncationLevels::new(vec![1, 1, 1, 1]).unwrap();
        let mut hyper = Hyperparams::standard(&levels, 1);
        hyper.alpha_theta = 1.5;
        hyper.alpha_prior_theta = GammaPrior::new(0.0, 0.0);
        hyper.alpha_prior_psi = GammaPrior::new(0.0, 0.0);
        let mut r = rng::seeded(99);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let (s, _) = prior_joint_draw(&levels, &hyper, 1, 1, &mut r).unwrap();
            counts[s.assign.theta[0]] += 1;
        }
        let a = 1.5f64;
        for k in 0..3 {
            let p = (1.0 / (1.0 + a)) * libm::pow(a / (1.0 + a), k as f64);
            let se = libm::sqrt(p * (1.0 - p) / draws as f64);
            let f = counts[k] as f64 / draws as f64;
            assert!((f - p).abs() < 3.0 * se, "k={k}: {f} vs {p}");
        }
    }

    #[test]
    fn generated_response_mean_matches_fit() {
        let levels = TruncationLevels::new(vec![1]).unwrap();
        let hyper = Hyperparams::standard(&levels, 2);
        let (mut s, _) = prior_joint_draw(&levels, &hyper, 1, 2, &mut rng::seeded(1)).unwrap();
        s.atoms.psi[0][0] = vec![1.0, -0.5];
        s.atoms.theta[0] = vec![2.0, 3.0];
        s.atoms.sigma_psi = 0.2;
        s.atoms.sigma_theta = 0.7;
        let mut r = rng::seeded(2);
        let resid: Vec<f64> = (0..40_000)
            .map(|_| {
                let d = draw_data(&s, &mut r);
                d.y(0) - linalg::dot(d.row(0), &s.atoms.theta[0])
            })
            .collect();
        let (m, se) = mean_se(&resid);
        assert!(m.abs() < 3.0 * se);
    }
}
