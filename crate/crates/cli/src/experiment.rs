//! Replication harness comparing truncation policies.
//!
//! Seeds: replication `r` uses `s_r = derive_seed(seed, r)`. Within it, the
//! dataset uses `derive_seed(s_r, 0)`, the pilot variational fit
//! `derive_seed(s_r, 1)`, and policy `i` (planner, large, fixed-m) uses
//! `derive_seed(s_r, 2 + 2i)` for its variational refit and
//! `derive_seed(s_r, 3 + 2i)` for its chain.

use std::path::Path;

use edpm_core::diagnostics::{batch_summaries, mean_sd, BatchStats, BatchSummary};
use edpm_core::gibbs::{run_chain, ChainTrace};
use edpm_core::rng::derive_seed;
use edpm_core::simgen::generate_dataset;
use edpm_core::truncation::{compare_fixed, AlphaSchedule, ErrorBudget};
use edpm_core::vb::{estimate_alphas, run_cavi, warm_start_gibbs};
use edpm_core::{Dataset, TruncationLevels};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, Policy};
use crate::error::{CliError, Result};
use crate::io;

/// Levels for each policy from concentration estimates.
///
/// - planner: variable `M_k` from the error budget;
/// - large: planner `N` and `M_k` scaled by `multiplier` (rounded up);
/// - fixed-m: planner `N` with one `M` solving the ψ budget at `max α_k`.
pub fn policy_levels(
    n: usize,
    alpha_theta: f64,
    alpha_psi: &[f64],
    budget: &ErrorBudget,
    multiplier: f64,
) -> Result<Vec<(Policy, TruncationLevels)>> {
    let report = compare_fixed(n, alpha_theta, &AlphaSchedule::Explicit(alpha_psi.to_vec()), budget)?;
    let planner = report.levels.clone();
    let scale = |v: usize| (v as f64 * multiplier).ceil() as usize;
    let n_large = scale(planner.n_theta());
    let large = TruncationLevels::new(
        (0..n_large)
            .map(|k| scale(planner.m(k.min(planner.n_theta() - 1))))
            .collect(),
    )?;
    Ok(vec![
        (Policy::Planner, planner),
        (Policy::Large, large),
        (Policy::FixedM, report.fixed_levels()),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResult {
    pub policy: Policy,
    pub levels: TruncationLevels,
    pub vb_iterations: usize,
    pub trace: ChainTrace,
    /// Batch summary of the `E(Y|X)` trace at the probe point.
    pub summary: BatchSummary,
}

/// Refits VB at `levels`, warm-starts a chain from it and summarizes the
/// `E(Y|X)` trace at `probe`.
pub fn run_policy(
    cfg: &Config,
    data: &Dataset,
    policy: Policy,
    levels: TruncationLevels,
    alpha_hat: (f64, &[f64]),
    probe: &[f64],
    seeds: (u64, u64),
) -> Result<PolicyResult> {
    let hyper = cfg.hyper(&levels, data.dim(), alpha_hat.0, alpha_hat.1);
    let fit = run_cavi(data, &levels, &hyper, &cfg.cavi_options(seeds.0)?)?;
    let init = warm_start_gibbs(&fit.state)?;
    let chain = cfg.chain_config(seeds.1, vec![probe.to_vec()]);
    let trace = run_chain(data, &hyper, &init, &chain).map_err(edpm_core::Error::from)?;
    let summary = batch_summaries(&trace.regression_series(0), cfg.batches, cfg.batch_size)?;
    Ok(PolicyResult {
        policy,
        levels,
        vb_iterations: fit.iterations,
        trace,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub alpha_theta_hat: f64,
    pub alpha_psi_hat: Vec<f64>,
    pub policies: Vec<PolicyResult>,
}

impl Replication {
    pub fn get(&self, policy: Policy) -> &PolicyResult {
        self.policies
            .iter()
            .find(|p| p.policy == policy)
            .expect("every policy is run")
    }
}

/// Pilot variational fit at the configured pilot levels; returns `(α̂^θ, α̂^ψ)`.
pub fn pilot_alphas(cfg: &Config, data: &Dataset, seed: u64) -> Result<(f64, Vec<f64>)> {
    let levels = TruncationLevels::uniform(cfg.pilot_n_theta, cfg.pilot_m)?;
    let ones = vec![1.0; cfg.pilot_n_theta];
    let hyper = cfg.hyper(&levels, data.dim(), 1.0, &ones);
    let fit = run_cavi(data, &levels, &hyper, &cfg.cavi_options(seed)?)?;
    Ok(estimate_alphas(&fit.state))
}

/// Runs every policy on `data`, using the first observation's covariates as
/// the probe point.
pub fn run_policies(cfg: &Config, data: &Dataset, rep_seed: u64, only: Option<Policy>) -> Result<(f64, Vec<f64>, Vec<PolicyResult>)> {
    let (a_theta, a_psi) = pilot_alphas(cfg, data, derive_seed(rep_seed, 1))?;
    let probe = data.row(0).to_vec();
    let plans = policy_levels(data.len(), a_theta, &a_psi, &cfg.budget()?, cfg.large_multiplier)?;
    let mut results = Vec::new();
    for (i, (policy, levels)) in plans.into_iter().enumerate() {
        if only.is_some_and(|p| p != policy) {
            continue;
        }
        let seeds = (derive_seed(rep_seed, 2 + 2 * i as u64), derive_seed(rep_seed, 3 + 2 * i as u64));
        results.push(run_policy(cfg, data, policy, levels, (a_theta, &a_psi), &probe, seeds)?);
    }
    Ok((a_theta, a_psi, results))
}

pub fn run_replication(cfg: &Config, index: usize) -> edpm_core::Result<Replication> {
    let seed = derive_seed(cfg.seed, index as u64);
    let (data, _) = generate_dataset(&cfg.sim_config(derive_seed(seed, 0)))?;
    let (alpha_theta_hat, alpha_psi_hat, policies) = run_policies(cfg, &data, seed, None).map_err(|e| match e {
        CliError::Core(e) => e,
        other => edpm_core::Error::Config(other.to_string()),
    })?;
    Ok(Replication {
        index,
        seed,
        alpha_theta_hat,
        alpha_psi_hat,
        policies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyAggregate {
    pub policy: Policy,
    /// Replication average of the cross-batch means.
    pub mean: Stats,
    /// Replication average of the cross-batch SDs.
    pub sd: Stats,
    pub mean_n_theta: f64,
    pub mean_sum_m: f64,
    /// Replication average of `n · Σ M_k`, the assignment scores per sweep.
    pub mean_scored_per_sweep: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub q25: f64,
    pub mean: f64,
    pub q75: f64,
}

impl From<BatchStats> for Stats {
    fn from(b: BatchStats) -> Self {
        Stats {
            q25: b.q25,
            mean: b.mean,
            q75: b.q75,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub replications: Vec<Replication>,
    pub failures: Vec<(usize, edpm_core::Error)>,
    pub aggregate: Vec<PolicyAggregate>,
}

fn aggregate(reps: &[Replication], policy: Policy) -> PolicyAggregate {
    let avg = |f: &dyn Fn(&PolicyResult) -> f64| -> f64 {
        reps.iter().map(|r| f(r.get(policy))).sum::<f64>() / reps.len() as f64
    };
    PolicyAggregate {
        policy,
        mean: Stats {
            q25: avg(&|p| p.summary.mean.q25),
            mean: avg(&|p| p.summary.mean.mean),
            q75: avg(&|p| p.summary.mean.q75),
        },
        sd: Stats {
            q25: avg(&|p| p.summary.sd.q25),
            mean: avg(&|p| p.summary.sd.mean),
            q75: avg(&|p| p.summary.sd.q75),
        },
        mean_n_theta: avg(&|p| p.levels.n_theta() as f64),
        mean_sum_m: avg(&|p| p.levels.total_pairs() as f64),
        mean_scored_per_sweep: avg(&|p| p.trace.scored_per_sweep as f64),
    }
}

/// Runs `cfg.replications` replications in parallel. Individual failures are
/// reported on stderr and skipped; more than 20% failures abort the run.
pub fn run_experiment(cfg: &Config) -> Result<ExperimentResults> {
    cfg.validate()?;
    let outcomes: Vec<edpm_core::Result<Replication>> =
        (0..cfg.replications).into_par_iter().map(|r| run_replication(cfg, r)).collect();
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => replications.push(rep),
            Err(e) => {
                eprintln!("replication {r} failed: {e}");
                failures.push((r, e));
            }
        }
    }
    if 5 * failures.len() > cfg.replications {
        return Err(CliError::TooManyFailures {
            failed: failures.len(),
            total: cfg.replications,
            first: failures[0].1.clone(),
        });
    }
    let aggregate = Policy::ALL.iter().map(|&p| aggregate(&replications, p)).collect();
    Ok(ExperimentResults {
        replications,
        failures,
        aggregate,
    })
}

/// Paired comparison of the cross-batch mean of the batch means between two
/// policies: `(mean difference, standard error of the mean difference)`.
pub fn paired_mean_difference(reps: &[Replication], a: Policy, b: Policy) -> (f64, f64) {
    let d: Vec<f64> = reps
        .iter()
        .map(|r| r.get(a).summary.mean.mean - r.get(b).summary.mean.mean)
        .collect();
    let (m, sd) = mean_sd(&d);
    (m, sd / (d.len() as f64).sqrt())
}

/// Replications in which `a`'s cross-batch SD of batch means is at most `b`'s.
pub fn sd_wins(reps: &[Replication], a: Policy, b: Policy) -> usize {
    reps.iter()
        .filter(|r| r.get(a).summary.sd.mean <= r.get(b).summary.sd.mean)
        .count()
}

/// Aligned table: one line per statistic, a `Mean SD` pair per policy.
pub fn format_results_table(agg: &[PolicyAggregate]) -> String {
    let mut out = format!("{:<14}", "statistic");
    for a in agg {
        out.push_str(&format!("  {:>10} {:>8}", format!("{}:mean", a.policy.name()), "SD"));
    }
    out.push('\n');
    let rows: [(&str, fn(&Stats) -> f64); 3] = [
        ("0.25 quantile", |s| s.q25),
        ("mean", |s| s.mean),
        ("0.75 quantile", |s| s.q75),
    ];
    for (name, f) in rows {
        out.push_str(&format!("{name:<14}"));
        for a in agg {
            out.push_str(&format!("  {:>10.4} {:>8.4}", f(&a.mean), f(&a.sd)));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<14}", "N (avg)"));
    for a in agg {
        out.push_str(&format!("  {:>10.1} {:>8}", a.mean_n_theta, ""));
    }
    out.push('\n');
    out.push_str(&format!("{:<14}", "n*sum M_k"));
    for a in agg {
        out.push_str(&format!("  {:>10.0} {:>8}", a.mean_scored_per_sweep, ""));
    }
    out.push('\n');
    out
}

#[derive(Serialize)]
struct ReplicationRecord {
    index: usize,
    /// Decimal string: TOML integers are signed 64-bit.
    seed: String,
    alpha_theta_hat: f64,
    alpha_psi_hat: Vec<f64>,
    policies: Vec<PolicyRecord>,
}

#[derive(Serialize)]
struct PolicyRecord {
    policy: Policy,
    n_theta: usize,
    m: Vec<usize>,
    scored_per_sweep: u64,
    vb_iterations: usize,
    mean: Stats,
    sd: Stats,
}

#[derive(Serialize)]
struct ResultsFile {
    replications_ok: usize,
    replications_failed: Vec<usize>,
    planner_minus_large_mean: f64,
    planner_minus_large_se: f64,
    planner_minus_fixed_mean: f64,
    planner_minus_fixed_se: f64,
    planner_sd_le_fixed_count: usize,
    aggregate: Vec<PolicyAggregate>,
    replication: Vec<ReplicationRecord>,
}

/// Writes `results.toml`, `table.txt` and one trace CSV per replication and policy.
pub fn write_experiment(results: &ExperimentResults, out: &Path) -> Result<()> {
    io::ensure_dir(&out.join("traces"))?;
    for rep in &results.replications {
        for p in &rep.policies {
            let name = format!("rep{:03}_{}.csv", rep.index, p.policy.name());
            io::store_trace(&p.trace, &out.join("traces").join(name))?;
        }
    }
    let reps = &results.replications;
    let (pl, pl_se) = paired_mean_difference(reps, Policy::Planner, Policy::Large);
    let (pf, pf_se) = paired_mean_difference(reps, Policy::Planner, Policy::FixedM);
    let file = ResultsFile {
        replications_ok: reps.len(),
        replications_failed: results.failures.iter().map(|f| f.0).collect(),
        planner_minus_large_mean: pl,
        planner_minus_large_se: pl_se,
        planner_minus_fixed_mean: pf,
        planner_minus_fixed_se: pf_se,
        planner_sd_le_fixed_count: sd_wins(reps, Policy::Planner, Policy::FixedM),
        aggregate: results.aggregate.clone(),
        replication: reps
            .iter()
            .map(|r| ReplicationRecord {
                index: r.index,
                seed: r.seed.to_string(),
                alpha_theta_hat: r.alpha_theta_hat,
                alpha_psi_hat: r.alpha_psi_hat.clone(),
                policies: r
                    .policies
                    .iter()
                    .map(|p| PolicyRecord {
                        policy: p.policy,
                        n_theta: p.levels.n_theta(),
                        m: p.levels.m_all().to_vec(),
                        scored_per_sweep: p.trace.scored_per_sweep,
                        vb_iterations: p.vb_iterations,
                        mean: p.summary.mean.into(),
                        sd: p.summary.sd.into(),
                    })
                    .collect(),
            })
            .collect(),
    };
    io::write_toml(&file, &out.join("results.toml"))?;
    io::write_text(&format_results_table(&results.aggregate), &out.join("table.txt"))
}
