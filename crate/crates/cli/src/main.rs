use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edpm::config::{keys_help, load_config, Config};
use edpm::experiment::{
    format_results_table, paired_mean_difference, run_experiment, run_policies, sd_wins,
    write_experiment, Stats,
};
use edpm::table::{plan_table, reference_budget, reference_grid, REFERENCE_SAMPLE_SIZES};
use edpm::{io, CliError, Policy, Result};
use edpm_core::rng::derive_seed;
use edpm_core::simgen::generate_dataset;
use edpm_core::truncation::{compare_fixed, AlphaSchedule};
use edpm_core::vb::{estimate_alphas, run_cavi};
use edpm_core::{Dataset, TruncationLevels};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "edpm", version, about = "Truncated enriched Dirichlet process mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[command(after_help = keys_help())]
struct Common {
    /// TOML file of flat configuration keys (listed below)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the `out_dir` key
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Choose truncation levels for an error budget
    Plan {
        #[command(flatten)]
        common: Common,
        /// Print the reference grid over two sample sizes instead
        #[arg(long)]
        table: bool,
    },
    /// Generate a synthetic dataset and its ground truth
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the variational approximation and estimate concentrations
    Vb {
        #[command(flatten)]
        common: Common,
        /// CSV dataset (`y,x1,...,xd`); simulated when absent
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a warm-started blocked Gibbs chain under one policy
    Gibbs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Replicated comparison of the three truncation policies
    Experiment {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize)]
struct PlanFile {
    n: usize,
    alpha_theta: f64,
    alpha_psi: Vec<f64>,
    n_theta: usize,
    m: Vec<usize>,
    k_star: usize,
    bound_tv: f64,
    bound_l1: f64,
    sum_m: usize,
    fixed_m: usize,
    fixed_pairs: usize,
    fixed_bound_tv: f64,
}

fn plan(cfg: &Config, table: bool) -> Result<()> {
    io::ensure_dir(&cfg.out_dir)?;
    if table {
        let text = plan_table(&reference_grid(), &reference_budget(), &REFERENCE_SAMPLE_SIZES)?;
        print!("{text}");
        return io::write_text(&text, &cfg.out_dir.join("plan_table.txt"));
    }
    let r = compare_fixed(
        cfg.n,
        cfg.alpha_theta,
        &AlphaSchedule::Explicit(cfg.alpha_psi_levels.clone()),
        &cfg.budget()?,
    )?;
    let file = PlanFile {
        n: r.n,
        alpha_theta: r.alpha_theta,
        alpha_psi: r.alpha_psi.clone(),
        n_theta: r.levels.n_theta(),
        m: r.levels.m_all().to_vec(),
        k_star: r.k_star,
        bound_tv: r.bound_tv,
        bound_l1: r.bound_l1,
        sum_m: r.sum_m,
        fixed_m: r.fixed_m,
        fixed_pairs: r.fixed_pairs(),
        fixed_bound_tv: r.fixed_bound_tv,
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Validation(e.to_string()))?;
    print!("{text}");
    io::write_text(&text, &cfg.out_dir.join("plan.toml"))
}

fn data_or_simulate(cfg: &Config, path: Option<&Path>) -> Result<Dataset> {
    match path {
        Some(p) => io::load_dataset(p),
        None => Ok(generate_dataset(&cfg.sim_config(derive_seed(cfg.seed, 0)))?.0),
    }
}

fn simulate(cfg: &Config) -> Result<()> {
    io::ensure_dir(&cfg.out_dir)?;
    let (data, truth) = generate_dataset(&cfg.sim_config(derive_seed(cfg.seed, 0)))?;
    io::store_dataset(&data, &cfg.out_dir.join("data.csv"))?;
    io::store_truth(&truth, &cfg.out_dir.join("truth.toml"))?;
    println!("wrote {} observations to {}", data.len(), cfg.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct VbFile {
    n_theta: usize,
    m: usize,
    iterations: usize,
    converged: bool,
    elbo: f64,
    alpha_theta_hat: f64,
    alpha_psi_hat: Vec<f64>,
}

fn vb(cfg: &Config, data: Option<&Path>) -> Result<()> {
    io::ensure_dir(&cfg.out_dir)?;
    let data = data_or_simulate(cfg, data)?;
    let levels = TruncationLevels::uniform(cfg.pilot_n_theta, cfg.pilot_m)?;
    let hyper = cfg.hyper(&levels, data.dim(), 1.0, &vec![1.0; cfg.pilot_n_theta]);
    let fit = run_cavi(&data, &levels, &hyper, &cfg.cavi_options(derive_seed(cfg.seed, 1))?)?;
    let (a_theta, a_psi) = estimate_alphas(&fit.state);
    io::store_elbo(&fit.elbo_trace, &cfg.out_dir.join("elbo.csv"))?;
    let file = VbFile {
        n_theta: cfg.pilot_n_theta,
        m: cfg.pilot_m,
        iterations: fit.iterations,
        converged: fit.converged,
        elbo: fit.elbo_trace.last().copied().unwrap_or(f64::NAN),
        alpha_theta_hat: a_theta,
        alpha_psi_hat: a_psi,
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Validation(e.to_string()))?;
    print!("{text}");
    io::write_text(&text, &cfg.out_dir.join("vb.toml"))
}

#[derive(Serialize)]
struct GibbsFile {
    policy: Policy,
    alpha_theta_hat: f64,
    alpha_psi_hat: Vec<f64>,
    n_theta: usize,
    m: Vec<usize>,
    scored_per_sweep: u64,
    kept: usize,
    mean: Stats,
    sd: Stats,
}

fn gibbs(cfg: &Config, data: Option<&Path>) -> Result<()> {
    io::ensure_dir(&cfg.out_dir)?;
    let data = data_or_simulate(cfg, data)?;
    let (a_theta, a_psi, mut runs) = run_policies(cfg, &data, cfg.seed, Some(cfg.policy))?;
    let run = runs.pop().expect("one policy requested");
    io::store_trace(&run.trace, &cfg.out_dir.join("trace.csv"))?;
    let file = GibbsFile {
        policy: run.policy,
        alpha_theta_hat: a_theta,
        alpha_psi_hat: a_psi,
        n_theta: run.levels.n_theta(),
        m: run.levels.m_all().to_vec(),
        scored_per_sweep: run.trace.scored_per_sweep,
        kept: run.trace.records.len(),
        mean: run.summary.mean.into(),
        sd: run.summary.sd.into(),
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Validation(e.to_string()))?;
    print!("{text}");
    io::write_text(&text, &cfg.out_dir.join("summary.toml"))
}

fn experiment(cfg: &Config) -> Result<()> {
    let results = run_experiment(cfg)?;
    write_experiment(&results, &cfg.out_dir)?;
    print!("{}", format_results_table(&results.aggregate));
    let reps = &results.replications;
    let (d, se) = paired_mean_difference(reps, Policy::Planner, Policy::FixedM);
    println!(
        "replications: {} ok, {} failed; planner - fixed-m mean: {d:.4} (se {se:.4}); planner SD <= fixed-m SD in {}",
        reps.len(),
        results.failures.len(),
        sd_wins(reps, Policy::Planner, Policy::FixedM)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan { common, table } => plan(&common.load()?, table),
        Command::Simulate { common } => simulate(&common.load()?),
        Command::Vb { common, data } => vb(&common.load()?, data.as_deref()),
        Command::Gibbs { common, data } => gibbs(&common.load()?, data.as_deref()),
        Command::Experiment { common } => experiment(&common.load()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
