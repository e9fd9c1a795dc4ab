//! Flat key-value configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use edpm_core::gibbs::ChainConfig;
use edpm_core::simgen::{Scenario, SimConfig};
use edpm_core::truncation::ErrorBudget;
use edpm_core::vb::{CaviOptions, InitStrategy};
use edpm_core::{GammaPrior, Hyperparams, TruncationLevels};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Mixture,
    Gaussian,
}

/// How truncation levels are chosen for a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "planner")]
    Planner,
    #[serde(rename = "large")]
    Large,
    #[serde(rename = "fixed-m")]
    FixedM,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Planner, Policy::Large, Policy::FixedM];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Planner => "planner",
            Policy::Large => "large",
            Policy::FixedM => "fixed-m",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub n: usize,
    pub d: usize,
    pub n_true: usize,
    pub m_true: usize,
    pub sim_alpha_theta: f64,
    pub sim_alpha_psi: f64,
    pub sigma: f64,
    pub mu_theta_prior: f64,
    pub sigma_theta_prior: f64,
    pub mu_psi_prior: f64,
    pub sigma_psi_prior: f64,
    pub scenario: ScenarioName,
    pub omega1: f64,
    pub omega2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub nu_min: f64,
    pub t_centered_at_mean: bool,

    pub eps: f64,
    pub eps_theta: f64,
    pub alpha_theta: f64,
    pub alpha_psi_levels: Vec<f64>,
    pub policy: Policy,
    pub large_multiplier: f64,

    pub mu0: f64,
    pub c_y: f64,
    pub m: f64,
    pub c_x: f64,
    pub alpha_prior_shape: f64,
    pub alpha_prior_rate: f64,
    pub precision_prior_shape: f64,
    pub precision_prior_rate: f64,

    pub pilot_n_theta: usize,
    pub pilot_m: usize,
    pub vb_max_iters: usize,
    pub vb_rel_tol: f64,
    pub vb_init: String,
    pub fixed_alpha: bool,

    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub batches: usize,
    pub batch_size: usize,
    pub replications: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            n: sim.n,
            d: sim.d,
            n_true: sim.n_true,
            m_true: sim.m_true,
            sim_alpha_theta: sim.alpha_theta,
            sim_alpha_psi: sim.alpha_psi,
            sigma: sim.sigma,
            mu_theta_prior: sim.mu_theta_prior,
            sigma_theta_prior: sim.sigma_theta_prior,
            mu_psi_prior: sim.mu_psi_prior,
            sigma_psi_prior: sim.sigma_psi_prior,
            scenario: ScenarioName::Gaussian,
            omega1: sim.omega1,
            omega2: sim.omega2,
            mu1: sim.mu1,
            mu2: sim.mu2,
            nu_min: sim.nu_min,
            t_centered_at_mean: sim.t_centered_at_mean,
            eps: 0.01,
            eps_theta: 0.001,
            alpha_theta: 1.0,
            alpha_psi_levels: vec![1.0],
            policy: Policy::Planner,
            large_multiplier: 2.0,
            mu0: 0.0,
            c_y: 1.0,
            m: 0.0,
            c_x: 4.0,
            alpha_prior_shape: 1.0,
            alpha_prior_rate: 1.0,
            precision_prior_shape: 1.0,
            precision_prior_rate: 1.0,
            pilot_n_theta: 10,
            pilot_m: 6,
            vb_max_iters: 200,
            vb_rel_tol: 1e-8,
            vb_init: "kmeans-like".into(),
            fixed_alpha: false,
            iterations: 3000,
            burn_in: 500,
            thin: 1,
            batches: 50,
            batch_size: 50,
            replications: 10,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Every key with its meaning, as printed by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("n", "sample size of simulated data"),
    ("d", "covariate dimension"),
    ("n_true", "generator theta-cluster count"),
    ("m_true", "generator psi-subcluster count per theta-cluster"),
    ("sim_alpha_theta", "generator theta concentration"),
    ("sim_alpha_psi", "generator psi concentration"),
    ("sigma", "generator covariate noise and Gaussian response noise"),
    ("mu_theta_prior", "generator mean of coefficient entries"),
    ("sigma_theta_prior", "generator sd of coefficient entries"),
    ("mu_psi_prior", "generator mean of covariate-atom entries"),
    ("sigma_psi_prior", "generator sd of covariate-atom entries"),
    ("scenario", "\"gaussian\" or \"mixture\" (normal/Student-t response)"),
    ("omega1", "mixture scenario: weight of the first kernel"),
    ("omega2", "mixture scenario: weight of the second kernel"),
    ("mu1", "mixture scenario: centre of the first kernel"),
    ("mu2", "mixture scenario: centre of the second kernel"),
    ("nu_min", "mixture scenario: lower clamp of Student-t degrees of freedom"),
    ("t_centered_at_mean", "mixture scenario: shift the t component to x'theta"),
    ("eps", "total truncation error budget"),
    ("eps_theta", "share of eps for theta-clusters (0 < eps_theta < eps)"),
    ("alpha_theta", "plan: theta concentration"),
    ("alpha_psi_levels", "plan: psi concentrations per theta-cluster; the largest repeats"),
    ("policy", "gibbs: \"planner\", \"large\" or \"fixed-m\""),
    ("large_multiplier", "scale applied to planner N and M_k for the large policy"),
    ("mu0", "prior mean of every coefficient entry"),
    ("c_y", "prior precision scale of coefficients (C_y = c_y I)"),
    ("m", "prior mean of covariate atoms"),
    ("c_x", "prior variance of covariate atoms"),
    ("alpha_prior_shape", "Gamma hyperprior shape for concentrations"),
    ("alpha_prior_rate", "Gamma hyperprior rate for concentrations"),
    ("precision_prior_shape", "Gamma prior shape for noise precisions"),
    ("precision_prior_rate", "Gamma prior rate for noise precisions"),
    ("pilot_n_theta", "truncation N of the pilot variational fit"),
    ("pilot_m", "truncation M of the pilot variational fit"),
    ("vb_max_iters", "maximum CAVI sweeps"),
    ("vb_rel_tol", "relative ELBO change that stops CAVI"),
    ("vb_init", "\"kmeans-like\", \"prior\" or \"random-resp\""),
    ("fixed_alpha", "hold concentrations fixed in CAVI"),
    ("iterations", "Gibbs sweeps per chain"),
    ("burn_in", "sweeps discarded before recording"),
    ("thin", "record every thin-th sweep after burn-in"),
    ("batches", "batch-means batch count B"),
    ("batch_size", "batch-means batch length L"),
    ("replications", "experiment replications R"),
    ("seed", "master seed (overridden by --seed)"),
    ("out_dir", "output directory (overridden by --out)"),
];

pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let defaults = toml::Value::try_from(Config::default()).expect("default config serializes");
    let mut out = String::from("Configuration keys (flat TOML; all optional):\n");
    for (key, doc) in KEYS {
        let default = defaults.get(key).map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("  {key:<width$}  {doc} [default: {default}]\n"));
    }
    out
}

fn check(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Validation(msg.into()))
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.sim_config(self.seed).validate()?;
        self.budget()?;
        check(self.alpha_theta > 0.0, "alpha_theta must be positive")?;
        check(
            !self.alpha_psi_levels.is_empty() && self.alpha_psi_levels.iter().all(|a| *a > 0.0),
            "alpha_psi_levels must be a nonempty list of positive values",
        )?;
        check(self.large_multiplier >= 1.0, "large_multiplier must be at least 1")?;
        check(self.c_y > 0.0 && self.c_x > 0.0, "c_y and c_x must be positive")?;
        check(
            self.pilot_n_theta >= 1 && self.pilot_m >= 1,
            "pilot_n_theta and pilot_m must be at least 1",
        )?;
        check(self.vb_max_iters >= 1 && self.vb_rel_tol > 0.0, "vb_max_iters >= 1 and vb_rel_tol > 0 required")?;
        self.init_strategy()?;
        let chain = self.chain_config(0, vec![]);
        chain.validate()?;
        check(self.batches >= 2 && self.batch_size >= 1, "batches >= 2 and batch_size >= 1 required")?;
        check(
            self.batches * self.batch_size <= chain.kept(),
            format!(
                "batches * batch_size = {} exceeds kept iterations {}",
                self.batches * self.batch_size,
                chain.kept()
            ),
        )?;
        check(self.replications >= 1, "replications must be at least 1")?;
        Ok(())
    }

    pub fn budget(&self) -> Result<ErrorBudget> {
        ErrorBudget::new(self.eps, self.eps_theta)
            .map_err(|e| CliError::Validation(format!("ErrorBudget invariant violated: {e}")))
    }

    pub fn init_strategy(&self) -> Result<InitStrategy> {
        self.vb_init
            .parse()
            .map_err(|e: edpm_core::Error| CliError::Validation(e.to_string()))
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            n: self.n,
            d: self.d,
            n_true: self.n_true,
            m_true: self.m_true,
            alpha_theta: self.sim_alpha_theta,
            alpha_psi: self.sim_alpha_psi,
            sigma: self.sigma,
            mu_theta_prior: self.mu_theta_prior,
            sigma_theta_prior: self.sigma_theta_prior,
            mu_psi_prior: self.mu_psi_prior,
            sigma_psi_prior: self.sigma_psi_prior,
            scenario: match self.scenario {
                ScenarioName::Mixture => Scenario::Mixture,
                ScenarioName::Gaussian => Scenario::Gaussian,
            },
            omega1: self.omega1,
            omega2: self.omega2,
            mu1: self.mu1,
            mu2: self.mu2,
            nu_min: self.nu_min,
            t_centered_at_mean: self.t_centered_at_mean,
            seed,
        }
    }

    /// Model hyperparameters for `levels`; concentrations start at the given values.
    pub fn hyper(&self, levels: &TruncationLevels, d: usize, alpha_theta: f64, alpha_psi: &[f64]) -> Hyperparams {
        let mut h = Hyperparams::standard(levels, d);
        h.mu0 = vec![self.mu0; d];
        h.c_y.iter_mut().for_each(|c| *c *= self.c_y);
        h.m = vec![self.m; d];
        h.c_x = vec![self.c_x; d];
        h.alpha_theta = alpha_theta;
        h.alpha_psi = (0..levels.n_theta())
            .map(|k| alpha_psi.get(k).copied().unwrap_or_else(|| alpha_psi.iter().copied().fold(f64::NAN, f64::max)))
            .collect();
        h.alpha_prior_theta = GammaPrior::new(self.alpha_prior_shape, self.alpha_prior_rate);
        h.alpha_prior_psi = h.alpha_prior_theta;
        h.precision_prior_theta = GammaPrior::new(self.precision_prior_shape, self.precision_prior_rate);
        h.precision_prior_psi = h.precision_prior_theta;
        h
    }

    pub fn cavi_options(&self, seed: u64) -> Result<CaviOptions> {
        Ok(CaviOptions {
            max_iters: self.vb_max_iters,
            rel_tol: self.vb_rel_tol,
            seed,
            strategy: self.init_strategy()?,
            fixed_alpha: self.fixed_alpha,
            fixed_sigma: None,
        })
    }

    pub fn chain_config(&self, seed: u64, probe_points: Vec<Vec<f64>>) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            probe_points,
        }
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config: Config = toml::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_every_key_is_documented() {
        Config::default().validate().unwrap();
        let value = toml::Value::try_from(Config::default()).unwrap();
        let table = value.as_table().unwrap();
        let documented: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        let mut keys: Vec<&str> = table.keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut sorted = documented.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("bogus = 1").is_err());
        let c: Config = toml::from_str("n = 50\npolicy = \"fixed-m\"").unwrap();
        assert_eq!((c.n, c.policy), (50, Policy::FixedM));
    }

    #[test]
    fn budget_violation_names_the_invariant() {
        let c = Config {
            eps_theta: 0.02,
            ..Config::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("ErrorBudget"), "{msg}");
    }

    #[test]
    fn batch_budget_must_fit_the_chain() {
        let c = Config {
            iterations: 100,
            burn_in: 50,
            ..Config::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Validation(_))));
    }
}
