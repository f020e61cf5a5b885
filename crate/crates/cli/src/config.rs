use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use entailplan::adapters::OracleNoise;
use entailplan::planners::{PlanConfig, PlannerKind};
use entailplan::EnvConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Oracle,
    Remote,
}

/// Run settings. A `--config` file holds the same keys in snake_case; flags win over it.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Seed for oracle noise and synthetic banks
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Simulation/action budget per hypothesis
    #[arg(long, global = true)]
    pub budget: Option<u32>,
    /// Exploration constant of the selection rule
    #[arg(long, global = true)]
    pub cp: Option<f64>,
    /// Controller candidates per state
    #[arg(long, global = true)]
    pub candidates: Option<usize>,
    #[arg(long, global = true)]
    pub beam_width: Option<usize>,
    #[arg(long, global = true)]
    pub retrieve_k: Option<usize>,
    #[arg(long, global = true)]
    pub max_premises: Option<usize>,
    /// mcp, greedy, oaf or beam
    #[arg(long, global = true)]
    pub planner: Option<PlannerKind>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    /// Per-request timeout of the remote backend
    #[arg(long, global = true)]
    pub timeout_secs: Option<f64>,
    /// Worker threads; 1 runs everything on the calling thread
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Oracle noise: probability of flipping a step-verifier score
    #[arg(long, global = true)]
    pub step_flip_prob: Option<f64>,
    /// Oracle noise: softmax temperature applied to controller priors
    #[arg(long, global = true)]
    pub prior_temperature: Option<f64>,
    /// Zero the exploration term in the final selection walk
    #[arg(long, global = true)]
    pub exploit_final: Option<bool>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($f:ident),+) => {
        Settings { $($f: $top.$f.or($base.$f)),+ }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `self` wins over `base` field by field.
    pub fn over(self, base: Settings) -> Settings {
        overlay!(
            self, base, seed, budget, cp, candidates, beam_width, retrieve_k, max_premises, planner,
            backend, base_url, timeout_secs, workers, step_flip_prob, prior_temperature, exploit_final
        )
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let plan_defaults = PlanConfig::default();
        let env_defaults = EnvConfig::default();
        let seed = self.seed.unwrap_or(0);
        let plan = PlanConfig {
            c_p: self.cp.unwrap_or(plan_defaults.c_p),
            budget: self.budget.unwrap_or(plan_defaults.budget),
            candidates_per_state: self.candidates.unwrap_or(plan_defaults.candidates_per_state),
            beam_width: self.beam_width.unwrap_or(plan_defaults.beam_width),
            exploit_final: self.exploit_final.unwrap_or(plan_defaults.exploit_final),
            ..plan_defaults
        };
        let env = EnvConfig {
            max_premises: self.max_premises.unwrap_or(env_defaults.max_premises),
            retrieve_k: self.retrieve_k.unwrap_or(env_defaults.retrieve_k),
            ..env_defaults
        };
        if plan.c_p.is_nan() || plan.c_p < 0.0 || plan.candidates_per_state == 0 || plan.beam_width == 0 {
            bail!("cp must be non-negative; candidates and beam_width must be positive");
        }
        if env.max_premises == 0 || env.retrieve_k == 0 {
            bail!("max_premises and retrieve_k must be positive");
        }
        let step_flip_prob = self.step_flip_prob.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&step_flip_prob) {
            bail!("step_flip_prob must lie in [0, 1]");
        }
        if self.prior_temperature.is_some_and(|t| t.is_nan() || t <= 0.0) {
            bail!("prior_temperature must be positive");
        }
        let backend = self.backend.unwrap_or_default();
        if backend == Backend::Remote && self.base_url.is_none() {
            bail!("the remote backend needs --base-url");
        }
        let timeout = self.timeout_secs.unwrap_or(30.0);
        if !timeout.is_finite() || timeout <= 0.0 {
            bail!("timeout_secs must be positive");
        }
        Ok(RunConfig {
            seed,
            plan,
            env,
            planner: self.planner.unwrap_or(PlannerKind::Mcp),
            backend,
            base_url: self.base_url,
            timeout: Duration::from_secs_f64(timeout),
            workers: self.workers.unwrap_or(1).max(1),
            noise: OracleNoise {
                step_flip_prob,
                prior_temperature: self.prior_temperature,
                seed,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub plan: PlanConfig,
    pub env: EnvConfig,
    pub planner: PlannerKind,
    pub backend: Backend,
    pub base_url: Option<String>,
    pub timeout: Duration,
    pub workers: usize,
    pub noise: OracleNoise,
}
