//! Experiment orchestration: configuration, training and evaluation
//! protocols, baseline tuning, the tracking-threshold sweep and figure-data
//! export.
//!
//! Everything is driven by one TOML configuration file; a seed plus that
//! file fully determine every emitted artifact.

pub mod evaluation;
pub mod figures;
pub mod rollout;
pub mod sweep;
pub mod training;

pub use evaluation::{evaluate, MetricsRecord};
pub use figures::emit_episode_figure_data;
pub use rollout::{episode_rngs, init_rng, mix_seed, run_episode, run_episodes, Controller, EpisodeOutcome};
pub use sweep::{sweep_tracking_threshold, SweepEntry, SweepOutput};
pub use training::{train, TrainOutput, TrainRecord};

use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::cpo::CpoConfig;
use crate::env::{BeliefPrior, EpisodeConfig, ReferenceSchedule};
use crate::error::{Error, Result};
use crate::linsys::{
    default_three_tank_config, FaultProcess, LinearFaultPlant, PlantConfig,
};
use crate::observer::FaultWalkModel;
use nalgebra::{DMatrix, DVector};

/// Top-level experiment description (TOML).
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub plant: PlantSection,
    pub episode: EpisodeSection,
    pub policy: PolicySection,
    pub cpo: CpoSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub baseline: BaselineSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    /// Path to a plant TOML; the built-in three-tank instance when absent.
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub horizon: usize,
    pub delta_y_max: f64,
    pub cost_budget: f64,
    pub gamma: f64,
    pub gamma_c: f64,
    pub init_radius: f64,
    pub prior_state_var: f64,
    pub prior_fault_mean: f64,
    pub prior_fault_var: f64,
    /// Covariance bias the observer adds per step (assumed walk).
    pub walk_bias: f64,
    pub fault: FaultSection,
    /// Piecewise-constant reference segments `[start_step, values...]`;
    /// constant equilibrium (zero) when empty.
    pub reference: Vec<ReferenceSegment>,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            horizon: 40,
            delta_y_max: 0.1,
            cost_budget: 6.0,
            gamma: 0.99,
            gamma_c: 1.0,
            init_radius: 0.1,
            prior_state_var: 0.002,
            prior_fault_mean: 0.5,
            prior_fault_var: 1.0,
            walk_bias: 1e-3,
            fault: FaultSection::default(),
            reference: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReferenceSegment {
    pub start: usize,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSection {
    /// `constant`, `random_walk` or `jump`.
    pub kind: String,
    pub walk_mean: f64,
    pub walk_var: f64,
    pub dwell_min: u32,
    pub jump_prob: f64,
}

impl Default for FaultSection {
    fn default() -> Self {
        Self { kind: "constant".into(), walk_mean: 0.0, walk_var: 1e-4, dwell_min: 30, jump_prob: 1.0 / 30.0 }
    }
}

impl FaultSection {
    pub fn build(&self, n_u: usize) -> Result<FaultProcess> {
        let process = match self.kind.as_str() {
            "constant" => FaultProcess::Constant,
            "random_walk" => FaultProcess::RandomWalk {
                mean: DVector::from_element(n_u, self.walk_mean),
                cov: DMatrix::identity(n_u, n_u) * self.walk_var,
            },
            "jump" => FaultProcess::Jump { dwell_min: self.dwell_min, jump_prob: self.jump_prob },
            other => return Err(Error::config(format!("episode.fault.kind: unknown kind '{other}'"))),
        };
        process.validate(n_u)?;
        Ok(process)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    /// Initial log standard deviation; when absent, `ln(0.01 * input range)`.
    pub log_std_init: Option<f64>,
    pub log_std_trainable: bool,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { hidden: vec![64, 64], value_hidden: vec![64, 64], log_std_init: None, log_std_trainable: true }
    }
}

impl PolicySection {
    pub fn resolved_log_std_init(&self, plant: &LinearFaultPlant) -> f64 {
        match self.log_std_init {
            Some(v) => v,
            None => {
                let range = (&plant.u_max - &plant.u_min).mean();
                (0.01 * range).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpoSection {
    pub delta: f64,
    pub lambda: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub damping: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub fvp_stride: usize,
    pub cost_slack: f64,
    pub value_epochs: usize,
    pub value_lr: f64,
}

impl Default for CpoSection {
    fn default() -> Self {
        let d = CpoConfig::default();
        Self {
            delta: d.delta,
            lambda: d.lambda,
            cg_iters: d.cg_iters,
            cg_tol: d.cg_tol,
            damping: d.damping,
            backtrack_factor: d.backtrack_factor,
            max_backtracks: d.max_backtracks,
            fvp_stride: d.fvp_stride,
            cost_slack: d.cost_slack,
            value_epochs: d.value_epochs,
            value_lr: d.value_lr,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub updates: usize,
    pub episodes_per_update: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { updates: 1000, episodes_per_update: 90, checkpoint_every: 100 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub fault_dwell: u32,
    pub jump_prob: f64,
    /// Act with the policy mean instead of sampling.
    pub deterministic: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            horizon_min: 90,
            horizon_max: 180,
            fault_dwell: 30,
            jump_prob: 1.0 / 30.0,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub gain_scales: Vec<f64>,
    pub perturbations: Vec<f64>,
    pub episodes: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            gain_scales: vec![0.02, 0.05, 0.1, 0.2, 0.4],
            perturbations: vec![0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 2e-2],
            episodes: 200,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub thresholds: Vec<f64>,
    pub train_updates: usize,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub drift_rollouts: usize,
    /// Scale the initial-state ball with each threshold.
    pub scale_init_radius: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            thresholds: vec![0.02, 0.0632, 0.2],
            train_updates: 80,
            train_episodes: 20,
            eval_episodes: 200,
            drift_rollouts: 1000,
            scale_init_radius: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn build_plant(&self) -> Result<LinearFaultPlant> {
        let cfg: PlantConfig = match &self.plant.config_path {
            Some(path) => PlantConfig::load(path)?,
            None => default_three_tank_config(),
        };
        cfg.build()
    }

    fn reference(&self, n_y: usize) -> Result<ReferenceSchedule> {
        if self.episode.reference.is_empty() {
            return Ok(ReferenceSchedule::equilibrium(n_y));
        }
        let mut segments = Vec::new();
        for seg in &self.episode.reference {
            if seg.value.len() != n_y {
                return Err(Error::config(format!(
                    "episode.reference: segment value needs {n_y} entries"
                )));
            }
            segments.push((seg.start, DVector::from_vec(seg.value.clone())));
        }
        if segments[0].0 != 0 {
            return Err(Error::config("episode.reference: first segment must start at 0"));
        }
        Ok(ReferenceSchedule::Piecewise(segments))
    }

    fn base_episode_config(&self, plant: &LinearFaultPlant) -> Result<EpisodeConfig> {
        let (n_x, n_u, n_y) = (plant.n_x(), plant.n_u(), plant.n_y());
        let e = &self.episode;
        Ok(EpisodeConfig {
            horizon: e.horizon,
            delta_y_max: e.delta_y_max,
            cost_budget: e.cost_budget,
            gamma: e.gamma,
            gamma_c: e.gamma_c,
            fault_process: e.fault.build(n_u)?,
            init_radius: e.init_radius,
            prior: BeliefPrior {
                mu_x: DVector::zeros(n_x),
                sigma_x: DMatrix::identity(n_x, n_x) * e.prior_state_var,
                mu_z: DVector::from_element(n_u, e.prior_fault_mean),
                sigma_z: DMatrix::identity(n_u, n_u) * e.prior_fault_var,
            },
            walk_model: FaultWalkModel::isotropic(n_u, e.walk_bias),
            reference: self.reference(n_y)?,
        })
    }

    /// Episode configuration for training collection.
    pub fn train_episode_config(&self, plant: &LinearFaultPlant) -> Result<EpisodeConfig> {
        self.base_episode_config(plant)
    }

    /// Episode configuration for jump-fault evaluation; the horizon is a
    /// placeholder overridden per episode.
    pub fn eval_episode_config(&self, plant: &LinearFaultPlant) -> Result<EpisodeConfig> {
        let mut cfg = self.base_episode_config(plant)?;
        cfg.fault_process = FaultProcess::Jump {
            dwell_min: self.eval.fault_dwell,
            jump_prob: self.eval.jump_prob,
        };
        cfg.horizon = self.eval.horizon_max;
        Ok(cfg)
    }

    pub fn cpo_config(&self) -> CpoConfig {
        let c = &self.cpo;
        CpoConfig {
            delta: c.delta,
            cost_limit: self.episode.cost_budget,
            gamma: self.episode.gamma,
            gamma_c: self.episode.gamma_c,
            lambda: c.lambda,
            cg_iters: c.cg_iters,
            cg_tol: c.cg_tol,
            damping: c.damping,
            backtrack_factor: c.backtrack_factor,
            max_backtracks: c.max_backtracks,
            fvp_stride: c.fvp_stride,
            cost_slack: c.cost_slack,
            value_epochs: c.value_epochs,
            value_lr: c.value_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.updates == 0 || self.train.episodes_per_update == 0 {
            return Err(Error::config("train counts must be >= 1"));
        }
        if self.eval.horizon_min > self.eval.horizon_max || self.eval.horizon_min == 0 {
            return Err(Error::config("eval horizon range is degenerate"));
        }
        if self.train.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be >= 1"));
        }
        self.cpo_config().validate()?;
        Ok(())
    }
}
