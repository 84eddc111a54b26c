//! Tracking-threshold sweep: one desk-scale policy per tolerance value, plus
//! a zero-input Monte-Carlo estimate of how often process noise alone
//! violates each tolerance.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

use super::evaluation::evaluate_outcomes;
use super::rollout::{episode_rngs, mix_seed, Controller};
use super::training::train;
use super::ExperimentConfig;
use crate::env::Env;
use crate::error::Result;
use crate::exec;

/// Sweep result for one tolerance value.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub threshold: f64,
    /// Mean over evaluation episodes of the per-step reward.
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_episode_cost_return: f64,
    /// Probability that a zero-input rollout violates the tolerance at
    /// least once.
    pub drift_episode_prob: f64,
    /// Per-step violation rate of zero-input rollouts.
    pub drift_step_rate: f64,
    /// Error string when training failed for this threshold.
    pub error: Option<String>,
    /// Per-episode mean step rewards (boxplot data).
    pub episode_returns: Vec<f64>,
}

pub struct SweepOutput {
    pub entries: Vec<SweepEntry>,
}

impl SweepOutput {
    /// Long-format per-episode CSV: `threshold, episode, mean_step_reward`.
    pub fn write_returns_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold,episode,mean_step_reward")?;
        for entry in &self.entries {
            for (e, r) in entry.episode_returns.iter().enumerate() {
                writeln!(w, "{},{},{}", entry.threshold, e, r)?;
            }
        }
        Ok(())
    }

    /// Per-threshold summary CSV.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "threshold,mean_return,std_return,mean_episode_cost_return,drift_episode_prob,drift_step_rate,error"
        )?;
        for s in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.threshold,
                s.mean_return,
                s.std_return,
                s.mean_episode_cost_return,
                s.drift_episode_prob,
                s.drift_step_rate,
                s.error.clone().unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Fraction of zero-input rollouts that drift past the tolerance, and the
/// per-step violation rate, over evaluation-length horizons.
pub fn drift_violation_probability(
    config: &ExperimentConfig,
    threshold: f64,
    rollouts: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let plant = config.build_plant()?;
    let mut eval_cfg = config.eval_episode_config(&plant)?;
    eval_cfg.delta_y_max = threshold;
    if config.sweep.scale_init_radius {
        eval_cfg.init_radius = threshold;
    }
    let results = exec::map_indexed(rollouts, |e| -> Result<(bool, f64, usize)> {
        let (mut env_rng, _) = episode_rngs(seed, e as u64);
        let horizon =
            rand::Rng::gen_range(&mut env_rng, config.eval.horizon_min..=config.eval.horizon_max);
        let mut cfg = eval_cfg.clone();
        cfg.horizon = horizon;
        let env = Env::new(plant.clone(), cfg)?;
        let (mut state, _) = env.reset(&mut env_rng)?;
        let zero = nalgebra::DVector::zeros(env.plant.n_u());
        let mut violations = 0.0;
        for _ in 0..horizon {
            let out = env.step(&mut state, &zero, &mut env_rng)?;
            violations += out.cost;
        }
        Ok((violations > 0.0, violations, horizon))
    });
    let mut violated_episodes = 0usize;
    let mut violation_steps = 0.0;
    let mut total_steps = 0usize;
    for r in results {
        let (violated, steps_violated, steps) = r?;
        violated_episodes += violated as usize;
        violation_steps += steps_violated;
        total_steps += steps;
    }
    Ok((
        violated_episodes as f64 / rollouts.max(1) as f64,
        violation_steps / total_steps.max(1) as f64,
    ))
}

/// Trains and evaluates one policy per threshold at sweep scale. Individual
/// training failures are recorded on their entry and the sweep continues.
pub fn sweep_tracking_threshold(
    config: &ExperimentConfig,
    thresholds: &[f64],
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<SweepOutput> {
    if thresholds.is_empty() {
        return Err(crate::error::Error::config("sweep threshold list is empty"));
    }
    let mut entries = Vec::with_capacity(thresholds.len());
    for (i, &threshold) in thresholds.iter().enumerate() {
        let mut sub_config = config.clone();
        sub_config.episode.delta_y_max = threshold;
        if config.sweep.scale_init_radius {
            sub_config.episode.init_radius = threshold;
        }
        sub_config.train.updates = config.sweep.train_updates;
        sub_config.train.episodes_per_update = config.sweep.train_episodes;
        sub_config.eval.episodes = config.sweep.eval_episodes;
        sub_config.train.checkpoint_every = usize::MAX - 1;

        let sub_seed = mix_seed(seed, 0x5eed_0000 + i as u64);
        let (drift_episode_prob, drift_step_rate) = drift_violation_probability(
            &sub_config,
            threshold,
            config.sweep.drift_rollouts,
            mix_seed(sub_seed, 0xd61f7),
        )?;

        let entry = match train(&sub_config, sub_seed, None) {
            Ok(trained) => {
                let controller = Controller::policy(
                    &trained.checkpoint.policy,
                    &trained.checkpoint.normalizer,
                    config.eval.deterministic,
                );
                let outcomes = evaluate_outcomes(
                    &sub_config,
                    &controller,
                    mix_seed(sub_seed, 0xe7a1),
                    sub_config.eval.episodes,
                )?;
                let per_episode: Vec<f64> =
                    outcomes.iter().map(|o| o.reward_sum / o.steps as f64).collect();
                let n = per_episode.len().max(1) as f64;
                let mean = per_episode.iter().sum::<f64>() / n;
                let var =
                    per_episode.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
                SweepEntry {
                    threshold,
                    mean_return: mean,
                    std_return: var.sqrt(),
                    mean_episode_cost_return: outcomes.iter().map(|o| o.cost_return).sum::<f64>()
                        / n,
                    drift_episode_prob,
                    drift_step_rate,
                    error: None,
                    episode_returns: per_episode,
                }
            }
            Err(e) => SweepEntry {
                threshold,
                mean_return: f64::NAN,
                std_return: f64::NAN,
                mean_episode_cost_return: f64::NAN,
                drift_episode_prob,
                drift_step_rate,
                error: Some(e.to_string()),
                episode_returns: Vec::new(),
            },
        };
        entries.push(entry);
    }

    let output = SweepOutput { entries };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        output.write_returns_csv(&mut buf)?;
        std::fs::write(dir.join("sweep_returns.csv"), buf)?;
        let mut buf = Vec::new();
        output.write_summary_csv(&mut buf)?;
        std::fs::write(dir.join("sweep_summary.csv"), buf)?;
    }
    Ok(output)
}
