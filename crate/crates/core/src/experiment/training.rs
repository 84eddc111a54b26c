//! Training protocol: collect episodes under the current policy, estimate
//! advantages, take one constrained trust-region step, refit the value
//! heads, refresh the observation normalizer.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use super::rollout::{run_episodes, Controller};
use super::ExperimentConfig;
use crate::cpo::{
    cpo_update, estimate_advantages, fit_values, FitDiagnostics, TrajectoryBatch,
    UpdateDiagnostics,
};
use crate::diffnet::{Checkpoint, ObsNormalizer, PolicySpec, ValueSpec};
use crate::env::Env;
use crate::error::{Error, Result};

/// One line of the structured training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub update: usize,
    pub mean_step_reward: f64,
    pub mean_episode_reward_return: f64,
    pub mean_episode_cost_return: f64,
    pub diagnostics: UpdateDiagnostics,
    pub value_fit: FitDiagnostics,
}

/// Result of a training run.
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub records: Vec<TrainRecord>,
}

/// Runs the full training loop. When `out_dir` is given, emits
/// `training_log.jsonl`, periodic `checkpoint_<update>.json` files and the
/// final `checkpoint.json`.
///
/// If an update aborts on non-finite state, the last good checkpoint is
/// saved before the error propagates.
pub fn train(config: &ExperimentConfig, seed: u64, out_dir: Option<&Path>) -> Result<TrainOutput> {
    config.validate()?;
    let plant = config.build_plant()?;
    let env = Env::new(plant, config.train_episode_config(&config.build_plant()?)?)?;
    let obs_dim = env.observation_dim();
    let n_u = env.plant.n_u();

    let mut init = super::rollout::init_rng(seed);
    let mut policy = PolicySpec::new(
        obs_dim,
        n_u,
        config.policy.hidden.clone(),
        config.policy.resolved_log_std_init(&env.plant),
        config.policy.log_std_trainable,
        &mut init,
    );
    let mut reward_value = ValueSpec::new(obs_dim, config.policy.value_hidden.clone(), &mut init);
    let mut cost_value = ValueSpec::new(obs_dim, config.policy.value_hidden.clone(), &mut init);
    let mut normalizer = ObsNormalizer::new(obs_dim);
    let cpo_config = config.cpo_config();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log_file = match out_dir {
        Some(dir) => Some(std::io::BufWriter::new(std::fs::File::create(
            dir.join("training_log.jsonl"),
        )?)),
        None => None,
    };

    let mut records = Vec::with_capacity(config.train.updates);
    for update in 0..config.train.updates {
        let controller = Controller::policy(&policy, &normalizer, false);
        let episode_base = (update * config.train.episodes_per_update) as u64;
        let outcomes = run_episodes(
            &env,
            &controller,
            seed,
            episode_base,
            config.train.episodes_per_update,
            false,
        )?;

        let mut raw_obs: Vec<Vec<f64>> = Vec::new();
        let mut episodes = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            raw_obs.extend(outcome.raw_obs);
            episodes.push(outcome.data);
        }
        let mut batch = TrajectoryBatch::from_episodes(episodes)?;
        estimate_advantages(&mut batch, &reward_value, &cost_value, &cpo_config)?;

        let step = cpo_update(&batch, &policy, &cpo_config);
        let (new_policy, diagnostics) = match step {
            Ok(ok) => ok,
            Err(e) => {
                // Preserve the last good state before surfacing the failure.
                if let Some(dir) = out_dir {
                    let ckpt = Checkpoint::new(
                        policy.clone(),
                        reward_value.clone(),
                        cost_value.clone(),
                        normalizer.clone(),
                    );
                    ckpt.save(&dir.join("checkpoint_last_good.json"))?;
                }
                return Err(Error::numerical(format!("update {update} aborted: {e}")));
            }
        };
        policy = new_policy;
        let value_fit = fit_values(&batch, &mut reward_value, &mut cost_value, &cpo_config)?;
        normalizer.update_batch(raw_obs.iter().map(|o| o.as_slice()));

        let record = TrainRecord {
            update,
            mean_step_reward: batch.mean_step_reward(),
            mean_episode_reward_return: batch.mean_episode_reward_return(cpo_config.gamma),
            mean_episode_cost_return: batch.mean_episode_cost_return(cpo_config.gamma_c),
            diagnostics,
            value_fit,
        };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Serde(e.to_string()))?;
            writeln!(f, "{line}")?;
        }
        records.push(record);

        if let Some(dir) = out_dir {
            let periodic = (update + 1) % config.train.checkpoint_every == 0;
            if periodic && update + 1 < config.train.updates {
                let ckpt = Checkpoint::new(
                    policy.clone(),
                    reward_value.clone(),
                    cost_value.clone(),
                    normalizer.clone(),
                );
                ckpt.save(&dir.join(format!("checkpoint_{:06}.json", update + 1)))?;
            }
        }
    }

    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    let checkpoint = Checkpoint::new(policy, reward_value, cost_value, normalizer);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("checkpoint.json"))?;
    }
    Ok(TrainOutput { checkpoint, records })
}
