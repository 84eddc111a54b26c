//! Episode execution shared by training collection, evaluation and baseline
//! tuning.
//!
//! Every episode owns two ChaCha streams derived from `(seed, episode
//! index)`: one for the environment (noise, faults, initial conditions) and
//! one for the agent (action sampling). Results are therefore identical
//! whether episodes run sequentially or on the rayon pool, and the plant
//! realization is untouched by the choice of controller stochasticity.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::{baseline_action, BaselineSpec};
use crate::cpo::EpisodeData;
use crate::diffnet::{ForwardScratch, ObsNormalizer, PolicySpec};
use crate::env::{AgentObservation, Env, EpisodeTrace};
use crate::error::Result;
use crate::exec;

/// Stream layout on the per-subcommand base seed.
const STREAM_INIT: u64 = 0;
const STREAM_EPISODE_BASE: u64 = 2;

/// RNG used once per run for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    rng
}

/// Independent environment and agent streams for one episode.
pub fn episode_rngs(seed: u64, episode_index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(STREAM_EPISODE_BASE + 2 * episode_index);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(seed);
    agent_rng.set_stream(STREAM_EPISODE_BASE + 2 * episode_index + 1);
    (env_rng, agent_rng)
}

/// Mixes a salt into a base seed (one splitmix64 round) so nested phases
/// (sweep entries, drift studies) get disjoint seed domains.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Acting side of an episode: learned policy or baseline controller.
pub enum Controller<'a> {
    Policy { policy: &'a PolicySpec, normalizer: &'a ObsNormalizer, deterministic: bool },
    Baseline { spec: &'a BaselineSpec },
}

impl<'a> Controller<'a> {
    pub fn policy(policy: &'a PolicySpec, normalizer: &'a ObsNormalizer, deterministic: bool) -> Self {
        Controller::Policy { policy, normalizer, deterministic }
    }

    pub fn baseline(spec: &'a BaselineSpec) -> Self {
        Controller::Baseline { spec }
    }

    /// Picks an action from the masked observation. Returns the action, the
    /// log-probability under the acting distribution (zero for controllers
    /// without one) and the normalized observation the policy consumed.
    fn act(
        &self,
        env: &Env,
        obs: &AgentObservation,
        scratch: &mut ForwardScratch,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DVector<f64>, f64, Vec<f64>)> {
        match self {
            Controller::Policy { policy, normalizer, deterministic } => {
                let norm_obs = normalizer.normalize(obs.as_slice());
                let (action, logp) = if *deterministic {
                    let (mean, _) = policy.forward_with(&norm_obs, scratch)?;
                    let logp = policy.log_prob(&norm_obs, &mean)?;
                    (mean, logp)
                } else {
                    policy.sample(&norm_obs, rng)?
                };
                Ok((DVector::from_vec(action), logp, norm_obs))
            }
            Controller::Baseline { spec } => {
                // The reference and output sit at the tail of the masked state.
                let n_y = env.plant.n_y();
                let slice = obs.as_slice();
                let y_ref = DVector::from_column_slice(&slice[slice.len() - 2 * n_y..slice.len() - n_y]);
                let y = DVector::from_column_slice(&slice[slice.len() - n_y..]);
                let action = baseline_action(spec, &y, &y_ref, &env.plant, rng);
                Ok((action, 0.0, Vec::new()))
            }
        }
    }
}

/// Everything measured over one episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    /// Per-step data with the observations the policy consumed (normalized);
    /// empty observations for non-policy controllers.
    pub data: EpisodeData,
    /// Raw (un-normalized) masked observations, for normalizer refreshes.
    pub raw_obs: Vec<Vec<f64>>,
    pub reward_sum: f64,
    pub cost_sum: f64,
    pub steps: usize,
    /// Discounted cost return at the environment's `gamma_c`.
    pub cost_return: f64,
    /// `(error at jump, error 30 steps later)` for each complete jump event.
    pub jump_recoveries: Vec<(f64, f64)>,
    pub trace: Option<EpisodeTrace>,
}

/// Rolls one full episode under the controller.
pub fn run_episode(
    env: &Env,
    controller: &Controller,
    env_rng: &mut ChaCha8Rng,
    agent_rng: &mut ChaCha8Rng,
    want_trace: bool,
) -> Result<EpisodeOutcome> {
    let (mut state, mut obs) = env.reset(env_rng)?;
    let mut scratch = ForwardScratch::default();
    let mut data = EpisodeData::default();
    let mut raw_obs = Vec::with_capacity(env.config.horizon);
    let mut trace = want_trace.then(EpisodeTrace::default);
    let mut reward_sum = 0.0;
    let mut cost_sum = 0.0;
    let mut cost_return = 0.0;
    let mut gamma_c_pow = 1.0;

    // Jump bookkeeping: (birth step, error at birth) of a pending event.
    const RECOVERY_WINDOW: usize = 30;
    let mut prev_z = state.plant.z.clone();
    let mut pending_jump: Option<(usize, f64)> = None;
    let mut jump_recoveries = Vec::new();

    for _ in 0..env.config.horizon {
        let (action, logp, norm_obs) = controller.act(env, &obs, &mut scratch, agent_rng)?;
        let out = env.step(&mut state, &action, env_rng)?;

        raw_obs.push(obs.0.clone());
        data.obs.push(norm_obs);
        data.actions.push(action.iter().copied().collect());
        data.log_probs.push(logp);
        data.rewards.push(out.reward);
        data.costs.push(out.cost);
        reward_sum += out.reward;
        cost_sum += out.cost;
        cost_return += gamma_c_pow * out.cost;
        gamma_c_pow *= env.config.gamma_c;

        let err = (&state.belief.mu_z - &state.plant.z).norm();
        if state.plant.z != prev_z {
            pending_jump = Some((state.t, err));
            prev_z = state.plant.z.clone();
        } else if let Some((birth, err_at_jump)) = pending_jump {
            if state.t == birth + RECOVERY_WINDOW - 1 {
                jump_recoveries.push((err_at_jump, err));
                pending_jump = None;
            }
        }

        if let Some(tr) = trace.as_mut() {
            tr.record(&state, &crate::linsys::clip_action(&action, &env.plant), out.reward, out.cost);
        }
        obs = out.observation;
        if out.done {
            break;
        }
    }

    Ok(EpisodeOutcome {
        steps: data.len(),
        data,
        raw_obs,
        reward_sum,
        cost_sum,
        cost_return,
        jump_recoveries,
        trace,
    })
}

/// Runs `n_episodes` episodes with indices `base..base + n`, in parallel
/// when available; the output order is by index.
pub fn run_episodes(
    env: &Env,
    controller: &Controller,
    seed: u64,
    episode_base: u64,
    n_episodes: usize,
    want_trace: bool,
) -> Result<Vec<EpisodeOutcome>> {
    let outcomes = exec::map_indexed(n_episodes, |e| {
        let (mut env_rng, mut agent_rng) = episode_rngs(seed, episode_base + e as u64);
        run_episode(env, controller, &mut env_rng, &mut agent_rng, want_trace)
    });
    outcomes.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EpisodeConfig;
    use crate::linsys::default_three_tank;

    fn env() -> Env {
        Env::new(default_three_tank(), EpisodeConfig::defaults(3, 2, 2)).unwrap()
    }

    fn policy() -> (PolicySpec, ObsNormalizer) {
        let mut rng = init_rng(5);
        let p = PolicySpec::new(18, 2, vec![8], -5.0, true, &mut rng);
        (p, ObsNormalizer::new(18))
    }

    #[test]
    fn episode_has_horizon_steps() {
        let env = env();
        let (p, norm) = policy();
        let controller = Controller::policy(&p, &norm, false);
        let (mut er, mut ar) = episode_rngs(1, 0);
        let out = run_episode(&env, &controller, &mut er, &mut ar, true).unwrap();
        assert_eq!(out.steps, 40);
        assert_eq!(out.trace.unwrap().rows.len(), 40);
        assert_eq!(out.data.obs.len(), 40);
        assert!(out.reward_sum < 0.0);
    }

    #[test]
    fn parallel_and_sequential_batches_agree() {
        let env = env();
        let (p, norm) = policy();
        let controller = Controller::policy(&p, &norm, false);
        let batch = run_episodes(&env, &controller, 3, 0, 6, false).unwrap();
        // Re-run each episode individually (sequential path) and compare.
        for (e, outcome) in batch.iter().enumerate() {
            let (mut er, mut ar) = episode_rngs(3, e as u64);
            let solo = run_episode(&env, &controller, &mut er, &mut ar, false).unwrap();
            assert_eq!(solo.reward_sum, outcome.reward_sum);
            assert_eq!(solo.data.actions, outcome.data.actions);
        }
    }

    #[test]
    fn deterministic_controller_ignores_agent_stream() {
        let env = env();
        let (p, norm) = policy();
        let controller = Controller::policy(&p, &norm, true);
        let (mut er1, mut ar1) = episode_rngs(7, 0);
        let (mut er2, _) = episode_rngs(7, 0);
        let mut ar_other = {
            let (_, a) = episode_rngs(999, 42);
            a
        };
        let a = run_episode(&env, &controller, &mut er1, &mut ar1, false).unwrap();
        let b = run_episode(&env, &controller, &mut er2, &mut ar_other, false).unwrap();
        assert_eq!(a.reward_sum, b.reward_sum);
        assert_eq!(a.cost_sum, b.cost_sum);
    }

    #[test]
    fn mix_seed_separates_domains() {
        assert_ne!(mix_seed(0, 1), mix_seed(0, 2));
        assert_ne!(mix_seed(1, 1), mix_seed(2, 1));
        assert_eq!(mix_seed(5, 3), mix_seed(5, 3));
    }
}
