//! Diagonal-Gaussian stochastic policy with exact gradient, KL and
//! Fisher-vector-product contracts.
//!
//! The mean comes from an MLP; the log standard deviations are
//! state-independent, either part of the trainable vector (default) or
//! frozen constants. All batch objectives (importance-weighted surrogate,
//! mean KL) are built per-sample on the differentiation tape; evaluating the
//! same construction with dual-number scalars and tangent-seeded parameters
//! yields exact KL-Hessian-vector products without materializing the matrix.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardScratch, MlpShape};
use super::real::{Dual, Real};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.8378770664093453;

/// Parameters of the stochastic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub mlp: MlpShape,
    /// Flat trainable vector: MLP weights, then log-stds when trainable.
    pub theta: Vec<f64>,
    /// When `Some`, log-stds are frozen constants excluded from `theta`.
    pub fixed_log_std: Option<Vec<f64>>,
}

impl PolicySpec {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: Vec<usize>,
        log_std_init: f64,
        log_std_trainable: bool,
        rng: &mut R,
    ) -> Self {
        let mlp = MlpShape::new(obs_dim, hidden, action_dim);
        let mut theta = mlp.init_params(0.01, rng);
        let log_std = vec![log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX); action_dim];
        let fixed_log_std = if log_std_trainable {
            theta.extend_from_slice(&log_std);
            None
        } else {
            Some(log_std)
        };
        Self { mlp, theta, fixed_log_std }
    }

    pub fn action_dim(&self) -> usize {
        self.mlp.output
    }

    pub fn obs_dim(&self) -> usize {
        self.mlp.input
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn mlp_params(&self) -> &[f64] {
        &self.theta[..self.mlp.param_count()]
    }

    /// Unclamped log-std values, wherever they live.
    pub fn log_std_raw(&self) -> &[f64] {
        match &self.fixed_log_std {
            Some(ls) => ls,
            None => &self.theta[self.mlp.param_count()..],
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std_raw()
            .iter()
            .map(|ls| ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect()
    }

    /// Deterministic forward pass: state-dependent mean, constant std.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut scratch = ForwardScratch::default();
        self.forward_with(obs, &mut scratch)
    }

    pub fn forward_with(&self, obs: &[f64], scratch: &mut ForwardScratch) -> Result<(Vec<f64>, Vec<f64>)> {
        if obs.len() != self.mlp.input {
            return Err(Error::Dimension { context: "policy obs", expected: self.mlp.input, actual: obs.len() });
        }
        let mean = self.mlp.forward(self.mlp_params(), obs, scratch);
        Ok((mean, self.std()))
    }

    /// Draws `action = mean + std .* eps` and returns its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let (mean, std) = self.forward(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(std.iter())
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = log_prob_parts(&mean, &std, &action);
        Ok((action, logp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let (mean, std) = self.forward(obs)?;
        if action.len() != mean.len() {
            return Err(Error::Dimension { context: "policy action", expected: mean.len(), actual: action.len() });
        }
        Ok(log_prob_parts(&mean, &std, action))
    }

    /// Per-sample taped mean and clamped log-std variables.
    fn forward_dist_tape<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        obs: &[f64],
    ) -> (Vec<Var>, Vec<Var>) {
        let mlp_count = self.mlp.param_count();
        let mean = self.mlp.forward_tape(tape, &params[..mlp_count], obs);
        let log_std: Vec<Var> = match &self.fixed_log_std {
            Some(ls) => ls.iter().map(|&v| tape.constant(v)).collect(),
            None => params[mlp_count..].to_vec(),
        };
        let clamped = log_std.iter().map(|&v| tape.clamp(v, LOG_STD_MIN, LOG_STD_MAX)).collect();
        (mean, clamped)
    }
}

fn log_prob_parts(mean: &[f64], std: &[f64], action: &[f64]) -> f64 {
    let mut logp = -0.5 * LN_2PI * mean.len() as f64;
    for ((m, s), a) in mean.iter().zip(std.iter()).zip(action.iter()) {
        let z = (a - m) / s;
        logp += -0.5 * z * z - s.ln();
    }
    logp
}

/// Batch-mean KL divergence `KL(new || old)` of the diagonal Gaussians at
/// each observation, in closed form.
pub fn kl<O: AsRef<[f64]>>(new: &PolicySpec, old: &PolicySpec, obs: &[O]) -> Result<f64> {
    if obs.is_empty() {
        return Ok(0.0);
    }
    let mut scratch = ForwardScratch::default();
    let mut total = 0.0;
    for o in obs {
        let (mean_new, std_new) = new.forward_with(o.as_ref(), &mut scratch)?;
        let (mean_old, std_old) = old.forward_with(o.as_ref(), &mut scratch)?;
        total += kl_diag(&mean_new, &std_new, &mean_old, &std_old);
    }
    Ok(total / obs.len() as f64)
}

fn kl_diag(mean_new: &[f64], std_new: &[f64], mean_old: &[f64], std_old: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..mean_new.len() {
        let var_new = std_new[i] * std_new[i];
        let var_old = std_old[i] * std_old[i];
        let dm = mean_new[i] - mean_old[i];
        acc += std_old[i].ln() - std_new[i].ln() + (var_new + dm * dm) / (2.0 * var_old) - 0.5;
    }
    acc
}

/// On-policy data a surrogate objective is estimated from. Observations are
/// expected to be pre-normalized; `log_prob_old` was recorded at collection.
pub struct SurrogateData<'a> {
    pub obs: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    pub log_prob_old: &'a [f64],
    pub advantages: &'a [f64],
}

impl<'a> SurrogateData<'a> {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.actions.len() != self.obs.len()
            || self.log_prob_old.len() != self.obs.len()
            || self.advantages.len() != self.obs.len()
        {
            return Err(Error::contract("surrogate data arrays misaligned"));
        }
        Ok(())
    }
}

/// Importance-weighted surrogate `mean(exp(logp - logp_old) * adv)` without
/// gradients (used by the line search).
pub fn surrogate(policy: &PolicySpec, data: &SurrogateData) -> Result<f64> {
    data.validate()?;
    let mut scratch = ForwardScratch::default();
    let mut total = 0.0;
    for i in 0..data.len() {
        let (mean, std) = policy.forward_with(&data.obs[i], &mut scratch)?;
        let logp = log_prob_parts(&mean, &std, &data.actions[i]);
        total += (logp - data.log_prob_old[i]).exp() * data.advantages[i];
    }
    Ok(total / data.len().max(1) as f64)
}

// ---------------------------------------------------------------------------
// Taped batch objectives
// ---------------------------------------------------------------------------

/// One scalar contribution per sample, buildable at any scalar type; the
/// batch objective is the mean of the contributions.
trait SampleObjective: Sync {
    fn n_samples(&self) -> usize;
    fn build<S: Real>(&self, idx: usize, tape: &mut Tape<S>, params: &[Var]) -> Var;
}

/// Surrogate contribution: `exp(logp - logp_old) * adv`.
struct SurrogateObjective<'a> {
    policy: &'a PolicySpec,
    data: &'a SurrogateData<'a>,
}

impl SampleObjective for SurrogateObjective<'_> {
    fn n_samples(&self) -> usize {
        self.data.len()
    }

    fn build<S: Real>(&self, idx: usize, tape: &mut Tape<S>, params: &[Var]) -> Var {
        let (mean, log_std) = self.policy.forward_dist_tape(tape, params, &self.data.obs[idx]);
        let action = &self.data.actions[idx];
        // logp = -n/2 ln(2pi) - sum_i [ 0.5 ((a_i - mu_i)/sigma_i)^2 + ls_i ]
        let mut logp = tape.constant(-0.5 * LN_2PI * mean.len() as f64);
        for i in 0..mean.len() {
            let neg_mu = tape.neg(mean[i]);
            let diff = tape.add_const(neg_mu, action[i]);
            let sigma = tape.exp(log_std[i]);
            let z = tape.div(diff, sigma);
            let z2 = tape.square(z);
            let half = tape.scale(z2, -0.5);
            logp = tape.add(logp, half);
            logp = tape.sub(logp, log_std[i]);
        }
        let shifted = tape.add_const(logp, -self.data.log_prob_old[idx]);
        let ratio = tape.exp(shifted);
        tape.scale(ratio, self.data.advantages[idx])
    }
}

/// Mean-KL contribution against a frozen old distribution.
struct KlObjective<'a> {
    policy: &'a PolicySpec,
    obs: &'a [Vec<f64>],
    old_means: &'a [Vec<f64>],
    old_stds: &'a [Vec<f64>],
}

impl SampleObjective for KlObjective<'_> {
    fn n_samples(&self) -> usize {
        self.obs.len()
    }

    fn build<S: Real>(&self, idx: usize, tape: &mut Tape<S>, params: &[Var]) -> Var {
        let (mean, log_std) = self.policy.forward_dist_tape(tape, params, &self.obs[idx]);
        let old_mean = &self.old_means[idx];
        let old_std = &self.old_stds[idx];
        let mut acc = tape.constant(0.0);
        for i in 0..mean.len() {
            // ln(s_old) - ls + (exp(2 ls) + (mu - mu_old)^2) / (2 s_old^2) - 0.5
            let two_ls = tape.scale(log_std[i], 2.0);
            let var_new = tape.exp(two_ls);
            let neg_mu = tape.neg(mean[i]);
            let dm = tape.add_const(neg_mu, old_mean[i]);
            let dm2 = tape.square(dm);
            let num = tape.add(var_new, dm2);
            let frac = tape.scale(num, 0.5 / (old_std[i] * old_std[i]));
            let with_ls = tape.sub(frac, log_std[i]);
            let term = tape.add_const(with_ls, old_std[i].ln() - 0.5);
            acc = tape.add(acc, term);
        }
        acc
    }
}

/// Batch mean and exact gradient of a sample objective at the given scalar
/// type. Samples are processed in fixed-size chunks; chunk partials are
/// reduced in index order so the result does not depend on thread count.
fn accumulate<S: Real, O: SampleObjective>(obj: &O, theta: &[S]) -> (S, Vec<S>)
where
    S: Send + Sync,
{
    let n = obj.n_samples();
    let dim = theta.len();
    if n == 0 {
        return (S::zero(), vec![S::zero(); dim]);
    }
    const CHUNK: usize = 128;
    let n_chunks = n.div_ceil(CHUNK);
    let partials = exec::map_indexed(n_chunks, |ci| {
        let lo = ci * CHUNK;
        let hi = ((ci + 1) * CHUNK).min(n);
        let mut tape: Tape<S> = Tape::new();
        let vars: Vec<Var> = theta.iter().map(|&p| tape.leaf(p)).collect();
        let base = tape.len();
        let mut grad = vec![S::zero(); dim];
        let mut value = S::zero();
        let mut adjoints = Vec::new();
        for s in lo..hi {
            tape.rewind(base);
            let out = obj.build(s, &mut tape, &vars);
            value = value + tape.value(out);
            tape.backward_into(out, &mut adjoints);
            for (g, v) in grad.iter_mut().zip(vars.iter()) {
                *g = *g + adjoints[v.index()];
            }
        }
        (value, grad)
    });
    let inv_n = S::from_f64(1.0 / n as f64);
    let mut value = S::zero();
    let mut grad = vec![S::zero(); dim];
    for (v, g) in partials {
        value = value + v;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc = *acc + gi;
        }
    }
    for g in grad.iter_mut() {
        *g = *g * inv_n;
    }
    (value * inv_n, grad)
}

/// Surrogate value and exact gradient w.r.t. the flat parameter vector.
pub fn surrogate_grad(policy: &PolicySpec, data: &SurrogateData) -> Result<(f64, Vec<f64>)> {
    data.validate()?;
    let obj = SurrogateObjective { policy, data };
    let (value, grad) = accumulate(&obj, &policy.theta);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite surrogate gradient"));
    }
    Ok((value, grad))
}

/// Batch-mean KL against the frozen snapshot plus its exact gradient.
pub fn kl_grad(policy: &PolicySpec, old: &PolicySpec, obs: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let (old_means, old_stds) = snapshot_dists(old, obs)?;
    let obj = KlObjective { policy, obs, old_means: &old_means, old_stds: &old_stds };
    let (value, grad) = accumulate(&obj, &policy.theta);
    Ok((value, grad))
}

/// Exact product of the batch-mean-KL Hessian (at `policy`, old = `policy`)
/// with `v`, plus `damping * v`. Computed by sweeping the KL gradient with
/// dual-number parameters tangent-seeded along `v`; the Hessian is never
/// formed.
pub fn fisher_vector_product(
    policy: &PolicySpec,
    obs: &[Vec<f64>],
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    if v.len() != policy.n_params() {
        return Err(Error::Dimension { context: "fvp direction", expected: policy.n_params(), actual: v.len() });
    }
    let (old_means, old_stds) = snapshot_dists(policy, obs)?;
    let obj = KlObjective { policy, obs, old_means: &old_means, old_stds: &old_stds };
    let theta_dual: Vec<Dual> = policy
        .theta
        .iter()
        .zip(v.iter())
        .map(|(&p, &t)| Dual::new(p, t))
        .collect();
    let (_, grad) = accumulate(&obj, &theta_dual);
    Ok(grad.iter().zip(v.iter()).map(|(g, vi)| g.t + damping * vi).collect())
}

fn snapshot_dists(policy: &PolicySpec, obs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut scratch = ForwardScratch::default();
    let mut means = Vec::with_capacity(obs.len());
    let mut stds = Vec::with_capacity(obs.len());
    for o in obs {
        let (m, s) = policy.forward_with(o, &mut scratch)?;
        means.push(m);
        stds.push(s);
    }
    Ok((means, stds))
}
