//! Episodic environment wrapping the plant and the fault observer.
//!
//! Hidden plant state and true fault never reach the agent: the observation
//! is the masked vector `[mu_x | triu(sigma_x) | mu_z | triu(sigma_z) |
//! y_ref | y]`. The reward is the (closed-form) negative expected squared
//! fault-estimation error; the cost is a binary indicator that the output
//! tracking error exceeded the tolerance, so its undiscounted episode sum is
//! a violation count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::io::Write;

use crate::error::{Error, Result};
use crate::linsys::{clip_action, step_plant, FaultProcess, LinearFaultPlant, PlantState};
use crate::math::{pack_triu, sample_ball, sample_mvn, triu_len};
use crate::observer::{observer_step, Belief, FaultWalkModel};

/// Gaussian belief the observer is initialized with at episode start.
#[derive(Debug, Clone)]
pub struct BeliefPrior {
    pub mu_x: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
    pub mu_z: DVector<f64>,
    pub sigma_z: DMatrix<f64>,
}

impl BeliefPrior {
    /// Wide uninformative default: fault mean 0.5 with unit covariance,
    /// state centered at the equilibrium.
    pub fn uninformative(n_x: usize, n_u: usize, state_var: f64) -> Self {
        Self {
            mu_x: DVector::zeros(n_x),
            sigma_x: DMatrix::identity(n_x, n_x) * state_var,
            mu_z: DVector::from_element(n_u, 0.5),
            sigma_z: DMatrix::identity(n_u, n_u),
        }
    }

    fn belief(&self) -> Result<Belief> {
        Belief::new(
            self.mu_x.clone(),
            self.sigma_x.clone(),
            self.mu_z.clone(),
            self.sigma_z.clone(),
        )
    }
}

/// Output reference signal in deviation coordinates.
#[derive(Debug, Clone)]
pub enum ReferenceSchedule {
    Constant(DVector<f64>),
    /// Piecewise-constant: `(start_step, value)` segments, first must start at 0.
    Piecewise(Vec<(usize, DVector<f64>)>),
}

impl ReferenceSchedule {
    pub fn at(&self, t: usize) -> DVector<f64> {
        match self {
            ReferenceSchedule::Constant(v) => v.clone(),
            ReferenceSchedule::Piecewise(segments) => {
                let mut current = &segments[0].1;
                for (start, value) in segments {
                    if *start <= t {
                        current = value;
                    }
                }
                current.clone()
            }
        }
    }

    pub fn equilibrium(n_y: usize) -> Self {
        ReferenceSchedule::Constant(DVector::zeros(n_y))
    }
}

/// Per-episode configuration of the decision process.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    /// Episode length in steps.
    pub horizon: usize,
    /// Tracking tolerance on the output infinity-norm error.
    pub delta_y_max: f64,
    /// Violation budget per episode.
    pub cost_budget: f64,
    pub gamma: f64,
    pub gamma_c: f64,
    /// Law of the true fault trajectory.
    pub fault_process: FaultProcess,
    /// Radius of the uniform ball the initial state is drawn from.
    pub init_radius: f64,
    pub prior: BeliefPrior,
    /// Walk dynamics the observer assumes (decoupled from `fault_process`).
    pub walk_model: FaultWalkModel,
    pub reference: ReferenceSchedule,
}

impl EpisodeConfig {
    pub fn defaults(n_x: usize, n_u: usize, n_y: usize) -> Self {
        Self {
            horizon: 40,
            delta_y_max: 0.1,
            cost_budget: 6.0,
            gamma: 0.99,
            gamma_c: 1.0,
            fault_process: FaultProcess::Constant,
            init_radius: 0.1,
            prior: BeliefPrior::uninformative(n_x, n_u, 0.002),
            walk_model: FaultWalkModel::isotropic(n_u, 1e-3),
            reference: ReferenceSchedule::equilibrium(n_y),
        }
    }

    pub fn validate(&self, plant: &LinearFaultPlant) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("horizon must be >= 1"));
        }
        if self.delta_y_max <= 0.0 {
            return Err(Error::config("delta_y_max must be positive"));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) || !(0.0 < self.gamma_c && self.gamma_c <= 1.0) {
            return Err(Error::config("discounts must lie in (0, 1]"));
        }
        if self.init_radius < 0.0 {
            return Err(Error::config("init_radius must be >= 0"));
        }
        self.fault_process.validate(plant.n_u())?;
        self.prior.belief()?;
        Ok(())
    }
}

/// Full environment state; `plant` is hidden from the agent.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub plant: PlantState,
    pub belief: Belief,
    pub y: DVector<f64>,
    pub y_ref: DVector<f64>,
    pub t: usize,
}

impl EnvState {
    pub fn done(&self, config: &EpisodeConfig) -> bool {
        self.t >= config.horizon
    }
}

/// Flat agent observation; layout documented on [`mask_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation(pub Vec<f64>);

impl AgentObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observation length for given plant dimensions.
pub fn observation_dim(n_x: usize, n_u: usize, n_y: usize) -> usize {
    n_x + triu_len(n_x) + n_u + triu_len(n_u) + 2 * n_y
}

/// Plant plus episode configuration; all per-episode state lives in
/// [`EnvState`], so one `Env` serves many concurrent episodes.
#[derive(Debug, Clone)]
pub struct Env {
    pub plant: LinearFaultPlant,
    pub config: EpisodeConfig,
}

/// Result of one environment transition.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: AgentObservation,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
}

impl Env {
    pub fn new(plant: LinearFaultPlant, config: EpisodeConfig) -> Result<Self> {
        config.validate(&plant)?;
        Ok(Self { plant, config })
    }

    pub fn observation_dim(&self) -> usize {
        observation_dim(self.plant.n_x(), self.plant.n_u(), self.plant.n_y())
    }

    /// Starts an episode: samples the true fault and initial state, resets
    /// the belief to the configured prior and draws the first measurement.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(EnvState, AgentObservation)> {
        let n_u = self.plant.n_u();
        let z = self.config.fault_process.sample_initial(n_u, rng);
        let x = sample_ball(self.plant.n_x(), self.config.init_radius, rng);
        let y = sample_mvn(&(&self.plant.c * &x), &self.plant.sigma_v, rng);
        let state = EnvState {
            plant: PlantState::new(x, z),
            belief: self.config.prior.belief()?,
            y,
            y_ref: self.config.reference.at(0),
            t: 0,
        };
        let obs = mask_state(&state);
        Ok((state, obs))
    }

    /// One transition: clip the action, step the plant, fold the new
    /// measurement into the belief, score reward and cost on the new
    /// belief/output pair.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut EnvState,
        action: &DVector<f64>,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if state.done(&self.config) {
            return Err(Error::contract(format!(
                "env_step called at t={} past horizon {}",
                state.t, self.config.horizon
            )));
        }
        let u = clip_action(action, &self.plant);
        let (next_plant, y_next) =
            step_plant(&self.plant, &self.config.fault_process, &state.plant, &u, rng)?;
        let belief_next =
            observer_step(&state.belief, &u, &y_next, &self.plant, &self.config.walk_model)?;

        state.t += 1;
        state.plant = next_plant;
        state.belief = belief_next;
        state.y = y_next;
        state.y_ref = self.config.reference.at(state.t);

        let reward = reward(&state.belief, &state.plant.z);
        let cost = cost(&state.y, &state.y_ref, self.config.delta_y_max);
        let done = state.done(&self.config);
        Ok(StepOutcome { observation: mask_state(state), reward, cost, done })
    }
}

/// Negative expected squared fault-estimation error under the belief:
/// `R = -trace(sigma_z) - ||z_true - mu_z||^2`. Always <= 0.
pub fn reward(belief: &Belief, z_true: &DVector<f64>) -> f64 {
    let bias = z_true - &belief.mu_z;
    -belief.sigma_z.trace() - bias.norm_squared()
}

/// Binary tracking-violation indicator: 1 iff the infinity-norm output
/// error strictly exceeds the tolerance (boundary inclusive on the 0 side).
pub fn cost(y: &DVector<f64>, y_ref: &DVector<f64>, delta_y_max: f64) -> f64 {
    let err = (y - y_ref).abs().max();
    if err > delta_y_max {
        1.0
    } else {
        0.0
    }
}

/// Masked agent state: `[mu_x | triu(sigma_x) | mu_z | triu(sigma_z) |
/// y_ref | y]`. The hidden plant state and true fault are excluded.
pub fn mask_state(state: &EnvState) -> AgentObservation {
    let b = &state.belief;
    let mut v = Vec::with_capacity(observation_dim(b.n_x(), b.n_u(), state.y.len()));
    v.extend(b.mu_x.iter());
    v.extend(pack_triu(&b.sigma_x));
    v.extend(b.mu_z.iter());
    v.extend(pack_triu(&b.sigma_z));
    v.extend(state.y_ref.iter());
    v.extend(state.y.iter());
    AgentObservation(v)
}

// ---------------------------------------------------------------------------
// Episode traces
// ---------------------------------------------------------------------------

/// One recorded transition of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub y: Vec<f64>,
    pub y_ref: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub mu_z: Vec<f64>,
    pub sigma_z_diag: Vec<f64>,
    pub z_true: Vec<f64>,
}

/// Recorded episode: everything needed to reproduce the diagnosis figures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn record(&mut self, state: &EnvState, action: &DVector<f64>, reward: f64, cost: f64) {
        self.rows.push(TraceRow {
            t: state.t,
            y: state.y.iter().copied().collect(),
            y_ref: state.y_ref.iter().copied().collect(),
            action: action.iter().copied().collect(),
            reward,
            cost,
            mu_z: state.belief.mu_z.iter().copied().collect(),
            sigma_z_diag: state.belief.sigma_z.diagonal().iter().copied().collect(),
            z_true: state.plant.z.iter().copied().collect(),
        });
    }

    /// CSV with columns `t, y_*, y_ref_*, action_*, reward, cost, mu_z_*,
    /// sigma_z_diag_*, z_true_*`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(first) = self.rows.first() else {
            return Err(Error::contract("empty episode trace"));
        };
        let (n_y, n_u) = (first.y.len(), first.action.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n_y).map(|i| format!("y_{i}")));
        header.extend((0..n_y).map(|i| format!("y_ref_{i}")));
        header.extend((0..n_u).map(|i| format!("action_{i}")));
        header.push("reward".into());
        header.push("cost".into());
        header.extend((0..n_u).map(|i| format!("mu_z_{i}")));
        header.extend((0..n_u).map(|i| format!("sigma_z_diag_{i}")));
        header.extend((0..n_u).map(|i| format!("z_true_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut fields = vec![row.t.to_string()];
            for group in [&row.y, &row.y_ref, &row.action] {
                fields.extend(group.iter().map(|v| v.to_string()));
            }
            fields.push(row.reward.to_string());
            fields.push(row.cost.to_string());
            for group in [&row.mu_z, &row.sigma_z_diag, &row.z_true] {
                fields.extend(group.iter().map(|v| v.to_string()));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Parses a trace previously produced by [`EpisodeTrace::write_csv`].
    pub fn read_csv<Rd: std::io::Read>(reader: Rd) -> Result<Self> {
        let mut csv_reader = csv::Reader::from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        let count = |prefix: &str| {
            headers
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()))
                })
                .count()
        };
        let n_y = count("y_");
        let n_u = count("action_");
        let mut rows = Vec::new();
        for record in csv_reader.records() {
            let record = record?;
            let mut it = record.iter();
            let mut take = |n: usize| -> Result<Vec<f64>> {
                (0..n)
                    .map(|_| {
                        it.next()
                            .ok_or_else(|| Error::contract("short trace row"))?
                            .parse::<f64>()
                            .map_err(|e| Error::Serde(e.to_string()))
                    })
                    .collect()
            };
            let t = take(1)?[0] as usize;
            let y = take(n_y)?;
            let y_ref = take(n_y)?;
            let action = take(n_u)?;
            let reward = take(1)?[0];
            let cost = take(1)?[0];
            let mu_z = take(n_u)?;
            let sigma_z_diag = take(n_u)?;
            let z_true = take(n_u)?;
            rows.push(TraceRow { t, y, y_ref, action, reward, cost, mu_z, sigma_z_diag, z_true });
        }
        Ok(Self { rows })
    }
}
