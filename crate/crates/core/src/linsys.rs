//! Ground-truth simulation of discrete-time linear systems with
//! multiplicative actuator faults:
//!
//! ```text
//! x_{t+1} = A x_t + B diag(z_t) u_t + w_t      w ~ N(0, sigma_w)
//! y_{t+1} = C x_{t+1} + v_{t+1}                v ~ N(0, sigma_v)
//! z_{t+1} = fault process (constant / random walk / jump)
//! ```
//!
//! Each fault component z_i in [0, 1] scales one actuator channel: 1 is a
//! healthy actuator, 0 a total loss. States live in deviation coordinates
//! around the linearization point, so the equilibrium is the origin.
//!
//! Per step the RNG stream is consumed in a fixed order (state noise, then
//! measurement noise, then fault draws) regardless of input values or noise
//! settings, which makes fault trajectories invariant to the applied inputs
//! under a shared seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::math::{check_covariance, expm, sample_mvn};

/// Known plant description: dynamics, output map, noise and input bounds.
#[derive(Debug, Clone)]
pub struct LinearFaultPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    /// Sampling time in seconds.
    pub t_s: f64,
}

impl LinearFaultPlant {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
        sigma_v: DMatrix<f64>,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        t_s: f64,
    ) -> Result<Self> {
        let n_x = a.nrows();
        if a.ncols() != n_x {
            return Err(Error::Dimension { context: "A square", expected: n_x, actual: a.ncols() });
        }
        if b.nrows() != n_x {
            return Err(Error::Dimension { context: "B rows", expected: n_x, actual: b.nrows() });
        }
        if c.ncols() != n_x {
            return Err(Error::Dimension { context: "C cols", expected: n_x, actual: c.ncols() });
        }
        if sigma_w.nrows() != n_x {
            return Err(Error::Dimension { context: "sigma_w", expected: n_x, actual: sigma_w.nrows() });
        }
        if sigma_v.nrows() != c.nrows() {
            return Err(Error::Dimension { context: "sigma_v", expected: c.nrows(), actual: sigma_v.nrows() });
        }
        let n_u = b.ncols();
        if u_min.len() != n_u {
            return Err(Error::Dimension { context: "u_min", expected: n_u, actual: u_min.len() });
        }
        if u_max.len() != n_u {
            return Err(Error::Dimension { context: "u_max", expected: n_u, actual: u_max.len() });
        }
        check_covariance(&sigma_w, "sigma_w")?;
        check_covariance(&sigma_v, "sigma_v")?;
        if u_min.iter().zip(u_max.iter()).any(|(lo, hi)| lo >= hi) {
            return Err(Error::config("u_min must be componentwise below u_max"));
        }
        if t_s <= 0.0 {
            return Err(Error::config("t_s must be positive"));
        }
        Ok(Self { a, b, c, sigma_w, sigma_v, u_min, u_max, t_s })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
}

/// True hidden state of the simulated plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// State in deviation coordinates around the linearization point.
    pub x: DVector<f64>,
    /// Per-actuator effectiveness in [0, 1] under the shipped fault samplers.
    pub z: DVector<f64>,
    /// Steps since `z` was last (re)sampled; drives jump dwell accounting.
    pub fault_age: u32,
}

impl PlantState {
    pub fn new(x: DVector<f64>, z: DVector<f64>) -> Self {
        Self { x, z, fault_age: 0 }
    }

    /// Healthy plant at the origin: z is the all-ones vector.
    pub fn healthy(n_x: usize, n_u: usize) -> Self {
        Self::new(DVector::zeros(n_x), DVector::from_element(n_u, 1.0))
    }
}

/// Law of the true fault trajectory.
#[derive(Debug, Clone)]
pub enum FaultProcess {
    /// z stays fixed for the whole episode.
    Constant,
    /// z_{t+1} = z_t + xi, xi ~ N(mean, cov).
    RandomWalk { mean: DVector<f64>, cov: DMatrix<f64> },
    /// Piecewise-constant faults: once a fault has persisted for at least
    /// `dwell_min` steps, each further step resamples z ~ U[0,1]^{n_u} with
    /// probability `jump_prob`.
    Jump { dwell_min: u32, jump_prob: f64 },
}

impl FaultProcess {
    pub fn validate(&self, n_u: usize) -> Result<()> {
        match self {
            FaultProcess::Constant => Ok(()),
            FaultProcess::RandomWalk { mean, cov } => {
                if mean.len() != n_u {
                    return Err(Error::Dimension { context: "walk mean", expected: n_u, actual: mean.len() });
                }
                check_covariance(cov, "walk cov")
            }
            FaultProcess::Jump { dwell_min, jump_prob } => {
                if *dwell_min < 1 {
                    return Err(Error::config("jump dwell must be >= 1"));
                }
                if !(0.0..=1.0).contains(jump_prob) {
                    return Err(Error::config("jump_prob must lie in [0, 1]"));
                }
                Ok(())
            }
        }
    }

    /// Advances the fault vector by one step, mutating `z` and the age counter.
    fn advance<R: Rng + ?Sized>(&self, z: &mut DVector<f64>, age: &mut u32, rng: &mut R) {
        match self {
            FaultProcess::Constant => {
                *age += 1;
            }
            FaultProcess::RandomWalk { mean, cov } => {
                let step = sample_mvn(mean, cov, rng);
                *z += step;
                *age += 1;
            }
            FaultProcess::Jump { dwell_min, jump_prob } => {
                // The decision uniform is drawn every step so the stream
                // layout does not depend on dwell state.
                let coin: f64 = rng.gen();
                if *age + 1 >= *dwell_min && coin < *jump_prob {
                    for zi in z.iter_mut() {
                        *zi = rng.gen();
                    }
                    *age = 0;
                } else {
                    *age += 1;
                }
            }
        }
    }

    /// Samples an initial fault vector: uniform on [0,1]^{n_u} for the
    /// constant and jump processes, all-ones for the random walk.
    pub fn sample_initial<R: Rng + ?Sized>(&self, n_u: usize, rng: &mut R) -> DVector<f64> {
        match self {
            FaultProcess::Constant | FaultProcess::Jump { .. } => {
                DVector::from_fn(n_u, |_, _| rng.gen())
            }
            FaultProcess::RandomWalk { .. } => DVector::from_element(n_u, 1.0),
        }
    }
}

/// One simulation step: returns the successor state and the measurement of
/// the *successor* output, `y = C x_{t+1} + v`.
///
/// The caller is responsible for clipping `u` into the admissible set first.
pub fn step_plant<R: Rng + ?Sized>(
    plant: &LinearFaultPlant,
    fault: &FaultProcess,
    state: &PlantState,
    u: &DVector<f64>,
    rng: &mut R,
) -> Result<(PlantState, DVector<f64>)> {
    if state.x.len() != plant.n_x() {
        return Err(Error::Dimension { context: "state.x", expected: plant.n_x(), actual: state.x.len() });
    }
    if state.z.len() != plant.n_u() {
        return Err(Error::Dimension { context: "state.z", expected: plant.n_u(), actual: state.z.len() });
    }
    if u.len() != plant.n_u() {
        return Err(Error::Dimension { context: "input u", expected: plant.n_u(), actual: u.len() });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite input rejected"));
    }

    let effective = state.z.component_mul(u);
    let mean_next = &plant.a * &state.x + &plant.b * effective;
    let x_next = sample_mvn(&mean_next, &plant.sigma_w, rng);
    let y = sample_mvn(&(&plant.c * &x_next), &plant.sigma_v, rng);

    let mut z_next = state.z.clone();
    let mut age = state.fault_age;
    fault.advance(&mut z_next, &mut age, rng);

    Ok((PlantState { x: x_next, z: z_next, fault_age: age }, y))
}

/// Componentwise clamp of an input into the plant's admissible set.
pub fn clip_action(u: &DVector<f64>, plant: &LinearFaultPlant) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| u[i].clamp(plant.u_min[i], plant.u_max[i]))
}

/// Simulates a fixed input sequence; convenience for tests and drift studies.
pub fn rollout<R: Rng + ?Sized>(
    plant: &LinearFaultPlant,
    fault: &FaultProcess,
    initial: PlantState,
    inputs: &[DVector<f64>],
    rng: &mut R,
) -> Result<(Vec<PlantState>, Vec<DVector<f64>>)> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut outputs = Vec::with_capacity(inputs.len());
    states.push(initial);
    for u in inputs {
        let (next, y) = step_plant(plant, fault, states.last().unwrap(), u, rng)?;
        states.push(next);
        outputs.push(y);
    }
    Ok((states, outputs))
}

// ---------------------------------------------------------------------------
// Plant configuration
// ---------------------------------------------------------------------------

/// Scalar (isotropic) or full covariance specification.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scalar(f64),
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn build(&self, dim: usize, key: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            CovSpec::Scalar(s) => {
                if *s < 0.0 {
                    return Err(Error::config(format!("{key}: scalar covariance must be >= 0")));
                }
                DMatrix::identity(dim, dim) * *s
            }
            CovSpec::Full(rows) => matrix_from_rows(rows, key)?,
        };
        if m.nrows() != dim {
            return Err(Error::config(format!("{key}: expected {dim}x{dim}, got {}x{}", m.nrows(), m.ncols())));
        }
        check_covariance(&m, "covariance").map_err(|e| Error::config(format!("{key}: {e}")))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    #[default]
    Euler,
    Exact,
}

/// Torricelli three-tank description used to derive the linearized matrices.
///
/// Tank 1 feeds tank 3 through a connecting pipe, tank 3 feeds tank 2, and
/// tank 2 drains through an outlet valve; pumps act on tanks 1 and 2. The
/// `levels` entry is the linearization point [h1, h2, h3] and must satisfy
/// h1 > h3 > h2 > 0 for the flow directions above.
#[derive(Debug, Clone, Deserialize)]
pub struct ThreeTankConfig {
    /// Tank cross-sections in m^2, one per tank.
    pub areas: Vec<f64>,
    /// Dimensionless outflow coefficients [pipe 1->3, outlet of 2, pipe 3->2].
    pub valve_coefficients: Vec<f64>,
    /// Linearization liquid levels [h1, h2, h3] in meters.
    pub levels: Vec<f64>,
    /// Connecting-pipe cross-section in m^2.
    #[serde(default = "default_pipe_area")]
    pub pipe_area: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_pipe_area() -> f64 {
    5e-5
}

fn default_gravity() -> f64 {
    9.81
}

impl ThreeTankConfig {
    /// Continuous-time (A, B, C) of the linearized three-tank system with
    /// state [h1, h2, h3] and inputs [pump 1 flow, pump 2 flow].
    pub fn linearize(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        if self.areas.len() != 3 {
            return Err(Error::config("three_tank.areas: expected 3 entries"));
        }
        if self.valve_coefficients.len() != 3 {
            return Err(Error::config("three_tank.valve_coefficients: expected 3 entries"));
        }
        if self.levels.len() != 3 {
            return Err(Error::config("three_tank.levels: expected 3 entries"));
        }
        let (h1, h2, h3) = (self.levels[0], self.levels[1], self.levels[2]);
        if !(h1 > h3 && h3 > h2 && h2 > 0.0) {
            return Err(Error::config(
                "three_tank.levels: flow layout requires h1 > h3 > h2 > 0",
            ));
        }
        if self.areas.iter().any(|a| *a <= 0.0) {
            return Err(Error::config("three_tank.areas: must be positive"));
        }
        if self.pipe_area <= 0.0 {
            return Err(Error::config("three_tank.pipe_area: must be positive"));
        }
        let root_2g = (2.0 * self.gravity).sqrt();
        let flow_gain = |az: f64, drop: f64| az * self.pipe_area * root_2g / (2.0 * drop.sqrt());
        // Sensitivities of the Torricelli flows to their driving level drops.
        let k13 = flow_gain(self.valve_coefficients[0], h1 - h3);
        let k20 = flow_gain(self.valve_coefficients[1], h2);
        let k32 = flow_gain(self.valve_coefficients[2], h3 - h2);
        let (a1, a2, a3) = (self.areas[0], self.areas[1], self.areas[2]);

        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                -k13 / a1, 0.0, k13 / a1,
                0.0, -(k32 + k20) / a2, k32 / a2,
                k13 / a3, k32 / a3, -(k13 + k32) / a3,
            ],
        );
        let b = DMatrix::from_row_slice(3, 2, &[1.0 / a1, 0.0, 0.0, 1.0 / a2, 0.0, 0.0]);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        Ok((a, b, c))
    }
}

/// On-disk plant description. Either explicit continuous-time `A`/`B`/`C`
/// row-major matrices or a `[three_tank]` section for derivation; the
/// matrices are then discretized per the `discretization` switch.
#[derive(Debug, Clone, Deserialize)]
pub struct PlantConfig {
    #[serde(rename = "A")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Option<Vec<Vec<f64>>>,
    pub three_tank: Option<ThreeTankConfig>,
    pub sigma_w: CovSpec,
    pub sigma_v: CovSpec,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub t_s: f64,
    #[serde(default)]
    pub discretization: Discretization,
}

fn matrix_from_rows(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::config(format!("{key}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(format!("{key}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl PlantConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn build(&self) -> Result<LinearFaultPlant> {
        let (a_cont, b_cont, c) = match (&self.three_tank, &self.a, &self.b, &self.c) {
            (Some(tt), None, None, None) => tt.linearize()?,
            (None, Some(a), Some(b), Some(c)) => (
                matrix_from_rows(a, "A")?,
                matrix_from_rows(b, "B")?,
                matrix_from_rows(c, "C")?,
            ),
            _ => {
                return Err(Error::config(
                    "provide either all of A, B, C or a [three_tank] section",
                ))
            }
        };
        let (a_d, b_d) = discretize(&a_cont, &b_cont, self.t_s, self.discretization);
        let n_x = a_d.nrows();
        let n_y = c.nrows();
        let sigma_w = self.sigma_w.build(n_x, "sigma_w")?;
        let sigma_v = self.sigma_v.build(n_y, "sigma_v")?;
        LinearFaultPlant::new(
            a_d,
            b_d,
            c,
            sigma_w,
            sigma_v,
            DVector::from_vec(self.u_min.clone()),
            DVector::from_vec(self.u_max.clone()),
            self.t_s,
        )
    }
}

/// Discretizes continuous-time (A, B) at sampling time `t_s`.
pub fn discretize(
    a_cont: &DMatrix<f64>,
    b_cont: &DMatrix<f64>,
    t_s: f64,
    scheme: Discretization,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_x = a_cont.nrows();
    let n_u = b_cont.ncols();
    match scheme {
        Discretization::Euler => (
            DMatrix::identity(n_x, n_x) + a_cont * t_s,
            b_cont * t_s,
        ),
        Discretization::Exact => {
            // Zero-order hold via the augmented exponential
            // exp([[A, B], [0, 0]] t_s) = [[A_d, B_d], [0, I]].
            let mut aug = DMatrix::zeros(n_x + n_u, n_x + n_u);
            aug.view_mut((0, 0), (n_x, n_x)).copy_from(a_cont);
            aug.view_mut((0, n_x), (n_x, n_u)).copy_from(b_cont);
            let e = expm(&(aug * t_s));
            (
                e.view((0, 0), (n_x, n_x)).into_owned(),
                e.view((0, n_x), (n_x, n_u)).into_owned(),
            )
        }
    }
}

/// The shipped three-tank benchmark instance: forward-Euler discretization at
/// 0.1 s of the Torricelli linearization around levels [0.489, 0.2332, 0.3611],
/// isotropic noise (1e-8 process, 1e-6 measurement), inputs bounded to
/// [-0.002, 0.02] per channel, outputs = first two state components.
pub fn default_three_tank() -> LinearFaultPlant {
    default_three_tank_config()
        .build()
        .expect("default three-tank config is valid")
}

/// Configuration mirrored by `configs/three_tank.toml`.
pub fn default_three_tank_config() -> PlantConfig {
    PlantConfig {
        a: None,
        b: None,
        c: None,
        three_tank: Some(ThreeTankConfig {
            areas: vec![0.0154, 0.0154, 0.0154],
            valve_coefficients: vec![0.46, 0.60, 0.45],
            levels: vec![0.489, 0.2332, 0.3611],
            pipe_area: 5e-5,
            gravity: 9.81,
        }),
        sigma_w: CovSpec::Scalar(1e-8),
        sigma_v: CovSpec::Scalar(1e-6),
        u_min: vec![-0.002, -0.002],
        u_max: vec![0.02, 0.02],
        t_s: 0.1,
        discretization: Discretization::Euler,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_plant(n: usize, sigma: f64) -> LinearFaultPlant {
        LinearFaultPlant::new(
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n) * sigma,
            DMatrix::identity(n, n) * sigma,
            DVector::from_element(n, -1.0),
            DVector::from_element(n, 1.0),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn noise_free_identity_step() {
        let plant = identity_plant(2, 0.0);
        let state = PlantState::healthy(2, 2);
        let u = DVector::from_vec(vec![0.01, 0.01]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, y) = step_plant(&plant, &FaultProcess::Constant, &state, &u, &mut rng).unwrap();
        assert_eq!(next.x, u);
        assert_eq!(y, u);
    }

    #[test]
    fn total_actuator_loss_nullifies_input() {
        let plant = identity_plant(2, 0.0);
        let state = PlantState::new(DVector::zeros(2), DVector::zeros(2));
        let u = DVector::from_vec(vec![0.01, 0.01]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, _) = step_plant(&plant, &FaultProcess::Constant, &state, &u, &mut rng).unwrap();
        assert_eq!(next.x, DVector::zeros(2));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let plant = identity_plant(2, 0.0);
        let state = PlantState::healthy(2, 2);
        let u = DVector::from_vec(vec![0.01]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            step_plant(&plant, &FaultProcess::Constant, &state, &u, &mut rng),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let plant = identity_plant(2, 0.0);
        let state = PlantState::healthy(2, 2);
        let u = DVector::from_vec(vec![f64::NAN, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            step_plant(&plant, &FaultProcess::Constant, &state, &u, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn clip_action_matches_input_set_bounds() {
        let plant = default_three_tank();
        let u = DVector::from_vec(vec![0.05, -0.01]);
        let clipped = clip_action(&u, &plant);
        assert_eq!(clipped, DVector::from_vec(vec![0.02, -0.002]));
    }

    #[test]
    fn default_three_tank_shape_and_noise() {
        let plant = default_three_tank();
        assert_eq!((plant.n_x(), plant.n_u(), plant.n_y()), (3, 2, 2));
        assert_eq!(
            plant.c,
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        );
        assert_eq!(plant.sigma_v, DMatrix::identity(2, 2) * 1e-6);
        assert_eq!(plant.sigma_w, DMatrix::identity(3, 3) * 1e-8);
        assert_eq!(plant.t_s, 0.1);
    }

    #[test]
    fn euler_discretization_is_identity_plus_ts_a() {
        let cfg = default_three_tank_config();
        let (a_cont, _, _) = cfg.three_tank.as_ref().unwrap().linearize().unwrap();
        let plant = cfg.build().unwrap();
        let expected = DMatrix::identity(3, 3) + &a_cont * 0.1;
        assert_abs_diff_eq!((plant.a - expected).abs().max(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_discretization_close_to_euler_for_small_ts() {
        let mut cfg = default_three_tank_config();
        cfg.discretization = Discretization::Exact;
        let exact = cfg.build().unwrap();
        let euler = default_three_tank();
        // Continuous dynamics are slow, so the schemes agree to O(ts^2 |A|^2).
        assert!((exact.a - euler.a).abs().max() < 1e-5);
        assert!((exact.b - euler.b).abs().max() < 1e-2);
    }

    #[test]
    fn all_ones_fault_reproduces_fault_free_system() {
        let plant = default_three_tank();
        let mut rng_a = ChaCha8Rng::seed_from_u64(42);
        let mut rng_b = ChaCha8Rng::seed_from_u64(42);
        let inputs: Vec<DVector<f64>> =
            (0..25).map(|k| DVector::from_vec(vec![0.01 * ((k % 3) as f64 - 1.0), 0.005])).collect();
        let (states, _) = rollout(
            &plant,
            &FaultProcess::Constant,
            PlantState::healthy(3, 2),
            &inputs,
            &mut rng_a,
        )
        .unwrap();
        // Reference recursion with the input applied directly (no fault gate),
        // drawing noise in the same documented order.
        let mut x = DVector::zeros(3);
        for (k, u) in inputs.iter().enumerate() {
            let mean = &plant.a * &x + &plant.b * u;
            x = sample_mvn(&mean, &plant.sigma_w, &mut rng_b);
            let _y = sample_mvn(&(&plant.c * &x), &plant.sigma_v, &mut rng_b);
            assert_abs_diff_eq!((&states[k + 1].x - &x).abs().max(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn fault_trajectory_invariant_to_inputs() {
        let plant = default_three_tank();
        let fault = FaultProcess::Jump { dwell_min: 5, jump_prob: 0.3 };
        let initial = PlantState::new(DVector::zeros(3), DVector::from_vec(vec![0.3, 0.8]));
        let inputs_a: Vec<DVector<f64>> = (0..60).map(|_| DVector::zeros(2)).collect();
        let inputs_b: Vec<DVector<f64>> =
            (0..60).map(|k| DVector::from_vec(vec![0.02 * (k as f64).sin(), -0.001])).collect();
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        let (sa, _) = rollout(&plant, &fault, initial.clone(), &inputs_a, &mut rng_a).unwrap();
        let (sb, _) = rollout(&plant, &fault, initial, &inputs_b, &mut rng_b).unwrap();
        for (a, b) in sa.iter().zip(sb.iter()) {
            assert_eq!(a.z, b.z);
        }
    }

    #[test]
    fn jump_segments_respect_dwell() {
        let plant = identity_plant(2, 0.0);
        let fault = FaultProcess::Jump { dwell_min: 30, jump_prob: 0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let initial = PlantState::new(DVector::zeros(2), fault.sample_initial(2, &mut rng));
        let inputs: Vec<DVector<f64>> = (0..800).map(|_| DVector::zeros(2)).collect();
        let (states, _) = rollout(&plant, &fault, initial, &inputs, &mut rng).unwrap();
        let mut jump_times = vec![0usize];
        for (t, pair) in states.windows(2).enumerate() {
            if pair[0].z != pair[1].z {
                jump_times.push(t + 1);
            }
        }
        assert!(jump_times.len() > 2, "expected several jumps in 800 steps");
        for pair in jump_times.windows(2) {
            assert!(pair[1] - pair[0] >= 30, "segment shorter than dwell: {pair:?}");
        }
    }

    #[test]
    fn seeded_rollouts_are_reproducible() {
        let plant = default_three_tank();
        let inputs: Vec<DVector<f64>> = (0..40).map(|_| DVector::from_vec(vec![0.004, -0.001])).collect();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rollout(
                &plant,
                &FaultProcess::RandomWalk {
                    mean: DVector::zeros(2),
                    cov: DMatrix::identity(2, 2) * 1e-4,
                },
                PlantState::healthy(3, 2),
                &inputs,
                &mut rng,
            )
            .unwrap()
        };
        let (sa, ya) = run(123);
        let (sb, yb) = run(123);
        assert_eq!(sa.last().unwrap().x, sb.last().unwrap().x);
        assert_eq!(ya, yb);
    }

    #[test]
    fn three_tank_config_rejects_bad_levels() {
        let mut cfg = default_three_tank_config();
        cfg.three_tank.as_mut().unwrap().levels = vec![0.1, 0.5, 0.3];
        let err = cfg.build().unwrap_err();
        assert!(err.to_string().contains("three_tank.levels"));
    }

    #[test]
    fn plant_config_parses_explicit_matrices() {
        let text = r#"
            A = [[0.0, 1.0], [-1.0, 0.0]]
            B = [[0.0], [1.0]]
            C = [[1.0, 0.0]]
            sigma_w = 1e-6
            sigma_v = 1e-4
            u_min = [-1.0]
            u_max = [1.0]
            t_s = 0.05
            discretization = "euler"
        "#;
        let plant = PlantConfig::from_toml_str(text).unwrap().build().unwrap();
        assert_eq!(plant.n_x(), 2);
        assert_abs_diff_eq!(plant.a[(0, 1)], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(plant.b[(1, 0)], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn plant_config_parse_error_names_key() {
        let text = "sigma_w = \"oops\"";
        let err = PlantConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("sigma_w") || err.to_string().contains("line"));
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_feasible(u0 in -1.0f64..1.0, u1 in -1.0f64..1.0) {
            let plant = default_three_tank();
            let u = DVector::from_vec(vec![u0, u1]);
            let once = clip_action(&u, &plant);
            let twice = clip_action(&once, &plant);
            prop_assert_eq!(&once, &twice);
            for i in 0..2 {
                prop_assert!(once[i] >= plant.u_min[i] && once[i] <= plant.u_max[i]);
            }
        }

        #[test]
        fn inside_bounds_clip_is_identity(u0 in -0.002f64..0.02, u1 in -0.002f64..0.02) {
            let plant = default_three_tank();
            let u = DVector::from_vec(vec![u0, u1]);
            prop_assert_eq!(clip_action(&u, &plant), u);
        }
    }
}
