//! Observer validation against independent references: Monte-Carlo moments
//! for the predictor, a particle filter for full episodes, a textbook
//! Kalman filter for the known-fault reduction, and the information-form
//! update for algebraic equivalence.

use afdlab_core::linsys::{step_plant, FaultProcess, LinearFaultPlant, PlantState};
use afdlab_core::math::sample_mvn;
use afdlab_core::observer::{
    correct_state, observer_step, predict, Belief, FaultWalkModel, PredictedState,
};
use afdlab_core::oracles::{information_form_update, KalmanFilter, ParticleFilter};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_plant(a: f64, sigma_w: f64, sigma_v: f64) -> LinearFaultPlant {
    LinearFaultPlant::new(
        DMatrix::from_vec(1, 1, vec![a]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DMatrix::from_vec(1, 1, vec![sigma_w]),
        DMatrix::from_vec(1, 1, vec![sigma_v]),
        DVector::from_vec(vec![-1.0]),
        DVector::from_vec(vec![1.0]),
        1.0,
    )
    .unwrap()
}

#[test]
fn predictor_matches_monte_carlo_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.7]);
    let sigma_w = DMatrix::from_row_slice(2, 2, &[4e-4, 1e-4, 1e-4, 3e-4]);
    let belief = Belief::new(
        DVector::from_vec(vec![0.3, -0.2]),
        DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.03]),
        DVector::from_vec(vec![0.6, 0.4]),
        DMatrix::from_row_slice(2, 2, &[0.09, -0.01, -0.01, 0.05]),
    )
    .unwrap();
    let u = DVector::from_vec(vec![0.8, -0.5]);

    let pred = predict(&belief, &u, &a, &b, &sigma_w).unwrap();

    let n = 1_000_000usize;
    let b_star = {
        let mut m = b.clone();
        m.column_mut(0).scale_mut(u[0]);
        m.column_mut(1).scale_mut(u[1]);
        m
    };
    let mut sum = DVector::zeros(2);
    let mut sum_sq = DMatrix::zeros(2, 2);
    for _ in 0..n {
        let x = sample_mvn(&belief.mu_x, &belief.sigma_x, &mut rng);
        let z = sample_mvn(&belief.mu_z, &belief.sigma_z, &mut rng);
        let w = sample_mvn(&DVector::zeros(2), &sigma_w, &mut rng);
        let next = &a * x + &b_star * z + w;
        sum += &next;
        sum_sq += &next * next.transpose();
    }
    let mc_mean = &sum / n as f64;
    let mc_cov = &sum_sq / n as f64 - &mc_mean * mc_mean.transpose();

    // Mean: three standard errors per component.
    for i in 0..2 {
        let se = (pred.sigma_x_pred[(i, i)] / n as f64).sqrt();
        let diff = (pred.mu_x_pred[i] - mc_mean[i]).abs();
        assert!(diff < 3.0 * se, "mean[{i}]: diff {diff}, 3se {}", 3.0 * se);
    }
    // Covariance entries: SE of a sample covariance entry is roughly
    // sqrt((C_ii C_jj + C_ij^2) / n).
    for i in 0..2 {
        for j in 0..2 {
            let se = ((pred.sigma_x_pred[(i, i)] * pred.sigma_x_pred[(j, j)]
                + pred.sigma_x_pred[(i, j)].powi(2))
                / n as f64)
                .sqrt();
            let diff = (pred.sigma_x_pred[(i, j)] - mc_cov[(i, j)]).abs();
            assert!(diff < 4.0 * se, "cov[{i}{j}]: diff {diff}, 4se {}", 4.0 * se);
        }
    }
}

/// Runs plant + observer + particle filter on the same measurement stream.
/// Returns per-step (observer mu_z, observer var_z, pf mean, pf var).
fn run_scalar_comparison(
    plant: &LinearFaultPlant,
    walk_var: f64,
    true_fault: FaultProcess,
    steps: usize,
    n_particles: usize,
    seed: u64,
) -> Vec<(f64, f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pf_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let walk = FaultWalkModel::isotropic(1, walk_var);

    let prior_mu_x = DVector::zeros(1);
    let prior_sigma_x = DMatrix::from_vec(1, 1, vec![0.01]);
    let prior_mu_z = DVector::from_vec(vec![0.5]);
    let prior_sigma_z = DMatrix::from_vec(1, 1, vec![1.0]);

    let mut belief = Belief::new(
        prior_mu_x.clone(),
        prior_sigma_x.clone(),
        prior_mu_z.clone(),
        prior_sigma_z.clone(),
    )
    .unwrap();
    let mut pf = ParticleFilter::from_prior(
        n_particles,
        &prior_mu_x,
        &prior_sigma_x,
        &prior_mu_z,
        &prior_sigma_z,
        &mut pf_rng,
    );

    let mut state = PlantState::new(DVector::zeros(1), DVector::from_vec(vec![0.7]));
    let mut results = Vec::with_capacity(steps);
    for t in 0..steps {
        // Persistent excitation: alternate full-scale inputs.
        let u = DVector::from_vec(vec![if t % 2 == 0 { 1.0 } else { -1.0 }]);
        let (next, y) = step_plant(plant, &true_fault, &state, &u, &mut rng).unwrap();
        belief = observer_step(&belief, &u, &y, plant, &walk).unwrap();
        pf.step(
            &plant.a,
            &plant.b,
            &plant.c,
            &plant.sigma_w,
            &plant.sigma_v,
            &DVector::zeros(1),
            &DMatrix::from_vec(1, 1, vec![walk_var]),
            &u,
            &y,
            &mut pf_rng,
        );
        state = next;
        results.push((
            belief.mu_z[0],
            belief.sigma_z[(0, 0)],
            pf.fault_mean()[0],
            pf.fault_variance()[0],
        ));
    }
    results
}

#[test]
fn fault_posterior_tracks_particle_filter_on_scalar_plant() {
    let plant = scalar_plant(0.9, 1e-3, 1e-4);
    let walk_var = 1e-3;
    let true_fault = FaultProcess::RandomWalk {
        mean: DVector::zeros(1),
        cov: DMatrix::from_vec(1, 1, vec![walk_var]),
    };
    let results = run_scalar_comparison(&plant, walk_var, true_fault, 50, 100_000, 3);

    let mad: f64 =
        results.iter().map(|(mu, _, pf_mu, _)| (mu - pf_mu).abs()).sum::<f64>() / results.len() as f64;
    assert!(mad < 0.05, "mean absolute deviation {mad}");
    // Skip the first few steps where both posteriors are still prior-like.
    for (t, (_, var, _, pf_var)) in results.iter().enumerate().skip(5) {
        let ratio = var / pf_var;
        assert!((0.5..=2.0).contains(&ratio), "step {t}: variance ratio {ratio}");
    }
}

#[test]
fn fault_free_three_tank_estimate_converges_to_ones() {
    let plant = afdlab_core::linsys::default_three_tank();
    let walk = FaultWalkModel::isotropic(2, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Tight state prior (the level is known at start-up); the wide fault
    // prior is the quantity under test.
    let mut belief = Belief::new(
        DVector::zeros(3),
        DMatrix::identity(3, 3) * 1e-6,
        DVector::from_element(2, 0.5),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let mut state = PlantState::healthy(3, 2);
    let mut pf_rng = ChaCha8Rng::seed_from_u64(55);
    let mut pf = ParticleFilter::from_prior(
        200_000,
        &belief.mu_x,
        &belief.sigma_x,
        &belief.mu_z,
        &belief.sigma_z,
        &mut pf_rng,
    );
    for t in 0..40 {
        // Ramped excitation: amplitude grows as the fault posterior
        // tightens, which also keeps the particle oracle well conditioned.
        let amp = match t / 10 {
            0 => 1e-3,
            1 => 3e-3,
            2 => 8e-3,
            _ => 0.02,
        };
        let u = match t % 4 {
            0 => DVector::from_vec(vec![amp, -0.1 * amp]),
            1 => DVector::from_vec(vec![-0.1 * amp, amp]),
            2 => DVector::from_vec(vec![amp, amp]),
            _ => DVector::from_vec(vec![-0.1 * amp, -0.1 * amp]),
        };
        let (next, y) = step_plant(&plant, &FaultProcess::Constant, &state, &u, &mut rng).unwrap();
        belief = observer_step(&belief, &u, &y, &plant, &walk).unwrap();
        pf.step(
            &plant.a, &plant.b, &plant.c, &plant.sigma_w, &plant.sigma_v,
            &DVector::zeros(2), &(DMatrix::identity(2, 2) * 1e-3),
            &u, &y, &mut pf_rng,
        );
        state = next;
    }
    for i in 0..2 {
        assert!(
            (belief.mu_z[i] - 1.0).abs() < 0.1,
            "channel {i}: estimate {} not within 0.1 of healthy",
            belief.mu_z[i]
        );
        assert!(
            (belief.mu_z[i] - pf.fault_mean()[i]).abs() < 0.05,
            "channel {i}: filter {} vs particle oracle {}",
            belief.mu_z[i],
            pf.fault_mean()[i]
        );
    }
}

#[test]
fn known_fault_reduction_matches_textbook_kalman_filter() {
    // Zero fault uncertainty, zero walk bias, exact fault mean: the state
    // estimate must coincide with a Kalman filter on the known-input system.
    let plant = afdlab_core::linsys::default_three_tank();
    let z_true = DVector::from_vec(vec![0.6, 0.9]);
    let walk = FaultWalkModel::isotropic(2, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut belief = Belief::new(
        DVector::zeros(3),
        DMatrix::identity(3, 3) * 0.01,
        z_true.clone(),
        DMatrix::zeros(2, 2),
    )
    .unwrap();
    let mut kf = KalmanFilter::new(DVector::zeros(3), DMatrix::identity(3, 3) * 0.01);
    let mut state = PlantState::new(DVector::zeros(3), z_true.clone());

    for t in 0..100 {
        let u = DVector::from_vec(vec![
            0.01 * ((t as f64) * 0.37).sin().abs(),
            0.008 * ((t as f64) * 0.53).cos().abs(),
        ]);
        let (next, y) = step_plant(&plant, &FaultProcess::Constant, &state, &u, &mut rng).unwrap();
        belief = observer_step(&belief, &u, &y, &plant, &walk).unwrap();
        let known_input = &plant.b * z_true.component_mul(&u);
        kf.step(&plant.a, &known_input, &plant.c, &plant.sigma_w, &plant.sigma_v, &y);
        state = next;

        let mu_err = (&belief.mu_x - &kf.mu).abs().max();
        let sigma_err = (&belief.sigma_x - &kf.sigma).abs().max();
        assert!(mu_err < 1e-10, "step {t}: state mean error {mu_err}");
        assert!(sigma_err < 1e-10, "step {t}: state covariance error {sigma_err}");
        // The fault estimate must stay pinned.
        assert!((&belief.mu_z - &z_true).abs().max() < 1e-9);
    }
}

#[test]
fn woodbury_update_equals_information_form_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..200 {
        let n_x = rng.gen_range(1..=4);
        let n_y = rng.gen_range(1..=n_x);
        let m = DMatrix::from_fn(n_x, n_x, |_, _| rng.gen_range(-1.0..1.0));
        let sigma_pred = &m * m.transpose() + DMatrix::identity(n_x, n_x) * 0.1;
        let c = DMatrix::from_fn(n_y, n_x, |_, _| rng.gen_range(-1.0..1.0));
        let mv = DMatrix::from_fn(n_y, n_y, |_, _| rng.gen_range(-0.3..0.3));
        let sigma_v = &mv * mv.transpose() + DMatrix::identity(n_y, n_y) * 0.05;
        let mu_pred = DVector::from_fn(n_x, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n_y, |_, _| rng.gen_range(-1.0..1.0));

        let pred = PredictedState {
            mu_x_pred: mu_pred.clone(),
            sigma_x_pred: sigma_pred.clone(),
            b_star: DMatrix::zeros(n_x, 1),
        };
        let (mu_wood, sigma_wood) = correct_state(&pred, &y, &c, &sigma_v).unwrap();
        let (mu_info, sigma_info) = information_form_update(&mu_pred, &sigma_pred, &y, &c, &sigma_v);

        let mu_rel = (&mu_wood - &mu_info).norm() / mu_info.norm().max(1e-12);
        let sigma_rel = (&sigma_wood - &sigma_info).norm() / sigma_info.norm();
        assert!(mu_rel < 1e-8, "trial {trial}: mean deviation {mu_rel}");
        assert!(sigma_rel < 1e-8, "trial {trial}: covariance deviation {sigma_rel}");
    }
}

#[test]
fn scalar_fault_update_matches_particle_oracle_distributionally() {
    // Constant true fault, random-walk assumption in both filters; the
    // posterior variance ordering must hold across a long episode.
    let plant = scalar_plant(0.95, 1e-3, 1e-4);
    let results = run_scalar_comparison(&plant, 1e-3, FaultProcess::Constant, 50, 50_000, 9);
    let (mu, var, pf_mu, pf_var) = results[results.len() - 1];
    assert!((mu - pf_mu).abs() < 0.05, "final mean gap {} vs pf {}", mu, pf_mu);
    let ratio = var / pf_var;
    assert!((0.4..=2.5).contains(&ratio), "final variance ratio {ratio}");
}
