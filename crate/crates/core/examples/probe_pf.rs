use afdlab_core::linsys::{step_plant, FaultProcess, LinearFaultPlant, PlantState};
use afdlab_core::observer::{observer_step, Belief, FaultWalkModel};
use afdlab_core::oracles::ParticleFilter;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let a_coef: f64 = std::env::args().nth(1).map(|v| v.parse().unwrap()).unwrap_or(0.9);
    let sw: f64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(1e-4);
    let sv: f64 = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(1e-2);
    let plant = LinearFaultPlant::new(
        DMatrix::from_vec(1, 1, vec![a_coef]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DMatrix::from_vec(1, 1, vec![sw]),
        DMatrix::from_vec(1, 1, vec![sv]),
        DVector::from_vec(vec![-1.0]),
        DVector::from_vec(vec![1.0]),
        1.0,
    ).unwrap();
    let walk_var = 1e-3;
    for seed in [3u64, 4, 5] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pf_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let walk = FaultWalkModel::isotropic(1, walk_var);
        let mut belief = Belief::new(
            DVector::zeros(1), DMatrix::from_vec(1,1,vec![0.01]),
            DVector::from_vec(vec![0.5]), DMatrix::from_vec(1,1,vec![1.0])).unwrap();
        let mut pf = ParticleFilter::from_prior(100_000,
            &belief.mu_x, &belief.sigma_x, &belief.mu_z, &belief.sigma_z, &mut pf_rng);
        let true_fault = FaultProcess::RandomWalk { mean: DVector::zeros(1), cov: DMatrix::from_vec(1,1,vec![walk_var]) };
        let mut state = PlantState::new(DVector::zeros(1), DVector::from_vec(vec![0.7]));
        let mut mad = 0.0; let mut min_ratio = f64::MAX; let mut max_ratio = 0.0f64;
        for t in 0..50 {
            let u = DVector::from_vec(vec![if t % 2 == 0 { 1.0 } else { -1.0 }]);
            let (next, y) = step_plant(&plant, &true_fault, &state, &u, &mut rng).unwrap();
            belief = observer_step(&belief, &u, &y, &plant, &walk).unwrap();
            pf.step(&plant.a, &plant.b, &plant.c, &plant.sigma_w, &plant.sigma_v,
                &DVector::zeros(1), &DMatrix::from_vec(1,1,vec![walk_var]), &u, &y, &mut pf_rng);
            state = next;
            if false {
                println!("seed {seed} t={t:2} truth={:.4} filt=({:.4},{:.5}) pf=({:.4},{:.5}) gap={:.4}",
                    state.z[0], belief.mu_z[0], belief.sigma_z[(0,0)], pf.fault_mean()[0], pf.fault_variance()[0],
                    (belief.mu_z[0]-pf.fault_mean()[0]).abs());
            }
            mad += (belief.mu_z[0]-pf.fault_mean()[0]).abs();
            if t >= 5 { let r = belief.sigma_z[(0,0)] / pf.fault_variance()[0]; min_ratio = min_ratio.min(r); max_ratio = max_ratio.max(r); }
        }
        println!("seed {seed}: MAD = {:.5} ratio=[{:.3},{:.3}]", mad / 50.0, min_ratio, max_ratio);
    }
}
