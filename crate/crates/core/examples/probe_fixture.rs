use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let ts: f64 = 0.1;
    let area: f64 = 0.0154;
    let sp: f64 = 5e-5;
    let root_2g = (2.0f64 * 9.81).sqrt();
    let (h1, h2, h3): (f64, f64, f64) = (0.489, 0.2332, 0.3611);
    let k13 = 0.46 * sp * root_2g / (2.0 * (h1 - h3).sqrt());
    let k20 = 0.60 * sp * root_2g / (2.0 * h2.sqrt());
    let k32 = 0.45 * sp * root_2g / (2.0 * (h3 - h2).sqrt());
    let a_cont = [
        [-k13 / area, 0.0, k13 / area],
        [0.0, -(k32 + k20) / area, k32 / area],
        [k13 / area, k32 / area, -(k13 + k32) / area],
    ];
    let mut a = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = if i == j { 1.0 } else { 0.0 } + ts * a_cont[i][j];
        }
    }
    let b = [[ts / area, 0.0], [0.0, ts / area], [0.0, 0.0]];
    let sigma_w_std = 1e-8f64.sqrt();
    let sigma_v_std = 1e-6f64.sqrt();
    let z = [0.8, 0.4];
    let u = [0.01, -0.001];

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut x = [0.0f64; 3];
    for t in 0..40usize {
        let mut next = [0.0f64; 3];
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 { acc += a[i][j] * x[j]; }
            for j in 0..2 { acc += b[i][j] * z[j] * u[j]; }
            next[i] = acc;
        }
        for item in next.iter_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *item += sigma_w_std * w;
        }
        for _ in 0..2 {
            let v: f64 = rng.sample(StandardNormal);
            let _ = sigma_v_std * v;
        }
        x = next;
        if t == 0 || t == 9 || t == 19 || t == 39 {
            println!("({t}, [{:?}, {:?}, {:?}]),", x[0], x[1], x[2]);
        }
    }
}
