pub mod asymint;
pub mod decay;
pub mod kernel;
pub mod roots;
pub mod sugimoto;
pub mod vdc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random frequencies with `|ξ|` uniform in `[r_min, r_max]` and uniform directions.
pub fn random_frequencies(n: usize, count: usize, r_min: f64, r_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let dir: Vec<f64> = loop {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if s > 1e-3 && s <= 1.0 {
                    break v.iter().map(|x| x / s).collect();
                }
            };
            let r = rng.gen_range(r_min..=r_max);
            dir.iter().map(|x| x * r).collect()
        })
        .collect()
}
