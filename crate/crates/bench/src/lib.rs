//! Fixtures shared by the benchmarks.

use meltpinn_core::losses::Batch;
use meltpinn_core::network::{architecture, MlpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Network with the desk architecture (6 hidden layers of 32).
pub fn desk_net(seed: u64) -> MlpParams {
    MlpParams::init(&architecture(6, 32), seed)
        .and_then(|p| p.with_input_box([0.0, -0.5, -0.5], [17.0, 0.5, 0.0]))
        .expect("fixed architecture is valid")
}

/// Random half-disk batch with the term proportions of an 850 x 7 set.
pub fn random_batch(total: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| {
        let r = 0.5 * rng.gen::<f64>().sqrt();
        let th = std::f64::consts::PI * (1.0 + rng.gen::<f64>());
        [rng.gen_range(0.0..17.0), r * th.cos(), r * th.sin()]
    };
    let n = total * 2 / 5;
    let mut b = Batch::default();
    for _ in 0..n {
        let p = point(&mut rng);
        b.interior.push([p[0], p[1], p[2], rng.gen()]);
        b.residual.push(point(&mut rng));
    }
    for _ in 0..total / 20 {
        let p = point(&mut rng);
        b.initial.push([0.0, p[1], p[2], 0.0, 0.0]);
        b.top.push([rng.gen_range(0.0..17.0), rng.gen_range(-0.5..0.5), 0.0, 1.0, 0.0]);
        let th = std::f64::consts::PI * (1.0 + rng.gen::<f64>());
        b.bottom.push([rng.gen_range(0.0..17.0), 0.5 * th.cos(), 0.5 * th.sin(), 0.0, 0.0]);
    }
    b
}
