//! Fixtures shared by the benchmarks.

use lanebma_core::synth::{simulate_scene, SynthOptions};
use lanebma_core::Scene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A reproducible three-lane scene with a leader and a distractor vehicle.
pub fn bench_scene(seed: u64) -> Scene {
    let options = SynthOptions {
        leader_probability: 1.0,
        distractor_probability: 1.0,
        ..SynthOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_scene("bench", &options, &mut rng)
        .expect("default simulation options are valid")
        .0
}
