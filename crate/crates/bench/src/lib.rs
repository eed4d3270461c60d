//! Benchmark fixtures at the desk benchmark's scale.

use owlgps::environment::{generate_world, World, WorldConfig};
use owlgps::model::{
    encode_concepts, orthogonalize_concepts, ConceptField, FeaturizerConfig, PolicyParams,
    POOLED_DIM,
};
use owlgps::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PSI: FeaturizerConfig = FeaturizerConfig { seed: 1 };

/// A 32x32, 16-channel, 8-concept world with `regions` regions.
pub fn world(regions: usize) -> World {
    generate_world(&WorldConfig { regions, seed: 5, ..WorldConfig::default() }).expect("world")
}

pub fn fields(world: &World) -> Vec<ConceptField> {
    world
        .regions()
        .iter()
        .map(|r| orthogonalize_concepts(encode_concepts(r, &PSI).expect("encode"), false))
        .collect()
}

pub fn theta() -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    PolicyParams::init(8, POOLED_DIM, 32, 32, PSI, &mut rng).expect("init")
}

/// `n` points in `d` dimensions, uniform on the unit cube.
pub fn cloud(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..n * d).map(|_| rng.random::<f64>()).collect();
    Tensor::matrix(n, d, v).expect("cloud")
}
