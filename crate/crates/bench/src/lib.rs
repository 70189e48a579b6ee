//! Shared fixtures for the kernel benchmarks.

use gpgmnet_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data: Vec<f32> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}
