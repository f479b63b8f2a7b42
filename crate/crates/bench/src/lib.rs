//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revenant_core::engine::{PairSet, Sample, Size};
use revenant_core::nn::Tensor;
use revenant_core::Image;

pub fn noise_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * 3).map(|_| rng.random()).collect();
    Image::new(width, height, data).expect("sized buffer")
}

/// Random pairs at `size`×`size` with `channels` conditioning planes.
pub fn random_pairs(n: usize, size: usize, channels: usize, seed: u64) -> PairSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| {
        let cond = (0..channels * size * size).map(|_| rng.random::<f32>()).collect();
        let truth_image = noise_image(size, size, rng.random());
        let truth = Tensor::from_vec([1, 3, size, size], truth_image.to_planar()).expect("sized buffer");
        Sample {
            cond: Tensor::from_vec([1, channels, size, size], cond).expect("sized buffer"),
            truth,
            truth_image,
        }
    };
    PairSet {
        train: (0..n).map(|_| sample(&mut rng)).collect(),
        test: (0..2).map(|_| sample(&mut rng)).collect(),
        size: Size::new(size, size),
        channels,
    }
}
