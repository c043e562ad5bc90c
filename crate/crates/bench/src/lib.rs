//! Shared fixtures for the sampler benchmarks.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use idcsbm::generator::{grid_point, sample_network};
use idcsbm::{Hyperparams, Network};

/// A generated benchmark network (density knob lambda = 5, gamma = 2) with
/// the hyperparameters that produced it.
pub fn benchmark_network(n: usize, seed: u64) -> (Network, Hyperparams) {
    let point = grid_point(n, 5.0, 2.0);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let (net, _truth) = sample_network(point.n, &point.hp, &mut rng).expect("generation succeeds");
    (net, point.hp)
}
