//! Fixtures shared by the benches.

use hkgeom::random_measures::substream;
use hkgeom::DiscreteMeasure;
use rand::Rng;

/// `n` atoms uniform in `[-2, 2]^dim` with weights in `[0.1, 2]`, fixed by `seed`.
pub fn random_measure(n: usize, dim: usize, seed: u64) -> DiscreteMeasure {
    let mut rng = substream(seed, 0);
    let points = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let weights = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    DiscreteMeasure::new(dim, points, weights).expect("valid fixture")
}
