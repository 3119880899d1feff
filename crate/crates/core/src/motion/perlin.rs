use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest |n(x)| of unit-bounded-gradient 1D Perlin noise, reached midway
/// between lattice points with opposite-sign unit gradients.
pub const PERLIN_1D_BOUND: f64 = 0.5;

/// Quintic fade 6t^5 - 15t^4 + 10t^3.
pub fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Classic 1D gradient noise over a lattice of random gradients in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Perlin1d {
    gradients: Vec<f64>,
}

impl Perlin1d {
    /// `cells` lattice intervals, deterministic in `seed`.
    pub fn new(cells: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gradients = (0..=cells.max(1)).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self { gradients }
    }

    pub fn cells(&self) -> usize {
        self.gradients.len() - 1
    }

    /// Noise at lattice coordinate `x` in [0, cells].
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.cells() as f64);
        let i = (x.floor() as usize).min(self.cells() - 1);
        let t = x - i as f64;
        let a = self.gradients[i] * t;
        let b = self.gradients[i + 1] * (t - 1.0);
        a + fade(t) * (b - a)
    }
}

/// `n` samples of Perlin noise spanning `cells` lattice intervals, scaled
/// so that |value| <= `magnitude`.
pub fn perlin_series(n: usize, magnitude: f64, cells: usize, seed: u64) -> Vec<f64> {
    if magnitude == 0.0 {
        return vec![0.0; n];
    }
    let noise = Perlin1d::new(cells, seed);
    let scale = magnitude / PERLIN_1D_BOUND;
    let span = noise.cells() as f64;
    (0..n)
        .map(|k| {
            let x = if n > 1 { k as f64 * span / (n - 1) as f64 } else { 0.0 };
            scale * noise.eval(x)
        })
        .collect()
}
