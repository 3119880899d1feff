//! Synthetic head phantoms for tests, demos and desk-scale experiments.
//!
//! A phantom is a stack of nested ellipsoids (scalp, cortex, folded white
//! matter, two ventricles) with random geometry per seed and a faint smooth
//! texture. T1 contrast has bright white matter and dark fluid; T2 swaps them.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, Modality, Severity, Volume};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    pub modality: Modality,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(slices: usize, rows: usize, cols: usize, seed: u64) -> Self {
        Self {
            slices,
            rows,
            cols,
            modality: Modality::T1,
            seed,
        }
    }
}

/// Tissue intensities (background is 0).
#[derive(Debug, Clone, Copy)]
struct Contrast {
    scalp: f64,
    gray: f64,
    white: f64,
    fluid: f64,
}

impl Contrast {
    fn for_modality(m: Modality) -> Self {
        match m {
            Modality::T1 => Self {
                scalp: 0.45,
                gray: 0.55,
                white: 0.9,
                fluid: 0.12,
            },
            Modality::T2 => Self {
                scalp: 0.35,
                gray: 0.6,
                white: 0.35,
                fluid: 0.95,
            },
        }
    }
}

/// Threshold separating white matter from everything else in T1 phantoms.
pub const T1_WHITE_MATTER_THRESHOLD: f64 = 0.725;

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    /// In-plane rotation, radians.
    angle: f64,
}

impl Ellipsoid {
    /// Normalized radial coordinate and in-plane polar angle.
    fn polar(&self, p: [f64; 3]) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let dz = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dx = p[2] - self.center[2];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let r2 = (dz / self.radii[0]).powi(2) + (v / self.radii[1]).powi(2) + (u / self.radii[2]).powi(2);
        (r2.sqrt(), v.atan2(u))
    }
}

/// Generate an artifact-free phantom volume, intensities in [0, 1].
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let contrast = Contrast::for_modality(spec.modality);
    let jitter = |rng: &mut ChaCha8Rng, x: f64| x * rng.random_range(0.92..1.08);

    // Coordinates are normalized to [-1, 1] on each axis.
    let head = Ellipsoid {
        center: [0.0, rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)],
        radii: [jitter(&mut rng, 1.15), jitter(&mut rng, 0.86), jitter(&mut rng, 0.72)],
        angle: rng.random_range(-0.15..0.15),
    };
    let brain = Ellipsoid {
        radii: [head.radii[0] * 0.9, head.radii[1] * 0.86, head.radii[2] * 0.84],
        ..head
    };
    let white = Ellipsoid {
        radii: [brain.radii[0] * 0.78, brain.radii[1] * 0.72, brain.radii[2] * 0.7],
        ..brain
    };
    let fold_count = rng.random_range(5..9) as f64;
    let fold_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let fold_depth = rng.random_range(0.06..0.12);
    let vent_offset = rng.random_range(0.1..0.16);
    let ventricles = [-1.0, 1.0].map(|side| Ellipsoid {
        center: [brain.center[0], brain.center[1] - 0.05, brain.center[2] + side * vent_offset],
        radii: [0.5, jitter(&mut rng, 0.22), jitter(&mut rng, 0.07)],
        angle: brain.angle + side * 0.2,
    });
    let texture: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(1.0..4.0),
                rng.random_range(1.0..4.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.01..0.03),
            ]
        })
        .collect();

    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    let voxels = Array3::from_shape_fn((spec.slices, spec.rows, spec.cols), |(s, r, c)| {
        let p = [norm(s, spec.slices), norm(r, spec.rows), norm(c, spec.cols)];
        let (rh, _) = head.polar(p);
        if rh > 1.0 {
            return 0.0f32;
        }
        let (rb, _) = brain.polar(p);
        let mut value = if rb > 1.0 {
            contrast.scalp
        } else {
            let (rw, theta) = white.polar(p);
            let fold = 1.0 + fold_depth * (fold_count * theta + fold_phase).sin();
            if rw < fold { contrast.white } else { contrast.gray }
        };
        if rb <= 1.0 && ventricles.iter().any(|v| v.polar(p).0 < 1.0) {
            value = contrast.fluid;
        }
        if rb <= 1.0 {
            for t in &texture {
                value += t[3] * (t[0] * p[1] * 3.0 + t[1] * p[2] * 3.0 + t[2]).sin();
            }
        }
        value.clamp(0.0, 1.0) as f32
    });
    Volume::new(
        format!("phantom_{:04}", spec.seed),
        voxels,
        [1.0, 1.0, 1.0],
        spec.modality,
        Domain::Free,
        Severity::None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_bounded() {
        let spec = PhantomSpec::new(6, 32, 32, 5);
        let a = generate_phantom(&spec).unwrap();
        assert_eq!(a, generate_phantom(&spec).unwrap());
        assert!(a.voxels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a.voxels(), generate_phantom(&PhantomSpec::new(6, 32, 32, 6)).unwrap().voxels());
    }

    #[test]
    fn phantom_has_background_and_white_matter() {
        let v = generate_phantom(&PhantomSpec::new(5, 48, 48, 1)).unwrap();
        let mid = v.slice(2);
        assert_eq!(mid[[0, 0]], 0.0);
        let wm = mid.iter().filter(|&&x| x as f64 > T1_WHITE_MATTER_THRESHOLD).count();
        assert!(wm > 100 && wm < 48 * 48 / 2, "{wm}");
    }
}
