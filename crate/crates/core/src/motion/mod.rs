//! In-silico motion artifacts: Perlin background motion, swallow bumps and
//! sudden jumps, applied line by line in k-space.

mod insilico;
mod kspace;
mod perlin;
mod trajectory;

pub use insilico::{MotionSidecar, SliceMotion, corrupt_volume, derive_seed, generate_in_silico, sidecar_path};
pub use kspace::{
    AcquisitionGeometry, KSpacePlane, corrupt_kspace, corrupt_slice, forward_kspace, inverse_kspace,
    rotate_bilinear, signed_frequency,
};
pub use perlin::{PERLIN_1D_BOUND, Perlin1d, fade, perlin_series};
pub use trajectory::{
    MotionEvent, MotionTrajectory, Pose, SeverityProfile, SwallowAmplitude, amplitudes_ordered, build_trajectory,
};
