//! Line-by-line k-space corruption of a 2D slice.
//!
//! Rows are phase-encode lines, acquired top to bottom; columns are
//! frequency-encode samples. Line `k` of the corrupted spectrum is line `k`
//! of the spectrum of the object as posed during that line:
//!
//! * in-plane rotation `rz` resamples the image (bilinear, zero outside),
//! * in-plane translations `tx` (columns) and `ty` (rows) are linear phase
//!   ramps,
//! * through-plane parameters `tz`, `rx`, `ry` add a global line phase of
//!   `through_plane_phase * (tz + rx + ry)` radians.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use super::trajectory::{MotionTrajectory, Pose};
use crate::error::{Error, Result};

/// Complex spectrum, phase-encode lines x frequency-encode samples.
pub type KSpacePlane = Array2<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionGeometry {
    /// Pixel size along rows (phase-encode direction), mm.
    pub row_spacing: f64,
    /// Pixel size along columns (frequency-encode direction), mm.
    pub col_spacing: f64,
    /// Radians of line phase per unit of through-plane motion.
    pub through_plane_phase: f64,
}

impl Default for AcquisitionGeometry {
    fn default() -> Self {
        Self {
            row_spacing: 1.0,
            col_spacing: 1.0,
            through_plane_phase: 0.1,
        }
    }
}

struct Plans {
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            row_fwd: planner.plan_fft_forward(cols),
            col_fwd: planner.plan_fft_forward(rows),
            row_inv: planner.plan_fft_inverse(cols),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }
}

fn fft2(data: &mut Array2<Complex64>, row_plan: &Arc<dyn Fft<f64>>, col_plan: &Arc<dyn Fft<f64>>) {
    let (rows, cols) = data.dim();
    for mut row in data.rows_mut() {
        let mut buf: Vec<Complex64> = row.to_vec();
        row_plan.process(&mut buf);
        row.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
    }
    let mut col_buf = vec![Complex64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            col_buf[r] = data[[r, c]];
        }
        col_plan.process(&mut col_buf);
        for r in 0..rows {
            data[[r, c]] = col_buf[r];
        }
    }
}

/// Unnormalized forward 2D DFT.
pub fn forward_kspace(image: ArrayView2<f64>) -> KSpacePlane {
    let (rows, cols) = image.dim();
    let plans = Plans::new(rows, cols);
    let mut data = image.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut data, &plans.row_fwd, &plans.col_fwd);
    data
}

/// Inverse 2D DFT (normalized by 1/(rows*cols)).
pub fn inverse_kspace(plane: &KSpacePlane) -> Array2<Complex64> {
    let (rows, cols) = plane.dim();
    let plans = Plans::new(rows, cols);
    let mut data = plane.clone();
    fft2(&mut data, &plans.row_inv, &plans.col_inv);
    let norm = 1.0 / (rows * cols) as f64;
    data.mapv_inplace(|v| v * norm);
    data
}

/// Signed DFT frequency of bin `k` out of `n`.
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 }
}

/// Rotate about the grid centre by `degrees`, bilinear, zero outside.
pub fn rotate_bilinear(image: ArrayView2<f64>, degrees: f64) -> Array2<f64> {
    if degrees == 0.0 {
        return image.to_owned();
    }
    let (rows, cols) = image.dim();
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let sample = |y: f64, x: f64| -> f64 {
        if y < 0.0 || x < 0.0 || y > (rows - 1) as f64 || x > (cols - 1) as f64 {
            return 0.0;
        }
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(rows - 1), (x0 + 1).min(cols - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = image[[y0, x0]] * (1.0 - fx) + image[[y0, x1]] * fx;
        let bottom = image[[y1, x0]] * (1.0 - fx) + image[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    };
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        // inverse mapping: output pixel comes from the source rotated back
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        let sy = cy + cos * dy - sin * dx;
        let sx = cx + sin * dy + cos * dx;
        sample(sy, sx)
    })
}

/// Spectrum row `ky` of `image`: weight rows by the column-direction
/// twiddles, then one row transform.
fn spectrum_row(image: ArrayView2<f64>, ky: usize, row_plan: &Arc<dyn Fft<f64>>) -> Vec<Complex64> {
    let (rows, cols) = image.dim();
    let mut acc = vec![Complex64::default(); cols];
    for y in 0..rows {
        let w = Complex64::from_polar(1.0, -2.0 * PI * (ky * y % rows) as f64 / rows as f64);
        for (a, &v) in acc.iter_mut().zip(image.row(y).iter()) {
            *a += w * v;
        }
    }
    row_plan.process(&mut acc);
    acc
}

fn line_phase(pose: &Pose, ky: usize, kx: usize, rows: usize, cols: usize, geo: &AcquisitionGeometry) -> f64 {
    let ty = pose.ty / geo.row_spacing;
    let tx = pose.tx / geo.col_spacing;
    let ramp = -2.0 * PI
        * (signed_frequency(ky, rows) * ty / rows as f64 + signed_frequency(kx, cols) * tx / cols as f64);
    ramp + geo.through_plane_phase * (pose.tz + pose.rx + pose.ry)
}

/// Corrupted spectrum of `image` under `trajectory`.
pub fn corrupt_kspace(
    image: ArrayView2<f64>,
    trajectory: &MotionTrajectory,
    geo: &AcquisitionGeometry,
) -> Result<KSpacePlane> {
    let (rows, cols) = image.dim();
    if trajectory.len() != rows {
        return Err(Error::Shape(format!(
            "trajectory has {} lines but the slice has {rows} phase-encode lines",
            trajectory.len()
        )));
    }
    trajectory.validate()?;
    let plans = Plans::new(rows, cols);
    let base = {
        let mut data = image.mapv(|v| Complex64::new(v, 0.0));
        fft2(&mut data, &plans.row_fwd, &plans.col_fwd);
        data
    };
    let mut out = KSpacePlane::zeros((rows, cols));
    let mut rotated: Option<(f64, Array2<f64>)> = None;
    for (ky, pose) in trajectory.lines.iter().enumerate() {
        let line: Vec<Complex64> = if pose.rz == 0.0 {
            base.row(ky).to_vec()
        } else {
            if rotated.as_ref().is_none_or(|(angle, _)| *angle != pose.rz) {
                rotated = Some((pose.rz, rotate_bilinear(image, pose.rz)));
            }
            let img = &rotated.as_ref().expect("rotation cached above").1;
            spectrum_row(img.view(), ky, &plans.row_fwd)
        };
        for (kx, v) in line.into_iter().enumerate() {
            let phi = line_phase(pose, ky, kx, rows, cols, geo);
            out[[ky, kx]] = v * Complex64::from_polar(1.0, phi);
        }
    }
    Ok(out)
}

/// Corrupt one slice: real part of the inverse transform of the corrupted
/// spectrum, clamped to the input's intensity range.
pub fn corrupt_slice(
    image: ArrayView2<f64>,
    trajectory: &MotionTrajectory,
    geo: &AcquisitionGeometry,
) -> Result<Array2<f64>> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slice to corrupt".into()));
    }
    let spectrum = corrupt_kspace(image, trajectory, geo)?;
    let (lo, hi) = image
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(inverse_kspace(&spectrum).mapv(|z| z.re.clamp(lo, hi)))
}
