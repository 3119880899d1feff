use ndarray::{Array2, ArrayView, ArrayView2, Dimension, Zip};

use super::ssim::check_same_shape;
use crate::error::{Error, Result};

pub fn mse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut acc = 0.0;
    Zip::from(&a).and(&b).for_each(|&x, &y| acc += (x - y) * (x - y));
    Ok(acc / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

/// Dice overlap of `label` between two label maps. Two maps without the
/// label count as perfect agreement.
pub fn dice<D: Dimension>(a: ArrayView<u8, D>, b: ArrayView<u8, D>, label: u8) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "label maps differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut size_a = 0usize;
    let mut size_b = 0usize;
    let mut both = 0usize;
    Zip::from(&a).and(&b).for_each(|&x, &y| {
        let (ia, ib) = (x == label, y == label);
        size_a += ia as usize;
        size_b += ib as usize;
        both += (ia && ib) as usize;
    });
    if size_a + size_b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (size_a + size_b) as f64)
}

/// Gradient magnitude from central differences, one-sided at the borders.
pub fn gradient_map(a: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = a.dim();
    let diff = |lo: f64, hi: f64, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f64 };
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(rows - 1));
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(cols - 1));
        let gy = diff(a[[r0, c]], a[[r1, c]], r1 - r0);
        let gx = diff(a[[r, c0]], a[[r, c1]], c1 - c0);
        (gx * gx + gy * gy).sqrt()
    })
}

/// Two-class threshold segmentation: 1 where `value > threshold`.
pub fn threshold_mask<D: Dimension>(a: ArrayView<f64, D>, threshold: f64) -> ndarray::Array<u8, D> {
    a.mapv(|v| (v > threshold) as u8)
}
