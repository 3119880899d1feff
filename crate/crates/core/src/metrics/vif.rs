//! Pixel-domain visual information fidelity (multi-scale, Gaussian scale
//! mixture source model).
//!
//! The reference constants (noise variance 2, stabilizer 1e-10) assume an
//! 8-bit intensity scale, so both images are rescaled by `255 / data_range`
//! before the statistics are taken.

use ndarray::{Array2, ArrayView2, Zip};

use super::ssim::{check_same_shape, filter_valid, gaussian_taps};
use crate::error::{Error, Result};

const SIGMA_NSQ: f64 = 2.0;
const EPS: f64 = 1e-10;
const SCALES: u32 = 4;

/// Window size used at `scale` (1-based): 17, 9, 5, 3.
pub fn window_size(scale: u32) -> usize {
    (1usize << (SCALES - scale + 1)) + 1
}

/// Smallest side length the four scales can handle.
pub fn min_side() -> usize {
    (1..)
        .find(|&side| {
            let mut len = side;
            for scale in 1..=SCALES {
                let n = window_size(scale);
                if scale > 1 {
                    if len < n {
                        return false;
                    }
                    len = (len + 1 - n).div_ceil(2);
                }
                if len < n {
                    return false;
                }
            }
            true
        })
        .unwrap_or(usize::MAX)
}

/// Numerator and denominator accumulations for one scale.
pub(crate) fn scale_terms(ref_img: ArrayView2<f64>, dist: ArrayView2<f64>, win: &[f64]) -> (f64, f64) {
    let mu1 = filter_valid(ref_img, win);
    let mu2 = filter_valid(dist, win);
    let s11 = filter_valid((&ref_img * &ref_img).view(), win);
    let s22 = filter_valid((&dist * &dist).view(), win);
    let s12 = filter_valid((&ref_img * &dist).view(), win);
    let mut num = 0.0;
    let mut den = 0.0;
    Zip::from(&mu1)
        .and(&mu2)
        .and(&s11)
        .and(&s22)
        .and(&s12)
        .for_each(|&m1, &m2, &e11, &e22, &e12| {
            let (n, d) = local_terms(e11 - m1 * m1, e22 - m2 * m2, e12 - m1 * m2);
            num += n;
            den += d;
        });
    (num, den)
}

/// Per-window information terms with the reference implementation's
/// clamping rules.
pub(crate) fn local_terms(sigma1_sq: f64, sigma2_sq: f64, sigma12: f64) -> (f64, f64) {
    let mut s1 = sigma1_sq.max(0.0);
    let s2 = sigma2_sq.max(0.0);
    let mut g = sigma12 / (s1 + EPS);
    let mut sv = s2 - g * sigma12;
    if s1 < EPS {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
    }
    if s2 < EPS {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = s2;
        g = 0.0;
    }
    if sv <= EPS {
        sv = EPS;
    }
    let num = (1.0 + g * g * s1 / (sv + SIGMA_NSQ)).log10();
    let den = (1.0 + s1 / SIGMA_NSQ).log10();
    (num, den)
}

/// VIF of `dist` against the reference `reference`. A reference with no
/// information (zero variance at every scale) yields 1 for an identical
/// test image and an error otherwise.
pub fn vif(reference: ArrayView2<f64>, dist: ArrayView2<f64>, data_range: f64) -> Result<f64> {
    check_same_shape(reference, dist)?;
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    let (rows, cols) = reference.dim();
    let need = min_side();
    if rows < need || cols < need {
        return Err(Error::Shape(format!(
            "VIF needs at least {need}x{need} pixels, got {rows}x{cols}"
        )));
    }
    let gain = 255.0 / data_range;
    let mut r: Array2<f64> = reference.mapv(|v| v * gain);
    let mut d: Array2<f64> = dist.mapv(|v| v * gain);
    let mut num = 0.0;
    let mut den = 0.0;
    for scale in 1..=SCALES {
        let n = window_size(scale);
        let win = gaussian_taps(n, n as f64 / 5.0);
        if scale > 1 {
            r = decimate(filter_valid(r.view(), &win).view());
            d = decimate(filter_valid(d.view(), &win).view());
        }
        let (sn, sd) = scale_terms(r.view(), d.view(), &win);
        num += sn;
        den += sd;
    }
    if den <= 0.0 {
        return if reference == dist {
            Ok(1.0)
        } else {
            Err(Error::Degenerate(
                "VIF undefined: reference carries no signal variance".into(),
            ))
        };
    }
    Ok(num / den)
}

/// Keep every other row and column, starting at index 0.
fn decimate(img: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = img.dim();
    Array2::from_shape_fn((rows.div_ceil(2), cols.div_ceil(2)), |(i, j)| img[[2 * i, 2 * j]])
}
