use ndarray::ArrayView2;

use super::ssim::check_same_shape;
use crate::error::{Error, Result};

/// Side of the square sliding window.
pub const UQI_WINDOW: usize = 8;

/// Universal quality index of one window pair, from its moments.
///
/// Windows whose statistics make the index 0/0 are resolved as follows:
/// both windows constant gives 1 when they are identical and 0 otherwise;
/// both windows zero-mean (but not constant) drops the luminance factor,
/// which tends to 1 along equal means, and keeps the correlation-contrast
/// product.
pub fn window_index(mean_a: f64, mean_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let var_sum = var_a + var_b;
    let mean_sq = mean_a * mean_a + mean_b * mean_b;
    if var_sum > 0.0 && mean_sq > 0.0 {
        4.0 * cov * mean_a * mean_b / (var_sum * mean_sq)
    } else if var_sum > 0.0 {
        2.0 * cov / var_sum
    } else if mean_a == mean_b {
        1.0
    } else {
        0.0
    }
}

/// UQI over all 8x8 windows (stride 1, fully inside the image), averaged.
pub fn uqi(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(a, b)?;
    let (rows, cols) = a.dim();
    let w = UQI_WINDOW;
    if rows < w || cols < w {
        return Err(Error::Shape(format!(
            "UQI needs at least {w}x{w} pixels, got {rows}x{cols}"
        )));
    }
    // Window sums via integral images.
    let integral = |f: &dyn Fn(usize, usize) -> f64| {
        let mut t = vec![0.0f64; (rows + 1) * (cols + 1)];
        for r in 0..rows {
            let mut run = 0.0;
            for c in 0..cols {
                run += f(r, c);
                t[(r + 1) * (cols + 1) + c + 1] = t[r * (cols + 1) + c + 1] + run;
            }
        }
        t
    };
    let sa = integral(&|r, c| a[[r, c]]);
    let sb = integral(&|r, c| b[[r, c]]);
    let saa = integral(&|r, c| a[[r, c]] * a[[r, c]]);
    let sbb = integral(&|r, c| b[[r, c]] * b[[r, c]]);
    let sab = integral(&|r, c| a[[r, c]] * b[[r, c]]);
    let rect = |t: &[f64], r: usize, c: usize| {
        let s = cols + 1;
        t[(r + w) * s + c + w] - t[r * s + c + w] - t[(r + w) * s + c] + t[r * s + c]
    };
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - w {
        for c in 0..=cols - w {
            let ma = rect(&sa, r, c) / n;
            let mb = rect(&sb, r, c) / n;
            // Unbiased moments, matching the original index definition.
            let va = ((rect(&saa, r, c) - n * ma * ma) / (n - 1.0)).max(0.0);
            let vb = ((rect(&sbb, r, c) - n * mb * mb) / (n - 1.0)).max(0.0);
            let cov = (rect(&sab, r, c) - n * ma * mb) / (n - 1.0);
            total += window_index(ma, mb, clean(va), clean(vb), cov);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

// Integral-image differences leave rounding residue on constant windows.
fn clean(v: f64) -> f64 {
    if v < 1e-14 { 0.0 } else { v }
}
