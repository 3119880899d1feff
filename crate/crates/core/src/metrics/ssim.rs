use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Canonical MS-SSIM scale weights.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Constants of the standard SSIM index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Normalized 1D Gaussian taps. The 2D window is the outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable "valid" correlation: only windows fully inside the image.
pub fn filter_valid(img: ArrayView2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (rows, cols) = img.dim();
    let out_rows = rows + 1 - k;
    let out_cols = cols + 1 - k;
    let mut horizontal = Array2::<f64>::zeros((rows, out_cols));
    for r in 0..rows {
        for c in 0..out_cols {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                acc += w * img[[r, c + t]];
            }
            horizontal[[r, c]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((out_rows, out_cols));
    for r in 0..out_rows {
        for c in 0..out_cols {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                acc += w * horizontal[[r + t, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

pub(crate) fn check_same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "images differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean luminance-contrast-structure index and the mean contrast-structure
/// term, over all valid windows.
pub(crate) fn ssim_and_cs(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    data_range: f64,
    params: &SsimParams,
) -> Result<(f64, f64)> {
    check_same_shape(a, b)?;
    let (rows, cols) = a.dim();
    if rows < params.window || cols < params.window {
        return Err(Error::Shape(format!(
            "SSIM needs at least {w}x{w} pixels, got {rows}x{cols}",
            w = params.window
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    let c1 = (params.k1 * data_range).powi(2);
    let c2 = (params.k2 * data_range).powi(2);
    let taps = gaussian_taps(params.window, params.sigma);

    let mu_a = filter_valid(a, &taps);
    let mu_b = filter_valid(b, &taps);
    let aa = filter_valid((&a * &a).view(), &taps);
    let bb = filter_valid((&b * &b).view(), &taps);
    let ab = filter_valid((&a * &b).view(), &taps);

    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
            let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            ssim_sum += lum * cs;
            cs_sum += cs;
        });
    let n = mu_a.len() as f64;
    Ok((ssim_sum / n, cs_sum / n))
}

/// Standard SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03).
pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> Result<f64> {
    ssim_with(a, b, data_range, &SsimParams::default())
}

pub fn ssim_with(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    data_range: f64,
    params: &SsimParams,
) -> Result<f64> {
    ssim_and_cs(a, b, data_range, params).map(|(s, _)| s)
}

/// 2x2 block average, dropping a trailing odd row/column.
pub fn downsample2(img: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = img.dim();
    Array2::from_shape_fn((rows / 2, cols / 2), |(r, c)| {
        0.25 * (img[[2 * r, 2 * c]]
            + img[[2 * r + 1, 2 * c]]
            + img[[2 * r, 2 * c + 1]]
            + img[[2 * r + 1, 2 * c + 1]])
    })
}

/// Five-scale MS-SSIM. Per-scale terms are clamped at zero before the
/// weighted product so the result stays real.
pub fn ms_ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    let params = SsimParams::default();
    let scales = MS_SSIM_WEIGHTS.len();
    let min_side = params.window << (scales - 1);
    let (rows, cols) = a.dim();
    if rows < min_side || cols < min_side {
        return Err(Error::Shape(format!(
            "MS-SSIM needs at least {min_side}x{min_side} pixels for {scales} scales, got {rows}x{cols}"
        )));
    }
    let mut x = a.to_owned();
    let mut y = b.to_owned();
    let mut value = 1.0;
    for (scale, weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_and_cs(x.view(), y.view(), data_range, &params)?;
        let term = if scale + 1 == scales { s } else { cs };
        value *= term.max(0.0).powf(*weight);
        if scale + 1 < scales {
            x = downsample2(x.view());
            y = downsample2(y.view());
        }
    }
    Ok(value)
}
