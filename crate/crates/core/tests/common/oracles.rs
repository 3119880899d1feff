//! Brute-force reference implementations used as test oracles. Each one
//! evaluates its window statistics directly with two-pass moments and full
//! 2D kernels, sharing no code with the library.

use ndarray::{Array2, ArrayView2};

/// Normalized 2D Gaussian kernel built from the radial distance.
pub fn gauss2d(size: usize, sigma: f64) -> Array2<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = Array2::from_shape_fn((size, size), |(i, j)| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    let s = k.sum();
    k.mapv_inplace(|v| v / s);
    k
}

/// Weighted mean, variance and covariance of the window at `(r, c)`.
fn window_moments(a: ArrayView2<f64>, b: ArrayView2<f64>, w: &Array2<f64>, r: usize, c: usize) -> (f64, f64, f64, f64, f64) {
    let n = w.nrows();
    let (mut ma, mut mb) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            ma += w[[i, j]] * a[[r + i, c + j]];
            mb += w[[i, j]] * b[[r + i, c + j]];
        }
    }
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let (da, db) = (a[[r + i, c + j]] - ma, b[[r + i, c + j]] - mb);
            va += w[[i, j]] * da * da;
            vb += w[[i, j]] * db * db;
            cov += w[[i, j]] * da * db;
        }
    }
    (ma, mb, va, vb, cov)
}

/// Mean SSIM and mean contrast-structure term, 11x11 Gaussian (sigma 1.5).
pub fn ssim_cs(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> (f64, f64) {
    let w = gauss2d(11, 1.5);
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let (rows, cols) = a.dim();
    let (mut s, mut cs, mut count) = (0.0, 0.0, 0.0);
    for r in 0..=rows - 11 {
        for c in 0..=cols - 11 {
            let (ma, mb, va, vb, cov) = window_moments(a, b, &w, r, c);
            let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            let k = (2.0 * cov + c2) / (va + vb + c2);
            s += l * k;
            cs += k;
            count += 1.0;
        }
    }
    (s / count, cs / count)
}

pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> f64 {
    ssim_cs(a, b, data_range).0
}

fn halve(x: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let mut out = Array2::zeros((rows / 2, cols / 2));
    for r in 0..rows / 2 {
        for c in 0..cols / 2 {
            let mut acc = 0.0;
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                acc += x[[2 * r + dr, 2 * c + dc]];
            }
            out[[r, c]] = acc / 4.0;
        }
    }
    out
}

/// Five-scale MS-SSIM with the standard weights; negative terms clamp to 0.
pub fn ms_ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (mut x, mut y) = (a.to_owned(), b.to_owned());
    let mut out = 1.0;
    for (i, w) in weights.iter().enumerate() {
        let (s, cs) = ssim_cs(x.view(), y.view(), data_range);
        let term: f64 = if i == 4 { s } else { cs };
        out *= term.max(0.0).powf(*w);
        x = halve(&x);
        y = halve(&y);
    }
    out
}

pub fn psnr(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> f64 {
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    10.0 * (data_range * data_range / (sq / a.len() as f64)).log10()
}

/// Mean UQI over 8x8 windows with unbiased moments. Random inputs only: no
/// degenerate-window handling.
pub fn uqi(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let (rows, cols) = a.dim();
    let n = 64.0;
    let (mut total, mut count) = (0.0, 0.0);
    for r in 0..=rows - 8 {
        for c in 0..=cols - 8 {
            let wa = a.slice(ndarray::s![r..r + 8, c..c + 8]);
            let wb = b.slice(ndarray::s![r..r + 8, c..c + 8]);
            let ma = wa.sum() / n;
            let mb = wb.sum() / n;
            let va = wa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (n - 1.0);
            let vb = wb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1.0);
            let cov = wa.iter().zip(wb.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
            total += 4.0 * cov * ma * mb / ((va + vb) * (ma * ma + mb * mb));
            count += 1.0;
        }
    }
    total / count
}

fn filter_valid_2d(x: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let (rows, cols) = x.dim();
    Array2::from_shape_fn((rows + 1 - n, cols + 1 - n), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += w[[i, j]] * x[[r + i, c + j]];
            }
        }
        acc
    })
}

/// Four-scale pixel-domain VIF on an 8-bit scale (noise variance 2).
pub fn vif(reference: ArrayView2<f64>, dist: ArrayView2<f64>, data_range: f64) -> f64 {
    let sigma_nsq = 2.0;
    let eps = 1e-10;
    let mut r = reference.mapv(|v| v * 255.0 / data_range);
    let mut d = dist.mapv(|v| v * 255.0 / data_range);
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4u32 {
        let n = 2usize.pow(4 - scale + 1) + 1;
        let w = gauss2d(n, n as f64 / 5.0);
        if scale > 1 {
            let fr = filter_valid_2d(&r, &w);
            let fd = filter_valid_2d(&d, &w);
            r = Array2::from_shape_fn((fr.nrows().div_ceil(2), fr.ncols().div_ceil(2)), |(i, j)| fr[[2 * i, 2 * j]]);
            d = Array2::from_shape_fn((fd.nrows().div_ceil(2), fd.ncols().div_ceil(2)), |(i, j)| fd[[2 * i, 2 * j]]);
        }
        let (rows, cols) = r.dim();
        for i in 0..=rows - n {
            for j in 0..=cols - n {
                let (_, _, s1, s2, s12) = window_moments(r.view(), d.view(), &w, i, j);
                let (mut s1, mut s2) = (s1.max(0.0), s2.max(0.0));
                let mut g = s12 / (s1 + eps);
                let mut sv = s2 - g * s12;
                if s1 < eps {
                    g = 0.0;
                    sv = s2;
                    s1 = 0.0;
                }
                if s2 < eps {
                    g = 0.0;
                    sv = 0.0;
                    s2 = 0.0;
                }
                if g < 0.0 {
                    sv = s2;
                    g = 0.0;
                }
                sv = sv.max(eps);
                num += (1.0 + g * g * s1 / (sv + sigma_nsq)).log10();
                den += (1.0 + s1 / sigma_nsq).log10();
            }
        }
    }
    num / den
}
