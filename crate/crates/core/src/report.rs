//! Static figures: slice comparison panels and metric bar charts.

use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::metrics::{Aggregate, gradient_map};

const GAP: u32 = 4;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

fn to_gray(img: ArrayView2<f64>, lo: f64, hi: f64) -> GrayImage {
    let (rows, cols) = img.dim();
    let span = if hi > lo { hi - lo } else { 1.0 };
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = ((img[[y as usize, x as usize]] - lo) / span).clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    })
}

fn range<'a>(imgs: impl IntoIterator<Item = &'a Array2<f64>>) -> (f64, f64) {
    imgs.into_iter()
        .flat_map(|a| a.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Three columns (corrupted, corrected, reference) by three rows: the
/// slices on a shared window, absolute error against the reference, and
/// gradient magnitude.
pub fn render_panel(corrupted: ArrayView2<f64>, corrected: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<RgbImage> {
    let dim = reference.dim();
    if corrupted.dim() != dim || corrected.dim() != dim {
        return Err(Error::Shape(format!(
            "panel slices differ: {:?}, {:?}, {dim:?}",
            corrupted.dim(),
            corrected.dim()
        )));
    }
    let images = [corrupted.to_owned(), corrected.to_owned(), reference.to_owned()];
    let errors: Vec<Array2<f64>> = images.iter().map(|a| (a - &reference).mapv(f64::abs)).collect();
    let grads: Vec<Array2<f64>> = images.iter().map(|a| gradient_map(a.view())).collect();
    let (rows, cols) = (dim.0 as u32, dim.1 as u32);
    let mut canvas = RgbImage::from_pixel(3 * cols + 2 * GAP, 3 * rows + 2 * GAP, BACKGROUND);
    for (r, row) in [&images[..], &errors[..], &grads[..]].into_iter().enumerate() {
        let (lo, hi) = if r == 0 { range(row) } else { (0.0, range(row).1) };
        for (c, img) in row.iter().enumerate() {
            let gray = to_gray(img.view(), lo, hi);
            let (x0, y0) = (c as u32 * (cols + GAP), r as u32 * (rows + GAP));
            for (x, y, p) in gray.enumerate_pixels() {
                canvas.put_pixel(x0 + x, y0 + y, Rgb([p[0]; 3]));
            }
        }
    }
    Ok(canvas)
}

const BAR_COLORS: [Rgb<u8>; 4] = [Rgb([66, 133, 244]), Rgb([244, 160, 0]), Rgb([219, 68, 55]), Rgb([15, 157, 88])];

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
    for y in y0.min(y1)..y0.max(y1) {
        for x in x0..x1 {
            if x < img.width() && y < img.height() {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Bars of `mean` with `± sem` whiskers, one per entry in order, on an axis
/// from `min(0, lowest)` to the highest whisker. Light gridlines mark
/// quarters of the axis.
pub fn render_bar_chart(bars: &[Aggregate]) -> Result<RgbImage> {
    if bars.is_empty() {
        return Err(Error::InvalidArgument("bar chart needs at least one bar".into()));
    }
    let (width, height, margin, bar_w) = (60 + 70 * bars.len() as u32, 240u32, 20u32, 40u32);
    let top = bars.iter().map(|b| b.mean + b.sem).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let bottom = bars.iter().map(|b| b.mean - b.sem).fold(f64::INFINITY, f64::min).min(0.0);
    let span = if top > bottom { top - bottom } else { 1.0 };
    let plot_h = (height - 2 * margin) as f64;
    let y_of = |v: f64| margin + (plot_h * (top - v) / span).round() as u32;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    for q in 0..=4 {
        let y = margin + (plot_h * q as f64 / 4.0).round() as u32;
        fill(&mut img, margin, y, width - margin, y + 1, Rgb([225, 225, 225]));
    }
    let zero = y_of(0.0);
    for (i, b) in bars.iter().enumerate() {
        let x0 = 40 + 70 * i as u32;
        fill(&mut img, x0, zero, x0 + bar_w, y_of(b.mean), BAR_COLORS[i % BAR_COLORS.len()]);
        let (hi, lo) = (y_of(b.mean + b.sem), y_of(b.mean - b.sem));
        let mid = x0 + bar_w / 2;
        let black = Rgb([0, 0, 0]);
        fill(&mut img, mid, hi, mid + 1, lo + 1, black);
        fill(&mut img, mid - 6, hi, mid + 7, hi + 1, black);
        fill(&mut img, mid - 6, lo, mid + 7, lo + 1, black);
    }
    fill(&mut img, margin, zero, width - margin, zero + 1, Rgb([0, 0, 0]));
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    crate::io_util::write_atomic(path, bytes.get_ref())
}
