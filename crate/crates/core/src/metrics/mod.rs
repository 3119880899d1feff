//! Full-reference image quality metrics and segmentation overlap.
//!
//! All metrics work on single-channel 2D `f64` images. Multi-channel slabs
//! are scored per channel and averaged.

mod basic;
mod ssim;
mod uqi;
mod vif;

use std::collections::BTreeMap;

use ndarray::{ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

pub use basic::{dice, gradient_map, mse, psnr, threshold_mask};
pub use ssim::{
    MS_SSIM_WEIGHTS, SsimParams, downsample2, filter_valid, gaussian_taps, ms_ssim, ssim, ssim_with,
};
pub use uqi::{UQI_WINDOW, uqi, window_index as uqi_window_index};
pub use vif::{min_side as vif_min_side, vif};

use crate::error::{Error, Result};

/// Label of the VIF variant written next to its values.
pub const VIF_VARIANT: &str = "vif_pixel";

/// Scores of one (reference, test) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub ssim: f64,
    /// `None` when the image is too small for five scales.
    pub ms_ssim: Option<f64>,
    pub psnr: f64,
    /// `None` when the image is too small or the reference is flat.
    pub vif: Option<f64>,
    pub uqi: f64,
    /// Dice per tissue label, when segmentation was requested.
    #[serde(default)]
    pub dsc: BTreeMap<u8, f64>,
}

impl MetricReport {
    /// Flattened (name, value) view, skipping unavailable metrics.
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut out = vec![("mse".to_string(), self.mse), ("ssim".to_string(), self.ssim)];
        if let Some(v) = self.ms_ssim {
            out.push(("ms_ssim".into(), v));
        }
        out.push(("psnr".into(), self.psnr));
        if let Some(v) = self.vif {
            out.push((VIF_VARIANT.into(), v));
        }
        out.push(("uqi".into(), self.uqi));
        for (label, v) in &self.dsc {
            out.push((format!("dsc_{label}"), *v));
        }
        out
    }
}

/// Every metric but MSE improves upward.
pub fn higher_is_better(metric: &str) -> bool {
    metric != "mse"
}

/// Whether `a` is a better score than `b` for `metric`.
pub fn is_better(metric: &str, a: f64, b: f64) -> bool {
    if higher_is_better(metric) { a > b } else { a < b }
}

/// Threshold segmentation used for the Dice usability check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSpec {
    /// Pixels above this value are labelled 1, the rest 0.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Defaults to the reference's dynamic range.
    pub data_range: Option<f64>,
    pub segmentation: Option<SegmentationSpec>,
}

fn dynamic_range(img: ArrayView2<f64>) -> f64 {
    let (lo, hi) = img
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// All metrics for a single-channel pair.
pub fn evaluate_pair(reference: ArrayView2<f64>, test: ArrayView2<f64>, opts: &EvalOptions) -> Result<MetricReport> {
    let range = match opts.data_range {
        Some(r) => r,
        None => {
            let r = dynamic_range(reference);
            if r > 0.0 { r } else { 1.0 }
        }
    };
    let mut dsc = BTreeMap::new();
    if let Some(seg) = opts.segmentation {
        let ma = threshold_mask(reference, seg.threshold);
        let mb = threshold_mask(test, seg.threshold);
        dsc.insert(1, dice(ma.view(), mb.view(), 1)?);
    }
    Ok(MetricReport {
        mse: mse(reference, test)?,
        ssim: ssim(reference, test, range)?,
        ms_ssim: ms_ssim(reference, test, range).ok(),
        psnr: psnr(reference, test, range)?,
        vif: vif(reference, test, range).ok(),
        uqi: uqi(reference, test)?,
        dsc,
    })
}

/// Per-channel metrics averaged over the last axis of `rows x cols x ch`.
pub fn evaluate_channels(
    reference: ArrayView3<f64>,
    test: ArrayView3<f64>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if reference.dim() != test.dim() {
        return Err(Error::Shape(format!(
            "images differ in shape: {:?} vs {:?}",
            reference.dim(),
            test.dim()
        )));
    }
    let reports = reference
        .axis_iter(Axis(2))
        .zip(test.axis_iter(Axis(2)))
        .map(|(r, t)| evaluate_pair(r, t, opts))
        .collect::<Result<Vec<_>>>()?;
    average_reports(&reports)
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn average_reports(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no channels to average".into()));
    }
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut dsc = BTreeMap::new();
    for label in reports[0].dsc.keys() {
        if let Some(v) = mean_opt(reports.iter().map(|r| r.dsc.get(label).copied())) {
            dsc.insert(*label, v);
        }
    }
    Ok(MetricReport {
        mse: avg(&|r| r.mse),
        ssim: avg(&|r| r.ssim),
        ms_ssim: mean_opt(reports.iter().map(|r| r.ms_ssim)),
        psnr: avg(&|r| r.psnr),
        vif: mean_opt(reports.iter().map(|r| r.vif)),
        uqi: avg(&|r| r.uqi),
        dsc,
    })
}

/// Mean and standard error of the mean for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation over sqrt(n); 0 for a single value.
    pub sem: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 || values.iter().all(|&v| v == values[0]) {
            return Some(Self { mean, sem: 0.0, n });
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Some(Self {
            mean,
            sem: var.sqrt() / (n as f64).sqrt(),
            n,
        })
    }
}

/// Per-pair reports with per-metric aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub pairs: Vec<(String, MetricReport)>,
    pub summary: BTreeMap<String, Aggregate>,
}

/// Aggregate already-computed reports.
pub fn summarize(pairs: Vec<(String, MetricReport)>) -> Result<SetReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty set".into()));
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (_, report) in &pairs {
        for (name, v) in report.values() {
            columns.entry(name).or_default().push(v);
        }
    }
    let summary = columns
        .into_iter()
        .filter_map(|(k, v)| Aggregate::from_values(&v).map(|a| (k, a)))
        .collect();
    Ok(SetReport { pairs, summary })
}

/// Score every (id, reference, test) triple and aggregate.
pub fn evaluate_set<'a, I>(pairs: I, opts: &EvalOptions) -> Result<SetReport>
where
    I: IntoIterator<Item = (String, ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
{
    let reports = pairs
        .into_iter()
        .map(|(id, r, t)| evaluate_pair(r, t, opts).map(|m| (id, m)))
        .collect::<Result<Vec<_>>>()?;
    summarize(reports)
}

impl SetReport {
    /// `pair_id,metric,value` records followed by a `# summary` block of
    /// `metric,mean,sem,n` records.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,metric,value\n");
        for (id, report) in &self.pairs {
            for (name, v) in report.values() {
                out.push_str(&format!("{id},{name},{v}\n"));
            }
        }
        out.push_str("# summary\nmetric,mean,sem,n\n");
        for (name, agg) in &self.summary {
            out.push_str(&format!("{name},{},{},{}\n", agg.mean, agg.sem, agg.n));
        }
        out
    }
}
