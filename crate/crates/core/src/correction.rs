//! Inference: corrupted slabs through the corrupted-to-free generator, and
//! reassembly of slab predictions into a volume.

use ndarray::{Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{Domain, ImageSlab, SLAB_CHANNELS, Severity, SlabPipeline, Volume, channel_source};
use crate::error::{Error, Result};
use crate::metrics::{EvalOptions, MetricReport, average_reports, evaluate_pair};
use crate::nn::{Direction, Duncan, slabs_to_tensor, tensor_to_slabs};

/// How overlapping three-slice predictions become one slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reassembly {
    /// Mean of every channel prediction whose source is the slice.
    #[default]
    Average,
    /// Only the centre channel of the slab centred on the slice.
    Center,
}

crate::data::text_enum!(Reassembly {
    Reassembly::Average => "average",
    Reassembly::Center => "center",
});

/// A loaded model applied in the corrupted-to-free direction.
#[derive(Debug)]
pub struct Corrector {
    model: Duncan,
    pub reassembly: Reassembly,
}

impl Corrector {
    pub fn new(model: Duncan) -> Self {
        Self {
            model,
            reassembly: Reassembly::default(),
        }
    }

    pub fn from_checkpoint(path: &std::path::Path) -> Result<Self> {
        let (model, _) = crate::train::load_model(path)?;
        Ok(Self::new(model))
    }

    pub fn model(&self) -> &Duncan {
        &self.model
    }

    /// Slab preparation matching the network's input grid.
    pub fn pipeline(&self) -> SlabPipeline {
        let [rows, cols, _] = self.model.config().input_shape;
        SlabPipeline::new(rows, cols)
    }

    pub fn correct_slab(&self, slab: &ImageSlab) -> Result<ImageSlab> {
        let d = self.model.config().grid_divisor();
        if slab.rows() % d != 0 || slab.cols() % d != 0 {
            return Err(Error::Shape(format!(
                "slab {}x{} is not divisible by {d}",
                slab.rows(),
                slab.cols()
            )));
        }
        let x = slabs_to_tensor(&[slab.pixels.view()], self.model.dtype(), self.model.device())?;
        let y = self.model.translate(&x, Direction::CorruptedToFree)?;
        let pixels = tensor_to_slabs(&y)?
            .pop()
            .ok_or_else(|| Error::Shape("generator returned an empty batch".into()))?;
        slab.with_pixels(pixels)
    }

    pub fn correct_volume(&self, v: &Volume) -> Result<Volume> {
        let slabs = self.pipeline().prepare(v)?;
        let predictions = slabs.iter().map(|s| self.correct_slab(s)).collect::<Result<Vec<_>>>()?;
        reassemble(v, &predictions, self.reassembly)
    }

    /// Correct an artifact-free volume and score the output against it.
    pub fn quality_preservation_check(&self, v_free: &Volume) -> Result<MetricReport> {
        if v_free.domain() != Domain::Free {
            return Err(Error::InvalidArgument(format!("volume `{}` is not artifact-free", v_free.id)));
        }
        let out = self.correct_volume(v_free)?;
        compare_volumes(v_free, &out, &EvalOptions::default())
    }
}

/// Per-slice metrics of `test` against `reference`, averaged over slices.
pub fn compare_volumes(reference: &Volume, test: &Volume, opts: &EvalOptions) -> Result<MetricReport> {
    if reference.dims() != test.dims() {
        return Err(Error::Shape(format!(
            "volumes differ in shape: {:?} vs {:?}",
            reference.dims(),
            test.dims()
        )));
    }
    let reports = reference
        .voxels()
        .axis_iter(Axis(0))
        .zip(test.voxels().axis_iter(Axis(0)))
        .map(|(r, t)| evaluate_pair(r.mapv(f64::from).view(), t.mapv(f64::from).view(), opts))
        .collect::<Result<Vec<_>>>()?;
    average_reports(&reports)
}

/// Rebuild a volume shaped like `v` from one prediction per slice, given in
/// normalized units with their preparation metadata. Pixels outside every
/// crop window keep their input values. The result is labelled
/// artifact-free.
pub fn reassemble(v: &Volume, predictions: &[ImageSlab], mode: Reassembly) -> Result<Volume> {
    let (slices, rows, cols) = v.dims();
    if predictions.len() != slices {
        return Err(Error::Shape(format!(
            "{} predictions for a {slices}-slice volume",
            predictions.len()
        )));
    }
    let mut sum = Array3::<f64>::zeros((slices, rows, cols));
    let mut count = Array3::<u32>::zeros((slices, rows, cols));
    for (center, slab) in predictions.iter().enumerate() {
        if slab.center_index != center {
            return Err(Error::InvalidArgument(format!(
                "prediction {center} is centred on slice {}",
                slab.center_index
            )));
        }
        if (slab.crop.source_rows, slab.crop.source_cols) != (rows, cols) {
            return Err(Error::Shape(format!(
                "prediction {center} was cropped from a {}x{} grid, volume is {rows}x{cols}",
                slab.crop.source_rows, slab.crop.source_cols
            )));
        }
        let channels: Vec<usize> = match mode {
            Reassembly::Average => (0..SLAB_CHANNELS).collect(),
            Reassembly::Center => vec![1],
        };
        for ch in channels {
            let target = channel_source(center, ch, slices);
            for ((i, j), &p) in slab.pixels.index_axis(Axis(2), ch).indexed_iter() {
                let r = i as isize + slab.crop.row_offset;
                let c = j as isize + slab.crop.col_offset;
                if (0..rows as isize).contains(&r) && (0..cols as isize).contains(&c) {
                    let idx = [target, r as usize, c as usize];
                    sum[idx] += slab.denormalize_value(p) as f64;
                    count[idx] += 1;
                }
            }
        }
    }
    let mut out = v.voxels().clone();
    Zip::from(&mut out).and(&sum).and(&count).for_each(|o, &s, &n| {
        if n > 0 {
            *o = (s / n as f64) as f32;
        }
    });
    v.with_voxels(out)?.with_labels(Domain::Free, Severity::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use crate::nn::NetworkConfig;
    use candle_core::{DType, Device};

    fn volume(slices: usize, rows: usize, cols: usize) -> Volume {
        let voxels = Array3::from_shape_fn((slices, rows, cols), |(s, r, c)| {
            (10.0 * s as f32 + (r as f32 * 0.3).sin() * 5.0 + c as f32 * 0.1) + 20.0
        });
        Volume::new("v", voxels, [1.0; 3], Modality::T1, Domain::Corrupted, Severity::Minor).unwrap()
    }

    fn rms(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
        (s / a.len() as f64).sqrt()
    }

    #[test]
    fn identity_predictions_reassemble_to_the_input() {
        for (rows, cols) in [(16, 16), (20, 12)] {
            let v = volume(5, rows, cols);
            let slabs = SlabPipeline::new(16, 16).prepare(&v).unwrap();
            for mode in [Reassembly::Average, Reassembly::Center] {
                let out = reassemble(&v, &slabs, mode).unwrap();
                assert!(rms(out.voxels(), v.voxels()) < 1e-5, "{rows}x{cols} {mode}");
                assert_eq!(out.domain(), Domain::Free);
            }
        }
    }

    #[test]
    fn slices_average_their_covering_predictions() {
        let v = volume(4, 16, 16);
        let mut slabs = SlabPipeline::new(16, 16).prepare(&v).unwrap();
        // Channel k of slab s predicts the constant 100 * s + k in source units.
        for (s, slab) in slabs.iter_mut().enumerate() {
            slab.intensity_range = (0.0, 2000.0);
            for ch in 0..3 {
                let val = ((100 * s + ch) as f32) / 1000.0 - 1.0;
                slab.pixels.index_axis_mut(Axis(2), ch).fill(val);
            }
        }
        let out = reassemble(&v, &slabs, Reassembly::Average).unwrap();
        let decode = |s: usize, ch: usize| (100 * s + ch) as f64;
        // Interior slice 1: slab 0 ch 2, slab 1 ch 1, slab 2 ch 0.
        let want1 = (decode(0, 2) + decode(1, 1) + decode(2, 0)) / 3.0;
        // Edge slice 0: slab 0 ch 0 and ch 1, slab 1 ch 0.
        let want0 = (decode(0, 0) + decode(0, 1) + decode(1, 0)) / 3.0;
        assert!((out.voxels()[[1, 5, 5]] as f64 - want1).abs() < 1e-3);
        assert!((out.voxels()[[0, 5, 5]] as f64 - want0).abs() < 1e-3);
        let center = reassemble(&v, &slabs, Reassembly::Center).unwrap();
        assert!((center.voxels()[[1, 5, 5]] as f64 - decode(1, 1)).abs() < 1e-3);
    }

    #[test]
    fn correction_is_deterministic_and_shape_preserving() {
        let model = Duncan::new(&NetworkConfig::reduced(16, 32), 1, DType::F32, &Device::Cpu).unwrap();
        let corrector = Corrector::new(model);
        let v = volume(3, 20, 30);
        let a = corrector.correct_volume(&v).unwrap();
        let b = corrector.correct_volume(&v).unwrap();
        assert_eq!(a.dims(), v.dims());
        assert_eq!(a.voxels(), b.voxels());
        let slab = &corrector.pipeline().prepare(&v).unwrap()[0];
        let out = corrector.correct_slab(slab).unwrap();
        assert!(out.pixels.iter().all(|p| (-1.0..=1.0).contains(p)));
        let odd = crate::data::center_crop(slab, 16, 24);
        assert!(matches!(corrector.correct_slab(&odd), Err(Error::Shape(_))));
    }
}
