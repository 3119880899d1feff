use ndarray::{Array3, Axis, s};
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};

/// Paper-faithful network input size.
pub const CROP_ROWS: usize = 208;
pub const CROP_COLS: usize = 256;
/// Slices per slab (stacked as channels).
pub const SLAB_CHANNELS: usize = 3;
/// Fill value for padding, i.e. normalized background.
pub const PAD_VALUE: f32 = -1.0;

/// Three adjacent slices as channels, in source intensity units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSlab {
    /// rows x cols x 3
    pub pixels: Array3<f32>,
    pub source_id: String,
    pub center_index: usize,
}

/// Where a cropped slab sits in its source slice grid: output pixel
/// `(i, j)` came from source pixel `(i + row_offset, j + col_offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub source_rows: usize,
    pub source_cols: usize,
    pub row_offset: isize,
    pub col_offset: isize,
}

impl CropGeometry {
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            source_rows: rows,
            source_cols: cols,
            row_offset: 0,
            col_offset: 0,
        }
    }
}

/// A normalized, network-ready slab.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSlab {
    /// rows x cols x 3, every value in [-1, 1]
    pub pixels: Array3<f32>,
    pub source_id: String,
    pub center_index: usize,
    /// Source (min, max) mapped onto [-1, 1].
    pub intensity_range: (f32, f32),
    pub crop: CropGeometry,
}

impl ImageSlab {
    pub fn rows(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn cols(&self) -> usize {
        self.pixels.dim().1
    }

    /// Map normalized values back to source intensity units.
    pub fn denormalize_value(&self, v: f32) -> f32 {
        let (lo, hi) = self.intensity_range;
        if hi > lo {
            (lo as f64 + (v as f64 + 1.0) * 0.5 * (hi as f64 - lo as f64)) as f32
        } else {
            lo
        }
    }

    /// Same metadata, new pixels (must share the shape).
    pub fn with_pixels(&self, pixels: Array3<f32>) -> Result<Self> {
        if pixels.dim() != self.pixels.dim() {
            return Err(Error::Shape(format!(
                "slab pixels {:?} differ from {:?}",
                pixels.dim(),
                self.pixels.dim()
            )));
        }
        Ok(Self {
            pixels,
            ..self.clone()
        })
    }
}

/// Source slice index for channel `channel` of the slab centred on `center`,
/// with edge replication.
pub fn channel_source(center: usize, channel: usize, slices: usize) -> usize {
    (center + channel).saturating_sub(1).min(slices - 1)
}

/// One slab per slice: a stride-1 window of three slices, replicated at
/// the volume edges.
pub fn extract_slabs(v: &Volume) -> Result<Vec<RawSlab>> {
    let (slices, rows, cols) = v.dims();
    if slices < SLAB_CHANNELS {
        return Err(Error::Shape(format!(
            "volume `{}` has {slices} slices, need at least {SLAB_CHANNELS}",
            v.id
        )));
    }
    let voxels = v.voxels();
    Ok((0..slices)
        .map(|center| {
            let mut pixels = Array3::<f32>::zeros((rows, cols, SLAB_CHANNELS));
            for ch in 0..SLAB_CHANNELS {
                let src = channel_source(center, ch, slices);
                pixels
                    .index_axis_mut(Axis(2), ch)
                    .assign(&voxels.index_axis(Axis(0), src));
            }
            RawSlab {
                pixels,
                source_id: v.id.clone(),
                center_index: center,
            }
        })
        .collect())
}

/// Min-max map of the slab onto [-1, 1]; constant slabs become zeros.
pub fn normalize(raw: &RawSlab) -> Result<ImageSlab> {
    if raw.pixels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "slab {}#{}",
            raw.source_id, raw.center_index
        )));
    }
    let (lo, hi) = raw
        .pixels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (rows, cols, _) = raw.pixels.dim();
    let pixels = if hi > lo {
        let (lo64, span) = (lo as f64, hi as f64 - lo as f64);
        raw.pixels
            .mapv(|v| (-1.0 + 2.0 * ((v as f64 - lo64) / span)).clamp(-1.0, 1.0) as f32)
    } else {
        Array3::zeros(raw.pixels.dim())
    };
    Ok(ImageSlab {
        pixels,
        source_id: raw.source_id.clone(),
        center_index: raw.center_index,
        intensity_range: (lo, hi),
        crop: CropGeometry::identity(rows, cols),
    })
}

/// Centre crop to `target_rows x target_cols`, padding symmetrically with
/// background (-1) when the slab is smaller. Odd differences round the
/// window offset toward the origin.
pub fn center_crop(slab: &ImageSlab, target_rows: usize, target_cols: usize) -> ImageSlab {
    let (rows, cols, ch) = slab.pixels.dim();
    let offset = |src: usize, target: usize| -> isize {
        if src >= target {
            ((src - target) / 2) as isize
        } else {
            -(((target - src) / 2) as isize)
        }
    };
    let row_offset = offset(rows, target_rows);
    let col_offset = offset(cols, target_cols);
    let mut pixels = Array3::from_elem((target_rows, target_cols, ch), PAD_VALUE);
    // Overlap of the target window with the source grid.
    let r0 = row_offset.max(0) as usize;
    let c0 = col_offset.max(0) as usize;
    let dr0 = (-row_offset).max(0) as usize;
    let dc0 = (-col_offset).max(0) as usize;
    let h = (rows - r0).min(target_rows - dr0);
    let w = (cols - c0).min(target_cols - dc0);
    pixels
        .slice_mut(s![dr0..dr0 + h, dc0..dc0 + w, ..])
        .assign(&slab.pixels.slice(s![r0..r0 + h, c0..c0 + w, ..]));
    // Compose with any earlier crop.
    let crop = CropGeometry {
        source_rows: slab.crop.source_rows,
        source_cols: slab.crop.source_cols,
        row_offset: slab.crop.row_offset + row_offset,
        col_offset: slab.crop.col_offset + col_offset,
    };
    ImageSlab {
        pixels,
        source_id: slab.source_id.clone(),
        center_index: slab.center_index,
        intensity_range: slab.intensity_range,
        crop,
    }
}

/// Slab preparation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlabPipeline {
    pub rows: usize,
    pub cols: usize,
}

impl Default for SlabPipeline {
    fn default() -> Self {
        Self {
            rows: CROP_ROWS,
            cols: CROP_COLS,
        }
    }
}

impl SlabPipeline {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// extract -> normalize -> crop
    pub fn prepare(&self, v: &Volume) -> Result<Vec<ImageSlab>> {
        extract_slabs(v)?
            .iter()
            .map(|raw| normalize(raw).map(|s| center_crop(&s, self.rows, self.cols)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::volume::{Domain, Modality, Severity};
    use ndarray::Array3;
    use proptest::prelude::*;

    fn volume(slices: usize, rows: usize, cols: usize) -> Volume {
        let voxels = Array3::from_shape_fn((slices, rows, cols), |(s, r, c)| (s * 100 + r * 3 + c) as f32);
        Volume::new("v", voxels, [1.0; 3], Modality::T1, Domain::Free, Severity::None).unwrap()
    }

    fn raw(pixels: Array3<f32>) -> RawSlab {
        RawSlab {
            pixels,
            source_id: "x".into(),
            center_index: 0,
        }
    }

    #[test]
    fn one_slab_per_slice() {
        let v = volume(81, 4, 5);
        assert_eq!(extract_slabs(&v).unwrap().len(), 81);
        assert!(extract_slabs(&volume(2, 4, 5)).is_err());
    }

    #[test]
    fn edge_replication_and_order() {
        let v = volume(5, 2, 2);
        let slabs = extract_slabs(&v).unwrap();
        let src = |slab: &RawSlab, ch: usize| (slab.pixels[[0, 0, ch]] / 100.0) as usize;
        assert_eq!((src(&slabs[0], 0), src(&slabs[0], 1), src(&slabs[0], 2)), (0, 0, 1));
        assert_eq!((src(&slabs[4], 0), src(&slabs[4], 1), src(&slabs[4], 2)), (3, 4, 4));
        for i in 1..3 {
            assert_eq!(
                slabs[i].pixels.index_axis(Axis(2), 1),
                slabs[i + 1].pixels.index_axis(Axis(2), 0)
            );
        }
    }

    #[test]
    fn normalize_examples() {
        let mut p = Array3::<f32>::zeros((2, 2, 3));
        p[[0, 0, 0]] = 100.0;
        p[[1, 1, 2]] = 50.0;
        let n = normalize(&raw(p)).unwrap();
        assert_eq!(n.pixels[[1, 1, 2]], 0.0);
        assert_eq!(n.pixels[[0, 0, 0]], 1.0);
        assert_eq!(n.intensity_range, (0.0, 100.0));

        let flat = normalize(&raw(Array3::from_elem((3, 3, 3), 7.0))).unwrap();
        assert!(flat.pixels.iter().all(|&v| v == 0.0));

        let mut span = Array3::<f32>::from_elem((2, 2, 3), 0.25);
        span[[0, 0, 0]] = -1.0;
        span[[1, 1, 1]] = 1.0;
        assert_eq!(normalize(&raw(span.clone())).unwrap().pixels, span);
    }

    #[test]
    fn nan_slab_rejected() {
        let mut p = Array3::<f32>::zeros((2, 2, 3));
        p[[0, 1, 2]] = f32::INFINITY;
        assert!(normalize(&raw(p)).is_err());
    }

    #[test]
    fn crop_examples() {
        let base = normalize(&raw(Array3::from_shape_fn((256, 256, 3), |(r, _, _)| r as f32))).unwrap();
        let c = center_crop(&base, 208, 256);
        assert_eq!(c.pixels.dim(), (208, 256, 3));
        assert_eq!(c.crop.row_offset, 24);
        assert_eq!(c.pixels[[0, 0, 0]], base.pixels[[24, 0, 0]]);
        assert_eq!(c.pixels[[207, 0, 0]], base.pixels[[231, 0, 0]]);

        let exact = normalize(&raw(Array3::from_shape_fn((208, 256, 3), |(r, c, _)| (r + c) as f32))).unwrap();
        assert_eq!(center_crop(&exact, 208, 256).pixels, exact.pixels);

        let small = normalize(&raw(Array3::from_elem((200, 240, 3), 3.0))).unwrap();
        let padded = center_crop(&small, 208, 256);
        assert_eq!(padded.pixels.dim(), (208, 256, 3));
        assert_eq!((padded.crop.row_offset, padded.crop.col_offset), (-4, -8));
        assert_eq!(padded.pixels[[0, 0, 0]], -1.0);
        assert_eq!(padded.pixels[[4, 8, 0]], 0.0);
        assert_eq!(padded.pixels[[203, 247, 2]], 0.0);
        assert_eq!(padded.pixels[[204, 248, 2]], -1.0);
    }

    #[test]
    fn odd_difference_rounds_toward_origin() {
        let s = normalize(&raw(Array3::from_shape_fn((11, 6, 3), |(r, _, _)| r as f32))).unwrap();
        assert_eq!(center_crop(&s, 8, 6).crop.row_offset, 1);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(values in prop::collection::vec(-1e4f32..1e4, 12)) {
            let r = raw(Array3::from_shape_vec((2, 2, 3), values).unwrap());
            let once = normalize(&r).unwrap();
            let twice = normalize(&raw(once.pixels.clone())).unwrap();
            for (a, b) in once.pixels.iter().zip(twice.pixels.iter()) {
                prop_assert!((*a as f64 - *b as f64).abs() <= 1e-12);
            }
        }

        #[test]
        fn prepared_slabs_fit_contract(slices in 3usize..6, rows in 4usize..40, cols in 4usize..40, seed in 0u32..1000) {
            let voxels = Array3::from_shape_fn((slices, rows, cols), |(s, r, c)| {
                ((s * 31 + r * 17 + c * 7 + seed as usize) % 97) as f32 * 1.5 - 20.0
            });
            let v = Volume::new("p", voxels, [1.0; 3], Modality::T2, Domain::Free, Severity::None).unwrap();
            let slabs = SlabPipeline::new(24, 32).prepare(&v).unwrap();
            prop_assert_eq!(slabs.len(), slices);
            for s in &slabs {
                prop_assert_eq!(s.pixels.dim(), (24, 32, 3));
                prop_assert!(s.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
