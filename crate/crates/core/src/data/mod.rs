//! Volumes, slab preparation, manifests and unpaired sampling.

mod io;
mod manifest;
mod sampler;
mod slab;
mod volume;

pub use io::{RAW_EXTENSION, VolumeFormat, load_volume, volume_stem, write_volume};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use sampler::UnpairedSampler;
pub use slab::{
    CROP_COLS, CROP_ROWS, CropGeometry, ImageSlab, PAD_VALUE, RawSlab, SLAB_CHANNELS, SlabPipeline, center_crop,
    channel_source, extract_slabs, normalize,
};
pub use volume::{Domain, Modality, Severity, Volume};
pub(crate) use volume::text_enum;
