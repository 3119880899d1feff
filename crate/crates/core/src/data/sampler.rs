use rand::Rng;

use super::io::load_volume;
use super::manifest::{DatasetManifest, Split};
use super::slab::{ImageSlab, SlabPipeline};
use super::volume::Domain;
use crate::error::{Error, Result};

/// Prepared slabs of both domains for unpaired draws.
#[derive(Debug, Clone, Default)]
pub struct UnpairedSampler {
    corrupted: Vec<ImageSlab>,
    free: Vec<ImageSlab>,
}

impl UnpairedSampler {
    pub fn new(corrupted: Vec<ImageSlab>, free: Vec<ImageSlab>) -> Result<Self> {
        if corrupted.is_empty() || free.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "unpaired sampling needs slabs in both domains (corrupted: {}, free: {})",
                corrupted.len(),
                free.len()
            )));
        }
        Ok(Self { corrupted, free })
    }

    /// Load and prepare every volume of `split`, grouped by domain.
    pub fn from_manifest(manifest: &DatasetManifest, pipeline: &SlabPipeline, split: Split) -> Result<Self> {
        let mut corrupted = Vec::new();
        let mut free = Vec::new();
        for entry in manifest.entries.iter().filter(|e| e.split == split) {
            let volume = load_volume(&manifest.resolve(&entry.path))?;
            let slabs = pipeline.prepare(&volume)?;
            match entry.domain {
                Domain::Corrupted => corrupted.extend(slabs),
                Domain::Free => free.extend(slabs),
            }
        }
        Self::new(corrupted, free)
    }

    pub fn corrupted(&self) -> &[ImageSlab] {
        &self.corrupted
    }

    pub fn free(&self) -> &[ImageSlab] {
        &self.free
    }

    /// Independent uniform draws (corrupted first, then free).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (&ImageSlab, &ImageSlab) {
        let c = rng.random_range(0..self.corrupted.len());
        let f = rng.random_range(0..self.free.len());
        (&self.corrupted[c], &self.free[f])
    }
}
