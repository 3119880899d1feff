//! Phantom corpora for the training experiments.

use duncan::data::{Domain, ImageSlab, Severity, SlabPipeline, Volume};
use duncan::motion::{SeverityProfile, corrupt_volume};
use duncan::phantom::{PhantomSpec, generate_phantom};

/// A clean phantom and its motion-corrupted copy.
pub struct PairedVolume {
    pub clean: Volume,
    pub corrupted: Volume,
}

pub fn paired_volume(seed: u64, slices: usize, size: usize, level: Severity) -> PairedVolume {
    let clean = generate_phantom(&PhantomSpec::new(slices, size, size, seed)).unwrap();
    let profile = SeverityProfile::preset(level).unwrap().with_seed(seed ^ 0x5eed);
    let (corrupted, _) = corrupt_volume(&clean, &profile).unwrap();
    PairedVolume { clean, corrupted }
}

/// Prepared slabs of `v` at `size x size`, skipping the edge slices.
pub fn interior_slabs(v: &Volume, size: usize) -> Vec<ImageSlab> {
    let slabs = SlabPipeline::new(size, size).prepare(v).unwrap();
    let n = slabs.len();
    slabs.into_iter().skip(1).take(n.saturating_sub(2)).collect()
}

/// `count` clean slabs from phantoms seeded from `seed_base` and `count`
/// corrupted slabs from disjoint phantoms.
pub fn unpaired_slabs(count: usize, per_volume: usize, size: usize, level: Severity, seed_base: u64) -> (Vec<ImageSlab>, Vec<ImageSlab>) {
    let volumes = count.div_ceil(per_volume);
    let mut free = Vec::new();
    let mut corrupted = Vec::new();
    for v in 0..volumes as u64 {
        let a = paired_volume(seed_base + 2 * v, per_volume + 2, size, level);
        let b = paired_volume(seed_base + 2 * v + 1, per_volume + 2, size, level);
        assert_eq!(a.clean.domain(), Domain::Free);
        free.extend(interior_slabs(&a.clean, size));
        corrupted.extend(interior_slabs(&b.corrupted, size));
    }
    free.truncate(count);
    corrupted.truncate(count);
    (corrupted, free)
}
