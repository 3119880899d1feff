use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kspace::{AcquisitionGeometry, corrupt_slice};
use super::trajectory::{MotionTrajectory, SeverityProfile, build_trajectory};
use crate::data::{
    DatasetManifest, Domain, ManifestEntry, Severity, Volume, VolumeFormat, load_volume, volume_stem, write_volume,
};
use crate::error::{Error, Result};

/// Stable per-slice seed from (master seed, volume id, slice index).
pub fn derive_seed(master: u64, volume_id: &str, slice: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((volume_id.len() as u64).to_le_bytes());
    h.update(volume_id.as_bytes());
    h.update((slice as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMotion {
    pub slice: usize,
    pub seed: u64,
    pub trajectory: MotionTrajectory,
}

/// Everything needed to regenerate one corrupted volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSidecar {
    pub volume_id: String,
    pub master_seed: u64,
    pub profile: SeverityProfile,
    pub slices: Vec<SliceMotion>,
}

/// Corrupt every slice of `v` with its own seeded trajectory.
pub fn corrupt_volume(v: &Volume, profile: &SeverityProfile) -> Result<(Volume, MotionSidecar)> {
    profile.validate()?;
    let (slices, rows, _) = v.dims();
    let geo = AcquisitionGeometry {
        row_spacing: v.spacing[1] as f64,
        col_spacing: v.spacing[2] as f64,
        through_plane_phase: profile.through_plane_phase,
    };
    let mut out = Vec::with_capacity(slices);
    let mut motions = Vec::with_capacity(slices);
    for s in 0..slices {
        let seed = derive_seed(profile.seed, &v.id, s);
        let trajectory = build_trajectory(rows, &profile.clone().with_seed(seed))?;
        let image = v.slice(s).mapv(|x| x as f64);
        let corrupted: Array2<f64> = corrupt_slice(image.view(), &trajectory, &geo)?;
        out.push(corrupted.mapv(|x| x as f32));
        motions.push(SliceMotion {
            slice: s,
            seed,
            trajectory,
        });
    }
    let volume = Volume::from_slices(v, &out)?.with_labels(Domain::Corrupted, profile.level)?;
    Ok((
        volume,
        MotionSidecar {
            volume_id: v.id.clone(),
            master_seed: profile.seed,
            profile: profile.clone(),
            slices: motions,
        },
    ))
}

pub fn sidecar_path(volume_path: &Path) -> PathBuf {
    volume_path.with_file_name(format!("{}.motion.json", volume_stem(volume_path)))
}

/// Corrupt every artifact-free volume of `input` into `out_dir`, writing a
/// motion sidecar beside each output and returning the output manifest
/// (rooted at `out_dir`).
pub fn generate_in_silico(
    input: &DatasetManifest,
    profile: &SeverityProfile,
    out_dir: &Path,
    format: Option<VolumeFormat>,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = DatasetManifest::new(out_dir);
    for entry in &input.entries {
        if entry.domain != Domain::Free {
            return Err(Error::InvalidArgument(format!(
                "{} is not artifact-free; only clean volumes can be corrupted",
                entry.path.display()
            )));
        }
        let src = input.resolve(&entry.path);
        let clean = load_volume(&src)?.with_labels(Domain::Free, Severity::None)?;
        let (corrupted, sidecar) = corrupt_volume(&clean, profile)?;
        let fmt = match format {
            Some(f) => f,
            None => VolumeFormat::from_path(&src)?,
        };
        let name = format!("{}.{}", volume_stem(&src), fmt.extension());
        let dst = out_dir.join(&name);
        write_volume(&corrupted, &dst)?;
        crate::io_util::write_atomic(&sidecar_path(&dst), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        manifest.entries.push(ManifestEntry {
            path: PathBuf::from(name),
            domain: Domain::Corrupted,
            severity: profile.level,
            split: entry.split,
            modality: Some(corrupted.modality),
        });
    }
    Ok(manifest)
}
