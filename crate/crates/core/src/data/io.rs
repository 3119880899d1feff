//! Volume files: NIfTI-1 (`.nii`, `.nii.gz`) and a raw float32 raster with
//! a one-line JSON header (`.rvol`).
//!
//! NIfTI has no slot for the dataset tags, so modality/domain/severity are
//! kept as `key=value` words in the header's `descrip` field. Files without
//! them load as T1, artifact-free.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::{Array3, Axis, Ix3};
use serde::{Deserialize, Serialize};

use super::volume::{Domain, Modality, Severity, Volume};
use crate::error::{Error, Result};

pub const RAW_EXTENSION: &str = "rvol";
const RAW_MAGIC: &str = "duncan-raw-volume";
const RAW_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti,
    NiftiGz,
    Raw,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        if name.ends_with(".nii.gz") {
            Ok(Self::NiftiGz)
        } else if name.ends_with(".nii") {
            Ok(Self::Nifti)
        } else if name.ends_with(&format!(".{RAW_EXTENSION}")) {
            Ok(Self::Raw)
        } else {
            Err(Error::format(path, "expected .nii, .nii.gz or .rvol"))
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Nifti => "nii",
            Self::NiftiGz => "nii.gz",
            Self::Raw => RAW_EXTENSION,
        }
    }
}

/// File name without the volume extension.
pub fn volume_stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".rvol"] {
        if name.len() > ext.len() && name.to_ascii_lowercase().ends_with(ext) {
            return name[..name.len() - ext.len()].to_string();
        }
    }
    name.to_string()
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "volume file not found"),
        ));
    }
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Raw => read_raw(path),
        VolumeFormat::Nifti | VolumeFormat::NiftiGz => read_nifti(path),
    }
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Raw => write_raw(v, path),
        VolumeFormat::Nifti | VolumeFormat::NiftiGz => write_nifti(v, path),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    format: String,
    version: u32,
    /// slices, rows, cols
    dims: [usize; 3],
    spacing: [f32; 3],
    modality: Modality,
    domain: Domain,
    severity: Severity,
    id: String,
}

fn write_raw(v: &Volume, path: &Path) -> Result<()> {
    let (s, r, c) = v.dims();
    let header = RawHeader {
        format: RAW_MAGIC.into(),
        version: RAW_VERSION,
        dims: [s, r, c],
        spacing: v.spacing,
        modality: v.modality,
        domain: v.domain(),
        severity: v.severity(),
        id: v.id.clone(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(s * r * c * 4);
    for x in v.voxels().iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    crate::io_util::write_atomic(path, &bytes)
}

fn read_raw(path: &Path) -> Result<Volume> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: RawHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format != RAW_MAGIC || header.version != RAW_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported raw volume {} v{}", header.format, header.version),
        ));
    }
    let [s, r, c] = header.dims;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != s * r * c * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", s * r * c * 4, payload.len()),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let voxels = Array3::from_shape_vec((s, r, c), data).map_err(|e| Error::format(path, e.to_string()))?;
    Volume::new(header.id, voxels, header.spacing, header.modality, header.domain, header.severity)
        .map_err(|e| annotate(e, path))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::NonFinite(_) => Error::NonFinite(path.display().to_string()),
        other => other,
    }
}

fn descrip_tags(v: &Volume) -> String {
    format!(
        "duncan modality={} domain={} severity={}",
        v.modality,
        v.domain(),
        v.severity()
    )
}

fn parse_descrip(text: &str) -> (Modality, Domain, Severity) {
    let mut tags = (Modality::T1, Domain::Free, Severity::None);
    for word in text.split_whitespace() {
        if let Some((k, val)) = word.split_once('=') {
            match k {
                "modality" => tags.0 = val.parse().unwrap_or(tags.0),
                "domain" => tags.1 = val.parse().unwrap_or(tags.1),
                "severity" => tags.2 = val.parse().unwrap_or(tags.2),
                _ => {}
            }
        }
    }
    if (tags.1 == Domain::Free) != (tags.2 == Severity::None) {
        tags.1 = Domain::Free;
        tags.2 = Severity::None;
    }
    tags
}

fn read_nifti(path: &Path) -> Result<Volume> {
    use nifti::{IntoNdArray, NiftiObject, ReaderOptions};
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let header = obj.header().clone();
    let arr = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let shape = arr.shape().to_vec();
    let mut arr = match shape.as_slice() {
        [_, _] => arr.insert_axis(Axis(2)),
        [_, _, _] => arr,
        [_, _, _, rest @ ..] if rest.iter().all(|&d| d == 1) => arr,
        _ => return Err(Error::format(path, format!("expected a 3D volume, got dims {shape:?}"))),
    };
    while arr.ndim() > 3 {
        arr = arr.index_axis_move(Axis(3), 0);
    }
    let arr = arr
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::format(path, format!("cannot reshape voxel grid: {e}")))?;
    // (x, y, z) -> (slice, row, col) = (z, y, x)
    let voxels = arr.permuted_axes([2, 1, 0]).as_standard_layout().into_owned();
    let pixdim = header.pixdim;
    let spacing = [pixdim[3].abs(), pixdim[2].abs(), pixdim[1].abs()].map(|p| if p > 0.0 { p } else { 1.0 });
    let descrip = String::from_utf8_lossy(&header.descrip)
        .trim_end_matches('\0')
        .to_string();
    let (modality, domain, severity) = parse_descrip(&descrip);
    Volume::new(volume_stem(path), voxels, spacing, modality, domain, severity).map_err(|e| annotate(e, path))
}

fn write_nifti(v: &Volume, path: &Path) -> Result<()> {
    use nifti::NiftiHeader;
    use nifti::writer::WriterOptions;
    let mut header = NiftiHeader::default();
    header.pixdim = [1.0, v.spacing[2], v.spacing[1], v.spacing[0], 1.0, 1.0, 1.0, 1.0];
    let mut descrip = descrip_tags(v).into_bytes();
    descrip.truncate(79);
    header.descrip = descrip;
    // (slice, row, col) -> (x, y, z)
    let xyz = v.voxels().view().permuted_axes([2, 1, 0]);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    WriterOptions::new(path)
        .reference_header(&header)
        .write_nifti(&xyz)
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(domain: Domain, severity: Severity) -> Volume {
        let voxels = Array3::from_shape_fn((5, 6, 7), |(s, r, c)| (s as f32) * 1.5 - (r * c) as f32 * 0.25 + 0.125);
        Volume::new("phantom_a", voxels, [2.0, 0.9, 1.1], Modality::T2, domain, severity).unwrap()
    }

    #[test]
    fn raw_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("phantom_a.rvol");
        let v = sample(Domain::Corrupted, Severity::Moderate);
        write_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn nifti_round_trip_keeps_geometry_and_tags() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["phantom_a.nii", "phantom_a.nii.gz"] {
            let p = dir.path().join(name);
            let v = sample(Domain::Corrupted, Severity::Heavy);
            write_volume(&v, &p).unwrap();
            let back = load_volume(&p).unwrap();
            assert_eq!(back.voxels(), v.voxels());
            assert_eq!(back.spacing, v.spacing);
            assert_eq!((back.modality, back.domain(), back.severity()), (Modality::T2, Domain::Corrupted, Severity::Heavy));
            assert_eq!(back.id, "phantom_a");
        }
    }

    #[test]
    fn raw_with_nan_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.rvol");
        let v = sample(Domain::Free, Severity::None);
        write_volume(&v, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        let err = load_volume(&p).unwrap_err();
        assert!(err.to_string().contains("non-finite intensities"), "{err}");
    }

    #[test]
    fn missing_and_unsupported_files() {
        assert!(load_volume(Path::new("/nonexistent/x.nii")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"nope").unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Format { .. })));
    }
}
