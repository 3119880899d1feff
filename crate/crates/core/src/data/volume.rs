
use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    T1,
    T2,
}

/// Which of the two unpaired image populations a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Corrupted,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    None,
    Minor,
    Moderate,
    Heavy,
}

impl Severity {
    pub const ARTIFACT_LEVELS: [Severity; 3] = [Severity::Minor, Severity::Moderate, Severity::Heavy];

    /// Short tag used in dataset directory names (`IS_T1_MIN`, ...).
    pub fn short_tag(self) -> &'static str {
        match self {
            Severity::None => "NONE",
            Severity::Minor => "MIN",
            Severity::Moderate => "MOD",
            Severity::Heavy => "HVY",
        }
    }
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }
        impl std::str::FromStr for $ty {
            type Err = $crate::error::Error;
            fn from_str(s: &str) -> $crate::error::Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $(t if t == $text.to_ascii_lowercase() => Ok($variant),)+
                    other => Err($crate::error::Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}
pub(crate) use text_enum;

text_enum!(Modality { Modality::T1 => "T1", Modality::T2 => "T2" });
text_enum!(Domain { Domain::Corrupted => "corrupted", Domain::Free => "free" });
text_enum!(Severity {
    Severity::None => "none",
    Severity::Minor => "minor",
    Severity::Moderate => "moderate",
    Severity::Heavy => "heavy",
});

/// A scalar 3D image stored as slices x rows x cols.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    voxels: Array3<f32>,
    /// Physical voxel size in mm, in (slice, row, col) order.
    pub spacing: [f32; 3],
    pub modality: Modality,
    domain: Domain,
    severity: Severity,
    pub id: String,
}

impl Volume {
    pub fn new(
        id: impl Into<String>,
        voxels: Array3<f32>,
        spacing: [f32; 3],
        modality: Modality,
        domain: Domain,
        severity: Severity,
    ) -> Result<Self> {
        let id = id.into();
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume `{id}`")));
        }
        check_labels(domain, severity)?;
        Ok(Self {
            voxels,
            spacing,
            modality,
            domain,
            severity,
            id,
        })
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn into_voxels(self) -> Array3<f32> {
        self.voxels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn severity(&self) -> Severity {
        self.severity
    }

    /// (slices, rows, cols)
    pub fn dims(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }

    pub fn slice(&self, index: usize) -> ArrayView2<'_, f32> {
        self.voxels.index_axis(Axis(0), index)
    }

    /// Re-tag the volume. The domain/severity pairing is validated.
    pub fn with_labels(mut self, domain: Domain, severity: Severity) -> Result<Self> {
        check_labels(domain, severity)?;
        self.domain = domain;
        self.severity = severity;
        Ok(self)
    }

    /// Same metadata, new voxels of identical shape.
    pub fn with_voxels(&self, voxels: Array3<f32>) -> Result<Self> {
        if voxels.dim() != self.voxels.dim() {
            return Err(Error::Shape(format!(
                "replacement voxels {:?} differ from {:?}",
                voxels.dim(),
                self.voxels.dim()
            )));
        }
        Volume::new(
            self.id.clone(),
            voxels,
            self.spacing,
            self.modality,
            self.domain,
            self.severity,
        )
    }

    /// Build from per-slice images.
    pub fn from_slices(template: &Volume, slices: &[Array2<f32>]) -> Result<Self> {
        let views: Vec<_> = slices.iter().map(|s| s.view()).collect();
        let stacked = ndarray::stack(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("cannot stack slices: {e}")))?;
        template.with_voxels(stacked)
    }
}

fn check_labels(domain: Domain, severity: Severity) -> Result<()> {
    match (domain, severity) {
        (Domain::Free, Severity::None) => Ok(()),
        (Domain::Corrupted, s) if s != Severity::None => Ok(()),
        (d, s) => Err(Error::InvalidArgument(format!(
            "severity `{s}` is inconsistent with domain `{d}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_tracks_domain() {
        let v = Array3::<f32>::zeros((3, 4, 4));
        assert!(Volume::new("a", v.clone(), [1.0; 3], Modality::T1, Domain::Free, Severity::None).is_ok());
        assert!(Volume::new("a", v.clone(), [1.0; 3], Modality::T1, Domain::Free, Severity::Minor).is_err());
        assert!(Volume::new("a", v, [1.0; 3], Modality::T1, Domain::Corrupted, Severity::None).is_err());
    }

    #[test]
    fn nan_is_rejected() {
        let mut v = Array3::<f32>::zeros((3, 4, 4));
        v[[1, 2, 3]] = f32::NAN;
        let err = Volume::new("bad", v, [1.0; 3], Modality::T2, Domain::Free, Severity::None).unwrap_err();
        assert!(err.to_string().contains("non-finite intensities"));
    }

    #[test]
    fn text_tags_round_trip() {
        for s in [Severity::None, Severity::Minor, Severity::Moderate, Severity::Heavy] {
            assert_eq!(s.to_string().parse::<Severity>().unwrap(), s);
        }
        assert_eq!("Corrupted".parse::<Domain>().unwrap(), Domain::Corrupted);
        assert!("t3".parse::<Modality>().is_err());
    }
}
