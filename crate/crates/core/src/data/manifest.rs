use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::{Domain, Modality, Severity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest root unless absolute.
    pub path: PathBuf,
    pub domain: Domain,
    pub severity: Severity,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
}

/// Dataset listing, stored as TOML:
///
/// ```toml
/// root = "."
///
/// [[volume]]
/// path = "free/phantom_000.nii.gz"
/// domain = "free"
/// severity = "none"
/// split = "train"
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Base directory; relative roots are resolved against the manifest file.
    #[serde(default)]
    pub root: PathBuf,
    #[serde(default, rename = "volume")]
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entries: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    /// Parse, resolve the root against the file's directory and check that
    /// every referenced volume exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            m.root = base.join(&m.root);
        }
        for e in &m.entries {
            check_labels(e)?;
            let p = m.resolve(&e.path);
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry does not exist"),
                ));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io_util::write_atomic(path, self.to_toml_string()?.as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.root.join(p) }
    }

    pub fn entries_for(&self, split: Split, domain: Domain) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.split == split && e.domain == domain)
    }

    /// Training needs at least one volume of each domain in the train split.
    pub fn check_trainable(&self) -> Result<()> {
        let present: BTreeSet<Domain> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.domain)
            .collect();
        for d in [Domain::Corrupted, Domain::Free] {
            if !present.contains(&d) {
                return Err(Error::Config(format!(
                    "train split has no `{d}` volumes"
                )));
            }
        }
        Ok(())
    }
}

fn check_labels(e: &ManifestEntry) -> Result<()> {
    let ok = matches!(
        (e.domain, e.severity),
        (Domain::Free, Severity::None) | (Domain::Corrupted, Severity::Minor | Severity::Moderate | Severity::Heavy)
    );
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{}: severity `{}` is inconsistent with domain `{}`",
            e.path.display(),
            e.severity,
            e.domain
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let m = DatasetManifest::from_toml_str(
            "root = \"data\"\n[[volume]]\npath = \"a.nii\"\ndomain = \"free\"\nseverity = \"none\"\nsplit = \"train\"\n",
        )
        .unwrap();
        assert_eq!(m.entries.len(), 1);
        assert!(m.check_trainable().is_err());
        let bad = DatasetManifest::from_toml_str(
            "[[volume]]\npath = \"a.nii\"\ndomian = \"free\"\nseverity = \"none\"\nsplit = \"train\"\n",
        );
        assert!(bad.is_err());
    }

    #[test]
    fn load_checks_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.toml");
        std::fs::write(
            &mpath,
            "[[volume]]\npath = \"missing.vol\"\ndomain = \"free\"\nseverity = \"none\"\nsplit = \"test\"\n",
        )
        .unwrap();
        assert!(DatasetManifest::load(&mpath).is_err());
        std::fs::write(dir.path().join("missing.vol"), b"").unwrap();
        let m = DatasetManifest::load(&mpath).unwrap();
        assert!(m.resolve(&m.entries[0].path).exists());
    }
}
