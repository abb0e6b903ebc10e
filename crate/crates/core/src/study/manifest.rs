//! Cohort manifest: one JSON document listing each patient's volumes.
//!
//! Relative paths are resolved against the manifest's directory. The schema
//! ships as `docs/manifest.schema.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ct_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
    /// Model name → predicted label volume.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pred_paths: BTreeMap<String, PathBuf>,
    /// Observer name → that observer's label volume.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub observer_paths: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub patients: Vec<PatientEntry>,
}

impl StudyManifest {
    /// Checks ids and resolves every path against `base`; each referenced
    /// file must exist.
    pub fn resolve(mut self, base: &Path) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &mut self.patients {
            if p.id.trim().is_empty() {
                return Err(Error::Manifest("patient with empty id".into()));
            }
            if !seen.insert(p.id.clone()) {
                return Err(Error::Manifest(format!("duplicate patient id {:?}", p.id)));
            }
            let id = p.id.clone();
            let fix = |path: &mut PathBuf, what: &str| -> Result<()> {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
                if !path.is_file() {
                    return Err(Error::Manifest(format!(
                        "patient {id}: {what} file {} not found",
                        path.display()
                    )));
                }
                Ok(())
            };
            if let Some(path) = p.ct_path.as_mut() {
                fix(path, "ct")?;
            }
            if let Some(path) = p.gt_path.as_mut() {
                fix(path, "ground-truth")?;
            }
            for (model, path) in p.pred_paths.iter_mut() {
                fix(path, &format!("prediction ({model})"))?;
            }
            for (obs, path) in p.observer_paths.iter_mut() {
                fix(path, &format!("observer ({obs})"))?;
            }
        }
        Ok(self)
    }

    pub fn patient(&self, id: &str) -> Option<&PatientEntry> {
        self.patients.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.id.clone()).collect()
    }
}

/// Reads, validates and resolves a manifest file.
pub fn load_manifest(path: &Path) -> Result<StudyManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: StudyManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest.resolve(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_relative_paths_and_rejects_problems() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("gt.nii.gz"), b"x").unwrap();
        std::fs::write(dir.path().join("pred.nii.gz"), b"x").unwrap();
        let good = r#"{"dataset":"demo","patients":[
            {"id":"a","gt_path":"gt.nii.gz","pred_paths":{"net":"pred.nii.gz"}}]}"#;
        let path = dir.path().join("m.json");
        std::fs::write(&path, good).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.patients[0].gt_path.as_deref(), Some(dir.path().join("gt.nii.gz").as_path()));
        assert_eq!(m.dataset.as_deref(), Some("demo"));

        let dup = r#"{"patients":[{"id":"a"},{"id":"a"}]}"#;
        std::fs::write(&path, dup).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(_))));

        let missing = r#"{"patients":[{"id":"a","gt_path":"nope.nii"}]}"#;
        std::fs::write(&path, missing).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(_))));

        let unknown = r#"{"patients":[{"id":"a","gt":"gt.nii.gz"}]}"#;
        std::fs::write(&path, unknown).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(_))));

        assert!(load_manifest(&dir.path().join("absent.json")).unwrap_err().is_io());
    }
}
