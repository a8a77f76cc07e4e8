//! Labeled sample index with provenance and fold assignments.
//!
//! On disk a manifest is a CSV file with the header
//! `id,path,label,parent_id,aug_type,fold`, plus a trailing `aug_param`
//! column when any entry records a drawn augmentation parameter. Relative
//! paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 4;

/// Vehicle classes, in the class-index order used by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Car,
    Truck,
    Motorcycle,
    NoVehicle,
}

impl Label {
    pub const ALL: [Label; N_CLASSES] = [Label::Car, Label::Truck, Label::Motorcycle, Label::NoVehicle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Car => "car",
            Label::Truck => "truck",
            Label::Motorcycle => "motorcycle",
            Label::NoVehicle => "no_vehicle",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown label `{s}` (expected car|truck|motorcycle|no_vehicle)")))
    }
}

/// How an entry was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugType {
    None,
    Gain,
    Noise,
    Stretch,
}

impl AugType {
    pub const AUGMENTATIONS: [AugType; 3] = [AugType::Gain, AugType::Noise, AugType::Stretch];

    pub fn as_str(self) -> &'static str {
        match self {
            AugType::None => "none",
            AugType::Gain => "gain",
            AugType::Noise => "noise",
            AugType::Stretch => "stretch",
        }
    }
}

impl fmt::Display for AugType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "" => Ok(AugType::None),
            "gain" => Ok(AugType::Gain),
            "noise" => Ok(AugType::Noise),
            "stretch" => Ok(AugType::Stretch),
            other => Err(Error::Manifest(format!("unknown aug_type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// As loaded: manifest-relative paths are already joined to the
    /// manifest directory.
    pub path: PathBuf,
    pub label: Label,
    /// `None` for original recordings.
    pub parent_id: Option<String>,
    pub aug_type: AugType,
    pub fold: Option<usize>,
    /// The drawn gain, noise rate or stretch factor.
    pub aug_param: Option<f64>,
}

impl ManifestEntry {
    pub fn original(id: impl Into<String>, path: impl Into<PathBuf>, label: Label) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            label,
            parent_id: None,
            aug_type: AugType::None,
            fold: None,
            aug_param: None,
        }
    }

    pub fn is_original(&self) -> bool {
        self.aug_type == AugType::None
    }

    /// The id shared by an original and all of its augmented children.
    pub fn group_id(&self) -> &str {
        self.parent_id.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    path: String,
    label: String,
    parent_id: String,
    aug_type: String,
    fold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aug_param: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter()
    }

    /// Unique ids; every parent exists and is an original.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() {
                return Err(Error::Manifest("empty id".into()));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id `{}`", e.id)));
            }
        }
        let originals: HashSet<&str> = self.entries.iter().filter(|e| e.is_original()).map(|e| e.id.as_str()).collect();
        for e in &self.entries {
            match (&e.parent_id, e.is_original()) {
                (Some(_), true) => {
                    return Err(Error::Manifest(format!("original `{}` has a parent_id", e.id)));
                }
                (None, false) => {
                    return Err(Error::Manifest(format!("augmented entry `{}` has no parent_id", e.id)));
                }
                (Some(p), false) if !originals.contains(p.as_str()) => {
                    return Err(Error::Manifest(format!("entry `{}` names unknown parent `{p}`", e.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Reads a manifest CSV.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let expected = ["id", "path", "label", "parent_id", "aug_type", "fold"];
        if headers.len() < expected.len() || expected.iter().zip(headers.iter()).any(|(a, b)| *a != b) {
            return Err(Error::Manifest(format!(
                "{}: header must start with {}",
                path.display(),
                expected.join(",")
            )));
        }
        let mut entries = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| csv_error(path, e))?;
            let p = PathBuf::from(&row.path);
            entries.push(ManifestEntry {
                path: if p.is_absolute() { p } else { base.join(p) },
                label: row.label.parse()?,
                parent_id: (!row.parent_id.is_empty()).then_some(row.parent_id),
                aug_type: row.aug_type.parse()?,
                fold: row.fold,
                aug_param: row.aug_param,
                id: row.id,
            });
        }
        Self::new(entries)
    }

    /// Writes the manifest; paths under the manifest's directory are stored
    /// relative to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base_abs = absolute(&base);
        let with_param = self.entries.iter().any(|e| e.aug_param.is_some());
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["id", "path", "label", "parent_id", "aug_type", "fold"];
        if with_param {
            header.push("aug_param");
        }
        writer.write_record(&header).map_err(|e| csv_error(path, e))?;
        for e in &self.entries {
            let abs = absolute(&e.path);
            let stored = abs.strip_prefix(&base_abs).map(Path::to_path_buf).unwrap_or(abs);
            let mut record = vec![
                e.id.clone(),
                stored.to_string_lossy().into_owned(),
                e.label.to_string(),
                e.parent_id.clone().unwrap_or_default(),
                e.aug_type.to_string(),
                e.fold.map(|f| f.to_string()).unwrap_or_default(),
            ];
            if with_param {
                record.push(e.aug_param.map(|p| p.to_string()).unwrap_or_default());
            }
            writer.write_record(&record).map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// Entries assigned to `fold`.
    pub fn fold_entries(&self, fold: usize) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.fold == Some(fold))
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for e in &self.entries {
            counts[e.label.index()] += 1;
        }
        counts
    }
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Manifest(format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn child(id: &str, parent: &str, aug: AugType) -> ManifestEntry {
        ManifestEntry {
            parent_id: Some(parent.into()),
            aug_type: aug,
            aug_param: Some(1.25),
            ..ManifestEntry::original(id, format!("{id}.wav"), Label::Truck)
        }
    }

    #[test]
    fn label_strings() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
            assert_eq!(Label::from_index(l.index()), Some(l));
        }
        assert!("bus".parse::<Label>().is_err());
    }

    #[test]
    fn rejects_duplicate_ids_and_orphans() {
        let a = ManifestEntry::original("a", "a.wav", Label::Car);
        assert!(DatasetManifest::new(vec![a.clone(), a.clone()]).is_err());
        assert!(DatasetManifest::new(vec![a.clone(), child("b", "zzz", AugType::Gain)]).is_err());
        assert!(DatasetManifest::new(vec![a, child("b", "a", AugType::Gain)]).is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ManifestEntry::original("a", dir.path().join("audio/a.wav"), Label::Truck);
        a.fold = Some(2);
        let m = DatasetManifest::new(vec![a, child("a__gain", "a", AugType::Gain)]).unwrap();
        let mut m = m;
        m.entries[1].path = dir.path().join("a__gain.wav");
        let path = dir.path().join("manifest.csv");
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,path,label,parent_id,aug_type,fold,aug_param\n"));
        assert!(text.contains("a,audio/a.wav,truck,,none,2,\n"));
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn six_column_header_when_no_params() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(vec![ManifestEntry::original("x", dir.path().join("x.wav"), Label::NoVehicle)]).unwrap();
        let path = dir.path().join("m.csv");
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "id,path,label,parent_id,aug_type,fold\nx,x.wav,no_vehicle,,none,\n");
    }

    #[test]
    fn bad_header_or_label_is_a_manifest_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "id,file,label\n").unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Manifest(_))));
        std::fs::write(&path, "id,path,label,parent_id,aug_type,fold\nx,x.wav,bus,,none,\n").unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Manifest(_))));
    }
}
