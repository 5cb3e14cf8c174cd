//! Template store: up to three features per (user, palm), persisted as one
//! JSON file replaced atomically on every change.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, Utc};
use palmverify_core::geometry::Hand;
use palmverify_core::matching::{FeatureVector, MatchError, FEATURE_DIM};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Features per palm needed before verification is allowed.
pub const TEMPLATES_PER_PALM: usize = 3;
const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{user}/{palm:?} already has {TEMPLATES_PER_PALM} templates")]
    AlreadyComplete { user: String, palm: Hand },
    #[error("no templates for {user}/{palm:?}")]
    NotFound { user: String, palm: Hand },
    #[error("feature is not a normalized {FEATURE_DIM}-vector")]
    BadFeature,
    #[error("store file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store file {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// Stored templates of one palm. Features are kept in their single
/// precision storage form.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRecord {
    pub user: String,
    pub palm: Hand,
    pub features: Vec<Vec<f32>>,
    pub created_at: DateTime<Utc>,
}

impl TemplateRecord {
    pub fn feature_vectors(&self) -> Vec<FeatureVector> {
        self.features
            .iter()
            .map(|f| {
                FeatureVector::from_unit(f.iter().map(|v| *v as f64).collect())
                    .expect("stored features are checked on load")
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    records: Vec<RecordFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordFile {
    user: String,
    palm: Hand,
    created_at: DateTime<Utc>,
    /// Base64 of 512 little-endian f32 values each.
    features: Vec<String>,
}

fn encode_feature(f: &[f32]) -> String {
    let bytes: Vec<u8> = f.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_feature(s: &str) -> std::result::Result<Vec<f32>, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() != FEATURE_DIM * 4 {
        return Err(format!(
            "feature has {} bytes, expected {}",
            bytes.len(),
            FEATURE_DIM * 4
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureVector::from_unit(values.iter().map(|v| *v as f64).collect())
        .map_err(|e: MatchError| e.to_string())?;
    Ok(values)
}

/// Persistent template store. Not synchronized; callers serialize writes.
#[derive(Debug)]
pub struct TemplateStore {
    path: PathBuf,
    records: BTreeMap<(String, Hand), TemplateRecord>,
}

impl TemplateStore {
    /// Loads `path`, or creates an empty store there if it does not exist.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut store = Self {
            path,
            records: BTreeMap::new(),
        };
        match fs::read_to_string(&store.path) {
            Ok(text) => store.records = parse(&store.path, &text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => store.persist()?,
            Err(source) => {
                return Err(StoreError::Io {
                    path: store.path,
                    source,
                })
            }
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn count(&self, user: &str, palm: Hand) -> usize {
        self.records
            .get(&(user.to_owned(), palm))
            .map_or(0, |r| r.features.len())
    }

    pub fn has_user(&self, user: &str) -> bool {
        self.records.keys().any(|(u, _)| u == user)
    }

    pub fn record(&self, user: &str, palm: Hand) -> Option<&TemplateRecord> {
        self.records.get(&(user.to_owned(), palm))
    }

    /// Fully enrolled palms of `user`.
    pub fn complete_records(&self, user: &str) -> Vec<&TemplateRecord> {
        self.records
            .values()
            .filter(|r| r.user == user && r.features.len() == TEMPLATES_PER_PALM)
            .collect()
    }

    /// Appends a normalized feature and persists; returns the new count.
    pub fn append(&mut self, user: &str, palm: Hand, feature: &FeatureVector) -> Result<usize> {
        if !feature.is_normalized() || feature.values().len() != FEATURE_DIM {
            return Err(StoreError::BadFeature);
        }
        let key = (user.to_owned(), palm);
        let count = self.count(user, palm);
        if count >= TEMPLATES_PER_PALM {
            return Err(StoreError::AlreadyComplete {
                user: user.to_owned(),
                palm,
            });
        }
        let previous = self.records.get(&key).cloned();
        self.records
            .entry(key.clone())
            .or_insert_with(|| TemplateRecord {
                user: user.to_owned(),
                palm,
                features: Vec::new(),
                created_at: Utc::now(),
            })
            .features
            .push(feature.to_f32());
        if let Err(e) = self.persist() {
            match previous {
                Some(r) => self.records.insert(key, r),
                None => self.records.remove(&key),
            };
            return Err(e);
        }
        Ok(count + 1)
    }

    /// Clears every template of one palm and persists. The record stays, so
    /// the user remains known with a count of zero.
    pub fn reset(&mut self, user: &str, palm: Hand) -> Result<()> {
        let Some(record) = self.records.get_mut(&(user.to_owned(), palm)) else {
            return Err(StoreError::NotFound {
                user: user.to_owned(),
                palm,
            });
        };
        let old = std::mem::take(&mut record.features);
        if let Err(e) = self.persist() {
            if let Some(r) = self.records.get_mut(&(user.to_owned(), palm)) {
                r.features = old;
            }
            return Err(e);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = StoreFile {
            version: STORE_VERSION,
            records: self
                .records
                .values()
                .map(|r| RecordFile {
                    user: r.user.clone(),
                    palm: r.palm,
                    created_at: r.created_at,
                    features: r.features.iter().map(|f| encode_feature(f)).collect(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("store serializes");
        text.push('\n');
        text
    }

    /// Writes a sibling temp file, syncs it, then renames over the store.
    fn persist(&self) -> Result<()> {
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        let dir = match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let name = self
            .path
            .file_name()
            .ok_or_else(|| io(std::io::Error::other("store path has no file name")))?;
        let mut tmp_name = name.to_os_string();
        tmp_name.push(".tmp");
        let tmp = dir.join(tmp_name);
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(self.to_json().as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, &self.path).map_err(io)
    }
}

fn parse(path: &Path, text: &str) -> Result<BTreeMap<(String, Hand), TemplateRecord>> {
    let corrupt = |reason: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let file: StoreFile = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    if file.version != STORE_VERSION {
        return Err(corrupt(format!("unsupported version {}", file.version)));
    }
    let mut records = BTreeMap::new();
    for r in file.records {
        if r.features.len() > TEMPLATES_PER_PALM {
            return Err(corrupt(format!(
                "{}/{:?} has {} features",
                r.user,
                r.palm,
                r.features.len()
            )));
        }
        let features = r
            .features
            .iter()
            .map(|s| decode_feature(s))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(corrupt)?;
        let key = (r.user.clone(), r.palm);
        let record = TemplateRecord {
            user: r.user,
            palm: r.palm,
            features,
            created_at: r.created_at,
        };
        if records.insert(key, record).is_some() {
            return Err(corrupt("duplicate record".into()));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use palmverify_core::matching::normalize;

    fn unit(seed: usize) -> FeatureVector {
        let v = (0..FEATURE_DIM)
            .map(|k| ((k * 7 + seed * 13) % 17) as f64 - 8.0)
            .collect();
        normalize(&FeatureVector::new(v).unwrap()).unwrap()
    }

    #[test]
    fn caps_at_three_and_resets() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = TemplateStore::open(dir.path().join("t.json")).unwrap();
        for k in 1..=3 {
            assert_eq!(s.append("ann", Hand::Left, &unit(k)).unwrap(), k);
        }
        assert!(matches!(
            s.append("ann", Hand::Left, &unit(4)),
            Err(StoreError::AlreadyComplete { .. })
        ));
        assert_eq!(s.complete_records("ann").len(), 1);
        s.reset("ann", Hand::Left).unwrap();
        assert_eq!(s.count("ann", Hand::Left), 0);
        assert!(s.has_user("ann"));
        assert!(matches!(
            s.reset("ann", Hand::Right),
            Err(StoreError::NotFound { .. })
        ));
    }

    #[test]
    fn reload_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let mut s = TemplateStore::open(&path).unwrap();
        s.append("b", Hand::Right, &unit(1)).unwrap();
        s.append("a", Hand::Left, &unit(2)).unwrap();
        let before = fs::read(&path).unwrap();
        let reopened = TemplateStore::open(&path).unwrap();
        assert_eq!(reopened.to_json().as_bytes(), before.as_slice());
        assert_eq!(reopened.record("a", Hand::Left), s.record("a", Hand::Left));
        assert!(!dir.path().join("t.json.tmp").exists());
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        fs::write(&path, "{\"version\":1,\"records\":[{\"user\":\"a\"}]}").unwrap();
        assert!(matches!(
            TemplateStore::open(&path),
            Err(StoreError::Corrupt { .. })
        ));
        let missing_dir = dir.path().join("nope").join("t.json");
        assert!(matches!(
            TemplateStore::open(missing_dir),
            Err(StoreError::Io { .. })
        ));
    }
}
