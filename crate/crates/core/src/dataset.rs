//! Dataset schema: sample file names, manifests, splits, folds and rotation
//! augmentation for detector training sets.
//!
//! Sample names follow `SSS_P_D_H_NN.jpg`: three-digit subject, session
//! (1 or 2), device (`h` Huawei, `m` Xiaomi), hand (`l`/`r`) and a two-digit
//! shot index. `006_2_h_r_08.jpg` is the eighth right-hand shot of subject 6
//! taken with the Huawei phone in session 2.

use crate::geometry::{
    boxes_from_annotation, rotate_annotation_with, AnnotationFile, BoxSizing, BoxSpec,
    CanvasPolicy, CanvasRotation, GeometryError, Hand, PalmAnnotation,
};
use crate::raster::{self, Border};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20200101;
pub const DEFAULT_RATIO: [u32; 3] = [8, 1, 1];
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_FOLDS: usize = 5;
const IMAGE_EXT: &str = ".jpg";
const MANIFEST_HEADER: &str = "# palmverify manifest v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed sample name {name:?} at byte {position}: {reason}")]
    MalformedName {
        name: String,
        position: usize,
        reason: &'static str,
    },
    #[error("duplicate sample {0}")]
    DuplicateSample(SampleId),
    #[error("manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("split file line {line}: {reason}")]
    MalformedSplit { line: usize, reason: String },
    #[error("need at least {needed} subjects, found {found}")]
    TooFewSubjects { needed: usize, found: usize },
    #[error("empty manifest")]
    EmptyManifest,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Huawei,
    Xiaomi,
}

impl Device {
    pub fn code(self) -> char {
        match self {
            Device::Huawei => 'h',
            Device::Xiaomi => 'm',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId {
    pub subject: u16,
    pub session: u8,
    pub device: Device,
    pub hand: Hand,
    pub index: u8,
}

impl SampleId {
    pub fn new(subject: u16, session: u8, device: Device, hand: Hand, index: u8) -> Result<Self> {
        let id = Self {
            subject,
            session,
            device,
            hand,
            index,
        };
        if !(1..=999).contains(&subject)
            || !(1..=2).contains(&session)
            || !(1..=99).contains(&index)
        {
            return Err(DatasetError::InvalidParameter(format!(
                "sample id out of range: subject {subject}, session {session}, index {index}"
            )));
        }
        Ok(id)
    }

    /// Left and right palms of one person are distinct identities.
    pub fn identity(&self) -> PalmIdentity {
        PalmIdentity {
            subject: self.subject,
            hand: self.hand,
        }
    }

    /// File-name stem, e.g. `006_2_h_r_08`.
    pub fn stem(&self) -> String {
        format!(
            "{:03}_{}_{}_{}_{:02}",
            self.subject,
            self.session,
            self.device.code(),
            self.hand.code(),
            self.index
        )
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.stem())
    }
}

impl FromStr for SampleId {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self> {
        parse_stem(s, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PalmIdentity {
    pub subject: u16,
    pub hand: Hand,
}

impl fmt::Display for PalmIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}_{}", self.subject, self.hand.code())
    }
}

fn malformed(name: &str, position: usize, reason: &'static str) -> DatasetError {
    DatasetError::MalformedName {
        name: name.to_string(),
        position,
        reason,
    }
}

fn digits(name: &str, bytes: &[u8], at: usize, len: usize, what: &'static str) -> Result<u32> {
    let mut v = 0u32;
    for k in at..at + len {
        match bytes.get(k) {
            Some(b) if b.is_ascii_digit() => v = v * 10 + (b - b'0') as u32,
            _ => return Err(malformed(name, k, what)),
        }
    }
    Ok(v)
}

fn expect(name: &str, bytes: &[u8], at: usize, ch: u8, what: &'static str) -> Result<()> {
    if bytes.get(at) == Some(&ch) {
        Ok(())
    } else {
        Err(malformed(name, at, what))
    }
}

fn parse_stem(stem: &str, full: &str) -> Result<SampleId> {
    let b = stem.as_bytes();
    let subject = digits(full, b, 0, 3, "subject must be three digits")?;
    if subject == 0 {
        return Err(malformed(full, 0, "subject must be 001-999"));
    }
    expect(full, b, 3, b'_', "expected '_' after subject")?;
    let session = match b.get(4) {
        Some(b'1') => 1,
        Some(b'2') => 2,
        _ => return Err(malformed(full, 4, "session must be 1 or 2")),
    };
    expect(full, b, 5, b'_', "expected '_' after session")?;
    let device = match b.get(6) {
        Some(b'h') => Device::Huawei,
        Some(b'm') => Device::Xiaomi,
        _ => return Err(malformed(full, 6, "device must be 'h' or 'm'")),
    };
    expect(full, b, 7, b'_', "expected '_' after device")?;
    let hand = match b.get(8).and_then(|c| Hand::from_code(*c as char)) {
        Some(h) => h,
        None => return Err(malformed(full, 8, "hand must be 'l' or 'r'")),
    };
    expect(full, b, 9, b'_', "expected '_' after hand")?;
    let index = digits(full, b, 10, 2, "index must be two digits")?;
    if index == 0 {
        return Err(malformed(full, 10, "index must be 01-99"));
    }
    if b.len() != 12 {
        return Err(malformed(full, 12, "unexpected trailing characters"));
    }
    Ok(SampleId {
        subject: subject as u16,
        session,
        device,
        hand,
        index: index as u8,
    })
}

/// Parses `SSS_P_D_H_NN.jpg`.
pub fn parse_name(name: &str) -> Result<SampleId> {
    let Some(stem) = name.strip_suffix(IMAGE_EXT) else {
        // a violation inside the stem comes before the extension
        parse_stem(name.get(..12).unwrap_or(name), name)?;
        return Err(malformed(name, 12, "expected \".jpg\" extension"));
    };
    parse_stem(stem, name)
}

pub fn format_name(id: &SampleId) -> String {
    format!("{}{IMAGE_EXT}", id.stem())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: SampleId,
    /// Image path relative to the dataset root.
    pub image: PathBuf,
    pub annotation: Option<PathBuf>,
}

/// Sorted, duplicate-free list of samples.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(DatasetError::DuplicateSample(w[0].id));
            }
        }
        Ok(Self { entries })
    }

    /// Manifest over bare ids with conventional relative paths.
    pub fn from_ids(ids: impl IntoIterator<Item = SampleId>) -> Result<Self> {
        Self::new(
            ids.into_iter()
                .map(|id| ManifestEntry {
                    id,
                    image: PathBuf::from(format_name(&id)),
                    annotation: None,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn get(&self, id: &SampleId) -> Option<&ManifestEntry> {
        self.entries
            .binary_search_by(|e| e.id.cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn subjects(&self) -> BTreeSet<u16> {
        self.ids().map(|id| id.subject).collect()
    }

    pub fn identities(&self) -> BTreeMap<PalmIdentity, Vec<SampleId>> {
        let mut out: BTreeMap<PalmIdentity, Vec<SampleId>> = BTreeMap::new();
        for id in self.ids() {
            out.entry(id.identity()).or_default().push(id);
        }
        out
    }

    /// Walks `root` for well-formed sample names; adjacent `.ann.json`
    /// sidecars are attached when present. Other files are ignored.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for item in walkdir::WalkDir::new(root).sort_by_file_name() {
            let item = item.map_err(|e| {
                let path = e
                    .path()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| root.to_path_buf());
                DatasetError::io(path, e.into())
            })?;
            if !item.file_type().is_file() {
                continue;
            }
            let name = item.file_name().to_string_lossy();
            let Ok(id) = parse_name(&name) else { continue };
            let rel = item
                .path()
                .strip_prefix(root)
                .expect("walkdir yields paths under root")
                .to_path_buf();
            let sidecar = AnnotationFile::path_for(&rel);
            let annotation = root.join(&sidecar).is_file().then_some(sidecar);
            entries.push(ManifestEntry {
                id,
                image: rel,
                annotation,
            });
        }
        Self::new(entries)
    }

    /// Tab-separated `name, image path, annotation path or "-"` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            let ann = e
                .annotation
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                format_name(&e.id),
                e.image.to_string_lossy(),
                ann
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(DatasetError::MalformedManifest {
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let id = parse_name(fields[0]).map_err(|e| DatasetError::MalformedManifest {
                line: line_no,
                reason: e.to_string(),
            })?;
            entries.push(ManifestEntry {
                id,
                image: PathBuf::from(fields[1]),
                annotation: (fields[2] != "-").then(|| PathBuf::from(fields[2])),
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| DatasetError::io(path, e))
    }

    /// Sub-manifest with only the listed samples.
    pub fn subset(&self, ids: &[SampleId]) -> Manifest {
        let keep: HashSet<&SampleId> = ids.iter().collect();
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|e| keep.contains(&e.id))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Samples are shuffled independently.
    Sample,
    /// Whole subjects are assigned to one side.
    Subject,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Sample => "sample",
            SplitMode::Subject => "subject",
        })
    }
}

/// Disjoint train/val/test partition of a manifest's samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub mode: SplitMode,
    pub train: Vec<SampleId>,
    pub val: Vec<SampleId>,
    pub test: Vec<SampleId>,
}

impl SplitSpec {
    fn subjects_of(ids: &[SampleId]) -> BTreeSet<u16> {
        ids.iter().map(|id| id.subject).collect()
    }

    pub fn train_subjects(&self) -> BTreeSet<u16> {
        Self::subjects_of(&self.train)
    }

    pub fn val_subjects(&self) -> BTreeSet<u16> {
        Self::subjects_of(&self.val)
    }

    pub fn test_subjects(&self) -> BTreeSet<u16> {
        Self::subjects_of(&self.test)
    }

    pub fn parts(&self) -> [(&'static str, &[SampleId]); 3] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ]
    }

    /// Text form: a header comment then `[train]`, `[val]`, `[test]`
    /// sections listing one sample stem per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# split seed={} mode={}\n", self.seed, self.mode);
        for (name, ids) in self.parts() {
            out.push_str(&format!("[{name}]\n"));
            for id in ids {
                out.push_str(&id.stem());
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut mode = None;
        let mut parts: [Vec<SampleId>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let bad = |reason: String| DatasetError::MalformedSplit {
                line: n + 1,
                reason,
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("seed", v)) => {
                            seed = Some(v.parse().map_err(|_| bad(format!("bad seed {v:?}")))?)
                        }
                        Some(("mode", "sample")) => mode = Some(SplitMode::Sample),
                        Some(("mode", "subject")) => mode = Some(SplitMode::Subject),
                        _ => {}
                    }
                }
                continue;
            }
            current = match line {
                "[train]" => Some(0),
                "[val]" => Some(1),
                "[test]" => Some(2),
                _ => {
                    let Some(k) = current else {
                        return Err(bad("sample listed before any section".into()));
                    };
                    parts[k].push(line.parse().map_err(|e: DatasetError| bad(e.to_string()))?);
                    continue;
                }
            };
        }
        let [train, val, test] = parts;
        Ok(Self {
            seed: seed.unwrap_or(DEFAULT_SEED),
            mode: mode.unwrap_or(SplitMode::Sample),
            train,
            val,
            test,
        })
    }
}

/// Largest-remainder apportionment of `n` items by `ratio`.
pub fn apportion(n: usize, ratio: &[u32]) -> Vec<usize> {
    let total: u64 = ratio.iter().map(|r| *r as u64).sum();
    if total == 0 {
        return vec![0; ratio.len()];
    }
    let mut sizes: Vec<usize> = ratio
        .iter()
        .map(|r| (n as u64 * *r as u64 / total) as usize)
        .collect();
    let mut rem: Vec<(u64, usize)> = ratio
        .iter()
        .enumerate()
        .map(|(i, r)| (n as u64 * *r as u64 % total, i))
        .collect();
    // largest remainder first, earlier part on ties
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = sizes.iter().sum();
    for (_, i) in rem.into_iter().take(n - assigned) {
        sizes[i] += 1;
    }
    sizes
}

fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

fn partition_subjects(manifest: &Manifest, groups: &[Vec<u16>]) -> Vec<Vec<SampleId>> {
    let mut owner = BTreeMap::new();
    for (g, subjects) in groups.iter().enumerate() {
        for s in subjects {
            owner.insert(*s, g);
        }
    }
    let mut out = vec![Vec::new(); groups.len()];
    for id in manifest.ids() {
        out[owner[&id.subject]].push(id);
    }
    out
}

/// Seeded train/val/test split by `ratio` (8:1:1 by default).
///
/// `SplitMode::Sample` partitions samples; `SplitMode::Subject` partitions
/// subjects. Augmented rotations of a source image inherit its side.
pub fn detector_split(
    manifest: &Manifest,
    ratio: [u32; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<SplitSpec> {
    if manifest.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    if ratio.iter().all(|r| *r == 0) {
        return Err(DatasetError::InvalidParameter(
            "split ratio is all zeros".into(),
        ));
    }
    let mut parts = match mode {
        SplitMode::Sample => {
            let ids: Vec<SampleId> = manifest.ids().collect();
            let order = shuffled(&ids, seed);
            let sizes = apportion(order.len(), &ratio);
            let mut rest = order.as_slice();
            sizes
                .iter()
                .map(|n| {
                    let (head, tail) = rest.split_at(*n);
                    rest = tail;
                    head.to_vec()
                })
                .collect::<Vec<_>>()
        }
        SplitMode::Subject => {
            let subjects: Vec<u16> = manifest.subjects().into_iter().collect();
            let order = shuffled(&subjects, seed);
            let sizes = apportion(order.len(), &ratio);
            let mut rest = order.as_slice();
            let groups: Vec<Vec<u16>> = sizes
                .iter()
                .map(|n| {
                    let (head, tail) = rest.split_at(*n);
                    rest = tail;
                    head.to_vec()
                })
                .collect();
            partition_subjects(manifest, &groups)
        }
    };
    for p in &mut parts {
        p.sort();
    }
    let test = parts.pop().unwrap_or_default();
    let val = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(SplitSpec {
        seed,
        mode,
        train,
        val,
        test,
    })
}

/// Subject-disjoint train/test split; every sample of a subject (both hands,
/// sessions and devices) lands on one side.
pub fn verifier_split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    let subjects: Vec<u16> = manifest.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(DatasetError::TooFewSubjects {
            needed: 2,
            found: subjects.len(),
        });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidParameter(format!(
            "train fraction {train_fraction} must be in (0, 1)"
        )));
    }
    let n = subjects.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let order = shuffled(&subjects, seed);
    let groups = vec![order[..n_train].to_vec(), order[n_train..].to_vec()];
    let mut parts = partition_subjects(manifest, &groups);
    let test = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(SplitSpec {
        seed,
        mode: SplitMode::Subject,
        train,
        val: Vec::new(),
        test,
    })
}

/// `k` subject-disjoint folds; fold `i` is the test side of split `i`.
pub fn kfold(manifest: &Manifest, k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    if k < 2 {
        return Err(DatasetError::InvalidParameter(format!(
            "k = {k} must be >= 2"
        )));
    }
    let subjects: Vec<u16> = manifest.subjects().into_iter().collect();
    if subjects.len() < k {
        return Err(DatasetError::TooFewSubjects {
            needed: k,
            found: subjects.len(),
        });
    }
    let order = shuffled(&subjects, seed);
    let sizes = apportion(order.len(), &vec![1; k]);
    let mut rest = order.as_slice();
    let groups: Vec<Vec<u16>> = sizes
        .iter()
        .map(|n| {
            let (head, tail) = rest.split_at(*n);
            rest = tail;
            head.to_vec()
        })
        .collect();
    let folds = partition_subjects(manifest, &groups);
    Ok((0..k)
        .map(|i| SplitSpec {
            seed,
            mode: SplitMode::Subject,
            train: folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            val: Vec::new(),
            test: folds[i].clone(),
        })
        .collect())
}

/// Rotation angles `j·360/J` for `j = 0..J`.
pub fn rotation_angles(j_count: usize) -> Vec<f64> {
    (0..j_count)
        .map(|j| j as f64 * 360.0 / j_count as f64)
        .collect()
}

#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub index: usize,
    pub angle: f64,
    pub image: RgbImage,
    pub annotation: PalmAnnotation,
    pub boxes: [BoxSpec; 3],
}

#[derive(Debug, Clone)]
pub struct Augmentation {
    pub samples: Vec<AugmentedSample>,
    /// `(index, angle, reason)` for rotations that were dropped.
    pub skipped: Vec<(usize, f64, GeometryError)>,
}

/// `J` rotated versions of one labeled image on an `s_f`-square canvas.
/// Boxes are recomputed from the rotated points.
pub fn augment_rotations(
    image: &RgbImage,
    ann: &PalmAnnotation,
    j_count: usize,
    canvas: u32,
    sizing: &BoxSizing,
    policy: CanvasPolicy,
) -> Result<Augmentation> {
    if j_count == 0 {
        return Err(DatasetError::InvalidParameter("J must be >= 1".into()));
    }
    if canvas == 0 {
        return Err(DatasetError::InvalidParameter(
            "canvas size must be > 0".into(),
        ));
    }
    let resized = raster::resize(image, canvas, canvas);
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (index, angle) in rotation_angles(j_count).into_iter().enumerate() {
        let rotated = rotate_annotation_with(ann, angle, canvas, policy)
            .and_then(|a| boxes_from_annotation(&a, sizing).map(|b| (a, b)));
        match rotated {
            Ok((annotation, boxes)) => {
                let rot =
                    CanvasRotation::new(angle, canvas, policy).expect("canvas size checked above");
                let size = rot.dst_size();
                let image = raster::warp(&resized, size, size, Border::Zero, |p| rot.inverse(p));
                samples.push(AugmentedSample {
                    index,
                    angle,
                    image,
                    annotation,
                    boxes,
                });
            }
            Err(e) => skipped.push((index, angle, e)),
        }
    }
    Ok(Augmentation { samples, skipped })
}
