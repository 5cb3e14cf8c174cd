//! Evaluation protocols for verification, identification and detection.

use crate::dataset::{PalmIdentity, SampleId};
use crate::geometry::{BoxClass, BoxSpec, Point2D};
use crate::matching::{match_against_gallery, score, FeatureVector, MatchError};
use crate::pipeline::DetectionBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

/// Keypoint match radius in pixels at detector input resolution.
pub const DEFAULT_DELTA: f64 = 10.0;
pub const DEFAULT_IOU: f64 = 0.5;
pub const DEFAULT_TOP1_REPEATS: usize = 10;
/// Full impostor enumeration below this many pairs.
pub const FULL_IMPOSTOR_LIMIT: u64 = 10_000_000;
/// FAR targets reported alongside EER.
pub const FAR_TARGETS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
/// The nine FPPI reference points 10^-3, 10^-2.5, ..., 10^1.
pub const LAMR_REFERENCES: [f64; 9] = [
    0.001,
    0.0031622776601683794,
    0.01,
    0.03162277660168379,
    0.1,
    0.31622776601683794,
    1.0,
    3.1622776601683795,
    10.0,
];
const MISS_RATE_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no feature for sample {0}")]
    MissingFeature(SampleId),
    #[error(
        "score set needs both genuine and impostor scores (genuine {genuine}, impostor {impostor})"
    )]
    EmptyScores { genuine: usize, impostor: usize },
    #[error("FAR target {0} outside (0, 1]")]
    InvalidTarget(f64),
    #[error("palm {0} has fewer than 2 images")]
    InsufficientImages(PalmIdentity),
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("empty curve")]
    EmptyCurve,
    #[error("delta must be > 0, got {0}")]
    InvalidDelta(f64),
    #[error(transparent)]
    Match(#[from] MatchError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    fn sorted(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(EvalError::EmptyScores {
                genuine: self.genuine.len(),
                impostor: self.impostor.len(),
            });
        }
        let mut g = self.genuine.clone();
        let mut i = self.impostor.clone();
        g.sort_by(f64::total_cmp);
        i.sort_by(f64::total_cmp);
        Ok((g, i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpostorSampling {
    Full,
    Sampled {
        n: usize,
        seed: u64,
    },
    /// Full below [`FULL_IMPOSTOR_LIMIT`] pairs, otherwise that many
    /// sampled pairs.
    Auto {
        seed: u64,
    },
}

/// Genuine scores over all same-palm pairs and impostor scores over
/// cross-palm pairs (all, or a seeded sample).
pub fn gen_pairs(
    ids: &[SampleId],
    features: &HashMap<SampleId, FeatureVector>,
    sampling: ImpostorSampling,
) -> Result<ScoreSet> {
    let mut ids = ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut feats = Vec::with_capacity(ids.len());
    for id in &ids {
        feats.push(features.get(id).ok_or(EvalError::MissingFeature(*id))?);
    }
    let n = ids.len();
    let same = |a: usize, b: usize| ids[a].identity() == ids[b].identity();

    let mut genuine = Vec::new();
    let mut cross_pairs: u64 = 0;
    for a in 0..n {
        for b in (a + 1)..n {
            if same(a, b) {
                genuine.push(score(feats[a], feats[b])?);
            } else {
                cross_pairs += 1;
            }
        }
    }

    let sampled = match sampling {
        ImpostorSampling::Full => None,
        ImpostorSampling::Sampled { n, seed } => Some((n as u64, seed)),
        ImpostorSampling::Auto { seed } => {
            (cross_pairs >= FULL_IMPOSTOR_LIMIT).then_some((FULL_IMPOSTOR_LIMIT, seed))
        }
    };
    let mut impostor = Vec::new();
    match sampled {
        Some((want, seed)) if want < cross_pairs => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = HashSet::new();
            while (impostor.len() as u64) < want {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let key = (a.min(b), a.max(b));
                if a == b || same(a, b) || !seen.insert(key) {
                    continue;
                }
                impostor.push(score(feats[key.0], feats[key.1])?);
            }
        }
        _ => {
            for a in 0..n {
                for b in (a + 1)..n {
                    if !same(a, b) {
                        impostor.push(score(feats[a], feats[b])?);
                    }
                }
            }
        }
    }
    Ok(ScoreSet { genuine, impostor })
}

fn count_ge(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|v| *v < t)
}

fn count_lt(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|v| *v < t)
}

/// One operating point: accept iff score >= threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

impl RocPoint {
    pub fn tpr(&self) -> f64 {
        1.0 - self.frr
    }
}

/// FAR/FRR at every distinct score, ascending, plus a final `+inf` point
/// where everything is rejected.
pub fn roc(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (g, i) = s.sorted()?;
    let mut thresholds: Vec<f64> = g.iter().chain(i.iter()).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    Ok(thresholds
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            far: count_ge(&i, t) as f64 / i.len() as f64,
            frr: count_lt(&g, t) as f64 / g.len() as f64,
        })
        .collect())
}

/// Equal error rate, linearly interpolated where FAR - FRR changes sign.
pub fn eer(s: &ScoreSet) -> Result<f64> {
    let curve = roc(s)?;
    let diff = |p: &RocPoint| p.far - p.frr;
    // FAR - FRR starts at 1 and ends at -1, so a crossing always exists
    let k = curve
        .iter()
        .position(|p| diff(p) <= 0.0)
        .expect("curve ends with FAR - FRR = -1");
    let hi = curve[k];
    if diff(&hi) == 0.0 || k == 0 {
        return Ok((hi.far + hi.frr) / 2.0);
    }
    let lo = curve[k - 1];
    let w = diff(&lo) / (diff(&lo) - diff(&hi));
    let far = lo.far + w * (hi.far - lo.far);
    let frr = lo.frr + w * (hi.frr - lo.frr);
    Ok((far + frr) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub far_target: f64,
    pub threshold: f64,
    pub achieved_far: f64,
    pub tpr: f64,
    pub genuine_accepted: usize,
    pub impostor_accepted: usize,
    /// The target was below every nonzero FAR the impostor set can show and
    /// no observed score reaches zero FAR; the threshold is the next double
    /// above the highest impostor score.
    pub zero_far_fallback: bool,
}

/// For each target, the smallest observed score `t` with `FAR(t) <= target`
/// and the TPR at that threshold.
pub fn tpr_at_far(s: &ScoreSet, far_targets: &[f64]) -> Result<Vec<CalibrationResult>> {
    let (g, i) = s.sorted()?;
    let mut candidates: Vec<f64> = g.iter().chain(i.iter()).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let far = |t: f64| count_ge(&i, t) as f64 / i.len() as f64;
    far_targets
        .iter()
        .map(|&target| {
            if !(target > 0.0 && target <= 1.0) {
                return Err(EvalError::InvalidTarget(target));
            }
            // FAR is non-increasing in t
            let k = candidates.partition_point(|t| far(*t) > target);
            let (threshold, fallback) = match candidates.get(k) {
                Some(t) => (*t, false),
                None => (i[i.len() - 1].next_up(), true),
            };
            let genuine_accepted = count_ge(&g, threshold);
            let impostor_accepted = count_ge(&i, threshold);
            Ok(CalibrationResult {
                far_target: target,
                threshold,
                achieved_far: impostor_accepted as f64 / i.len() as f64,
                tpr: genuine_accepted as f64 / g.len() as f64,
                genuine_accepted,
                impostor_accepted,
                zero_far_fallback: fallback,
            })
        })
        .collect()
}

/// Mean Top-1 identification accuracy over `repeats` random gallery draws.
///
/// Repeat `r` draws one gallery image per palm with seed `seed + r`; all
/// other images are probes.
pub fn top1(
    ids: &[SampleId],
    features: &HashMap<SampleId, FeatureVector>,
    seed: u64,
    repeats: usize,
) -> Result<f64> {
    let mut by_palm: BTreeMap<PalmIdentity, Vec<SampleId>> = BTreeMap::new();
    for id in ids {
        if !features.contains_key(id) {
            return Err(EvalError::MissingFeature(*id));
        }
        by_palm.entry(id.identity()).or_default().push(*id);
    }
    if by_palm.is_empty() || repeats == 0 {
        return Err(EvalError::NoSamples);
    }
    for (palm, list) in &mut by_palm {
        list.sort();
        list.dedup();
        if list.len() < 2 {
            return Err(EvalError::InsufficientImages(*palm));
        }
    }
    let palms: Vec<&Vec<SampleId>> = by_palm.values().collect();
    let mut total = 0.0;
    for r in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let picks: Vec<usize> = palms.iter().map(|l| rng.random_range(0..l.len())).collect();
        let gallery: Vec<FeatureVector> = palms
            .iter()
            .zip(&picks)
            .map(|(l, p)| features[&l[*p]].clone())
            .collect();
        let (mut correct, mut probes) = (0usize, 0usize);
        for (owner, (list, pick)) in palms.iter().zip(&picks).enumerate() {
            for (k, id) in list.iter().enumerate() {
                if k == *pick {
                    continue;
                }
                let (best, _) = match_against_gallery(&features[id], &gallery)?;
                probes += 1;
                correct += usize::from(best == owner);
            }
        }
        total += correct as f64 / probes as f64;
    }
    Ok(total / repeats as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeypointMatch {
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
}

/// One-to-one greedy matching: detections in descending confidence each take
/// the nearest unmatched ground truth strictly closer than `delta`.
pub fn keypoint_match(gts: &[Point2D], dets: &[(Point2D, f64)], delta: f64) -> KeypointMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|a, b| dets[*b].1.total_cmp(&dets[*a].1));
    let mut taken = vec![false; gts.len()];
    let mut tp = 0;
    for d in order {
        let p = dets[d].0;
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in gts.iter().enumerate() {
            if taken[k] {
                continue;
            }
            let dist = p.distance(*g);
            if dist < delta && best.is_none_or(|(_, b)| dist < b) {
                best = Some((k, dist));
            }
        }
        if let Some((k, _)) = best {
            taken[k] = true;
            tp += 1;
        }
    }
    KeypointMatch {
        true_positives: tp,
        false_positives: dets.len() - tp,
        misses: gts.len() - tp,
    }
}

/// Keypoints of one class in one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointImage {
    pub gts: Vec<Point2D>,
    pub dets: Vec<(Point2D, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub fppi: f64,
    pub miss_rate: f64,
}

/// Miss rate against false positives per image, sorted by FPPI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

/// `+inf` followed by every distinct detection confidence, descending.
pub fn confidence_thresholds(images: &[KeypointImage]) -> Vec<f64> {
    let mut t: Vec<f64> = images
        .iter()
        .flat_map(|im| im.dets.iter().map(|d| d.1))
        .collect();
    t.push(f64::INFINITY);
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

pub fn miss_rate_fppi(
    images: &[KeypointImage],
    thresholds: &[f64],
    delta: f64,
) -> Result<DetCurve> {
    if images.is_empty() {
        return Err(EvalError::NoSamples);
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(EvalError::InvalidDelta(delta));
    }
    let total_gt: usize = images.iter().map(|im| im.gts.len()).sum();
    let mut points: Vec<DetPoint> = thresholds
        .iter()
        .map(|&thr| {
            let mut fp = 0;
            let mut miss = 0;
            for im in images {
                let kept: Vec<(Point2D, f64)> =
                    im.dets.iter().copied().filter(|d| d.1 >= thr).collect();
                let m = keypoint_match(&im.gts, &kept, delta);
                fp += m.false_positives;
                miss += m.misses;
            }
            DetPoint {
                threshold: thr,
                fppi: fp as f64 / images.len() as f64,
                miss_rate: if total_gt == 0 {
                    0.0
                } else {
                    miss as f64 / total_gt as f64
                },
            }
        })
        .collect();
    points.sort_by(|a, b| {
        a.fppi
            .total_cmp(&b.fppi)
            .then(b.miss_rate.total_cmp(&a.miss_rate))
    });
    Ok(DetCurve { points })
}

/// Log-average miss rate over the nine reference FPPI values.
///
/// Each reference takes the miss rate of the last curve point with
/// FPPI <= reference (the lowest miss rate among equal FPPI), or the curve's
/// highest miss rate when no point is that far left.
pub fn lamr(curve: &DetCurve) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    let worst = curve
        .points
        .iter()
        .map(|p| p.miss_rate)
        .fold(f64::NEG_INFINITY, f64::max);
    let mean_log = LAMR_REFERENCES
        .iter()
        .map(|&r| {
            let mr = curve
                .points
                .iter()
                .rev()
                .find(|p| p.fppi <= r)
                .map_or(worst, |p| p.miss_rate);
            mr.max(MISS_RATE_FLOOR).ln()
        })
        .sum::<f64>()
        / LAMR_REFERENCES.len() as f64;
    Ok(mean_log.exp())
}

pub fn iou(a: &BoxSpec, b: &DetectionBox) -> f64 {
    let ix = (a.center.x + a.width / 2.0).min(b.center.x + b.width / 2.0)
        - (a.center.x - a.width / 2.0).max(b.center.x - b.width / 2.0);
    let iy = (a.center.y + a.height / 2.0).min(b.center.y + b.height / 2.0)
        - (a.center.y - a.height / 2.0).max(b.center.y - b.height / 2.0);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.width * a.height + b.width * b.height - inter)
}

/// Ground truth and detections for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionScene {
    pub ground_truth: Vec<BoxSpec>,
    pub detections: Vec<DetectionBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: BoxClass,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub gt_count: usize,
    pub det_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub per_class: Vec<ClassAp>,
    pub map: f64,
}

/// All-point interpolated AP from per-detection TP flags (already in
/// descending confidence order).
pub fn average_precision(tp_flags: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, hit) in tp_flags.iter().enumerate() {
        tp += usize::from(*hit);
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Per-class AP with greedy IoU matching, and their mean over classes with
/// ground truth.
pub fn map_detection(scenes: &[DetectionScene], iou_threshold: f64) -> MapResult {
    let per_class: Vec<ClassAp> = BoxClass::ALL
        .iter()
        .map(|&class| {
            let mut dets: Vec<(usize, &DetectionBox)> = scenes
                .iter()
                .enumerate()
                .flat_map(|(s, sc)| sc.detections.iter().map(move |d| (s, d)))
                .filter(|(_, d)| d.class_id == class)
                .collect();
            dets.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));
            let gts: Vec<Vec<&BoxSpec>> = scenes
                .iter()
                .map(|sc| {
                    sc.ground_truth
                        .iter()
                        .filter(|g| g.class_id == class)
                        .collect()
                })
                .collect();
            let gt_count: usize = gts.iter().map(Vec::len).sum();
            let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
            let flags: Vec<bool> = dets
                .iter()
                .map(|(s, d)| {
                    let best = gts[*s]
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| !taken[*s][*k])
                        .map(|(k, g)| (k, iou(g, d)))
                        .fold(None::<(usize, f64)>, |acc, (k, v)| match acc {
                            Some((_, bv)) if bv >= v => acc,
                            _ => Some((k, v)),
                        });
                    match best {
                        Some((k, v)) if v >= iou_threshold => {
                            taken[*s][k] = true;
                            true
                        }
                        _ => false,
                    }
                })
                .collect();
            ClassAp {
                class_id: class,
                ap: (gt_count > 0).then(|| average_precision(&flags, gt_count)),
                gt_count,
                det_count: dets.len(),
            }
        })
        .collect();
    let aps: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    MapResult { per_class, map }
}
