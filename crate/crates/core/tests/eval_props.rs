use image::{Rgb, RgbImage};
use palmverify_core::dataset::{Device, SampleId};
use palmverify_core::eval::{
    eer, gen_pairs, keypoint_match, lamr, map_detection, tpr_at_far, DetCurve, DetPoint,
    DetectionScene, ImpostorSampling, ScoreSet, FAR_TARGETS,
};
use palmverify_core::geometry::{BoxClass, BoxSpec, Hand, Point2D};
use palmverify_core::matching::{decide, embed, normalize, FeatureVector, Outcome, StubEmbedder};
use palmverify_core::pipeline::DetectionBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Threshold sweep by direct counting, independent of the library's sorted
/// bookkeeping. Probes every score, every midpoint between neighbours and
/// one point beyond each end.
fn brute_force_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut scores: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut probes = vec![scores[0] - 1.0];
    for w in scores.windows(2) {
        probes.push(w[0]);
        probes.push((w[0] + w[1]) / 2.0);
    }
    probes.push(*scores.last().unwrap());
    probes.push(scores.last().unwrap() + 1.0);
    let rates = |t: f64| {
        let far = impostor.iter().filter(|s| **s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|s| **s < t).count() as f64 / genuine.len() as f64;
        (far, frr)
    };
    let mut prev = rates(probes[0]);
    for t in &probes[1..] {
        let cur = rates(*t);
        let (d0, d1) = (prev.0 - prev.1, cur.0 - cur.1);
        if d1 <= 0.0 {
            if d1 == 0.0 {
                return (cur.0 + cur.1) / 2.0;
            }
            let w = d0 / (d0 - d1);
            return ((prev.0 + w * (cur.0 - prev.0)) + (prev.1 + w * (cur.1 - prev.1))) / 2.0;
        }
        prev = cur;
    }
    unreachable!("FAR - FRR reaches -1 past the largest score")
}

fn random_scores(rng: &mut impl Rng) -> ScoreSet {
    let ng = rng.random_range(1..=200);
    let ni = rng.random_range(1..=200);
    let shift: f64 = rng.random_range(-0.5..1.0);
    // coarse grids produce ties between and within the two sides
    let coarse = rng.random_bool(0.3);
    let mut draw = |offset: f64| {
        let v: f64 = rng.random_range(-1.0..1.0) * 0.5 + offset;
        if coarse {
            (v * 10.0).round() / 10.0
        } else {
            v
        }
    };
    ScoreSet {
        genuine: (0..ng).map(|_| draw(shift)).collect(),
        impostor: (0..ni).map(|_| draw(0.0)).collect(),
    }
}

#[test]
fn eer_matches_brute_force_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let s = random_scores(&mut rng);
        let want = brute_force_eer(&s.genuine, &s.impostor);
        let got = eer(&s).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn eer_reference_cases() {
    let separated = ScoreSet {
        genuine: vec![0.8, 0.95, 0.7],
        impostor: vec![0.1, 0.69, -0.3],
    };
    assert_eq!(eer(&separated).unwrap(), 0.0);
    let worked = ScoreSet {
        genuine: vec![0.9, 0.3],
        impostor: vec![0.7, 0.1],
    };
    assert_eq!(eer(&worked).unwrap(), 0.5);
}

#[test]
fn calibration_is_monotone_and_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let targets = [1.0, 0.5, 0.1, 0.03, 0.01, 1e-3, 1e-4];
    for _ in 0..100 {
        let s = random_scores(&mut rng);
        let r = tpr_at_far(&s, &targets).unwrap();
        for w in r.windows(2) {
            assert!(w[1].tpr <= w[0].tpr);
            assert!(w[1].threshold >= w[0].threshold);
        }
        for c in &r {
            assert!(c.achieved_far <= c.far_target);
            let g = s
                .genuine
                .iter()
                .filter(|v| decide(**v, c.threshold).outcome == Outcome::Success)
                .count();
            let i = s
                .impostor
                .iter()
                .filter(|v| decide(**v, c.threshold).outcome == Outcome::Success)
                .count();
            assert_eq!((g, i), (c.genuine_accepted, c.impostor_accepted));
            assert_eq!(c.tpr, g as f64 / s.genuine.len() as f64);
        }
    }
    let full = tpr_at_far(
        &ScoreSet {
            genuine: vec![0.9, 0.4],
            impostor: vec![0.5, 0.2],
        },
        &[1.0],
    )
    .unwrap();
    assert_eq!(full[0].threshold, 0.2);
}

fn textured(rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(64, 64, |_, _| {
        Rgb([rng.random(), rng.random(), rng.random()])
    })
}

fn perturbed(base: &RgbImage, amount: i16, rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let p = base.get_pixel(x, y);
        Rgb(p
            .0
            .map(|c| (c as i16 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8))
    })
}

#[test]
fn tpr_falls_as_far_tightens_on_stub_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let stub = StubEmbedder::new(9);
    let mut features: HashMap<SampleId, FeatureVector> = HashMap::new();
    for subject in 1..=40u16 {
        for hand in [Hand::Left, Hand::Right] {
            let base = textured(&mut rng);
            for index in 1..=5u8 {
                let img = perturbed(&base, 200, &mut rng);
                let id = SampleId::new(subject, 1, Device::Huawei, hand, index).unwrap();
                features.insert(id, normalize(&embed(&img, &stub).unwrap()).unwrap());
            }
        }
    }
    let ids: Vec<SampleId> = features.keys().copied().collect();
    let s = gen_pairs(&ids, &features, ImpostorSampling::Full).unwrap();
    assert_eq!(s.genuine.len(), 80 * 10);
    assert_eq!(s.impostor.len(), 400 * 399 / 2 - 800);
    let r = tpr_at_far(&s, &FAR_TARGETS).unwrap();
    for w in r.windows(2) {
        assert!(w[1].tpr <= w[0].tpr, "{r:?}");
    }
    assert!(
        r[0].tpr > r[3].tpr,
        "noise is strong enough to separate the targets"
    );
}

#[test]
fn lamr_constant_curve_and_two_segment_case() {
    for m in [0.05, 0.3, 1.0] {
        let curve = DetCurve {
            points: [0.0, 0.5, 20.0]
                .iter()
                .map(|f| DetPoint {
                    threshold: 0.0,
                    fppi: *f,
                    miss_rate: m,
                })
                .collect(),
        };
        assert!((lamr(&curve).unwrap() - m).abs() < 1e-12);
    }
    // references below 0.01 fall back to the worst miss rate (0.5), the five
    // in [0.01, 1) see 0.5 and the three at or above 1 see 0.1
    let curve = DetCurve {
        points: vec![
            DetPoint {
                threshold: 0.9,
                fppi: 0.01,
                miss_rate: 0.5,
            },
            DetPoint {
                threshold: 0.1,
                fppi: 1.0,
                miss_rate: 0.1,
            },
        ],
    };
    let expected = ((6.0 * 0.5f64.ln() + 3.0 * 0.1f64.ln()) / 9.0).exp();
    assert!((lamr(&curve).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn keypoint_counts_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..1000 {
        let gts: Vec<Point2D> = (0..rng.random_range(0..6))
            .map(|_| Point2D::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect();
        let dets: Vec<(Point2D, f64)> = (0..rng.random_range(0..6))
            .map(|_| {
                (
                    Point2D::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let m = keypoint_match(&gts, &dets, 10.0);
        assert_eq!(m.true_positives + m.misses, gts.len());
        assert_eq!(m.true_positives + m.false_positives, dets.len());
    }
    let gt = [Point2D::new(0.0, 0.0)];
    let at_delta = keypoint_match(&gt, &[(Point2D::new(10.0, 0.0), 1.0)], 10.0);
    assert_eq!((at_delta.true_positives, at_delta.misses), (0, 1));
    let inside = keypoint_match(&gt, &[(Point2D::new(9.999, 0.0), 1.0)], 10.0);
    assert_eq!(inside.true_positives, 1);
}

#[test]
fn copied_ground_truth_has_perfect_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let scenes: Vec<DetectionScene> = (0..100)
        .map(|_| {
            let ground_truth: Vec<BoxSpec> = (0..rng.random_range(1..6))
                .map(|k| BoxSpec {
                    class_id: if k == 0 {
                        BoxClass::PalmCenter
                    } else {
                        BoxClass::DoubleFingerGap
                    },
                    center: Point2D::new(
                        rng.random_range(0.0..400.0),
                        rng.random_range(0.0..400.0),
                    ),
                    width: rng.random_range(5.0..60.0),
                    height: rng.random_range(5.0..60.0),
                })
                .collect();
            let detections = ground_truth
                .iter()
                .map(|g| DetectionBox::from_spec(g, 1.0))
                .collect();
            DetectionScene {
                ground_truth,
                detections,
            }
        })
        .collect();
    assert_eq!(map_detection(&scenes, 0.5).map, 1.0);
}

#[test]
fn duplicate_detection_toy_case() {
    let gt = |class_id, x: f64| BoxSpec {
        class_id,
        center: Point2D::new(x, 50.0),
        width: 20.0,
        height: 20.0,
    };
    let det = |class_id, x: f64, conf: f64| {
        DetectionBox::new(class_id, conf, Point2D::new(x, 50.0), 20.0, 20.0).unwrap()
    };
    let gap = BoxClass::DoubleFingerGap;
    let palm = BoxClass::PalmCenter;
    // class 0: hit, duplicate of the same box, then the second box
    // class 1: a miss ranked above the only hit
    let scenes = [DetectionScene {
        ground_truth: vec![gt(gap, 50.0), gt(gap, 150.0), gt(palm, 300.0)],
        detections: vec![
            det(gap, 50.0, 0.9),
            det(gap, 51.0, 0.8),
            det(gap, 150.0, 0.7),
            det(palm, 500.0, 0.9),
            det(palm, 300.0, 0.6),
        ],
    }];
    let r = map_detection(&scenes, 0.5);
    assert!((r.per_class[0].ap.unwrap() - 5.0 / 6.0).abs() < 1e-12);
    assert!((r.per_class[1].ap.unwrap() - 0.5).abs() < 1e-12);
    assert!((r.map - 2.0 / 3.0).abs() < 1e-12);
}
