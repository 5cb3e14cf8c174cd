use crate::error::{CliError, Result};
use crate::io;
use crate::roi::model_backend_unavailable;
use crate::{
    Backend, DetectArgs, Embedder, EvalCommand, FeatureArgs, IdentifyArgs, Impostors, Stage,
    ThresholdArgs, VerifyArgs,
};
use palmverify_core::dataset::{Manifest, SampleId, SplitSpec};
use palmverify_core::eval::{
    confidence_thresholds, gen_pairs, lamr, map_detection, miss_rate_fppi, roc, top1, tpr_at_far,
    DetectionScene, ImpostorSampling, KeypointImage, ScoreSet,
};
use palmverify_core::geometry::{boxes_from_annotation, BoxClass, BoxSizing};
use palmverify_core::matching::{embed, normalize, FeatureVector, StubEmbedder};
use palmverify_core::pipeline::{run_pipeline, DetectionBox, OracleDetector};
use palmverify_core::report::{render_table, Report};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

pub fn run(cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Verify(args) => verify(args),
        EvalCommand::Identify(args) => identify(args),
        EvalCommand::Detect(args) => detect(args),
        EvalCommand::Threshold(args) => threshold(args),
    }
}

fn sampling(imp: Impostors, seed: u64) -> ImpostorSampling {
    match imp {
        Impostors::Auto => ImpostorSampling::Auto { seed },
        Impostors::Full => ImpostorSampling::Full,
        Impostors::Sampled(n) => ImpostorSampling::Sampled { n, seed },
    }
}

/// Manifest entries selected by `--manifest`/`--split`/`--part`.
fn select(args: &FeatureArgs) -> Result<(std::path::PathBuf, Manifest)> {
    let root = args
        .root
        .clone()
        .ok_or_else(|| CliError::Usage("--root is required".into()))?;
    let manifest = match &args.manifest {
        Some(p) => Manifest::parse(&io::read_text(p)?).map_err(|e| CliError::at(p, e))?,
        None => Manifest::scan(&root).map_err(|e| CliError::at(&root, e))?,
    };
    let manifest = match &args.split {
        Some(p) => {
            let spec = SplitSpec::parse(&io::read_text(p)?).map_err(|e| CliError::at(p, e))?;
            let (_, ids) = spec
                .parts()
                .into_iter()
                .find(|(name, _)| *name == args.part.as_str())
                .expect("part names are fixed");
            manifest.subset(ids)
        }
        None => manifest,
    };
    if manifest.is_empty() {
        return Err(CliError::at(&root, "no samples selected"));
    }
    Ok((root, manifest))
}

/// Normalized features for every selected sample, in manifest order.
fn features(args: &FeatureArgs) -> Result<(Vec<SampleId>, HashMap<SampleId, FeatureVector>)> {
    if args.embedder == Embedder::Model {
        return Err(model_backend_unavailable());
    }
    let (root, manifest) = select(args)?;
    let embedder = StubEmbedder::new(args.embedder_seed);
    let sizing = BoxSizing::default();
    let mut ids = Vec::with_capacity(manifest.len());
    let mut feats = HashMap::with_capacity(manifest.len());
    for (k, entry) in manifest.entries().iter().enumerate() {
        let path = root.join(&entry.image);
        let image = io::load_image(&path)?;
        let roi = match args.stage {
            Stage::Roi => image,
            Stage::Raw => {
                let Some(ann_path) = &entry.annotation else {
                    return Err(CliError::at(
                        &path,
                        "no annotation sidecar for the raw stage",
                    ));
                };
                let ann = io::load_annotation(&root.join(ann_path), image.dimensions())?;
                let detector = OracleDetector::new(
                    &ann,
                    &sizing,
                    args.jitter,
                    args.seed.wrapping_add(k as u64),
                )?;
                run_pipeline(&image, &detector, args.conf_min, 224)
                    .map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?
                    .pixels
            }
        };
        let f = embed(&roi, &embedder)
            .and_then(|f| normalize(&f))
            .map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?;
        ids.push(entry.id);
        feats.insert(entry.id, f);
    }
    Ok((ids, feats))
}

fn score_set(args: &FeatureArgs, imp: Impostors) -> Result<ScoreSet> {
    let (ids, feats) = features(args)?;
    Ok(gen_pairs(&ids, &feats, sampling(imp, args.seed))?)
}

fn far_label(far: f64) -> String {
    format!("{far:e}")
}

fn verify(args: &VerifyArgs) -> Result<()> {
    let scores = score_set(&args.features, args.impostors)?;
    let mut report = Report::new("verification");
    report
        .metric("eer", palmverify_core::eval::eer(&scores)?)
        .metric("genuine_pairs", scores.genuine.len() as f64)
        .metric("impostor_pairs", scores.impostor.len() as f64);
    for c in tpr_at_far(&scores, &args.far)? {
        let label = far_label(c.far_target);
        report
            .metric(format!("tpr@far={label}"), c.tpr)
            .metric(format!("threshold@far={label}"), c.threshold);
        if c.zero_far_fallback {
            eprintln!("note: FAR {label} is below the impostor resolution; threshold sits above every impostor score");
        }
    }
    let curve = roc(&scores)?;
    report.curve(
        "roc",
        "far",
        "tpr",
        curve.iter().map(|p| (p.far, p.tpr())).collect(),
    );
    print!("{}", report.to_table());
    finish(&report, args.report.as_deref(), args.roc.as_deref(), "roc")?;
    if let Some(p) = &args.scores_out {
        let text = serde_json::to_string(&scores).expect("scores serialize");
        io::write_text(p, &text)?;
    }
    Ok(())
}

fn finish(report: &Report, json: Option<&Path>, csv: Option<&Path>, curve: &str) -> Result<()> {
    if let Some(p) = json {
        io::write_text(p, &report.to_json())?;
    }
    if let Some(p) = csv {
        io::write_text(p, &report.curves[curve].to_csv())?;
    }
    Ok(())
}

fn identify(args: &IdentifyArgs) -> Result<()> {
    let (ids, feats) = features(&args.features)?;
    let acc = top1(&ids, &feats, args.features.seed, args.repeats)?;
    let mut report = Report::new("identification");
    report
        .metric("top1", acc)
        .metric("repeats", args.repeats as f64)
        .metric("images", ids.len() as f64);
    print!("{}", report.to_table());
    finish(&report, args.report.as_deref(), None, "")
}

fn threshold(args: &ThresholdArgs) -> Result<()> {
    let scores = match &args.scores {
        Some(p) => {
            serde_json::from_str::<ScoreSet>(&io::read_text(p)?).map_err(|e| CliError::at(p, e))?
        }
        None => score_set(&args.features, args.impostors)?,
    };
    let rows: Vec<Vec<String>> = tpr_at_far(&scores, &args.far)?
        .iter()
        .map(|c| {
            vec![
                far_label(c.far_target),
                format!("{}", c.threshold),
                format!("{:.6}", c.achieved_far),
                format!("{:.6}", c.tpr),
                if c.zero_far_fallback { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    print!(
        "{}",
        render_table(
            "calibrated threshold",
            &[
                "far_target",
                "threshold",
                "achieved_far",
                "tpr",
                "above_all_impostors"
            ],
            &rows
        )
    );
    Ok(())
}

fn detect(args: &DetectArgs) -> Result<()> {
    if args.backend == Backend::Model {
        return Err(model_backend_unavailable());
    }
    let sizing = BoxSizing::new(args.alpha, args.beta)?;
    let sources = io::annotated_images(&args.root)?;
    if sources.is_empty() {
        return Err(CliError::at(&args.root, "no annotated images found"));
    }
    let supplied: Option<BTreeMap<String, Vec<DetectionBox>>> = match &args.detections {
        Some(p) => Some(serde_json::from_str(&io::read_text(p)?).map_err(|e| CliError::at(p, e))?),
        None => None,
    };
    let mut scenes = Vec::with_capacity(sources.len());
    for (k, (image_path, sidecar)) in sources.iter().enumerate() {
        let size = image::image_dimensions(image_path).map_err(|e| CliError::at(image_path, e))?;
        let ann = io::load_annotation(sidecar, size)?;
        let ground_truth = boxes_from_annotation(&ann, &sizing)?.to_vec();
        let rel = image_path
            .strip_prefix(&args.root)
            .unwrap_or(image_path)
            .to_string_lossy()
            .replace('\\', "/");
        let detections = match &supplied {
            Some(map) => map.get(&rel).cloned().unwrap_or_default(),
            None => {
                OracleDetector::new(&ann, &sizing, args.jitter, args.seed.wrapping_add(k as u64))?
                    .boxes()
            }
        };
        for d in &detections {
            d.validate()
                .map_err(|e| CliError::Data(format!("{rel}: {e}")))?;
        }
        scenes.push(DetectionScene {
            ground_truth,
            detections,
        });
    }

    let map = map_detection(&scenes, args.iou);
    let mut report = Report::new("detection");
    report
        .metric("map", map.map)
        .metric("images", scenes.len() as f64);
    for c in &map.per_class {
        if let Some(ap) = c.ap {
            report.metric(format!("ap_class{}", c.class_id.id()), ap);
        }
    }
    for class in BoxClass::ALL {
        let images: Vec<KeypointImage> = scenes
            .iter()
            .map(|s| KeypointImage {
                gts: s
                    .ground_truth
                    .iter()
                    .filter(|g| g.class_id == class)
                    .map(|g| g.center)
                    .collect(),
                dets: s
                    .detections
                    .iter()
                    .filter(|d| d.class_id == class)
                    .map(|d| (d.center, d.confidence))
                    .collect(),
            })
            .collect();
        let curve = miss_rate_fppi(&images, &confidence_thresholds(&images), args.delta)?;
        report.metric(format!("lamr_class{}", class.id()), lamr(&curve)?);
        report.curve(
            format!("miss_rate_fppi_class{}", class.id()),
            "fppi",
            "miss_rate",
            curve.points.iter().map(|p| (p.fppi, p.miss_rate)).collect(),
        );
    }
    print!("{}", report.to_table());
    if let Some(p) = &args.report {
        io::write_text(p, &report.to_json())?;
    }
    if let Some(dir) = &args.curves {
        for (name, curve) in &report.curves {
            io::write_text(&dir.join(format!("{name}.csv")), &curve.to_csv())?;
        }
    }
    Ok(())
}
