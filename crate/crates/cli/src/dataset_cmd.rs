use crate::error::{CliError, Result};
use crate::io;
use crate::{AugmentArgs, DatasetCommand, KfoldArgs, SplitArgs, SplitKind};
use palmverify_core::dataset::{
    augment_rotations, detector_split, kfold, verifier_split, Manifest, SplitSpec,
};
use palmverify_core::geometry::{AnnotationFile, BoxSizing};
use std::fmt::Write;

pub fn run(cmd: &DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Scan { root, out } => {
            let manifest = Manifest::scan(root).map_err(|e| CliError::at(root, e))?;
            io::write_text(out, &manifest.to_text())?;
            let annotated = manifest
                .entries()
                .iter()
                .filter(|e| e.annotation.is_some())
                .count();
            println!(
                "{} samples ({} annotated, {} subjects) -> {}",
                manifest.len(),
                annotated,
                manifest.subjects().len(),
                out.display()
            );
            Ok(())
        }
        DatasetCommand::Split(args) => split(args),
        DatasetCommand::Kfold(args) => folds(args),
        DatasetCommand::Augment(args) => augment(args),
    }
}

fn load_manifest(path: &std::path::Path) -> Result<Manifest> {
    Manifest::parse(&io::read_text(path)?).map_err(|e| CliError::at(path, e))
}

fn print_sizes(spec: &SplitSpec) {
    for (name, ids) in spec.parts() {
        let subjects: std::collections::BTreeSet<u16> = ids.iter().map(|i| i.subject).collect();
        println!(
            "{name:<6}{:>7} samples {:>5} subjects",
            ids.len(),
            subjects.len()
        );
    }
}

fn split(args: &SplitArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let spec = match args.kind {
        SplitKind::Detector => detector_split(&manifest, args.ratio.0, args.seed, args.mode)?,
        SplitKind::Verifier => verifier_split(&manifest, args.train_fraction, args.seed)?,
    };
    io::write_text(&args.out, &spec.to_text())?;
    print_sizes(&spec);
    println!("-> {}", args.out.display());
    Ok(())
}

fn folds(args: &KfoldArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let folds = kfold(&manifest, args.k, args.seed)?;
    for (i, fold) in folds.iter().enumerate() {
        let path = args.out_dir.join(format!("fold_{}.txt", i + 1));
        io::write_text(&path, &fold.to_text())?;
        println!(
            "fold {}: {} train / {} test samples, {} test subjects -> {}",
            i + 1,
            fold.train.len(),
            fold.test.len(),
            fold.test_subjects().len(),
            path.display()
        );
    }
    Ok(())
}

/// Writes each rotation as `<stem>_jNN.png` with a sidecar and YOLO-style
/// label file (`class cx cy w h`, normalized), plus an index of angles.
fn augment(args: &AugmentArgs) -> Result<()> {
    let sizing = BoxSizing::new(args.alpha, args.beta)?;
    let sources = io::annotated_images(&args.root)?;
    if sources.is_empty() {
        return Err(CliError::at(&args.root, "no annotated images found"));
    }
    let mut index = String::from("file\tsource\tangle\n");
    let (mut written, mut skipped) = (0usize, 0usize);
    for (image_path, sidecar) in &sources {
        let image = io::load_image(image_path)?;
        let ann = io::load_annotation(sidecar, image.dimensions())?;
        let aug = augment_rotations(&image, &ann, args.j, args.canvas, &sizing, args.policy)?;
        let stem = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for s in &aug.samples {
            let name = format!("{stem}_j{:02}", s.index);
            let out = args.out_dir.join(format!("{name}.png"));
            io::save_image(&s.image, &out)?;
            io::write_text(
                &AnnotationFile::path_for(&out),
                &AnnotationFile::from_annotation(&s.annotation).to_json(),
            )?;
            let size = s.image.width() as f64;
            let mut labels = String::new();
            for b in &s.boxes {
                let _ = writeln!(
                    labels,
                    "{} {:.6} {:.6} {:.6} {:.6}",
                    b.class_id.id(),
                    b.center.x / size,
                    b.center.y / size,
                    b.width / size,
                    b.height / size
                );
            }
            io::write_text(&args.out_dir.join(format!("{name}.txt")), &labels)?;
            let _ = writeln!(index, "{name}.png\t{}\t{}", image_path.display(), s.angle);
            written += 1;
        }
        for (i, angle, reason) in &aug.skipped {
            eprintln!(
                "skipped {} rotation {i} ({angle} deg): {reason}",
                image_path.display()
            );
            skipped += 1;
        }
    }
    io::write_text(&args.out_dir.join("augmentations.tsv"), &index)?;
    println!(
        "{} sources x J={} (step {} deg): {written} written, {skipped} skipped -> {}",
        sources.len(),
        args.j,
        360.0 / args.j as f64,
        args.out_dir.display()
    );
    Ok(())
}
