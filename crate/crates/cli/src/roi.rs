use crate::error::{CliError, Result};
use crate::io;
use crate::{Backend, RoiArgs};
use palmverify_core::geometry::{AnnotationFile, BoxSizing};
use palmverify_core::pipeline::{run_pipeline, OracleDetector};

pub fn run(args: &RoiArgs) -> Result<()> {
    if args.backend == Backend::Model {
        return Err(model_backend_unavailable());
    }
    let annotation = match &args.annotation {
        Some(p) => p.clone(),
        None => {
            let sidecar = AnnotationFile::path_for(&args.image);
            if !sidecar.is_file() {
                return Err(CliError::Usage(format!(
                    "the oracle backend needs an annotation: pass --annotation or add {}",
                    sidecar.display()
                )));
            }
            sidecar
        }
    };
    let image = io::load_image(&args.image)?;
    let ann = io::load_annotation(&annotation, image.dimensions())?;
    let sizing = BoxSizing::new(args.alpha, args.beta)?;
    let detector = OracleDetector::new(&ann, &sizing, args.jitter, args.seed)?;
    let roi = run_pipeline(&image, &detector, args.conf_min, args.size)?;
    io::save_image(&roi.pixels, &args.out)?;

    let [tl, tr, br, bl] = roi.quad.corners;
    println!("source      {}", args.image.display());
    println!("annotation  {}", annotation.display());
    println!(
        "backend     oracle (jitter {}, seed {})",
        args.jitter, args.seed
    );
    println!("quad        TL {tl}  TR {tr}  BR {br}  BL {bl}");
    println!("side        {:.3} px", roi.quad.side);
    println!(
        "wrote       {} ({}x{})",
        args.out.display(),
        roi.pixels.width(),
        roi.pixels.height()
    );
    Ok(())
}

pub fn model_backend_unavailable() -> CliError {
    CliError::Usage(
        "model-file backends are not available in this build; use the oracle detector and stub embedder"
            .into(),
    )
}
