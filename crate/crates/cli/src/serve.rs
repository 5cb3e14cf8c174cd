use crate::error::{CliError, Result};
use crate::roi::model_backend_unavailable;
use crate::{Backend, ServeArgs};
use palmverify_core::geometry::BoxSizing;
use palmverify_core::matching::StubEmbedder;
use palmverify_core::pipeline::PipelineConfig;
use palmverify_service::backend::oracle_from_dir;
use palmverify_service::{AppState, TemplateStore};
use std::io::Write;
use std::sync::Arc;

pub fn run(args: &ServeArgs) -> Result<()> {
    if args.backend == Backend::Model {
        return Err(model_backend_unavailable());
    }
    if !args.threshold.is_finite() {
        return Err(CliError::Usage(format!(
            "threshold {} is not finite",
            args.threshold
        )));
    }
    let oracle_dir = args
        .oracle_dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("--oracle-dir is required by the oracle backend".into()))?;
    let store = TemplateStore::open(&args.store)
        .map_err(|e| CliError::Data(format!("cannot open template store: {e}")))?;
    let detector = oracle_from_dir(oracle_dir, &BoxSizing::default())
        .map_err(|e| CliError::Data(format!("cannot load oracle detections: {e}")))?;
    let registered = detector.len();
    let state = AppState::new(
        Arc::new(detector),
        Arc::new(StubEmbedder::new(args.embedder_seed)),
        PipelineConfig {
            conf_min: args.conf_min,
            ..PipelineConfig::default()
        },
        args.threshold,
        store,
    );

    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .map_err(|e| CliError::Data(format!("cannot listen on {}: {e}", args.addr)))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::Data(e.to_string()))?;
        println!("threshold T = {}", args.threshold);
        println!("oracle detector: {registered} registered images");
        println!("template store: {}", args.store.display());
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        palmverify_service::serve(listener, state)
            .await
            .map_err(|e| CliError::Data(format!("server error: {e}")))
    })
}
