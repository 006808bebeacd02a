use std::io::Write;

use satsynth_service::{serve_on, Models, Service, ServiceConfig};

use crate::config::{ModelKind, RunConfig};
use crate::data::{load_model, load_optional, require_data_root};
use crate::error::CliError;

/// Loads the image model (and the basemap model when present) and serves
/// the API until the process is stopped. Prints `listening <addr>` once
/// the socket is bound.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let root = require_data_root(cfg)?;
    let s = &cfg.serve;
    let (image, _) = load_model(cfg, ModelKind::Image, s.source)?;
    let basemap = load_optional(cfg, ModelKind::Basemap, s.source)?.map(|m| m.0);
    if basemap.is_none() {
        log::warn!("no basemap model for {}; two-stage jobs are disabled", s.source);
    }
    let sc = ServiceConfig {
        workers: cfg.workers.service,
        edit_margin: s.edit_margin,
        cfg_scale: s.cfg_scale,
        ..ServiceConfig::new(root)
    };
    let svc = Service::open(sc, Models::new(image, basemap)).map_err(|e| CliError::Data(e.to_string()))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&s.addr)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {}: {e}", s.addr)))?;
        let local = listener.local_addr()?;
        println!("listening {local}");
        std::io::stdout().flush()?;
        serve_on(svc, listener).await?;
        Ok(())
    })
}
