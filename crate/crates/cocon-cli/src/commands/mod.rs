pub mod analyze;
pub mod dataset;
pub mod eval;
pub mod table1;
pub mod train;

use crate::config::ExperimentConfig;
use cocon::data::DatasetManifest;
use cocon::Result;
use std::path::Path;

/// Load the run's dataset manifest, building it first if absent.
pub fn ensure_manifest(config: &ExperimentConfig, run_dir: &Path) -> Result<DatasetManifest> {
    let path = run_dir.join("manifest.jsonl");
    if path.exists() {
        DatasetManifest::load(&path)
    } else {
        let resolved = config.resolve()?;
        let manifest = cocon::data::make_dataset(&resolved.dataset)?;
        manifest.save(&path)?;
        println!("built dataset manifest: {} clips -> {}", manifest.records.len(), path.display());
        Ok(manifest)
    }
}
