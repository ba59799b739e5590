//! `cocon dataset`: build the clip manifest for a run.

use crate::config::ExperimentConfig;
use crate::rundir;
use cocon::Result;
use std::path::Path;

pub fn run(config: &ExperimentConfig, run_dir: &Path, force: bool) -> Result<()> {
    rundir::init_run_dir(run_dir, config)?;
    if rundir::already_done(run_dir, "dataset", force) {
        println!("dataset already built in {}; use --force to rebuild", run_dir.display());
        return Ok(());
    }
    rundir::clear_marker(run_dir, "dataset");
    let resolved = config.resolve()?;
    let manifest = cocon::data::make_dataset(&resolved.dataset)?;
    let path = run_dir.join("manifest.jsonl");
    manifest.save(&path)?;
    println!(
        "wrote {} ({} clips, {} classes, views: {})",
        path.display(),
        manifest.records.len(),
        resolved.dataset.classes,
        resolved
            .dataset
            .views
            .iter()
            .map(|v| v.name())
            .collect::<Vec<_>>()
            .join(",")
    );
    rundir::mark_done(run_dir, "dataset")
}
