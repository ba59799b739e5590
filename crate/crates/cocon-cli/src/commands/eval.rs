//! `cocon eval`: linear-probe or fine-tune classification of a checkpoint
//! (or a random initialization).

use super::ensure_manifest;
use crate::config::ExperimentConfig;
use crate::rundir;
use cocon::eval::{evaluate, EvalReport, ProbeMode};
use cocon::model::{load_checkpoint, MultiViewModel};
use cocon::{CoconError, Result};
use std::io::Write;
use std::path::Path;

/// Write the comparison row format shared by eval and the ablation table.
pub fn report_csv(report: &EvalReport, classes: usize) -> String {
    let mut out = String::from("config,view,top1");
    for c in 0..classes {
        out += &format!(",class{c}");
    }
    out.push('\n');
    for (view, e) in &report.views {
        out += &format!("{},{view},{:.4}", report.init, e.top1);
        for acc in &e.per_class {
            out += &format!(",{acc:.4}");
        }
        out.push('\n');
    }
    if let Some(ens) = report.ensemble_top1 {
        out += &format!("{},ensemble,{ens:.4}\n", report.init);
    }
    out
}

pub fn run(
    config: &ExperimentConfig,
    run_dir: &Path,
    init: &str,
    mode_flag: Option<&str>,
    force: bool,
) -> Result<()> {
    rundir::init_run_dir(run_dir, config)?;
    let resolved = config.resolve()?;
    let manifest = ensure_manifest(config, run_dir)?;

    let (model, init_name): (MultiViewModel, String) = if init == "random" {
        let specs = resolved
            .model
            .specs(&manifest.config.views, manifest.config.blocks.n_blocks);
        (MultiViewModel::init(&specs, resolved.train.seed)?, "random".into())
    } else {
        let path = {
            let p = Path::new(init);
            if p.exists() {
                p.to_path_buf()
            } else {
                run_dir.join(init)
            }
        };
        if !path.exists() {
            return Err(CoconError::NotFound(format!("checkpoint {}", path.display())));
        }
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint".into());
        (load_checkpoint(&path)?.model, name)
    };

    let mut probe = resolved.probe;
    if let Some(mode) = mode_flag {
        probe.mode = match mode {
            "probe" => ProbeMode::LinearProbe,
            "finetune" => ProbeMode::Finetune,
            other => {
                return Err(CoconError::Config(format!(
                    "unknown eval mode '{other}' (probe | finetune)"
                )))
            }
        };
    }
    let mode_name = match probe.mode {
        ProbeMode::LinearProbe => "probe",
        ProbeMode::Finetune => "finetune",
    };
    let tag = format!("eval_{init_name}_{mode_name}");
    if rundir::already_done(run_dir, &tag, force) {
        println!("{tag} already evaluated; use --force to rerun");
        return Ok(());
    }
    rundir::clear_marker(run_dir, &tag);

    let report = evaluate(&model, &manifest, &probe, &init_name)?;
    let eval_dir = run_dir.join("eval");
    std::fs::create_dir_all(&eval_dir)?;
    let json_path = eval_dir.join(format!("{init_name}_{mode_name}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    let csv_path = eval_dir.join(format!("{init_name}_{mode_name}.csv"));
    let mut f = std::fs::File::create(&csv_path)?;
    f.write_all(report_csv(&report, manifest.config.classes).as_bytes())?;

    for (view, e) in &report.views {
        println!("{init_name} {view}: top1 {:.4}", e.top1);
    }
    if let Some(ens) = report.ensemble_top1 {
        println!("{init_name} ensemble: top1 {ens:.4}");
    }
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    rundir::mark_done(run_dir, &tag)
}
