//! `cocon repro-table1`: the five-way loss-ablation comparison on the
//! synthetic benchmark, one CSV row per view.

use super::eval::report_csv;
use crate::config::ExperimentConfig;
use crate::rundir;
use cocon::eval::{evaluate, EvalReport};
use cocon::losses::Ablation;
use cocon::model::MultiViewModel;
use cocon::training::{train_phase1, train_phase2, TrainContext};
use cocon::Result;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

const COLUMNS: [&str; 5] = ["random", "cpc", "sim_cpc", "sync_cpc", "cocon"];

/// One seed's accuracies: column -> view -> top1.
pub fn run_ladder(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<BTreeMap<String, EvalReport>> {
    let mut cfg = config.clone();
    cfg.train.seed = seed;
    let resolved = cfg.resolve()?;
    let manifest = cocon::data::make_dataset(&resolved.dataset)?;
    let ctx = TrainContext {
        dataset: &manifest,
        model_cfg: &resolved.model,
        loss_cfg: &resolved.loss,
        train_cfg: &resolved.train,
    };
    let mut out = BTreeMap::new();

    let specs = resolved
        .model
        .specs(&manifest.config.views, manifest.config.blocks.n_blocks);
    let random = MultiViewModel::init(&specs, seed)?;
    out.insert("random".into(), evaluate(&random, &manifest, &resolved.probe, "random")?);

    let phase1 = train_phase1(&ctx)?;
    out.insert("cpc".into(), evaluate(&phase1.model, &manifest, &resolved.probe, "cpc")?);

    for ablation in [Ablation::SimCpc, Ablation::SyncCpc, Ablation::Cocon] {
        let trained = train_phase2(&ctx, ablation, phase1.model.clone(), None)?;
        out.insert(
            ablation.name().into(),
            evaluate(&trained.model, &manifest, &resolved.probe, ablation.name())?,
        );
    }
    Ok(out)
}

pub fn run(config: &ExperimentConfig, run_dir: &Path, seeds: usize, force: bool) -> Result<()> {
    rundir::init_run_dir(run_dir, config)?;
    if rundir::already_done(run_dir, "repro_table1", force) {
        println!("ablation table already computed; use --force to rerun");
        return Ok(());
    }
    rundir::clear_marker(run_dir, "repro_table1");
    let views: Vec<String> = config.views()?.iter().map(|v| v.name().to_string()).collect();

    // column -> view -> sum of accuracies over seeds
    let mut sums: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for k in 0..seeds.max(1) as u64 {
        let seed = config.train.seed + k;
        println!("== seed {seed} ==");
        let ladder = run_ladder(config, seed)?;
        let seed_dir = run_dir.join(format!("seed{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        for (column, report) in &ladder {
            std::fs::write(
                seed_dir.join(format!("{column}.json")),
                serde_json::to_string_pretty(report)?,
            )?;
            std::fs::write(
                seed_dir.join(format!("{column}.csv")),
                report_csv(report, config.data.classes),
            )?;
            for (view, e) in &report.views {
                *sums.entry(column.clone()).or_default().entry(view.clone()).or_insert(0.0) +=
                    e.top1;
                println!("  {column:9} {view}: {:.4}", e.top1);
            }
        }
    }

    let n = seeds.max(1) as f64;
    let mut csv = String::from("view");
    for c in COLUMNS {
        csv += &format!(",{c}");
    }
    csv.push('\n');
    for view in &views {
        csv += view;
        for c in COLUMNS {
            let mean = sums.get(c).and_then(|m| m.get(view)).copied().unwrap_or(f64::NAN) / n;
            csv += &format!(",{mean:.4}");
        }
        csv.push('\n');
    }
    let path = run_dir.join("table1.csv");
    std::fs::File::create(&path)?.write_all(csv.as_bytes())?;
    println!("\n{csv}");
    println!("wrote {}", path.display());
    rundir::mark_done(run_dir, "repro_table1")
}
