//! `cocon analyze`: embedding export and the qualitative-analysis tasks.

use super::ensure_manifest;
use crate::config::ExperimentConfig;
use crate::rundir;
use cocon::analysis::{
    align_videos, class_consistency, export_embeddings, nearest_neighbors, project_2d,
    similarity_histograms, AlignConfig, EmbeddingStore, SimilarityHistograms,
};
use cocon::data::{generate_clip, SceneConfig, Split, ViewKind};
use cocon::model::load_checkpoint;
use cocon::{CoconError, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Export,
    Histograms,
    Consistency,
    Retrieve,
    Align,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    /// Which analysis to run.
    #[arg(long, value_enum)]
    pub task: Task,
    /// Checkpoint directory (export, align).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Embedding-store directory (histograms, consistency, retrieve).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Dataset split to export.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output name under <run>/analysis/ for export.
    #[arg(long, default_value = "embeddings")]
    pub name: String,
    /// View for histograms / align.
    #[arg(long, default_value = "rgb")]
    pub view: String,
    /// Neighbor classes per class (consistency).
    #[arg(long, default_value_t = 4)]
    pub top_m: usize,
    /// Minimum consistent neighbors for the summary count (consistency).
    #[arg(long, default_value_t = 3)]
    pub threshold: usize,
    /// Rank classes by per-video similarities instead of centroids.
    #[arg(long)]
    pub per_video: bool,
    /// Query video id (retrieve).
    #[arg(long)]
    pub query: Option<u64>,
    /// Neighbors to retrieve.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Alignment grid size in blocks.
    #[arg(long, default_value_t = 18)]
    pub blocks: usize,
    /// Scene class for clip A (align).
    #[arg(long, default_value_t = 0)]
    pub class_a: usize,
    #[arg(long, default_value_t = 1)]
    pub seed_a: u64,
    /// Scene class for clip B; defaults to clip A (self-alignment).
    #[arg(long)]
    pub class_b: Option<usize>,
    #[arg(long)]
    pub seed_b: Option<u64>,
    /// Exact motion period in frames for the generated clips (align).
    #[arg(long)]
    pub period: Option<f64>,
    /// 3x3 box smoothing of the alignment map.
    #[arg(long)]
    pub smooth: bool,
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CoconError::Config(format!("unknown split '{other}'"))),
    }
}

fn write_csv(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::File::create(path)?.write_all(content.as_bytes())?;
    Ok(())
}

fn histogram_csv(h: &SimilarityHistograms) -> String {
    let edges = SimilarityHistograms::bin_edges();
    let mut out = String::from("bin_lo,bin_hi,same_class,cross_class\n");
    for i in 0..h.same_class.len() {
        out += &format!(
            "{:.4},{:.4},{},{}\n",
            edges[i],
            edges[i + 1],
            h.same_class[i],
            h.cross_class[i]
        );
    }
    out
}

pub fn run(
    config: &ExperimentConfig,
    run_dir: &Path,
    args: &AnalyzeArgs,
    force: bool,
) -> Result<()> {
    rundir::init_run_dir(run_dir, config)?;
    let analysis_dir = run_dir.join("analysis");
    match args.task {
        Task::Export => {
            let tag = format!("analyze_export_{}", args.name);
            if rundir::already_done(run_dir, &tag, force) {
                println!("export '{}' already present; use --force", args.name);
                return Ok(());
            }
            rundir::clear_marker(run_dir, &tag);
            let checkpoint = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| CoconError::Config("--task export needs --checkpoint".into()))?;
            let manifest = ensure_manifest(config, run_dir)?;
            let model = load_checkpoint(checkpoint)?.model;
            let split = parse_split(&args.split)?;
            let provenance = checkpoint.display().to_string();
            let store = export_embeddings(&model, &manifest, split, &provenance)?;
            let out = analysis_dir.join(&args.name);
            store.save(&out)?;
            // Quick-look 2-d projection of the context vectors per view.
            let mut csv = String::from("view,video,label,x,y\n");
            for view in store.views() {
                let rows = store.context_rows(view);
                let mut sub = ndarray::Array2::<f32>::zeros((rows.len(), store.dim));
                for (i, &r) in rows.iter().enumerate() {
                    sub.row_mut(i).assign(&store.vector(r));
                }
                if rows.len() >= 3 {
                    let proj = project_2d(&sub)?;
                    for (i, &r) in rows.iter().enumerate() {
                        csv += &format!(
                            "{view},{},{},{:.5},{:.5}\n",
                            store.records[r].video,
                            store.records[r].label,
                            proj[[i, 0]],
                            proj[[i, 1]]
                        );
                    }
                }
            }
            write_csv(&out.join("pca2d.csv"), &csv)?;
            println!("exported {} vectors to {}", store.len(), out.display());
            rundir::mark_done(run_dir, &tag)
        }
        Task::Histograms => {
            let store_dir = args
                .store
                .as_ref()
                .ok_or_else(|| CoconError::Config("--task histograms needs --store".into()))?;
            let view: ViewKind = args.view.parse()?;
            let tag = format!("analyze_histograms_{view}");
            if rundir::already_done(run_dir, &tag, force) {
                println!("histograms for {view} already present; use --force");
                return Ok(());
            }
            rundir::clear_marker(run_dir, &tag);
            let store = EmbeddingStore::load(store_dir)?;
            let h = similarity_histograms(&store, view)?;
            write_csv(&analysis_dir.join(format!("histograms_{view}.csv")), &histogram_csv(&h))?;
            std::fs::write(
                analysis_dir.join(format!("histograms_{view}.json")),
                serde_json::to_string_pretty(&h)?,
            )?;
            println!(
                "{view}: mean same {:.4}, mean cross {:.4}, separation {:.4}",
                h.mean_same, h.mean_cross, h.separation
            );
            rundir::mark_done(run_dir, &tag)
        }
        Task::Consistency => {
            let store_dir = args
                .store
                .as_ref()
                .ok_or_else(|| CoconError::Config("--task consistency needs --store".into()))?;
            let tag = format!("analyze_consistency_m{}_t{}", args.top_m, args.threshold);
            if rundir::already_done(run_dir, &tag, force) {
                println!("consistency already computed; use --force");
                return Ok(());
            }
            rundir::clear_marker(run_dir, &tag);
            let store = EmbeddingStore::load(store_dir)?;
            let c = class_consistency(&store, args.top_m, args.threshold, !args.per_video)?;
            std::fs::create_dir_all(&analysis_dir)?;
            std::fs::write(
                analysis_dir.join("consistency.json"),
                serde_json::to_string_pretty(&c)?,
            )?;
            println!(
                "classes with >= {} of top-{} neighbors consistent across views: {}",
                args.threshold, args.top_m, c.consistent_class_count
            );
            rundir::mark_done(run_dir, &tag)
        }
        Task::Retrieve => {
            let store_dir = args
                .store
                .as_ref()
                .ok_or_else(|| CoconError::Config("--task retrieve needs --store".into()))?;
            let query = args
                .query
                .ok_or_else(|| CoconError::Config("--task retrieve needs --query".into()))?;
            let tag = format!("analyze_retrieve_q{query}_k{}", args.k);
            if rundir::already_done(run_dir, &tag, force) {
                println!("retrieval already computed; use --force");
                return Ok(());
            }
            rundir::clear_marker(run_dir, &tag);
            let store = EmbeddingStore::load(store_dir)?;
            let r = nearest_neighbors(&store, query, args.k)?;
            std::fs::create_dir_all(&analysis_dir)?;
            std::fs::write(
                analysis_dir.join(format!("retrieve_q{query}.json")),
                serde_json::to_string_pretty(&r)?,
            )?;
            println!(
                "query {} (class {}): precision@{} = {:.3}",
                query, r.query_label, args.k, r.precision_at_k
            );
            for (video, sim, label) in &r.ranked {
                println!("  video {video} (class {label}) sim {sim:.4}");
            }
            rundir::mark_done(run_dir, &tag)
        }
        Task::Align => {
            let checkpoint = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| CoconError::Config("--task align needs --checkpoint".into()))?;
            let tag = format!(
                "analyze_align_{}_{}_{}",
                args.class_a,
                args.seed_a,
                args.blocks
            );
            if rundir::already_done(run_dir, &tag, force) {
                println!("alignment already computed; use --force");
                return Ok(());
            }
            rundir::clear_marker(run_dir, &tag);
            let resolved = config.resolve()?;
            let model = load_checkpoint(checkpoint)?.model;
            let view: ViewKind = args.view.parse()?;
            let align_cfg = AlignConfig {
                view,
                blocks: args.blocks,
                frames_per_block: resolved.dataset.blocks.frames_per_block,
                stride: resolved.dataset.blocks.stride,
                crop_margin: resolved.dataset.crop_margin,
                smooth: args.smooth,
            };
            let spec = cocon::data::BlockSpec::new(
                args.blocks,
                align_cfg.frames_per_block,
                align_cfg.stride,
            );
            let mk_scene = |class: usize, seed: u64| {
                let mut s = SceneConfig::new(
                    class,
                    resolved.dataset.classes,
                    resolved.dataset.render_size(),
                    spec.consumed_frames(),
                    seed,
                );
                s.period_frames = args.period;
                s
            };
            let clip_a = generate_clip(&mk_scene(args.class_a, args.seed_a), &[view])?;
            let clip_b = generate_clip(
                &mk_scene(
                    args.class_b.unwrap_or(args.class_a),
                    args.seed_b.unwrap_or(args.seed_a),
                ),
                &[view],
            )?;
            let map = align_videos(&model, &clip_a, &clip_b, &align_cfg)?;
            let mut csv = String::new();
            for row in map.normalized.rows() {
                csv += &row.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",");
                csv.push('\n');
            }
            write_csv(&analysis_dir.join("alignment.csv"), &csv)?;
            let mut raw_csv = String::new();
            for row in map.raw.rows() {
                raw_csv +=
                    &row.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",");
                raw_csv.push('\n');
            }
            write_csv(&analysis_dir.join("alignment_raw.csv"), &raw_csv)?;
            std::fs::write(
                analysis_dir.join("alignment_meta.json"),
                serde_json::to_string_pretty(&map.meta)?,
            )?;
            println!(
                "alignment {}x{} written; row argmax: {:?}",
                args.blocks,
                args.blocks,
                map.row_argmax()
            );
            rundir::mark_done(run_dir, &tag)
        }
    }
}
