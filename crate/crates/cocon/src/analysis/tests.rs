use super::*;
use crate::data::{
    generate_clip, make_dataset, BlockSpec, DatasetConfig, SceneConfig, Split, ViewKind,
};
use crate::error::CoconError;
use crate::model::MultiViewModel;
use crate::training::ModelConfig;
use ndarray::{arr2, Array2};

fn tiny_manifest() -> crate::data::DatasetManifest {
    make_dataset(&DatasetConfig {
        classes: 4,
        clips: 24,
        frame_size: 16,
        crop_margin: 2,
        blocks: BlockSpec::new(3, 2, 1),
        views: vec![ViewKind::Rgb, ViewKind::Flow],
        seed: 23,
        ..Default::default()
    })
    .unwrap()
}

fn tiny_model(manifest: &crate::data::DatasetManifest) -> MultiViewModel {
    let cfg = ModelConfig { embed_dim: 8, depth: 2, width: 4, dropout: 0.1, pred_steps: Some(1) };
    MultiViewModel::init(
        &cfg.specs(&manifest.config.views, manifest.config.blocks.n_blocks),
        2,
    )
    .unwrap()
}

/// Store with one context vector per (video, view) from explicit rows.
fn store_from_rows(
    rows_per_view: Vec<(ViewKind, Array2<f32>)>,
    labels: &[usize],
) -> EmbeddingStore {
    let dim = rows_per_view[0].1.ncols();
    let mut records = Vec::new();
    let mut data = Vec::new();
    for (view, rows) in &rows_per_view {
        for (video, row) in rows.rows().into_iter().enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
            records.push(EmbeddingRecord {
                video: video as u64,
                view: *view,
                block: None,
                label: labels[video],
            });
            data.extend(row.iter().map(|v| v / norm));
        }
    }
    EmbeddingStore {
        dim,
        provenance: "test".into(),
        vectors: Array2::from_shape_vec((records.len(), dim), data).unwrap(),
        records,
    }
}

// -- export ------------------------------------------------------------------

#[test]
fn export_row_counts_and_unit_norm() {
    let manifest = tiny_manifest();
    let model = tiny_model(&manifest);
    let store = export_embeddings(&model, &manifest, Split::Test, "test").unwrap();
    let n_test = manifest.indices(Split::Test).len();
    let n_views = 2;
    let n_blocks = manifest.config.blocks.n_blocks;
    let contexts: usize =
        store.records.iter().filter(|r| r.block.is_none()).count();
    assert_eq!(contexts, n_test * n_views);
    assert_eq!(store.len(), n_test * n_views * (1 + n_blocks));
    for row in store.vectors.rows() {
        let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
}

#[test]
fn export_is_deterministic_and_roundtrips() {
    let manifest = tiny_manifest();
    let model = tiny_model(&manifest);
    let a = export_embeddings(&model, &manifest, Split::Val, "test").unwrap();
    let b = export_embeddings(&model, &manifest, Split::Val, "test").unwrap();
    assert_eq!(a.vectors, b.vectors);
    assert_eq!(a.records, b.records);

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let loaded = EmbeddingStore::load(dir.path()).unwrap();
    assert_eq!(a.vectors, loaded.vectors);
    assert_eq!(a.records, loaded.records);
}

#[test]
fn export_with_missing_view_errors() {
    let manifest = tiny_manifest();
    let cfg = ModelConfig { embed_dim: 8, depth: 2, width: 4, dropout: 0.1, pred_steps: Some(1) };
    let model =
        MultiViewModel::init(&cfg.specs(&[ViewKind::Rgb], 3), 2).unwrap();
    assert!(matches!(
        export_embeddings(&model, &manifest, Split::Test, "x"),
        Err(CoconError::NotFound(_))
    ));
}

// -- histograms ----------------------------------------------------------------

#[test]
fn identical_embeddings_are_point_masses_at_one() {
    let rows = Array2::from_elem((6, 4), 0.5f32);
    let store = store_from_rows(vec![(ViewKind::Rgb, rows)], &[0, 0, 0, 1, 1, 1]);
    let h = similarity_histograms(&store, ViewKind::Rgb).unwrap();
    let last_bin = h.same_class.len() - 1;
    assert_eq!(h.same_class.iter().sum::<usize>(), h.same_class[last_bin]);
    assert_eq!(h.cross_class.iter().sum::<usize>(), h.cross_class[last_bin]);
    assert!((h.separation).abs() < 1e-9);
}

#[test]
fn orthogonal_clusters_separate_fully() {
    let rows = arr2(&[
        [1.0f32, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ]);
    let store = store_from_rows(vec![(ViewKind::Rgb, rows)], &[0, 0, 1, 1]);
    let h = similarity_histograms(&store, ViewKind::Rgb).unwrap();
    assert!((h.mean_same - 1.0).abs() < 1e-9);
    assert!(h.mean_cross.abs() < 1e-9);
    assert!((h.separation - 1.0).abs() < 1e-9);
}

#[test]
fn separation_matches_double_loop_oracle() {
    // Enough clips that every class keeps >= 2 test samples.
    let manifest = make_dataset(&DatasetConfig {
        classes: 4,
        clips: 60,
        frame_size: 16,
        crop_margin: 2,
        blocks: BlockSpec::new(3, 2, 1),
        views: vec![ViewKind::Rgb, ViewKind::Flow],
        seed: 23,
        ..Default::default()
    })
    .unwrap();
    let model = tiny_model(&manifest);
    let store = export_embeddings(&model, &manifest, Split::Test, "t").unwrap();
    let h = similarity_histograms(&store, ViewKind::Rgb).unwrap();
    // Independent loop over pairs, honoring the same skip rule for
    // undersampled classes.
    let rows: Vec<usize> = store
        .context_rows(ViewKind::Rgb)
        .into_iter()
        .filter(|&r| !h.skipped_classes.contains(&store.records[r].label))
        .collect();
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let s: f64 = store
                .vector(rows[i])
                .iter()
                .zip(store.vector(rows[j]).iter())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            if store.records[rows[i]].label == store.records[rows[j]].label {
                same.push(s);
            } else {
                cross.push(s);
            }
        }
    }
    let want = same.iter().sum::<f64>() / same.len() as f64
        - cross.iter().sum::<f64>() / cross.len() as f64;
    assert!((h.separation - want).abs() < 1e-6);
}

#[test]
fn undersampled_class_is_skipped_with_warning() {
    let rows = arr2(&[[1.0f32, 0.0], [0.9, 0.1], [0.0, 1.0]]);
    let store = store_from_rows(vec![(ViewKind::Rgb, rows)], &[0, 0, 1]);
    let h = similarity_histograms(&store, ViewKind::Rgb).unwrap();
    assert_eq!(h.skipped_classes, vec![1]);
    assert_eq!(h.cross_class.iter().sum::<usize>(), 0);
}

// -- consistency ---------------------------------------------------------------

fn clustered_rows(classes: usize, per_class: usize, dim: usize, seed: u64) -> Array2<f32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Array2::<f32>::zeros((classes * per_class, dim));
    for c in 0..classes {
        let mut center = vec![0f32; dim];
        for v in center.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for i in 0..per_class {
            for j in 0..dim {
                rows[[c * per_class + i, j]] = center[j] + rng.gen_range(-0.05..0.05);
            }
        }
    }
    rows
}

#[test]
fn identical_views_are_fully_consistent() {
    let rows = clustered_rows(6, 3, 8, 41);
    let labels: Vec<usize> = (0..18).map(|i| i / 3).collect();
    let store = store_from_rows(
        vec![(ViewKind::Rgb, rows.clone()), (ViewKind::Flow, rows)],
        &labels,
    );
    let c = class_consistency(&store, 4, 3, true).unwrap();
    assert_eq!(c.consistent_class_count, 6);
    for (class, inter) in c.consistent.iter().enumerate() {
        let mut want = c.per_view["rgb"][class].clone();
        want.sort_unstable();
        assert_eq!(inter, &want);
    }
}

#[test]
fn independent_random_views_have_low_consistency() {
    let labels: Vec<usize> = (0..32).map(|i| i / 4).collect();
    let store = store_from_rows(
        vec![
            (ViewKind::Rgb, clustered_rows(8, 4, 8, 1)),
            (ViewKind::Flow, clustered_rows(8, 4, 8, 2)),
            (ViewKind::Mask, clustered_rows(8, 4, 8, 3)),
            (ViewKind::Heatmap, clustered_rows(8, 4, 8, 4)),
        ],
        &labels,
    );
    let c = class_consistency(&store, 4, 3, true).unwrap();
    // Null model: intersection of independent top-4-of-7 lists across four
    // views almost never keeps 3+ classes.
    assert!(c.consistent_class_count <= 2, "got {}", c.consistent_class_count);
}

#[test]
fn consistency_invariant_to_orthogonal_rotation() {
    let rows = clustered_rows(5, 4, 4, 77);
    let labels: Vec<usize> = (0..20).map(|i| i / 4).collect();
    // Gram-Schmidt an arbitrary matrix into a rotation.
    let basis = [
        [0.6f32, 0.8, 0.0, 0.0],
        [-0.8, 0.6, 0.0, 0.0],
        [0.0, 0.0, 0.28, 0.96],
        [0.0, 0.0, -0.96, 0.28],
    ];
    let q = Array2::from_shape_fn((4, 4), |(i, j)| basis[i][j]);
    let rotated = rows.dot(&q);
    let base = store_from_rows(
        vec![(ViewKind::Rgb, rows.clone()), (ViewKind::Flow, clustered_rows(5, 4, 4, 78))],
        &labels,
    );
    let rot = store_from_rows(
        vec![(ViewKind::Rgb, rotated), (ViewKind::Flow, clustered_rows(5, 4, 4, 78))],
        &labels,
    );
    let a = class_consistency(&base, 3, 2, true).unwrap();
    let b = class_consistency(&rot, 3, 2, true).unwrap();
    assert_eq!(a.per_view["rgb"], b.per_view["rgb"]);
    assert_eq!(a.consistent_class_count, b.consistent_class_count);
}

#[test]
fn consistency_needs_two_views() {
    let rows = clustered_rows(4, 2, 4, 5);
    let labels: Vec<usize> = (0..8).map(|i| i / 2).collect();
    let store = store_from_rows(vec![(ViewKind::Rgb, rows)], &labels);
    assert!(class_consistency(&store, 2, 2, true).is_err());
}

// -- retrieval -----------------------------------------------------------------

#[test]
fn duplicated_clip_is_nearest_neighbor() {
    let rows = arr2(&[
        [1.0f32, 0.0, 0.0],
        [1.0, 0.0, 0.0], // duplicate of video 0
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ]);
    let store = store_from_rows(vec![(ViewKind::Rgb, rows)], &[0, 0, 1, 1]);
    let r = nearest_neighbors(&store, 0, 1).unwrap();
    assert_eq!(r.ranked[0].0, 1);
    assert!((r.ranked[0].1 - 1.0).abs() < 1e-6);
    assert_eq!(r.precision_at_k, 1.0);
}

#[test]
fn ranking_matches_full_sort_oracle() {
    let manifest = tiny_manifest();
    let model = tiny_model(&manifest);
    let store = export_embeddings(&model, &manifest, Split::Test, "t").unwrap();
    let query = store.records[0].video;
    let k = 3;
    let got = nearest_neighbors(&store, query, k).unwrap();
    // Oracle: sort every candidate by similarity.
    let qrow = store
        .records
        .iter()
        .position(|r| r.video == query && r.block.is_none())
        .unwrap();
    let view = store.records[qrow].view;
    let mut all: Vec<(u64, f64)> = store
        .context_rows(view)
        .into_iter()
        .filter(|&r| store.records[r].video != query)
        .map(|r| {
            let s = store
                .vector(r)
                .iter()
                .zip(store.vector(qrow).iter())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum::<f64>();
            (store.records[r].video, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for (i, (video, sim)) in all.into_iter().take(k).enumerate() {
        assert_eq!(got.ranked[i].0, video);
        assert!((got.ranked[i].1 - sim).abs() < 1e-9);
    }
}

#[test]
fn oversized_k_rejected() {
    let rows = arr2(&[[1.0f32, 0.0], [0.0, 1.0]]);
    let store = store_from_rows(vec![(ViewKind::Rgb, rows)], &[0, 1]);
    assert!(nearest_neighbors(&store, 0, 5).is_err());
}

// -- alignment -----------------------------------------------------------------

fn align_setup() -> (MultiViewModel, crate::data::MultiViewClip, AlignConfig) {
    let cfg = AlignConfig {
        view: ViewKind::Rgb,
        blocks: 6,
        frames_per_block: 1,
        stride: 1,
        crop_margin: 2,
        smooth: false,
    };
    let mut scene = SceneConfig::new(0, 8, 20, 6, 31);
    scene.period_frames = Some(6.0);
    let clip = generate_clip(&scene, &[ViewKind::Rgb]).unwrap();
    let model_cfg =
        ModelConfig { embed_dim: 8, depth: 2, width: 4, dropout: 0.1, pred_steps: Some(1) };
    let model = MultiViewModel::init(&model_cfg.specs(&[ViewKind::Rgb], 6), 3).unwrap();
    (model, clip, cfg)
}

#[test]
fn self_alignment_argmax_is_diagonal() {
    let (model, clip, cfg) = align_setup();
    let map = align_videos(&model, &clip, &clip, &cfg).unwrap();
    assert_eq!(map.row_argmax(), vec![0, 1, 2, 3, 4, 5]);
    for row in map.normalized.rows() {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| (-1e-12..=1.0 + 1e-9).contains(&v)));
    }
}

#[test]
fn time_reversed_clip_aligns_anti_diagonally() {
    let (model, clip, cfg) = align_setup();
    let mut reversed = clip.clone();
    for frames in reversed.views.values_mut() {
        *frames = frames.slice(ndarray::s![..;-1, .., .., ..]).to_owned();
    }
    let map = align_videos(&model, &clip, &reversed, &cfg).unwrap();
    assert_eq!(map.row_argmax(), vec![5, 4, 3, 2, 1, 0]);
}

#[test]
fn alignment_rejects_short_clips() {
    let (model, clip, mut cfg) = align_setup();
    cfg.blocks = 18;
    assert!(matches!(
        align_videos(&model, &clip, &clip, &cfg),
        Err(CoconError::Contract(_))
    ));
}

#[test]
fn smoothing_is_flagged_and_keeps_rows_stochastic() {
    let (model, clip, mut cfg) = align_setup();
    cfg.smooth = true;
    let map = align_videos(&model, &clip, &clip, &cfg).unwrap();
    assert!(map.meta.smoothed);
    for row in map.normalized.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
