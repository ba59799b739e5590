//! Embedding export: one context vector per clip per view plus per-block
//! vectors, unit-normalized, with a binary blob + JSON manifest on disk.

use crate::data::{DatasetManifest, Split, ViewKind};
use crate::error::{CoconError, Result};
use crate::model::{ForwardCtx, MultiViewModel};
use crate::tensor::Tape;
use crate::training::load_eval_batch;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use std::io::{BufReader, BufWriter};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EmbeddingRecord {
    /// Clip index in the dataset manifest.
    pub video: u64,
    pub view: ViewKind,
    /// `None` marks the clip-level context vector, `Some(j)` block `j`.
    pub block: Option<usize>,
    pub label: usize,
}

/// Exported embeddings with their provenance. All vectors unit-norm.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub provenance: String,
    pub records: Vec<EmbeddingRecord>,
    pub vectors: Array2<f32>,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn views(&self) -> Vec<ViewKind> {
        let mut v: Vec<ViewKind> = self.records.iter().map(|r| r.view).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Row indices of context vectors for one view, in record order.
    pub fn context_rows(&self, view: ViewKind) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.view == view && r.block.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn vector(&self, row: usize) -> ndarray::ArrayView1<'_, f32> {
        self.vectors.row(row)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut blob = BufWriter::new(std::fs::File::create(dir.join("vectors.bin"))?);
        for v in self.vectors.iter() {
            blob.write_f32::<LittleEndian>(*v)?;
        }
        drop(blob);
        let manifest = serde_json::json!({
            "format": "cocon-embeddings-v1",
            "dim": self.dim,
            "count": self.records.len(),
            "provenance": self.provenance,
            "records": self.records,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Manifest {
            format: String,
            dim: usize,
            count: usize,
            provenance: String,
            records: Vec<EmbeddingRecord>,
        }
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != "cocon-embeddings-v1" {
            return Err(CoconError::Config(format!("unknown store format {}", manifest.format)));
        }
        let mut blob = BufReader::new(std::fs::File::open(dir.join("vectors.bin"))?);
        let mut data = vec![0f32; manifest.count * manifest.dim];
        blob.read_f32_into::<LittleEndian>(&mut data)?;
        Ok(EmbeddingStore {
            dim: manifest.dim,
            provenance: manifest.provenance,
            records: manifest.records,
            vectors: Array2::from_shape_vec((manifest.count, manifest.dim), data)
                .map_err(|e| CoconError::Config(e.to_string()))?,
        })
    }
}

fn normalize_rows(m: &mut Array2<f32>) {
    for mut row in m.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
        row.mapv_inplace(|v| v / norm);
    }
}

/// Export context + per-block embeddings for every clip of `split` across
/// every view in the model. Deterministic (eval mode, center crops).
pub fn export_embeddings(
    model: &MultiViewModel,
    manifest: &DatasetManifest,
    split: Split,
    provenance: &str,
) -> Result<EmbeddingStore> {
    let indices = manifest.indices(split);
    if indices.is_empty() {
        return Err(CoconError::contract("split has no clips to export"));
    }
    for view in &manifest.config.views {
        model.view(*view)?;
    }
    let n_blocks = manifest.config.blocks.n_blocks;
    let dim = model.views.values().next().unwrap().spec.embed_dim;
    let mut records = Vec::new();
    let mut rows: Vec<f32> = Vec::new();

    for chunk in indices.chunks(16) {
        let batch = load_eval_batch(manifest, chunk)?;
        for (&view, _) in &model.views {
            let tape: Tape<f32> = Tape::inference();
            let bound = model.view(view)?.bind(&tape);
            let blocks = tape.input(batch.views[&view].clone());
            let ctx = bound
                .context_vector(blocks, n_blocks, &mut ForwardCtx::eval())?
                .l2_normalize_last()
                .to_array();
            let per_block = bound.block_embeddings(blocks)?.l2_normalize_last().to_array();
            for (bi, &clip) in chunk.iter().enumerate() {
                let label = manifest.records[clip].class;
                records.push(EmbeddingRecord {
                    video: clip as u64,
                    view,
                    block: None,
                    label,
                });
                rows.extend((0..dim).map(|j| ctx[[bi, j]]));
                for block in 0..n_blocks {
                    records.push(EmbeddingRecord {
                        video: clip as u64,
                        view,
                        block: Some(block),
                        label,
                    });
                    rows.extend((0..dim).map(|j| per_block[[bi, block, j]]));
                }
            }
        }
    }
    let mut vectors = Array2::from_shape_vec((records.len(), dim), rows)
        .map_err(|e| CoconError::Config(e.to_string()))?;
    normalize_rows(&mut vectors);
    Ok(EmbeddingStore { dim, provenance: provenance.to_string(), records, vectors })
}
