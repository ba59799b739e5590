//! Checkpoints: a flat little-endian f32 blob plus a JSON manifest.

use super::{EncoderSpec, MultiViewModel, ViewModel};
use crate::data::ViewKind;
use crate::error::{CoconError, Result};
use crate::training::{Adam, AdamConfig};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

const FORMAT: &str = "cocon-checkpoint-v1";

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub phase: String,
    pub epoch: usize,
    pub step: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ViewEntry {
    view_id: ViewKind,
    spec: EncoderSpec,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element (not byte) offset into the blob.
    offset: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct AdamEntry {
    t: u64,
    config: AdamConfig,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    format: String,
    #[serde(flatten)]
    meta: CheckpointMeta,
    views: Vec<ViewEntry>,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamEntry>,
}

/// Write `manifest.json` + `params.bin` under `dir`. Optimizer moments ride
/// along as `adam.m.*` / `adam.v.*` tensors so training resumes exactly.
pub fn save_checkpoint(
    dir: &Path,
    model: &MultiViewModel,
    opt: Option<&Adam<f32>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tensors: Vec<(String, ArrayD<f32>)> = Vec::new();
    model.visit_params(|name, p| tensors.push((name, p.clone())));
    if let Some(opt) = opt {
        for (name, (m, v)) in opt.state_entries() {
            tensors.push((format!("adam.m.{name}"), m.clone()));
            tensors.push((format!("adam.v.{name}"), v.clone()));
        }
    }

    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0usize;
    let mut blob = BufWriter::new(std::fs::File::create(dir.join("params.bin"))?);
    for (name, t) in &tensors {
        entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.len();
        for &v in t.as_standard_layout().as_slice().unwrap() {
            blob.write_f32::<LittleEndian>(v)?;
        }
    }
    drop(blob);

    let manifest = Manifest {
        format: FORMAT.to_string(),
        meta: meta.clone(),
        views: model
            .views
            .iter()
            .map(|(&view_id, m)| ViewEntry { view_id, spec: m.spec.clone() })
            .collect(),
        tensors: entries,
        adam: opt.map(|o| AdamEntry { t: o.step_count(), config: *o.config() }),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub model: MultiViewModel,
    pub optimizer: Option<Adam<f32>>,
    pub meta: CheckpointMeta,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(CoconError::NotFound(format!("checkpoint manifest {manifest_path:?}")));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    if manifest.format != FORMAT {
        return Err(CoconError::Config(format!("unknown checkpoint format {}", manifest.format)));
    }

    let mut blob = BufReader::new(std::fs::File::open(dir.join("params.bin"))?);
    let mut by_name: BTreeMap<String, ArrayD<f32>> = BTreeMap::new();
    for entry in &manifest.tensors {
        let len: usize = entry.shape.iter().product();
        let mut data = vec![0f32; len];
        blob.read_f32_into::<LittleEndian>(&mut data)?;
        by_name.insert(
            entry.name.clone(),
            ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
                .map_err(|e| CoconError::Config(format!("bad tensor shape in manifest: {e}")))?,
        );
    }

    let mut views = BTreeMap::new();
    for entry in &manifest.views {
        let mut model = ViewModel::init(entry.spec.clone(), 0)?;
        let mut missing = Vec::new();
        model.visit_params_mut(|name, p| {
            let full = format!("view.{}.{name}", entry.view_id);
            match by_name.get(&full) {
                Some(stored) if stored.shape() == p.shape() => *p = stored.clone(),
                _ => missing.push(full),
            }
        });
        if !missing.is_empty() {
            return Err(CoconError::Config(format!(
                "checkpoint missing tensors: {missing:?}"
            )));
        }
        views.insert(entry.view_id, model);
    }
    let model = MultiViewModel { views };

    let optimizer = manifest.adam.as_ref().map(|entry| {
        let mut opt = Adam::new(entry.config);
        opt.set_step_count(entry.t);
        for (name, tensor) in &by_name {
            if let Some(base) = name.strip_prefix("adam.m.") {
                let v = by_name
                    .get(&format!("adam.v.{base}"))
                    .cloned()
                    .unwrap_or_else(|| ArrayD::zeros(tensor.raw_dim()));
                opt.restore_entry(base.to_string(), tensor.clone(), v);
            }
        }
        opt
    });

    Ok(LoadedCheckpoint { model, optimizer, meta: manifest.meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ViewKind;

    #[test]
    fn roundtrip_is_bit_exact() {
        let specs = [
            EncoderSpec::new(ViewKind::Rgb, 8, 2, 4),
            EncoderSpec::new(ViewKind::Flow, 8, 2, 4),
        ];
        let model = MultiViewModel::init(&specs, 3).unwrap();
        let mut opt: Adam<f32> = Adam::new(AdamConfig::default());
        // Give the optimizer some nontrivial state.
        let mut grads = Vec::new();
        model.visit_params(|name, p| grads.push((name, p.mapv(|v| v * 0.1 + 0.01))));
        let mut updated = model.clone();
        opt.begin_step();
        updated.visit_params_mut(|name, p| {
            let g = &grads.iter().find(|(n, _)| *n == name).unwrap().1;
            opt.update(&name, p, g);
        });

        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta { phase: "phase1_cpc".into(), epoch: 4, step: 77 };
        save_checkpoint(dir.path(), &updated, Some(&opt), &meta).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();

        assert_eq!(loaded.meta.step, 77);
        assert_eq!(loaded.meta.phase, "phase1_cpc");
        let mut original = Vec::new();
        updated.visit_params(|n, p| original.push((n, p.clone())));
        let mut restored = Vec::new();
        loaded.model.visit_params(|n, p| restored.push((n, p.clone())));
        assert_eq!(original.len(), restored.len());
        for ((na, va), (nb, vb)) in original.iter().zip(&restored) {
            assert_eq!(na, nb);
            assert_eq!(va, vb, "tensor {na} not bit-identical");
        }
        let reopt = loaded.optimizer.unwrap();
        assert_eq!(reopt.step_count(), 1);
        let a: Vec<_> = opt.state_entries().collect();
        let b: Vec<_> = reopt.state_entries().collect();
        assert_eq!(a.len(), b.len());
        for ((na, (ma, va)), (nb, (mb, vb))) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(ma, mb);
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn missing_checkpoint_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope")),
            Err(CoconError::NotFound(_))
        ));
    }
}
