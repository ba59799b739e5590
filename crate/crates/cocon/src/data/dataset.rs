//! Dataset manifests: stratified splits over clip seeds, regenerated on
//! demand.

use super::{generate_clip, BlockSpec, MultiViewClip, SceneConfig, ViewKind};
use crate::error::{CoconError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub classes: usize,
    pub clips: usize,
    /// Model input size; frames render at `frame_size + 2 * crop_margin`.
    pub frame_size: usize,
    pub crop_margin: usize,
    pub blocks: BlockSpec,
    pub views: Vec<ViewKind>,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub mask_noise: f64,
    pub heatmap_noise: f64,
    pub bg_pool: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 8,
            clips: 800,
            frame_size: 32,
            crop_margin: 2,
            blocks: BlockSpec::new(4, 3, 2),
            views: vec![ViewKind::Rgb, ViewKind::Flow],
            seed: 0,
            train_frac: 0.7,
            val_frac: 0.1,
            mask_noise: 0.08,
            heatmap_noise: 0.1,
            bg_pool: 8,
        }
    }
}

impl DatasetConfig {
    pub fn render_size(&self) -> usize {
        self.frame_size + 2 * self.crop_margin
    }

    pub fn frames_per_clip(&self) -> usize {
        self.blocks.consumed_frames()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(CoconError::Config("class count must be > 0".into()));
        }
        if self.classes > 8 {
            return Err(CoconError::Config(format!(
                "at most 8 motion classes available, got {}",
                self.classes
            )));
        }
        if self.clips < self.classes {
            return Err(CoconError::Config("need at least one clip per class".into()));
        }
        if self.views.is_empty() {
            return Err(CoconError::Config("at least one view required".into()));
        }
        let mut sorted = self.views.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.views.len() {
            return Err(CoconError::Config("duplicate views in config".into()));
        }
        if !(0.0..1.0).contains(&self.train_frac)
            || !(0.0..1.0).contains(&self.val_frac)
            || self.train_frac + self.val_frac >= 1.0
        {
            return Err(CoconError::Config(format!(
                "split fractions train={} val={} leave no test split",
                self.train_frac, self.val_frac
            )));
        }
        self.blocks.validate()?;
        Ok(())
    }
}

/// One clip: everything needed to regenerate it plus its split assignment.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClipRecord {
    pub seed: u64,
    pub class: usize,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub records: Vec<ClipRecord>,
}

use crate::util::splitmix64;

/// Stratified dataset: clips spread evenly over classes, each class split by
/// the configured fractions, every clip owning a globally unique seed.
pub fn make_dataset(config: &DatasetConfig) -> Result<DatasetManifest> {
    config.validate()?;
    let per_class = config.clips / config.classes;
    let remainder = config.clips % config.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0xd5c9_a3f1));
    let mut records = Vec::with_capacity(config.clips);
    let mut global_index = 0u64;
    for class in 0..config.classes {
        let count = per_class + usize::from(class < remainder);
        let n_train = (count as f64 * config.train_frac).round() as usize;
        let n_val = (count as f64 * config.val_frac).round() as usize;
        let mut splits: Vec<Split> = Vec::with_capacity(count);
        for i in 0..count {
            splits.push(if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
        splits.shuffle(&mut rng);
        for split in splits {
            let seed = splitmix64(config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(global_index));
            records.push(ClipRecord { seed, class, split });
            global_index += 1;
        }
    }
    Ok(DatasetManifest { config: config.clone(), records })
}

impl DatasetManifest {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn scene_config(&self, index: usize) -> Result<SceneConfig> {
        let record = self
            .records
            .get(index)
            .ok_or_else(|| CoconError::NotFound(format!("clip index {index}")))?;
        let mut cfg = SceneConfig::new(
            record.class,
            self.config.classes,
            self.config.render_size(),
            self.config.frames_per_clip(),
            record.seed,
        );
        cfg.mask_noise = self.config.mask_noise;
        cfg.heatmap_noise = self.config.heatmap_noise;
        cfg.bg_pool = self.config.bg_pool;
        Ok(cfg)
    }

    /// Regenerate one clip from its record.
    pub fn generate(&self, index: usize) -> Result<MultiViewClip> {
        generate_clip(&self.scene_config(index)?, &self.config.views)
    }

    /// JSON lines: a config header line followed by one record per clip.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "{}",
            serde_json::to_string(&serde_json::json!({ "config": &self.config }))?
        )?;
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoconError::Config("empty manifest".into()))??;
        #[derive(serde::Deserialize)]
        struct Header {
            config: DatasetConfig,
        }
        let header: Header = serde_json::from_str(&header)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(DatasetManifest { config: header.config, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn balanced_dataset_counts() {
        let cfg = DatasetConfig { clips: 800, classes: 8, ..Default::default() };
        let m = make_dataset(&cfg).unwrap();
        for class in 0..8 {
            assert_eq!(m.records.iter().filter(|r| r.class == class).count(), 100);
        }
        assert_eq!(m.indices(Split::Train).len(), 560);
        assert_eq!(m.indices(Split::Val).len(), 80);
        assert_eq!(m.indices(Split::Test).len(), 160);
    }

    #[test]
    fn clip_seeds_are_unique_across_splits() {
        let cfg = DatasetConfig { clips: 200, classes: 8, ..Default::default() };
        let m = make_dataset(&cfg).unwrap();
        let seeds: HashSet<u64> = m.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), m.records.len());
    }

    #[test]
    fn manifest_roundtrip_regenerates_identical_clips() {
        let cfg = DatasetConfig {
            clips: 16,
            classes: 8,
            frame_size: 20,
            crop_margin: 2,
            ..Default::default()
        };
        let m = make_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(m.records, loaded.records);
        let a = m.generate(3).unwrap();
        let b = loaded.generate(3).unwrap();
        for kind in &m.config.views {
            assert_eq!(a.view(*kind).unwrap(), b.view(*kind).unwrap());
        }
    }

    #[test]
    fn zero_classes_rejected() {
        let cfg = DatasetConfig { classes: 0, ..Default::default() };
        assert!(make_dataset(&cfg).is_err());
    }

    #[test]
    fn determinism_of_records() {
        let cfg = DatasetConfig { clips: 64, ..Default::default() };
        assert_eq!(make_dataset(&cfg).unwrap().records, make_dataset(&cfg).unwrap().records);
    }
}
