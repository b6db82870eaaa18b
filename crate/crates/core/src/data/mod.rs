//! Datasets: synthetic generation, PLY point-cloud files and manifests.
//!
//! Ground truth lives only in [`EvalSet`]. The training side receives a
//! [`TrainingSet`], whose records have no pose field at all.

mod ply;
mod synth;

pub use ply::{load_cloud, save_cloud};
pub(crate) use synth::shuffled;
pub use synth::{generate_corpus, generate_pair, SynthConfig, SyntheticPair};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePairRecord {
    pub id: String,
    pub a: PathBuf,
    pub b: PathBuf,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<RigidTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub pairs: Vec<ScenePairRecord>,
}

impl Manifest {
    fn check(&self, path: &Path) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::format(path, 1, format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for rec in &self.pairs {
            if let Some(gt) = &rec.gt {
                if gt.dim() != self.dim {
                    return Err(Error::format(path, 1, format!("pair {} has a {}D transform", rec.id, gt.dim())));
                }
            }
            match seen.insert(&rec.id, rec.split) {
                Some(prev) if prev != rec.split => {
                    return Err(Error::SplitOverlap(format!(
                        "{} appears in {} and {}",
                        rec.id,
                        prev.as_str(),
                        rec.split.as_str()
                    )))
                }
                Some(_) => return Err(Error::format(path, 1, format!("duplicate pair id {}", rec.id))),
                None => {}
            }
        }
        Ok(())
    }
}

/// Writes `manifest` as pretty JSON, validating it first.
pub fn build_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.check(path)?;
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))?;
    manifest.check(path)?;
    Ok(manifest)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// A pair as seen by training: clouds only.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub id: String,
    pub a: PointCloud,
    pub b: PointCloud,
}

/// A pair with its hidden pose, for evaluation.
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub pair: ScenePair,
    pub gt: RigidTransform,
}

/// Training and validation pairs stripped of ground truth.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub dim: usize,
    pub train: Vec<ScenePair>,
    pub val: Vec<ScenePair>,
    /// Set when the manifest carried poses that were dropped on load.
    pub stripped_gt: bool,
}

#[derive(Debug, Clone)]
pub struct EvalSet {
    pub dim: usize,
    pub pairs: Vec<LabeledPair>,
}

fn load_pair(dir: &Path, rec: &ScenePairRecord, dim: usize) -> Result<ScenePair> {
    let a = load_cloud(&dir.join(&rec.a))?;
    let b = load_cloud(&dir.join(&rec.b))?;
    for (cloud, p) in [(&a, &rec.a), (&b, &rec.b)] {
        if cloud.dim() != dim {
            return Err(Error::format(
                dir.join(p),
                1,
                format!("cloud is {}D but the manifest is {dim}D", cloud.dim()),
            ));
        }
    }
    Ok(ScenePair {
        id: rec.id.clone(),
        a,
        b,
    })
}

impl TrainingSet {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        Self::from_manifest(manifest_path, manifest)
    }

    pub fn from_manifest(manifest_path: &Path, manifest: Manifest) -> Result<Self> {
        let dir = base_dir(manifest_path);
        let stripped_gt = manifest
            .pairs
            .iter()
            .any(|r| r.split != Split::Test && r.gt.is_some());
        let mut set = TrainingSet {
            dim: manifest.dim,
            train: Vec::new(),
            val: Vec::new(),
            stripped_gt,
        };
        for rec in manifest.pairs {
            let target = match rec.split {
                Split::Train => &mut set.train,
                Split::Val => &mut set.val,
                Split::Test => continue,
            };
            let rec = ScenePairRecord { gt: None, ..rec };
            target.push(load_pair(&dir, &rec, manifest.dim)?);
        }
        if set.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(set)
    }

    pub fn from_pairs(dim: usize, train: Vec<ScenePair>, val: Vec<ScenePair>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            dim,
            train,
            val,
            stripped_gt: false,
        })
    }
}

impl EvalSet {
    /// Loads every record of `split`; each must carry a pose.
    pub fn load(manifest_path: &Path, split: Split) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let dir = base_dir(manifest_path);
        let mut pairs = Vec::new();
        for rec in manifest.pairs.iter().filter(|r| r.split == split) {
            let gt = rec.gt.clone().ok_or_else(|| Error::MissingGroundTruth(rec.id.clone()))?;
            pairs.push(LabeledPair {
                pair: load_pair(&dir, rec, manifest.dim)?,
                gt,
            });
        }
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            dim: manifest.dim,
            pairs,
        })
    }

    pub fn from_pairs(dim: usize, pairs: Vec<LabeledPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { dim, pairs })
    }
}

/// Split sizes for [`write_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn split_of(&self, i: usize) -> Split {
        if i < self.train {
            Split::Train
        } else if i < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Generates `sizes.total()` pairs, writes them under `dir/clouds` and
/// writes `dir/manifest.json`. Returns the manifest path.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, sizes: SplitSizes) -> Result<PathBuf> {
    let cfg = SynthConfig {
        n_pairs: sizes.total(),
        ..cfg.clone()
    };
    let corpus = generate_corpus(&cfg)?;
    let clouds = dir.join("clouds");
    fs::create_dir_all(&clouds).map_err(|e| Error::io(&clouds, e))?;
    let mut pairs = Vec::with_capacity(corpus.len());
    for (i, pair) in corpus.into_iter().enumerate() {
        let id = format!("pair-{i:04}");
        let a = PathBuf::from("clouds").join(format!("{id}-a.ply"));
        let b = PathBuf::from("clouds").join(format!("{id}-b.ply"));
        save_cloud(&pair.a, &dir.join(&a))?;
        save_cloud(&pair.b, &dir.join(&b))?;
        pairs.push(ScenePairRecord {
            id,
            a,
            b,
            split: sizes.split_of(i),
            gt: Some(pair.gt),
            overlap: Some(pair.overlap),
        });
    }
    let path = dir.join("manifest.json");
    build_manifest(&path, &Manifest { dim: cfg.dim, pairs })?;
    Ok(path)
}
