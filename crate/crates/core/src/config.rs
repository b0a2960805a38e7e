//! Experiment config files, dataset resolution, and run manifests.
//!
//! Config files are plain text with `[section]` headers and `key = value`
//! lines; `#` starts a comment. Unknown sections or keys are errors. See the
//! README for the full schema.

use crate::data::{synth, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::Arch;
use crate::score::TTestKind;
use crate::trainer::{CheckpointPolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable used as the dataset-root fallback.
pub const DATA_DIR_ENV: &str = "MEMAUDIT_DATA_DIR";

/// Parsed experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub out: Option<PathBuf>,

    pub arch: String,
    pub num_classes: usize,

    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    /// Optional training-subset size (seeded selection).
    pub limit: Option<usize>,
    pub ood_dataset: String,
    pub ood_n: usize,

    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub checkpoint_policy: CheckpointPolicy,

    pub dropout: bool,
    pub batchnorm: bool,
    pub augmentation: bool,

    pub canary_index: Option<usize>,
    pub canary_letter: char,

    pub t_test: TTestKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            out: None,
            arch: "MLP-1".into(),
            num_classes: 10,
            dataset: "synth".into(),
            data_dir: None,
            limit: None,
            ood_dataset: "synth-texture".into(),
            ood_n: 2000,
            learning_rate: 3e-4,
            batch_size: None,
            max_epochs: 500,
            patience: 10,
            val_fraction: 0.1,
            checkpoint_policy: CheckpointPolicy::EveryEpoch,
            dropout: false,
            batchnorm: false,
            augmentation: false,
            canary_index: None,
            canary_letter: 'A',
            t_test: TTestKind::Welch,
        }
    }
}

impl ExperimentConfig {
    /// Parse the documented config format.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let sections = parse_sections(text)?;
        let mut cfg = ExperimentConfig::default();
        for (section, entries) in &sections {
            for (key, value) in entries {
                cfg.apply(section, key, value).map_err(|e| {
                    Error::Config(format!("[{section}] {key} = {value}: {e}"))
                })?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        ExperimentConfig::parse(&text)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key {key} in section [{section}]"));
        match section {
            "experiment" => match key {
                "name" => self.name = value.to_string(),
                "seed" => self.seed = parse_num(value)?,
                "out" => self.out = Some(PathBuf::from(value)),
                _ => return Err(unknown()),
            },
            "model" => match key {
                "arch" => self.arch = value.to_string(),
                "num_classes" => self.num_classes = parse_num(value)?,
                _ => return Err(unknown()),
            },
            "data" => match key {
                "dataset" => self.dataset = value.to_string(),
                "dir" => self.data_dir = Some(PathBuf::from(value)),
                "limit" => self.limit = Some(parse_num(value)?),
                "ood_dataset" => self.ood_dataset = value.to_string(),
                "ood_n" => self.ood_n = parse_num(value)?,
                _ => return Err(unknown()),
            },
            "train" => match key {
                "learning_rate" => self.learning_rate = parse_float(value)?,
                "batch_size" => self.batch_size = Some(parse_num(value)?),
                "max_epochs" => self.max_epochs = parse_num(value)?,
                "patience" => self.patience = parse_num(value)?,
                "val_fraction" => self.val_fraction = parse_float(value)?,
                "checkpoint_policy" => {
                    self.checkpoint_policy = match value {
                        "every-epoch" => CheckpointPolicy::EveryEpoch,
                        "best-only" => CheckpointPolicy::BestOnly,
                        _ => {
                            return Err(Error::Config(format!(
                                "unknown checkpoint policy {value}"
                            )))
                        }
                    }
                }
                _ => return Err(unknown()),
            },
            "regularisers" => match key {
                "dropout" => self.dropout = parse_bool(value)?,
                "batchnorm" => self.batchnorm = parse_bool(value)?,
                "augmentation" => self.augmentation = parse_bool(value)?,
                _ => return Err(unknown()),
            },
            "canary" => match key {
                "index" => self.canary_index = Some(parse_num(value)?),
                "letter" => {
                    let mut chars = value.chars();
                    let c = chars
                        .next()
                        .ok_or_else(|| Error::Config("empty canary letter".into()))?;
                    if chars.next().is_some() {
                        return Err(Error::Config(format!(
                            "canary letter must be a single character, got {value}"
                        )));
                    }
                    self.canary_letter = c;
                }
                _ => return Err(unknown()),
            },
            "audit" => match key {
                "t_test" => {
                    self.t_test = match value {
                        "welch" => TTestKind::Welch,
                        "paired" => TTestKind::Paired,
                        _ => return Err(Error::Config(format!("unknown t_test {value}"))),
                    }
                }
                _ => return Err(unknown()),
            },
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch> {
        Arch::parse(&self.arch)
    }

    /// Trainer config derived from this experiment.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let arch = self.arch()?;
        let mut t = TrainConfig::for_arch(arch);
        t.dataset = self.dataset.clone();
        t.learning_rate = self.learning_rate;
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
        t.max_epochs = self.max_epochs;
        t.patience = self.patience;
        t.seed = self.seed;
        t.dropout = self.dropout;
        t.batchnorm = self.batchnorm;
        t.augmentation = self.augmentation;
        t.val_fraction = self.val_fraction;
        t.checkpoint_policy = self.checkpoint_policy;
        t.num_classes = self.num_classes;
        if let Some(i) = self.canary_index {
            t.canary_indices = vec![i];
        }
        Ok(t)
    }

    /// Dataset root: explicit `dir`, else $MEMAUDIT_DATA_DIR/<dataset>.
    pub fn dataset_root(&self, dataset: &str) -> Option<PathBuf> {
        if let Some(dir) = &self.data_dir {
            return Some(dir.clone());
        }
        std::env::var_os(DATA_DIR_ENV).map(|root| PathBuf::from(root).join(dataset))
    }

    /// Load the training split of the configured dataset.
    pub fn load_train(&self) -> Result<Dataset> {
        let ds = load_named_dataset(
            &self.dataset,
            self.dataset_root(&self.dataset).as_deref(),
            Split::Train,
            self.seed,
            self.limit,
        )?;
        Ok(ds)
    }

    /// Load the test split of the configured dataset.
    pub fn load_test(&self) -> Result<Dataset> {
        load_named_dataset(
            &self.dataset,
            self.dataset_root(&self.dataset).as_deref(),
            Split::Test,
            self.seed,
            self.limit,
        )
    }

    /// Load the OOD probe source named by the config.
    pub fn load_ood_source(&self) -> Result<Dataset> {
        load_named_dataset(
            &self.ood_dataset,
            self.dataset_root(&self.ood_dataset).as_deref(),
            Split::Train,
            self.seed,
            None,
        )
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("not an integer: {v}")))
}

fn parse_float(v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("not a number: {v}")))
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("not a boolean: {v}"))),
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Vec<(String, String)>>> {
    let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Config(format!(
                    "line {}: malformed section header {line}",
                    lineno + 1
                )));
            }
            let name = line[1..line.len() - 1].trim().to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {line}", lineno + 1))
        })?;
        let section = current.clone().ok_or_else(|| {
            Error::Config(format!("line {}: key outside any [section]", lineno + 1))
        })?;
        sections
            .get_mut(&section)
            .unwrap()
            .push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

/// Number of synthetic images generated when no file-backed dataset is used.
const SYNTH_TRAIN_N: usize = 10_000;
const SYNTH_TEST_N: usize = 2_000;
const SYNTH_OOD_N: usize = 4_000;

/// Load a dataset by name. File-backed names (mnist, fashion-mnist, cifar10)
/// need a root directory holding the canonical files; synthetic names
/// (synth, synth-rgb, synth-texture, synth-texture-rgb) are generated.
pub fn load_named_dataset(
    name: &str,
    root: Option<&Path>,
    split: Split,
    seed: u64,
    limit: Option<usize>,
) -> Result<Dataset> {
    let lname = name.to_ascii_lowercase();
    let ds = match lname.as_str() {
        "synth" => {
            let n = limit.unwrap_or(if split == Split::Train { SYNTH_TRAIN_N } else { SYNTH_TEST_N });
            synth::glyph_classification(n, seed ^ 0x5917, 28, 28, 1, split)?
        }
        "synth-rgb" => {
            let n = limit.unwrap_or(if split == Split::Train { SYNTH_TRAIN_N } else { SYNTH_TEST_N });
            synth::glyph_classification(n, seed ^ 0x5917, 32, 32, 3, split)?
        }
        "synth-texture" => synth::texture_probe_source(SYNTH_OOD_N, seed ^ 0x77aa, 32, 32, 3)?,
        "synth-texture-grey" => synth::texture_probe_source(SYNTH_OOD_N, seed ^ 0x77aa, 28, 28, 1)?,
        "mnist" | "fashion-mnist" => {
            let root = root.ok_or_else(|| missing_root(name))?;
            let (imgs, lbls) = match split {
                Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                _ => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
            };
            let ds = crate::data::load_idx(&root.join(imgs), &root.join(lbls), &lname, split)?;
            maybe_limit(ds, limit, seed)
        }
        "cifar10" | "cifar-10" => {
            let root = root.ok_or_else(|| missing_root(name))?;
            let paths: Vec<PathBuf> = match split {
                Split::Train => (1..=5)
                    .map(|i| root.join(format!("data_batch_{i}.bin")))
                    .collect(),
                _ => vec![root.join("test_batch.bin")],
            };
            let ds = crate::data::load_cifar10(&paths, "cifar10", split)?;
            maybe_limit(ds, limit, seed)
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown dataset {name} (expected mnist, fashion-mnist, cifar10, synth, synth-rgb, synth-texture, synth-texture-grey)"
            )))
        }
    };
    Ok(ds)
}

fn maybe_limit(ds: Dataset, limit: Option<usize>, seed: u64) -> Dataset {
    match limit {
        Some(n) if n < ds.len() => {
            let mut rng = crate::rng::StreamRng::stream(seed, "train-subset", &[]);
            let mut idx = rng.sample_indices(ds.len(), n);
            idx.sort_unstable();
            ds.subset(&idx, ds.name())
        }
        _ => ds,
    }
}

fn missing_root(name: &str) -> Error {
    Error::Config(format!(
        "dataset {name} needs a directory: set [data] dir or {DATA_DIR_ENV}"
    ))
}

/// Whether the canonical files for a file-backed dataset exist under `root`.
pub fn dataset_available(name: &str, root: Option<&Path>) -> bool {
    let Some(root) = root else {
        return name.starts_with("synth");
    };
    match name.to_ascii_lowercase().as_str() {
        "mnist" | "fashion-mnist" => {
            root.join("train-images-idx3-ubyte").exists()
                && root.join("train-labels-idx1-ubyte").exists()
        }
        "cifar10" | "cifar-10" => root.join("data_batch_1.bin").exists(),
        _ => true,
    }
}

/// Manifest describing one experiment invocation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub config_path: String,
    pub out_dir: String,
    pub config_sha256: String,
    pub created_unix: u64,
}

/// SHA-256 hex digest of the raw config bytes.
pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Copy the config into the run directory and write the manifest beside it.
pub fn write_manifest(config_path: &Path, config_text: &str, out_dir: &Path, name: &str) -> Result<ExperimentManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let copy_path = out_dir.join("config.cfg");
    std::fs::write(&copy_path, config_text)
        .map_err(|e| Error::io(copy_path.display().to_string(), e))?;
    let manifest = ExperimentManifest {
        name: name.to_string(),
        config_path: config_path.display().to_string(),
        out_dir: out_dir.display().to_string(),
        config_sha256: config_hash(config_text),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(manifest)
}
