//! Deterministic training runs: Adam + cross-entropy with early stopping,
//! per-epoch checkpoints, stratified validation splits, and the
//! (canary x seed) run matrix.

use crate::canary::{build_canary_dataset, Patch};
use crate::data::{augment_batch, AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::influence::Checkpoint;
use crate::nn::adam::{adam_step, AdamState};
use crate::nn::{accuracy, build_model, checkpoint, cross_entropy, Arch, Mode, Model, ModelRegs};
use crate::rng::{derive_seed, StreamRng};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

/// Which weight snapshots a run keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointPolicy {
    /// Snapshot after every epoch (TracInCP and M-profile need these).
    #[default]
    EveryEpoch,
    /// Keep only the best-epoch weights.
    BestOnly,
}

/// Everything that defines a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: String,
    pub dataset: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dropout: bool,
    pub batchnorm: bool,
    pub augmentation: bool,
    /// Training-set indices that must stay out of the validation split
    /// (canaries are always trained on).
    pub canary_indices: Vec<usize>,
    pub val_fraction: f64,
    pub checkpoint_policy: CheckpointPolicy,
    pub num_classes: usize,
}

impl TrainConfig {
    /// Paper defaults for an architecture: lr 3e-4, batch 128 (512 for
    /// CNN-2), up to 500 epochs with patience 10, 10% validation.
    pub fn for_arch(arch: Arch) -> TrainConfig {
        TrainConfig {
            arch: arch.name().to_string(),
            dataset: String::new(),
            learning_rate: 3e-4,
            batch_size: if arch == Arch::Cnn2 { 512 } else { 128 },
            max_epochs: 500,
            patience: 10,
            seed: 0,
            dropout: false,
            batchnorm: false,
            augmentation: false,
            canary_indices: Vec::new(),
            val_fraction: 0.1,
            checkpoint_policy: CheckpointPolicy::EveryEpoch,
            num_classes: 10,
        }
    }

    pub fn arch(&self) -> Result<Arch> {
        Arch::parse(&self.arch)
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0,1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch metrics row.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// The output of one training run.
pub struct RunArtifacts {
    pub config: TrainConfig,
    /// Final model with the best-epoch weights restored, in eval mode.
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub metrics: Vec<EpochMetrics>,
    /// Weight snapshots per the checkpoint policy, ascending by epoch.
    pub checkpoints: Vec<Checkpoint>,
    /// Validation indices into the training dataset (metadata).
    pub val_indices: Vec<usize>,
    pub wall_secs: f64,
}

impl RunArtifacts {
    pub fn final_val_metrics(&self) -> (f64, f64) {
        let m = &self.metrics[self.best_epoch];
        (m.val_loss, m.val_acc)
    }

    pub fn train_loss_history(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.train_loss).collect()
    }

    /// Hash of the final weights, for cheap identity checks.
    pub fn weight_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t, _) in self.model.named_tensors() {
            for v in t.data() {
                h ^= v.to_bits() as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Early-stopping state machine: stop after `patience` epochs without a
/// strict improvement of the monitored loss.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Record this epoch's loss; returns true when training should stop.
    pub fn update(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Stratified validation split: per class, a seeded sample of round(fraction
/// x class size), never drawing canary indices. Returns (train, val) index
/// lists, both ascending.
pub fn validation_split(
    data: &Dataset,
    fraction: f64,
    canary_indices: &[usize],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !data.is_labeled() {
        return Err(Error::InvalidArgument(
            "validation split needs a labeled dataset".into(),
        ));
    }
    let canary: std::collections::HashSet<usize> = canary_indices.iter().copied().collect();
    let mut rng = StreamRng::stream(seed, "val-split", &[]);
    let mut val = Vec::new();
    for class in 0..data.num_classes() {
        let members = data.indices_with_label(class);
        let eligible: Vec<usize> = members
            .iter()
            .copied()
            .filter(|i| !canary.contains(i))
            .collect();
        let want = ((members.len() as f64) * fraction).round() as usize;
        let take = want.min(eligible.len());
        let picked = rng.sample_indices(eligible.len(), take);
        val.extend(picked.into_iter().map(|p| eligible[p]));
    }
    val.sort_unstable();
    if val.is_empty() {
        return Err(Error::InvalidArgument(
            "validation split came out empty".into(),
        ));
    }
    let val_set: std::collections::HashSet<usize> = val.iter().copied().collect();
    let train: Vec<usize> = (0..data.len()).filter(|i| !val_set.contains(i)).collect();
    Ok((train, val))
}

/// Mean cross-entropy and top-1 accuracy of an eval-mode model over a
/// labelled dataset, batched.
pub fn evaluate(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    evaluate_indices(model, data, &(0..data.len()).collect::<Vec<_>>(), batch_size)
}

pub fn evaluate_indices(
    model: &Model<f32>,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if model.mode() != Mode::Eval {
        return Err(Error::InvalidArgument("evaluate requires eval mode".into()));
    }
    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(batch_size) {
        let batch = data.gather_batch(chunk);
        let labels = data.gather_labels(chunk);
        let probs = model.forward(&batch)?;
        loss_sum += cross_entropy(&probs, &labels)? * chunk.len() as f64;
        acc_sum += accuracy(&probs, &labels) * chunk.len() as f64;
        count += chunk.len();
    }
    Ok((loss_sum / count as f64, acc_sum / count as f64))
}

/// Train a model per the config. The dataset is the full training split; a
/// stratified validation subset is held out internally. Stops early when the
/// validation loss has not improved for `patience` epochs, restores the
/// best-epoch weights, and keeps snapshots per the checkpoint policy.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<RunArtifacts> {
    train_with_progress(config, data, |_| {})
}

/// [`train`] with a per-epoch progress callback.
pub fn train_with_progress(
    config: &TrainConfig,
    data: &Dataset,
    on_epoch: impl Fn(&EpochMetrics),
) -> Result<RunArtifacts> {
    config.validate()?;
    let arch = config.arch()?;
    if data.shape() != arch.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "dataset shape {:?} does not match {} input {:?}",
            data.shape(),
            arch.name(),
            arch.input_shape()
        )));
    }
    let started = Instant::now();
    let (train_idx, val_idx) = validation_split(
        data,
        config.val_fraction,
        &config.canary_indices,
        config.seed,
    )?;
    let mut model: Model<f32> = build_model(
        arch,
        config.num_classes,
        ModelRegs {
            dropout: config.dropout,
            batchnorm: config.batchnorm,
        },
        derive_seed(config.seed, "model-init", &[]),
    )?;
    let mut adam = AdamState::new(&model, config.learning_rate);
    let aug_cfg = if config.augmentation {
        AugmentConfig::for_dataset(&config.dataset)
    } else {
        AugmentConfig::disabled()
    };
    let (h, w, c) = data.shape();

    let mut stopper = EarlyStopper::new(config.patience);
    let mut metrics = Vec::new();
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut best_weights: Option<HashMap<String, Tensor<f32>>> = None;

    let mut order = train_idx.clone();
    for epoch in 0..config.max_epochs {
        let mut shuffle_rng = StreamRng::stream(config.seed, "shuffle", &[epoch as u64]);
        shuffle_rng.shuffle(&mut order);

        model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = data.gather_batch(chunk);
            let labels = data.gather_labels(chunk);
            if aug_cfg.any() {
                let mut aug_rng = StreamRng::stream(
                    config.seed,
                    "augment",
                    &[epoch as u64, batch_no as u64],
                );
                augment_batch(&mut batch, h, w, c, aug_cfg, &mut aug_rng);
            }
            let mut dropout_rng = StreamRng::stream(
                config.seed,
                "dropout",
                &[epoch as u64, batch_no as u64],
            );
            let (probs, tape) = model.forward_train(&batch, &mut dropout_rng, true)?;
            let loss = cross_entropy(&probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch} batch {batch_no}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = model.backward(&tape, &labels)?;
            adam_step(&mut adam, &mut model, &grads)?;
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        model.set_mode(Mode::Eval);
        let (val_loss, val_acc) = evaluate_indices(&model, data, &val_idx, config.batch_size)?;
        let row = EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        };
        on_epoch(&row);
        metrics.push(row);

        if config.checkpoint_policy == CheckpointPolicy::EveryEpoch {
            checkpoints.push(Checkpoint {
                epoch,
                learning_rate: config.learning_rate,
                weights: snapshot(&model),
            });
        }

        let was_best = val_loss < stopper.best_loss();
        let stop = stopper.update(epoch, val_loss);
        if was_best {
            best_weights = Some(snapshot(&model));
        }
        if stop {
            break;
        }
    }

    let best = best_weights.expect("at least one epoch ran");
    model.load_tensors(&best)?;
    model.set_mode(Mode::Eval);
    if config.checkpoint_policy == CheckpointPolicy::BestOnly {
        checkpoints.push(Checkpoint {
            epoch: stopper.best_epoch(),
            learning_rate: config.learning_rate,
            weights: best,
        });
    }
    Ok(RunArtifacts {
        config: config.clone(),
        model,
        best_epoch: stopper.best_epoch(),
        epochs_run: metrics.len(),
        metrics,
        checkpoints,
        val_indices: val_idx,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

fn snapshot(model: &Model<f32>) -> HashMap<String, Tensor<f32>> {
    model
        .named_tensors()
        .into_iter()
        .map(|(n, t, _)| (n, t.clone()))
        .collect()
}

/// One training run per (canary, seed) cell. Each cell injects the patch
/// into its canary image, derives an isolated seed, and trains
/// independently; cells run in parallel and return in input order.
pub fn run_matrix(
    base: &TrainConfig,
    train_data: &Dataset,
    patch: &Patch,
    canary_ids: &[usize],
    seeds: &[u64],
) -> Result<Vec<RunArtifacts>> {
    let cells: Vec<(usize, u64)> = canary_ids
        .iter()
        .flat_map(|&c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(canary, seed)| {
            let dataset = build_canary_dataset(train_data, canary, patch)?;
            let mut config = base.clone();
            config.seed = derive_seed(base.seed, "matrix-cell", &[canary as u64, seed]);
            config.canary_indices = vec![canary];
            train(&config, &dataset)
        })
        .collect()
}

/// Write run artifacts to a directory: metrics.csv, checkpoints/, the final
/// best-epoch weights, and report.json.
pub fn write_run_dir(run: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("checkpoints"))
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut csv = String::from("epoch,train_loss,val_loss,val_acc\n");
    for m in &run.metrics {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            m.epoch, m.train_loss, m.val_loss, m.val_acc
        ));
    }
    let csv_path = dir.join("metrics.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    for ck in &run.checkpoints {
        let path = dir.join("checkpoints").join(format!("epoch_{:04}.maud", ck.epoch));
        let tensors: Vec<(String, &Tensor<f32>)> =
            ck.weights.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut sorted = tensors;
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let file =
            std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        checkpoint::write_tensors(std::io::BufWriter::new(file), &sorted)?;
    }
    checkpoint::save_model(&run.model, &dir.join("final.maud"))?;

    let report = serde_json::json!({
        "config": run.config,
        "best_epoch": run.best_epoch,
        "epochs_run": run.epochs_run,
        "best_val_loss": run.metrics[run.best_epoch].val_loss,
        "best_val_acc": run.metrics[run.best_epoch].val_acc,
        "param_count": run.model.param_count(),
        "checkpoint_epochs": run.checkpoints.iter().map(|c| c.epoch).collect::<Vec<_>>(),
        "val_index_count": run.val_indices.len(),
        "wall_secs": run.wall_secs,
    });
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    Ok(())
}
