//! TracInCP self-influence: checkpoint selection, per-sample gradient-norm
//! accumulation, and canary ranking.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::collections::HashMap;

/// One stored training checkpoint: epoch, weight snapshot, learning rate.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub epoch: usize,
    pub learning_rate: f64,
    pub weights: HashMap<String, Tensor<f32>>,
}

/// The checkpoints selected for influence estimation, plus selection
/// metadata.
#[derive(Clone, Debug)]
pub struct CheckpointSet {
    pub checkpoints: Vec<Checkpoint>,
    /// First epoch reaching the 95% training-loss reduction cutoff.
    pub cutoff_epoch: usize,
}

/// Per-sample self-influence record.
#[derive(Clone, Debug)]
pub struct InfluenceRecord {
    pub sample_index: usize,
    pub self_influence: f64,
    /// eta_i * ||grad l(w_i, x)||^2 per checkpoint, in checkpoint order.
    pub per_checkpoint: Vec<f64>,
}

/// Select up to `k` evenly spaced epoch indices covering the span over which
/// the training loss achieves 95% of its total reduction.
///
/// The cutoff epoch E* is the first epoch whose loss is at or below
/// `loss[0] - 0.95 * (loss[0] - min(loss))`; the returned indices are evenly
/// spaced over [0, E*], rounded, deduplicated, ascending.
pub fn select_checkpoints(loss_history: &[f64], k: usize) -> Vec<usize> {
    assert!(!loss_history.is_empty(), "empty loss history");
    assert!(k >= 1);
    let first = loss_history[0];
    let min = loss_history.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff_value = first - 0.95 * (first - min);
    let cutoff = loss_history
        .iter()
        .position(|l| *l <= cutoff_value)
        .unwrap_or(0);
    let mut out: Vec<usize> = if k == 1 || cutoff == 0 {
        vec![0]
    } else {
        (0..k)
            .map(|j| ((j as f64) * cutoff as f64 / (k as f64 - 1.0)).round() as usize)
            .collect()
    };
    out.dedup();
    out
}

/// The cutoff epoch used by [`select_checkpoints`], exposed for metadata.
pub fn loss_cutoff_epoch(loss_history: &[f64]) -> usize {
    let first = loss_history[0];
    let min = loss_history.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff_value = first - 0.95 * (first - min);
    loss_history
        .iter()
        .position(|l| *l <= cutoff_value)
        .unwrap_or(0)
}

/// TracInCP self-influence of one labelled example:
/// sum over checkpoints of eta_i * ||grad_w l(w_i, x, y)||^2, gradients taken
/// over all trainable parameters with a single-example forward/backward per
/// checkpoint (eval semantics: no dropout, frozen batchnorm statistics).
pub fn tracin_self_influence(
    model: &mut Model<f32>,
    checkpoints: &CheckpointSet,
    image: &[f32],
    label: usize,
    sample_index: usize,
) -> Result<InfluenceRecord> {
    let (h, w, c) = model.input_shape();
    let batch = Tensor::new(vec![1, h, w, c], image.to_vec())?;
    let mut per_checkpoint = Vec::with_capacity(checkpoints.checkpoints.len());
    model.set_mode(Mode::Eval);
    for ck in &checkpoints.checkpoints {
        model.load_tensors(&ck.weights)?;
        per_checkpoint.push(ck.learning_rate * grad_sq_norm(model, &batch, label)?);
    }
    Ok(InfluenceRecord {
        sample_index,
        self_influence: per_checkpoint.iter().sum(),
        per_checkpoint,
    })
}

fn grad_sq_norm(model: &Model<f32>, batch: &Tensor<f32>, label: usize) -> Result<f64> {
    let (_, tape) = model.forward_taped_eval(batch)?;
    let grads = model.backward(&tape, &[label])?;
    Ok(grads.sq_norm())
}

/// Self-influence for every sample of a dataset (or a subset of indices).
///
/// Checkpoints iterate on the outside so each snapshot is loaded once;
/// samples run in parallel against an immutable model per checkpoint, and the
/// per-checkpoint terms accumulate in sample order.
pub fn tracin_dataset(
    model: &mut Model<f32>,
    checkpoints: &CheckpointSet,
    data: &Dataset,
    indices: Option<&[usize]>,
) -> Result<Vec<InfluenceRecord>> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    let (h, w, c) = model.input_shape();
    if (h, w, c) != data.shape() {
        return Err(Error::ShapeMismatch(format!(
            "dataset shape {:?} does not match model input {:?}",
            data.shape(),
            (h, w, c)
        )));
    }
    let mut records: Vec<InfluenceRecord> = indices
        .iter()
        .map(|&i| InfluenceRecord {
            sample_index: i,
            self_influence: 0.0,
            per_checkpoint: Vec::with_capacity(checkpoints.checkpoints.len()),
        })
        .collect();
    model.set_mode(Mode::Eval);
    for ck in &checkpoints.checkpoints {
        model.load_tensors(&ck.weights)?;
        let frozen: &Model<f32> = model;
        let terms: Vec<Result<f64>> = indices
            .par_iter()
            .map(|&i| {
                let batch = Tensor::new(vec![1, h, w, c], data.image(i).to_vec())?;
                Ok(ck.learning_rate * grad_sq_norm(frozen, &batch, data.label(i))?)
            })
            .collect();
        for (rec, term) in records.iter_mut().zip(terms) {
            let term = term?;
            rec.per_checkpoint.push(term);
            rec.self_influence += term;
        }
    }
    Ok(records)
}

/// Indices of the `k` highest and `k` lowest self-influence samples, ties
/// broken by ascending sample index.
pub fn rank_canaries(records: &[InfluenceRecord], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if records.len() < 2 * k {
        return Err(Error::InvalidArgument(format!(
            "need at least {} records to pick top/bottom {k}, got {}",
            2 * k,
            records.len()
        )));
    }
    let mut by_influence: Vec<&InfluenceRecord> = records.iter().collect();
    // Ascending influence, ties by ascending sample index.
    by_influence.sort_by(|a, b| {
        a.self_influence
            .partial_cmp(&b.self_influence)
            .expect("influence values are finite")
            .then(a.sample_index.cmp(&b.sample_index))
    });
    let bottom: Vec<usize> = by_influence[..k].iter().map(|r| r.sample_index).collect();
    // Descending influence, ties by ascending sample index.
    let mut desc: Vec<&InfluenceRecord> = records.iter().collect();
    desc.sort_by(|a, b| {
        b.self_influence
            .partial_cmp(&a.self_influence)
            .expect("influence values are finite")
            .then(a.sample_index.cmp(&b.sample_index))
    });
    let top: Vec<usize> = desc[..k].iter().map(|r| r.sample_index).collect();
    Ok((top, bottom))
}

/// Write an influence table: sample_index, label, self_influence.
pub fn write_influence_csv(
    records: &[InfluenceRecord],
    data: &Dataset,
    path: &std::path::Path,
) -> Result<()> {
    let mut out = String::from("sample_index,label,self_influence\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.sample_index,
            data.label(r.sample_index),
            r.self_influence
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
