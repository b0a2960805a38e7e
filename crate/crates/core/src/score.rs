//! Memorisation scores: per-pair KL divergences, the black-box M score with
//! one-tailed significance, and the white-box M_w score.

use crate::canary::{inject, sample_random_patch, Patch, ProbeTriple};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::rng::derive_seed;
use crate::stats::{kahan_sum, paired_t_test, welch_t_test};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Probability clamp applied inside logs and ratios.
pub const EPS: f64 = 1e-12;

/// Forward chunk size used when scoring probe sets.
const SCORE_BATCH: usize = 256;

/// Which one-tailed test backs the p-value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    /// Welch unpaired two-sample test (the default).
    #[default]
    Welch,
    /// Paired test on the per-image differences d_u - d_r.
    Paired,
}

/// Identification carried through result files.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub canary_id: String,
    pub dataset: String,
    pub model_id: String,
    pub seed: u64,
}

/// Black-box memorisation score result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MScoreResult {
    pub x_u: Vec<f64>,
    pub x_r: Vec<f64>,
    pub m: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n: usize,
    pub t_test: TTestKind,
    pub meta: ScoreMeta,
}

impl MScoreResult {
    /// One CSV row: canary_id, dataset, model, seed, n, M, t_stat, p_value,
    /// t_test.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.meta.canary_id,
            self.meta.dataset,
            self.meta.model_id,
            self.meta.seed,
            self.n,
            self.m,
            self.t_stat,
            self.p_value,
            match self.t_test {
                TTestKind::Welch => "welch",
                TTestKind::Paired => "paired",
            }
        )
    }

    pub const CSV_HEADER: &'static str =
        "canary_id,dataset,model,seed,n,M,t_stat,p_value,t_test";

    /// Append to a CSV results table, writing the header on first creation.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
        if fresh {
            writeln!(f, "{}", Self::CSV_HEADER).map_err(io_err)?;
        }
        writeln!(f, "{}", self.csv_row()).map_err(io_err)?;
        Ok(())
    }
}

/// White-box memorisation score result. Significance is a one-sample
/// one-tailed t-test that the mean per-image term exceeds zero (the terms are
/// paired by construction: each image is injected with both patches).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MwScoreResult {
    pub m_w: f64,
    pub mean_p_unique: f64,
    pub mean_p_random: f64,
    pub mean_log_p_unique: f64,
    pub mean_log_p_random: f64,
    /// Per-image log P(y|x_u) - log P(y|x_r) terms.
    pub terms: Vec<f64>,
    pub t_stat: f64,
    pub p_value: f64,
    pub label: usize,
    pub meta: ScoreMeta,
}

/// KL divergence between two discrete distributions, natural log, both
/// arguments clamped below at [`EPS`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "kl inputs differ in length: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let mut sum = 0.0;
        for x in v {
            if *x < 0.0 || !x.is_finite() {
                return Err(Error::InvalidDistribution(format!(
                    "{name} contains invalid mass {x}"
                )));
            }
            sum += x;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!(
                "{name} sums to {sum}, not 1"
            )));
        }
    }
    let mut terms = Vec::with_capacity(p.len());
    for (a, b) in p.iter().zip(q) {
        let a = a.max(EPS);
        let b = b.max(EPS);
        terms.push(a * (a / b).ln());
    }
    Ok(kahan_sum(&terms))
}

/// Forward a dataset through an eval-mode model in fixed-size chunks,
/// returning per-image probability rows as f64.
pub fn forward_probs(model: &Model<f32>, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    if model.mode() != Mode::Eval {
        return Err(Error::InvalidArgument(
            "scoring requires the model in eval mode".into(),
        ));
    }
    let mut out = Vec::with_capacity(data.len());
    let classes = model.num_classes();
    let mut start = 0;
    while start < data.len() {
        let end = (start + SCORE_BATCH).min(data.len());
        let indices: Vec<usize> = (start..end).collect();
        let batch = data.gather_batch(&indices);
        let probs = model.forward(&batch)?;
        for row in probs.data().chunks(classes) {
            out.push(row.iter().map(|v| *v as f64).collect());
        }
        start = end;
    }
    Ok(out)
}

/// Black-box M score over a probe triple:
/// X_u[i] = KL(f(x_c^i) || f(x_u^i)), X_r[i] = KL(f(x_c^i) || f(x_r^i)),
/// M = mean(X_u) - mean(X_r), significance from the one-tailed test that the
/// population mean of X_u exceeds that of X_r.
pub fn m_score(
    model: &Model<f32>,
    triple: &ProbeTriple,
    t_test: TTestKind,
    meta: ScoreMeta,
) -> Result<MScoreResult> {
    let pc = forward_probs(model, &triple.clean)?;
    let pu = forward_probs(model, &triple.unique)?;
    let pr = forward_probs(model, &triple.random)?;
    let n = pc.len();
    let mut x_u = Vec::with_capacity(n);
    let mut x_r = Vec::with_capacity(n);
    for i in 0..n {
        x_u.push(kl_divergence(&pc[i], &pu[i])?);
        x_r.push(kl_divergence(&pc[i], &pr[i])?);
    }
    let m = kahan_sum(&x_u) / n as f64 - kahan_sum(&x_r) / n as f64;
    let test = one_tailed_t_test(&x_u, &x_r, t_test)?;
    Ok(MScoreResult {
        x_u,
        x_r,
        m,
        t_stat: test.t_stat,
        p_value: test.p_value,
        n,
        t_test,
        meta,
    })
}

/// One-tailed test that mean(X_u) > mean(X_r). Welch by default; the paired
/// variant tests the per-image differences (the probe sets share base
/// images).
pub fn one_tailed_t_test(x_u: &[f64], x_r: &[f64], kind: TTestKind) -> Result<crate::stats::TTest> {
    match kind {
        TTestKind::Welch => welch_t_test(x_u, x_r),
        TTestKind::Paired => paired_t_test(x_u, x_r),
    }
}

/// White-box score: mean over D_y of log P(y|x+z_u) - log P(y|x+z_r), with a
/// fresh random patch per image. D_y must hold training images labelled `y`.
pub fn mw_score(
    model: &Model<f32>,
    d_y: &Dataset,
    label: usize,
    z_u: &Patch,
    seed: u64,
    meta: ScoreMeta,
) -> Result<MwScoreResult> {
    if d_y.is_empty() {
        return Err(Error::InvalidArgument("mw_score over an empty D_y".into()));
    }
    if d_y.is_labeled() {
        for i in 0..d_y.len() {
            if d_y.label(i) != label {
                return Err(Error::InvalidArgument(format!(
                    "D_y image {i} has label {} instead of {label}",
                    d_y.label(i)
                )));
            }
        }
    }
    let (h, w, c) = d_y.shape();
    let img_len = d_y.image_len();
    let n = d_y.len();
    let mut p_unique = Vec::with_capacity(n);
    let mut p_random = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + SCORE_BATCH).min(n);
        let count = end - start;
        let mut xu = Vec::with_capacity(count * img_len);
        let mut xr = Vec::with_capacity(count * img_len);
        for i in start..end {
            xu.extend(inject(d_y.image(i), h, w, c, z_u)?);
            let zr = sample_random_patch(derive_seed(seed, "mw-zr", &[i as u64]))
                .with_offset(z_u.offset());
            xr.extend(inject(d_y.image(i), h, w, c, &zr)?);
        }
        let bu = Tensor::new(vec![count, h, w, c], xu)?;
        let br = Tensor::new(vec![count, h, w, c], xr)?;
        let classes = model.num_classes();
        for row in model.forward(&bu)?.data().chunks(classes) {
            p_unique.push(row[label] as f64);
        }
        for row in model.forward(&br)?.data().chunks(classes) {
            p_random.push(row[label] as f64);
        }
        start = end;
    }
    let log_u: Vec<f64> = p_unique.iter().map(|p| p.max(EPS).ln()).collect();
    let log_r: Vec<f64> = p_random.iter().map(|p| p.max(EPS).ln()).collect();
    let terms: Vec<f64> = log_u.iter().zip(&log_r).map(|(a, b)| a - b).collect();
    let test = paired_t_test(&log_u, &log_r)?;
    Ok(MwScoreResult {
        m_w: kahan_sum(&terms) / n as f64,
        mean_p_unique: kahan_sum(&p_unique) / n as f64,
        mean_p_random: kahan_sum(&p_random) / n as f64,
        mean_log_p_unique: kahan_sum(&log_u) / n as f64,
        mean_log_p_random: kahan_sum(&log_r) / n as f64,
        terms,
        t_stat: test.t_stat,
        p_value: test.p_value,
        label,
        meta,
    })
}
