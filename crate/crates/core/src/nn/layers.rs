//! Per-layer forward/backward kernels.
//!
//! Activations are row-major with batch as the leading axis: dense tensors
//! are [b, d], feature maps are [b, h, w, c]. Convolutions are valid-padding
//! stride 1, pooling windows are non-overlapping (stride = window).

use crate::rng::StreamRng;
use crate::tensor::{Scalar, Tensor};
use rayon::prelude::*;

/// Packed bitmask used for relu/dropout tapes.
#[derive(Clone, Debug)]
pub struct BitMask {
    words: Vec<u64>,
    len: usize,
}

impl BitMask {
    pub fn zeros(len: usize) -> Self {
        BitMask {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

// ─── Dense ─────────────────────────────────────────────────────────────────

/// y = x W + b, x: [b, in], w: [in, units], b: [units].
pub fn dense_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let batch = x.rows();
    let units = w.shape()[1];
    let mut out = x.matmul(false, w, false).expect("dense shapes checked at build");
    let od = out.data_mut();
    let bd = b.data();
    for r in 0..batch {
        let row = &mut od[r * units..(r + 1) * units];
        for (o, bias) in row.iter_mut().zip(bd) {
            *o += *bias;
        }
    }
    out
}

/// Returns (dx, dw, db). delta: [b, units].
pub fn dense_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    delta: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let units = w.shape()[1];
    let dx = delta.matmul(false, w, true).expect("dense backward dx");
    let dw = x.matmul(true, delta, false).expect("dense backward dw");
    let mut db = Tensor::zeros(vec![units]);
    let dbd = db.data_mut();
    for row in delta.data().chunks(units) {
        for (acc, d) in dbd.iter_mut().zip(row) {
            *acc += *d;
        }
    }
    (dx, dw, db)
}

// ─── Conv2d (valid, stride 1) ──────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub filters: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
    /// im2col row width: kh*kw*c.
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }
}

/// Write the im2col matrix for one image into `col` ([oh*ow, kh*kw*c]).
fn im2col<S: Scalar>(img: &[S], d: &ConvDims, col: &mut [S]) {
    let (oh, ow, k) = (d.out_h(), d.out_w(), d.patch_len());
    debug_assert_eq!(img.len(), d.h * d.w * d.c);
    debug_assert_eq!(col.len(), oh * ow * k);
    let row_stride = d.w * d.c;
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut col[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            let mut q = 0;
            for ky in 0..d.kh {
                let src = (oy + ky) * row_stride + ox * d.c;
                let run = d.kw * d.c;
                dst[q..q + run].copy_from_slice(&img[src..src + run]);
                q += run;
            }
        }
    }
}

/// Scatter-add a col-shaped gradient back onto an image gradient.
fn col2im_add<S: Scalar>(col: &[S], d: &ConvDims, img: &mut [S]) {
    let (oh, ow, k) = (d.out_h(), d.out_w(), d.patch_len());
    let row_stride = d.w * d.c;
    for oy in 0..oh {
        for ox in 0..ow {
            let src = &col[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            let mut q = 0;
            for ky in 0..d.kh {
                let dst = (oy + ky) * row_stride + ox * d.c;
                let run = d.kw * d.c;
                for i in 0..run {
                    img[dst + i] += src[q + i];
                }
                q += run;
            }
        }
    }
}

/// Forward convolution. x: [b, h, w, c], w: [kh*kw*c, filters], b: [filters].
pub fn conv_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: &Tensor<S>,
    d: &ConvDims,
) -> Tensor<S> {
    let batch = x.shape()[0];
    let (oh, ow, k, f) = (d.out_h(), d.out_w(), d.patch_len(), d.filters);
    let img_len = d.h * d.w * d.c;
    let out_img = oh * ow * f;
    let mut out = Tensor::zeros(vec![batch, oh, ow, f]);
    let wd = w.data();
    let bd = bias.data();
    out.data_mut()
        .par_chunks_mut(out_img)
        .zip(x.data().par_chunks(img_len))
        .for_each(|(o, img)| {
            let mut col = vec![S::zero(); oh * ow * k];
            im2col(img, d, &mut col);
            unsafe {
                S::gemm(
                    oh * ow,
                    k,
                    f,
                    S::one(),
                    col.as_ptr(),
                    k as isize,
                    1,
                    wd.as_ptr(),
                    f as isize,
                    1,
                    S::zero(),
                    o.as_mut_ptr(),
                    f as isize,
                    1,
                );
            }
            for row in o.chunks_mut(f) {
                for (v, b) in row.iter_mut().zip(bd) {
                    *v += *b;
                }
            }
        });
    out
}

/// Backward convolution. Returns (dx, dw, db).
///
/// Per-image partial weight gradients are reduced in fixed image order so the
/// result does not depend on thread scheduling.
pub fn conv_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    delta: &Tensor<S>,
    d: &ConvDims,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (oh, ow, k, f) = (d.out_h(), d.out_w(), d.patch_len(), d.filters);
    let img_len = d.h * d.w * d.c;
    let out_img = oh * ow * f;
    let wd = w.data();

    let mut dx = Tensor::zeros(x.shape().to_vec());

    // (partial dw, partial db) per image block, reduced sequentially below.
    let block = 16usize;
    let partials: Vec<(Vec<S>, Vec<S>)> = x
        .data()
        .par_chunks(block * img_len)
        .zip(delta.data().par_chunks(block * out_img))
        .zip(dx.data_mut().par_chunks_mut(block * img_len))
        .map(|((xb, db_), dxb)| {
            let mut dw_part = vec![S::zero(); k * f];
            let mut db_part = vec![S::zero(); f];
            let mut col = vec![S::zero(); oh * ow * k];
            let mut dcol = vec![S::zero(); oh * ow * k];
            let n_imgs = xb.len() / img_len;
            for i in 0..n_imgs {
                let img = &xb[i * img_len..(i + 1) * img_len];
                let dout = &db_[i * out_img..(i + 1) * out_img];
                im2col(img, d, &mut col);
                unsafe {
                    // dw += col^T dout : [k, oh*ow] x [oh*ow, f]
                    S::gemm(
                        k,
                        oh * ow,
                        f,
                        S::one(),
                        col.as_ptr(),
                        1,
                        k as isize,
                        dout.as_ptr(),
                        f as isize,
                        1,
                        S::one(),
                        dw_part.as_mut_ptr(),
                        f as isize,
                        1,
                    );
                    // dcol = dout W^T : [oh*ow, f] x [f, k]
                    S::gemm(
                        oh * ow,
                        f,
                        k,
                        S::one(),
                        dout.as_ptr(),
                        f as isize,
                        1,
                        wd.as_ptr(),
                        1,
                        f as isize,
                        S::zero(),
                        dcol.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
                col2im_add(&dcol, d, &mut dxb[i * img_len..(i + 1) * img_len]);
                for row in dout.chunks(f) {
                    for (acc, v) in db_part.iter_mut().zip(row) {
                        *acc += *v;
                    }
                }
            }
            (dw_part, db_part)
        })
        .collect();

    let mut dw = Tensor::zeros(vec![k, f]);
    let mut db = Tensor::zeros(vec![f]);
    for (dw_part, db_part) in partials {
        for (a, v) in dw.data_mut().iter_mut().zip(&dw_part) {
            *a += *v;
        }
        for (a, v) in db.data_mut().iter_mut().zip(&db_part) {
            *a += *v;
        }
    }
    (dx, dw, db)
}

// ─── MaxPool ───────────────────────────────────────────────────────────────

/// Non-overlapping max pooling. Returns (out, argmax) where argmax holds the
/// flat within-image input index of each selected element.
pub fn maxpool_forward<S: Scalar>(
    x: &Tensor<S>,
    h: usize,
    w: usize,
    c: usize,
    ph: usize,
    pw: usize,
) -> (Tensor<S>, Vec<u32>) {
    let batch = x.shape()[0];
    let (oh, ow) = (h / ph, w / pw);
    let img_len = h * w * c;
    let mut out = Tensor::zeros(vec![batch, oh, ow, c]);
    let mut argmax = vec![0u32; batch * oh * ow * c];
    let od = out.data_mut();
    let xd = x.data();
    for bi in 0..batch {
        let img = &xd[bi * img_len..(bi + 1) * img_len];
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0usize;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let idx = ((oy * ph + dy) * w + (ox * pw + dx)) * c + ch;
                            if img[idx] > best {
                                best = img[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((bi * oh + oy) * ow + ox) * c + ch;
                    od[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward<S: Scalar>(
    delta: &Tensor<S>,
    argmax: &[u32],
    in_shape: &[usize],
) -> Tensor<S> {
    let batch = delta.shape()[0];
    let img_len: usize = in_shape.iter().product();
    let out_img = delta.len() / batch;
    let mut dx = Tensor::zeros({
        let mut s = vec![batch];
        s.extend_from_slice(in_shape);
        s
    });
    let dd = delta.data();
    let dxd = dx.data_mut();
    for bi in 0..batch {
        for j in 0..out_img {
            let o = bi * out_img + j;
            dxd[bi * img_len + argmax[o] as usize] += dd[o];
        }
    }
    dx
}

// ─── ReLU ──────────────────────────────────────────────────────────────────

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, BitMask) {
    let mut mask = BitMask::zeros(x.len());
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v > S::zero() {
            mask.set(i);
        } else {
            *v = S::zero();
        }
    }
    (out, mask)
}

pub fn relu_backward<S: Scalar>(delta: &Tensor<S>, mask: &BitMask) -> Tensor<S> {
    let mut dx = delta.clone();
    for (i, v) in dx.data_mut().iter_mut().enumerate() {
        if !mask.get(i) {
            *v = S::zero();
        }
    }
    dx
}

// ─── Softmax ───────────────────────────────────────────────────────────────

/// Row-wise stable softmax.
pub fn softmax_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let cols = x.row_len();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let mut max = S::neg_infinity();
        for v in row.iter() {
            if *v > max {
                max = *v;
            }
        }
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Fused softmax + mean cross-entropy gradient at the logits:
/// delta = (p - onehot(y)) / b.
pub fn softmax_xent_delta<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Tensor<S> {
    let b = probs.rows();
    let cols = probs.row_len();
    assert_eq!(labels.len(), b, "labels must match batch size");
    let inv_b = S::from_f64(1.0 / b as f64);
    let mut delta = probs.clone();
    let dd = delta.data_mut();
    for (r, &y) in labels.iter().enumerate() {
        debug_assert!(y < cols);
        dd[r * cols + y] -= S::one();
    }
    for v in dd.iter_mut() {
        *v *= inv_b;
    }
    delta
}

// ─── Dropout (inverted) ────────────────────────────────────────────────────

/// Train-mode inverted dropout: kept units are scaled by 1/(1-rate) so that
/// eval mode is the identity.
pub fn dropout_forward<S: Scalar>(x: &Tensor<S>, rate: f64, rng: &mut StreamRng) -> (Tensor<S>, BitMask) {
    let keep = 1.0 - rate;
    let scale = S::from_f64(1.0 / keep);
    let mut mask = BitMask::zeros(x.len());
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if rng.bernoulli(keep) {
            mask.set(i);
            *v *= scale;
        } else {
            *v = S::zero();
        }
    }
    (out, mask)
}

pub fn dropout_backward<S: Scalar>(delta: &Tensor<S>, mask: &BitMask, rate: f64) -> Tensor<S> {
    let scale = S::from_f64(1.0 / (1.0 - rate));
    let mut dx = delta.clone();
    for (i, v) in dx.data_mut().iter_mut().enumerate() {
        if mask.get(i) {
            *v *= scale;
        } else {
            *v = S::zero();
        }
    }
    dx
}

// ─── BatchNorm ─────────────────────────────────────────────────────────────

/// Values cached by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<S: Scalar> {
    /// Normalized activations (before gamma/beta).
    pub xhat: Tensor<S>,
    /// Per-channel 1/sqrt(var + eps).
    pub inv_std: Vec<S>,
    /// Whether batch statistics (train) or running statistics (eval) were used.
    pub batch_stats: bool,
}

/// Channel layout of a batchnorm input: dense inputs normalise per feature,
/// feature maps per channel over (batch, h, w).
fn bn_geometry(shape: &[usize]) -> (usize, usize) {
    let channels = *shape.last().expect("batchnorm input has at least one axis");
    let groups: usize = shape[..shape.len() - 1].iter().product();
    (groups, channels)
}

/// Train-mode forward using batch statistics (biased variance). When
/// `update_running` is set, running statistics receive the usual
/// `r = momentum * r + (1 - momentum) * batch` update.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &mut Tensor<S>,
    running_var: &mut Tensor<S>,
    momentum: f64,
    epsilon: f64,
    update_running: bool,
) -> (Tensor<S>, BnCache<S>) {
    let (groups, channels) = bn_geometry(x.shape());
    let n = groups as f64;
    let xd = x.data();
    let mut mean = vec![0.0f64; channels];
    let mut var = vec![0.0f64; channels];
    for g in 0..groups {
        let row = &xd[g * channels..(g + 1) * channels];
        for (c, v) in row.iter().enumerate() {
            mean[c] += v.as_f64();
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for g in 0..groups {
        let row = &xd[g * channels..(g + 1) * channels];
        for (c, v) in row.iter().enumerate() {
            let d = v.as_f64() - mean[c];
            var[c] += d * d;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    if update_running {
        let rm = running_mean.data_mut();
        let rv = running_var.data_mut();
        for c in 0..channels {
            rm[c] = S::from_f64(rm[c].as_f64() * momentum + mean[c] * (1.0 - momentum));
            rv[c] = S::from_f64(rv[c].as_f64() * momentum + var[c] * (1.0 - momentum));
        }
    }
    let inv_std: Vec<S> = var
        .iter()
        .map(|v| S::from_f64(1.0 / (v + epsilon).sqrt()))
        .collect();
    let mean_s: Vec<S> = mean.iter().map(|m| S::from_f64(*m)).collect();
    bn_apply(x, gamma, beta, &mean_s, &inv_std, true)
}

/// Eval-mode forward using running statistics only.
pub fn batchnorm_forward_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &Tensor<S>,
    running_var: &Tensor<S>,
    epsilon: f64,
) -> (Tensor<S>, BnCache<S>) {
    let inv_std: Vec<S> = running_var
        .data()
        .iter()
        .map(|v| S::from_f64(1.0 / (v.as_f64() + epsilon).sqrt()))
        .collect();
    bn_apply(x, gamma, beta, running_mean.data(), &inv_std, false)
}

fn bn_apply<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    batch_stats: bool,
) -> (Tensor<S>, BnCache<S>) {
    let (groups, channels) = bn_geometry(x.shape());
    let mut xhat = x.clone();
    let mut out = Tensor::zeros(x.shape().to_vec());
    let gd = gamma.data();
    let bd = beta.data();
    {
        let xh = xhat.data_mut();
        let od = out.data_mut();
        for g in 0..groups {
            for c in 0..channels {
                let i = g * channels + c;
                let h = (xh[i] - mean[c]) * inv_std[c];
                xh[i] = h;
                od[i] = gd[c] * h + bd[c];
            }
        }
    }
    (
        out,
        BnCache {
            xhat,
            inv_std: inv_std.to_vec(),
            batch_stats,
        },
    )
}

/// Backward. Returns (dx, dgamma, dbeta).
pub fn batchnorm_backward<S: Scalar>(
    delta: &Tensor<S>,
    gamma: &Tensor<S>,
    cache: &BnCache<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (groups, channels) = bn_geometry(delta.shape());
    let dd = delta.data();
    let xh = cache.xhat.data();
    let gd = gamma.data();

    let mut dgamma = vec![0.0f64; channels];
    let mut dbeta = vec![0.0f64; channels];
    for g in 0..groups {
        for c in 0..channels {
            let i = g * channels + c;
            dgamma[c] += dd[i].as_f64() * xh[i].as_f64();
            dbeta[c] += dd[i].as_f64();
        }
    }

    let mut dx = Tensor::zeros(delta.shape().to_vec());
    let dxd = dx.data_mut();
    if cache.batch_stats {
        // dx = inv_std/N * gamma * (N*dxhat_i - sum(dxhat) - xhat_i * sum(dxhat*xhat))
        let n = groups as f64;
        for g in 0..groups {
            for c in 0..channels {
                let i = g * channels + c;
                let dxhat = dd[i].as_f64() * gd[c].as_f64();
                let term = n * dxhat - gd[c].as_f64() * dbeta[c]
                    - xh[i].as_f64() * gd[c].as_f64() * dgamma[c];
                dxd[i] = S::from_f64(cache.inv_std[c].as_f64() / n * term);
            }
        }
    } else {
        // Running statistics are constants: dx = delta * gamma * inv_std.
        for g in 0..groups {
            for c in 0..channels {
                let i = g * channels + c;
                dxd[i] = dd[i] * gd[c] * cache.inv_std[c];
            }
        }
    }
    let dgamma_t = Tensor::new(vec![channels], dgamma.iter().map(|v| S::from_f64(*v)).collect())
        .expect("dgamma shape");
    let dbeta_t = Tensor::new(vec![channels], dbeta.iter().map(|v| S::from_f64(*v)).collect())
        .expect("dbeta shape");
    (dx, dgamma_t, dbeta_t)
}
