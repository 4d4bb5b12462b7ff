//! Forward and backward kernels on plain tensors.
//!
//! Every reduction runs in a fixed order: matrix products accumulate each
//! output element sequentially over the inner dimension, and convolution
//! accumulates over (input channel, kernel row, kernel column). Work is split
//! across threads only along independent outputs (batch images), and
//! per-image weight gradients are summed in image order, so results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;

const TILE_N: usize = 256;
const ROW_BLOCK: usize = 4;

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major. `c` is overwritten.
pub fn gemm<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.iter_mut().for_each(|x| *x = T::zero());
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + TILE_N).min(n);
        let mut i0 = 0;
        while i0 + ROW_BLOCK <= m {
            gemm_block4(a, b, c, i0, k, n, j0, j1);
            i0 += ROW_BLOCK;
        }
        for i in i0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let c_row = &mut c[i * n + j0..i * n + j1];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &b[kk * n + j0..kk * n + j1];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aik * bv;
                }
            }
        }
        j0 = j1;
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm_block4<T: Element>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    i0: usize,
    k: usize,
    n: usize,
    j0: usize,
    j1: usize,
) {
    let width = j1 - j0;
    let (c0, rest) = c[i0 * n..].split_at_mut(n);
    let (c1, rest) = rest.split_at_mut(n);
    let (c2, rest) = rest.split_at_mut(n);
    let c3 = &mut rest[..n];
    let c0 = &mut c0[j0..j1];
    let c1 = &mut c1[j0..j1];
    let c2 = &mut c2[j0..j1];
    let c3 = &mut c3[j0..j1];
    for kk in 0..k {
        let a0 = a[i0 * k + kk];
        let a1 = a[(i0 + 1) * k + kk];
        let a2 = a[(i0 + 2) * k + kk];
        let a3 = a[(i0 + 3) * k + kk];
        let b_row = &b[kk * n + j0..kk * n + j1];
        for j in 0..width {
            let bv = b_row[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
        }
    }
}

pub fn transpose<T: Element>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn dims2<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(format!(
            "{what} must be 2-D, got {:?}",
            t.shape()
        ))),
    }
}

fn dims4<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(format!(
            "{what} must be 4-D [N,C,H,W], got {:?}",
            t.shape()
        ))),
    }
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Gradients of `a·b` given the upstream gradient: `(dy·bᵀ, aᵀ·dy)`.
pub fn matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let bt = transpose(b.data(), k, n);
    let mut da = vec![T::zero(); m * k];
    gemm(dy.data(), &bt, &mut da, m, n, k);
    let at = transpose(a.data(), m, k);
    let mut db = vec![T::zero(); k * n];
    gemm(&at, dy.data(), &mut db, k, m, n);
    (
        Tensor::from_parts(vec![m, k], da),
        Tensor::from_parts(vec![k, n], db),
    )
}

// ---------------------------------------------------------------------------
// Convolution (3×3, zero padding 1, no bias)

pub fn conv_out_dim(size: usize, stride: usize) -> usize {
    (size + 2 * PADDING - KERNEL) / stride + 1
}

struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.channels * KERNEL * KERNEL
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output position `o` and kernel offset `k`, or `None`
    /// when it falls in the zero padding.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - PADDING as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Unrolls one image `[C,H,W]` into `[C·9, H'·W']`, rows ordered by
/// (channel, kernel row, kernel column).
fn im2col<T: Element>(img: &[T], g: &ConvGeom) -> Vec<T> {
    let ow = g.out_len();
    let mut cols = vec![T::zero(); g.patch_len() * ow];
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * ow..(row + 1) * ow];
                for oy in 0..g.out_h {
                    let Some(sy) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(sx) = g.source(ox, kx, g.width) {
                            dst[oy * g.out_w + ox] = plane[sy * g.width + sx];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds `[C·9, H'·W']` columns back into an image `[C,H,W]`.
fn col2im_add<T: Element>(cols: &[T], img: &mut [T], g: &ConvGeom) {
    let ow = g.out_len();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * ow..(row + 1) * ow];
                for oy in 0..g.out_h {
                    let Some(sy) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(sx) = g.source(ox, kx, g.width) {
                            plane[sy * g.width + sx] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, h, w) = dims4(x, "conv2d input")?;
    let (o, wc, kh, kw) = dims4(weight, "conv2d weight")?;
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::shape(format!(
            "conv2d kernel must be 3x3, got {kh}x{kw}"
        )));
    }
    if wc != c {
        return Err(Error::shape(format!(
            "conv2d expects {wc} input channels, got {c}"
        )));
    }
    if !(stride == 1 || stride == 2) {
        return Err(Error::invalid(format!("conv2d stride must be 1 or 2, got {stride}")));
    }
    if h < KERNEL || w < KERNEL {
        return Err(Error::shape(format!(
            "conv2d input spatial dims must be at least 3, got {h}x{w}"
        )));
    }
    let geom = ConvGeom {
        channels: c,
        height: h,
        width: w,
        out_h: conv_out_dim(h, stride),
        out_w: conv_out_dim(w, stride),
        stride,
    };
    Ok((n, o, geom))
}

/// Cross-correlation of `x[N,C,H,W]` with `weight[O,C,3,3]`, padding 1.
pub fn conv2d<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (n, o, g) = conv_geometry(x, weight, stride)?;
    let in_len = g.channels * g.height * g.width;
    let out_len = o * g.out_len();
    let mut out = vec![T::zero(); n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(dst, img)| {
            let cols = im2col(img, &g);
            gemm(weight.data(), &cols, dst, o, g.patch_len(), g.out_len());
        });
    Ok(Tensor::from_parts(vec![n, o, g.out_h, g.out_w], out))
}

/// Returns `(dx, dweight)` for [`conv2d`].
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, o, g) = conv_geometry(x, weight, stride)?;
    let expect = [n, o, g.out_h, g.out_w];
    if dy.shape() != expect {
        return Err(Error::shape(format!(
            "conv2d upstream gradient {:?}, expected {expect:?}",
            dy.shape()
        )));
    }
    let in_len = g.channels * g.height * g.width;
    let out_len = o * g.out_len();
    let patch = g.patch_len();
    let wt = transpose(weight.data(), o, patch);
    let mut dx = vec![T::zero(); n * in_len];
    let per_image_dw: Vec<Vec<T>> = dx
        .par_chunks_mut(in_len)
        .zip(x.data().par_chunks(in_len))
        .zip(dy.data().par_chunks(out_len))
        .map(|((dx_img, img), dy_img)| {
            let cols = im2col(img, &g);
            let cols_t = transpose(&cols, patch, g.out_len());
            let mut dw = vec![T::zero(); o * patch];
            gemm(dy_img, &cols_t, &mut dw, o, g.out_len(), patch);
            let mut dcols = cols;
            gemm(&wt, dy_img, &mut dcols, patch, o, g.out_len());
            col2im_add(&dcols, dx_img, &g);
            dw
        })
        .collect();
    let mut dw = vec![T::zero(); o * patch];
    for part in &per_image_dw {
        for (acc, &v) in dw.iter_mut().zip(part) {
            *acc += v;
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
    ))
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Element> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Per-channel batch mean (train mode) or the running mean used (eval).
    pub mean: Vec<f64>,
    /// Per-channel biased batch variance (train) or running variance (eval).
    pub var: Vec<f64>,
}

fn channel_layout<T: Element>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [n, c, rest @ ..] => Ok((*n, *c, rest.iter().product::<usize>())),
        _ => Err(Error::shape(format!(
            "batch norm input must be at least 2-D, got {:?}",
            x.shape()
        ))),
    }
}

fn check_channel_vec<T: Element>(v: &Tensor<T>, c: usize, what: &str) -> Result<()> {
    if v.shape() != [c] {
        return Err(Error::shape(format!(
            "{what} must have shape [{c}], got {:?}",
            v.shape()
        )));
    }
    Ok(())
}

/// Normalizes with per-channel batch statistics (biased variance).
pub fn batch_norm_train<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, hw) = channel_layout(x)?;
    check_channel_vec(gamma, c, "gamma")?;
    check_channel_vec(beta, c, "beta")?;
    let count = n * hw;
    if count < 2 {
        return Err(Error::invalid(
            "train-mode batch norm needs more than one value per channel",
        ));
    }
    let data = x.data();
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for &v in &data[base..base + hw] {
                s += v.as_f64();
            }
        }
        let mu = s / count as f64;
        let mut sq = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for &v in &data[base..base + hw] {
                let d = v.as_f64() - mu;
                sq += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / count as f64;
    }
    normalize(x, gamma, beta, mean, var, eps, n, c, hw)
}

/// Normalizes with the supplied running statistics.
pub fn batch_norm_eval<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, hw) = channel_layout(x)?;
    check_channel_vec(gamma, c, "gamma")?;
    check_channel_vec(beta, c, "beta")?;
    check_channel_vec(running_mean, c, "running_mean")?;
    check_channel_vec(running_var, c, "running_var")?;
    let mean = running_mean.data().iter().map(|v| v.as_f64()).collect();
    let var = running_var.data().iter().map(|v| v.as_f64()).collect();
    normalize(x, gamma, beta, mean, var, eps, n, c, hw)
}

#[allow(clippy::too_many_arguments)]
fn normalize<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
    n: usize,
    c: usize,
    hw: usize,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64(1.0 / (v + eps).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
    let mut xhat = vec![T::zero(); x.numel()];
    let mut y = vec![T::zero(); x.numel()];
    let data = x.data();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let (mu, is, g, bt) = (mean_t[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                let h = (data[i] - mu) * is;
                xhat[i] = h;
                y[i] = h * g + bt;
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::from_parts(shape.clone(), y),
        BatchNormCache {
            xhat: Tensor::from_parts(shape, xhat),
            inv_std,
            mean,
            var,
        },
    ))
}

/// Per-channel `(Σ dy, Σ dy·xhat)`.
fn channel_sums<T: Element>(dy: &[T], xhat: &[T], n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let mut dbeta = vec![T::zero(); c];
    let mut dgamma = vec![T::zero(); c];
    for ch in 0..c {
        let mut sb = 0.0f64;
        let mut sg = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sb += dy[i].as_f64();
                sg += (dy[i] * xhat[i]).as_f64();
            }
        }
        dbeta[ch] = T::from_f64(sb);
        dgamma[ch] = T::from_f64(sg);
    }
    (dgamma, dbeta)
}

/// Returns `(dx, dgamma, dbeta)` for train-mode batch norm.
pub fn batch_norm_train_backward<T: Element>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, hw) = channel_layout(dy)?;
    let count = T::from_f64((n * hw) as f64);
    let xhat = cache.xhat.data();
    let (dgamma, dbeta) = channel_sums(dy.data(), xhat, n, c, hw);
    let mut dx = vec![T::zero(); dy.numel()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let scale = gamma.data()[ch] * cache.inv_std[ch] / count;
            for i in base..base + hw {
                dx[i] = scale * (count * dy.data()[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
            }
        }
    }
    Ok((
        Tensor::from_parts(dy.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ))
}

/// Returns `(dx, dgamma, dbeta)` for eval-mode batch norm, where the
/// statistics are constants.
pub fn batch_norm_eval_backward<T: Element>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, hw) = channel_layout(dy)?;
    let (dgamma, dbeta) = channel_sums(dy.data(), cache.xhat.data(), n, c, hw);
    let mut dx = vec![T::zero(); dy.numel()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            for i in base..base + hw {
                dx[i] = scale * dy.data()[i];
            }
        }
    }
    Ok((
        Tensor::from_parts(dy.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ))
}

// ---------------------------------------------------------------------------
// Activations and pooling

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Element>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Max over all spatial positions: `[N,C,H,W] → [N,C]`. Also returns the
/// flat input index of the first maximum in row-major order.
pub fn global_max_pool<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = dims4(x, "global max pool input")?;
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c);
    let mut argmax = Vec::with_capacity(n * c);
    for (plane_idx, plane) in x.data().chunks(hw).enumerate() {
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        out.push(plane[best]);
        argmax.push(plane_idx * hw + best);
    }
    Ok((Tensor::from_parts(vec![n, c], out), argmax))
}

/// Non-overlapping `k×k` max pooling (stride `k`, trailing rows/columns
/// that do not fill a window are dropped).
pub fn max_pool2d<T: Element>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = dims4(x, "max pool input")?;
    if k == 0 || h < k || w < k {
        return Err(Error::shape(format!(
            "max pool window {k} does not fit {h}x{w}"
        )));
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * k * w + ox * k;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (oy * k + dy) * w + ox * k + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), argmax))
}

/// Routes each upstream gradient to its recorded argmax position.
pub fn max_pool_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx[i] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Linear, softmax, loss

/// `x[N,in] · weightᵀ + bias`, with `weight[out,in]` and `bias[out]`.
pub fn linear<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin) = dims2(x, "linear input")?;
    let (fout, win) = dims2(weight, "linear weight")?;
    if fin != win {
        return Err(Error::shape(format!(
            "linear expects {win} input features, got {fin}"
        )));
    }
    check_channel_vec(bias, fout, "linear bias")?;
    let wt = transpose(weight.data(), fout, fin);
    let mut out = vec![T::zero(); n * fout];
    gemm(x.data(), &wt, &mut out, n, fin, fout);
    for row in out.chunks_mut(fout) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(Tensor::from_parts(vec![n, fout], out))
}

/// Returns `(dx, dweight, dbias)` for [`linear`].
pub fn linear_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = weight.shape()[0];
    let mut dx = vec![T::zero(); n * fin];
    gemm(dy.data(), weight.data(), &mut dx, n, fout, fin);
    let dyt = transpose(dy.data(), n, fout);
    let mut dw = vec![T::zero(); fout * fin];
    gemm(&dyt, x.data(), &mut dw, fout, n, fin);
    let mut db = vec![T::zero(); fout];
    for row in dy.data().chunks(fout) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    (
        Tensor::from_parts(vec![n, fin], dx),
        Tensor::from_parts(vec![fout, fin], dw),
        Tensor::from_parts(vec![fout], db),
    )
}

/// Row-wise log-softmax via max-subtracted log-sum-exp.
pub fn log_softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = dims2(logits, "log_softmax input")?;
    if k < 2 {
        return Err(Error::shape("log_softmax needs at least two classes"));
    }
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// `dx = dy − softmax · Σ_row dy`, given the log-softmax output.
pub fn log_softmax_backward<T: Element>(output: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let k = output.shape()[1];
    let mut dx = Vec::with_capacity(output.numel());
    for (orow, grow) in output.data().chunks(k).zip(dy.data().chunks(k)) {
        let mut s = T::zero();
        for &g in grow {
            s += g;
        }
        dx.extend(orow.iter().zip(grow).map(|(&o, &g)| g - o.exp() * s));
    }
    Tensor::from_parts(output.shape().to_vec(), dx)
}

pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(log_softmax(logits)?.map(|v| v.exp()))
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`).
/// Returns the loss and the log-probabilities used for the backward pass.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = dims2(logits, "cross_entropy logits")?;
    if labels.len() != n {
        return Err(Error::shape(format!(
            "cross_entropy got {} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let logp = log_softmax(logits)?;
    let mut total = T::zero();
    for (row, &label) in logp.data().chunks(k).zip(labels) {
        total += -row[label];
    }
    Ok((total / T::from_f64(n as f64), logp))
}

/// `(softmax − onehot) / N`, scaled by the upstream scalar gradient.
pub fn cross_entropy_backward<T: Element>(logp: &Tensor<T>, labels: &[usize], upstream: T) -> Tensor<T> {
    let (n, k) = (logp.shape()[0], logp.shape()[1]);
    let scale = upstream / T::from_f64(n as f64);
    let mut dx = Vec::with_capacity(logp.numel());
    for (row, &label) in logp.data().chunks(k).zip(labels) {
        for (j, &lp) in row.iter().enumerate() {
            let onehot = if j == label { T::one() } else { T::zero() };
            dx.push((lp.exp() - onehot) * scale);
        }
    }
    Tensor::from_parts(logp.shape().to_vec(), dx)
}
