//! Forward/backward kernels for the fixed op set.

use crate::exec::Execution;
use crate::{Error, Result};

use super::tensor::{Param, Tensor};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const GEM_CLAMP: f64 = 1e-6;

/// Output extent of a stride-2 convolution: `ceil(n / 2)`.
#[inline]
pub fn conv_output_dim(n: usize) -> usize {
    n.div_ceil(STRIDE)
}

/// `(before, after)` zero padding for one axis; the odd pixel goes after.
#[inline]
pub fn conv_padding(n: usize) -> (usize, usize) {
    let out = conv_output_dim(n);
    let total = ((out - 1) * STRIDE + KERNEL).saturating_sub(n);
    (total / 2, total - total / 2)
}

// ---------------------------------------------------------------------------
// Convolution

/// 4x4 stride-2 convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    /// `[out, in, 4, 4]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
}

pub struct ConvCache {
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
    pad: (usize, usize),
    /// Per-sample im2col matrices, `[in*16, out_h*out_w]`.
    cols: Vec<Vec<f64>>,
}

impl Conv2d {
    pub fn new(weight: Param, bias: Param) -> Result<Self> {
        let s = weight.value.shape();
        if s.len() != 4 || s[2] != KERNEL || s[3] != KERNEL {
            return Err(Error::invalid(format!(
                "conv kernel must be [out, in, 4, 4], got {s:?}"
            )));
        }
        if bias.value.shape() != [s[0]] {
            return Err(Error::invalid("conv bias must have one entry per output channel"));
        }
        Ok(Conv2d { weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor, exec: Execution) -> Result<(Tensor, ConvCache)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(Error::invalid(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let (oh, ow) = (conv_output_dim(h), conv_output_dim(w));
        let pad = (conv_padding(h).0, conv_padding(w).0);
        let k = c * KERNEL * KERNEL;
        let p = oh * ow;
        let co = self.out_channels();
        let sample_in = c * h * w;

        let cols: Vec<Vec<f64>> = exec.map_range(n, |s| {
            im2col(&x.data()[s * sample_in..(s + 1) * sample_in], c, h, w, oh, ow, pad)
        });

        let mut out = vec![0.0; n * co * p];
        let wdat = self.weight.value.data();
        let bdat = self.bias.value.data();
        exec.for_each_chunk(&mut out, co * p, |s, y| {
            gemm(co, k, p, wdat, (k, 1), &cols[s], (p, 1), y, 0.0);
            for (o, row) in y.chunks_exact_mut(p).enumerate() {
                let b = bdat[o];
                row.iter_mut().for_each(|v| *v += b);
            }
        });
        let out = Tensor::new(vec![n, co, oh, ow], out)?;
        out.ensure_finite("conv2d output")?;
        Ok((
            out,
            ConvCache {
                in_shape: (n, c, h, w),
                out_hw: (oh, ow),
                pad,
                cols,
            },
        ))
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &mut self,
        cache: &ConvCache,
        grad_out: &Tensor,
        exec: Execution,
    ) -> Result<Tensor> {
        let (n, c, h, w) = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let co = self.out_channels();
        let p = oh * ow;
        let k = c * KERNEL * KERNEL;
        if grad_out.shape() != [n, co, oh, ow] {
            return Err(Error::invalid(format!(
                "conv grad shape {:?} does not match output [{n}, {co}, {oh}, {ow}]",
                grad_out.shape()
            )));
        }
        let g = grad_out.data();

        // Parameter gradients: fixed sample order.
        {
            let wg = self.weight.grad.data_mut();
            for s in 0..n {
                let gs = &g[s * co * p..(s + 1) * co * p];
                // dW[co, k] += dY[co, p] * cols^T[p, k]
                gemm(co, p, k, gs, (p, 1), &cache.cols[s], (1, p), wg, 1.0);
            }
            let bg = self.bias.grad.data_mut();
            for s in 0..n {
                for (o, row) in g[s * co * p..(s + 1) * co * p].chunks_exact(p).enumerate() {
                    bg[o] += row.iter().sum::<f64>();
                }
            }
        }

        let wdat = self.weight.value.data();
        let mut dx = vec![0.0; n * c * h * w];
        exec.for_each_chunk(&mut dx, c * h * w, |s, dxs| {
            let gs = &g[s * co * p..(s + 1) * co * p];
            let mut dcols = vec![0.0; k * p];
            // dcols[k, p] = W^T[k, co] * dY[co, p]
            gemm(k, co, p, wdat, (1, k), gs, (p, 1), &mut dcols, 0.0);
            col2im(&dcols, dxs, c, h, w, oh, ow, cache.pad);
        });
        Tensor::new(vec![n, c, h, w], dx)
    }
}

/// `c[m, n] = a[m, k] * b[k, n] + beta * c`, strides given as (row, col).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: slices cover the strided extents asserted by the callers'
    // shape bookkeeping; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pad: (usize, usize),
) -> Vec<f64> {
    let p = oh * ow;
    let mut cols = vec![0.0; c * KERNEL * KERNEL * p];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = ((ch * KERNEL + ky) * KERNEL + kx) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * STRIDE + kx) as isize - pad.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    dx: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pad: (usize, usize),
) {
    let p = oh * ow;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = ((ch * KERNEL + ky) * KERNEL + kx) * p;
                let src = &cols[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * STRIDE + kx) as isize - pad.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Leaky ReLU

pub fn leaky_relu_forward(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v >= 0.0 { v } else { LEAKY_SLOPE * v })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Slope 1 at exactly zero.
pub fn leaky_relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v >= 0.0 { g } else { LEAKY_SLOPE * g })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// Batch normalization

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache {
    mode: BnMode,
    shape: (usize, usize, usize, usize),
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(gamma: Param, beta: Param) -> Self {
        let c = gamma.numel();
        BatchNorm {
            gamma,
            beta,
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

/// Per-channel normalization over `(batch, height, width)`.
///
/// Train mode normalizes by the batch statistics and folds them into the
/// running estimates (unbiased variance); eval mode uses the running
/// estimates and leaves them untouched.
pub fn batch_norm_forward(
    x: &Tensor,
    bn: &mut BatchNorm,
    mode: BnMode,
) -> Result<(Tensor, BnCache)> {
    let (n, c, h, w) = x.dims4()?;
    if c != bn.channels() {
        return Err(Error::invalid(format!(
            "batch norm has {} channels, input has {c}",
            bn.channels()
        )));
    }
    let hw = h * w;
    let count = n * hw;
    if mode == BnMode::Train && count < 2 {
        return Err(Error::invalid(
            "train-mode batch norm needs at least two values per channel",
        ));
    }
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut inv_std = vec![0.0; c];
    match mode {
        BnMode::Train => {
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                }
                let mu = s / count as f64;
                let mut ss = 0.0;
                for b in 0..n {
                    ss += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                let var = ss / count as f64;
                mean[ch] = mu;
                inv_std[ch] = 1.0 / (var + bn.eps).sqrt();
                let unbiased = ss / (count - 1) as f64;
                bn.running_mean[ch] = (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mu;
                bn.running_var[ch] =
                    (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * unbiased;
            }
        }
        BnMode::Eval => {
            for ch in 0..c {
                mean[ch] = bn.running_mean[ch];
                inv_std[ch] = 1.0 / (bn.running_var[ch] + bn.eps).sqrt();
            }
        }
    }
    let gamma = bn.gamma.value.data();
    let beta = bn.beta.value.data();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for i in r {
                let z = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = z;
                out[i] = gamma[ch] * z + beta[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        BnCache {
            mode,
            shape: (n, c, h, w),
            xhat,
            inv_std,
        },
    ))
}

/// Accumulates gamma/beta gradients and returns the input gradient, including
/// the path through the batch statistics in train mode.
pub fn batch_norm_backward(bn: &mut BatchNorm, cache: &BnCache, grad_out: &Tensor) -> Tensor {
    let (n, c, h, w) = cache.shape;
    let hw = h * w;
    let count = (n * hw) as f64;
    let g = grad_out.data();
    let gamma = bn.gamma.value.data().to_vec();
    let mut dx = vec![0.0; g.len()];
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sum_g += g[i];
                sum_gx += g[i] * cache.xhat[i];
            }
        }
        bn.beta.grad.data_mut()[ch] += sum_g;
        bn.gamma.grad.data_mut()[ch] += sum_gx;
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                dx[i] = match cache.mode {
                    BnMode::Train => {
                        scale * (g[i] - sum_g / count - cache.xhat[i] * sum_gx / count)
                    }
                    BnMode::Eval => scale * g[i],
                };
            }
        }
    }
    Tensor::new(vec![n, c, h, w], dx).expect("same shape")
}

// ---------------------------------------------------------------------------
// Generalized-mean pooling

/// `[n, c, h, w] -> [n, c]`, `f = (mean(max(x, 1e-6)^p))^(1/p)`.
pub fn gem_pool_forward(x: &Tensor, p: f64) -> Result<Tensor> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("GeM exponent must be >= 1, got {p}")));
    }
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let out: Vec<f64> = x
        .data()
        .chunks_exact(hw)
        .map(|plane| {
            let m = plane.iter().map(|&v| pow(v.max(GEM_CLAMP), p)).sum::<f64>() / hw as f64;
            pow(m, 1.0 / p)
        })
        .collect();
    debug_assert_eq!(out.len(), n * c);
    let t = Tensor::new(vec![n, c], out)?;
    t.ensure_finite("gem pool")?;
    Ok(t)
}

/// Gradient flows only through entries above the clamp.
pub fn gem_pool_backward(x: &Tensor, pooled: &Tensor, p: f64, grad_out: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4().expect("rank-4 input");
    let hw = h * w;
    let mut dx = vec![0.0; x.numel()];
    for (i, (plane, dplane)) in x
        .data()
        .chunks_exact(hw)
        .zip(dx.chunks_exact_mut(hw))
        .enumerate()
    {
        let f = pooled.data()[i];
        let g = grad_out.data()[i];
        // m^(1/p - 1) = f^(1 - p)
        let coef = g * pow(f, 1.0 - p) / hw as f64;
        for (&v, d) in plane.iter().zip(dplane.iter_mut()) {
            if v > GEM_CLAMP {
                *d = coef * pow(v, p - 1.0);
            }
        }
    }
    Tensor::new(vec![n, c, h, w], dx).expect("same shape")
}

#[inline]
fn pow(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 3.0 {
        x * x * x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

// ---------------------------------------------------------------------------
// Bilinear resize (align_corners = false)

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

pub fn resize_bilinear_forward(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.data().chunks_exact(h * w) {
        for y in &ty {
            for xx in &tx {
                let a = plane[y.i0 * w + xx.i0];
                let b = plane[y.i0 * w + xx.i1];
                let cc = plane[y.i1 * w + xx.i0];
                let d = plane[y.i1 * w + xx.i1];
                let top = a + (b - a) * xx.frac;
                let bot = cc + (d - cc) * xx.frac;
                out.push(top + (bot - top) * y.frac);
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

pub fn resize_bilinear_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = in_shape[..] else {
        return Err(Error::invalid("resize input must be rank 4"));
    };
    let (_, _, out_h, out_w) = grad_out.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut dx = vec![0.0; n * c * h * w];
    for (gplane, dplane) in grad_out
        .data()
        .chunks_exact(out_h * out_w)
        .zip(dx.chunks_exact_mut(h * w))
    {
        for (oy, y) in ty.iter().enumerate() {
            for (ox, xx) in tx.iter().enumerate() {
                let g = gplane[oy * out_w + ox];
                let gt = g * (1.0 - y.frac);
                let gb = g * y.frac;
                dplane[y.i0 * w + xx.i0] += gt * (1.0 - xx.frac);
                dplane[y.i0 * w + xx.i1] += gt * xx.frac;
                dplane[y.i1 * w + xx.i0] += gb * (1.0 - xx.frac);
                dplane[y.i1 * w + xx.i1] += gb * xx.frac;
            }
        }
    }
    Tensor::new(vec![n, c, h, w], dx)
}

// ---------------------------------------------------------------------------
// Channel concatenation

pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for t in xs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::invalid(format!(
                "concat needs matching batch/spatial dims, got {:?} vs {:?}",
                first.shape(),
                t.shape()
            )));
        }
        total_c += tc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total_c * hw);
    for b in 0..n {
        for t in xs {
            let tc = t.shape()[1];
            out.extend_from_slice(&t.data()[b * tc * hw..(b + 1) * tc * hw]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], out)
}

/// Inverse of [`concat_channels`]: splits the channel axis into `sizes`.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = x.dims4()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::invalid("split sizes do not sum to channel count"));
    }
    let hw = h * w;
    let mut parts: Vec<Vec<f64>> = sizes.iter().map(|&s| Vec::with_capacity(n * s * hw)).collect();
    for b in 0..n {
        let mut off = b * c * hw;
        for (part, &s) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&x.data()[off..off + s * hw]);
            off += s * hw;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::new(vec![n, s, h, w], d))
        .collect()
}

// ---------------------------------------------------------------------------
// L2 normalization of rows

pub fn l2_normalize_forward(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = x.dims2()?;
    let mut norms = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n * d);
    for row in x.data().chunks_exact(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::numeric(format!("cannot normalize a vector of norm {norm}")));
        }
        norms.push(norm);
        out.extend(row.iter().map(|v| v / norm));
    }
    Ok((Tensor::new(vec![n, d], out)?, norms))
}

/// `dx = (dy - y <y, dy>) / |x|`
pub fn l2_normalize_backward(y: &Tensor, norms: &[f64], grad_out: &Tensor) -> Tensor {
    let d = y.shape()[1];
    let mut dx = Vec::with_capacity(y.numel());
    for ((yr, gr), &norm) in y
        .data()
        .chunks_exact(d)
        .zip(grad_out.data().chunks_exact(d))
        .zip(norms)
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        dx.extend(yr.iter().zip(gr).map(|(yv, gv)| (gv - yv * dot) / norm));
    }
    Tensor::new(y.shape().to_vec(), dx).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn conv_with(weight: Tensor, bias: Vec<f64>) -> Conv2d {
        let nb = bias.len();
        Conv2d::new(
            Param::new("w", weight),
            Param::new("b", Tensor::new(vec![nb], bias).unwrap()),
        )
        .unwrap()
    }

    /// Direct 7-loop convolution, independent of im2col/gemm.
    fn conv_naive(x: &Tensor, wt: &Tensor, bias: &[f64]) -> Tensor {
        let (n, c, h, w) = x.dims4().unwrap();
        let co = wt.shape()[0];
        let (oh, ow) = (conv_output_dim(h), conv_output_dim(w));
        let (pt, pl) = (conv_padding(h).0 as isize, conv_padding(w).0 as isize);
        let mut out = vec![0.0; n * co * oh * ow];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = bias[o];
                        for ch in 0..c {
                            for ky in 0..4 {
                                for kx in 0..4 {
                                    let iy = (oy * 2 + ky) as isize - pt;
                                    let ix = (ox * 2 + kx) as isize - pl;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        s += x.data()[((b * c + ch) * h + iy as usize) * w + ix as usize]
                                            * wt.data()[((o * c + ch) * 4 + ky) * 4 + kx];
                                    }
                                }
                            }
                        }
                        out[((b * co + o) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        Tensor::new(vec![n, co, oh, ow], out).unwrap()
    }

    #[test]
    fn padding_rule() {
        assert_eq!(conv_padding(4), (1, 1));
        assert_eq!(conv_padding(5), (1, 2));
        assert_eq!(conv_padding(1), (1, 2));
        assert_eq!(conv_output_dim(7), 4);
    }

    #[test]
    fn conv_zero_input_zero_output() {
        let conv = conv_with(rand_tensor(&[3, 2, 4, 4], 1), vec![0.0; 3]);
        let (y, _) = conv.forward(&Tensor::zeros(&[2, 2, 6, 5]), Execution::Sequential).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[2, 3, 3, 3]);
    }

    #[test]
    fn conv_ones_hand_values() {
        // 4x4 ones, one pixel of padding on every side: each 4x4 window
        // sees a 3x3 block of ones.
        let conv = conv_with(Tensor::full(&[1, 1, 4, 4], 1.0), vec![0.0]);
        let (y, _) = conv
            .forward(&Tensor::full(&[1, 1, 4, 4], 1.0), Execution::Sequential)
            .unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[9.0, 9.0, 9.0, 9.0]);
    }

    #[test]
    fn conv_matches_naive_loop() {
        for (seed, shape) in [(3u64, [2, 3, 7, 9]), (4, [1, 2, 1, 1]), (5, [3, 1, 8, 8])] {
            let x = rand_tensor(&shape, seed);
            let wt = rand_tensor(&[4, shape[1], 4, 4], seed + 100);
            let bias: Vec<f64> = (0..4).map(|i| i as f64 * 0.1).collect();
            let conv = conv_with(wt.clone(), bias.clone());
            let (y, _) = conv.forward(&x, Execution::Sequential).unwrap();
            let oracle = conv_naive(&x, &wt, &bias);
            for (a, b) in y.data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let conv = conv_with(rand_tensor(&[3, 2, 4, 4], 1), vec![0.0; 3]);
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[1, 3, 4, 4]), Execution::Sequential),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn conv_parallel_is_bit_identical() {
        let x = rand_tensor(&[4, 3, 10, 12], 9);
        let mut a = conv_with(rand_tensor(&[5, 3, 4, 4], 10), vec![0.3; 5]);
        let mut b = a.clone();
        let (ya, ca) = a.forward(&x, Execution::Sequential).unwrap();
        let (yb, cb) = b.forward(&x, Execution::Parallel).unwrap();
        assert_eq!(ya, yb);
        let g = rand_tensor(ya.shape(), 11);
        let da = a.backward(&ca, &g, Execution::Sequential).unwrap();
        let db = b.backward(&cb, &g, Execution::Parallel).unwrap();
        assert_eq!(da, db);
        assert_eq!(a.weight.grad, b.weight.grad);
    }

    #[test]
    fn leaky_values() {
        let x = Tensor::new(vec![3], vec![1.0, -1.0, 0.0]).unwrap();
        assert_eq!(leaky_relu_forward(&x).data(), &[1.0, -0.2, 0.0]);
        let g = Tensor::full(&[3], 1.0);
        assert_eq!(leaky_relu_backward(&x, &g).data(), &[1.0, 0.2, 1.0]);
    }

    fn bn(c: usize, beta: f64) -> BatchNorm {
        BatchNorm::new(
            Param::new("g", Tensor::full(&[c], 1.0)),
            Param::new("b", Tensor::full(&[c], beta)),
        )
    }

    #[test]
    fn bn_identity_on_standardized_batch() {
        // each channel: values ±1 in equal numbers -> mean 0, var 1
        let data: Vec<f64> = (0..2 * 2 * 4).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::new(vec![2, 2, 2, 2], data).unwrap();
        let mut layer = bn(2, 0.0);
        let (y, _) = batch_norm_forward(&x, &mut layer, BnMode::Train).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn bn_constant_maps_to_beta() {
        let x = Tensor::full(&[2, 3, 2, 2], 4.2);
        let mut layer = bn(3, 5.0);
        let (y, _) = batch_norm_forward(&x, &mut layer, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn bn_running_stats_only_in_train() {
        let x = rand_tensor(&[2, 2, 3, 3], 1);
        let mut layer = bn(2, 0.0);
        batch_norm_forward(&x, &mut layer, BnMode::Eval).unwrap();
        assert_eq!(layer.running_mean, vec![0.0; 2]);
        assert_eq!(layer.running_var, vec![1.0; 2]);
        batch_norm_forward(&x, &mut layer, BnMode::Train).unwrap();
        assert_ne!(layer.running_mean, vec![0.0; 2]);
        assert!(layer.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn bn_single_element_rejected() {
        let mut layer = bn(2, 0.0);
        assert!(matches!(
            batch_norm_forward(&Tensor::zeros(&[1, 2, 1, 1]), &mut layer, BnMode::Train),
            Err(Error::InvalidArgument(_))
        ));
        assert!(batch_norm_forward(&Tensor::zeros(&[1, 2, 1, 1]), &mut layer, BnMode::Eval).is_ok());
    }

    #[test]
    fn gem_examples() {
        let x = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let f = gem_pool_forward(&x, 3.0).unwrap();
        assert!((f.data()[0] - 4.5f64.cbrt()).abs() < 1e-12);
        assert!((4.5f64.cbrt() - 1.650964).abs() < 1e-6);

        let x = rand_tensor(&[2, 3, 4, 5], 3);
        let f = gem_pool_forward(&x, 1.0).unwrap();
        for (plane, v) in x.data().chunks(20).zip(f.data()) {
            let mean = plane.iter().map(|v| v.max(GEM_CLAMP)).sum::<f64>() / 20.0;
            assert!((mean - v).abs() < 1e-12);
        }
        assert!(gem_pool_forward(&x, 0.5).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let x = rand_tensor(&[1, 2, 3, 4], 5);
        assert_eq!(resize_bilinear_forward(&x, 3, 4).unwrap(), x);
        let c = Tensor::full(&[1, 1, 2, 3], 0.7);
        let y = resize_bilinear_forward(&c, 5, 7).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(resize_bilinear_forward(&c, 0, 2).is_err());
    }

    #[test]
    fn concat_and_split_are_inverse() {
        let a = rand_tensor(&[2, 3, 2, 2], 1);
        let b = rand_tensor(&[2, 1, 2, 2], 2);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        let parts = split_channels(&c, &[3, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        let bad = rand_tensor(&[2, 1, 3, 2], 3);
        assert!(concat_channels(&[&a, &bad]).is_err());
    }

    #[test]
    fn l2_examples() {
        let x = rand_tensor(&[3, 7], 8);
        let (y, _) = l2_normalize_forward(&x).unwrap();
        for r in 0..3 {
            let n: f64 = y.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let scaled = Tensor::new(vec![3, 7], x.data().iter().map(|v| v * 3.5).collect()).unwrap();
        let (ys, _) = l2_normalize_forward(&scaled).unwrap();
        for (a, b) in y.data().iter().zip(ys.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            l2_normalize_forward(&Tensor::zeros(&[1, 4])),
            Err(Error::Numeric(_))
        ));
    }
}
