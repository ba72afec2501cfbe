//! Shared test oracles: central finite differences and per-op gradient checks.
#![allow(dead_code)]

use crossview::autonn::{
    batch_norm_backward, batch_norm_forward, gem_pool_backward, gem_pool_forward,
    l2_normalize_backward, l2_normalize_forward, resize_bilinear_backward,
    resize_bilinear_forward, BatchNorm, BnMode, Conv2d, Param, Tensor,
};
use crossview::exec::Execution;
use crossview::geometry::View;
use crossview::model::{ModelConfig, Scheme, SiameseModel};
use crossview::objective::{batch_loss, batch_loss_with_grad, LossParams, TripletBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + FD_STEP;
            let hi = f(&xp);
            xp[i] = orig - FD_STEP;
            let lo = f(&xp);
            xp[i] = orig;
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with_data(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

/// `f = <r, conv(x)>` w.r.t. input, weight and bias.
pub fn conv2d_check(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, co) = (2, g.random_range(1..4), g.random_range(1..5));
    let (h, w) = (g.random_range(3..9), g.random_range(3..9));
    let x = random_tensor(&[n, c, h, w], &mut g, -1.0, 1.0);
    let weight = random_tensor(&[co, c, 4, 4], &mut g, -0.5, 0.5);
    let bias = random_tensor(&[co], &mut g, -0.5, 0.5);
    let conv = |wt: &Tensor, b: &Tensor| {
        Conv2d::new(Param::new("w", wt.clone()), Param::new("b", b.clone())).unwrap()
    };
    let exec = Execution::Sequential;
    let mut layer = conv(&weight, &bias);
    let (y, cache) = layer.forward(&x, exec).unwrap();
    let r = random_tensor(y.shape(), &mut g, -1.0, 1.0);
    let dx = layer.backward(&cache, &r, exec).unwrap();

    let eval = |x: &Tensor, wt: &Tensor, b: &Tensor| dot(r.data(), conv(wt, b).forward(x, exec).unwrap().0.data());
    let nx = numeric_grad(x.data(), |d| eval(&with_data(&x, d), &weight, &bias));
    let nw = numeric_grad(weight.data(), |d| eval(&x, &with_data(&weight, d), &bias));
    let nb = numeric_grad(bias.data(), |d| eval(&x, &weight, &with_data(&bias, d)));
    max_rel_error(dx.data(), &nx)
        .max(max_rel_error(layer.weight.grad.data(), &nw))
        .max(max_rel_error(layer.bias.grad.data(), &nb))
}

/// Train-mode batch norm w.r.t. input, gamma and beta.
pub fn batch_norm_check(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, h, w) = (g.random_range(2..4), g.random_range(1..4), 3, g.random_range(2..5));
    let x = random_tensor(&[n, c, h, w], &mut g, -2.0, 2.0);
    let gamma = random_tensor(&[c], &mut g, 0.5, 1.5);
    let beta = random_tensor(&[c], &mut g, -0.5, 0.5);
    let make = |ga: &Tensor, be: &Tensor| BatchNorm::new(Param::new("g", ga.clone()), Param::new("b", be.clone()));
    let mut bn = make(&gamma, &beta);
    let (y, cache) = batch_norm_forward(&x, &mut bn, BnMode::Train).unwrap();
    let r = random_tensor(y.shape(), &mut g, -1.0, 1.0);
    let dx = batch_norm_backward(&mut bn, &cache, &r);

    let eval = |x: &Tensor, ga: &Tensor, be: &Tensor| {
        let mut bn = make(ga, be);
        dot(r.data(), batch_norm_forward(x, &mut bn, BnMode::Train).unwrap().0.data())
    };
    let nx = numeric_grad(x.data(), |d| eval(&with_data(&x, d), &gamma, &beta));
    let ng = numeric_grad(gamma.data(), |d| eval(&x, &with_data(&gamma, d), &beta));
    let nb = numeric_grad(beta.data(), |d| eval(&x, &gamma, &with_data(&beta, d)));
    max_rel_error(dx.data(), &nx)
        .max(max_rel_error(bn.gamma.grad.data(), &ng))
        .max(max_rel_error(bn.beta.grad.data(), &nb))
}

/// GeM with p = 3; inputs mix positives with negatives well below the clamp.
pub fn gem_pool_check(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = [2, g.random_range(1..4), g.random_range(1..4), g.random_range(2..5)];
    let mut x = random_tensor(&shape, &mut g, 0.05, 2.0);
    for v in x.data_mut() {
        if g.random_bool(0.25) {
            *v = -*v;
        }
    }
    let p = 3.0;
    let pooled = gem_pool_forward(&x, p).unwrap();
    let r = random_tensor(pooled.shape(), &mut g, -1.0, 1.0);
    let dx = gem_pool_backward(&x, &pooled, p, &r);
    let nx = numeric_grad(x.data(), |d| dot(r.data(), gem_pool_forward(&with_data(&x, d), p).unwrap().data()));
    max_rel_error(dx.data(), &nx)
}

/// Bilinear resize, both upsampling and downsampling.
pub fn resize_check(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (h, w) = (g.random_range(1..6), g.random_range(1..6));
    let (oh, ow) = (g.random_range(1..9), g.random_range(1..9));
    let x = random_tensor(&[2, 2, h, w], &mut g, -1.0, 1.0);
    let y = resize_bilinear_forward(&x, oh, ow).unwrap();
    let r = random_tensor(y.shape(), &mut g, -1.0, 1.0);
    let dx = resize_bilinear_backward(x.shape(), &r).unwrap();
    let nx = numeric_grad(x.data(), |d| {
        dot(r.data(), resize_bilinear_forward(&with_data(&x, d), oh, ow).unwrap().data())
    });
    max_rel_error(dx.data(), &nx)
}

pub fn l2_normalize_check(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&[3, g.random_range(2..9)], &mut g, -1.0, 1.0);
    let (y, norms) = l2_normalize_forward(&x).unwrap();
    let r = random_tensor(y.shape(), &mut g, -1.0, 1.0);
    let dx = l2_normalize_backward(&y, &norms, &r);
    let nx = numeric_grad(x.data(), |d| dot(r.data(), l2_normalize_forward(&with_data(&x, d)).unwrap().0.data()));
    max_rel_error(dx.data(), &nx)
}

/// Soft-margin exhaustive-triplet loss w.r.t. both embedding matrices.
pub fn batch_loss_check(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (b, d) = (g.random_range(2..6), g.random_range(2..7));
    let gr = random_tensor(&[b, d], &mut g, -0.5, 0.5);
    let sa = random_tensor(&[b, d], &mut g, -0.5, 0.5);
    let params = LossParams { alpha: 10.0 };
    let bl = batch_loss_with_grad(&TripletBatch::new(&gr, &sa).unwrap(), params, Execution::Sequential).unwrap();
    let f = |a: &Tensor, s: &Tensor| batch_loss(&TripletBatch::new(a, s).unwrap(), params).unwrap();
    let ng = numeric_grad(gr.data(), |x| f(&with_data(&gr, x), &sa));
    let ns = numeric_grad(sa.data(), |x| f(&gr, &with_data(&sa, x)));
    max_rel_error(bl.grad_ground.data(), &ng).max(max_rel_error(bl.grad_satellite.data(), &ns))
}

pub fn tiny_model_config(scheme: Scheme) -> ModelConfig {
    ModelConfig {
        schedule: vec![4, 6],
        scheme,
        gem_p: 3.0,
    }
}

fn model_loss(model: &mut SiameseModel, gi: &Tensor, si: &Tensor, params: LossParams) -> f64 {
    let exec = Execution::Sequential;
    let (ge, _) = model.forward(View::Ground, gi, BnMode::Train, exec).unwrap();
    let (se, _) = model.forward(View::Satellite, si, BnMode::Train, exec).unwrap();
    batch_loss(&TripletBatch::new(&ge, &se).unwrap(), params).unwrap()
}

pub struct ModelCheck {
    pub max_rel_error: f64,
    /// Samples redrawn because an activation kink lies within the step.
    pub rejected: usize,
}

/// Triplet loss through a two-block model, checked on `samples` randomly
/// chosen parameter entries.
///
/// The loss is only piecewise smooth (leaky-ReLU, GeM clamp). Entries whose
/// central differences at `h` and `h/2` disagree straddle a kink and are
/// redrawn; the test uses only finite-difference values.
pub fn model_check(seed: u64, scheme: Scheme, samples: usize) -> ModelCheck {
    let mut g = rng(seed);
    let exec = Execution::Sequential;
    let params = LossParams { alpha: 10.0 };
    let mut model = SiameseModel::new(tiny_model_config(scheme), seed).unwrap();
    let b = 3;
    let gi = random_tensor(&[b, 3, 8, 16], &mut g, -1.0, 1.0);
    let si = random_tensor(&[b, 3, 8, 8], &mut g, -1.0, 1.0);

    model.zero_grad();
    let (ge, gc) = model.forward(View::Ground, &gi, BnMode::Train, exec).unwrap();
    let (se, sc) = model.forward(View::Satellite, &si, BnMode::Train, exec).unwrap();
    let bl = batch_loss_with_grad(&TripletBatch::new(&ge, &se).unwrap(), params, exec).unwrap();
    model.backward(&gc, &bl.grad_ground, exec).unwrap();
    model.backward(&sc, &bl.grad_satellite, exec).unwrap();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut out = ModelCheck {
        max_rel_error: 0.0,
        rejected: 0,
    };
    let mut accepted = 0;
    while accepted < samples {
        let mut flat = g.random_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let analytic = model.params()[pi].grad.data()[flat];
        let orig = model.params()[pi].value.data()[flat];
        let mut at = |v: f64| {
            model.params_mut()[pi].value.data_mut()[flat] = v;
            model_loss(&mut model, &gi, &si, params)
        };
        let central = |h: f64, at: &mut dyn FnMut(f64) -> f64| (at(orig + h) - at(orig - h)) / (2.0 * h);
        let full = central(FD_STEP, &mut at);
        let half = central(FD_STEP / 2.0, &mut at);
        model.params_mut()[pi].value.data_mut()[flat] = orig;
        if rel_error(full, half) > 1e-5 {
            out.rejected += 1;
            continue;
        }
        accepted += 1;
        out.max_rel_error = out.max_rel_error.max(rel_error(analytic, full));
    }
    out
}
