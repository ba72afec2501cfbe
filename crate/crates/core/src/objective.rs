//! Weighted soft-margin triplet loss over exhaustively mined in-batch
//! triplets.
//!
//! Row `i` of the ground and satellite embedding matrices is matched pair `i`.
//! Every ground anchor is paired with its own satellite tile as positive and
//! every other tile as negative, and symmetrically for satellite anchors, for
//! `2B(B-1)` triplets per batch. The loss of one triplet is
//! `softplus(alpha * (|a - p|^2 - |a - n|^2))` and the batch loss is the mean.

use serde::{Deserialize, Serialize};

use crate::autonn::Tensor;
use crate::exec::Execution;
use crate::geometry::View;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// `(anchor, positive, negative)` with the anchor drawn from `anchor_view`
/// row `anchor`, the positive from the other view's row `anchor` and the
/// negative from the other view's row `negative`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor_view: View,
    pub anchor: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn positive(&self) -> usize {
        self.anchor
    }
}

/// All `2B(B-1)` triplets: ground anchors first, then satellite anchors,
/// each anchor-major with negatives ascending.
pub fn exhaustive_triplets(batch_size: usize) -> Vec<Triplet> {
    let mut out = Vec::with_capacity(2 * batch_size * batch_size.saturating_sub(1));
    for anchor_view in [View::Ground, View::Satellite] {
        for anchor in 0..batch_size {
            for negative in (0..batch_size).filter(|&j| j != anchor) {
                out.push(Triplet {
                    anchor_view,
                    anchor,
                    negative,
                });
            }
        }
    }
    out
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn soft_margin_triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    params: LossParams,
) -> f64 {
    let delta = squared_distance(anchor, positive) - squared_distance(anchor, negative);
    softplus(params.alpha * delta)
}

/// Matched ground/satellite embeddings, `[B, D]` each.
#[derive(Clone, Debug)]
pub struct TripletBatch<'a> {
    pub ground: &'a Tensor,
    pub satellite: &'a Tensor,
}

impl<'a> TripletBatch<'a> {
    pub fn new(ground: &'a Tensor, satellite: &'a Tensor) -> Result<Self> {
        let (bg, dg) = ground.dims2()?;
        let (bs, ds) = satellite.dims2()?;
        if (bg, dg) != (bs, ds) {
            return Err(Error::invalid(format!(
                "ground batch is {bg}x{dg}, satellite batch is {bs}x{ds}"
            )));
        }
        Ok(TripletBatch { ground, satellite })
    }

    pub fn size(&self) -> usize {
        self.ground.shape()[0]
    }
}

/// Loss and gradients w.r.t. both embedding matrices.
pub struct BatchLoss {
    pub loss: f64,
    pub grad_ground: Tensor,
    pub grad_satellite: Tensor,
}

/// Mean loss over all exhaustive triplets.
pub fn batch_loss(batch: &TripletBatch<'_>, params: LossParams) -> Result<f64> {
    Ok(batch_loss_with_grad(batch, params, Execution::Sequential)?.loss)
}

pub fn batch_loss_with_grad(
    batch: &TripletBatch<'_>,
    params: LossParams,
    exec: Execution,
) -> Result<BatchLoss> {
    let b = batch.size();
    if b < 2 {
        return Err(Error::invalid(format!("batch loss needs B >= 2, got {b}")));
    }
    let (_, d) = batch.ground.dims2()?;
    let g = batch.ground;
    let s = batch.satellite;
    // dist[i][j] = |g_i - s_j|^2
    let dist: Vec<Vec<f64>> = exec.map_range(b, |i| {
        (0..b).map(|j| squared_distance(g.row(i), s.row(j))).collect()
    });

    let triplets = exhaustive_triplets(b);
    let count = triplets.len() as f64;
    let alpha = params.alpha;
    // d loss / d dist[i][j]
    let mut d_dist = vec![vec![0.0; b]; b];
    let mut total = 0.0;
    for t in &triplets {
        let (i, j) = (t.anchor, t.negative);
        let (pos, neg, neg_idx) = match t.anchor_view {
            View::Ground => (dist[i][i], dist[i][j], (i, j)),
            View::Satellite => (dist[i][i], dist[j][i], (j, i)),
        };
        let z = alpha * (pos - neg);
        total += softplus(z);
        let w = sigmoid(z) * alpha / count;
        d_dist[i][i] += w;
        d_dist[neg_idx.0][neg_idx.1] -= w;
    }
    let loss = total / count;

    let mut grad_g = vec![0.0; b * d];
    let mut grad_s = vec![0.0; b * d];
    for i in 0..b {
        for j in 0..b {
            let w = d_dist[i][j];
            if w == 0.0 {
                continue;
            }
            let (gi, sj) = (g.row(i), s.row(j));
            for k in 0..d {
                let diff = 2.0 * w * (gi[k] - sj[k]);
                grad_g[i * d + k] += diff;
                grad_s[j * d + k] -= diff;
            }
        }
    }
    Ok(BatchLoss {
        loss,
        grad_ground: Tensor::new(vec![b, d], grad_g)?,
        grad_satellite: Tensor::new(vec![b, d], grad_s)?,
    })
}
