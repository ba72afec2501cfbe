//! Two-branch Siamese encoder with orientation injection.
//!
//! Each branch is a stack of `conv(4x4, stride 2) -> leaky-ReLU -> batch norm`
//! blocks. The orientation map enters at the input (Scheme I) or at the input
//! and after every block (Scheme II). The last three block outputs are resized
//! to the earliest one's spatial size, stacked along channels, GeM-pooled and
//! L2-normalized. The two branches never share parameters.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autonn::checkpoint::NamedTensor;
use crate::autonn::{
    batch_norm_backward, batch_norm_forward, concat_channels, gem_pool_backward, gem_pool_forward,
    init_weights, l2_normalize_backward, l2_normalize_forward, leaky_relu_backward,
    leaky_relu_forward, resize_bilinear_backward, resize_bilinear_forward, split_channels,
    BatchNorm, BnCache, BnMode, Checkpoint, Conv2d, ConvCache, InitKind, Param, Tensor,
};
use crate::exec::Execution;
use crate::geometry::{
    downsample_uv, ground_orientation_map, satellite_orientation_map, OrientationMap, View,
};
use crate::{Error, Result};

pub const DEFAULT_SCHEDULE: [usize; 7] = [64, 128, 256, 512, 512, 512, 512];
pub const DEFAULT_GEM_P: f64 = 3.0;
/// Number of trailing blocks aggregated into the descriptor.
pub const AGGREGATED_BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Orientation channels concatenated once, at the input.
    I,
    /// Orientation channels at the input and after every block.
    II,
    /// Plain RGB input, no orientation channels.
    RgbBaseline,
}

impl Scheme {
    pub fn uses_orientation(self) -> bool {
        self != Scheme::RgbBaseline
    }

    pub fn input_channels(self) -> usize {
        if self.uses_orientation() {
            5
        } else {
            3
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::I => "I",
            Scheme::II => "II",
            Scheme::RgbBaseline => "rgb-baseline",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(Scheme::I),
            "II" | "ii" | "2" => Ok(Scheme::II),
            "rgb-baseline" | "rgb" => Ok(Scheme::RgbBaseline),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels per block.
    pub schedule: Vec<usize>,
    pub scheme: Scheme,
    pub gem_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            scheme: Scheme::I,
            gem_p: DEFAULT_GEM_P,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() || self.schedule.len() > 7 {
            return Err(Error::invalid(format!(
                "channel schedule must have 1 to 7 blocks, got {}",
                self.schedule.len()
            )));
        }
        if self.schedule.contains(&0) {
            return Err(Error::invalid("channel schedule entries must be positive"));
        }
        if !(self.gem_p >= 1.0) {
            return Err(Error::invalid(format!("gem_p must be >= 1, got {}", self.gem_p)));
        }
        Ok(())
    }

    /// Descriptor length: sum of the aggregated blocks' channel counts.
    pub fn descriptor_dim(&self) -> usize {
        let n = self.schedule.len();
        self.schedule[n.saturating_sub(AGGREGATED_BLOCKS)..].iter().sum()
    }

    fn block_in_channels(&self, k: usize) -> usize {
        let extra = if self.scheme == Scheme::II { 2 } else { 0 };
        if k == 0 {
            self.scheme.input_channels()
        } else {
            self.schedule[k - 1] + extra
        }
    }

    /// Text manifest stored next to checkpoints.
    pub fn manifest(&self, seed: u64) -> String {
        let sched: Vec<String> = self.schedule.iter().map(|c| c.to_string()).collect();
        format!(
            "schedule={}\nscheme={}\ninput_channels={}\ngem_p={}\nseed={}\n",
            sched.join(","),
            self.scheme,
            self.scheme.input_channels(),
            self.gem_p,
            seed
        )
    }

    /// Parses [`ModelConfig::manifest`] output, returning the config and seed.
    pub fn parse_manifest(text: &str) -> Result<(Self, u64)> {
        let mut cfg = ModelConfig::default();
        let mut seed = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            let bad = |m: String| Error::Parse {
                line: i + 1,
                message: m,
            };
            match k {
                "schedule" => {
                    cfg.schedule = parse_schedule(v).map_err(|e| bad(e.to_string()))?;
                }
                "scheme" => cfg.scheme = v.parse().map_err(|e: Error| bad(e.to_string()))?,
                "gem_p" => cfg.gem_p = v.parse().map_err(|_| bad(format!("bad gem_p `{v}`")))?,
                "seed" => seed = v.parse().map_err(|_| bad(format!("bad seed `{v}`")))?,
                "input_channels" => {}
                other => return Err(bad(format!("unknown manifest key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok((cfg, seed))
    }
}

pub fn parse_schedule(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad channel count `{c}`")))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Block {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub view: View,
    pub blocks: Vec<Block>,
}

struct BlockCache {
    conv: ConvCache,
    pre_act: Tensor,
    bn: BnCache,
    /// Channels of this block's input that came from the previous block.
    carried_channels: usize,
}

/// Everything a branch must remember for its backward pass.
pub struct EmbedCache {
    view: View,
    blocks: Vec<BlockCache>,
    agg_shapes: Vec<Vec<usize>>,
    agg_channels: Vec<usize>,
    stacked: Tensor,
    pooled: Tensor,
    norms: Vec<f64>,
    embeddings: Tensor,
}

impl EmbedCache {
    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }
}

/// Block outputs of a single branch pass.
pub struct BranchOutput {
    pub maps: Vec<Tensor>,
    caches: Vec<BlockCache>,
}

fn orientation_for(view: View, height: usize, width: usize) -> Result<OrientationMap> {
    match view {
        View::Ground => ground_orientation_map(width, height),
        View::Satellite => satellite_orientation_map(width, height),
    }
}

/// Repeats a U-V map across the batch as a `[n, 2, h, w]` tensor.
fn uv_tensor(map: &OrientationMap, n: usize) -> Tensor {
    let plane = map.planar();
    let mut data = Vec::with_capacity(n * plane.len());
    for _ in 0..n {
        data.extend_from_slice(&plane);
    }
    Tensor::new(vec![n, 2, map.height, map.width], data).expect("sized from map")
}

impl Branch {
    fn new(view: View, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let blocks = cfg
            .schedule
            .iter()
            .enumerate()
            .map(|(k, &out)| {
                let inp = cfg.block_in_channels(k);
                let prefix = format!("{}.block{}", view.name(), k + 1);
                let weight = init_weights(&[out, inp, 4, 4], InitKind::Conv, rng);
                let gamma = init_weights(&[out], InitKind::Gamma, rng);
                Block {
                    conv: Conv2d::new(
                        Param::new(format!("{prefix}.conv.weight"), weight),
                        Param::new(format!("{prefix}.conv.bias"), Tensor::zeros(&[out])),
                    )
                    .expect("well-formed conv"),
                    bn: BatchNorm::new(
                        Param::new(format!("{prefix}.bn.gamma"), gamma),
                        Param::new(format!("{prefix}.bn.beta"), Tensor::zeros(&[out])),
                    ),
                }
            })
            .collect();
        Branch { view, blocks }
    }

    /// Runs every block. `image` is `[n, 3, h, w]`; the orientation map is
    /// derived from its spatial size and ignored by the RGB baseline.
    pub fn forward(
        &mut self,
        image: &Tensor,
        scheme: Scheme,
        mode: BnMode,
        exec: Execution,
    ) -> Result<BranchOutput> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 {
            return Err(Error::invalid(format!("expected a 3-channel image, got {c}")));
        }
        let uv = if scheme.uses_orientation() {
            Some(orientation_for(self.view, h, w)?)
        } else {
            None
        };
        self.forward_with_uv(image, uv.as_ref(), scheme, mode, exec)
    }

    /// Like [`Branch::forward`] with an explicit orientation map, which must
    /// match the image's spatial size.
    pub fn forward_with_uv(
        &mut self,
        image: &Tensor,
        uv: Option<&OrientationMap>,
        scheme: Scheme,
        mode: BnMode,
        exec: Execution,
    ) -> Result<BranchOutput> {
        let (n, _, h, w) = image.dims4()?;
        let mut input = match (scheme.uses_orientation(), uv) {
            (true, Some(map)) => {
                if (map.height, map.width) != (h, w) {
                    return Err(Error::invalid(format!(
                        "orientation map {}x{} does not match image {}x{}",
                        map.height, map.width, h, w
                    )));
                }
                concat_channels(&[image, &uv_tensor(map, n)])?
            }
            (true, None) => return Err(Error::invalid("scheme needs an orientation map")),
            (false, _) => image.clone(),
        };
        let mut maps = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut carried = input.shape()[1];
        for (k, block) in self.blocks.iter_mut().enumerate() {
            let (pre, conv_cache) = block.conv.forward(&input, exec)?;
            let act = leaky_relu_forward(&pre);
            let (out, bn_cache) = batch_norm_forward(&act, &mut block.bn, mode)?;
            out.ensure_finite("block output")?;
            caches.push(BlockCache {
                conv: conv_cache,
                pre_act: pre,
                bn: bn_cache,
                carried_channels: carried,
            });
            carried = out.shape()[1];
            input = if scheme == Scheme::II {
                let map = uv.expect("checked above");
                let small = downsample_uv(map, 1 << (k + 1))?;
                let (_, _, oh, ow) = out.dims4()?;
                debug_assert_eq!((small.height, small.width), (oh, ow));
                concat_channels(&[&out, &uv_tensor(&small, n)])?
            } else {
                out.clone()
            };
            maps.push(out);
        }
        Ok(BranchOutput { maps, caches })
    }

    /// Back-propagates gradients w.r.t. block outputs (missing entries are
    /// zero) down to the parameters.
    fn backward(
        &mut self,
        caches: &[BlockCache],
        mut output_grads: Vec<Option<Tensor>>,
        exec: Execution,
    ) -> Result<()> {
        let mut from_next: Option<Tensor> = None;
        for k in (0..self.blocks.len()).rev() {
            let cache = &caches[k];
            let block = &mut self.blocks[k];
            let mut grad = output_grads[k].take();
            if let Some(g_next) = from_next.take() {
                grad = Some(match grad {
                    Some(mut g) => {
                        g.data_mut()
                            .iter_mut()
                            .zip(g_next.data())
                            .for_each(|(a, b)| *a += b);
                        g
                    }
                    None => g_next,
                });
            }
            let Some(grad) = grad else {
                continue;
            };
            let d_act = batch_norm_backward(&mut block.bn, &cache.bn, &grad);
            let d_pre = leaky_relu_backward(&cache.pre_act, &d_act);
            let d_in = block.conv.backward(&cache.conv, &d_pre, exec)?;
            if k > 0 {
                let c_in = d_in.shape()[1];
                let carried = cache.carried_channels;
                from_next = Some(if c_in == carried {
                    d_in
                } else {
                    split_channels(&d_in, &[carried, c_in - carried])?.swap_remove(0)
                });
            }
        }
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [
                    &mut b.conv.weight,
                    &mut b.conv.bias,
                    &mut b.bn.gamma,
                    &mut b.bn.beta,
                ]
            })
            .collect()
    }

    fn params(&self) -> Vec<&Param> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta])
            .collect()
    }
}

/// Resizes the aggregated maps to the first one's spatial size and stacks
/// them along channels.
pub fn aggregate_multiscale(maps: &[&Tensor]) -> Result<Tensor> {
    if maps.is_empty() || maps.len() > AGGREGATED_BLOCKS {
        return Err(Error::invalid(format!(
            "multi-scale aggregation takes 1 to {AGGREGATED_BLOCKS} maps, got {}",
            maps.len()
        )));
    }
    let (_, _, h, w) = maps[0].dims4()?;
    let resized = maps
        .iter()
        .map(|m| resize_bilinear_forward(m, h, w))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = resized.iter().collect();
    concat_channels(&refs)
}

#[derive(Clone, Debug)]
pub struct SiameseModel {
    pub config: ModelConfig,
    pub ground: Branch,
    pub satellite: Branch,
}

impl SiameseModel {
    /// Fresh model; both branches are drawn from one seeded stream, ground
    /// first.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ground = Branch::new(View::Ground, &config, &mut rng);
        let satellite = Branch::new(View::Satellite, &config, &mut rng);
        Ok(SiameseModel {
            config,
            ground,
            satellite,
        })
    }

    pub fn branch_mut(&mut self, view: View) -> &mut Branch {
        match view {
            View::Ground => &mut self.ground,
            View::Satellite => &mut self.satellite,
        }
    }

    pub fn descriptor_dim(&self) -> usize {
        self.config.descriptor_dim()
    }

    /// Batch embedding: `[n, 3, h, w]` images to `[n, D]` unit descriptors.
    pub fn forward(
        &mut self,
        view: View,
        images: &Tensor,
        mode: BnMode,
        exec: Execution,
    ) -> Result<(Tensor, EmbedCache)> {
        let scheme = self.config.scheme;
        let p = self.config.gem_p;
        let out = self.branch_mut(view).forward(images, scheme, mode, exec)?;
        self.finish_forward(view, out, p)
    }

    /// Same as [`SiameseModel::forward`] with an explicit orientation map.
    pub fn forward_with_uv(
        &mut self,
        view: View,
        images: &Tensor,
        uv: Option<&OrientationMap>,
        mode: BnMode,
        exec: Execution,
    ) -> Result<(Tensor, EmbedCache)> {
        let scheme = self.config.scheme;
        let p = self.config.gem_p;
        let out = self
            .branch_mut(view)
            .forward_with_uv(images, uv, scheme, mode, exec)?;
        self.finish_forward(view, out, p)
    }

    fn finish_forward(
        &self,
        view: View,
        out: BranchOutput,
        p: f64,
    ) -> Result<(Tensor, EmbedCache)> {
        let n_blocks = out.maps.len();
        let first = n_blocks.saturating_sub(AGGREGATED_BLOCKS);
        let agg: Vec<&Tensor> = out.maps[first..].iter().collect();
        let stacked = aggregate_multiscale(&agg)?;
        let pooled = gem_pool_forward(&stacked, p)?;
        let (emb, norms) = l2_normalize_forward(&pooled)?;
        emb.ensure_finite("embedding")?;
        let cache = EmbedCache {
            view,
            agg_shapes: agg.iter().map(|t| t.shape().to_vec()).collect(),
            agg_channels: agg.iter().map(|t| t.shape()[1]).collect(),
            blocks: out.caches,
            stacked,
            pooled,
            norms,
            embeddings: emb.clone(),
        };
        Ok((emb, cache))
    }

    /// Accumulates parameter gradients given `d loss / d embeddings`.
    pub fn backward(&mut self, cache: &EmbedCache, grad: &Tensor, exec: Execution) -> Result<()> {
        let d_pooled = l2_normalize_backward(&cache.embeddings, &cache.norms, grad);
        let d_stacked = gem_pool_backward(&cache.stacked, &cache.pooled, self.config.gem_p, &d_pooled);
        let parts = split_channels(&d_stacked, &cache.agg_channels)?;
        let n_blocks = cache.blocks.len();
        let first = n_blocks.saturating_sub(AGGREGATED_BLOCKS);
        let mut output_grads: Vec<Option<Tensor>> = (0..n_blocks).map(|_| None).collect();
        for (i, (part, shape)) in parts.iter().zip(&cache.agg_shapes).enumerate() {
            output_grads[first + i] = Some(resize_bilinear_backward(shape, part)?);
        }
        self.branch_mut(cache.view)
            .backward(&cache.blocks, output_grads, exec)
    }

    /// Single-image eval-mode descriptor. `image` is `[3, h, w]` or `[1, 3, h, w]`.
    pub fn embed(&mut self, image: &Tensor, view: View) -> Result<EmbeddingVector> {
        let img = match image.shape() {
            [3, h, w] => Tensor::new(vec![1, 3, *h, *w], image.data().to_vec())?,
            [1, 3, _, _] => image.clone(),
            s => return Err(Error::invalid(format!("expected one 3-channel image, got {s:?}"))),
        };
        let (emb, _) = self.forward(view, &img, BnMode::Eval, Execution::Sequential)?;
        Ok(EmbeddingVector(emb.into_data()))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.ground.params_mut();
        v.extend(self.satellite.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.ground.params();
        v.extend(self.satellite.params());
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Parameters and batch-norm running statistics as a checkpoint (no
    /// optimizer state).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .params()
            .into_iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|&x| x as f32).collect(),
            })
            .collect();
        let mut buffers = Vec::new();
        for branch in [&self.ground, &self.satellite] {
            for b in &branch.blocks {
                let prefix = b.bn.gamma.name.trim_end_matches(".gamma");
                for (suffix, data) in [
                    ("running_mean", &b.bn.running_mean),
                    ("running_var", &b.bn.running_var),
                ] {
                    buffers.push(NamedTensor {
                        name: format!("{prefix}.{suffix}"),
                        shape: vec![data.len()],
                        data: data.iter().map(|&x| x as f32).collect(),
                    });
                }
            }
        }
        Checkpoint {
            params,
            buffers,
            adam: None,
        }
    }

    /// Overwrites parameters and running statistics from a checkpoint whose
    /// tensors must match this model's names and shapes.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let t = ckpt
                .param(&p.name)
                .ok_or_else(|| Error::validation(format!("checkpoint lacks `{}`", p.name)))?;
            if t.shape != p.value.shape() {
                return Err(Error::validation(format!(
                    "`{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    t.shape,
                    p.value.shape()
                )));
            }
            for (dst, &src) in p.value.data_mut().iter_mut().zip(&t.data) {
                *dst = src as f64;
            }
        }
        for branch in [&mut self.ground, &mut self.satellite] {
            for b in &mut branch.blocks {
                let prefix = b.bn.gamma.name.trim_end_matches(".gamma").to_string();
                for (suffix, data) in [
                    ("running_mean", &mut b.bn.running_mean),
                    ("running_var", &mut b.bn.running_var),
                ] {
                    let name = format!("{prefix}.{suffix}");
                    let t = ckpt
                        .buffer(&name)
                        .ok_or_else(|| Error::validation(format!("checkpoint lacks `{name}`")))?;
                    if t.data.len() != data.len() {
                        return Err(Error::validation(format!("`{name}` has the wrong length")));
                    }
                    for (dst, &src) in data.iter_mut().zip(&t.data) {
                        *dst = src as f64;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Unit-norm descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
