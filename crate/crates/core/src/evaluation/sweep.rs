//! Recall under simulated heading error.
//!
//! For every error level `e` each query panorama is circularly shifted by an
//! angle drawn uniformly from `[-e, e]` degrees before it is embedded. The
//! orientation map is left in place, so the network sees a wrong north.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::EmbeddingIndex;
use super::retrieval::{recall_at_k, RecallReport};
use crate::autonn::BnMode;
use crate::dataset::image::stack_images;
use crate::dataset::{ImageBuffer, PairSet};
use crate::exec::Execution;
use crate::geometry::{degrees_to_columns, View};
use crate::model::SiameseModel;
use crate::Result;

pub const DEFAULT_LEVELS: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];
const EMBED_CHUNK: usize = 32;

/// Eval-mode descriptors for a list of images, in order.
pub fn embed_pairs(
    model: &mut SiameseModel,
    images: &[ImageBuffer],
    view: View,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EMBED_CHUNK) {
        let t = stack_images(chunk.iter())?;
        let (emb, _) = model.forward(view, &t, BnMode::Eval, exec)?;
        let d = emb.shape()[1];
        out.extend(emb.data().chunks_exact(d).map(<[f64]>::to_vec));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevelResult {
    pub level_deg: f64,
    pub recall: RecallReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepReport {
    pub seed: u64,
    pub levels: Vec<NoiseLevelResult>,
}

impl NoiseSweepReport {
    /// One row per level: `level_deg,r@K...,r@top1%`.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.levels.first() else {
            return "level_deg\n".into();
        };
        let mut s = String::from("level_deg");
        for k in &first.recall.ks {
            s.push_str(&format!(",r@{k}"));
        }
        s.push_str(",r@top1%\n");
        for l in &self.levels {
            s.push_str(&l.level_deg.to_string());
            for r in &l.recall.recall {
                s.push_str(&format!(",{r}"));
            }
            s.push_str(&format!(",{}\n", l.recall.recall_top1percent));
        }
        s
    }
}

/// Column shifts for one level; each level has its own seeded stream.
pub fn level_shifts(n: usize, level_deg: f64, level_idx: usize, seed: u64, width: usize) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level_idx as u64 + 1);
    (0..n)
        .map(|_| {
            let angle = if level_deg > 0.0 {
                rng.random_range(-level_deg..=level_deg)
            } else {
                0.0
            };
            degrees_to_columns(angle, width)
        })
        .collect()
}

/// Recalls of ground queries against the pairs' own satellite tiles at each
/// heading-error level.
pub fn north_noise_sweep(
    model: &mut SiameseModel,
    pairs: &PairSet,
    levels: &[f64],
    ks: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<NoiseSweepReport> {
    let mut levels_sorted = levels.to_vec();
    levels_sorted.sort_by(f64::total_cmp);
    let sat = embed_pairs(model, &pairs.satellite, View::Satellite, exec)?;
    let ids: Vec<String> = pairs.records.iter().map(|r| r.id.clone()).collect();
    let index = EmbeddingIndex::build(ids.clone(), &sat, None)?;
    let gt: Vec<&str> = ids.iter().map(String::as_str).collect();
    let mut results = Vec::with_capacity(levels_sorted.len());
    for (li, &level) in levels_sorted.iter().enumerate() {
        let width = pairs.ground.first().map_or(1, |g| g.width);
        let shifts = level_shifts(pairs.len(), level, li, seed, width);
        let shifted: Vec<ImageBuffer> = pairs
            .ground
            .iter()
            .zip(&shifts)
            .map(|(g, &s)| g.shifted(s))
            .collect();
        let queries = embed_pairs(model, &shifted, View::Ground, exec)?;
        results.push(NoiseLevelResult {
            level_deg: level,
            recall: recall_at_k(&index, &queries, &gt, ks, exec)?,
        });
    }
    Ok(NoiseSweepReport {
        seed,
        levels: results,
    })
}
