//! Seeded epoch shuffling, augmentation shifts and batch assembly.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{load_image, stack_images, ImageBuffer};
use super::manifest::{PairRecord, Split};
use crate::autonn::Tensor;
use crate::exec::Execution;
use crate::{Error, Result};

/// Indices into a [`PairSet`] plus the column shift applied to each ground
/// panorama (0 when augmentation is off).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBatch {
    pub indices: Vec<usize>,
    pub shifts: Vec<i64>,
}

/// Endless stream of batches over `n` items, reshuffled every epoch.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    n: usize,
    batch_size: usize,
    augment: bool,
    ground_width: usize,
    drop_last: bool,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl BatchIterator {
    /// Training-mode iterator: drops the final short batch of every epoch.
    pub fn new(n: usize, batch_size: usize, seed: u64, augment: bool, ground_width: usize) -> Self {
        BatchIterator {
            n,
            batch_size: batch_size.max(1),
            augment,
            ground_width: ground_width.max(1),
            drop_last: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: usize::MAX,
            epoch: 0,
        }
    }

    pub fn keep_last(mut self) -> Self {
        self.drop_last = false;
        self
    }

    pub fn batches_per_epoch(&self) -> usize {
        if self.drop_last {
            self.n / self.batch_size
        } else {
            self.n.div_ceil(self.batch_size)
        }
    }

    /// Epochs started so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn start_epoch(&mut self) {
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
        self.epoch += 1;
    }
}

impl Iterator for BatchIterator {
    type Item = PairBatch;

    fn next(&mut self) -> Option<PairBatch> {
        if self.batches_per_epoch() == 0 {
            return None;
        }
        let remaining = self.order.len().saturating_sub(self.cursor);
        if self.cursor == usize::MAX
            || remaining == 0
            || (self.drop_last && remaining < self.batch_size)
        {
            self.start_epoch();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let shifts = indices
            .iter()
            .map(|_| {
                if self.augment {
                    self.rng.random_range(0..self.ground_width) as i64
                } else {
                    0
                }
            })
            .collect();
        Some(PairBatch { indices, shifts })
    }
}

/// Decoded image pairs held in memory.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub records: Vec<PairRecord>,
    pub ground: Vec<ImageBuffer>,
    pub satellite: Vec<ImageBuffer>,
}

/// Target sizes used when decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub ground_h: usize,
    pub ground_w: usize,
    pub satellite_h: usize,
    pub satellite_w: usize,
}

impl Default for ImageDims {
    fn default() -> Self {
        ImageDims {
            ground_h: 64,
            ground_w: 128,
            satellite_h: 112,
            satellite_w: 112,
        }
    }
}

impl PairSet {
    /// Decodes every record, in parallel when allowed; order follows `records`.
    pub fn load(
        records: Vec<PairRecord>,
        base: &Path,
        dims: ImageDims,
        exec: Execution,
    ) -> Result<Self> {
        let loaded = exec.map_range(records.len(), |i| {
            let r = &records[i];
            Ok((
                load_image(&r.ground_path(base), dims.ground_h, dims.ground_w)?,
                load_image(&r.satellite_path(base), dims.satellite_h, dims.satellite_w)?,
            ))
        });
        let mut ground = Vec::with_capacity(records.len());
        let mut satellite = Vec::with_capacity(records.len());
        for item in loaded {
            let (g, s): (ImageBuffer, ImageBuffer) = item?;
            ground.push(g);
            satellite.push(s);
        }
        Ok(PairSet {
            records,
            ground,
            satellite,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Subset with the given split, preserving order.
    pub fn split(&self, split: Split) -> PairSet {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.records[i].split == split)
            .collect();
        self.select(&keep)
    }

    pub fn select(&self, indices: &[usize]) -> PairSet {
        PairSet {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ground: indices.iter().map(|&i| self.ground[i].clone()).collect(),
            satellite: indices.iter().map(|&i| self.satellite[i].clone()).collect(),
        }
    }

    /// `[B, 3, H, W]` ground and satellite tensors for a batch, with each
    /// ground panorama circularly shifted by its batch shift.
    pub fn assemble(&self, batch: &PairBatch) -> Result<(Tensor, Tensor)> {
        if batch.indices.iter().any(|&i| i >= self.len()) {
            return Err(Error::invalid("batch index out of range"));
        }
        let shifted: Vec<ImageBuffer> = batch
            .indices
            .iter()
            .zip(&batch.shifts)
            .map(|(&i, &s)| {
                if s == 0 {
                    self.ground[i].clone()
                } else {
                    self.ground[i].shifted(s)
                }
            })
            .collect();
        let g = stack_images(shifted.iter())?;
        let s = stack_images(batch.indices.iter().map(|&i| &self.satellite[i]))?;
        Ok((g, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_per_epoch_floor() {
        let it = BatchIterator::new(25, 12, 1, false, 128);
        assert_eq!(it.batches_per_epoch(), 2);
        let batches: Vec<_> = it.take(4).collect();
        assert!(batches.iter().all(|b| b.indices.len() == 12));
        // first epoch covers 24 distinct items
        let mut seen: Vec<usize> = batches[..2].iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn keep_last_emits_short_batch() {
        let mut it = BatchIterator::new(25, 12, 1, false, 128).keep_last();
        assert_eq!(it.batches_per_epoch(), 3);
        let sizes: Vec<usize> = (0..3).map(|_| it.next().unwrap().indices.len()).collect();
        assert_eq!(sizes, vec![12, 12, 1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a: Vec<_> = BatchIterator::new(30, 4, 9, true, 64).take(20).collect();
        let b: Vec<_> = BatchIterator::new(30, 4, 9, true, 64).take(20).collect();
        assert_eq!(a, b);
        let c: Vec<_> = BatchIterator::new(30, 4, 10, true, 64).take(20).collect();
        assert_ne!(a, c);
        assert!(a.iter().flat_map(|b| &b.shifts).all(|&s| (0..64).contains(&s)));
        assert!(a.iter().flat_map(|b| &b.shifts).any(|&s| s != 0));
    }

    #[test]
    fn no_augment_means_zero_shifts() {
        let it = BatchIterator::new(30, 4, 9, false, 64);
        assert!(it.take(10).flat_map(|b| b.shifts).all(|s| s == 0));
    }

    #[test]
    fn too_few_items_yield_nothing() {
        assert!(BatchIterator::new(3, 12, 0, false, 8).next().is_none());
    }
}
