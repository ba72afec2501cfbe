use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Conv kernels: N(0, 0.02²).
    Conv,
    /// Batch-norm scale: N(1, 0.02²).
    Gamma,
    /// Conv bias and batch-norm shift.
    Zero,
}

pub fn init_weights<R: Rng + ?Sized>(shape: &[usize], kind: InitKind, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match kind {
        InitKind::Zero => vec![0.0; n],
        InitKind::Conv | InitKind::Gamma => {
            let mean = if kind == InitKind::Gamma { 1.0 } else { 0.0 };
            let dist = Normal::new(mean, INIT_STD).expect("valid std");
            (0..n).map(|_| dist.sample(rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("sized from shape")
}
