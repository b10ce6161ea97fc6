//! A small encoder-decoder transformer written from scratch: pre-LN blocks,
//! learned positions, embeddings shared between encoder, decoder and output
//! projection, a hand-derived backward pass, Adam, and beam search.
//!
//! The model is generic over the scalar type; training uses [`Model`] (f32)
//! and gradient checking uses [`Model64`] (f64).

mod checkpoint;
mod config;
mod decode;
mod model;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{BeamConfig, ModelConfig, TrainConfig};
pub use decode::{beam_search, beam_search_with, greedy, Encoded, StepModel};
pub use model::{cross_entropy, TensorInfo, Transformer};
pub use train::{lr_at, train_step, AdamState, Trainer};

use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

pub type Model = Transformer<f32>;
pub type Model64 = Transformer<f64>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    BadTokenId { id: u32, vocab: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floating-point types the model runs in.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + num_traits::FromPrimitive + std::iter::Sum + Default + std::fmt::Debug + Send + Sync + 'static
{
    /// # Safety
    /// Pointers and strides must describe in-bounds matrices, and `c` must
    /// not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
