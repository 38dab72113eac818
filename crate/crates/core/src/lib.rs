//! Memory-efficient pooling for CNN inference with a recurrent pooling operator.
//!
//! This crate implements the RNNPool operator — an r×c patch is summarized by
//! two small gated RNNs (FastGRNN cells) into a 1×1×4h₂ vector — together with
//! the surrounding machinery needed to study its memory behaviour:
//!
//! - [`tensor`]: row-major H×W×C maps, patch extraction, byte accounting.
//! - [`fastgrnn`]: the FastGRNN cell (step, sequence run, quantized
//!   nonlinearities, sparsity masks, cost accounting).
//! - [`rnnpool`]: the RNNPool operator, the strided RNNPool layer, and a
//!   backward pass for toy-scale training.
//! - [`graph`]: layer/block vocabulary, shape inference, MAdds/parameter
//!   counting, and presets for the reference architectures.
//! - [`memplan`]: peak-activation-memory analysis (lower bounds, row-first
//!   schedule upper bounds, the layer-by-layer convention, recompute-MAdds).
//! - [`exec`]: naive and streaming executors with live arena accounting and an
//!   exhaustive schedule enumerator used as a ground-truth memory oracle.
//! - [`quant`]: int8 per-channel post-training quantization and a quantized
//!   execution mode.
//! - [`probe`]: synthetic line/shape datasets and an SGD trainer for probing
//!   what a single RNNPool layer can learn, plus a CIFAR-10 loader.
//!
//! All memory reports follow the convention that MB/KB mean MiB/KiB
//! (2²⁰ / 2¹⁰ bytes) and count activation elements only; weights are reported
//! separately through parameter counts.

pub mod error;
pub mod exec;
pub mod fastgrnn;
pub mod graph;
pub mod memplan;
pub mod probe;
pub mod quant;
pub mod rnnpool;
pub mod tensor;

pub use error::{Error, Result};

/// Floating-point scalar abstraction so the numeric kernels can run in
/// float32 (executor default) or float64 (gradient checking).
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
    fn max_s(self, other: Self) -> Self;
    fn min_s(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn max_s(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            fn min_s(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
