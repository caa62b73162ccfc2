//! Floating-point quantization emulation and scaling-law tooling.
//!
//! Minifloat formats ([`fpformat`]), block-scaled quantization
//! ([`blockquant`]), quantized linear layers ([`qlinear`], [`toy`]), loss
//! laws ([`lawmodels`]), curve fitting ([`fitter`]) and the closed-form
//! optimizers derived from the laws ([`implications`]).

pub mod blockquant;
pub mod cli;
pub mod curves;
pub mod error;
pub mod fitter;
pub mod fpformat;
pub mod implications;
pub mod lawmodels;
pub mod qlinear;
pub mod runlog;
pub mod synthetic;
pub mod tensor_io;
pub mod toy;

pub use blockquant::{measure_sqnr, quantize_dequantize, QuantResult, ScalingStrategy, Tensor2D};
pub use error::{Error, Result};
pub use fitter::{fit, FitProblem, FitResult, LawModel, LossKind};
pub use fpformat::{decode, encode, enumerate_values, fp_max, quantize_scalar, FpCode, FpFormat};
pub use lawmodels::{LawConstants, RunRecord, StrategyTag};
pub use qlinear::{qlinear_backward, qlinear_forward, QLinearConfig, Target, TargetSet};
