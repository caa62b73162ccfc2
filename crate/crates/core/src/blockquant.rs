//! Simulated quantize-dequantize of whole tensors with shared scales.
//!
//! A tensor of shape `b x d_in` is split into groups of `B` contiguous
//! elements along the channel (last) dimension. Each group gets the scale
//! `S = fp_max / max|x|`, is cast to the low-precision format and is divided
//! back by `S` straight away. Channel-wise scaling is `B = d_in` and
//! tensor-wise scaling is `B = b * d_in`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpformat::{quantize_finite, FpFormat};

/// Row-major matrix of working-precision values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty tensor {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} tensor needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry {} at index {i}",
                data[i]
            )));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty tensor");
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor2D { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor2D {
        Tensor2D::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self * other^T`, accumulated in `f64`.
    pub fn matmul_t(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Tensor2D::from_fn(self.rows, other.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(other.row(j))
                .map(|(a, b)| a * b)
                .sum()
        }))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        self.matmul_t(&other.transpose())
    }
}

/// How many elements share one scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "block_size")]
pub enum ScalingStrategy {
    BlockWise(usize),
    ChannelWise,
    TensorWise,
}

impl ScalingStrategy {
    /// Elements per scale for a `rows x cols` tensor.
    pub fn group_size(&self, rows: usize, cols: usize) -> usize {
        match *self {
            ScalingStrategy::BlockWise(b) => b,
            ScalingStrategy::ChannelWise => cols,
            ScalingStrategy::TensorWise => rows * cols,
        }
    }

    pub fn validate(&self, cols: usize) -> Result<()> {
        if let ScalingStrategy::BlockWise(b) = *self {
            if b == 0 || b > cols {
                return Err(Error::Config(format!(
                    "block size {b} must lie in [1, {cols}]"
                )));
            }
            if !cols.is_multiple_of(b) {
                return Err(Error::Config(format!(
                    "block size {b} does not divide {cols} channels"
                )));
            }
        }
        Ok(())
    }

    /// Short tag used in run logs: `block`, `channel` or `tensor`.
    pub fn tag(&self) -> &'static str {
        match self {
            ScalingStrategy::BlockWise(_) => "block",
            ScalingStrategy::ChannelWise => "channel",
            ScalingStrategy::TensorWise => "tensor",
        }
    }
}

impl fmt::Display for ScalingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalingStrategy::BlockWise(b) => write!(f, "block:{b}"),
            ScalingStrategy::ChannelWise => f.write_str("channel"),
            ScalingStrategy::TensorWise => f.write_str("tensor"),
        }
    }
}

impl FromStr for ScalingStrategy {
    type Err = Error;

    /// Accepts `channel`, `tensor`, `block:<B>` or a bare block size.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let block = |n: &str| {
            n.parse::<usize>()
                .map(ScalingStrategy::BlockWise)
                .map_err(|_| Error::Config(format!("bad block size in {s:?}")))
        };
        match t.as_str() {
            "channel" | "channel-wise" => Ok(ScalingStrategy::ChannelWise),
            "tensor" | "tensor-wise" => Ok(ScalingStrategy::TensorWise),
            _ => match t.split_once(':') {
                Some(("block", n)) => block(n),
                None => block(&t),
                _ => Err(Error::Config(format!("unknown scaling strategy {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    pub dequantized: Tensor2D,
    /// One scale per group, in row-major group order.
    pub scales: Vec<f64>,
    pub effective_log2_b: f64,
}

fn groups<'a>(
    t: &'a Tensor2D,
    strat: ScalingStrategy,
) -> Result<std::slice::Chunks<'a, f64>> {
    strat.validate(t.cols)?;
    // Row-major storage makes channel groups and the whole tensor contiguous.
    Ok(t.data.chunks(strat.group_size(t.rows, t.cols)))
}

fn scale_for(block: &[f64], fp_max: f64) -> f64 {
    let amax = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if amax == 0.0 {
        1.0
    } else {
        // subnormal maxima can overflow the ratio
        (fp_max / amax).min(f64::MAX)
    }
}

/// One scale per group: `fp_max / max|block|`, or 1 for an all-zero block.
pub fn compute_scales(t: &Tensor2D, fmt: FpFormat, strat: ScalingStrategy) -> Result<Vec<f64>> {
    let fp_max = fmt.fp_max();
    Ok(groups(t, strat)?.map(|g| scale_for(g, fp_max)).collect())
}

pub fn quantize_dequantize(
    t: &Tensor2D,
    fmt: FpFormat,
    strat: ScalingStrategy,
) -> Result<QuantResult> {
    let fp_max = fmt.fp_max();
    let mut out = Vec::with_capacity(t.data.len());
    let mut scales = Vec::new();
    for block in groups(t, strat)? {
        let s = scale_for(block, fp_max);
        scales.push(s);
        out.extend(block.iter().map(|&x| quantize_finite(x * s, fmt) / s));
    }
    Ok(QuantResult {
        dequantized: Tensor2D {
            rows: t.rows,
            cols: t.cols,
            data: out,
        },
        scales,
        effective_log2_b: effective_log2_b(strat, t.rows, t.cols),
    })
}

/// `log2` of the number of elements per scale.
pub fn effective_log2_b(strat: ScalingStrategy, rows: usize, cols: usize) -> f64 {
    (strat.group_size(rows, cols) as f64).log2()
}

/// Signal-to-quantization-noise ratio in dB, `10 log10(sum x^2 / sum (x - y)^2)`.
///
/// Returns `f64::INFINITY` when the two tensors are identical.
pub fn measure_sqnr(original: &Tensor2D, dequantized: &Tensor2D) -> Result<f64> {
    if original.shape() != dequantized.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            original.shape(),
            dequantized.shape()
        )));
    }
    let (signal, noise) = original
        .data
        .iter()
        .zip(&dequantized.data)
        .fold((0.0, 0.0), |(s, n), (x, y)| (s + x * x, n + (x - y) * (x - y)));
    if signal == 0.0 {
        return Err(Error::InvalidInput("SQNR of an all-zero signal".into()));
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}
