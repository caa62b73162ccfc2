//! Quantized linear layer: one forward GEMM and two backward GEMMs whose six
//! operands can each be passed through block-scaled quantization.
//!
//! ```text
//! Y  = X · Wᵀ          P1 = X,   P2 = W
//! dX = dY₁ · W_bwd     P3 = dY₁, P4 = W_bwd
//! dW = dY₂ᵀ · X_bwd    P5 = dY₂, P6 = X_bwd
//! ```
//!
//! Every operand is quantized with its scaling groups running along the
//! GEMM's contraction dimension: `d_in` for the forward pass, `d_out` for
//! `dX` and the batch dimension for `dW`. A block size larger than the
//! contraction length covers the whole row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blockquant::{quantize_dequantize, ScalingStrategy, Tensor2D};
use crate::error::{Error, Result};
use crate::fpformat::{quantize_finite, FpFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    /// Forward input `X`.
    P1,
    /// Forward weight `W`.
    P2,
    /// Output gradient feeding `dX`.
    P3,
    /// Weight feeding `dX`.
    P4,
    /// Output gradient feeding `dW`.
    P5,
    /// Input feeding `dW`.
    P6,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::P1,
        Target::P2,
        Target::P3,
        Target::P4,
        Target::P5,
        Target::P6,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", *self as u8 + 1)
    }
}

/// Subset of the six GEMM operands to quantize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TargetSet(u8);

impl TargetSet {
    pub const fn empty() -> Self {
        TargetSet(0)
    }

    pub const fn all() -> Self {
        TargetSet(0b11_1111)
    }

    /// `{P2, P4, P6}`: weights and the saved input, leaving both
    /// activation-gradient operands and the forward input in full precision.
    pub fn default_targets() -> Self {
        [Target::P2, Target::P4, Target::P6].into_iter().collect()
    }

    pub fn contains(&self, t: Target) -> bool {
        self.0 & t.bit() != 0
    }

    pub fn insert(&mut self, t: Target) {
        self.0 |= t.bit();
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Target> + '_ {
        Target::ALL.into_iter().filter(|t| self.contains(*t))
    }
}

impl FromIterator<Target> for TargetSet {
    fn from_iter<I: IntoIterator<Item = Target>>(iter: I) -> Self {
        let mut s = TargetSet::empty();
        for t in iter {
            s.insert(t);
        }
        s
    }
}

impl fmt::Display for TargetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<String> = self.iter().map(|t| t.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for TargetSet {
    type Err = Error;

    /// `P2,P4,P6`, `all` or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "" | "none" => return Ok(TargetSet::empty()),
            "all" => return Ok(TargetSet::all()),
            _ => {}
        }
        s.split(',')
            .map(|tok| {
                let tok = tok.trim().to_ascii_uppercase();
                let idx = tok
                    .strip_prefix('P')
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|n| (1..=6).contains(n))
                    .ok_or_else(|| Error::Config(format!("unknown target {tok:?}")))?;
                Ok(Target::ALL[idx - 1])
            })
            .collect()
    }
}

impl Serialize for TargetSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TargetSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QLinearConfig {
    pub fmt: FpFormat,
    pub strat: ScalingStrategy,
    pub targets: TargetSet,
    pub d_in: usize,
    pub d_out: usize,
    /// Round GEMM outputs to BF16 (E8M7) after accumulation.
    #[serde(default)]
    pub bf16_output: bool,
}

impl QLinearConfig {
    pub fn new(fmt: FpFormat, strat: ScalingStrategy, d_in: usize, d_out: usize) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!("layer dims must be positive, got {d_in}x{d_out}")));
        }
        Ok(QLinearConfig {
            fmt,
            strat,
            targets: TargetSet::default_targets(),
            d_in,
            d_out,
            bf16_output: false,
        })
    }

    pub fn with_targets(mut self, targets: TargetSet) -> Self {
        self.targets = targets;
        self
    }

    /// Quantizes `t` (groups along its last dimension) if `target` is enabled.
    pub fn quantize_operand(&self, t: &Tensor2D, target: Target) -> Result<Tensor2D> {
        if !self.targets.contains(target) {
            return Ok(t.clone());
        }
        let strat = match self.strat {
            ScalingStrategy::BlockWise(b) if b > t.cols() => ScalingStrategy::ChannelWise,
            s => s,
        };
        Ok(quantize_dequantize(t, self.fmt, strat)?.dequantized)
    }

    fn finish(&self, mut y: Tensor2D) -> Tensor2D {
        if self.bf16_output {
            for v in y.data_mut() {
                *v = quantize_finite(*v, FpFormat::E8M7);
            }
        }
        y
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(what()))
    }
}

/// `Y = Q₁(X) · Q₂(W)ᵀ`.
pub fn qlinear_forward(x: &Tensor2D, w: &Tensor2D, cfg: &QLinearConfig) -> Result<Tensor2D> {
    check(x.cols() == cfg.d_in, || format!("X has {} columns, layer expects {}", x.cols(), cfg.d_in))?;
    check(w.shape() == (cfg.d_out, cfg.d_in), || {
        format!("W is {:?}, layer expects {:?}", w.shape(), (cfg.d_out, cfg.d_in))
    })?;
    let xq = cfg.quantize_operand(x, Target::P1)?;
    let wq = cfg.quantize_operand(w, Target::P2)?;
    Ok(cfg.finish(xq.matmul_t(&wq)?))
}

/// Returns `(dX, dW)` with `dX = Q₃(dY) · Q₄(W)` and `dW = Q₅(dY)ᵀ · Q₆(X)`.
pub fn qlinear_backward(
    dy: &Tensor2D,
    x: &Tensor2D,
    w: &Tensor2D,
    cfg: &QLinearConfig,
) -> Result<(Tensor2D, Tensor2D)> {
    check(dy.cols() == cfg.d_out, || format!("dY has {} columns, layer expects {}", dy.cols(), cfg.d_out))?;
    check(x.shape() == (dy.rows(), cfg.d_in), || {
        format!("X is {:?}, expected {:?}", x.shape(), (dy.rows(), cfg.d_in))
    })?;
    check(w.shape() == (cfg.d_out, cfg.d_in), || {
        format!("W is {:?}, layer expects {:?}", w.shape(), (cfg.d_out, cfg.d_in))
    })?;

    // dX[b, i] = Σ_o dY[b, o] W[o, i]; contraction over d_out.
    let dy1 = cfg.quantize_operand(dy, Target::P3)?;
    let w_bwd_t = cfg.quantize_operand(&w.transpose(), Target::P4)?;
    let dx = dy1.matmul_t(&w_bwd_t)?;

    // dW[o, i] = Σ_b dY[b, o] X[b, i]; contraction over the batch.
    let dy2_t = cfg.quantize_operand(&dy.transpose(), Target::P5)?;
    let x_bwd_t = cfg.quantize_operand(&x.transpose(), Target::P6)?;
    let dw = dy2_t.matmul_t(&x_bwd_t)?;

    Ok((cfg.finish(dx), cfg.finish(dw)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
        Tensor2D::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn naive_matmul(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
        let mut out = Tensor2D::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.data_mut()[i * b.cols() + j] = acc;
            }
        }
        out
    }

    fn setup() -> (Tensor2D, Tensor2D, Tensor2D, QLinearConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = gaussian(8, 16, &mut rng);
        let w = gaussian(4, 16, &mut rng);
        let dy = gaussian(8, 4, &mut rng);
        let cfg = QLinearConfig::new(FpFormat::E2M1, ScalingStrategy::BlockWise(4), 16, 4).unwrap();
        (x, w, dy, cfg)
    }

    #[test]
    fn target_parsing() {
        let t: TargetSet = "P2,P4,P6".parse().unwrap();
        assert_eq!(t, TargetSet::default_targets());
        assert_eq!(t.to_string(), "P2,P4,P6");
        assert_eq!("all".parse::<TargetSet>().unwrap(), TargetSet::all());
        assert!("none".parse::<TargetSet>().unwrap().is_empty());
        assert!("P7".parse::<TargetSet>().is_err());
        assert!("p1, p3".parse::<TargetSet>().unwrap().contains(Target::P3));
    }

    #[test]
    fn no_targets_is_exact_matmul() {
        let (x, w, dy, cfg) = setup();
        let cfg = cfg.with_targets(TargetSet::empty());
        let y = qlinear_forward(&x, &w, &cfg).unwrap();
        assert_eq!(y, naive_matmul(&x, &w.transpose()));
        let (dx, dw) = qlinear_backward(&dy, &x, &w, &cfg).unwrap();
        assert_eq!(dx, naive_matmul(&dy, &w));
        assert_eq!(dw, naive_matmul(&dy.transpose(), &x));
    }

    #[test]
    fn forward_matches_independently_quantized_operands() {
        let (x, w, _, cfg) = setup();
        let cfg = cfg.with_targets("P1,P2".parse().unwrap());
        let y = qlinear_forward(&x, &w, &cfg).unwrap();
        let xq = quantize_dequantize(&x, cfg.fmt, cfg.strat).unwrap().dequantized;
        let wq = quantize_dequantize(&w, cfg.fmt, cfg.strat).unwrap().dequantized;
        assert_eq!(y, naive_matmul(&xq, &wq.transpose()));
    }

    #[test]
    fn p4_only_touches_dx() {
        let (x, w, dy, cfg) = setup();
        let cfg = cfg.with_targets("P4".parse().unwrap());
        let (dx, dw) = qlinear_backward(&dy, &x, &w, &cfg).unwrap();
        let wq = quantize_dequantize(&w.transpose(), cfg.fmt, cfg.strat)
            .unwrap()
            .dequantized
            .transpose();
        assert_eq!(dx, naive_matmul(&dy, &wq));
        assert_eq!(dw, naive_matmul(&dy.transpose(), &x));
        assert_ne!(dx, naive_matmul(&dy, &w));
    }

    #[test]
    fn zero_gradient_stays_zero() {
        let (x, w, _, cfg) = setup();
        let cfg = cfg.with_targets(TargetSet::all());
        let dy = Tensor2D::zeros(8, 4);
        let (dx, dw) = qlinear_backward(&dy, &x, &w, &cfg).unwrap();
        assert!(dx.data().iter().all(|v| *v == 0.0));
        assert!(dw.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_hot_row_selects_weight_row() {
        let (_, w, _, cfg) = setup();
        let cfg = cfg.with_targets("P2".parse().unwrap());
        let x = Tensor2D::from_fn(1, 16, |_, c| if c == 5 { 1.0 } else { 0.0 });
        let y = qlinear_forward(&x, &w, &cfg).unwrap();
        let wq = quantize_dequantize(&w, cfg.fmt, cfg.strat).unwrap().dequantized;
        for o in 0..4 {
            assert_eq!(y.get(0, o), wq.get(o, 5));
        }
    }

    #[test]
    fn shape_errors() {
        let (x, w, dy, cfg) = setup();
        assert!(matches!(qlinear_forward(&dy, &w, &cfg), Err(Error::Shape(_))));
        assert!(matches!(qlinear_forward(&x, &x, &cfg), Err(Error::Shape(_))));
        assert!(matches!(qlinear_backward(&x, &x, &w, &cfg), Err(Error::Shape(_))));
        assert!(qlinear_backward(&dy, &x, &w, &cfg).is_ok());
    }

    #[test]
    fn bf16_output_rounds() {
        let (x, w, _, cfg) = setup();
        let mut cfg = cfg.with_targets(TargetSet::empty());
        cfg.bf16_output = true;
        let y = qlinear_forward(&x, &w, &cfg).unwrap();
        for v in y.data() {
            assert_eq!(quantize_finite(*v, FpFormat::E8M7), *v);
        }
    }
}
