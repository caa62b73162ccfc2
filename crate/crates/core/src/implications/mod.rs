//! Optimal float layout, critical data size and compute-optimal precision.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lawmodels::{self, LawConstants};

/// Default FLOP proportionality constant `k` in `C = k (P + b) N D`.
pub const DEFAULT_K: f64 = 6.0 / 16.0;
/// `log2(128)`.
pub const DEFAULT_LOG2B: f64 = 7.0;

/// Combinations of the law constants used by the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// `γ δ^δ ν^ν / (δ+ν)^(δ+ν)`
    pub gamma_rho: f64,
    /// `γ_ρ n`
    pub gamma_n: f64,
    /// `(δ+ν-α) / (n α γ_ρ)`
    pub gamma_d: f64,
    /// `(β+δ+ν) / (d β γ_ρ)`
    pub gamma_big_n: f64,
    /// `(d β / (n α)) · (δ+ν-α) / (δ+ν+β)`
    pub lambda: f64,
}

impl DerivedConstants {
    pub fn new(c: &LawConstants) -> Self {
        let s = c.delta + c.nu;
        let gamma_rho = c.gamma * c.delta.powf(c.delta) * c.nu.powf(c.nu) / s.powf(s);
        DerivedConstants {
            gamma_rho,
            gamma_n: gamma_rho * c.n,
            gamma_d: (s - c.alpha) / (c.n * c.alpha * gamma_rho),
            gamma_big_n: (c.beta + s) / (c.d * c.beta * gamma_rho),
            lambda: (c.d * c.beta / (c.n * c.alpha)) * ((s - c.alpha) / (s + c.beta)),
        }
    }
}

/// Compute budget `C = k (P + b) N D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeBudget {
    pub c: f64,
    pub k: f64,
    pub b: f64,
    pub fixed_n: Option<f64>,
    pub fixed_d: Option<f64>,
}

impl ComputeBudget {
    pub fn new(c: f64) -> Self {
        ComputeBudget {
            c,
            k: DEFAULT_K,
            b: 0.0,
            fixed_n: None,
            fixed_d: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0 && self.k.is_finite() && self.k > 0.0) {
            return Err(Error::InvalidInput("budget C and k must be positive".into()));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(Error::InvalidInput("overhead b must be >= 0".into()));
        }
        for v in [self.fixed_n, self.fixed_d].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput("fixed N and D must be positive".into()));
            }
        }
        Ok(())
    }

    fn closed_form_only(&self) -> Result<()> {
        self.validate()?;
        if self.b != 0.0 {
            return Err(Error::InvalidInput(
                "closed forms assume b = 0; use the numeric oracle for b > 0".into(),
            ));
        }
        Ok(())
    }
}

fn positive(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be positive and finite")))
    }
}

fn check_bits(p: f64) -> Result<()> {
    if p.is_finite() && p >= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("total bits P must be >= 2, got {p}")))
    }
}

/// Continuous mantissa width minimizing the excess loss at `P` total bits.
pub fn optimal_mantissa(p: f64, c: &LawConstants) -> Result<f64> {
    check_bits(p)?;
    Ok(c.nu * p / (c.delta + c.nu) - 0.5)
}

/// Integer `(E, M)` with `E + M = P - 1`, `E >= 1`, minimizing the excess
/// loss. Ties go to the larger `E`.
pub fn optimal_layout_int(p: u32, c: &LawConstants) -> Result<(u32, u32)> {
    check_bits(p as f64)?;
    let mut best = (1, p - 2);
    let mut best_score = f64::NEG_INFINITY;
    for e in 1..p {
        let m = p - 1 - e;
        let score = c.delta * (e as f64 + 0.5).ln() + c.nu * (m as f64 + 0.5).ln();
        if score >= best_score {
            best = (e, m);
            best_score = score;
        }
    }
    Ok(best)
}

/// Unified loss with the mantissa/exponent split chosen optimally for `P` bits.
pub fn loss_optimal_layout(n: f64, d: f64, p: f64, log2b: f64, c: &LawConstants) -> Result<f64> {
    positive("N, D and P", &[n, d, p])?;
    positive("log2B + 1", &[log2b + 1.0])?;
    let dc = DerivedConstants::new(c);
    Ok(lawmodels::chinchilla_loss(n, d, c)
        + lawmodels::knowledge_intensity(n, d, c) * log2b / (dc.gamma_rho * p.powf(c.delta + c.nu)))
}

/// Effective parameter count after precision loss.
pub fn n_eff(n: f64, d: f64, p: f64, log2b: f64, c: &LawConstants) -> Result<f64> {
    positive("N, D and P", &[n, d, p])?;
    positive("log2B + 1", &[log2b + 1.0])?;
    let dc = DerivedConstants::new(c);
    let ratio = d.powf(c.beta) * log2b / (dc.gamma_n * p.powf(c.delta + c.nu));
    Ok(n * (1.0 / (1.0 + ratio)).powf(1.0 / c.alpha))
}

/// `n_eff` when `D^β log2B ≫ γ_n P^(δ+ν)`.
pub fn simplified_n_eff(n: f64, d: f64, p: f64, log2b: f64, c: &LawConstants) -> Result<f64> {
    positive("N, D, P and log2B", &[n, d, p, log2b])?;
    let dc = DerivedConstants::new(c);
    Ok((dc.gamma_n / (d.powf(c.beta) * log2b)).powf(1.0 / c.alpha) * n * p.powf((c.delta + c.nu) / c.alpha))
}

/// Token count minimizing the unified loss at fixed `N` and format.
pub fn critical_data_size(n: f64, e: f64, m: f64, log2b: f64, c: &LawConstants) -> Result<f64> {
    positive("N", &[n])?;
    if !(e.is_finite() && e >= 0.0 && m.is_finite() && m >= 0.0 && log2b.is_finite() && log2b >= 0.0) {
        return Err(Error::InvalidInput("E, M and log2B must be non-negative".into()));
    }
    if log2b == 0.0 {
        return Err(Error::NoCriticalPoint(
            "log2B = 0: loss decreases monotonically in D".into(),
        ));
    }
    let num = c.d * c.gamma * n.powf(c.alpha) * (e + 0.5).powf(c.delta) * (m + 0.5).powf(c.nu);
    Ok((num / log2b).powf(1.0 / (2.0 * c.beta)))
}

/// Precision minimizing loss at fixed data size `D` (any budget).
pub fn p_opt_fixed_d(d: f64, log2b: f64, c: &LawConstants) -> Result<f64> {
    positive("D and log2B", &[d, log2b])?;
    let dc = DerivedConstants::new(c);
    positive("gamma_D", &[dc.gamma_d])
        .map_err(|_| Error::InvalidConstants("delta + nu must exceed alpha".into()))?;
    Ok((dc.gamma_d * d.powf(c.beta) * log2b).powf(1.0 / (c.delta + c.nu)))
}

/// Precision minimizing loss at fixed model size `N` under `budget`.
pub fn p_opt_fixed_n(n: f64, budget: &ComputeBudget, log2b: f64, c: &LawConstants) -> Result<f64> {
    budget.closed_form_only()?;
    positive("N and log2B", &[n, log2b])?;
    let dc = DerivedConstants::new(c);
    let rhs = dc.gamma_big_n
        * (budget.c / budget.k).powf(2.0 * c.beta)
        * n.powf(-(c.alpha + 2.0 * c.beta))
        * log2b;
    Ok(rhs.powf(1.0 / (c.delta + c.nu + 2.0 * c.beta)))
}

/// `P^(δ+ν+2β) N^(α+2β)`, constant along the fixed-budget optimum.
pub fn exchange_rate_constant(n: f64, p: f64, c: &LawConstants) -> f64 {
    p.powf(c.delta + c.nu + 2.0 * c.beta) * n.powf(c.alpha + 2.0 * c.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOptimum {
    pub p: f64,
    pub n: f64,
    pub d: f64,
}

/// Precision, parameters and tokens minimizing loss under `budget`.
pub fn p_opt_joint(budget: &ComputeBudget, log2b: f64, c: &LawConstants) -> Result<JointOptimum> {
    budget.closed_form_only()?;
    positive("log2B", &[log2b])?;
    let dc = DerivedConstants::new(c);
    if !(dc.lambda > 0.0 && dc.gamma_d > 0.0) {
        return Err(Error::InvalidConstants(format!(
            "lambda = {} is not positive (requires delta + nu > alpha)",
            dc.lambda
        )));
    }
    let s = c.delta + c.nu;
    let ratio = (c.alpha + c.beta) / c.beta;
    let exponent = s * ratio + c.alpha;
    let rhs = dc.lambda * (dc.gamma_d * log2b).powf(ratio) * (budget.c / budget.k).powf(c.alpha);
    let p = rhs.powf(1.0 / exponent);
    let d = (p.powf(s) / (dc.gamma_d * log2b)).powf(1.0 / c.beta);
    let n = budget.c / (budget.k * p * d);
    Ok(JointOptimum { p, n, d })
}
