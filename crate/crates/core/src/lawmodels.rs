//! Closed-form scaling-law evaluators.
//!
//! The unified law is Chinchilla plus a low-precision penalty:
//!
//! ```text
//! L(N, D, E, M, B) = n/N^α + d/D^β + ε + (D^β/N^α) · log2(B) / (γ (E+½)^δ (M+½)^ν)
//! ```
//!
//! Block sizes are carried as `log2B`; channel-wise and tensor-wise scaling
//! map onto equivalent block sizes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equivalent `log2 B` of channel-wise scaling.
pub const CHANNEL_LOG2B: f64 = 13.1567;

/// The eight constants of the unified law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawConstants {
    pub n: f64,
    pub alpha: f64,
    pub d: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
}

pub const PRESET_CAPYBARA_PAPER: &str = "capybara-paper";

/// Canonical key order of the preset file format.
pub const CONSTANT_NAMES: [&str; 8] = ["n", "alpha", "d", "beta", "epsilon", "gamma", "delta", "nu"];

impl LawConstants {
    /// Constants fitted on the 41M–679M parameter, 10B–100B token grid.
    pub const fn capybara_paper() -> Self {
        LawConstants {
            n: 69.2343,
            alpha: 0.2368,
            d: 68973.0621,
            beta: 0.5162,
            epsilon: 1.9061,
            gamma: 11334.5197,
            delta: 3.1926,
            nu: 2.9543,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        (name == PRESET_CAPYBARA_PAPER).then(LawConstants::capybara_paper)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in CONSTANT_NAMES.iter().zip(self.to_array()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConstants(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.n,
            self.alpha,
            self.d,
            self.beta,
            self.epsilon,
            self.gamma,
            self.delta,
            self.nu,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        LawConstants {
            n: a[0],
            alpha: a[1],
            d: a[2],
            beta: a[3],
            epsilon: a[4],
            gamma: a[5],
            delta: a[6],
            nu: a[7],
        }
    }

    /// Parses `name = value` lines (`:` also accepted, `#` starts a comment).
    /// Greek spellings (`α`, `β`, `ε`, `γ`, `δ`, `ν`) are accepted as keys.
    pub fn parse_preset(src: &str) -> Result<Self> {
        let mut found: BTreeMap<&'static str, f64> = BTreeMap::new();
        for (i, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::parse(i + 1, 1, "expected `name = value`"))?;
            let key = canonical_name(key.trim())
                .ok_or_else(|| Error::parse(i + 1, 1, format!("unknown constant {:?}", key.trim())))?;
            let col = raw.find(value.trim()).map_or(1, |c| c + 1);
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, col, format!("bad number {:?}", value.trim())))?;
            if found.insert(key, v).is_some() {
                return Err(Error::parse(i + 1, 1, format!("duplicate constant {key}")));
            }
        }
        let mut a = [0.0; 8];
        for (slot, name) in a.iter_mut().zip(CONSTANT_NAMES) {
            *slot = *found
                .get(name)
                .ok_or_else(|| Error::parse(0, 0, format!("missing constant {name}")))?;
        }
        let c = LawConstants::from_array(a);
        c.validate()?;
        Ok(c)
    }

    /// Preset text; values print with shortest round-trip formatting.
    pub fn to_preset_text(&self) -> String {
        CONSTANT_NAMES
            .iter()
            .zip(self.to_array())
            .map(|(k, v)| format!("{k} = {v:?}\n"))
            .collect()
    }

    /// BF16-equivalent loss `n/N^α + d/D^β + ε`.
    pub fn chinchilla(&self, n_params: f64, tokens: f64) -> f64 {
        chinchilla_loss(n_params, tokens, self)
    }
}

fn canonical_name(k: &str) -> Option<&'static str> {
    Some(match k.to_ascii_lowercase().as_str() {
        "n" => "n",
        "alpha" | "α" => "alpha",
        "d" => "d",
        "beta" | "β" => "beta",
        "epsilon" | "eps" | "ε" | "ϵ" => "epsilon",
        "gamma" | "γ" => "gamma",
        "delta" | "δ" => "delta",
        "nu" | "ν" => "nu",
        _ => return None,
    })
}

/// How a run's scaling factors were shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyTag {
    Block,
    Channel,
    Tensor,
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyTag::Block => "block",
            StrategyTag::Channel => "channel",
            StrategyTag::Tensor => "tensor",
        })
    }
}

impl FromStr for StrategyTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "block" => Ok(StrategyTag::Block),
            "channel" => Ok(StrategyTag::Channel),
            "tensor" => Ok(StrategyTag::Tensor),
            other => Err(Error::InvalidInput(format!(
                "strategy must be block, channel or tensor, got {other:?}"
            ))),
        }
    }
}

/// One training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Parameter count.
    pub n: f64,
    /// Training tokens.
    pub d: f64,
    pub e: f64,
    pub m: f64,
    pub log2b: f64,
    pub strategy: StrategyTag,
    pub loss: f64,
}

impl RunRecord {
    pub fn new(n: f64, d: f64, e: f64, m: f64, log2b: f64, loss: f64) -> Self {
        RunRecord {
            n,
            d,
            e,
            m,
            log2b,
            strategy: StrategyTag::Block,
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.n) && self.n > 0.0) || !(ok(self.d) && self.d > 0.0) {
            return Err(Error::InvalidInput("N and D must be positive".into()));
        }
        if !(ok(self.e) && self.e >= 0.0) || !(ok(self.m) && self.m >= 0.0) {
            return Err(Error::InvalidInput("E and M must be non-negative".into()));
        }
        if !(ok(self.log2b) && self.log2b >= 0.0) {
            return Err(Error::InvalidInput("log2B must be non-negative".into()));
        }
        if !(ok(self.loss) && self.loss > 0.0) {
            return Err(Error::InvalidInput("loss must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of the single-variable laws and their `N`, `D` reparameterization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarginalParams {
    /// Slice law `L(E) = g / (E+½)^delta + iota_e · L_BF16`, with the slice
    /// coefficient `g = D^phi / (N^eta · gamma_e)`.
    pub gamma_e: f64,
    pub delta: f64,
    pub iota_e: f64,
    /// Same shape in `M`, with `nu`, `phi_m` and `eta_m`.
    pub gamma_m: f64,
    pub nu: f64,
    pub iota_m: f64,
    /// `L(B) = kappa log2B + psi`
    pub kappa: f64,
    pub psi: f64,
    pub phi: f64,
    pub eta: f64,
    pub phi_m: f64,
    pub eta_m: f64,
}

/// `log2 B_tensor ≈ N^omega / (xi · D^eta_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorEquivParams {
    pub omega: f64,
    pub xi: f64,
    pub eta_t: f64,
}

/// `D^β / N^α`.
pub fn knowledge_intensity(n_params: f64, tokens: f64, c: &LawConstants) -> f64 {
    tokens.powf(c.beta) / n_params.powf(c.alpha)
}

pub fn chinchilla_loss(n_params: f64, tokens: f64, c: &LawConstants) -> f64 {
    c.n / n_params.powf(c.alpha) + c.d / tokens.powf(c.beta) + c.epsilon
}

/// `[(n/N)^(α/β) + d/D]^β + ε`.
pub fn openai_loss(n_params: f64, tokens: f64, n: f64, d: f64, alpha: f64, beta: f64, epsilon: f64) -> f64 {
    ((n / n_params).powf(alpha / beta) + d / tokens).powf(beta) + epsilon
}

/// Chinchilla with an effective parameter count `N (1 - exp(-(1+E+M)/γ_k))`.
pub fn kumar_loss(n_params: f64, tokens: f64, e: f64, m: f64, c: &LawConstants, gamma_k: f64) -> f64 {
    let eff = n_params * (1.0 - (-(1.0 + e + m) / gamma_k).exp());
    c.n / eff.powf(c.alpha) + c.d / tokens.powf(c.beta) + c.epsilon
}

/// Low-precision excess loss.
pub fn rho(n_params: f64, tokens: f64, e: f64, m: f64, log2b: f64, c: &LawConstants) -> f64 {
    knowledge_intensity(n_params, tokens, c) * log2b
        / (c.gamma * (e + 0.5).powf(c.delta) * (m + 0.5).powf(c.nu))
}

pub fn capybara_loss(n_params: f64, tokens: f64, e: f64, m: f64, log2b: f64, c: &LawConstants) -> f64 {
    chinchilla_loss(n_params, tokens, c) + rho(n_params, tokens, e, m, log2b, c)
}

pub fn exponent_marginal(e: f64, gamma: f64, delta: f64, iota: f64) -> f64 {
    gamma / (e + 0.5).powf(delta) + iota
}

pub fn mantissa_marginal(m: f64, gamma: f64, nu: f64, iota: f64) -> f64 {
    gamma / (m + 0.5).powf(nu) + iota
}

/// Exponent law with `D`, `N` exponents tied to `β`, `α` and unit Chinchilla coefficient.
pub fn exponent_joint(n_params: f64, tokens: f64, e: f64, c: &LawConstants) -> f64 {
    knowledge_intensity(n_params, tokens, c) / (c.gamma * (e + 0.5).powf(c.delta))
        + chinchilla_loss(n_params, tokens, c)
}

/// Exponent law with free reparameterization `(D^phi/N^eta)/(γ(E+½)^δ) + iota·L_BF16`.
pub fn exponent_joint_free(
    n_params: f64,
    tokens: f64,
    e: f64,
    c: &LawConstants,
    phi: f64,
    eta: f64,
    iota: f64,
) -> f64 {
    tokens.powf(phi) / n_params.powf(eta) / (c.gamma * (e + 0.5).powf(c.delta))
        + iota * chinchilla_loss(n_params, tokens, c)
}

pub fn mantissa_joint(n_params: f64, tokens: f64, m: f64, c: &LawConstants) -> f64 {
    knowledge_intensity(n_params, tokens, c) / (c.gamma * (m + 0.5).powf(c.nu))
        + chinchilla_loss(n_params, tokens, c)
}

pub fn em_joint(n_params: f64, tokens: f64, e: f64, m: f64, c: &LawConstants) -> f64 {
    knowledge_intensity(n_params, tokens, c) / (c.gamma * (e + 0.5).powf(c.delta) * (m + 0.5).powf(c.nu))
        + chinchilla_loss(n_params, tokens, c)
}

pub fn blocksize_marginal(log2b: f64, kappa: f64, psi: f64) -> f64 {
    kappa * log2b + psi
}

/// `(D^β/N^α) · log2B / kappa + L_BF16`; `kappa` is the fitted reciprocal coefficient.
pub fn blocksize_joint(n_params: f64, tokens: f64, log2b: f64, c: &LawConstants, kappa: f64) -> f64 {
    knowledge_intensity(n_params, tokens, c) * log2b / kappa + chinchilla_loss(n_params, tokens, c)
}

pub fn channel_equiv_log2b() -> f64 {
    CHANNEL_LOG2B
}

pub fn tensor_equiv_log2b(n_params: f64, tokens: f64, p: &TensorEquivParams) -> f64 {
    n_params.powf(p.omega) / (p.xi * tokens.powf(p.eta_t))
}
