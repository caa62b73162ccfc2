//! Law forms the fitter knows, with parameter layouts and default bounds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lawmodels::{self, LawConstants, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawModel {
    Chinchilla,
    #[serde(rename = "openai")]
    OpenAi,
    Kumar,
    Capybara,
    ExponentJoint,
    MantissaJoint,
    EmJoint,
    BlocksizeJoint,
    ExponentMarginal,
    MantissaMarginal,
    BlocksizeMarginal,
}

/// Which record fields a model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inputs {
    pub n: bool,
    pub d: bool,
    pub e: bool,
    pub m: bool,
    pub log2b: bool,
}

const ND: [&str; 5] = ["n", "alpha", "d", "beta", "epsilon"];

impl LawModel {
    pub const ALL: [LawModel; 11] = [
        LawModel::Chinchilla,
        LawModel::OpenAi,
        LawModel::Kumar,
        LawModel::Capybara,
        LawModel::ExponentJoint,
        LawModel::MantissaJoint,
        LawModel::EmJoint,
        LawModel::BlocksizeJoint,
        LawModel::ExponentMarginal,
        LawModel::MantissaMarginal,
        LawModel::BlocksizeMarginal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LawModel::Chinchilla => "chinchilla",
            LawModel::OpenAi => "openai",
            LawModel::Kumar => "kumar",
            LawModel::Capybara => "capybara",
            LawModel::ExponentJoint => "exponent-joint",
            LawModel::MantissaJoint => "mantissa-joint",
            LawModel::EmJoint => "em-joint",
            LawModel::BlocksizeJoint => "blocksize-joint",
            LawModel::ExponentMarginal => "exponent-marginal",
            LawModel::MantissaMarginal => "mantissa-marginal",
            LawModel::BlocksizeMarginal => "blocksize-marginal",
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        let with = |extra: &[&'static str]| ND.iter().chain(extra).copied().collect();
        match self {
            LawModel::Chinchilla | LawModel::OpenAi => ND.to_vec(),
            LawModel::Kumar => with(&["gamma_k"]),
            LawModel::Capybara | LawModel::EmJoint => with(&["gamma", "delta", "nu"]),
            LawModel::ExponentJoint => with(&["gamma", "delta"]),
            LawModel::MantissaJoint => with(&["gamma", "nu"]),
            LawModel::BlocksizeJoint => with(&["kappa"]),
            LawModel::ExponentMarginal => vec!["gamma", "delta", "iota"],
            LawModel::MantissaMarginal => vec!["gamma", "nu", "iota"],
            LawModel::BlocksizeMarginal => vec!["kappa", "psi"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    pub fn inputs(&self) -> Inputs {
        let nd = |e, m, log2b| Inputs {
            n: true,
            d: true,
            e,
            m,
            log2b,
        };
        let single = |e, m, log2b| Inputs {
            n: false,
            d: false,
            e,
            m,
            log2b,
        };
        match self {
            LawModel::Chinchilla | LawModel::OpenAi => nd(false, false, false),
            LawModel::Kumar | LawModel::EmJoint => nd(true, true, false),
            LawModel::Capybara => nd(true, true, true),
            LawModel::ExponentJoint => nd(true, false, false),
            LawModel::MantissaJoint => nd(false, true, false),
            LawModel::BlocksizeJoint => nd(false, false, true),
            LawModel::ExponentMarginal => single(true, false, false),
            LawModel::MantissaMarginal => single(false, true, false),
            LawModel::BlocksizeMarginal => single(false, false, true),
        }
    }

    /// Bounds used to draw multistart points (and to clamp direct fits).
    pub fn default_bounds(&self) -> Vec<(f64, f64)> {
        let nd = [
            (1.0, 1e4),
            (0.05, 1.0),
            (10.0, 1e7),
            (0.05, 1.0),
            (0.5, 5.0),
        ];
        let with = |extra: &[(f64, f64)]| nd.iter().chain(extra).copied().collect();
        let gamma = (1.0, 1e7);
        let exponent = (0.3, 8.0);
        match self {
            LawModel::Chinchilla | LawModel::OpenAi => nd.to_vec(),
            LawModel::Kumar => with(&[(0.05, 50.0)]),
            LawModel::Capybara | LawModel::EmJoint => with(&[gamma, exponent, exponent]),
            LawModel::ExponentJoint | LawModel::MantissaJoint => with(&[gamma, exponent]),
            LawModel::BlocksizeJoint => with(&[(1.0, 1e8)]),
            LawModel::ExponentMarginal | LawModel::MantissaMarginal => {
                vec![(1e-8, 1e2), exponent, (0.5, 20.0)]
            }
            LawModel::BlocksizeMarginal => vec![(1e-8, 1.0), (0.5, 20.0)],
        }
    }

    /// Predicted loss for `r` under parameters `p`.
    pub fn eval(&self, p: &[f64], r: &RunRecord) -> f64 {
        let c = |g: f64, de: f64, nu: f64| LawConstants {
            n: p[0],
            alpha: p[1],
            d: p[2],
            beta: p[3],
            epsilon: p[4],
            gamma: g,
            delta: de,
            nu,
        };
        match self {
            LawModel::Chinchilla => lawmodels::chinchilla_loss(r.n, r.d, &c(1.0, 1.0, 1.0)),
            LawModel::OpenAi => lawmodels::openai_loss(r.n, r.d, p[0], p[2], p[1], p[3], p[4]),
            LawModel::Kumar => lawmodels::kumar_loss(r.n, r.d, r.e, r.m, &c(1.0, 1.0, 1.0), p[5]),
            LawModel::Capybara => lawmodels::capybara_loss(r.n, r.d, r.e, r.m, r.log2b, &c(p[5], p[6], p[7])),
            LawModel::EmJoint => lawmodels::em_joint(r.n, r.d, r.e, r.m, &c(p[5], p[6], p[7])),
            LawModel::ExponentJoint => lawmodels::exponent_joint(r.n, r.d, r.e, &c(p[5], p[6], 1.0)),
            LawModel::MantissaJoint => lawmodels::mantissa_joint(r.n, r.d, r.m, &c(p[5], 1.0, p[6])),
            LawModel::BlocksizeJoint => {
                lawmodels::blocksize_joint(r.n, r.d, r.log2b, &c(1.0, 1.0, 1.0), p[5])
            }
            LawModel::ExponentMarginal => lawmodels::exponent_marginal(r.e, p[0], p[1], p[2]),
            LawModel::MantissaMarginal => lawmodels::mantissa_marginal(r.m, p[0], p[1], p[2]),
            LawModel::BlocksizeMarginal => lawmodels::blocksize_marginal(r.log2b, p[0], p[1]),
        }
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        matches!(self, LawModel::Chinchilla | LawModel::Capybara)
    }

    /// Partial derivatives of the prediction with respect to each parameter.
    /// Only the Chinchilla and unified forms have closed forms; other models
    /// return `false` and the caller differentiates numerically.
    pub fn gradient(&self, p: &[f64], r: &RunRecord, out: &mut [f64]) -> bool {
        let (ln_n, ln_d) = (r.n.ln(), r.d.ln());
        let n_term = r.n.powf(-p[1]);
        let d_term = r.d.powf(-p[3]);
        let excess = match self {
            LawModel::Chinchilla => 0.0,
            LawModel::Capybara => {
                r.d.powf(p[3]) * n_term * r.log2b
                    / (p[5] * (r.e + 0.5).powf(p[6]) * (r.m + 0.5).powf(p[7]))
            }
            _ => return false,
        };
        out[0] = n_term;
        out[1] = -(p[0] * n_term + excess) * ln_n;
        out[2] = d_term;
        out[3] = (-p[2] * d_term + excess) * ln_d;
        out[4] = 1.0;
        if *self == LawModel::Capybara {
            out[5] = -excess / p[5];
            out[6] = -excess * (r.e + 0.5).ln();
            out[7] = -excess * (r.m + 0.5).ln();
        }
        true
    }

    /// Projects the fitted parameters onto the eight unified-law constants.
    /// Constants the model does not carry are `None`.
    pub fn to_constants(&self, p: &[f64]) -> Option<LawConstants> {
        match self {
            LawModel::Capybara | LawModel::EmJoint => Some(LawConstants::from_array([
                p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7],
            ])),
            _ => None,
        }
    }

    pub fn from_constants(&self, c: &LawConstants) -> Option<Vec<f64>> {
        let a = c.to_array();
        match self {
            LawModel::Chinchilla | LawModel::OpenAi => Some(a[..5].to_vec()),
            LawModel::Capybara | LawModel::EmJoint => Some(a.to_vec()),
            LawModel::ExponentJoint => Some(vec![a[0], a[1], a[2], a[3], a[4], a[5], a[6]]),
            LawModel::MantissaJoint => Some(vec![a[0], a[1], a[2], a[3], a[4], a[5], a[7]]),
            _ => None,
        }
    }
}

impl fmt::Display for LawModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LawModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let key = match key.as_str() {
            "unified" => "capybara",
            "open-ai" => "openai",
            other => other,
        };
        LawModel::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in LawModel::ALL {
            assert_eq!(m.name().parse::<LawModel>().unwrap(), m);
            assert_eq!(m.param_names().len(), m.default_bounds().len());
        }
        assert_eq!("unified".parse::<LawModel>().unwrap(), LawModel::Capybara);
        assert!("gpt".parse::<LawModel>().is_err());
    }

    #[test]
    fn eval_matches_lawmodels() {
        let c = LawConstants::capybara_paper();
        let r = RunRecord::new(1e9, 1e11, 4.0, 3.0, 7.0, 1.0);
        let p = LawModel::Capybara.from_constants(&c).unwrap();
        assert_eq!(
            LawModel::Capybara.eval(&p, &r),
            lawmodels::capybara_loss(1e9, 1e11, 4.0, 3.0, 7.0, &c)
        );
        let p5 = LawModel::Chinchilla.from_constants(&c).unwrap();
        assert_eq!(LawModel::Chinchilla.eval(&p5, &r), lawmodels::chinchilla_loss(1e9, 1e11, &c));
        assert_eq!(
            LawModel::OpenAi.eval(&p5, &r),
            lawmodels::openai_loss(1e9, 1e11, c.n, c.d, c.alpha, c.beta, c.epsilon)
        );
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let c = LawConstants::capybara_paper();
        for model in [LawModel::Chinchilla, LawModel::Capybara] {
            let p = model.from_constants(&c).unwrap();
            for r in [
                RunRecord::new(4.1e7, 1e10, 1.0, 1.0, 9.0, 1.0),
                RunRecord::new(6.79e8, 1e11, 4.0, 3.0, 7.0, 1.0),
                RunRecord::new(1.54e8, 5e10, 2.0, 7.0, 4.0, 1.0),
            ] {
                let mut g = vec![0.0; p.len()];
                assert!(model.gradient(&p, &r, &mut g));
                for k in 0..p.len() {
                    let h = 1e-6 * p[k];
                    let mut hi = p.clone();
                    let mut lo = p.clone();
                    hi[k] += h;
                    lo[k] -= h;
                    let fd = (model.eval(&hi, &r) - model.eval(&lo, &r)) / (2.0 * h);
                    let rel = (fd - g[k]).abs() / g[k].abs().max(1e-300);
                    assert!(rel < 1e-6, "{model} param {k}: analytic {} fd {fd}", g[k]);
                }
            }
        }
    }
}
