//! Three-stage fitting: baseline law, single-variable slices, unified law.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fit, FitProblem, FitResult, LawModel, LossKind};
use crate::error::{Error, Result};
use crate::lawmodels::{self, LawConstants, MarginalParams, RunRecord};

/// Ratios that should sit near 1 when the data follows the unified law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRatios {
    pub phi_over_beta: f64,
    pub eta_over_alpha: f64,
    /// Mean of the exponent-slice offsets over the stage-1 prediction.
    pub iota_e: f64,
    pub phi_m_over_beta: f64,
    pub eta_m_over_alpha: f64,
    pub iota_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedReport {
    pub constants: LawConstants,
    pub stage1: FitResult,
    pub marginals: MarginalParams,
    pub ratios: StageRatios,
    pub exponent_slices: usize,
    pub mantissa_slices: usize,
    pub block_slices: usize,
    pub stage3: FitResult,
}

type Key = (u64, u64);

fn key(a: f64, b: f64) -> Key {
    (a.to_bits(), b.to_bits())
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<u64> = values.map(f64::to_bits).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

fn check_span(data: &[RunRecord]) -> Result<()> {
    type Dim = (&'static str, fn(&RunRecord) -> f64);
    let dims: [Dim; 5] = [
        ("N", |r| r.n),
        ("D", |r| r.d),
        ("E", |r| r.e),
        ("M", |r| r.m),
        ("log2B", |r| r.log2b),
    ];
    for (name, get) in dims {
        let count = distinct(data.iter().map(get));
        if count < 2 {
            return Err(Error::InsufficientSpan(format!(
                "staged fit needs at least 2 distinct {name} values, found {count}"
            )));
        }
    }
    Ok(())
}

/// Rows of the most precise configuration: every `log2B = 0` row when
/// present, otherwise the widest `E + M` at the smallest `log2B`.
fn stage1_subset(data: &[RunRecord]) -> Vec<RunRecord> {
    let exact: Vec<_> = data.iter().copied().filter(|r| r.log2b == 0.0).collect();
    if distinct(exact.iter().map(|r| r.n)) >= 2 && distinct(exact.iter().map(|r| r.d)) >= 2 {
        return exact;
    }
    let best = data
        .iter()
        .map(|r| (r.e + r.m, -r.log2b))
        .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .unwrap();
    data.iter()
        .copied()
        .filter(|r| r.e + r.m == best.0 && -r.log2b == best.1)
        .collect()
}

/// Picks the `(fixed_a, fixed_b)` group with the most distinct values of the
/// swept variable, then the most rows, then the smallest `fixed_a`, then the
/// largest `fixed_b`.
fn reference_group(
    data: &[RunRecord],
    fixed: impl Fn(&RunRecord) -> (f64, f64),
    swept: impl Fn(&RunRecord) -> f64,
) -> Option<((f64, f64), Vec<RunRecord>)> {
    let mut groups: BTreeMap<Key, Vec<RunRecord>> = BTreeMap::new();
    for r in data.iter().filter(|r| r.log2b > 0.0) {
        let (a, b) = fixed(r);
        groups.entry(key(a, b)).or_default().push(*r);
    }
    groups
        .into_values()
        .map(|rows| (fixed(&rows[0]), rows))
        .max_by(|(ka, ra), (kb, rb)| {
            let da = distinct(ra.iter().map(&swept));
            let db = distinct(rb.iter().map(&swept));
            da.cmp(&db)
                .then(ra.len().cmp(&rb.len()))
                .then(kb.0.total_cmp(&ka.0))
                .then(ka.1.total_cmp(&kb.1))
        })
}

struct Slice {
    n: f64,
    d: f64,
    gamma: f64,
    exponent: f64,
    iota: f64,
}

/// Fits `L(x) = gamma/(x+½)^p + iota` on each `(N, D)` slice.
fn marginal_slices(
    rows: &[RunRecord],
    model: LawModel,
    swept: impl Fn(&RunRecord) -> f64,
    baseline: &FitResult,
    seed: u64,
    starts: usize,
) -> Result<Vec<Slice>> {
    let mut by_nd: BTreeMap<Key, Vec<RunRecord>> = BTreeMap::new();
    for r in rows {
        by_nd.entry(key(r.n, r.d)).or_default().push(*r);
    }
    let mut out = Vec::new();
    for slice in by_nd.into_values() {
        let (n, d) = (slice[0].n, slice[0].d);
        let values = distinct(slice.iter().map(&swept));
        if values >= 3 {
            let r = fit(&FitProblem::new(model, slice).with_seed(seed).with_starts(starts))?;
            out.push(Slice {
                n,
                d,
                gamma: r.params[0],
                exponent: r.params[1],
                iota: r.params[2],
            });
        } else if values == 2 {
            // Two points: pin the offset to the stage-1 prediction.
            let iota = baseline.predict(&slice[0]);
            let mut pts: Vec<(f64, f64)> = slice.iter().map(|r| (swept(r) + 0.5, r.loss - iota)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (lo, hi) = (pts[0], pts[pts.len() - 1]);
            if lo.1 <= 0.0 || hi.1 <= 0.0 {
                continue;
            }
            let exponent = (lo.1 / hi.1).ln() / (hi.0 / lo.0).ln();
            out.push(Slice {
                n,
                d,
                gamma: lo.1 * lo.0.powf(exponent),
                exponent,
                iota,
            });
        }
    }
    Ok(out)
}

/// Least squares `ln y = c + phi ln D - eta ln N`; returns `(c, phi, eta)`.
fn power_regression(points: &[(f64, f64, f64)], what: &str) -> Result<(f64, f64, f64)> {
    if points.len() < 3
        || distinct(points.iter().map(|p| p.0)) < 2
        || distinct(points.iter().map(|p| p.1)) < 2
    {
        return Err(Error::InsufficientSpan(format!(
            "{what} slices must cover at least 2 values of N and of D"
        )));
    }
    let a = DMatrix::from_fn(points.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => points[i].1.ln(),
        _ => -points[i].0.ln(),
    });
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.2.ln()));
    let sol = a
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numeric(format!("{what} regression failed: {e}")))?;
    Ok((sol[0], sol[1], sol[2]))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Staged fit with `starts` multistarts per inner fit.
pub fn staged_fit(data: &[RunRecord], seed: u64, starts: usize) -> Result<StagedReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    for r in data {
        r.validate()?;
    }
    check_span(data)?;

    let subset = stage1_subset(data);
    let stage1 = fit(&FitProblem::new(LawModel::Chinchilla, subset).with_seed(seed).with_starts(starts))?;
    let c1 = LawConstants {
        n: stage1.params[0],
        alpha: stage1.params[1],
        d: stage1.params[2],
        beta: stage1.params[3],
        epsilon: stage1.params[4],
        ..LawConstants::capybara_paper()
    };

    let span_err = |what: &str| Error::InsufficientSpan(format!("no slice varies {what} at fixed N and D"));

    let ((m_ref, b_ref), e_rows) = reference_group(data, |r| (r.m, r.log2b), |r| r.e).ok_or_else(|| span_err("E"))?;
    let e_slices = marginal_slices(&e_rows, LawModel::ExponentMarginal, |r| r.e, &stage1, seed, starts)?;
    let (ce, phi, eta) = power_regression(
        &e_slices.iter().map(|s| (s.n, s.d, s.gamma)).collect::<Vec<_>>(),
        "exponent",
    )?;
    let delta = median(e_slices.iter().map(|s| s.exponent).collect());
    let iota_e = e_slices
        .iter()
        .map(|s| s.iota / lawmodels::chinchilla_loss(s.n, s.d, &c1))
        .sum::<f64>()
        / e_slices.len() as f64;

    let ((e_ref, b_ref_m), m_rows) = reference_group(data, |r| (r.e, r.log2b), |r| r.m).ok_or_else(|| span_err("M"))?;
    let m_slices = marginal_slices(&m_rows, LawModel::MantissaMarginal, |r| r.m, &stage1, seed, starts)?;
    let (cm, phi_m, eta_m) = power_regression(
        &m_slices.iter().map(|s| (s.n, s.d, s.gamma)).collect::<Vec<_>>(),
        "mantissa",
    )?;
    let nu = median(m_slices.iter().map(|s| s.exponent).collect());
    let iota_m = m_slices
        .iter()
        .map(|s| s.iota / lawmodels::chinchilla_loss(s.n, s.d, &c1))
        .sum::<f64>()
        / m_slices.len() as f64;

    let (kappa, psi, block_slices) = block_slices(data);

    // Slice coefficient = log2B_ref / (gamma (other+½)^exp) · D^φ / N^η.
    let gamma_from_e = b_ref * (-ce).exp() / (m_ref + 0.5).powf(nu);
    let gamma_from_m = b_ref_m * (-cm).exp() / (e_ref + 0.5).powf(delta);
    let gamma0 = (gamma_from_e * gamma_from_m).sqrt();

    let marginals = MarginalParams {
        gamma_e: (-ce).exp(),
        delta,
        iota_e,
        gamma_m: (-cm).exp(),
        nu,
        iota_m,
        kappa,
        psi,
        phi,
        eta,
        phi_m,
        eta_m,
    };
    let ratios = StageRatios {
        phi_over_beta: phi / c1.beta,
        eta_over_alpha: eta / c1.alpha,
        iota_e,
        phi_m_over_beta: phi_m / c1.beta,
        eta_m_over_alpha: eta_m / c1.alpha,
        iota_m,
    };

    let mut init = stage1.params.clone();
    init.extend([gamma0, delta, nu]);
    if init.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Numeric(format!("stage 2 produced an unusable seed point {init:?}")));
    }
    let stage3 = fit(
        &FitProblem::new(LawModel::Capybara, data.to_vec())
            .with_seed(seed)
            .with_starts(starts)
            .with_loss(LossKind::Squared)
            .with_initial(init),
    )?;
    let constants = stage3.constants().expect("unified model carries all constants");
    Ok(StagedReport {
        constants,
        stage1,
        marginals,
        ratios,
        exponent_slices: e_slices.len(),
        mantissa_slices: m_slices.len(),
        block_slices,
        stage3,
    })
}

/// Ordinary least squares of loss on `log2B` per `(N, D, E, M)` slice;
/// returns the median slope, median intercept and slice count.
fn block_slices(data: &[RunRecord]) -> (f64, f64, usize) {
    let mut groups: BTreeMap<(Key, Key), Vec<(f64, f64)>> = BTreeMap::new();
    for r in data {
        groups
            .entry((key(r.n, r.d), key(r.e, r.m)))
            .or_default()
            .push((r.log2b, r.loss));
    }
    let (mut slopes, mut intercepts) = (Vec::new(), Vec::new());
    for pts in groups.into_values() {
        if distinct(pts.iter().map(|p| p.0)) < 2 {
            continue;
        }
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        slopes.push(slope);
        intercepts.push(my - slope * mx);
    }
    let count = slopes.len();
    if count == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    (median(slopes), median(intercepts), count)
}
