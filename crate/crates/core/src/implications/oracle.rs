//! Numeric minimization of the loss laws, independent of the closed forms.

use crate::error::{Error, Result};
use crate::lawmodels::{self, LawConstants};

use super::{loss_optimal_layout, ComputeBudget};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (hi - lo).abs() > tol * (1.0 + x1.abs().max(x2.abs())) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Nelder-Mead simplex search in two dimensions.
pub fn nelder_mead_2d(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], step: f64, tol: f64, max_iter: usize) -> [f64; 2] {
    let mut pts = [x0, [x0[0] + step, x0[1]], [x0[0], x0[1] + step]];
    let mut vals = pts.map(&f);
    for _ in 0..max_iter {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (b, m, w) = (idx[0], idx[1], idx[2]);
        let size = (0..2)
            .map(|k| (pts[w][k] - pts[b][k]).abs().max((pts[m][k] - pts[b][k]).abs()))
            .fold(0.0, f64::max);
        if size < tol {
            break;
        }
        let c = [(pts[b][0] + pts[m][0]) / 2.0, (pts[b][1] + pts[m][1]) / 2.0];
        let along = |t: f64| [c[0] + t * (pts[w][0] - c[0]), c[1] + t * (pts[w][1] - c[1])];
        let xr = along(-1.0);
        let fr = f(xr);
        if fr < vals[b] {
            let xe = along(-2.0);
            let fe = f(xe);
            if fe < fr {
                pts[w] = xe;
                vals[w] = fe;
            } else {
                pts[w] = xr;
                vals[w] = fr;
            }
        } else if fr < vals[m] {
            pts[w] = xr;
            vals[w] = fr;
        } else {
            let xc = if fr < vals[w] { along(-0.5) } else { along(0.5) };
            let fc = f(xc);
            if fc < vals[w].min(fr) {
                pts[w] = xc;
                vals[w] = fc;
            } else {
                for i in [m, w] {
                    pts[i] = [
                        pts[b][0] + 0.5 * (pts[i][0] - pts[b][0]),
                        pts[b][1] + 0.5 * (pts[i][1] - pts[b][1]),
                    ];
                    vals[i] = f(pts[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    pts[best]
}

/// Searches `D` on a log scale for the minimum of the unified loss.
pub fn critical_data_size_numeric(n: f64, e: f64, m: f64, log2b: f64, c: &LawConstants) -> f64 {
    let f = |ln_d: f64| lawmodels::capybara_loss(n, ln_d.exp(), e, m, log2b, c);
    golden_section(f, 1e3f64.ln(), 1e25f64.ln(), 1e-12).exp()
}

/// Excess-loss minimizing mantissa width at `P` bits (`E = P - 1 - M`).
pub fn optimal_mantissa_numeric(p: f64, c: &LawConstants) -> f64 {
    let f = |m: f64| lawmodels::rho(1.0, 1.0, p - 1.0 - m, m, 1.0, c);
    golden_section(f, -0.5 + 1e-9, p - 0.5 - 1e-9, 1e-12)
}

/// Precision minimizing the optimal-layout loss with `D` fixed and
/// `N = C / (k P D)`.
pub fn p_opt_fixed_d_numeric(d: f64, budget: &ComputeBudget, log2b: f64, c: &LawConstants) -> f64 {
    let f = |p: f64| {
        let n = budget.c / (budget.k * (p + budget.b) * d);
        loss_optimal_layout(n, d, p, log2b, c).unwrap_or(f64::INFINITY)
    };
    golden_section(f, 0.5, 128.0, 1e-12)
}

/// Precision minimizing the optimal-layout loss with `N` fixed and
/// `D = C / (k P N)`.
pub fn p_opt_fixed_n_numeric(n: f64, budget: &ComputeBudget, log2b: f64, c: &LawConstants) -> f64 {
    let f = |p: f64| {
        let d = budget.c / (budget.k * (p + budget.b) * n);
        loss_optimal_layout(n, d, p, log2b, c).unwrap_or(f64::INFINITY)
    };
    golden_section(f, 0.5, 128.0, 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericOptimum {
    pub p: f64,
    pub n: f64,
    pub d: f64,
    pub e: f64,
    pub m: f64,
    pub loss: f64,
}

const P_MIN: f64 = 1.0;
const P_MAX: f64 = 64.0;

/// Minimizes the unified loss over `N`, `D` and the exponent/mantissa split
/// with `P = C / (k N D) - b`. A log-spaced grid over `(N, D)` seeds a
/// simplex refinement; the split is solved by golden section at each point.
pub fn p_opt_joint_numeric(budget: &ComputeBudget, log2b: f64, c: &LawConstants) -> Result<NumericOptimum> {
    budget.validate()?;
    if !(log2b.is_finite() && log2b > 0.0) {
        return Err(Error::InvalidInput("log2B must be positive".into()));
    }
    let ck = (budget.c / budget.k).ln();
    let split = |p: f64| {
        let f = |m: f64| lawmodels::rho(1.0, 1.0, p - 1.0 - m, m, 1.0, c);
        golden_section(f, -0.5 + 1e-12, p - 0.5 - 1e-12, 1e-10)
    };
    let eval = |x: [f64; 2]| -> (f64, f64, f64) {
        let p = (ck - x[0] - x[1]).exp() - budget.b;
        if !(P_MIN..=P_MAX).contains(&p) {
            return (f64::INFINITY, p, 0.0);
        }
        let m = split(p);
        let loss = lawmodels::capybara_loss(x[0].exp(), x[1].exp(), p - 1.0 - m, m, log2b, c);
        (loss, p, m)
    };
    // ln N spans [ln 1e3, ln(C/k)], ln D likewise; infeasible cells are skipped.
    let lo = 1e3f64.ln();
    let steps = 240;
    let h = (ck - lo) / steps as f64;
    let mut best = ([0.0, 0.0], f64::INFINITY);
    for i in 0..=steps {
        for j in 0..=steps {
            let x = [lo + i as f64 * h, lo + j as f64 * h];
            let (loss, _, _) = eval(x);
            if loss < best.1 {
                best = (x, loss);
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Numeric("no feasible (N, D) for this budget".into()));
    }
    let x = nelder_mead_2d(|x| eval(x).0, best.0, h, 1e-12, 10_000);
    let (loss, p, m) = eval(x);
    Ok(NumericOptimum {
        p,
        n: x[0].exp(),
        d: x[1].exp(),
        e: p - 1.0 - m,
        m,
        loss,
    })
}
