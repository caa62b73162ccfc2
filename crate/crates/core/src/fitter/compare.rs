//! Ranking candidate laws by leave-one-N-out prediction error.

use serde::{Deserialize, Serialize};

use super::{fit, rmse, FitProblem, FitResult, LawModel};
use crate::error::{Error, Result};
use crate::lawmodels::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: LawModel,
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    pub rmse: f64,
    pub r2: f64,
    pub heldout_rmse: f64,
    pub rank: usize,
}

/// Fits every candidate on the full data and on each leave-one-N-out split,
/// then sorts by held-out RMSE (best first).
pub fn compare_models(
    data: &[RunRecord],
    candidates: &[LawModel],
    seed: u64,
    starts: usize,
) -> Result<Vec<ComparisonRow>> {
    if candidates.len() < 2 {
        return Err(Error::Config("model comparison needs at least 2 candidates".into()));
    }
    let mut ns: Vec<f64> = data.iter().map(|r| r.n).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 2 {
        return Err(Error::InsufficientSpan(
            "leave-one-N-out needs at least 2 distinct N values".into(),
        ));
    }
    let problem = |model, rows: Vec<RunRecord>| {
        FitProblem::new(model, rows).with_seed(seed).with_starts(starts)
    };
    let mut rows = Vec::with_capacity(candidates.len());
    for &model in candidates {
        let full: FitResult = fit(&problem(model, data.to_vec()))?;
        let mut heldout = Vec::with_capacity(data.len());
        for &n in &ns {
            let train: Vec<_> = data.iter().copied().filter(|r| r.n != n).collect();
            let held = fit(&problem(model, train))?;
            heldout.extend(
                data.iter()
                    .filter(|r| r.n == n)
                    .map(|r| held.predict(r) - r.loss),
            );
        }
        rows.push(ComparisonRow {
            model,
            param_names: full.param_names,
            params: full.params,
            rmse: full.rmse,
            r2: full.r2,
            heldout_rmse: rmse(&heldout),
            rank: 0,
        });
    }
    rows.sort_by(|a, b| a.heldout_rmse.total_cmp(&b.heldout_rmse));
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_is_rejected() {
        let r = RunRecord::new(1e8, 1e10, 4.0, 3.0, 7.0, 3.0);
        assert!(matches!(
            compare_models(&[r], &[LawModel::Chinchilla], 0, 4),
            Err(Error::Config(_))
        ));
    }
}
