//! Synthetic run logs drawn from a known law.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::lawmodels::{self, LawConstants, RunRecord};

/// Full-factorial sweep over `N × D × E × M × log2B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub m: Vec<f64>,
    pub log2b: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n: vec![4.1e7, 8.5e7, 1.54e8, 6.79e8],
            d: vec![1e10, 2e10, 5e10, 1e11],
            e: vec![1.0, 2.0, 4.0, 8.0],
            m: vec![1.0, 3.0, 7.0],
            log2b: vec![4.0, 7.0, 9.0],
        }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<RunRecord> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &d in &self.d {
                for &e in &self.e {
                    for &m in &self.m {
                        for &b in &self.log2b {
                            out.push(RunRecord::new(n, d, e, m, b, 0.0));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Runs whose loss is `law(point)` plus Gaussian noise of width `sigma`.
pub fn generate_with(grid: &Grid, law: impl Fn(&RunRecord) -> f64, sigma: f64, seed: u64) -> Vec<RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    grid.points()
        .into_iter()
        .map(|mut r| {
            r.loss = law(&r);
            if sigma > 0.0 {
                r.loss += noise.sample(&mut rng);
            }
            r
        })
        .collect()
}

/// Runs drawn from the unified law.
pub fn generate(grid: &Grid, c: &LawConstants, sigma: f64, seed: u64) -> Vec<RunRecord> {
    generate_with(
        grid,
        |r| lawmodels::capybara_loss(r.n, r.d, r.e, r.m, r.log2b, c),
        sigma,
        seed,
    )
}
