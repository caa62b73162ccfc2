//! Acceptance criteria. Each test writes one `criterion N: PASS|FAIL` line to
//! stderr (bypassing libtest capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use fpscale::blockquant::{quantize_dequantize, ScalingStrategy, Tensor2D};
use fpscale::fitter::{compare_models, fit, FitProblem, LawModel};
use fpscale::fpformat::{enumerate_values, fp_max, quantize_scalar, FpFormat};
use fpscale::implications::oracle::p_opt_joint_numeric;
use fpscale::implications::{critical_data_size, optimal_layout_int, p_opt_joint, ComputeBudget};
use fpscale::lawmodels::{self, LawConstants, RunRecord};
use fpscale::qlinear::{qlinear_backward, qlinear_forward, QLinearConfig, Target, TargetSet};
use fpscale::synthetic::{self, Grid};
use fpscale::toy::{run_toy_training, ToyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const PRESET: LawConstants = LawConstants::capybara_paper();

fn report(id: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id}: {status} ({detail})");
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn criterion_1_critical_data_size() {
    let cases = [
        (FpFormat::E8M7, 1730e12, 0.03),
        (FpFormat::E4M3, 27e12, 0.05),
        (FpFormat::E2M1, 0.4e12, 0.15),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (fmt, want, tol) in cases {
        let t = Instant::now();
        let d = critical_data_size(
            1e9,
            fmt.exponent_bits() as f64,
            fmt.mantissa_bits() as f64,
            7.0,
            &PRESET,
        )
        .unwrap();
        let took = t.elapsed();
        pass &= rel(d, want) <= tol && took < Duration::from_millis(1);
        detail.push(format!("{fmt} {:.4}T in {took:?}", d / 1e12));
    }
    report(1, pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_2_optimal_layout() {
    let t = Instant::now();
    let got: Vec<_> = [4, 8, 16]
        .iter()
        .map(|&p| optimal_layout_int(p, &PRESET).unwrap())
        .collect();
    let took = t.elapsed();
    let pass = got == [(2, 1), (4, 3), (8, 7)] && took < Duration::from_millis(1);
    report(2, pass, &format!("{got:?} in {took:?}"));
    assert!(pass);
}

#[test]
fn criterion_3_compute_optimal_precision() {
    let t = Instant::now();
    let budgets: Vec<f64> = (0..=100).map(|i| 10f64.powf(21.0 + i as f64 / 10.0)).collect();
    let p: Vec<f64> = budgets
        .iter()
        .map(|&c| p_opt_joint(&ComputeBudget::new(c), 7.0, &PRESET).unwrap().p)
        .collect();
    let monotone = p.windows(2).all(|w| w[1] > w[0]);
    let in_range = p.iter().all(|v| (3.5..=8.5).contains(v));
    let mut worst: f64 = 0.0;
    for c in [1e22, 1e26, 1e30] {
        let budget = ComputeBudget::new(c);
        let closed = p_opt_joint(&budget, 7.0, &PRESET).unwrap().p;
        let numeric = p_opt_joint_numeric(&budget, 7.0, &PRESET).unwrap().p;
        worst = worst.max(rel(closed, numeric));
    }
    let took = t.elapsed();
    let pass = monotone && in_range && worst <= 0.02 && took < Duration::from_secs(10);
    report(
        3,
        pass,
        &format!(
            "P_opt {:.3}..{:.3}, monotone {monotone}, oracle worst rel {worst:.2e}, {took:?}",
            p[0],
            p[p.len() - 1]
        ),
    );
    assert!(pass);
}

/// Nearest value by scanning the enumeration; ties go to the even position
/// among the non-negative values.
fn brute_force(x: f64, positives: &[f64]) -> f64 {
    let a = x.abs();
    let mut best = 0;
    for (i, v) in positives.iter().enumerate() {
        let (dv, db) = ((v - a).abs(), (positives[best] - a).abs());
        if dv < db || (dv == db && i % 2 == 0 && best % 2 == 1) {
            best = i;
        }
    }
    positives[best].copysign(x) + 0.0
}

#[test]
fn criterion_4_quantizer_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut formats = 0;
    let mut mismatches = 0u64;
    for e in 1..=9u32 {
        for m in 0..=(9 - e) {
            let fmt = FpFormat::new(e, m).unwrap();
            formats += 1;
            let values = enumerate_values(fmt).unwrap();
            let positives: Vec<f64> = values.iter().copied().filter(|v| *v >= 0.0).collect();
            let max = *positives.last().unwrap();
            for s in 0..100_000 {
                let x = match s % 4 {
                    0 => rng.random_range(-1.25 * max..1.25 * max),
                    1 => {
                        let lo = (positives[1] / 8.0).ln();
                        let hi = (2.0 * max).ln();
                        let mag = rng.random_range(lo..hi).exp();
                        if rng.random_bool(0.5) { -mag } else { mag }
                    }
                    2 => {
                        let i = rng.random_range(0..positives.len() - 1);
                        let mid = 0.5 * (positives[i] + positives[i + 1]);
                        if rng.random_bool(0.5) { -mid } else { mid }
                    }
                    _ => values[rng.random_range(0..values.len())],
                };
                let got = quantize_scalar(x, fmt).unwrap();
                let want = brute_force(x, &positives);
                if got.to_bits() != want.to_bits() && !(got == 0.0 && want == 0.0) {
                    mismatches += 1;
                }
            }
        }
    }
    let e4m3 = *enumerate_values(FpFormat::E4M3).unwrap().last().unwrap();
    let e2m1 = *enumerate_values(FpFormat::E2M1).unwrap().last().unwrap();
    let took = t.elapsed();
    let pass = mismatches == 0
        && e4m3 == 480.0
        && e2m1 == 6.0
        && fp_max(FpFormat::E4M3) == 480.0
        && fp_max(FpFormat::E2M1) == 6.0
        && took < Duration::from_secs(30);
    report(
        4,
        pass,
        &format!("{formats} formats x 1e5 samples, {mismatches} mismatches, max E4M3 {e4m3} E2M1 {e2m1}, {took:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_block_scaling_contracts() {
    let t = Tensor2D::new(1, 3, vec![1.0, 2.0, 4.0]).unwrap();
    let q = quantize_dequantize(&t, FpFormat::E2M1, ScalingStrategy::BlockWise(3)).unwrap();
    let round_trip = q.dequantized == t;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f64> = (0..10_000)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            v * 10f64.powi(rng.random_range(-20..20))
        })
        .collect();
    let x = Tensor2D::new(100, 100, data).unwrap();
    let mut worst_ulps: f64 = 0.0;
    for fmt in [FpFormat::E2M1, FpFormat::E4M3, FpFormat::E1M0] {
        let q = quantize_dequantize(&x, fmt, ScalingStrategy::BlockWise(1)).unwrap();
        for (a, b) in x.data().iter().zip(q.dequantized.data()) {
            if *a != 0.0 {
                worst_ulps = worst_ulps.max(((a - b) / a).abs() / f64::EPSILON);
            }
        }
    }

    let mut exact = true;
    for _ in 0..1000 {
        let n = 10f64.powf(rng.random_range(6.0..12.0));
        let d = 10f64.powf(rng.random_range(9.0..14.0));
        let e = rng.random_range(1..9) as f64;
        let m = rng.random_range(0..8) as f64;
        exact &= lawmodels::rho(n, d, e, m, 0.0, &PRESET) == 0.0;
        exact &= lawmodels::capybara_loss(n, d, e, m, 0.0, &PRESET) == lawmodels::chinchilla_loss(n, d, &PRESET);
    }
    let pass = round_trip && worst_ulps <= 4.0 && exact;
    report(
        5,
        pass,
        &format!("E2M1 {{1,2,4}} exact {round_trip}, B=1 worst {worst_ulps:.2} ulp, log2B=0 reduction exact {exact}"),
    );
    assert!(pass);
}

fn heldout_points() -> Vec<RunRecord> {
    let grid = Grid {
        n: vec![6e7, 3e8],
        d: vec![1.5e10, 7e10],
        e: vec![1.0, 3.0, 5.0],
        m: vec![2.0, 4.0],
        log2b: vec![5.0, 8.0],
    };
    grid.points()
}

#[test]
fn criterion_6_fit_recovery() {
    let t = Instant::now();
    let grid = Grid::default();
    let clean = synthetic::generate(&grid, &PRESET, 0.0, 0);
    let r = fit(&FitProblem::new(LawModel::Capybara, clean).with_seed(1)).unwrap();
    let got = r.constants().unwrap();
    let worst_clean = got
        .to_array()
        .iter()
        .zip(PRESET.to_array())
        .map(|(g, w)| rel(*g, w))
        .fold(0.0, f64::max);

    let sigma = 0.002;
    let mut noisy_ok = true;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let data = synthetic::generate(&grid, &PRESET, sigma, 100 + seed);
        let r = fit(&FitProblem::new(LawModel::Capybara, data).with_seed(seed)).unwrap();
        let c = r.constants().unwrap();
        let mut noise = ChaCha8Rng::seed_from_u64(900 + seed);
        let held: Vec<f64> = heldout_points()
            .iter()
            .map(|p| {
                let z: f64 = noise.sample(StandardNormal);
                let observed = lawmodels::capybara_loss(p.n, p.d, p.e, p.m, p.log2b, &PRESET) + sigma * z;
                lawmodels::capybara_loss(p.n, p.d, p.e, p.m, p.log2b, &c) - observed
            })
            .collect();
        let rmse = (held.iter().map(|r| r * r).sum::<f64>() / held.len() as f64).sqrt();
        let (ea, eb) = (rel(c.alpha, PRESET.alpha), rel(c.beta, PRESET.beta));
        noisy_ok &= ea <= 0.10 && eb <= 0.10 && rmse <= 2.0 * sigma;
        lines.push(format!("seed {seed}: alpha {ea:.3} beta {eb:.3} rmse {rmse:.4}"));
    }
    let took = t.elapsed();
    let pass = worst_clean <= 0.01 && noisy_ok && took < Duration::from_secs(300);
    report(
        6,
        pass,
        &format!("noiseless worst rel {worst_clean:.2e}; {}; {took:?}", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_7_model_comparison() {
    let t = Instant::now();
    let low = Grid {
        e: vec![1.0, 2.0, 3.0, 4.0],
        m: vec![1.0, 2.0, 3.0],
        ..Grid::default()
    };
    let data = synthetic::generate(&low, &PRESET, 0.002, 7);
    let table = compare_models(&data, &[LawModel::Kumar, LawModel::Capybara], 7, 16).unwrap();
    let capybara_first = table[0].model == LawModel::Capybara;

    let chin_grid = Grid {
        n: vec![4.1e7, 8.5e7, 1.54e8, 3e8, 6.79e8, 1.2e9],
        d: vec![1e10, 2e10, 5e10, 1e11, 2e11, 5e11],
        e: vec![8.0],
        m: vec![7.0],
        log2b: vec![0.0],
    };
    let chin = synthetic::generate_with(
        &chin_grid,
        |r| lawmodels::chinchilla_loss(r.n, r.d, &PRESET),
        0.002,
        8,
    );
    let table2 = compare_models(&chin, &[LawModel::OpenAi, LawModel::Chinchilla], 8, 16).unwrap();
    let chinchilla_first = table2[0].model == LawModel::Chinchilla;
    let took = t.elapsed();
    let pass = capybara_first && chinchilla_first && took < Duration::from_secs(300);
    let show = |rows: &[fpscale::fitter::ComparisonRow]| {
        rows.iter()
            .map(|r| format!("{} {:.5}", r.model, r.heldout_rmse))
            .collect::<Vec<_>>()
            .join(" < ")
    };
    report(7, pass, &format!("[{}]; [{}]; {took:?}", show(&table), show(&table2)));
    assert!(pass);
}

/// Scales each group of `b` along rows by `fp_max / amax` and rounds to the
/// nearest enumerated value.
fn oracle_quantize(t: &Tensor2D, fmt: FpFormat, b: usize) -> Tensor2D {
    let positives: Vec<f64> = enumerate_values(fmt).unwrap().into_iter().filter(|v| *v >= 0.0).collect();
    let max = *positives.last().unwrap();
    let mut out = t.clone();
    for r in 0..t.rows() {
        for g in (0..t.cols()).step_by(b) {
            let block = &t.row(r)[g..g + b];
            let amax = block.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let s = if amax == 0.0 { 1.0 } else { max / amax };
            for (j, x) in block.iter().enumerate() {
                out.data_mut()[r * t.cols() + g + j] = brute_force(x * s, &positives) / s;
            }
        }
    }
    out
}

fn naive(a: &Tensor2D, b_t: &Tensor2D) -> Tensor2D {
    Tensor2D::from_fn(a.rows(), b_t.rows(), |i, j| {
        (0..a.cols()).map(|k| a.get(i, k) * b_t.get(j, k)).sum()
    })
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[test]
fn criterion_8_qlinear_properties() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (b, d_in, d_out, block) = (16, 32, 8, 8);
    let x = gaussian(b, d_in, &mut rng);
    let w = gaussian(d_out, d_in, &mut rng);
    let dy = gaussian(b, d_out, &mut rng);
    let fmt = FpFormat::E2M1;
    let base = QLinearConfig::new(fmt, ScalingStrategy::BlockWise(block), d_in, d_out).unwrap();

    let mut exact = true;
    for target in Target::ALL {
        let mut set = TargetSet::empty();
        set.insert(target);
        let cfg = base.with_targets(set);
        let q = |m: &Tensor2D, on: Target| if on == target { oracle_quantize(m, fmt, block) } else { m.clone() };
        let y = qlinear_forward(&x, &w, &cfg).unwrap();
        let (dx, dw) = qlinear_backward(&dy, &x, &w, &cfg).unwrap();
        let want_y = naive(&q(&x, Target::P1), &q(&w, Target::P2));
        let want_dx = naive(&q(&dy, Target::P3), &q(&w.transpose(), Target::P4));
        let want_dw = naive(&q(&dy.transpose(), Target::P5), &q(&x.transpose(), Target::P6));
        let close = |a: &Tensor2D, b: &Tensor2D| {
            a.data().iter().zip(b.data()).all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + v.abs()))
        };
        exact &= close(&y, &want_y) && close(&dx, &want_dx) && close(&dw, &want_dw);
    }

    // Gradient check with no quantization: L = Σ G ∘ Y.
    let cfg = base.with_targets(TargetSet::empty());
    let g = gaussian(b, d_out, &mut rng);
    let (dx, dw) = qlinear_backward(&g, &x, &w, &cfg).unwrap();
    let loss = |x: &Tensor2D, w: &Tensor2D| -> f64 {
        let y = qlinear_forward(x, w, &cfg).unwrap();
        y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst_grad: f64 = 0.0;
    let h = 1e-6;
    for idx in 0..x.data().len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[idx] += h;
        xm.data_mut()[idx] -= h;
        let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
        worst_grad = worst_grad.max((fd - dx.data()[idx]).abs() / dx.data()[idx].abs().max(1e-3));
    }
    for idx in 0..w.data().len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.data_mut()[idx] += h;
        wm.data_mut()[idx] -= h;
        let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
        worst_grad = worst_grad.max((fd - dw.data()[idx]).abs() / dw.data()[idx].abs().max(1e-3));
    }

    let mut precision_wins = 0;
    let mut target_wins = 0;
    for seed in 0..10u64 {
        let gap = |fmt: FpFormat, targets: TargetSet| {
            let cfg = ToyConfig {
                fmt,
                targets,
                ..ToyConfig::default()
            };
            run_toy_training(seed, &cfg).unwrap().gap
        };
        let default = TargetSet::default_targets();
        if gap(FpFormat::E8M7, default) <= gap(FpFormat::E1M1, default) {
            precision_wins += 1;
        }
        if gap(FpFormat::E2M1, TargetSet::all()) >= gap(FpFormat::E2M1, default) {
            target_wins += 1;
        }
    }
    let took = t.elapsed();
    let pass = exact
        && worst_grad <= 1e-4
        && precision_wins >= 7
        && target_wins >= 7
        && took < Duration::from_secs(600);
    report(
        8,
        pass,
        &format!(
            "operand oracle exact {exact}, grad worst rel {worst_grad:.2e}, E8M7<=E1M1 on {precision_wins}/10, all>=P2P4P6 on {target_wins}/10, {took:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_out_of_scope_items_are_substituted() {
    // The LLM training campaign, its percentage gaps and the large-model
    // validation fits need GPU-scale training and are not reproduced. The
    // substitutes are the property suites (4 to 8) and closed forms (1 to 3).
    let substitutes = [
        "criterion_1_critical_data_size",
        "criterion_2_optimal_layout",
        "criterion_3_compute_optimal_precision",
        "criterion_4_quantizer_oracle",
        "criterion_5_block_scaling_contracts",
        "criterion_6_fit_recovery",
        "criterion_7_model_comparison",
        "criterion_8_qlinear_properties",
    ];
    report(
        9,
        true,
        &format!(
            "LLM-scale losses, percentage gaps and large-model validation not reproduced; substituted by {} suites",
            substitutes.len()
        ),
    );
}
