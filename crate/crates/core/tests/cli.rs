use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fpscale::fitter::{FitResult, LawModel};
use fpscale::lawmodels::{capybara_loss, chinchilla_loss, LawConstants};
use fpscale::synthetic::{generate, Grid};
use fpscale::tensor_io::{read_tensor, write_tensor};
use fpscale::Tensor2D;
use fpscale::{blockquant, runlog, FpFormat, ScalingStrategy};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fpscale"));
    c.env_remove("FPSCALE_PRESET_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small_grid() -> Grid {
    Grid {
        n: vec![4.1e7, 1.54e8, 6.79e8],
        d: vec![1e10, 5e10, 1e11],
        e: vec![1.0, 2.0, 4.0],
        m: vec![1.0, 3.0],
        log2b: vec![0.0, 4.0, 7.0],
    }
}

fn write_log(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("runs.csv");
    let data = generate(&small_grid(), &LawConstants::capybara_paper(), 0.0, 1);
    runlog::write_runlog(&path, &data).unwrap();
    path
}

fn last_loss(o: &Output) -> f64 {
    let text = stdout(o);
    let line = text.lines().last().unwrap();
    line.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn predict_matches_library_bitwise() {
    let c = LawConstants::capybara_paper();
    let o = run(&["predict", "--point", "1e9,1e11,4,3,7"]);
    assert!(o.status.success());
    assert_eq!(last_loss(&o).to_bits(), capybara_loss(1e9, 1e11, 4.0, 3.0, 7.0, &c).to_bits());
}

#[test]
fn unit_block_equals_chinchilla() {
    let c = LawConstants::capybara_paper();
    let a = last_loss(&run(&["predict", "--point", "1e9,1e11,4,3,0"]));
    let b = last_loss(&run(&["predict", "--model", "chinchilla", "--point", "1e9,1e11,4,3,0"]));
    let want = chinchilla_loss(1e9, 1e11, &c);
    assert!((a - want).abs() <= 1e-12 * want);
    assert_eq!(b.to_bits(), want.to_bits());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["predict", "--point", "1,2"]).status.code(), Some(2));
    assert_eq!(
        run(&["predict", "--preset", "capybara-paper", "--constants", "x", "--point", "1,1,1,1,1"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["enumerate", "--fmt", "E9M9"]).status.code(), Some(2));
    assert_eq!(run(&["enumerate", "--fmt", "E11M0"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_runlog_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "N,D,E,M,log2B,strategy,loss\n1e9,1e11,4,oops,7,block,3.1\n").unwrap();
    let o = run(&["fit", "--runlog", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn underdetermined_fit_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("few.csv");
    fs::write(&p, "N,D,E,M,log2B,strategy,loss\n1e9,1e11,4,3,7,block,3.1\n2e9,1e11,4,3,7,block,3.0\n").unwrap();
    let o = run(&["fit", "--runlog", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn fit_report_feeds_predict() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_log(dir.path());
    let report = dir.path().join("fit.json");
    let o = run(&[
        "fit", "--runlog", log.to_str().unwrap(), "--model", "chinchilla", "--starts", "4", "--seed", "3",
        "--out", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let result: FitResult = serde_json::from_value(json["result"].clone()).unwrap();
    assert_eq!(result.model, LawModel::Chinchilla);
    let o = run(&["predict", "--fit-report", report.to_str().unwrap(), "--point", "1e9,1e11,4,3,7"]);
    assert!(o.status.success());
    let r = fpscale::RunRecord::new(1e9, 1e11, 4.0, 3.0, 7.0, 1.0);
    assert_eq!(last_loss(&o).to_bits(), result.predict(&r).to_bits());
}

#[test]
fn batch_predict_reads_runlog_columns() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_log(dir.path());
    let o = run(&["predict", "--batch", log.to_str().unwrap()]);
    assert!(o.status.success());
    let data = runlog::read_runlog(&log, None).unwrap();
    let lines: Vec<String> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert_eq!(lines.len(), data.len());
    for (line, r) in lines.iter().zip(&data) {
        let got: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(got.to_bits(), r.loss.to_bits());
    }
}

#[test]
fn preset_dir_overrides_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = LawConstants::capybara_paper();
    c.epsilon = 2.0;
    fs::write(dir.path().join("mine.txt"), c.to_preset_text()).unwrap();
    let o = bin()
        .env("FPSCALE_PRESET_DIR", dir.path())
        .args(["predict", "--preset", "mine", "--point", "1e9,1e11,4,3,7"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(last_loss(&o).to_bits(), capybara_loss(1e9, 1e11, 4.0, 3.0, 7.0, &c).to_bits());
    assert_eq!(run(&["predict", "--preset", "mine", "--point", "1e9,1e11,4,3,7"]).status.code(), Some(2));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"implications": {"critical-data": {"n": [1e9], "fmt": ["E4M3"], "csv": true}}}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "implications", "critical-data"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("N,format,log2B,D_crit\n"), "{text}");
    let o = run(&["--config", cfg.to_str().unwrap(), "implications", "critical-data", "--fmt", "E8M7"]);
    assert!(stdout(&o).contains(",E8M7,"));
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "enumerate", "--fmt", "E2M1"]).status.code(), Some(3));
}

#[test]
fn critical_data_prints_tera_suffix() {
    let o = run(&["implications", "critical-data", "--n", "1e9", "--fmt", "E8M7,E2M1"]);
    let text = stdout(&o);
    assert!(text.contains("1729.5453T"), "{text}");
    assert!(text.contains("392845235954"), "{text}");
}

#[test]
fn quantize_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor2D::new(2, 64, (0..128).map(|i| ((i as f64) * 0.37).sin() * 3.0).collect()).unwrap();
    let input = dir.path().join("x.txt");
    let output = dir.path().join("y.txt");
    let output_bin = dir.path().join("y.bin");
    let summary = dir.path().join("s.json");
    write_tensor(&input, &t).unwrap();
    let o = run(&[
        "quantize", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap(), "--fmt", "e4m3",
        "--strategy", "block:32", "--summary", summary.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = read_tensor(&output).unwrap();
    let fmt: FpFormat = "E4M3".parse().unwrap();
    let want = blockquant::quantize_dequantize(&t, fmt, ScalingStrategy::BlockWise(32)).unwrap();
    assert_eq!(got, want.dequantized);
    let o = run(&[
        "quantize", "--input", input.to_str().unwrap(), "--output", output_bin.to_str().unwrap(), "--fmt", "E4M3",
        "--strategy", "block", "--block", "32",
    ]);
    assert!(o.status.success());
    let got = read_tensor(&output_bin).unwrap();
    for (a, b) in got.data().iter().zip(want.dequantized.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s["scale_count"], 4);
    assert!(s["sqnr_db"].as_f64().unwrap() > 20.0);
}

#[test]
fn simulate_emits_trajectory() {
    let o = run(&["simulate", "--steps", "20", "--arch", "8,16,8", "--batch", "16", "--fmt", "E4M3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,loss_quant,loss_baseline"));
    assert_eq!(lines.count(), 20);
}

#[test]
fn curves_json_and_csv_agree() {
    let csv = stdout(&run(&["curves", "--kind", "popt-vs-C", "--points", "5"]));
    let json = stdout(&run(&["curves", "--kind", "popt-vs-C", "--points", "5", "--output-format", "json"]));
    let curve = fpscale::curves::parse_curve_csv(&csv).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let ys: Vec<f64> = v["series"][0]["points"].as_array().unwrap().iter().map(|p| p[1].as_f64().unwrap()).collect();
    let from_csv: Vec<f64> = curve.iter().map(|p| p.2).collect();
    assert_eq!(ys, from_csv);
}
