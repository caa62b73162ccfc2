use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "fpscale.h"

int main(void) {
    FpsFormat *f = NULL;
    FpsConstants *c = NULL;
    double v = 0.0, p = 0.0, n = 0.0, d = 0.0;
    uint32_t e = 0, m = 0;
    if (fps_format_parse("E4M3", &f) != FPS_STATUS_OK) return 1;
    if (fps_format_fp_max(f, &v) != FPS_STATUS_OK) return 2;
    printf("%.17g\n", v);
    fps_format_free(f);
    if (fps_constants_preset("capybara-paper", &c) != FPS_STATUS_OK) return 3;
    if (fps_capybara_loss(c, 1e9, 1e11, 4, 3, 7, &v) != FPS_STATUS_OK) return 4;
    printf("%.17g\n", v);
    if (fps_optimal_layout(c, 8, &e, &m) != FPS_STATUS_OK) return 5;
    printf("E%uM%u\n", e, m);
    if (fps_p_opt_joint(c, 1e24, 0.375, 7, &p, &n, &d) != FPS_STATUS_OK) return 6;
    printf("%.17g\n", p);
    if (fps_format_parse("bogus", &f) != FPS_STATUS_INVALID_ARGUMENT) return 7;
    char buf[128];
    if (fps_last_error(buf, sizeof buf) <= 1) return 8;
    fps_constants_free(c);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include = manifest.join("include");
    assert!(include.join("fpscale.h").is_file());
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib_dir = if deps.join("libfpscale_ffi.so").exists() { deps.clone() } else { deps.parent().unwrap().to_path_buf() };
    assert!(lib_dir.join("libfpscale_ffi.so").exists(), "cdylib not found near {}", deps.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lfpscale_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let c = fpscale::LawConstants::capybara_paper();
    assert_eq!(lines[0].parse::<f64>().unwrap(), 480.0);
    assert_eq!(
        lines[1].parse::<f64>().unwrap(),
        fpscale::lawmodels::capybara_loss(1e9, 1e11, 4.0, 3.0, 7.0, &c)
    );
    let (e, m) = fpscale::implications::optimal_layout_int(8, &c).unwrap();
    assert_eq!(lines[2], format!("E{e}M{m}"));
    let o = fpscale::implications::p_opt_joint(&fpscale::implications::ComputeBudget::new(1e24), 7.0, &c).unwrap();
    assert_eq!(lines[3].parse::<f64>().unwrap(), o.p);
}
