//! Compiles a small C program against `include/regsel.h` and the built
//! shared library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "regsel.h"

int main(void) {
    double x[8] = {-2.0, 0.0, -1.5, 0.0, 2.0, 0.0, 1.5, 0.0};
    size_t y[4] = {0, 0, 1, 1};
    RegselDataset *ds = NULL;
    if (regsel_dataset_from_arrays(x, 4, 2, y, 2, &ds) != REGSEL_STATUS_OK) return 1;
    RegselModel *model = NULL;
    if (regsel_logreg_fit(ds, REGSEL_PENALTY_L2, 10.0, 200, 1e-6, 1, &model) != REGSEL_STATUS_OK) return 2;
    size_t labels[4];
    if (regsel_model_predict(model, x, 4, 2, labels) != REGSEL_STATUS_OK) return 3;
    double acc = 0.0;
    if (regsel_accuracy(y, labels, 4, &acc) != REGSEL_STATUS_OK) return 4;
    if (regsel_model_predict(NULL, x, 4, 2, labels) != REGSEL_STATUS_NULL_POINTER) return 5;
    printf("%s %.2f %s\n", regsel_version(), acc, regsel_last_error_message());
    regsel_model_free(model);
    regsel_dataset_free(ds);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    // tests run from <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let lib_dir: PathBuf = exe.parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libregsel_ffi.so").is_file() {
        eprintln!(
            "shared library not found in {}; skipping",
            lib_dir.display()
        );
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lregsel_ffi")
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.starts_with(&format!("{} 1.00 ", env!("CARGO_PKG_VERSION"))),
        "{stdout}"
    );
    assert!(stdout.contains("model"), "{stdout}");
}
