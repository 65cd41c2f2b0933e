//! End-to-end runs of the `stratwave` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stratwave::io::{read_branch, read_field, BRANCH_COLUMNS};
use stratwave::linear::{bifurcation_points, Sign};
use stratwave::residual::PhysicalParams;

fn stratwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratwave"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Vec<PathBuf> {
    let out = stratwave(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(PathBuf::from)
        .collect()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Data lines of a CSV file split into fields, header row first.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = rows[0].iter().position(|c| c == name).unwrap();
    rows[1..].iter().map(|r| r[i].parse().unwrap()).collect()
}

const SMALL: &str = "N = 16\nM = 64\nL = 17\nK = 4\n";

#[test]
fn dispersion_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "n_max = 3\n");
    let files = run_ok(&["dispersion", "--config", &cfg, "--out", out]);
    let r = rows(&files[0]);
    assert_eq!(r.len(), 4);
    assert!(column(&r, "lambda_plus").iter().all(|&l| l > 0.0));
    assert!(column(&r, "lambda_minus").iter().all(|&l| l < 0.0));

    let cfg = write_config(dir.path(), "s.toml", "n_max = 1\nsigma = 0.0\n");
    let files = run_ok(&["dispersion", "--config", &cfg, "--out", out]);
    let l = column(&rows(&files[0]), "lambda_plus")[0];
    assert!((l - 2.731_963_163_8).abs() < 1e-9, "{l}");
}

#[test]
fn resonance_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "n_max = 4\n");
    let files = run_ok(&["resonance", "--config", &cfg, "--out", out]);
    let r = rows(&files[0]);
    assert_eq!(r.len(), 1 + 12);
    let p = PhysicalParams::default();
    let parse = |row: &Vec<String>, k: usize| row[k].parse::<f64>().unwrap();
    for row in &r[1..] {
        let (n, m): (usize, usize) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        assert!(parse(row, 2) > 0.0);
        let swapped = r[1..].iter().find(|s| s[0] == row[1] && s[1] == row[0]).unwrap();
        assert_eq!(row[2], swapped[2]);
        let (beta, lambda) = (parse(row, 3), parse(row, 5));
        let pair = Sign::of(lambda);
        for k in [n, m] {
            let root = bifurcation_points(k, beta, &p).lambda(pair);
            assert!((root - lambda).abs() < 1e-9 * lambda.abs().max(1.0));
        }
    }
}

#[test]
fn trace_branch_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plus");
    let files = run_ok(&["trace", "--out", out.to_str().unwrap()]);
    assert_eq!(files, [out.join("branch.csv"), out.join("trivial.csv")]);

    let table = read_branch(&files[0]).unwrap();
    assert_eq!(table.rows.len(), 21);
    assert_eq!(table.modes, 64);
    assert!(table.rows.iter().all(|r| r.residual_inf < 1e-11));
    assert!(table.termination.as_deref().unwrap().ends_with("last_index=20"));
    let head = &rows(&files[0])[0];
    assert_eq!(head[..BRANCH_COLUMNS.len()], BRANCH_COLUMNS);
    assert_eq!(head.last().unwrap(), "a_64");

    // The laminar companion file changes label once, at λ*.
    let laminar = read_branch(&files[1]).unwrap();
    let labels: Vec<&str> = laminar
        .rows
        .iter()
        .map(|r| r.stability.as_deref().unwrap())
        .collect();
    let flips = labels.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(flips, 1);
    assert_eq!(labels[0], "unstable");
    assert_eq!(labels[20], "stable-formally");

    // Reflected amplitude gives the same speeds.
    let cfg = write_config(dir.path(), "neg.toml", "s0 = -0.001\n");
    let mirror = dir.path().join("minus");
    let files = run_ok(&["trace", "--config", &cfg, "--out", mirror.to_str().unwrap()]);
    let flipped = read_branch(&files[0]).unwrap();
    for (a, b) in table.rows.iter().zip(&flipped.rows) {
        assert!((a.lambda - b.lambda).abs() < 1e-9);
        assert!((a.s + b.s).abs() < 1e-15);
    }
}

#[test]
fn two_mode_branch_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "N = 32\nM = 128\nK = 3\n");
    let files = run_ok(&["two-mode", "--config", &cfg, "--out", out]);
    let table = read_branch(&files[0]).unwrap();
    let first = &table.rows[0];
    assert!((first.coeffs[0] / first.coeffs[1] - 1.0).abs() < 5e-3);
    assert!(table.rows.iter().all(|r| r.residual_inf < 1e-11));

    let cfg = write_config(dir.path(), "zero.toml", "a = 0.0\nb = 1.0\n");
    assert_eq!(stratwave(&["two-mode", "--config", &cfg, "--out", out]).status.code(), Some(2));
}

#[test]
fn flow_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let cfg = write_config(base, "c.toml", &format!("{SMALL}beta = 10.0\n"));
    let branch_dir = base.join("branch");
    let files = run_ok(&["trace", "--config", &cfg, "--out", branch_dir.to_str().unwrap()]);

    // Laminar state at λ*: stagnation line at Y = h - λ/β.
    let laminar_out = base.join("laminar");
    let trivial = files[1].to_str().unwrap();
    let written = run_ok(&[
        "flow", "--config", &cfg, "--out", laminar_out.to_str().unwrap(), "--branch", trivial,
        "--index", "10",
    ]);
    assert_eq!(written.len(), 7);
    let l_star = bifurcation_points(1, 10.0, &PhysicalParams::default()).lambda_plus;
    let ys = column(&rows(&laminar_out.join("stagnation.csv")), "Y");
    assert_eq!(ys.len(), 64);
    assert!(ys.iter().all(|y| (y - (1.0 - l_star / 10.0)).abs() < 1e-8));
    assert!((ys[0] - 0.1497).abs() < 1e-4);

    // Wave state: field headers and the surface trace of ψ.
    let wave_out = base.join("wave");
    let branch = files[0].to_str().unwrap();
    run_ok(&[
        "flow", "--config", &cfg, "--out", wave_out.to_str().unwrap(), "--branch", branch,
        "--index", "4",
    ]);
    let psi = read_field(&wave_out.join("psi.csv")).unwrap();
    assert_eq!((psi.samples(), psi.levels(), psi.depth()), (64, 17, 1.0));
    assert!(psi.row(16).iter().all(|v| v.abs() < 1e-10));
    for name in ["U", "V", "psi_X", "psi_Y"] {
        let f = read_field(&wave_out.join(format!("{name}.csv"))).unwrap();
        assert_eq!((f.samples(), f.levels()), (64, 17));
    }
    let kinds = rows(&wave_out.join("stagnation.csv"));
    assert!(kinds[1..].iter().any(|r| r[6] == "saddle"));

    // A=0, β=0 laminar flow has no stagnation points.
    let still = write_config(base, "still.toml", SMALL);
    let still_dir = base.join("still");
    let files = run_ok(&["trace", "--config", &still, "--out", still_dir.to_str().unwrap()]);
    run_ok(&[
        "flow", "--config", &still, "--out", still_dir.to_str().unwrap(), "--branch",
        files[1].to_str().unwrap(), "--index", "10",
    ]);
    assert_eq!(rows(&still_dir.join("stagnation.csv")).len(), 1);

    // Index outside the branch.
    let code = stratwave(&[
        "flow", "--config", &cfg, "--out", wave_out.to_str().unwrap(), "--branch", branch,
        "--index", "99",
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
}

#[test]
fn outputs_are_deterministic_and_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write_config(dir.path(), "c.toml", &format!("{SMALL}out = {:?}\n", out.to_str().unwrap()));
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let mut files = run_ok(&["trace", "--config", &cfg]);
        files.extend(run_ok(&["two-mode", "--config", &cfg]));
        files.extend(run_ok(&["dispersion", "--config", &cfg]));
        files.extend(run_ok(&["resonance", "--config", &cfg]));
        files.extend(run_ok(&[
            "flow", "--config", &cfg, "--branch", out.join("branch.csv").to_str().unwrap(),
            "--index", "2",
        ]));
        snapshots.push(
            files
                .iter()
                .map(|f| (f.clone(), fs::read(f).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(snapshots[0].len(), 12);
    assert_eq!(snapshots[0], snapshots[1]);
    let version = format!("# stratwave {}\n", env!("CARGO_PKG_VERSION"));
    for (path, bytes) in &snapshots[0] {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.starts_with(&version), "{}", path.display());
        for key in ["g", "A", "B", "sigma", "h", "N", "M", "L", "newton_tol", "kernel_tol", "s0"] {
            assert!(
                text.contains(&format!("# config: {key} = ")),
                "{} lacks {key}",
                path.display()
            );
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = |args: &[&str]| stratwave(args).status.code();

    let typo = write_config(dir.path(), "typo.toml", "newton_tolerance = 1e-9\n");
    assert_eq!(code(&["dispersion", "--config", &typo, "--out", out]), Some(2));
    let dry = write_config(dir.path(), "dry.toml", "sigma = 0.0\n");
    let res = stratwave(&["resonance", "--config", &dry, "--out", out]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("sigma"));
    let missing = dir.path().join("absent.toml");
    assert_eq!(
        code(&["dispersion", "--config", missing.to_str().unwrap(), "--out", out]),
        Some(4)
    );
    let starved = write_config(dir.path(), "starved.toml", &format!("{SMALL}newton_max_iter = 0\n"));
    assert_eq!(code(&["trace", "--config", &starved, "--out", out]), Some(3));
    assert_eq!(code(&["unknown-command"]), Some(2));

    let blocked = dir.path().join("file");
    fs::write(&blocked, "").unwrap();
    let inside = blocked.join("sub");
    assert_eq!(code(&["dispersion", "--out", inside.to_str().unwrap()]), Some(4));
}

#[test]
fn direction_is_normalised_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{SMALL}a = 0.6\nb = 0.8000004\n"));
    let res = stratwave(&["dispersion", "--config", &cfg, "--out", out]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning: normalising"));
    let bad = write_config(dir.path(), "bad.toml", "a = 0.6\nb = 0.9\n");
    assert_eq!(
        stratwave(&["dispersion", "--config", &bad, "--out", out]).status.code(),
        Some(2)
    );
}
