//! Command-line driver: one function per subcommand, each writing its
//! files under the configured output directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::continuation::{
    continue_branch, detect_bifurcations, switch_branch, track_eigenvalue, trivial_branch,
    two_mode_branch, BranchKind, ContinuationOptions, MIN_STEP, PINNED_STEPS,
};
use crate::error::{Error, Result};
use crate::flow::{critical_layer, find_stagnation, FlowModel};
use crate::io::{
    fmt_f64, format_branch, format_critical_layers, format_field, format_stagnation, header,
    read_branch, table, write_file, RunConfig,
};
use crate::linear::{
    bifurcation_points, collided_lambda, lambda_second_derivative, resonance_beta, t_n,
    transversality, Sign,
};
use crate::spectral::SpectralGrid;

/// Samples on each side of `λ*` in the laminar companion file of `trace`.
const TRIVIAL_HALF_WIDTH: usize = 10;
const TRIVIAL_SPACING: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "stratwave", version, about = "Stratified capillary-gravity wave branches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bifurcation speeds, transversality and curvature for n = 1..n_max.
    Dispersion(CommonArgs),
    /// Resonant β values and collided speeds for all mode pairs up to n_max.
    Resonance(CommonArgs),
    /// One-mode branch from λ*_{n,sign}, plus the laminar branch around it.
    Trace(CommonArgs),
    /// Two-mode branch from the double point of modes n and m.
    TwoMode(CommonArgs),
    /// Flow fields, stagnation points and critical layers of a branch point.
    Flow(FlowArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `out` in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Branch file written by `trace` or `two-mode`.
    #[arg(long)]
    pub branch: PathBuf,
    /// Value of the `index` column to reconstruct.
    #[arg(long)]
    pub index: usize,
}

impl CommonArgs {
    /// The resolved configuration and any warnings raised while loading it.
    pub fn config(&self) -> Result<(RunConfig, Vec<String>)> {
        let (mut cfg, warnings) = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default().resolve()?,
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok((cfg, warnings))
    }
}

/// Runs a parsed command line and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let common = match &cli.command {
        Command::Dispersion(c) | Command::Resonance(c) | Command::Trace(c) | Command::TwoMode(c) => c,
        Command::Flow(f) => &f.common,
    };
    let (cfg, warnings) = common.config()?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    match &cli.command {
        Command::Dispersion(_) => cmd_dispersion(&cfg).map(|p| vec![p]),
        Command::Resonance(_) => cmd_resonance(&cfg).map(|p| vec![p]),
        Command::Trace(_) => cmd_trace(&cfg),
        Command::TwoMode(_) => cmd_two_mode(&cfg).map(|p| vec![p]),
        Command::Flow(f) => cmd_flow(&cfg, &f.branch, f.index),
    }
}

fn emit(cfg: &RunConfig, name: &str, contents: &str) -> Result<PathBuf> {
    let path = cfg.out.join(name);
    write_file(&path, contents)?;
    Ok(path)
}

pub const DISPERSION_COLUMNS: [&str; 8] = [
    "n",
    "T_n",
    "lambda_plus",
    "lambda_minus",
    "kappa_prime_plus",
    "kappa_prime_minus",
    "lambda_pp_plus",
    "lambda_pp_minus",
];

pub fn cmd_dispersion(cfg: &RunConfig) -> Result<PathBuf> {
    let p = cfg.physical();
    let rows = (1..=cfg.n_max).map(|n| {
        let pt = bifurcation_points(n, cfg.beta, &p);
        vec![
            n.to_string(),
            fmt_f64(t_n(n, p.depth)),
            fmt_f64(pt.lambda_plus),
            fmt_f64(pt.lambda_minus),
            fmt_f64(transversality(n, Sign::Plus, cfg.beta, &p)),
            fmt_f64(transversality(n, Sign::Minus, cfg.beta, &p)),
            fmt_f64(lambda_second_derivative(n, Sign::Plus, cfg.beta, &p)),
            fmt_f64(lambda_second_derivative(n, Sign::Minus, cfg.beta, &p)),
        ]
    });
    let text = header("dispersion", cfg, &[]) + &table(&DISPERSION_COLUMNS, rows);
    emit(cfg, "dispersion.csv", &text)
}

pub const RESONANCE_COLUMNS: [&str; 7] = [
    "n",
    "m",
    "beta_nm",
    "beta_star_plus",
    "beta_star_minus",
    "lambda_plus",
    "lambda_minus",
];

fn require_surface_tension(cfg: &RunConfig) -> Result<()> {
    if cfg.sigma > 0.0 {
        return Ok(());
    }
    Err(Error::Config(format!(
        "sigma = {} but beta_nm = (c_n T_n - c_m T_m)^2 / (sigma T_n T_m (T_n - T_m)(m^2 - n^2)) \
         divides by sigma; resonance needs sigma > 0",
        cfg.sigma
    )))
}

/// Rows for every ordered pair `n ≠ m` up to `n_max`; `lambda_±` is the
/// collided speed at `β*_±`.
pub fn cmd_resonance(cfg: &RunConfig) -> Result<PathBuf> {
    require_surface_tension(cfg)?;
    let p = cfg.physical();
    let mut rows = Vec::new();
    for n in 1..=cfg.n_max {
        for m in (1..=cfg.n_max).filter(|&m| m != n) {
            let r = resonance_beta(n, m, &p)?;
            rows.push(vec![
                n.to_string(),
                m.to_string(),
                fmt_f64(r.beta_nm),
                fmt_f64(r.beta_star_plus),
                fmt_f64(r.beta_star_minus),
                fmt_f64(collided_lambda(n, m, r.beta_star_plus, &p)),
                fmt_f64(collided_lambda(n, m, r.beta_star_minus, &p)),
            ]);
        }
    }
    let text = header("resonance", cfg, &[]) + &table(&RESONANCE_COLUMNS, rows);
    emit(cfg, "resonance.csv", &text)
}

fn continuation_options(cfg: &RunConfig) -> ContinuationOptions {
    ContinuationOptions {
        // Steps move away from the laminar state on the side chosen by s0.
        ds: cfg.ds.abs() * cfg.s0().signum(),
        steps: cfg.steps,
        pinned_steps: PINNED_STEPS,
        min_step: MIN_STEP,
        solver: cfg.solver(),
    }
}

/// Writes `branch.csv` (the nontrivial branch) and `trivial.csv` (laminar
/// states spaced `1e-3·|λ*|` around `λ*`).
pub fn cmd_trace(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.physical();
    let grid = cfg.grid()?;
    if cfg.n > grid.modes() {
        return Err(Error::Config(format!(
            "mode n = {} exceeds truncation N = {}",
            cfg.n,
            grid.modes()
        )));
    }
    let found = detect_bifurcations(cfg.n, cfg.beta, (cfg.lambda_min, cfg.lambda_max), &p)?;
    let point = found
        .iter()
        .find(|b| b.n == cfg.n && b.sign == cfg.sign)
        .ok_or_else(|| {
            Error::Config(format!(
                "no bifurcation for n = {}, sign = {} in [{}, {}]",
                cfg.n, cfg.sign, cfg.lambda_min, cfg.lambda_max
            ))
        })?;

    let start = switch_branch(&grid, cfg.n, cfg.sign, cfg.beta, cfg.s0(), &p, &cfg.solver())?;
    let kind = BranchKind::OneMode {
        n: cfg.n,
        sign: cfg.sign,
    };
    let branch = continue_branch(&grid, &start, kind, &p, &continuation_options(cfg))?;
    let branch = track_eigenvalue(&grid, branch, &p)?;
    let branch_path = emit(cfg, "branch.csv", &format_branch("trace", cfg, &branch))?;

    let spacing = TRIVIAL_SPACING * point.lambda.abs();
    let lambdas: Vec<f64> = (0..=2 * TRIVIAL_HALF_WIDTH)
        .map(|i| point.lambda + (i as f64 - TRIVIAL_HALF_WIDTH as f64) * spacing)
        .collect();
    let laminar = trivial_branch(&grid, cfg.n, cfg.sign, cfg.beta, &lambdas, &p)?;
    let trivial_path = emit(cfg, "trivial.csv", &format_branch("trace", cfg, &laminar))?;
    Ok(vec![branch_path, trivial_path])
}

/// Writes `two_mode.csv`, the branch leaving `(λ*, β*_sign)` along
/// `s(a cos(nx) + b cos(mx))`.
pub fn cmd_two_mode(cfg: &RunConfig) -> Result<PathBuf> {
    require_surface_tension(cfg)?;
    if cfg.a == 0.0 || cfg.b == 0.0 {
        return Err(Error::Config(format!(
            "two-mode branching needs nontrivial a and b, got ({}, {})",
            cfg.a, cfg.b
        )));
    }
    if cfg.n == cfg.m {
        return Err(Error::Config(format!("modes n and m must differ, both are {}", cfg.n)));
    }
    let p = cfg.physical();
    let grid = cfg.grid()?;
    let start = two_mode_branch(
        &grid,
        cfg.n,
        cfg.m,
        cfg.sign,
        cfg.a,
        cfg.b,
        cfg.s0(),
        &p,
        &cfg.solver(),
    )?;
    let kind = BranchKind::TwoMode {
        n: cfg.n,
        m: cfg.m,
        sign: cfg.sign,
        a: cfg.a,
        b: cfg.b,
    };
    let branch = continue_branch(&grid, &start, kind, &p, &continuation_options(cfg))?;
    let branch = track_eigenvalue(&grid, branch, &p)?;
    emit(cfg, "two_mode.csv", &format_branch("two-mode", cfg, &branch))
}

/// Reconstructs the state at `index` of a branch file and writes
/// `U.csv`, `V.csv`, `psi.csv`, `psi_X.csv`, `psi_Y.csv`,
/// `stagnation.csv` and `critical_layer.csv`.
pub fn cmd_flow(cfg: &RunConfig, branch: &Path, index: usize) -> Result<Vec<PathBuf>> {
    let p = cfg.physical();
    let table = read_branch(branch)?;
    if let Some(source) = &table.config {
        if source.physical() != p {
            return Err(Error::Config(format!(
                "{} was computed with {:?}, configuration has {:?}",
                branch.display(),
                source.physical(),
                p
            )));
        }
    }
    let row = table.row(index)?;
    let grid = SpectralGrid::new(table.modes, cfg.samples).map_err(|e| match e {
        Error::Parameter(msg) => Error::Config(msg),
        other => other,
    })?;
    let state = row.state();

    let flow = FlowModel::new(&grid, &state, &p)?.sample(cfg.levels)?;
    let mut written = Vec::new();
    type Component = fn(&crate::flow::FlowPoint) -> f64;
    let fields: [(&str, Component); 5] = [
        ("U", |q| q.u),
        ("V", |q| q.v),
        ("psi", |q| q.xi),
        ("psi_X", |q| q.psi_x),
        ("psi_Y", |q| q.psi_y),
    ];
    for (name, f) in fields {
        let text = format_field("flow", cfg, name, &flow.field(f));
        written.push(emit(cfg, &format!("{name}.csv"), &text)?);
    }

    let stagnation = find_stagnation(&grid, &state, &p, cfg.levels, Some(cfg.stagnation_tol))?;
    written.push(emit(
        cfg,
        "stagnation.csv",
        &format_stagnation("flow", cfg, &stagnation),
    )?);
    let layers = critical_layer(&grid, &state, &p, &stagnation, cfg.levels)?;
    written.push(emit(
        cfg,
        "critical_layer.csv",
        &format_critical_layers("flow", cfg, &layers),
    )?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path, extra: &str) -> RunConfig {
        let text = format!("N = 16\nM = 64\nL = 17\nK = 3\nout = {:?}\n{extra}", out.display().to_string());
        RunConfig::from_toml(&text).unwrap().0
    }

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from([
            "stratwave", "flow", "--config", "c.toml", "--branch", "b.csv", "--index", "3",
        ])
        .unwrap();
        match cli.command {
            Command::Flow(f) => {
                assert_eq!(f.index, 3);
                assert_eq!(f.common.config.as_deref(), Some(Path::new("c.toml")));
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["stratwave", "flow", "--index", "3"]).is_err());
    }

    #[test]
    fn dispersion_with_empty_range_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path(), "n_max = 0\n");
        let path = cmd_dispersion(&cfg).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, [DISPERSION_COLUMNS.join(",")]);
    }

    #[test]
    fn resonance_without_surface_tension_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path(), "sigma = 0.0\n");
        let err = cmd_resonance(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("divides by sigma")));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn two_mode_rejects_zero_component() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path(), "a = 0.0\nb = 1.0\n");
        assert!(matches!(cmd_two_mode(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn trace_outside_window_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path(), "lambda_min = 50.0\nlambda_max = 60.0\n");
        assert!(matches!(cmd_trace(&cfg), Err(Error::Config(_))));
    }
}
