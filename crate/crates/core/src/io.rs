//! Run configuration and the on-disk formats for tables, branches and
//! strip fields.
//!
//! Every file starts with `#` comment lines carrying the program version,
//! the command and the resolved configuration (`# config: key = value`).
//! Floats are written as the shortest decimal that round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuation::{Branch, BranchKind, SolverOptions};
use crate::error::{Error, Result};
use crate::flow::{CriticalLayer, StagnationPoint, StripField2D, DEFAULT_LEVELS, STAGNATION_REL_TOL};
use crate::linear::Sign;
use crate::residual::{PhysicalParams, WaveState};
use crate::spectral::{CosineSpectrum, SpectralGrid, DEFAULT_MODES, DEFAULT_SAMPLES};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed leading columns of a branch file; `a_1..a_N` follow.
pub const BRANCH_COLUMNS: [&str; 11] = [
    "index",
    "s",
    "lambda",
    "beta",
    "mu",
    "Q",
    "m",
    "amp_inf",
    "residual_inf",
    "leading_eig",
    "stability",
];

const CONFIG_PREFIX: &str = "# config: ";
const TERMINATION_PREFIX: &str = "# termination: ";

/// Allowed drift of `a² + b²` from one before the direction is rejected
/// rather than normalised.
const DIRECTION_SLACK: f64 = 1e-6;

/// Flat run configuration. Key names follow the mathematical symbols where
/// one exists (`A`, `B`, `N`, `M`, `L`, `K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub g: f64,
    #[serde(rename = "A")]
    pub strat_slope: f64,
    #[serde(rename = "B")]
    pub ref_density: f64,
    pub sigma: f64,
    pub h: f64,
    #[serde(rename = "N")]
    pub modes: usize,
    #[serde(rename = "M")]
    pub samples: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub kernel_tol: f64,
    /// Relative to the largest `|∇ψ|` on the strip grid.
    pub stagnation_tol: f64,
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    pub sign: Sign,
    pub a: f64,
    pub b: f64,
    /// Initial amplitude; `1e-3·h` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    pub ds: f64,
    #[serde(rename = "K")]
    pub steps: usize,
    pub n_max: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PhysicalParams::default();
        let solver = SolverOptions::default();
        Self {
            g: p.g,
            strat_slope: p.strat_slope,
            ref_density: p.ref_density,
            sigma: p.sigma,
            h: p.depth,
            modes: DEFAULT_MODES,
            samples: DEFAULT_SAMPLES,
            levels: DEFAULT_LEVELS,
            newton_tol: solver.newton_tol,
            newton_max_iter: solver.max_iter,
            kernel_tol: solver.kernel_tol,
            stagnation_tol: STAGNATION_REL_TOL,
            beta: 0.0,
            n: 1,
            m: 2,
            sign: Sign::Plus,
            a: std::f64::consts::FRAC_1_SQRT_2,
            b: std::f64::consts::FRAC_1_SQRT_2,
            s0: None,
            ds: 1e-3,
            steps: 20,
            n_max: 8,
            lambda_min: -100.0,
            lambda_max: 100.0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads and validates a configuration file. Returned strings are
    /// warnings for the user.
    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<(Self, Vec<String>)> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.resolve()
    }

    /// Fills derived defaults, normalises `(a, b)` and validates.
    pub fn resolve(mut self) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        if self.s0.is_none() {
            self.s0 = Some(1e-3 * self.h);
        }
        let norm2 = self.a * self.a + self.b * self.b;
        if !norm2.is_finite() || (norm2 - 1.0).abs() >= DIRECTION_SLACK {
            return Err(Error::Config(format!(
                "two-mode direction must satisfy a² + b² = 1, got {norm2}"
            )));
        }
        if (norm2 - 1.0).abs() > 4.0 * f64::EPSILON {
            let r = norm2.sqrt();
            warnings.push(format!(
                "normalising (a, b) = ({}, {}) by {}",
                fmt_f64(self.a),
                fmt_f64(self.b),
                fmt_f64(r)
            ));
            self.a /= r;
            self.b /= r;
        }
        self.validate()?;
        Ok((self, warnings))
    }

    pub fn validate(&self) -> Result<()> {
        self.physical().validate().map_err(as_config)?;
        SpectralGrid::new(self.modes, self.samples).map_err(as_config)?;
        for (name, v) in [
            ("newton_tol", self.newton_tol),
            ("kernel_tol", self.kernel_tol),
            ("stagnation_tol", self.stagnation_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.levels < 2 {
            return Err(Error::Config(format!("L must be at least 2, got {}", self.levels)));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("mode numbers n, m start at 1".into()));
        }
        let s0 = self.s0();
        if !(s0.is_finite() && s0 != 0.0) {
            return Err(Error::Config(format!("s0 must be nonzero, got {s0}")));
        }
        if !(self.ds.is_finite() && self.ds != 0.0) {
            return Err(Error::Config(format!("ds must be nonzero, got {}", self.ds)));
        }
        if !(self.lambda_min < self.lambda_max) {
            return Err(Error::Config(format!(
                "empty speed window [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        Ok(())
    }

    pub fn physical(&self) -> PhysicalParams {
        PhysicalParams {
            g: self.g,
            strat_slope: self.strat_slope,
            ref_density: self.ref_density,
            sigma: self.sigma,
            depth: self.h,
        }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            newton_tol: self.newton_tol,
            max_iter: self.newton_max_iter,
            kernel_tol: self.kernel_tol,
        }
    }

    pub fn grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(self.modes, self.samples).map_err(as_config)
    }

    pub fn s0(&self) -> f64 {
        self.s0.unwrap_or(1e-3 * self.h)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Parameter(msg) => Error::Config(msg),
        other => other,
    }
}

/// Shortest round-trip decimal, with exponent notation for very large or
/// small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Comment block written at the top of every output file.
pub fn header(command: &str, config: &RunConfig, extra: &[(&str, String)]) -> String {
    let mut out = format!("# stratwave {VERSION}\n# command: {command}\n");
    for (key, value) in extra {
        let _ = writeln!(out, "# {key}: {value}");
    }
    for line in config.to_toml().lines().filter(|l| !l.trim().is_empty()) {
        let _ = writeln!(out, "{CONFIG_PREFIX}{line}");
    }
    out
}

/// Recovers the configuration embedded in a file header.
pub fn embedded_config(text: &str) -> Result<Option<RunConfig>> {
    let body: Vec<&str> = text
        .lines()
        .filter_map(|l| l.strip_prefix(CONFIG_PREFIX))
        .collect();
    if body.is_empty() {
        return Ok(None);
    }
    let cfg = toml::from_str(&body.join("\n"))
        .map_err(|e| Error::Config(format!("embedded config: {}", e.message())))?;
    Ok(Some(cfg))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_body(rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii csv")
}

/// A header row followed by data rows, all as text.
pub fn table(columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let head = columns.iter().map(|c| c.to_string()).collect();
    csv_body(std::iter::once(head).chain(rows))
}

pub fn branch_kind_label(kind: &BranchKind) -> String {
    match *kind {
        BranchKind::Trivial { n, sign } => format!("trivial n={n} sign={sign}"),
        BranchKind::OneMode { n, sign } => format!("one-mode n={n} sign={sign}"),
        BranchKind::TwoMode { n, m, sign, a, b } => format!(
            "two-mode n={n} m={m} sign={sign} a={} b={}",
            fmt_f64(a),
            fmt_f64(b)
        ),
    }
}

/// Branch file text: header, columns, one row per point and a termination
/// footer naming the last good index.
pub fn format_branch(command: &str, config: &RunConfig, branch: &Branch) -> String {
    let modes = branch.points.first().map_or(config.modes, |p| p.state.modes());
    let mut out = header(
        command,
        config,
        &[
            ("branch", branch_kind_label(&branch.kind)),
            ("N", modes.to_string()),
        ],
    );
    let mut columns: Vec<String> = BRANCH_COLUMNS.iter().map(|c| c.to_string()).collect();
    columns.extend((1..=modes).map(|k| format!("a_{k}")));
    let rows = branch.points.iter().enumerate().map(|(i, p)| {
        let mut row = vec![
            i.to_string(),
            fmt_f64(p.s),
            fmt_f64(p.state.lambda),
            fmt_f64(p.state.beta),
            fmt_f64(p.state.mu),
            fmt_f64(p.derived.q),
            fmt_f64(p.derived.m),
            fmt_f64(p.state.w.max_abs()),
            fmt_f64(p.residual),
            fmt_opt(p.leading_eigenvalue),
            p.stability.map(|s| s.to_string()).unwrap_or_default(),
        ];
        row.extend((1..=modes).map(|k| fmt_f64(p.state.w.coeff(k))));
        row
    });
    out.push_str(&csv_body(std::iter::once(columns).chain(rows)));
    let last = branch.points.len().saturating_sub(1);
    let _ = writeln!(out, "{TERMINATION_PREFIX}{}; last_index={last}", branch.termination);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub index: usize,
    pub s: f64,
    pub lambda: f64,
    pub beta: f64,
    pub mu: f64,
    pub q: f64,
    pub m: f64,
    pub amp_inf: f64,
    pub residual_inf: f64,
    pub leading_eig: Option<f64>,
    pub stability: Option<String>,
    /// `a_1..a_N`.
    pub coeffs: Vec<f64>,
}

impl BranchRow {
    pub fn state(&self) -> WaveState {
        let mut w = CosineSpectrum::zeros(self.coeffs.len());
        for (k, &a) in self.coeffs.iter().enumerate() {
            w.set_coeff(k + 1, a);
        }
        WaveState {
            lambda: self.lambda,
            beta: self.beta,
            mu: self.mu,
            w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchTable {
    pub config: Option<RunConfig>,
    pub modes: usize,
    pub rows: Vec<BranchRow>,
    /// Footer text after `# termination: `, if present.
    pub termination: Option<String>,
}

impl BranchTable {
    pub fn row(&self, index: usize) -> Result<&BranchRow> {
        self.rows
            .iter()
            .find(|r| r.index == index)
            .ok_or(Error::Range {
                index,
                len: self.rows.len(),
            })
    }
}

pub fn read_branch(path: &Path) -> Result<BranchTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_branch(&text, path)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_branch(text: &str, path: &Path) -> Result<BranchTable> {
    let config = embedded_config(text).map_err(|e| parse_error(path, 1, e.to_string()))?;
    let termination = text
        .lines()
        .find_map(|l| l.strip_prefix(TERMINATION_PREFIX))
        .map(str::to_string);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let head = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    let head_line = text.lines().position(|l| !l.starts_with('#')).map_or(1, |i| i + 1);
    let names: Vec<&str> = head.iter().collect();
    if names.len() < BRANCH_COLUMNS.len() || names[..BRANCH_COLUMNS.len()] != BRANCH_COLUMNS {
        return Err(parse_error(
            path,
            head_line,
            format!("expected columns starting {}", BRANCH_COLUMNS.join(",")),
        ));
    }
    let modes = names.len() - BRANCH_COLUMNS.len();
    for (k, name) in names[BRANCH_COLUMNS.len()..].iter().enumerate() {
        if *name != format!("a_{}", k + 1) {
            return Err(parse_error(path, head_line, format!("unexpected column {name:?}")));
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let float = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|_| {
                parse_error(path, line, format!("{}: not a number: {:?}", names[i], &record[i]))
            })
        };
        let index = record[0]
            .parse::<usize>()
            .map_err(|_| parse_error(path, line, format!("index: {:?}", &record[0])))?;
        let leading_eig = if record[9].is_empty() { None } else { Some(float(9)?) };
        let stability = (!record[10].is_empty()).then(|| record[10].to_string());
        let coeffs = (BRANCH_COLUMNS.len()..names.len())
            .map(float)
            .collect::<Result<Vec<_>>>()?;
        rows.push(BranchRow {
            index,
            s: float(1)?,
            lambda: float(2)?,
            beta: float(3)?,
            mu: float(4)?,
            q: float(5)?,
            m: float(6)?,
            amp_inf: float(7)?,
            residual_inf: float(8)?,
            leading_eig,
            stability,
            coeffs,
        });
    }
    Ok(BranchTable {
        config,
        modes,
        rows,
        termination,
    })
}

/// Field file text: header, a `M,L,h` line, then `L` rows of `M` values
/// starting at the bed `y = -h` and ending at the surface `y = 0`.
pub fn format_field(command: &str, config: &RunConfig, name: &str, field: &StripField2D) -> String {
    let mut out = header(command, config, &[("field", name.to_string())]);
    let dims = vec![
        field.samples().to_string(),
        field.levels().to_string(),
        fmt_f64(field.depth()),
    ];
    let rows = (0..field.levels()).map(|k| field.row(k).iter().map(|&v| fmt_f64(v)).collect());
    out.push_str(&csv_body(std::iter::once(dims).chain(rows)));
    out
}

pub fn read_field(path: &Path) -> Result<StripField2D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field(&text, path)
}

pub fn parse_field(text: &str, path: &Path) -> Result<StripField2D> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let dims = records
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing M,L,h line"))?
        .map_err(|e| parse_error(path, 1, e.to_string()))?;
    let dims_line = dims.position().map_or(1, |p| p.line() as usize);
    if dims.len() != 3 {
        return Err(parse_error(path, dims_line, "expected M,L,h"));
    }
    let bad = |what: &str| parse_error(path, dims_line, format!("invalid {what}"));
    let samples: usize = dims[0].parse().map_err(|_| bad("M"))?;
    let levels: usize = dims[1].parse().map_err(|_| bad("L"))?;
    let depth: f64 = dims[2].parse().map_err(|_| bad("h"))?;
    let mut values = Vec::with_capacity(samples * levels);
    for record in records {
        let record = record.map_err(|e| parse_error(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != samples {
            return Err(parse_error(
                path,
                line,
                format!("expected {samples} values, found {}", record.len()),
            ));
        }
        for v in record.iter() {
            values.push(
                v.parse::<f64>()
                    .map_err(|_| parse_error(path, line, format!("not a number: {v:?}")))?,
            );
        }
    }
    StripField2D::new(values, samples, levels, depth)
        .map_err(|e| parse_error(path, dims_line, e.to_string()))
}

pub const STAGNATION_COLUMNS: [&str; 8] = ["x", "y", "X", "Y", "grad_norm", "psi", "kind", "refined"];

pub fn format_stagnation(command: &str, config: &RunConfig, points: &[StagnationPoint]) -> String {
    let mut out = header(command, config, &[]);
    out.push_str(&table(
        &STAGNATION_COLUMNS,
        points.iter().map(|p| {
            vec![
                fmt_f64(p.x),
                fmt_f64(p.y),
                fmt_f64(p.big_x),
                fmt_f64(p.big_y),
                fmt_f64(p.grad_norm),
                fmt_f64(p.psi),
                p.kind.to_string(),
                p.refined.to_string(),
            ]
        }),
    ));
    out
}

pub const CRITICAL_LAYER_COLUMNS: [&str; 11] = [
    "layer", "psi", "cats_eye", "curve", "level", "closed", "wraps", "x", "y", "X", "Y",
];

/// One row per polyline vertex; `(layer, curve)` identifies the polyline.
pub fn format_critical_layers(
    command: &str,
    config: &RunConfig,
    layers: &[CriticalLayer],
) -> String {
    let mut rows = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        for (ci, curve) in layer.curves.iter().enumerate() {
            for p in &curve.points {
                let mut row = vec![
                    li.to_string(),
                    fmt_f64(layer.psi),
                    layer.cats_eye.to_string(),
                    ci.to_string(),
                    fmt_f64(curve.level),
                    curve.closed.to_string(),
                    curve.wraps.to_string(),
                ];
                row.extend(p.iter().map(|&v| fmt_f64(v)));
                rows.push(row);
            }
        }
    }
    let mut out = header(command, config, &[]);
    out.push_str(&table(&CRITICAL_LAYER_COLUMNS, rows));
    out
}
