//! Newton correction, bifurcation detection, branch switching, pseudo-arclength
//! continuation and eigenvalue tracking on the truncated system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{
    bifurcation_points, dispersion, resonance_point, Sign, StabilityLabel,
};
use crate::residual::{
    assemble_residual, check_admissibility, derived_quantities, jacobian, residual_coefficients,
    DerivedQuantities, FreeParams, Layout, PhysicalParams, Var, WaveState,
};
use crate::spectral::SpectralGrid;

pub const NEWTON_TOL: f64 = 1e-11;
pub const NEWTON_MAX_ITER: usize = 25;
pub const KERNEL_TOL: f64 = 1e-8;
pub const MIN_STEP: f64 = 1e-6;
pub const PINNED_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Relative threshold on `|D(n, λ, β)|` for counting kernel modes.
    pub kernel_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: NEWTON_TOL,
            max_iter: NEWTON_MAX_ITER,
            kernel_tol: KERNEL_TOL,
        }
    }
}

/// A linear side condition `Σ c_k u_k = rhs` on the unknown vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Linear { terms: Vec<(Var, f64)>, rhs: f64 },
    /// Weights over the whole unknown vector, in [`Layout`] order.
    Dense { weights: Vec<f64>, rhs: f64 },
}

impl Constraint {
    pub fn pin(var: Var, value: f64) -> Self {
        Constraint::Linear {
            terms: vec![(var, 1.0)],
            rhs: value,
        }
    }

    fn row(&self, layout: &Layout) -> Result<(Vec<f64>, f64)> {
        let mut row = vec![0.0; layout.len()];
        match self {
            Constraint::Linear { terms, rhs } => {
                for &(var, c) in terms {
                    let i = layout.index(var).ok_or_else(|| {
                        Error::Shape(format!("constraint refers to {var:?}, not an unknown"))
                    })?;
                    row[i] += c;
                }
                Ok((row, *rhs))
            }
            Constraint::Dense { weights, rhs } => {
                if weights.len() != layout.len() {
                    return Err(Error::Shape(format!(
                        "dense constraint has {} weights, system has {} unknowns",
                        weights.len(),
                        layout.len()
                    )));
                }
                Ok((weights.clone(), *rhs))
            }
        }
    }
}

/// Solves `F = 0` together with `constraints` for the unknowns selected by
/// `free`, starting from `guess`.
pub fn newton_correct(
    grid: &SpectralGrid,
    guess: &WaveState,
    params: &PhysicalParams,
    free: FreeParams,
    constraints: &[Constraint],
    opts: &SolverOptions,
) -> Result<WaveState> {
    let layout = Layout::new(grid.modes(), free);
    let rows = grid.modes() + 1 + constraints.len();
    if rows != layout.len() {
        return Err(Error::Shape(format!(
            "{rows} equations for {} unknowns",
            layout.len()
        )));
    }
    let rows_c: Vec<(Vec<f64>, f64)> = constraints
        .iter()
        .map(|c| c.row(&layout))
        .collect::<Result<_>>()?;

    let mut state = guess.clone();
    let mut last = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let field_norm = assemble_residual(grid, &state, params)?.max_abs();
        let u = layout.pack(&state);
        let mut r = residual_coefficients(grid, &state, params)?;
        let mut constraint_norm: f64 = 0.0;
        for (row, rhs) in &rows_c {
            let v: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() - rhs;
            constraint_norm = constraint_norm.max(v.abs());
            r.push(v);
        }
        last = field_norm.max(constraint_norm);
        if !last.is_finite() {
            return Err(Error::NonFinite("Newton residual"));
        }
        if field_norm < opts.newton_tol && constraint_norm < opts.newton_tol {
            return Ok(state);
        }
        if iter == opts.max_iter {
            break;
        }
        let mut j = jacobian(grid, &state, params, free)?;
        if !rows_c.is_empty() {
            let base = j.nrows();
            j = j.resize_vertically(rows, 0.0);
            for (k, (row, _)) in rows_c.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    j[(base + k, c)] = v;
                }
            }
        }
        let rhs = DVector::from_iterator(rows, r.iter().map(|v| -v));
        let delta = j
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Conditioning("singular Newton matrix".into()))?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Conditioning("non-finite Newton step".into()));
        }
        let next: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
        state = layout.unpack(&next, &state);
    }
    Err(Error::Iteration {
        iterations: opts.max_iter,
        residual: last,
    })
}

/// A bifurcation point on the laminar branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    pub n: usize,
    pub lambda: f64,
    pub sign: Sign,
}

/// All zeros of `D(n, ·, β)` for `n ≤ n_max` inside `[lo, hi]`, found by
/// bracketing and bisection and checked against the closed form.
pub fn detect_bifurcations(
    n_max: usize,
    beta: f64,
    lambda_range: (f64, f64),
    params: &PhysicalParams,
) -> Result<Vec<Bifurcation>> {
    let (lo, hi) = lambda_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Parameter(format!(
            "lambda range [{lo}, {hi}] must be finite and increasing"
        )));
    }
    let mut found = Vec::new();
    for n in 1..=n_max {
        let d = |l: f64| dispersion(n, l, beta, params);
        // D(n, 0, β) > 0 and D is concave in λ, so each half-line holds at
        // most one root, bracketed by the endpoints of its part of the range.
        let halves = [
            (Sign::Minus, lo, hi.min(0.0)),
            (Sign::Plus, lo.max(0.0), hi),
        ];
        for (sign, a, b) in halves {
            if a >= b {
                continue;
            }
            let (fa, fb) = (d(a), d(b));
            let root = if fa == 0.0 {
                a
            } else if fb == 0.0 {
                b
            } else if (fa > 0.0) != (fb > 0.0) {
                bisect(&d, a, b)
            } else {
                continue;
            };
            let closed = bifurcation_points(n, beta, params).lambda(sign);
            if (root - closed).abs() > 1e-10 * closed.abs().max(1.0) {
                return Err(Error::Conditioning(format!(
                    "bisected root {root} disagrees with closed form {closed} for mode {n}"
                )));
            }
            found.push(Bifurcation {
                n,
                lambda: root,
                sign,
            });
        }
    }
    found.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.n.cmp(&b.n)));
    Ok(found)
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa_pos = f(a) > 0.0;
    while b - a > 1e-12 * a.abs().max(b.abs()).max(1.0) {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == fa_pos {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Modes spanning the kernel of the linearisation at a laminar state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub modes: Vec<usize>,
}

impl KernelBasis {
    pub fn dimension(&self) -> usize {
        self.modes.len()
    }
}

pub fn kernel_dimension(
    lambda: f64,
    beta: f64,
    params: &PhysicalParams,
    modes: usize,
) -> KernelBasis {
    kernel_dimension_with_tol(lambda, beta, params, modes, KERNEL_TOL)
}

/// Modes `n ≤ modes` with `|D(n, λ, β)| < tol · max_k |D(k, λ, β)|`.
pub fn kernel_dimension_with_tol(
    lambda: f64,
    beta: f64,
    params: &PhysicalParams,
    modes: usize,
    tol: f64,
) -> KernelBasis {
    let d: Vec<f64> = (1..=modes).map(|n| dispersion(n, lambda, beta, params)).collect();
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    KernelBasis {
        modes: (1..=modes)
            .filter(|&n| d[n - 1].abs() < tol * scale)
            .collect(),
    }
}

/// Leaves the laminar branch at `λ*_{n,sign}` with `a_n = s0` pinned and
/// `λ` free.
pub fn switch_branch(
    grid: &SpectralGrid,
    n: usize,
    sign: Sign,
    beta: f64,
    s0: f64,
    params: &PhysicalParams,
    opts: &SolverOptions,
) -> Result<WaveState> {
    if n == 0 || n > grid.modes() {
        return Err(Error::Parameter(format!(
            "mode {n} outside 1..={}",
            grid.modes()
        )));
    }
    let lambda = bifurcation_points(n, beta, params).lambda(sign);
    let kernel = kernel_dimension_with_tol(lambda, beta, params, grid.modes(), opts.kernel_tol);
    if kernel.dimension() > 1 {
        return Err(Error::Resonance {
            mode: n,
            dimension: kernel.dimension(),
        });
    }
    let mut guess = WaveState::trivial(lambda, beta, grid.modes());
    guess.w.set_coeff(n, s0);
    newton_correct(
        grid,
        &guess,
        params,
        FreeParams::LAMBDA,
        &[Constraint::pin(Var::Mode(n), s0)],
        opts,
    )
}

fn check_direction(a: f64, b: f64) -> Result<()> {
    if ((a * a + b * b) - 1.0).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "direction (a, b) = ({a}, {b}) is not a unit vector"
        )));
    }
    Ok(())
}

/// Leaves the double point `(λ*, β*_sign)` of modes `n`, `m` along
/// `s(a cos(nx) + b cos(mx))` with both `λ` and `β` free.
#[allow(clippy::too_many_arguments)]
pub fn two_mode_branch(
    grid: &SpectralGrid,
    n: usize,
    m: usize,
    sign: Sign,
    a: f64,
    b: f64,
    s0: f64,
    params: &PhysicalParams,
    opts: &SolverOptions,
) -> Result<WaveState> {
    if a * b == 0.0 {
        return Err(Error::Parameter(
            "two-mode direction needs a·b ≠ 0".into(),
        ));
    }
    two_mode_solve(grid, n, m, sign, a, b, s0, params, opts)
}

/// [`two_mode_branch`] without the `a·b ≠ 0` guard.
#[allow(clippy::too_many_arguments)]
pub(crate) fn two_mode_solve(
    grid: &SpectralGrid,
    n: usize,
    m: usize,
    sign: Sign,
    a: f64,
    b: f64,
    s0: f64,
    params: &PhysicalParams,
    opts: &SolverOptions,
) -> Result<WaveState> {
    check_direction(a, b)?;
    if n.max(m) > grid.modes() {
        return Err(Error::Parameter(format!(
            "modes ({n}, {m}) exceed truncation {}",
            grid.modes()
        )));
    }
    let point = resonance_point(n, m, sign, params)?;
    let kernel =
        kernel_dimension_with_tol(point.lambda, point.beta, params, grid.modes(), opts.kernel_tol);
    if kernel.modes != [n.min(m), n.max(m)] {
        return Err(Error::Conditioning(format!(
            "expected a kernel spanned by modes {n} and {m}, found {:?}",
            kernel.modes
        )));
    }
    transversality_matrix_check(n, m, a, b, point.lambda, point.beta, params)?;

    let mut guess = WaveState::trivial(point.lambda, point.beta, grid.modes());
    guess.w.set_coeff(n, s0 * a);
    guess.w.set_coeff(m, s0 * b);
    newton_correct(
        grid,
        &guess,
        params,
        FreeParams::BOTH,
        &[
            Constraint::pin(Var::Mode(n), s0 * a),
            Constraint::pin(Var::Mode(m), s0 * b),
        ],
        opts,
    )
}

/// Projections of `F_{λ(μ,w)} v̂` and `F_{β(μ,w)} v̂` onto the kernel, for
/// `v̂ = a cos(nx) + b cos(mx)`; these must be independent.
fn transversality_matrix_check(
    n: usize,
    m: usize,
    a: f64,
    b: f64,
    lambda: f64,
    beta: f64,
    params: &PhysicalParams,
) -> Result<()> {
    let h = params.depth;
    let d_lambda = |k: usize| {
        -2.0 * (2.0 * lambda / crate::linear::t_n(k, h) - beta - params.ga() * h)
    };
    let d_beta = 2.0 * lambda;
    let mat = [
        [a * d_lambda(n), a * d_beta],
        [b * d_lambda(m), b * d_beta],
    ];
    let det = mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0];
    let scale = mat
        .iter()
        .flatten()
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .powi(2);
    if !(det.abs() > 1e-10 * scale) {
        return Err(Error::Transversality { det });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BranchKind {
    Trivial { n: usize, sign: Sign },
    OneMode { n: usize, sign: Sign },
    TwoMode { n: usize, m: usize, sign: Sign, a: f64, b: f64 },
}

impl BranchKind {
    fn free(&self) -> FreeParams {
        match self {
            BranchKind::Trivial { .. } => FreeParams::NONE,
            BranchKind::OneMode { .. } => FreeParams::LAMBDA,
            BranchKind::TwoMode { .. } => FreeParams::BOTH,
        }
    }

    /// Mode whose coefficient parametrises the branch, and its weight.
    fn pinned(&self) -> (usize, f64) {
        match *self {
            BranchKind::Trivial { n, .. } | BranchKind::OneMode { n, .. } => (n, 1.0),
            BranchKind::TwoMode { n, a, .. } => (n, a),
        }
    }

    fn leading_mode(&self) -> usize {
        self.pinned().0
    }

    fn extra_constraints(&self) -> Vec<Constraint> {
        match *self {
            BranchKind::TwoMode { n, m, a, b, .. } => vec![Constraint::Linear {
                terms: vec![(Var::Mode(n), b), (Var::Mode(m), -a)],
                rhs: 0.0,
            }],
            _ => Vec::new(),
        }
    }

    /// Amplitude parameter of a state on this branch.
    pub fn amplitude(&self, state: &WaveState) -> f64 {
        let (n, weight) = self.pinned();
        state.w.coeff(n) / weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub s: f64,
    pub state: WaveState,
    pub derived: DerivedQuantities,
    pub residual: f64,
    /// Step used to reach this point: an amplitude increment while pinned,
    /// an arclength in unknown space afterwards. Zero for the first point.
    pub step: f64,
    pub arclength: bool,
    pub leading_eigenvalue: Option<f64>,
    pub stability: Option<StabilityLabel>,
}

impl BranchPoint {
    pub fn new(
        grid: &SpectralGrid,
        kind: &BranchKind,
        state: WaveState,
        params: &PhysicalParams,
    ) -> Result<Self> {
        let residual = assemble_residual(grid, &state, params)?.max_abs();
        Ok(Self {
            s: kind.amplitude(&state),
            derived: derived_quantities(&state, params),
            state,
            residual,
            step: 0.0,
            arclength: false,
            leading_eigenvalue: None,
            stability: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    StepFloor { last_error: String },
    Inadmissible { reason: String },
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Completed => f.write_str("completed"),
            Termination::StepFloor { last_error } => write!(f, "step-floor: {last_error}"),
            Termination::Inadmissible { reason } => write!(f, "inadmissible: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub kind: BranchKind,
    pub points: Vec<BranchPoint>,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub ds: f64,
    pub steps: usize,
    pub pinned_steps: usize,
    pub min_step: f64,
    pub solver: SolverOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            ds: 1e-3,
            steps: 20,
            pinned_steps: PINNED_STEPS,
            min_step: MIN_STEP,
            solver: SolverOptions::default(),
        }
    }
}

/// Predictor-corrector continuation from a converged `start`: amplitude
/// pinning for the first steps, then pseudo-arclength with a secant tangent.
pub fn continue_branch(
    grid: &SpectralGrid,
    start: &WaveState,
    kind: BranchKind,
    params: &PhysicalParams,
    opts: &ContinuationOptions,
) -> Result<Branch> {
    if matches!(kind, BranchKind::Trivial { .. }) {
        return Err(Error::Parameter(
            "the laminar branch is sampled with trivial_branch".into(),
        ));
    }
    if !(opts.ds.is_finite() && opts.ds != 0.0) {
        return Err(Error::Parameter(format!("step ds must be nonzero, got {}", opts.ds)));
    }
    let free = kind.free();
    let layout = Layout::new(grid.modes(), free);
    let (pin_mode, weight) = kind.pinned();
    let extra = kind.extra_constraints();

    let first = BranchPoint::new(grid, &kind, start.clone(), params)?;
    if first.residual >= opts.solver.newton_tol {
        return Err(Error::Iteration {
            iterations: 0,
            residual: first.residual,
        });
    }
    let mut points = vec![first];
    let mut termination = Termination::Completed;
    let mut step = opts.ds.abs();
    let direction = opts.ds.signum();
    let mut arclength_step: Option<f64> = None;

    while points.len() <= opts.steps {
        let k = points.len();
        let current = &points[k - 1];
        let u_cur = layout.pack(&current.state);
        let pinned_phase = k <= opts.pinned_steps || k < 2;

        let attempt: Result<(WaveState, f64)> = if pinned_phase {
            let s_next = current.s + direction * step;
            let mut guess = current.state.clone();
            if k >= 2 {
                // Secant extrapolation in s.
                let prev = layout.pack(&points[k - 2].state);
                let ds_prev = current.s - points[k - 2].s;
                let scale = (s_next - current.s) / ds_prev;
                let pred: Vec<f64> = u_cur
                    .iter()
                    .zip(&prev)
                    .map(|(c, p)| c + scale * (c - p))
                    .collect();
                guess = layout.unpack(&pred, &current.state);
            }
            guess.w.set_coeff(pin_mode, s_next * weight);
            let mut constraints = vec![Constraint::pin(Var::Mode(pin_mode), s_next * weight)];
            constraints.extend(extra.iter().cloned());
            newton_correct(grid, &guess, params, free, &constraints, &opts.solver)
                .map(|st| (st, step))
        } else {
            let prev = layout.pack(&points[k - 2].state);
            let diff: Vec<f64> = u_cur.iter().zip(&prev).map(|(c, p)| c - p).collect();
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let tangent: Vec<f64> = diff.iter().map(|v| v / norm).collect();
            let target = *arclength_step.get_or_insert(norm);
            let ds_arc = target * step / opts.ds.abs();
            let pred: Vec<f64> = u_cur
                .iter()
                .zip(&tangent)
                .map(|(c, t)| c + ds_arc * t)
                .collect();
            let rhs = ds_arc + tangent.iter().zip(&u_cur).map(|(t, c)| t * c).sum::<f64>();
            let mut constraints = vec![Constraint::Dense {
                weights: tangent,
                rhs,
            }];
            constraints.extend(extra.iter().cloned());
            let guess = layout.unpack(&pred, &current.state);
            newton_correct(grid, &guess, params, free, &constraints, &opts.solver)
                .map(|st| (st, ds_arc))
        };

        match attempt {
            Ok((state, used)) => {
                let surface = state.surface(grid, params);
                let report = check_admissibility(grid, &surface, params.depth);
                if !report.admissible() {
                    termination = Termination::Inadmissible {
                        reason: format!("{report:?}"),
                    };
                    break;
                }
                let mut point = BranchPoint::new(grid, &kind, state, params)?;
                point.step = used;
                point.arclength = !pinned_phase;
                points.push(point);
                step = (2.0 * step).min(opts.ds.abs());
            }
            Err(err) => {
                step *= 0.5;
                if step < opts.min_step {
                    if points.len() == 1 {
                        return Err(err);
                    }
                    termination = Termination::StepFloor {
                        last_error: err.to_string(),
                    };
                    break;
                }
            }
        }
    }
    Ok(Branch {
        kind,
        points,
        termination,
    })
}

/// Samples the laminar branch at the given speeds, annotated with
/// `κ(λ) = D(n, λ, β)`.
pub fn trivial_branch(
    grid: &SpectralGrid,
    n: usize,
    sign: Sign,
    beta: f64,
    lambdas: &[f64],
    params: &PhysicalParams,
) -> Result<Branch> {
    let kind = BranchKind::Trivial { n, sign };
    let points = lambdas
        .iter()
        .map(|&lambda| {
            let state = WaveState::trivial(lambda, beta, grid.modes());
            let mut p = BranchPoint::new(grid, &kind, state, params)?;
            p.s = 0.0;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut branch = Branch {
        kind,
        points,
        termination: Termination::Completed,
    };
    annotate_trivial(&mut branch, params);
    Ok(branch)
}

fn annotate_trivial(branch: &mut Branch, params: &PhysicalParams) {
    let n = branch.kind.leading_mode();
    for p in &mut branch.points {
        let kappa = dispersion(n, p.state.lambda, p.state.beta, params);
        p.leading_eigenvalue = Some(kappa);
        p.stability = Some(label_from_eigenvalue(kappa));
    }
}

fn label_from_eigenvalue(theta: f64) -> StabilityLabel {
    if theta < 0.0 {
        StabilityLabel::StableFormally
    } else if theta > 0.0 {
        StabilityLabel::Unstable
    } else {
        StabilityLabel::Neutral
    }
}

/// The linearisation restricted to pairs `(0, u)`: the `w` block with `μ`
/// eliminated through the mean-mode equation.
pub fn reduced_operator(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
) -> Result<DMatrix<f64>> {
    let j = jacobian(grid, state, params, FreeParams::NONE)?;
    let n = grid.modes();
    let j_mm = j[(0, 0)];
    if j_mm.abs() < 1e-12 {
        return Err(Error::Conditioning(
            "mean-mode equation does not determine mu".into(),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| {
        j[(r + 1, c + 1)] - j[(r + 1, 0)] * j[(0, c + 1)] / j_mm
    }))
}

/// Eigenvalue of `op` nearest zero, with ties broken by overlap of the
/// eigenvector with `previous`.
pub fn eigenvalue_nearest_zero(
    op: &DMatrix<f64>,
    previous: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let eig = op
        .clone()
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| Error::Conditioning("Schur decomposition did not converge".into()))?
        .complex_eigenvalues();
    let best = eig
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min);
    let candidates: Vec<f64> = eig
        .iter()
        .filter(|z| z.norm() <= best * (1.0 + 1e-6) + 1e-300)
        .map(|z| z.re)
        .collect();
    let mut chosen: Option<(f64, DVector<f64>, f64)> = None;
    for theta in candidates {
        let v = inverse_iteration(op, theta, previous)?;
        let overlap = v.dot(previous).abs();
        if chosen.as_ref().is_none_or(|c| overlap > c.2) {
            chosen = Some((theta, v, overlap));
        }
    }
    let (theta, v, _) = chosen.ok_or_else(|| Error::Conditioning("empty spectrum".into()))?;
    Ok((theta, v))
}

fn inverse_iteration(op: &DMatrix<f64>, theta: f64, start: &DVector<f64>) -> Result<DVector<f64>> {
    let n = op.nrows();
    let shift = theta + 1e-10 * (1.0 + theta.abs());
    let lu = (op - DMatrix::identity(n, n) * shift).lu();
    let mut v = start.normalize();
    for _ in 0..3 {
        let next = lu
            .solve(&v)
            .ok_or_else(|| Error::Conditioning("inverse iteration is singular".into()))?;
        let norm = next.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Conditioning("inverse iteration broke down".into()));
        }
        v = next / norm;
    }
    if v.dot(start) < 0.0 {
        v = -v;
    }
    Ok(v)
}

/// Annotates every point with the tracked eigenvalue `θ(s)` of the reduced
/// linearisation and the stability label given by its sign.
pub fn track_eigenvalue(
    grid: &SpectralGrid,
    mut branch: Branch,
    params: &PhysicalParams,
) -> Result<Branch> {
    if matches!(branch.kind, BranchKind::Trivial { .. }) {
        annotate_trivial(&mut branch, params);
        return Ok(branch);
    }
    let n = branch.kind.leading_mode();
    let mut previous = DVector::from_fn(grid.modes(), |i, _| if i + 1 == n { 1.0 } else { 0.0 });
    for p in &mut branch.points {
        let op = reduced_operator(grid, &p.state, params)?;
        let (theta, v) = eigenvalue_nearest_zero(&op, &previous)?;
        previous = v;
        p.leading_eigenvalue = Some(theta);
        p.stability = Some(label_from_eigenvalue(theta));
    }
    Ok(branch)
}
