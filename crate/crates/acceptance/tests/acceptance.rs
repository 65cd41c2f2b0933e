//! Acceptance criteria 1-10. Each test prints one `PASS`/`FAIL` line on
//! stdout (bypassing capture) and then asserts the outcome.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use stratwave::continuation::{
    continue_branch, detect_bifurcations, eigenvalue_nearest_zero, kernel_dimension,
    reduced_operator, switch_branch, track_eigenvalue, trivial_branch, two_mode_branch, BranchKind,
    ContinuationOptions, SolverOptions, Termination,
};
use stratwave::flow::{find_stagnation, FlowModel};
use stratwave::linear::{
    bifurcation_points, dispersion, lambda_second_derivative, resonance_point, transversality, Sign,
};
use stratwave::residual::{
    assemble_residual, derived_quantities, jacobian, FreeParams, PhysicalParams, WaveState,
};
use stratwave::spectral::SpectralGrid;

const C1_REL_TOL: f64 = 1e-10;
const C2_TOL: f64 = 1e-13;
const C3_OFF_DIAG_TOL: f64 = 1e-6;
const C3_DIAG_REL_TOL: f64 = 1e-5;
const C4_RATIO: (f64, f64) = (3.0, 5.0);
const C5_SOFT_REL: f64 = 0.2;
const C6_SLOPE_REL_TOL: f64 = 1e-6;
const C6_S_MAX: f64 = 0.02;
const C8_MODE_RATIO_TOL: f64 = 5e-3;
const C8_RATIO: (f64, f64) = (3.0, 5.0);
const C8_EXTRAPOLATION_REL: f64 = 0.1;
const C9_LAMINAR_TOL: f64 = 1e-8;
const C9_DEPTH_TOL: f64 = 0.01;
const C10_IDENTITY_REL_TOL: f64 = 1e-8;
const C10_TRACE_TOL: f64 = 1e-10;

/// Criteria run one at a time so that the runtime limits are measured
/// without contention.
static SERIAL: Mutex<()> = Mutex::new(());

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion(id: u32, title: &str, limit: Duration, body: impl FnOnce() -> Outcome) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let out = body();
    let elapsed = start.elapsed();
    let pass = out.pass && elapsed <= limit;
    let line = format!(
        "criterion {id:>2} {} {title}: {} [{:.2} s, limit {} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "\n{line}");
    let _ = stdout.flush();
    assert!(pass, "{line}");
}

fn default_grid() -> SpectralGrid {
    SpectralGrid::default()
}

fn with(strat_slope: f64, sigma: f64) -> PhysicalParams {
    PhysicalParams {
        strat_slope,
        sigma,
        ..PhysicalParams::default()
    }
}

#[test]
fn criterion_01_dispersion_roots() {
    criterion(1, "dispersion roots", Duration::from_secs(1), || {
        let mut rng = StdRng::seed_from_u64(1);
        let mut worst = 0.0f64;
        let mut count = 0;
        for _ in 0..50 {
            let p = with(rng.random_range(-0.5..0.5), rng.random_range(0.0..1.0));
            let beta = rng.random_range(-5.0..5.0);
            let found = match detect_bifurcations(8, beta, (-1e3, 1e3), &p) {
                Ok(f) => f,
                Err(e) => return outcome(false, format!("detection failed: {e}")),
            };
            count += found.len();
            for b in found {
                let closed = bifurcation_points(b.n, beta, &p).lambda(b.sign);
                worst = worst.max((b.lambda - closed).abs() / closed.abs());
            }
        }
        outcome(
            count == 50 * 16 && worst <= C1_REL_TOL,
            format!("{count}/800 roots, max rel err {worst:.2e} (tol {C1_REL_TOL:e})"),
        )
    });
}

#[test]
fn criterion_02_trivial_exactness() {
    criterion(2, "trivial-solution exactness", Duration::from_secs(1), || {
        let grid = default_grid();
        let p = PhysicalParams::default();
        let mut rng = StdRng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let lambda: f64 = rng.random_range(-10.0..10.0);
            let beta = rng.random_range(-10.0..10.0);
            let state = WaveState::trivial(lambda, beta, grid.modes());
            let r = match assemble_residual(&grid, &state, &p) {
                Ok(r) => r.max_abs(),
                Err(e) => return outcome(false, e.to_string()),
            };
            worst = worst.max(r / (1.0 + lambda * lambda));
        }
        outcome(
            worst < C2_TOL,
            format!("max |F|/(1+λ²) = {worst:.2e} (tol {C2_TOL:e})"),
        )
    });
}

#[test]
fn criterion_03_linearization() {
    criterion(3, "linearization oracle", Duration::from_secs(10), || {
        let grid = default_grid();
        let p = PhysicalParams::default();
        let (lambda, beta) = (2.1, 0.3);
        let state = WaveState::trivial(lambda, beta, grid.modes());
        let j = match jacobian(&grid, &state, &p, FreeParams::NONE) {
            Ok(j) => j,
            Err(e) => return outcome(false, e.to_string()),
        };
        let n = grid.modes();
        let (mut off, mut diag) = (0.0f64, 0.0f64);
        for r in 0..=n {
            for c in 0..=n {
                if r == c && r > 0 {
                    let d = dispersion(r, lambda, beta, &p);
                    diag = diag.max((j[(r, c)] - d).abs() / d.abs());
                } else if r != c {
                    off = off.max(j[(r, c)].abs());
                }
            }
        }
        outcome(
            off < C3_OFF_DIAG_TOL && diag < C3_DIAG_REL_TOL,
            format!(
                "N={n}, max off-diagonal {off:.2e} (tol {C3_OFF_DIAG_TOL:e}), \
                 max diagonal rel err vs D {diag:.2e} (tol {C3_DIAG_REL_TOL:e})"
            ),
        )
    });
}

#[test]
fn criterion_04_pitchfork_order() {
    criterion(4, "pitchfork order", Duration::from_secs(30), || {
        let grid = default_grid();
        let p = PhysicalParams::default();
        let l_star = bifurcation_points(1, 0.0, &p).lambda_plus;
        let mut offsets = Vec::new();
        for s0 in [1e-3, 2e-3, 4e-3] {
            match switch_branch(&grid, 1, Sign::Plus, 0.0, s0, &p, &SolverOptions::default()) {
                Ok(st) => offsets.push((st.lambda - l_star).abs()),
                Err(e) => return outcome(false, format!("s0 = {s0}: {e}")),
            }
        }
        let ratios: Vec<f64> = offsets.windows(2).map(|w| w[1] / w[0]).collect();
        let pass = ratios
            .iter()
            .all(|r| (C4_RATIO.0..=C4_RATIO.1).contains(r));
        outcome(
            pass,
            format!("|λ(s0)-λ*| ratios per doubling {ratios:.4?} (band {C4_RATIO:?})"),
        )
    });
}

#[test]
fn criterion_05_bifurcation_direction() {
    criterion(5, "bifurcation direction", Duration::from_secs(120), || {
        let grid = default_grid();
        let beta = 0.01;
        let cases = [
            (0.0, Sign::Plus),
            (0.5, Sign::Plus),
            (0.0, Sign::Minus),
            (-0.5, Sign::Minus),
        ];
        let mut pass = true;
        let mut parts = Vec::new();
        for (a, sign) in cases {
            let p = with(a, 0.01);
            let l_star = bifurcation_points(1, beta, &p).lambda(sign);
            let (mut num, mut den) = (0.0, 0.0);
            for s in [1e-3, 2e-3, 3e-3, 4e-3] {
                let st = match switch_branch(&grid, 1, sign, beta, s, &p, &SolverOptions::default())
                {
                    Ok(st) => st,
                    Err(e) => return outcome(false, format!("A={a} {sign} s={s}: {e}")),
                };
                num += s * s * (st.lambda - l_star);
                den += s.powi(4);
            }
            let fitted = num / den;
            let predicted = 0.5 * lambda_second_derivative(1, sign, beta, &p);
            let sign_ok = fitted * sign.value() > 0.0;
            let soft = ((fitted - predicted) / predicted).abs();
            pass &= sign_ok;
            parts.push(format!(
                "A={a} {sign}: c={fitted:.4} (λ''/2={predicted:.4}, soft rel {soft:.2}{})",
                if soft <= C5_SOFT_REL { "" } else { " outside soft band" }
            ));
        }
        outcome(pass, parts.join("; "))
    });
}

#[test]
fn criterion_06_stability_exchange() {
    criterion(6, "stability exchange", Duration::from_secs(120), || {
        let grid = default_grid();
        let p = PhysicalParams::default();
        let l_star = bifurcation_points(1, 0.0, &p).lambda_plus;
        let delta = 1e-3;
        let laminar = match trivial_branch(&grid, 1, Sign::Plus, 0.0, &[l_star - delta, l_star + delta], &p)
            .and_then(|b| track_eigenvalue(&grid, b, &p))
        {
            Ok(b) => b,
            Err(e) => return outcome(false, e.to_string()),
        };
        let k: Vec<f64> = laminar
            .points
            .iter()
            .map(|q| q.leading_eigenvalue.unwrap_or(f64::NAN))
            .collect();
        let slope = (k[1] - k[0]) / (2.0 * delta);
        let closed = transversality(1, Sign::Plus, 0.0, &p);
        let slope_err = ((slope - closed) / closed).abs();

        // The same sign change read off the discretised reduced operator.
        let mut fd_signs = Vec::new();
        for lambda in [l_star - delta, l_star + delta] {
            let st = WaveState::trivial(lambda, 0.0, grid.modes());
            let start = nalgebra_unit(grid.modes(), 1);
            match reduced_operator(&grid, &st, &p).and_then(|op| eigenvalue_nearest_zero(&op, &start))
            {
                Ok((theta, _)) => fd_signs.push(theta),
                Err(e) => return outcome(false, e.to_string()),
            }
        }
        let laminar_ok = k[0] > 0.0
            && k[1] < 0.0
            && fd_signs[0] > 0.0
            && fd_signs[1] < 0.0
            && slope < 0.0
            && slope_err <= C6_SLOPE_REL_TOL;

        let pw = with(0.0, 0.01);
        let beta = 0.01;
        let opts = ContinuationOptions {
            ds: 1e-3,
            steps: 19,
            pinned_steps: 20,
            ..ContinuationOptions::default()
        };
        let kind = BranchKind::OneMode {
            n: 1,
            sign: Sign::Plus,
        };
        let branch = switch_branch(&grid, 1, Sign::Plus, beta, 1e-3, &pw, &opts.solver)
            .and_then(|st| continue_branch(&grid, &st, kind, &pw, &opts))
            .and_then(|b| track_eigenvalue(&grid, b, &pw));
        let branch = match branch {
            Ok(b) => b,
            Err(e) => return outcome(false, e.to_string()),
        };
        let s_max = branch.points.iter().map(|q| q.s).fold(0.0, f64::max);
        let theta_min = branch
            .points
            .iter()
            .map(|q| q.leading_eigenvalue.unwrap_or(f64::NAN))
            .fold(f64::INFINITY, f64::min);
        let branch_ok = branch.termination == Termination::Completed
            && s_max >= C6_S_MAX - 1e-12
            && theta_min > 0.0;
        outcome(
            laminar_ok && branch_ok,
            format!(
                "κ(λ*∓δ) = ({:.3e}, {:.3e}), reduced-operator θ = ({:.3e}, {:.3e}), \
                 κ' = {slope:.9} vs {closed:.9} (rel {slope_err:.1e}, tol {C6_SLOPE_REL_TOL:e}); \
                 plus branch {} points to s = {s_max:.3}, min θ₊ = {theta_min:.3e}",
                k[0],
                k[1],
                fd_signs[0],
                fd_signs[1],
                branch.points.len()
            ),
        )
    });
}

fn nalgebra_unit(n: usize, mode: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(n, |i, _| if i + 1 == mode { 1.0 } else { 0.0 })
}

#[test]
fn criterion_07_two_dimensional_kernel() {
    criterion(7, "two-dimensional kernel", Duration::from_secs(5), || {
        let p = PhysicalParams::default();
        let modes = default_grid().modes();
        let pt = match resonance_point(1, 2, Sign::Plus, &p) {
            Ok(pt) => pt,
            Err(e) => return outcome(false, e.to_string()),
        };
        let at = kernel_dimension(pt.lambda, pt.beta, &p, modes);
        let shifted = pt.beta + 0.1;
        let off: Vec<Vec<usize>> = [1, 2]
            .iter()
            .map(|&n| {
                let l = bifurcation_points(n, shifted, &p).lambda(pt.pair);
                kernel_dimension(l, shifted, &p, modes).modes
            })
            .collect();
        outcome(
            at.modes == [1, 2] && off == [vec![1], vec![2]],
            format!(
                "kernel at (λ*, β*₊) = ({:.6}, {:.6}): {:?}; at β*₊+0.1: {:?}",
                pt.lambda, pt.beta, at.modes, off
            ),
        )
    });
}

#[test]
fn criterion_08_two_mode_branch() {
    criterion(8, "two-mode branch", Duration::from_secs(120), || {
        let grid = default_grid();
        let p = PhysicalParams::default();
        let pt = match resonance_point(1, 2, Sign::Plus, &p) {
            Ok(pt) => pt,
            Err(e) => return outcome(false, e.to_string()),
        };
        let s0s = [1e-3, 5e-4, 2.5e-4, 1.25e-4];
        let mut states = Vec::new();
        for s0 in s0s {
            let st = two_mode_branch(
                &grid,
                1,
                2,
                Sign::Plus,
                FRAC_1_SQRT_2,
                FRAC_1_SQRT_2,
                s0,
                &p,
                &SolverOptions::default(),
            );
            match st {
                Ok(st) => states.push(st),
                Err(e) => return outcome(false, format!("s0 = {s0}: {e}")),
            }
        }
        let mode_ratio = states[0].w.coeff(1) / states[0].w.coeff(2);
        let ratio_ok = (mode_ratio - 1.0).abs() <= C8_MODE_RATIO_TOL;

        let offsets: Vec<f64> = states
            .iter()
            .map(|st| (st.lambda - pt.lambda).hypot(st.beta - pt.beta))
            .collect();
        let halvings: Vec<f64> = offsets.windows(2).map(|w| w[0] / w[1]).collect();
        let quadratic = halvings
            .iter()
            .all(|r| (C8_RATIO.0..=C8_RATIO.1).contains(r));

        // Least-squares fit (λ, β) = (λ0, β0) + c s0², extrapolated to s0 = 0.
        let x: Vec<f64> = s0s.iter().map(|s| s * s).collect();
        let fit = |y: Vec<f64>| {
            let n = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            my - sxy / sxx * mx
        };
        let l0 = fit(states.iter().map(|s| s.lambda).collect());
        let b0 = fit(states.iter().map(|s| s.beta).collect());
        let miss = (l0 - pt.lambda).hypot(b0 - pt.beta);
        let extrapolated = miss <= C8_EXTRAPOLATION_REL * offsets[offsets.len() - 1];

        outcome(
            ratio_ok && quadratic && extrapolated,
            format!(
                "a1/a2 = {mode_ratio:.6} (tol {C8_MODE_RATIO_TOL:e}); offset ratios per halving \
                 {halvings:.3?} (band {C8_RATIO:?}); s0² extrapolation misses (λ*, β*₊) by \
                 {miss:.3e}, allowed {:.3e}",
                C8_EXTRAPOLATION_REL * offsets[offsets.len() - 1]
            ),
        )
    });
}

#[test]
fn criterion_09_stagnation_depth() {
    criterion(9, "stagnation depth", Duration::from_secs(60), || {
        let grid = default_grid();
        let p = PhysicalParams::default();
        let beta = 10.0;
        let l_star = bifurcation_points(1, beta, &p).lambda_plus;
        let depth = p.depth - l_star / beta;
        let levels = 129;

        let laminar = WaveState::trivial(l_star, beta, grid.modes());
        let pts = match find_stagnation(&grid, &laminar, &p, levels, None) {
            Ok(pts) => pts,
            Err(e) => return outcome(false, e.to_string()),
        };
        let lam_err = pts
            .iter()
            .map(|q| (q.big_y - depth).abs())
            .fold(0.0, f64::max);
        let laminar_ok = !pts.is_empty() && lam_err <= C9_LAMINAR_TOL;

        let s = 5e-3;
        let wave = match switch_branch(&grid, 1, Sign::Plus, beta, s, &p, &SolverOptions::default())
            .and_then(|st| find_stagnation(&grid, &st, &p, levels, None))
        {
            Ok(pts) => pts,
            Err(e) => return outcome(false, e.to_string()),
        };
        let dx = 2.0 * PI / grid.samples() as f64;
        let mut depth_dev = 0.0f64;
        let mut axis_dev = 0.0f64;
        for q in &wave {
            depth_dev = depth_dev.max((q.big_y - depth).abs());
            axis_dev = axis_dev.max(q.x.min(2.0 * PI - q.x).min((q.x - PI).abs()));
        }
        let wave_ok = !wave.is_empty()
            && wave.iter().all(|q| q.refined && q.big_y > 0.0 && q.big_y < p.depth)
            && depth_dev <= C9_DEPTH_TOL
            && axis_dev <= dx;
        outcome(
            laminar_ok && wave_ok,
            format!(
                "λ*₁,₊ = {l_star:.10}, Y = h-λ/β = {depth:.10}; laminar: {} points, max |Y err| \
                 {lam_err:.1e} (tol {C9_LAMINAR_TOL:e}); s = {s}: {} points, max |Y - depth| \
                 {depth_dev:.2e} (tol {C9_DEPTH_TOL}), max distance to crest/trough line \
                 {axis_dev:.1e} (grid {dx:.1e})",
                pts.len(),
                wave.len()
            ),
        )
    });
}

#[test]
fn criterion_10_flow_consistency() {
    criterion(10, "flow-field consistency", Duration::from_secs(120), || {
        let grid = default_grid();
        let p = with(0.2, 0.1);
        let beta = 1.0;
        let opts = ContinuationOptions {
            ds: 2e-3,
            steps: 19,
            ..ContinuationOptions::default()
        };
        let kind = BranchKind::OneMode {
            n: 1,
            sign: Sign::Plus,
        };
        let branch = match switch_branch(&grid, 1, Sign::Plus, beta, 2e-3, &p, &opts.solver)
            .and_then(|st| continue_branch(&grid, &st, kind, &p, &opts))
        {
            Ok(b) => b,
            Err(e) => return outcome(false, e.to_string()),
        };
        let levels = 129;
        let (mut identity, mut trace) = (0.0f64, 0.0f64);
        let mut sampled = 0;
        for point in branch.points.iter().step_by(5) {
            let flow = match FlowModel::new(&grid, &point.state, &p).and_then(|f| f.sample(levels)) {
                Ok(f) => f,
                Err(e) => return outcome(false, e.to_string()),
            };
            let m = derived_quantities(&point.state, &p).m;
            for q in &flow.points {
                let lhs = q.xi_x * q.xi_x + q.xi_y * q.xi_y;
                let rhs = (q.psi_x * q.psi_x + q.psi_y * q.psi_y) * (q.v_x * q.v_x + q.v_y * q.v_y);
                let scale = lhs.abs().max(rhs.abs());
                if scale > 0.0 {
                    identity = identity.max((lhs - rhs).abs() / scale);
                }
            }
            for j in 0..flow.samples {
                trace = trace.max(flow.at(levels - 1, j).xi.abs());
                trace = trace.max((flow.at(0, j).xi + m).abs());
            }
            sampled += 1;
        }
        let amp = branch.points.last().map_or(0.0, |q| q.state.w.max_abs());
        outcome(
            branch.points.len() == 20
                && identity <= C10_IDENTITY_REL_TOL
                && trace <= C10_TRACE_TOL,
            format!(
                "{} branch points (max |w| {amp:.3e}), {sampled} sampled; gradient identity max \
                 rel err {identity:.1e} (tol {C10_IDENTITY_REL_TOL:e}); boundary traces max err \
                 {trace:.1e} (tol {C10_TRACE_TOL:e})",
                branch.points.len()
            ),
        )
    });
}
