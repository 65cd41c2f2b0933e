//! Flow reconstruction in the strip `-h ≤ y ≤ 0` and its conformal image:
//! harmonic extensions, the map `(U, V)`, the stream function `ξ = ψ(U, V)`,
//! the physical velocity, stagnation points and critical layers.
//!
//! Every field here comes from an even boundary function, so the harmonic
//! extensions are cosine series `Σ a_k cos(kx) S_k(y)` with
//! `S_k = sinh(k(y+h))/sinh(kh)`; values at any point are evaluated
//! directly from the series.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residual::{derived_quantities, PhysicalParams, WaveState, DEGENERACY_FLOOR};
use crate::spectral::{PeriodicField, SpectralGrid};

pub const DEFAULT_LEVELS: usize = 129;

/// Relative stagnation tolerance; the absolute value is this times the
/// largest `|∇ψ|` on the grid.
pub const STAGNATION_REL_TOL: f64 = 1e-6;

/// Samples on the tensor grid `x_j = 2πj/M`, `y_k = -h + hk/(L-1)`. Row `k`
/// holds level `y_k`, so the first row is the bed and the last the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct StripField2D {
    values: Vec<f64>,
    samples: usize,
    levels: usize,
    depth: f64,
}

impl StripField2D {
    pub fn new(values: Vec<f64>, samples: usize, levels: usize, depth: f64) -> Result<Self> {
        if values.len() != samples * levels {
            return Err(Error::Shape(format!(
                "{} values for a {levels}x{samples} strip grid",
                values.len()
            )));
        }
        Ok(Self {
            values,
            samples,
            levels,
            depth,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn y(&self, k: usize) -> f64 {
        level_y(k, self.levels, self.depth)
    }

    pub fn x(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.samples as f64
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.samples + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.samples..(k + 1) * self.samples]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn level_y(k: usize, levels: usize, h: f64) -> f64 {
    if k + 1 == levels {
        0.0
    } else {
        -h + h * k as f64 / (levels - 1) as f64
    }
}

fn check_levels(levels: usize) -> Result<()> {
    if levels < 2 {
        return Err(Error::Parameter(format!("need at least 2 levels, got {levels}")));
    }
    Ok(())
}

/// `sinh(k(y+h))/sinh(kh)` and `cosh(k(y+h))/sinh(kh)` for `k ≥ 1`,
/// `-h ≤ y ≤ 0`, as ratios of decaying exponentials.
fn strip_profiles(k: f64, y: f64, h: f64) -> (f64, f64) {
    let lead = (k * y).exp();
    let tail = (-2.0 * k * (y + h)).exp();
    let bottom = -(-2.0 * k * h).exp_m1();
    (
        lead * -(-2.0 * k * (y + h)).exp_m1() / bottom,
        lead * (1.0 + tail) / bottom,
    )
}

/// Harmonic function in the strip with even boundary data on `y = 0` and
/// zero on `y = -h`, together with its harmonic conjugate.
#[derive(Debug, Clone)]
struct CosineExtension {
    mean: f64,
    /// `a_k`, `k = 1..K`.
    coeffs: Vec<f64>,
    h: f64,
}

/// Values and first derivatives of an extension and of its conjugate at
/// one point.
#[derive(Debug, Clone, Copy, Default)]
struct Local {
    value: f64,
    dx: f64,
    dy: f64,
    conj: f64,
}

impl CosineExtension {
    fn new(grid: &SpectralGrid, boundary: &PeriodicField, h: f64) -> Self {
        let mut coeffs = grid.cosine_coefficients_all(boundary);
        let mean = coeffs.remove(0);
        Self { mean, coeffs, h }
    }

    fn eval(&self, x: f64, y: f64) -> Local {
        let h = self.h;
        let mut out = Local {
            value: self.mean * (y + h) / h,
            dx: 0.0,
            dy: self.mean / h,
            conj: self.mean * x / h,
        };
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let k = (i + 1) as f64;
            let (s, c) = strip_profiles(k, y, h);
            let (sin, cos) = (k * x).sin_cos();
            out.value += a * cos * s;
            out.dx -= a * k * sin * s;
            out.dy += a * k * cos * c;
            out.conj += a * sin * c;
        }
        out
    }

    /// Same as `eval` over a full level, using a table of `cos`/`sin` at the
    /// nodes.
    fn eval_level(&self, y: f64, table: &TrigTable) -> Vec<Local> {
        let h = self.h;
        let m = table.samples;
        let mut out: Vec<Local> = (0..m)
            .map(|j| Local {
                value: self.mean * (y + h) / h,
                dx: 0.0,
                dy: self.mean / h,
                conj: self.mean * table.node(j) / h,
            })
            .collect();
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let k = i + 1;
            let kf = k as f64;
            let (s, c) = strip_profiles(kf, y, h);
            for (j, o) in out.iter_mut().enumerate() {
                let idx = (k * j) % m;
                let (cos, sin) = (table.cos[idx], table.sin[idx]);
                o.value += a * cos * s;
                o.dx -= a * kf * sin * s;
                o.dy += a * kf * cos * c;
                o.conj += a * sin * c;
            }
        }
        out
    }
}

struct TrigTable {
    samples: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl TrigTable {
    fn new(samples: usize) -> Self {
        let (sin, cos) = (0..samples)
            .map(|j| (2.0 * PI * j as f64 / samples as f64).sin_cos())
            .unzip();
        Self { samples, cos, sin }
    }

    fn node(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.samples as f64
    }
}

/// Harmonic extension of `boundary` into the strip with zero bed values.
pub fn harmonic_extension(
    grid: &SpectralGrid,
    boundary: &PeriodicField,
    h: f64,
    levels: usize,
) -> Result<StripField2D> {
    check_levels(levels)?;
    boundary.check_even()?;
    let ext = CosineExtension::new(grid, boundary, h);
    let table = TrigTable::new(grid.samples());
    let mut values = Vec::with_capacity(levels * grid.samples());
    for k in 0..levels {
        values.extend(ext.eval_level(level_y(k, levels, h), &table).iter().map(|l| l.value));
    }
    StripField2D::new(values, grid.samples(), levels, h)
}

/// Vertical derivative of the harmonic extension on `y = 0`.
pub fn surface_normal_derivative(
    grid: &SpectralGrid,
    boundary: &PeriodicField,
    h: f64,
) -> Result<PeriodicField> {
    boundary.check_even()?;
    let ext = CosineExtension::new(grid, boundary, h);
    let table = TrigTable::new(grid.samples());
    PeriodicField::new(ext.eval_level(0.0, &table).iter().map(|l| l.dy).collect())
}

/// Everything known about the flow at one strip point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub xi: f64,
    pub xi_x: f64,
    pub xi_y: f64,
    pub psi_x: f64,
    pub psi_y: f64,
}

impl FlowPoint {
    pub fn speed(&self) -> f64 {
        self.psi_x.hypot(self.psi_y)
    }
}

/// The reconstructed flow of one wave state.
#[derive(Debug, Clone)]
pub struct FlowModel {
    surface: CosineExtension,
    eta: CosineExtension,
    u_offset: f64,
    ga: f64,
    beta: f64,
    m: f64,
    h: f64,
    samples: usize,
    laminar: bool,
}

impl FlowModel {
    pub fn new(grid: &SpectralGrid, state: &WaveState, params: &PhysicalParams) -> Result<Self> {
        let h = params.depth;
        let v = state.surface(grid, params);
        let m = derived_quantities(state, params).m;
        let ga = params.ga();
        let beta = state.beta;
        let e = v.map(|s| m - ga * s * s * s / 6.0 - beta * s * s / 2.0);
        let surface = CosineExtension::new(grid, &v, h);
        let mut model = Self {
            surface,
            eta: CosineExtension::new(grid, &e, h),
            u_offset: 0.0,
            ga,
            beta,
            m,
            h,
            samples: grid.samples(),
            laminar: state.w.max_abs() == 0.0,
        };
        model.u_offset = -model.surface.eval(0.0, 0.0).conj;
        Ok(model)
    }

    pub fn depth(&self) -> f64 {
        self.h
    }

    pub fn is_laminar(&self) -> bool {
        self.laminar
    }

    /// Combines the surface and `η` extensions at a point. `U_x`, `U_y`
    /// come from the conjugate series, so Cauchy–Riemann is a genuine check.
    fn combine(&self, x: f64, y: f64, s: Local, e: Local, u_x: f64, u_y: f64) -> Result<FlowPoint> {
        let (v, v_x, v_y) = (s.value, s.dx, s.dy);
        let lift = self.ga * v * v / 2.0 + self.beta * v;
        let xi = e.value + self.ga * v * v * v / 6.0 + self.beta * v * v / 2.0 - self.m;
        let xi_x = e.dx + lift * v_x;
        let xi_y = e.dy + lift * v_y;
        let det = u_x * v_y - v_x * u_y;
        if !(det.abs() >= DEGENERACY_FLOOR) {
            return Err(Error::Degeneracy { min: det.abs() });
        }
        Ok(FlowPoint {
            x,
            y,
            u: s.conj + self.u_offset,
            v,
            u_x,
            u_y,
            v_x,
            v_y,
            xi,
            xi_x,
            xi_y,
            psi_x: (xi_x * v_y - v_x * xi_y) / det,
            psi_y: (u_x * xi_y - xi_x * u_y) / det,
        })
    }

    /// `(U_x, U_y)` from the conjugate series.
    fn conjugate_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let h = self.h;
        let mut ux = self.surface.mean / h;
        let mut uy = 0.0;
        for (i, &a) in self.surface.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let k = (i + 1) as f64;
            let (s, c) = strip_profiles(k, y, h);
            let (sin, cos) = (k * x).sin_cos();
            ux += a * k * cos * c;
            uy += a * k * sin * s;
        }
        (ux, uy)
    }

    pub fn point(&self, x: f64, y: f64) -> Result<FlowPoint> {
        let (u_x, u_y) = self.conjugate_gradient(x, y);
        self.combine(x, y, self.surface.eval(x, y), self.eta.eval(x, y), u_x, u_y)
    }

    /// All grid points of one level.
    fn level(&self, y: f64, table: &TrigTable) -> Result<Vec<FlowPoint>> {
        let s = self.surface.eval_level(y, table);
        let e = self.eta.eval_level(y, table);
        let h = self.h;
        // U_x, U_y from the conjugate series over the level.
        let m = table.samples;
        let mut ux = vec![self.surface.mean / h; m];
        let mut uy = vec![0.0; m];
        for (i, &a) in self.surface.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let k = i + 1;
            let kf = k as f64;
            let (sk, ck) = strip_profiles(kf, y, h);
            for j in 0..m {
                let idx = (k * j) % m;
                ux[j] += a * kf * table.cos[idx] * ck;
                uy[j] += a * kf * table.sin[idx] * sk;
            }
        }
        (0..m)
            .map(|j| self.combine(table.node(j), y, s[j], e[j], ux[j], uy[j]))
            .collect()
    }

    /// Flow on the full strip grid, row `k` at level `y_k`.
    pub fn sample(&self, levels: usize) -> Result<FlowGrid> {
        check_levels(levels)?;
        let table = TrigTable::new(self.samples);
        let mut points = Vec::with_capacity(levels * self.samples);
        for k in 0..levels {
            points.extend(self.level(level_y(k, levels, self.h), &table)?);
        }
        Ok(FlowGrid {
            points,
            samples: self.samples,
            levels,
            depth: self.h,
        })
    }
}

/// [`FlowPoint`]s on the strip grid.
#[derive(Debug, Clone)]
pub struct FlowGrid {
    pub points: Vec<FlowPoint>,
    pub samples: usize,
    pub levels: usize,
    pub depth: f64,
}

impl FlowGrid {
    pub fn at(&self, k: usize, j: usize) -> &FlowPoint {
        &self.points[k * self.samples + j]
    }

    pub fn field(&self, f: impl Fn(&FlowPoint) -> f64) -> StripField2D {
        StripField2D {
            values: self.points.iter().map(f).collect(),
            samples: self.samples,
            levels: self.levels,
            depth: self.depth,
        }
    }

    /// `max|U_x - V_y| + max|U_y + V_x|`.
    pub fn cauchy_riemann_residual(&self) -> f64 {
        let a = self.points.iter().fold(0.0f64, |m, p| m.max((p.u_x - p.v_y).abs()));
        let b = self.points.iter().fold(0.0f64, |m, p| m.max((p.u_y + p.v_x).abs()));
        a + b
    }
}

/// The conformal map `(U, V)` of the strip onto the fluid domain.
pub fn conformal_map(
    grid: &SpectralGrid,
    v: &PeriodicField,
    h: f64,
    levels: usize,
) -> Result<(StripField2D, StripField2D)> {
    check_levels(levels)?;
    v.check_even()?;
    let mut state = WaveState::trivial(0.0, 0.0, grid.modes());
    let mean_v = crate::spectral::mean(v);
    if (mean_v - h).abs() > 1e-10 * h {
        return Err(Error::Parameter(format!(
            "surface mean {mean_v} differs from conformal depth {h}"
        )));
    }
    state.w = grid.to_spectrum(&v.map(|s| s - h))?;
    state.w.a0 = 0.0;
    let params = PhysicalParams {
        depth: h,
        ..PhysicalParams::default()
    };
    let flow = FlowModel::new(grid, &state, &params)?.sample(levels)?;
    Ok((flow.field(|p| p.u), flow.field(|p| p.v)))
}

/// `ξ = ψ(U, V)` on the strip.
pub fn stream_function(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
    levels: usize,
) -> Result<StripField2D> {
    Ok(FlowModel::new(grid, state, params)?.sample(levels)?.field(|p| p.xi))
}

/// Physical velocity components `(ψ_Y, ψ_X)` at the strip grid points.
pub fn velocity_field(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
    levels: usize,
) -> Result<(StripField2D, StripField2D)> {
    let flow = FlowModel::new(grid, state, params)?.sample(levels)?;
    Ok((flow.field(|p| p.psi_y), flow.field(|p| p.psi_x)))
}

/// Heights `0 ≤ Y ≤ h` where the laminar velocity
/// `(Y - h)(Ag(Y + h)/2 + β) + λ` vanishes.
pub fn laminar_stagnation_depths(lambda: f64, beta: f64, params: &PhysicalParams) -> Vec<f64> {
    let h = params.depth;
    let a = params.ga() / 2.0;
    // a Y² + β Y + (λ - βh - a h²) = 0
    let c = lambda - beta * h - a * h * h;
    let mut roots = Vec::new();
    if a == 0.0 {
        if beta != 0.0 {
            roots.push(-c / beta);
        }
    } else {
        let disc = beta * beta - 4.0 * a * c;
        if disc >= 0.0 {
            let sign = if beta < 0.0 { -1.0 } else { 1.0 };
            let q = -0.5 * (beta + sign * disc.sqrt());
            if q != 0.0 {
                roots.push(q / a);
                roots.push(c / q);
            } else {
                roots.push(0.0);
            }
        }
    }
    roots.retain(|y| (0.0..=h).contains(y));
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StagnationKind {
    Saddle,
    Center,
    Degenerate,
    /// A point of a horizontal stagnation line of a laminar flow.
    Laminar,
}

impl std::fmt::Display for StagnationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StagnationKind::Saddle => "saddle",
            StagnationKind::Center => "center",
            StagnationKind::Degenerate => "degenerate",
            StagnationKind::Laminar => "laminar",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagnationPoint {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "X")]
    pub big_x: f64,
    #[serde(rename = "Y")]
    pub big_y: f64,
    pub grad_norm: f64,
    pub psi: f64,
    pub kind: StagnationKind,
    /// False when Newton refinement did not reach the tolerance; the point
    /// is then the best grid candidate.
    pub refined: bool,
}

fn wrap_x(x: f64) -> f64 {
    let t = x.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Stagnation points of the flow. A point is accepted when `|∇ψ|` is below
/// `rel_tol` (default [`STAGNATION_REL_TOL`]) times its largest grid value.
pub fn find_stagnation(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
    levels: usize,
    rel_tol: Option<f64>,
) -> Result<Vec<StagnationPoint>> {
    let model = FlowModel::new(grid, state, params)?;
    let flow = model.sample(levels)?;
    let max_grad = flow.points.iter().fold(0.0f64, |m, p| m.max(p.speed()));
    let tol = rel_tol.unwrap_or(STAGNATION_REL_TOL) * max_grad;
    if model.is_laminar() {
        return laminar_stagnation(&model, state, params, tol);
    }

    let m = flow.samples;
    let speed = |k: usize, j: usize| flow.at(k, j).speed();
    let mut found: Vec<StagnationPoint> = Vec::new();
    for k in 0..levels {
        for j in 0..m {
            let here = speed(k, j);
            if here >= 0.05 * max_grad {
                continue;
            }
            let mut is_min = true;
            'nb: for dk in [-1i64, 0, 1] {
                let kk = k as i64 + dk;
                if kk < 0 || kk >= levels as i64 {
                    continue;
                }
                for dj in [-1i64, 0, 1] {
                    if dk == 0 && dj == 0 {
                        continue;
                    }
                    let jj = (j as i64 + dj).rem_euclid(m as i64) as usize;
                    let other = speed(kk as usize, jj);
                    // Ties go to the lower index so a plateau yields one seed.
                    let later = (kk as usize, jj) > (k, j);
                    if other < here || (other == here && !later) {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if !is_min {
                continue;
            }
            let seed = flow.at(k, j);
            let spacing = 2.0 * PI / m as f64;
            let point = match refine(&model, seed.x, seed.y, tol) {
                Some(p) => classify(&model, p, true)?,
                None => classify(&model, *seed, false)?,
            };
            let duplicate = found.iter().any(|q| {
                let dx = (q.x - point.x).abs();
                dx.min(2.0 * PI - dx) < 0.5 * spacing && (q.y - point.y).abs() < 1e-6 * model.h
                    && q.refined == point.refined
            });
            if !duplicate {
                found.push(point);
            }
        }
    }
    found.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    Ok(found)
}

fn laminar_stagnation(
    model: &FlowModel,
    state: &WaveState,
    params: &PhysicalParams,
    tol: f64,
) -> Result<Vec<StagnationPoint>> {
    let h = params.depth;
    let mut out = Vec::new();
    for depth in laminar_stagnation_depths(state.lambda, state.beta, params) {
        let y = depth - h;
        let column = model.point(0.0, y)?;
        // Newton on ψ_Y along the column, from the closed-form root.
        let mut yy = y;
        for _ in 0..5 {
            let d = 1e-6 * h;
            let f = model.point(0.0, yy)?.psi_y;
            let fp = (model.point(0.0, yy + d)?.psi_y - model.point(0.0, yy - d)?.psi_y) / (2.0 * d);
            if fp == 0.0 {
                break;
            }
            let next = (yy - f / fp).clamp(-h, 0.0);
            if next == yy {
                break;
            }
            yy = next;
        }
        let p = model.point(0.0, yy)?;
        let grad = p.speed();
        let refined = grad < tol;
        for j in 0..model.samples {
            let x = 2.0 * PI * j as f64 / model.samples as f64;
            out.push(StagnationPoint {
                x,
                y: yy,
                big_x: x,
                big_y: p.v,
                grad_norm: grad,
                psi: column.xi,
                kind: StagnationKind::Laminar,
                refined,
            });
        }
    }
    Ok(out)
}

/// 2-D Newton on `(ψ_X, ψ_Y) = 0` in strip coordinates, with a
/// finite-difference Jacobian.
fn refine(model: &FlowModel, x0: f64, y0: f64, tol: f64) -> Option<FlowPoint> {
    let h = model.h;
    let (mut x, mut y) = (x0, y0);
    for _ in 0..50 {
        let p = model.point(x, y).ok()?;
        if p.speed() < tol {
            return Some(p);
        }
        let (jac, _) = velocity_jacobian(model, x, y).ok()?;
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = (jac[1][1] * p.psi_x - jac[0][1] * p.psi_y) / det;
        let dy = (jac[0][0] * p.psi_y - jac[1][0] * p.psi_x) / det;
        x = wrap_x(x - dx);
        y = (y - dy).clamp(-h, 0.0);
    }
    let p = model.point(x, y).ok()?;
    (p.speed() < tol).then_some(p)
}

/// `∂(ψ_X, ψ_Y)/∂(x, y)` by central differences.
fn velocity_jacobian(model: &FlowModel, x: f64, y: f64) -> Result<([[f64; 2]; 2], f64)> {
    let h = model.h;
    let d = 1e-6 * h;
    let yp = (y + d).min(0.0);
    let ym = (y - d).max(-h);
    let px = model.point(x + d, y)?;
    let mx = model.point(x - d, y)?;
    let py = model.point(x, yp)?;
    let my = model.point(x, ym)?;
    let jac = [
        [
            (px.psi_x - mx.psi_x) / (2.0 * d),
            (py.psi_x - my.psi_x) / (yp - ym),
        ],
        [
            (px.psi_y - mx.psi_y) / (2.0 * d),
            (py.psi_y - my.psi_y) / (yp - ym),
        ],
    ];
    let conformal = px.u_x * px.v_y - px.v_x * px.u_y;
    Ok((jac, conformal))
}

fn classify(model: &FlowModel, p: FlowPoint, refined: bool) -> Result<StagnationPoint> {
    // The strip Jacobian of ∇ψ is the physical Hessian times the conformal
    // Jacobian, whose determinant is positive.
    let (jac, _) = velocity_jacobian(model, p.x, p.y)?;
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let scale = jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).powi(2);
    let kind = if det.abs() <= 1e-8 * scale {
        StagnationKind::Degenerate
    } else if det < 0.0 {
        StagnationKind::Saddle
    } else {
        StagnationKind::Center
    };
    Ok(StagnationPoint {
        x: p.x,
        y: p.y,
        big_x: p.u,
        big_y: p.v,
        grad_norm: p.speed(),
        psi: p.xi,
        kind,
        refined,
    })
}

/// One connected component of a level set, as strip points with their
/// physical images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourCurve {
    /// Level actually traced.
    pub level: f64,
    /// `(x, y, X, Y)` along the curve.
    pub points: Vec<[f64; 4]>,
    pub closed: bool,
    /// Whether the curve winds once around the periodic strip.
    pub wraps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLayer {
    /// `ψ` at the stagnation point(s) defining this layer.
    pub psi: f64,
    pub curves: Vec<ContourCurve>,
    /// Closed recirculation cells exist between the saddles of this layer.
    pub cats_eye: bool,
}

/// Level sets of `ψ` through the given stagnation points. Saddle levels
/// are traced at `ψ_s ± 1e-12·scale` to split the separatrix cleanly, and
/// both traces are returned. Laminar stagnation lines are returned exactly.
pub fn critical_layer(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
    stagnation: &[StagnationPoint],
    levels: usize,
) -> Result<Vec<CriticalLayer>> {
    if stagnation.is_empty() {
        return Ok(Vec::new());
    }
    let model = FlowModel::new(grid, state, params)?;
    if model.is_laminar() {
        return laminar_layers(&model, stagnation);
    }
    let flow = model.sample(levels)?;
    let xi = flow.field(|p| p.xi);
    let scale = xi.max_abs().max(model.m.abs()).max(f64::MIN_POSITIVE);

    let saddles: Vec<&StagnationPoint> = stagnation
        .iter()
        .filter(|p| p.kind == StagnationKind::Saddle)
        .collect();
    let centers: Vec<&StagnationPoint> = stagnation
        .iter()
        .filter(|p| p.kind == StagnationKind::Center)
        .collect();
    let anchors: Vec<&StagnationPoint> = if saddles.is_empty() {
        stagnation.iter().collect()
    } else {
        saddles
    };

    let mut layer_levels: Vec<f64> = Vec::new();
    for p in anchors {
        if !layer_levels
            .iter()
            .any(|l| (l - p.psi).abs() <= 1e-9 * scale)
        {
            layer_levels.push(p.psi);
        }
    }
    layer_levels.sort_by(f64::total_cmp);

    let mut out = Vec::new();
    for psi in layer_levels {
        let mut curves = Vec::new();
        for offset in [-1e-12 * scale, 1e-12 * scale] {
            curves.extend(trace_contours(&model, &xi, psi + offset)?);
        }
        let cats_eye = centers.iter().any(|c| {
            let mid = 0.5 * (c.psi + psi);
            trace_contours(&model, &xi, mid)
                .map(|cs| cs.iter().any(|k| k.closed && !k.wraps))
                .unwrap_or(false)
        });
        out.push(CriticalLayer {
            psi,
            curves,
            cats_eye,
        });
    }
    Ok(out)
}

fn laminar_layers(model: &FlowModel, stagnation: &[StagnationPoint]) -> Result<Vec<CriticalLayer>> {
    let mut ys: Vec<f64> = stagnation.iter().map(|p| p.y).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    ys.iter()
        .map(|&y| {
            let points = (0..=model.samples)
                .map(|j| {
                    let x = 2.0 * PI * j as f64 / model.samples as f64;
                    let p = model.point(x, y)?;
                    Ok([x, y, p.u, p.v])
                })
                .collect::<Result<Vec<_>>>()?;
            let psi = model.point(0.0, y)?.xi;
            Ok(CriticalLayer {
                psi,
                curves: vec![ContourCurve {
                    level: psi,
                    points,
                    closed: true,
                    wraps: true,
                }],
                cats_eye: false,
            })
        })
        .collect()
}

/// Edge of the strip grid: horizontal `(k, j)→(k, j+1)` or vertical
/// `(k, j)→(k+1, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Marching squares on the periodic strip grid, with segments chained
/// into curves.
fn trace_contours(model: &FlowModel, field: &StripField2D, level: f64) -> Result<Vec<ContourCurve>> {
    let m = field.samples();
    let l = field.levels();
    let f = |k: usize, j: usize| field.get(k, j % m) - level;
    let dx = 2.0 * PI / m as f64;

    // Crossing position on each edge, with x unwrapped relative to the
    // edge's own start column.
    let crossing = |e: Edge| -> (f64, f64) {
        match e {
            Edge::H(k, j) => {
                let (a, b) = (f(k, j), f(k, j + 1));
                let t = a / (a - b);
                ((j as f64 + t) * dx, field.y(k))
            }
            Edge::V(k, j) => {
                let (a, b) = (f(k, j), f(k + 1, j));
                let t = a / (a - b);
                (j as f64 * dx, field.y(k) + t * (field.y(k + 1) - field.y(k)))
            }
        }
    };
    let cuts = |e: Edge| -> bool {
        let (a, b) = match e {
            Edge::H(k, j) => (f(k, j), f(k, j + 1)),
            Edge::V(k, j) => (f(k, j), f(k + 1, j)),
        };
        (a < 0.0) != (b < 0.0)
    };

    let mut links: HashMap<Edge, Vec<Edge>> = HashMap::new();
    let mut link = |a: Edge, b: Edge| {
        links.entry(a).or_default().push(b);
        links.entry(b).or_default().push(a);
    };
    for k in 0..l - 1 {
        for j in 0..m {
            let jn = (j + 1) % m;
            let bottom = Edge::H(k, j);
            let top = Edge::H(k + 1, j);
            let left = Edge::V(k, j);
            let right = Edge::V(k, jn);
            let cut: Vec<Edge> = [bottom, right, top, left]
                .into_iter()
                .filter(|&e| cuts(e))
                .collect();
            match cut.len() {
                2 => link(cut[0], cut[1]),
                4 => {
                    let center =
                        0.25 * (f(k, j) + f(k, j + 1) + f(k + 1, j) + f(k + 1, j + 1));
                    // Pair edges so that the segments separate corners whose
                    // sign differs from the centre.
                    if (center < 0.0) == (f(k, j) < 0.0) {
                        link(bottom, right);
                        link(top, left);
                    } else {
                        link(bottom, left);
                        link(top, right);
                    }
                }
                _ => {}
            }
        }
    }

    let mut keys: Vec<Edge> = links.keys().copied().collect();
    keys.sort_by_key(|e| match *e {
        Edge::H(k, j) => (0, k, j),
        Edge::V(k, j) => (1, k, j),
    });
    let mut visited: HashMap<Edge, bool> = HashMap::new();
    let mut curves = Vec::new();
    for start in keys {
        if visited.get(&start).copied().unwrap_or(false) {
            continue;
        }
        // Walk to one end first if the curve is open.
        let mut first = start;
        {
            let mut prev: Option<Edge> = None;
            let mut cur = start;
            loop {
                let next = links[&cur].iter().copied().find(|&n| Some(n) != prev);
                match next {
                    Some(n) if links[&cur].len() == 2 && n != start => {
                        prev = Some(cur);
                        cur = n;
                    }
                    _ => break,
                }
            }
            if links[&cur].len() == 1 {
                first = cur;
            }
        }
        let mut chain = vec![first];
        visited.insert(first, true);
        let mut prev: Option<Edge> = None;
        let mut cur = first;
        let mut closed = false;
        loop {
            let next = links[&cur].iter().copied().find(|&n| Some(n) != prev);
            match next {
                Some(n) if n == first && chain.len() > 2 => {
                    closed = true;
                    break;
                }
                Some(n) if !visited.get(&n).copied().unwrap_or(false) => {
                    visited.insert(n, true);
                    chain.push(n);
                    prev = Some(cur);
                    cur = n;
                }
                _ => break,
            }
        }
        // Unwrap x along the chain.
        let mut points = Vec::with_capacity(chain.len() + 1);
        let mut last_x: Option<f64> = None;
        for e in &chain {
            let (mut x, y) = crossing(*e);
            if let Some(px) = last_x {
                while x - px > PI {
                    x -= 2.0 * PI;
                }
                while px - x > PI {
                    x += 2.0 * PI;
                }
            }
            last_x = Some(x);
            let p = model.point(x, y)?;
            points.push([x, y, p.u, p.v]);
        }
        let mut wraps = false;
        if closed {
            let (x0, y0) = crossing(chain[0]);
            let xl = last_x.unwrap_or(x0);
            let mut xe = x0;
            while xe - xl > PI {
                xe -= 2.0 * PI;
            }
            while xl - xe > PI {
                xe += 2.0 * PI;
            }
            wraps = (xe - x0).abs() > PI;
            let p = model.point(xe, y0)?;
            points.push([xe, y0, p.u, p.v]);
        }
        curves.push(ContourCurve {
            level,
            points,
            closed,
            wraps,
        });
    }
    Ok(curves)
}
