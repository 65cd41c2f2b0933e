//! The steady-wave residual in bifurcation form and in the original
//! `(v, Q, m)` variables, its finite-difference Jacobian, and the geometric
//! side conditions on the surface.
//!
//! Unknowns of the truncated problem are `(μ, a_1..a_N)` plus optionally
//! `λ` and/or `β`. The residual is projected onto `cos(kx)`, `k = 0..N`, so
//! the mean-mode equation pairs with `μ`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{mean, CosineSpectrum, PeriodicField, SpectralGrid};

/// Lower bound on `(1 + C_h(v'))² + v'²` below which the conformal map is
/// treated as degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-8;

/// Physical constants. `strat_slope` and `ref_density` are the `A` and `B`
/// of the linear density law `ρ(-ψ) = -Aψ + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub g: f64,
    pub strat_slope: f64,
    pub ref_density: f64,
    pub sigma: f64,
    pub depth: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            g: 9.8,
            strat_slope: 0.0,
            ref_density: 1.0,
            sigma: 0.1,
            depth: 1.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.g,
            self.strat_slope,
            self.ref_density,
            self.sigma,
            self.depth,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Parameter("physical parameters must be finite".into()));
        }
        if self.g <= 0.0 {
            return Err(Error::Parameter(format!("g must be positive, got {}", self.g)));
        }
        if self.ref_density <= 0.0 {
            return Err(Error::Parameter(format!(
                "reference density B must be positive, got {}",
                self.ref_density
            )));
        }
        if self.depth <= 0.0 {
            return Err(Error::Parameter(format!(
                "depth h must be positive, got {}",
                self.depth
            )));
        }
        if self.sigma < 0.0 {
            return Err(Error::Parameter(format!(
                "surface tension must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// `gA`, the stratification term that appears throughout.
    pub fn ga(&self) -> f64 {
        self.g * self.strat_slope
    }

    /// `gB`.
    pub fn gb(&self) -> f64 {
        self.g * self.ref_density
    }
}

/// A point `(λ, β, μ, w)`; the surface is `v = h + w` with `[w] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub lambda: f64,
    pub beta: f64,
    pub mu: f64,
    pub w: CosineSpectrum,
}

impl WaveState {
    pub fn trivial(lambda: f64, beta: f64, modes: usize) -> Self {
        Self {
            lambda,
            beta,
            mu: 0.0,
            w: CosineSpectrum::zeros(modes),
        }
    }

    pub fn modes(&self) -> usize {
        self.w.truncation()
    }

    pub fn is_trivial(&self) -> bool {
        self.mu == 0.0 && self.w.max_abs() == 0.0
    }

    pub fn w_field(&self, grid: &SpectralGrid) -> PeriodicField {
        grid.from_spectrum(&self.w)
    }

    /// Surface `v = h + w` on the grid.
    pub fn surface(&self, grid: &SpectralGrid, params: &PhysicalParams) -> PeriodicField {
        self.w_field(grid).map(|w| w + params.depth)
    }

    fn check(&self, grid: &SpectralGrid) -> Result<()> {
        if self.w.truncation() != grid.modes() {
            return Err(Error::Shape(format!(
                "state has {} modes, grid truncation is {}",
                self.w.truncation(),
                grid.modes()
            )));
        }
        if self.w.a0.abs() >= 1e-12 {
            return Err(Error::NonzeroMean { mean: self.w.a0 });
        }
        let finite = self.lambda.is_finite()
            && self.beta.is_finite()
            && self.mu.is_finite()
            && self.w.a.iter().all(|a| a.is_finite());
        if !finite {
            return Err(Error::NonFinite("WaveState"));
        }
        Ok(())
    }
}

/// Bernoulli constant `Q` and relative mass flux `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub q: f64,
    pub m: f64,
}

pub fn derived_quantities(state: &WaveState, params: &PhysicalParams) -> DerivedQuantities {
    let h = params.depth;
    DerivedQuantities {
        q: state.mu + 2.0 * params.gb() * h + state.lambda * state.lambda,
        m: h * (state.lambda - state.beta * h / 2.0 - params.ga() * h * h / 3.0),
    }
}

/// Inverse of the flux map: `λ = m/h + βh/2 + gAh²/3`.
pub fn lambda_from_flux(m: f64, beta: f64, params: &PhysicalParams) -> f64 {
    let h = params.depth;
    m / h + beta * h / 2.0 + params.ga() * h * h / 3.0
}

/// Inverse of the head map: `μ = Q - 2gBh - λ²`.
pub fn mu_from_head(q: f64, lambda: f64, params: &PhysicalParams) -> f64 {
    q - 2.0 * params.gb() * params.depth - lambda * lambda
}

/// Samples of a surface perturbation and its derivatives and strip
/// transforms, shared by the residual and curvature evaluations.
struct SurfaceTerms {
    d1: Vec<f64>,
    d2: Vec<f64>,
    c_d1: Vec<f64>,
    c_d2: Vec<f64>,
    den: Vec<f64>,
}

impl SurfaceTerms {
    fn new(grid: &SpectralGrid, f: &[f64], h: f64) -> Result<Self> {
        let d1 = grid.derivative_samples(f, 1);
        let d2 = grid.derivative_samples(f, 2);
        let c_d1 = grid.hilbert_samples(&d1, h);
        let c_d2 = grid.hilbert_samples(&d2, h);
        let den: Vec<f64> = d1
            .iter()
            .zip(&c_d1)
            .map(|(&p, &c)| p * p + (1.0 + c) * (1.0 + c))
            .collect();
        let min = den.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= DEGENERACY_FLOOR) {
            return Err(Error::Degeneracy { min });
        }
        Ok(Self {
            d1,
            d2,
            c_d1,
            c_d2,
            den,
        })
    }

    /// `v'' + C_h(v')v'' - v'C_h(v'')` at node `j`.
    fn curvature_numerator(&self, j: usize) -> f64 {
        self.d2[j] + self.c_d1[j] * self.d2[j] - self.d1[j] * self.c_d2[j]
    }
}

fn pointwise(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn sample_mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Untruncated residual samples of the bifurcation form.
fn residual_samples(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
) -> Result<Vec<f64>> {
    let h = params.depth;
    let ga = params.ga();
    let gb = params.gb();
    let (lambda, beta, mu) = (state.lambda, state.beta, state.mu);

    let w = state.w_field(grid).into_samples();
    let t = SurfaceTerms::new(grid, &w, h)?;
    let w2: Vec<f64> = w.iter().map(|v| v * v).collect();
    let mean_w2 = sample_mean(&w2);
    let mean_w3 = sample_mean(&pointwise(&w2, &w));
    let c_wwp = grid.hilbert_samples(&pointwise(&w, &t.d1), h);
    let c_w2wp = grid.hilbert_samples(&pointwise(&w2, &t.d1), h);

    let out = (0..w.len())
        .map(|j| {
            let (wj, w2j, cwp) = (w[j], w2[j], t.c_d1[j]);
            let s1 = mean_w2 / (2.0 * h) - wj + c_wwp[j] - wj * cwp;
            // The [w²] sign here follows from expanding the raw form with
            // v = h + w; see `assemble_residual_raw`.
            let s2 = mean_w3 / (3.0 * h) + mean_w2 - w2j - 2.0 * h * wj + c_w2wp[j]
                - w2j * cwp
                + 2.0 * h * c_wwp[j]
                - 2.0 * h * wj * cwp;
            let bracket = lambda - beta * s1 - 0.5 * ga * s2;
            let den = t.den[j];
            bracket * bracket
                - (lambda * lambda + mu - 2.0 * gb * wj) * den
                - 2.0 * params.sigma * t.curvature_numerator(j) / den.sqrt()
        })
        .collect();
    Ok(out)
}

fn check_residual_even(f: &PeriodicField) -> Result<()> {
    let deviation = f.odd_deviation();
    let allowed = 1e-11 * (1.0 + f.max_abs());
    if deviation > allowed {
        return Err(Error::Symmetry { deviation, allowed });
    }
    Ok(())
}

/// The residual `F(λ, β, (μ, w))`, projected onto modes `0..N`.
pub fn assemble_residual(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
) -> Result<PeriodicField> {
    state.check(grid)?;
    let raw = PeriodicField::new(residual_samples(grid, state, params)?)?;
    let out = grid.truncate(&raw)?;
    check_residual_even(&out)?;
    Ok(out)
}

/// Cosine coefficients `r_0..r_N` of the residual.
pub fn residual_coefficients(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
) -> Result<Vec<f64>> {
    state.check(grid)?;
    let raw = PeriodicField::new(residual_samples(grid, state, params)?)?;
    Ok(grid.cosine_coefficients(&raw))
}

/// Max-norm of the projected residual.
pub fn residual_norm(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
) -> Result<f64> {
    Ok(assemble_residual(grid, state, params)?.max_abs())
}

/// The free-surface equation written directly in `(v, Q, m)`.
pub fn assemble_residual_raw(
    grid: &SpectralGrid,
    v: &PeriodicField,
    q: f64,
    m: f64,
    beta: f64,
    params: &PhysicalParams,
) -> Result<PeriodicField> {
    let h = params.depth;
    if v.grid_size() != grid.samples() {
        return Err(Error::Shape("surface does not match grid".into()));
    }
    let min = v.min();
    if min <= 0.0 {
        return Err(Error::Positivity { min });
    }
    let vm = mean(v);
    if (vm - h).abs() > 1e-10 * h {
        return Err(Error::Parameter(format!(
            "surface mean {vm} differs from conformal depth {h}"
        )));
    }
    let ga = params.ga();
    let gb = params.gb();
    let v = v.samples();
    let t = SurfaceTerms::new(grid, v, h)?;
    let v2: Vec<f64> = v.iter().map(|x| x * x).collect();
    let mean_v2 = sample_mean(&v2);
    let mean_v3 = sample_mean(&pointwise(&v2, v));
    let c_vvp = grid.hilbert_samples(&pointwise(v, &t.d1), h);
    let c_v2vp = grid.hilbert_samples(&pointwise(&v2, &t.d1), h);

    let samples = (0..v.len())
        .map(|j| {
            let lift = 1.0 + t.c_d1[j];
            let bracket = m / h - ga * mean_v3 / (6.0 * h) - 0.5 * ga * c_v2vp[j]
                - beta * mean_v2 / (2.0 * h)
                - beta * c_vvp[j]
                + 0.5 * ga * v2[j] * lift
                + beta * v[j] * lift;
            let den = t.den[j];
            bracket * bracket
                - (q - 2.0 * gb * v[j]) * den
                - 2.0 * params.sigma * t.curvature_numerator(j) / den.sqrt()
        })
        .collect();
    grid.truncate(&PeriodicField::new(samples)?)
}

/// Curvature of the free surface parametrised through the conformal map.
pub fn curvature(grid: &SpectralGrid, v: &PeriodicField, h: f64) -> Result<PeriodicField> {
    if v.grid_size() != grid.samples() {
        return Err(Error::Shape("surface does not match grid".into()));
    }
    let t = SurfaceTerms::new(grid, v.samples(), h)?;
    let samples = (0..v.grid_size())
        .map(|j| t.curvature_numerator(j) / t.den[j].powf(1.5))
        .collect();
    PeriodicField::new(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub positive: bool,
    pub nondegenerate: bool,
    pub injective: bool,
    pub overhanging: bool,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.positive && self.nondegenerate && self.injective
    }
}

/// Reports the side conditions on a surface `v`: positivity, a non-vanishing
/// conformal gradient, and simplicity of `x ↦ (x + C_h(v - h), v)`.
pub fn check_admissibility(grid: &SpectralGrid, v: &PeriodicField, h: f64) -> AdmissibilityReport {
    let positive = v.min() > 0.0;
    let vs = v.samples();
    let d1 = grid.derivative_samples(vs, 1);
    let c_d1 = grid.hilbert_samples(&d1, h);
    let nondegenerate = d1
        .iter()
        .zip(&c_d1)
        .all(|(&p, &c)| p * p + (1.0 + c) * (1.0 + c) >= DEGENERACY_FLOOR);

    let shifted: Vec<f64> = vs.iter().map(|x| x - h).collect();
    let cx = grid.hilbert_samples(&shifted, h);
    let xs: Vec<f64> = (0..vs.len()).map(|j| grid.node(j) + cx[j]).collect();
    let period = 2.0 * std::f64::consts::PI;
    let overhanging = xs
        .windows(2)
        .any(|p| p[1] <= p[0])
        || xs[0] + period <= xs[xs.len() - 1];
    let injective = !overhanging || curve_is_simple(&xs, vs, period);

    AdmissibilityReport {
        positive,
        nondegenerate,
        injective,
        overhanging,
    }
}

fn segments_cross(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// Checks one period of the periodic polyline against itself and its
/// neighbouring translates for proper crossings.
fn curve_is_simple(xs: &[f64], ys: &[f64], period: f64) -> bool {
    let m = xs.len();
    let point = |j: usize, shift: f64| {
        let wraps = j / m;
        let k = j % m;
        (xs[k] + period * (wraps as f64) + shift, ys[k])
    };
    for i in 0..m {
        let (p1, p2) = (point(i, 0.0), point(i + 1, 0.0));
        for shift in [-period, 0.0, period] {
            for j in 0..m {
                if shift == 0.0 && (j == i || j + 1 == i || i + 1 == j || (i == 0 && j == m - 1) || (j == 0 && i == m - 1)) {
                    continue;
                }
                let (q1, q2) = (point(j, shift), point(j + 1, shift));
                if p1.0.max(p2.0) < q1.0.min(q2.0) || q1.0.max(q2.0) < p1.0.min(p2.0) {
                    continue;
                }
                if segments_cross(p1, p2, q1, q2) {
                    return false;
                }
            }
        }
    }
    true
}

/// Which scalar parameters are unknowns of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FreeParams {
    pub lambda: bool,
    pub beta: bool,
}

impl FreeParams {
    pub const NONE: Self = Self {
        lambda: false,
        beta: false,
    };
    pub const LAMBDA: Self = Self {
        lambda: true,
        beta: false,
    };
    pub const BETA: Self = Self {
        lambda: false,
        beta: true,
    };
    pub const BOTH: Self = Self {
        lambda: true,
        beta: true,
    };

    pub fn count(&self) -> usize {
        self.lambda as usize + self.beta as usize
    }
}

/// A scalar unknown of the truncated system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Mu,
    /// Cosine coefficient `a_n`, `n ≥ 1`.
    Mode(usize),
    Lambda,
    Beta,
}

/// Layout of the unknown vector `(μ, a_1..a_N, [λ], [β])`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub modes: usize,
    pub free: FreeParams,
}

impl Layout {
    pub fn new(modes: usize, free: FreeParams) -> Self {
        Self { modes, free }
    }

    pub fn len(&self) -> usize {
        1 + self.modes + self.free.count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, var: Var) -> Option<usize> {
        match var {
            Var::Mu => Some(0),
            Var::Mode(n) if n >= 1 && n <= self.modes => Some(n),
            Var::Mode(_) => None,
            Var::Lambda => self.free.lambda.then_some(1 + self.modes),
            Var::Beta => self
                .free
                .beta
                .then_some(1 + self.modes + self.free.lambda as usize),
        }
    }

    pub fn pack(&self, state: &WaveState) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.len());
        u.push(state.mu);
        u.extend_from_slice(&state.w.a);
        if self.free.lambda {
            u.push(state.lambda);
        }
        if self.free.beta {
            u.push(state.beta);
        }
        u
    }

    /// Rebuilds a state from `u`, taking fixed parameters from `template`.
    pub fn unpack(&self, u: &[f64], template: &WaveState) -> WaveState {
        let mut state = template.clone();
        state.mu = u[0];
        state.w.a0 = 0.0;
        state.w.a.copy_from_slice(&u[1..=self.modes]);
        if let Some(i) = self.index(Var::Lambda) {
            state.lambda = u[i];
        }
        if let Some(i) = self.index(Var::Beta) {
            state.beta = u[i];
        }
        state
    }
}

/// Central-difference Jacobian of `r_0..r_N` with respect to the unknowns
/// of `free`, step `1e-7·(1 + |u_k|)` per column. Columns are independent
/// and computed in parallel; each column's arithmetic is the same whatever
/// the scheduling.
pub fn jacobian(
    grid: &SpectralGrid,
    state: &WaveState,
    params: &PhysicalParams,
    free: FreeParams,
) -> Result<DMatrix<f64>> {
    state.check(grid)?;
    let layout = Layout::new(grid.modes(), free);
    let u = layout.pack(state);
    let rows = grid.modes() + 1;
    let columns: Vec<Vec<f64>> = (0..layout.len())
        .into_par_iter()
        .map(|k| {
            let step = 1e-7 * (1.0 + u[k].abs());
            let mut up = u.clone();
            up[k] += step;
            let mut um = u.clone();
            um[k] -= step;
            let rp = residual_coefficients(grid, &layout.unpack(&up, state), params)?;
            let rm = residual_coefficients(grid, &layout.unpack(&um, state), params)?;
            Ok(rp
                .iter()
                .zip(&rm)
                .map(|(p, m)| (p - m) / (up[k] - um[k]))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows, layout.len(), |i, k| columns[k][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::dispersion;

    fn setup() -> (SpectralGrid, PhysicalParams) {
        (SpectralGrid::new(16, 128).unwrap(), PhysicalParams::default())
    }

    #[test]
    fn trivial_state_has_zero_residual() {
        let (grid, params) = setup();
        for &(lambda, beta) in &[(0.0, 0.0), (2.7, 0.3), (-4.0, 10.0)] {
            let state = WaveState::trivial(lambda, beta, 16);
            let r = assemble_residual(&grid, &state, &params).unwrap();
            assert!(r.max_abs() < 1e-13 * (1.0 + lambda * lambda));
        }
    }

    #[test]
    fn mu_enters_as_minus_constant() {
        let (grid, params) = setup();
        let mut state = WaveState::trivial(2.0, 0.5, 16);
        state.mu = 0.37;
        let r = assemble_residual(&grid, &state, &params).unwrap();
        assert!(r.samples().iter().all(|v| (v + 0.37).abs() < 1e-14));
    }

    #[test]
    fn small_mode_recovers_dispersion() {
        let (grid, params) = setup();
        let eps = 1e-6;
        for n in 1..=4 {
            let mut state = WaveState::trivial(2.3, 0.4, 16);
            state.w.set_coeff(n, eps);
            let r = grid
                .to_spectrum(&assemble_residual(&grid, &state, &params).unwrap())
                .unwrap();
            let expected = eps * dispersion(n, 2.3, 0.4, &params);
            assert!(
                (r.coeff(n) - expected).abs() < 1e-9,
                "n = {n}: {} vs {expected}",
                r.coeff(n)
            );
        }
    }

    #[test]
    fn raw_form_agrees_on_trivial_branch() {
        let (grid, params) = setup();
        let h = params.depth;
        let beta = 0.7;
        let lambda = 1.9;
        let state = WaveState::trivial(lambda, beta, 16);
        let d = derived_quantities(&state, &params);
        let q = 2.0 * params.gb() * h
            + (d.m / h + beta * h / 2.0 + params.ga() * h * h / 3.0).powi(2);
        assert!((q - d.q).abs() < 1e-12);
        let v = PeriodicField::constant(128, h);
        let r = assemble_residual_raw(&grid, &v, d.q, d.m, beta, &params).unwrap();
        assert!(r.max_abs() < 1e-12);

        // m = 0
        let q0 = 2.0 * params.gb() * h + (beta * h / 2.0 + params.ga() * h * h / 3.0).powi(2);
        let r = assemble_residual_raw(&grid, &v, q0, 0.0, beta, &params).unwrap();
        assert!(r.max_abs() < 1e-12);
    }

    #[test]
    fn raw_form_rejects_nonpositive_surface() {
        let (grid, params) = setup();
        let v = grid.field_from_fn(|x| 1.0 + 1.5 * x.cos());
        assert!(matches!(
            assemble_residual_raw(&grid, &v, 20.0, 1.0, 0.0, &params),
            Err(Error::Positivity { .. })
        ));
    }

    #[test]
    fn curvature_examples() {
        let (grid, params) = setup();
        let h = params.depth;
        let flat = curvature(&grid, &PeriodicField::constant(128, h), h).unwrap();
        assert!(flat.max_abs() < 1e-15);
        // Linearised curvature of h + ε cos x is v'' = -ε cos x.
        for eps in [1e-3, 2e-3] {
            let k = curvature(&grid, &grid.field_from_fn(|x| h + eps * x.cos()), h).unwrap();
            assert!(k.is_even(1e-12));
            let s = grid.to_spectrum(&k).unwrap();
            assert!((s.coeff(1) + eps).abs() < 10.0 * eps * eps, "{}", s.coeff(1));
        }
    }

    #[test]
    fn admissibility_examples() {
        let (grid, params) = setup();
        let h = params.depth;
        let flat = check_admissibility(&grid, &PeriodicField::constant(128, h), h);
        assert!(flat.admissible() && !flat.overhanging);
        let small = check_admissibility(&grid, &grid.field_from_fn(|x| h + 0.01 * x.cos()), h);
        assert!(small.admissible() && !small.overhanging);
        let neg = check_admissibility(&grid, &grid.field_from_fn(|x| h + 1.2 * x.cos()), h);
        assert!(!neg.positive);
    }

    #[test]
    fn strongly_folded_surface_self_intersects() {
        // A large fifth mode makes x + C_h(v - h) non-monotone and the
        // profile fold over itself.
        let grid = SpectralGrid::new(16, 256).unwrap();
        let h = 1.0;
        let v = grid.field_from_fn(|x| h + 0.6 * (5.0 * x).cos());
        let rep = check_admissibility(&grid, &v, h);
        assert!(rep.overhanging);
        assert!(!rep.injective);
    }

    #[test]
    fn jacobian_at_trivial_state() {
        let (grid, params) = setup();
        let (lambda, beta) = (2.1, 0.3);
        let state = WaveState::trivial(lambda, beta, 16);
        let j = jacobian(&grid, &state, &params, FreeParams::NONE).unwrap();
        assert!((j[(0, 0)] + 1.0).abs() < 1e-8);
        for r in 0..=16 {
            for c in 0..=16 {
                if r == c && r > 0 {
                    let d = dispersion(r, lambda, beta, &params);
                    assert!((j[(r, c)] - d).abs() < 1e-5 * d.abs().max(1.0));
                } else if !(r == 0 && c == 0) {
                    assert!(j[(r, c)].abs() < 1e-6, "({r},{c}) = {}", j[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn lambda_column_near_trivial_state() {
        let (grid, params) = setup();
        let (lambda, beta) = (2.1, 0.3);
        let eps = 1e-5;
        let n = 2;
        let mut state = WaveState::trivial(lambda, beta, 16);
        state.w.set_coeff(n, eps);
        let j = jacobian(&grid, &state, &params, FreeParams::LAMBDA).unwrap();
        let t_n = (n as f64 * params.depth).tanh() / n as f64;
        let expected = eps * (2.0 * beta + 2.0 * params.ga() * params.depth - 4.0 * lambda / t_n);
        assert!((j[(n, 17)] - expected).abs() < 1e-3 * expected.abs());
    }

    #[test]
    fn derived_quantity_examples() {
        let params = PhysicalParams::default();
        let d = derived_quantities(&WaveState::trivial(0.0, 0.0, 4), &params);
        assert!((d.q - 2.0 * 9.8).abs() < 1e-14 && d.m == 0.0);
        let d = derived_quantities(&WaveState::trivial(1.0, 0.0, 4), &params);
        assert!((d.q - 20.6).abs() < 1e-13 && (d.m - 1.0).abs() < 1e-15);
        let strat = PhysicalParams {
            strat_slope: 0.4,
            ..params
        };
        let state = WaveState::trivial(1.7, -0.6, 4);
        let d = derived_quantities(&state, &strat);
        assert!((lambda_from_flux(d.m, -0.6, &strat) - 1.7).abs() < 1e-14);
        assert!(mu_from_head(d.q, 1.7, &strat).abs() < 1e-13);
    }

    #[test]
    fn layout_round_trip() {
        let mut state = WaveState::trivial(1.0, 2.0, 4);
        state.mu = 0.5;
        state.w.a = vec![0.1, 0.2, 0.3, 0.4];
        let layout = Layout::new(4, FreeParams::BOTH);
        let u = layout.pack(&state);
        assert_eq!(u, vec![0.5, 0.1, 0.2, 0.3, 0.4, 1.0, 2.0]);
        assert_eq!(layout.index(Var::Beta), Some(6));
        assert_eq!(layout.unpack(&u, &WaveState::trivial(0.0, 0.0, 4)), state);
        assert_eq!(Layout::new(4, FreeParams::BETA).index(Var::Beta), Some(5));
        assert_eq!(Layout::new(4, FreeParams::NONE).index(Var::Lambda), None);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = PhysicalParams {
            ref_density: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = PhysicalParams {
            sigma: -0.1,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(PhysicalParams::default().validate().is_ok());
    }
}
