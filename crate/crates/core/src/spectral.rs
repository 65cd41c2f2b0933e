//! Fourier representation of 2π-periodic fields and the strip multiplier
//! operators.
//!
//! A [`PeriodicField`] stores samples at the nodes `x_j = 2πj/M`. All
//! operators go through a complex FFT of length `M`; the cosine truncation
//! `N` of a [`SpectralGrid`] only matters for [`SpectralGrid::to_spectrum`],
//! [`SpectralGrid::product`] and [`SpectralGrid::truncate`]. With the default
//! `M = 8N`, products of fields band-limited to `N` modes are resolved
//! without aliasing into the retained modes up to polynomial degree seven.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const DEFAULT_MODES: usize = 64;
pub const DEFAULT_SAMPLES: usize = 512;

/// Relative tolerance for the even-symmetry invariant.
pub const EVEN_TOL: f64 = 1e-12;

/// `coth(x)` for `x > 0`, written as `1 + 2/expm1(2x)` so that large
/// arguments saturate to 1 instead of overflowing.
pub fn coth(x: f64) -> f64 {
    if x > 20.0 {
        1.0
    } else {
        1.0 + 2.0 / (2.0 * x).exp_m1()
    }
}

/// Real 2π-periodic function sampled on a uniform grid.
#[derive(Clone, PartialEq)]
pub struct PeriodicField {
    samples: Vec<f64>,
}

impl fmt::Debug for PeriodicField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicField")
            .field("grid_size", &self.samples.len())
            .field("max_abs", &self.max_abs())
            .finish()
    }
}

impl PeriodicField {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Shape("empty field".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PeriodicField::new"));
        }
        Ok(Self { samples })
    }

    pub fn zeros(grid_size: usize) -> Self {
        Self {
            samples: vec![0.0; grid_size],
        }
    }

    pub fn constant(grid_size: usize, value: f64) -> Self {
        Self {
            samples: vec![value; grid_size],
        }
    }

    pub fn grid_size(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation `|f(x_j) - f(x_{M-j})|`.
    pub fn odd_deviation(&self) -> f64 {
        let m = self.samples.len();
        (1..m)
            .map(|j| (self.samples[j] - self.samples[m - j]).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_even(&self, rel_tol: f64) -> bool {
        self.odd_deviation() <= rel_tol * self.max_abs()
    }

    /// Returns the field if it is even to [`EVEN_TOL`], a symmetry error otherwise.
    pub fn check_even(&self) -> Result<()> {
        let deviation = self.odd_deviation();
        let allowed = EVEN_TOL * self.max_abs();
        if deviation > allowed {
            return Err(Error::Symmetry { deviation, allowed });
        }
        Ok(())
    }

    /// The reflected field `x ↦ f(-x)`.
    pub fn reflect(&self) -> Self {
        let m = self.samples.len();
        let samples = (0..m).map(|j| self.samples[(m - j) % m]).collect();
        Self { samples }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.samples.len(), other.samples.len());
        Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Uniform average over one period; exact for band-limited input.
pub fn mean(f: &PeriodicField) -> f64 {
    f.samples.iter().sum::<f64>() / f.samples.len() as f64
}

/// Cosine coefficients of an even field: `f = a0 + Σ a_n cos(nx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSpectrum {
    pub a0: f64,
    pub a: Vec<f64>,
}

impl CosineSpectrum {
    pub fn zeros(truncation: usize) -> Self {
        Self {
            a0: 0.0,
            a: vec![0.0; truncation],
        }
    }

    pub fn truncation(&self) -> usize {
        self.a.len()
    }

    /// Coefficient of `cos(nx)`; `n = 0` is the mean.
    pub fn coeff(&self, n: usize) -> f64 {
        match n {
            0 => self.a0,
            n => self.a.get(n - 1).copied().unwrap_or(0.0),
        }
    }

    pub fn set_coeff(&mut self, n: usize, value: f64) {
        match n {
            0 => self.a0 = value,
            n => self.a[n - 1] = value,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(self.a0.abs(), |m, v| m.max(v.abs()))
    }
}

/// FFT plans plus the cosine truncation `N` and grid size `M`.
#[derive(Clone)]
pub struct SpectralGrid {
    modes: usize,
    samples: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("modes", &self.modes)
            .field("samples", &self.samples)
            .finish()
    }
}

impl Default for SpectralGrid {
    fn default() -> Self {
        Self::new(DEFAULT_MODES, DEFAULT_SAMPLES).expect("default grid is valid")
    }
}

impl SpectralGrid {
    pub fn new(modes: usize, samples: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Parameter("truncation N must be positive".into()));
        }
        if !samples.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "grid size M = {samples} must be a power of two"
            )));
        }
        if samples < 2 * modes + 2 {
            return Err(Error::Parameter(format!(
                "grid size M = {samples} is too small for N = {modes} modes"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            modes,
            samples,
            forward: planner.plan_fft_forward(samples),
            inverse: planner.plan_fft_inverse(samples),
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn node(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.samples as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.samples).map(|j| self.node(j)).collect()
    }

    /// Signed wavenumber of FFT bin `j`.
    pub(crate) fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.samples / 2 {
            j as i64
        } else {
            j as i64 - self.samples as i64
        }
    }

    pub fn field_from_fn(&self, f: impl Fn(f64) -> f64) -> PeriodicField {
        PeriodicField {
            samples: (0..self.samples).map(|j| f(self.node(j))).collect(),
        }
    }

    fn check_shape(&self, f: &PeriodicField) -> Result<()> {
        if f.grid_size() != self.samples {
            return Err(Error::Shape(format!(
                "field has {} samples, grid expects {}",
                f.grid_size(),
                self.samples
            )));
        }
        Ok(())
    }

    /// Unnormalised forward transform.
    pub(crate) fn fft(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform with `1/M` normalisation, real part only.
    pub(crate) fn ifft_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.samples as f64;
        spec.into_iter().map(|c| c.re * scale).collect()
    }

    /// Applies a Fourier multiplier `k ↦ m(k)` to every resolved mode.
    pub(crate) fn apply_multiplier(
        &self,
        f: &[f64],
        multiplier: impl Fn(i64) -> Complex64,
    ) -> Vec<f64> {
        let mut spec = self.fft(f);
        for (j, c) in spec.iter_mut().enumerate() {
            *c *= multiplier(self.wavenumber(j));
        }
        self.ifft_real(spec)
    }

    pub fn to_spectrum(&self, f: &PeriodicField) -> Result<CosineSpectrum> {
        self.check_shape(f)?;
        f.check_even()?;
        let spec = self.fft(&f.samples);
        let scale = 1.0 / self.samples as f64;
        Ok(CosineSpectrum {
            a0: spec[0].re * scale,
            a: (1..=self.modes).map(|n| 2.0 * spec[n].re * scale).collect(),
        })
    }

    pub fn from_spectrum(&self, s: &CosineSpectrum) -> PeriodicField {
        let mut spec = vec![Complex64::new(0.0, 0.0); self.samples];
        let half = self.samples as f64 / 2.0;
        spec[0] = Complex64::new(s.a0 * self.samples as f64, 0.0);
        for (i, &a) in s.a.iter().enumerate().take(self.samples / 2 - 1) {
            let n = i + 1;
            spec[n] = Complex64::new(a * half, 0.0);
            spec[self.samples - n] = Complex64::new(a * half, 0.0);
        }
        PeriodicField {
            samples: self.ifft_real(spec),
        }
    }

    /// Cosine coefficients `r_0..r_N` without the symmetry check; used for
    /// residual projection where evenness is asserted separately.
    pub fn cosine_coefficients(&self, f: &PeriodicField) -> Vec<f64> {
        let spec = self.fft(&f.samples);
        let scale = 1.0 / self.samples as f64;
        std::iter::once(spec[0].re * scale)
            .chain((1..=self.modes).map(|n| 2.0 * spec[n].re * scale))
            .collect()
    }

    /// Cosine coefficients of every resolved mode below Nyquist,
    /// `r_0..r_{M/2-1}`.
    pub fn cosine_coefficients_all(&self, f: &PeriodicField) -> Vec<f64> {
        let spec = self.fft(&f.samples);
        let scale = 1.0 / self.samples as f64;
        std::iter::once(spec[0].re * scale)
            .chain((1..self.samples / 2).map(|n| 2.0 * spec[n].re * scale))
            .collect()
    }

    /// Projects onto modes `|k| ≤ N` (both cosine and sine parts).
    pub fn truncate(&self, f: &PeriodicField) -> Result<PeriodicField> {
        self.check_shape(f)?;
        let n = self.modes as i64;
        let samples = self.apply_multiplier(&f.samples, |k| {
            if k.abs() <= n {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Ok(PeriodicField { samples })
    }

    /// Strip Hilbert transform of raw samples; the mean mode is discarded
    /// rather than checked.
    pub(crate) fn hilbert_samples(&self, f: &[f64], h: f64) -> Vec<f64> {
        let nyquist = (self.samples / 2) as i64;
        self.apply_multiplier(f, |k| {
            if k == 0 || k == nyquist {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -(k.signum() as f64) * coth(k.unsigned_abs() as f64 * h))
            }
        })
    }

    /// First or second derivative of raw samples.
    pub(crate) fn derivative_samples(&self, f: &[f64], order: u8) -> Vec<f64> {
        let nyquist = (self.samples / 2) as i64;
        if order == 1 {
            self.apply_multiplier(f, |k| {
                if k == nyquist {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, k as f64)
                }
            })
        } else {
            self.apply_multiplier(f, |k| Complex64::new(-((k * k) as f64), 0.0))
        }
    }

    /// Strip Hilbert transform: `cos(nx) ↦ coth(nh) sin(nx)`,
    /// `sin(nx) ↦ -coth(nh) cos(nx)`. The output of an even field is odd.
    pub fn hilbert_strip(&self, f: &PeriodicField, h: f64) -> Result<PeriodicField> {
        self.check_shape(f)?;
        check_depth(h)?;
        let m = mean(f);
        if m.abs() >= EVEN_TOL * f.max_abs().max(1.0) {
            return Err(Error::NonzeroMean { mean: m });
        }
        Ok(PeriodicField {
            samples: self.hilbert_samples(&f.samples, h),
        })
    }

    /// Periodic Dirichlet–Neumann operator of the strip of depth `h`:
    /// `G_h(u) = [u]/h + C_h(u')`, i.e. `cos(nx) ↦ n coth(nh) cos(nx)`.
    pub fn dirichlet_neumann(&self, f: &PeriodicField, h: f64) -> Result<PeriodicField> {
        self.check_shape(f)?;
        check_depth(h)?;
        let nyquist = (self.samples / 2) as i64;
        let samples = self.apply_multiplier(&f.samples, |k| {
            if k == 0 {
                Complex64::new(1.0 / h, 0.0)
            } else if k == nyquist {
                Complex64::new(0.0, 0.0)
            } else {
                let n = k.unsigned_abs() as f64;
                Complex64::new(n * coth(n * h), 0.0)
            }
        });
        Ok(PeriodicField { samples })
    }

    pub fn derivative(&self, f: &PeriodicField, order: u8) -> Result<PeriodicField> {
        self.check_shape(f)?;
        if !(order == 1 || order == 2) {
            return Err(Error::Parameter(format!(
                "derivative order must be 1 or 2, got {order}"
            )));
        }
        PeriodicField::new(self.derivative_samples(&f.samples, order))
    }

    /// Pointwise product on the (oversampled) grid, truncated to `N` modes.
    pub fn product(&self, f: &PeriodicField, g: &PeriodicField) -> Result<PeriodicField> {
        if f.grid_size() != g.grid_size() {
            return Err(Error::Shape(format!(
                "product of fields with {} and {} samples",
                f.grid_size(),
                g.grid_size()
            )));
        }
        self.truncate(&f.zip_map(g, |a, b| a * b))
    }
}

fn check_depth(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("depth h must be positive, got {h}")));
    }
    Ok(())
}
