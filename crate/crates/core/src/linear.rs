//! Closed-form linear and weakly nonlinear theory at the laminar state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residual::PhysicalParams;
use crate::spectral::coth;

/// Default half-width of the `β, σ` window in which the stability theorem
/// is applied.
pub const THEOREM_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    #[serde(alias = "+")]
    Plus,
    #[serde(alias = "-")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn of(x: f64) -> Self {
        if x < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "plus",
            Sign::Minus => "minus",
        })
    }
}

impl std::str::FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" => Ok(Sign::Plus),
            "minus" | "-" => Ok(Sign::Minus),
            _ => Err(Error::Config(format!("sign must be plus or minus, got {s:?}"))),
        }
    }
}

pub fn t_n(n: usize, h: f64) -> f64 {
    let n = n as f64;
    (n * h).tanh() / n
}

fn capillary_gravity(n: usize, params: &PhysicalParams) -> f64 {
    params.gb() + params.sigma * (n * n) as f64
}

/// The Fourier symbol `D(n, λ, β)` of the linearised operator.
pub fn dispersion(n: usize, lambda: f64, beta: f64, params: &PhysicalParams) -> f64 {
    let t = t_n(n, params.depth);
    -2.0 * (lambda * lambda / t
        - beta * lambda
        - params.ga() * params.depth * lambda
        - capillary_gravity(n, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionPoint {
    pub n: usize,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub t_n: f64,
}

impl DispersionPoint {
    pub fn lambda(&self, sign: Sign) -> f64 {
        match sign {
            Sign::Plus => self.lambda_plus,
            Sign::Minus => self.lambda_minus,
        }
    }
}

/// Both roots of `D(n, ·, β)`.
pub fn bifurcation_points(n: usize, beta: f64, params: &PhysicalParams) -> DispersionPoint {
    let t = t_n(n, params.depth);
    let b = beta + params.ga() * params.depth;
    let c = capillary_gravity(n, params);
    let half = 0.5 * b * t;
    let root = (half * half + c * t).sqrt();
    // The smaller-magnitude root comes from the product of roots, -c·T.
    let (lambda_plus, lambda_minus) = if half >= 0.0 {
        let big = half + root;
        (big, -c * t / big)
    } else {
        let big = half - root;
        (-c * t / big, big)
    };
    DispersionPoint {
        n,
        lambda_plus,
        lambda_minus,
        t_n: t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceData {
    pub n: usize,
    pub m: usize,
    pub beta_nm: f64,
    pub beta_star_plus: f64,
    pub beta_star_minus: f64,
}

impl ResonanceData {
    pub fn beta_star(&self, sign: Sign) -> f64 {
        match sign {
            Sign::Plus => self.beta_star_plus,
            Sign::Minus => self.beta_star_minus,
        }
    }
}

/// The `β` values at which modes `n` and `m` share a bifurcation point.
pub fn resonance_beta(n: usize, m: usize, params: &PhysicalParams) -> Result<ResonanceData> {
    if n == 0 || m == 0 || n == m {
        return Err(Error::Parameter(format!(
            "resonance needs distinct modes n, m ≥ 1, got ({n}, {m})"
        )));
    }
    if params.sigma <= 0.0 {
        return Err(Error::Parameter(
            "resonance values are undefined without surface tension (sigma = 0)".into(),
        ));
    }
    let h = params.depth;
    // Symmetric in (n, m); evaluate in one order so both agree bitwise.
    let (lo, hi) = (n.min(m), n.max(m));
    let (tn, tm) = (t_n(lo, h), t_n(hi, h));
    let (cn, cm) = (capillary_gravity(lo, params), capillary_gravity(hi, params));
    let num = (cn * tn - cm * tm).powi(2);
    let den = params.sigma * tn * tm * (tn - tm) * ((hi * hi) as f64 - (lo * lo) as f64);
    let beta_nm = num / den;
    if !(beta_nm > 0.0 && beta_nm.is_finite()) {
        return Err(Error::Conditioning(format!(
            "resonance value for ({n}, {m}) is {beta_nm}"
        )));
    }
    let shift = -params.ga() * h;
    let data = ResonanceData {
        n,
        m,
        beta_nm,
        beta_star_plus: shift + beta_nm.sqrt(),
        beta_star_minus: shift - beta_nm.sqrt(),
    };
    for sign in [Sign::Plus, Sign::Minus] {
        let beta = data.beta_star(sign);
        let lambda = collided_lambda(n, m, beta, params);
        let pair = Sign::of(lambda);
        let ln = bifurcation_points(n, beta, params).lambda(pair);
        let lm = bifurcation_points(m, beta, params).lambda(pair);
        if (ln - lm).abs() > 1e-9 * ln.abs().max(1.0) {
            return Err(Error::Conditioning(format!(
                "roots of modes {n} and {m} fail to collide at beta = {beta}: {ln} vs {lm}"
            )));
        }
    }
    Ok(data)
}

/// The common root of `D(n, ·, β)` and `D(m, ·, β)` when one exists.
pub fn collided_lambda(n: usize, m: usize, beta: f64, params: &PhysicalParams) -> f64 {
    let h = params.depth;
    let (tn, tm) = (t_n(n, h), t_n(m, h));
    let b = beta + params.ga() * h;
    (tm * capillary_gravity(m, params) - tn * capillary_gravity(n, params)) / (b * (tn - tm))
}

/// A double bifurcation point `(λ*, β*)` together with the root pair that
/// collides there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonancePoint {
    pub lambda: f64,
    pub beta: f64,
    pub pair: Sign,
}

/// The double point at `β*_sign`. Which root pair collides depends on the
/// parameters and is reported in [`ResonancePoint::pair`].
pub fn resonance_point(
    n: usize,
    m: usize,
    sign: Sign,
    params: &PhysicalParams,
) -> Result<ResonancePoint> {
    let data = resonance_beta(n, m, params)?;
    let beta = data.beta_star(sign);
    let lambda = collided_lambda(n, m, beta, params);
    Ok(ResonancePoint {
        lambda,
        beta,
        pair: Sign::of(lambda),
    })
}

/// `κ'(λ*_{n,±}) = ∓2√((β + Agh)² + 4(gB + σn²)/T_n)`.
pub fn transversality(n: usize, sign: Sign, beta: f64, params: &PhysicalParams) -> f64 {
    let t = t_n(n, params.depth);
    let b = beta + params.ga() * params.depth;
    -sign.value() * 2.0 * (b * b + 4.0 * capillary_gravity(n, params) / t).sqrt()
}

/// `⟨l̃, F_{(μ,w)³}(w*, w*, w*)⟩` with `w* = cos(nx)`, as a closed form.
pub fn third_order_pairing(n: usize, sign: Sign, beta: f64, params: &PhysicalParams) -> f64 {
    let h = params.depth;
    let nf = n as f64;
    let ga = params.ga();
    let b = beta + ga * h;
    let c1 = coth(nf * h);
    let c2 = coth(2.0 * nf * h);
    let lambda = bifurcation_points(n, beta, params).lambda(sign);
    let n2 = nf * nf;
    let n4 = n2 * n2;
    3.0 * beta * b * (3.0 * nf * c1 - nf * c2 - 1.0 / h)
        + 3.0 * ga * b * (2.5 + 3.0 * h * nf * c1 - h * nf * c2)
        + 2.0 * lambda * ga * nf * c1
        + 3.0 * params.gb() * (n2 + 3.0 * n2 * c1 * c1)
        - 0.5 * params.sigma * (19.0 * n4 * c1 * c1 + n4 - 4.0 * n2)
}

/// `λ''(0)` along the branch bifurcating from `λ*_{n,sign}`.
pub fn lambda_second_derivative(
    n: usize,
    sign: Sign,
    beta: f64,
    params: &PhysicalParams,
) -> f64 {
    third_order_pairing(n, sign, beta, params) / (-3.0 * transversality(n, sign, beta, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityLabel {
    StableFormally,
    Unstable,
    Neutral,
    OutOfTheoremScope,
}

impl fmt::Display for StabilityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityLabel::StableFormally => "stable-formally",
            StabilityLabel::Unstable => "unstable",
            StabilityLabel::Neutral => "neutral",
            StabilityLabel::OutOfTheoremScope => "out-of-theorem-scope",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityClass {
    pub trivial: StabilityLabel,
    pub nontrivial: StabilityLabel,
}

/// Formal stability near `λ*_{n,sign}` as predicted by the exchange of
/// stability theorem. The neighbourhood is half the gap between the two
/// roots of `D(n, ·, β)`.
pub fn classify_stability(
    lambda: f64,
    n: usize,
    sign: Sign,
    beta: f64,
    params: &PhysicalParams,
) -> StabilityClass {
    classify_stability_with(lambda, n, sign, beta, params, THEOREM_EPS)
}

pub fn classify_stability_with(
    lambda: f64,
    n: usize,
    sign: Sign,
    beta: f64,
    params: &PhysicalParams,
    eps: f64,
) -> StabilityClass {
    let out = StabilityClass {
        trivial: StabilityLabel::OutOfTheoremScope,
        nontrivial: StabilityLabel::OutOfTheoremScope,
    };
    let point = bifurcation_points(n, beta, params);
    let radius = 0.5 * (point.lambda_plus - point.lambda_minus);
    if !((lambda - point.lambda(sign)).abs() < radius) {
        return out;
    }
    let kappa = dispersion(n, lambda, beta, params);
    let trivial = if kappa < 0.0 {
        StabilityLabel::StableFormally
    } else if kappa > 0.0 {
        StabilityLabel::Unstable
    } else {
        StabilityLabel::Neutral
    };
    let a = params.strat_slope;
    let sign_ok = match sign {
        Sign::Plus => a >= 0.0,
        Sign::Minus => a <= 0.0,
    };
    let small = beta.abs() <= eps && params.sigma >= 0.0 && params.sigma <= eps;
    let nontrivial = if sign_ok && small {
        StabilityLabel::Unstable
    } else {
        StabilityLabel::OutOfTheoremScope
    };
    StabilityClass {
        trivial,
        nontrivial,
    }
}
