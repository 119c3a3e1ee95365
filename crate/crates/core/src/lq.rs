//! Closed-form solution of the exploratory LQ problem in the concave regime
//! `k₂ < 0`, where `G̃[v''] = ½σ̄²k₂`.
//!
//! The value function is `V(x) = ½k₂x² + k₁x + k₀` with
//!
//! ```text
//! k₂ = 2[(CDσ̄²+F)k₂ − I]² / (ρ(K − k₂D²σ̄²)) + ρ[(C²σ̄²+2A)k₂ − M]
//! k₁ = 2[(CDσ̄²+F)k₂ − I](Fk₁ − Q) / (ρ(K − k₂D²σ̄²)) + ρ(Ak₁ − P)
//! k₀ = (k₁F − Q)² / (ρ(K − k₂D²σ̄²)) + (λ/2ρ)(ln(2πeλ/(K − k₂D²σ̄²)) − 1)
//! ```
//!
//! and the optimal randomised feedback is Gaussian with mean
//! `[(k₂(F+CDσ̄²) − I)x + k₁F − Q]/(K − k₂D²σ̄²)` and variance
//! `λ/(K − k₂D²σ̄²)`.

use std::f64::consts::{E, PI};

use serde::Serialize;

use crate::error::{finite, Error, Result};
use crate::model::{g_tilde_unchecked, AgentParams, AmbiguityBounds, ModelParams};
use crate::relaxed::DifferentiableValue;

/// Largest search magnitude for the k₂ scan.
pub const K2_SCAN_LIMIT: f64 = 1e9;
/// Initial search magnitude, doubled until a sign change appears.
pub const K2_SCAN_START: f64 = 1e3;
/// Smallest magnitude probed by the geometric scan grid.
pub const K2_SCAN_FLOOR: f64 = 1e-12;
/// Scan points per decade of |k₂|.
pub const K2_SCAN_DENSITY: usize = 200;
/// Bisection stops once the bracket is this narrow (or a few ulps).
pub const BRACKET_WIDTH: f64 = 1e-14;

/// Quadratic value-function coefficients. Construction enforces `k₂ < 0`,
/// which also makes `K − k₂D²σ̄² ≥ K > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HjbCoefficients {
    k2: f64,
    k1: f64,
    k0: f64,
}

impl HjbCoefficients {
    pub fn new(k2: f64, k1: f64, k0: f64) -> Result<Self> {
        finite(k2, "k2")?;
        finite(k1, "k1")?;
        finite(k0, "k0")?;
        if k2 >= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "k2 = {k2} is not in the concave regime k2 < 0"
            )));
        }
        Ok(Self { k2, k1, k0 })
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }
    pub fn k1(&self) -> f64 {
        self.k1
    }
    pub fn k0(&self) -> f64 {
        self.k0
    }

    /// `v'` and `v''` of the quadratic, for use with the relaxed-control
    /// machinery.
    pub fn differentiable(&self) -> DifferentiableValue {
        DifferentiableValue::quadratic(self.k2, self.k1)
    }
}

/// Mean and variance of a Gaussian randomised feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianPolicy {
    mean: f64,
    variance: f64,
}

impl GaussianPolicy {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        finite(mean, "policy mean")?;
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "policy variance {variance} must be > 0"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn variance(&self) -> f64 {
        self.variance
    }
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn pdf(&self, u: f64) -> f64 {
        let z = u - self.mean;
        (-z * z / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }
}

/// `K − k₂D²σ̄²`
pub fn effective_control_penalty(k2: f64, m: &ModelParams, b: &AmbiguityBounds) -> f64 {
    m.k() - k2 * m.d() * m.d() * b.upper_sq()
}

/// `den` is treated as zero when it is within a few ulps of `K`.
fn at_pole(den: f64, m: &ModelParams) -> bool {
    den.abs() <= 8.0 * f64::EPSILON * m.k()
}

fn positive_penalty(k2: f64, m: &ModelParams, b: &AmbiguityBounds) -> Result<f64> {
    let den = effective_control_penalty(k2, m, b);
    if den > 0.0 && den.is_finite() && !at_pole(den, m) {
        Ok(den)
    } else {
        Err(Error::IllPosedPolicy(format!(
            "K - k2 D^2 sigma_upper^2 = {den} is not positive"
        )))
    }
}

/// `(CDσ̄² + F)k₂ − I`, the state-feedback numerator slope.
fn feedback_slope(k2: f64, m: &ModelParams, b: &AmbiguityBounds) -> f64 {
    (m.c() * m.d() * b.upper_sq() + m.f()) * k2 - m.i()
}

/// `k₂ − RHS(k₂)` for the k₂ equation.
pub fn k2_residual(k2: f64, m: &ModelParams, b: &AmbiguityBounds, rho: f64) -> Result<f64> {
    finite(k2, "k2")?;
    finite(rho, "rho")?;
    let den = effective_control_penalty(k2, m, b);
    if at_pole(den, m) {
        return Err(Error::Pole(k2));
    }
    Ok(residual_unchecked(k2, den, m, b, rho))
}

#[inline]
fn residual_unchecked(k2: f64, den: f64, m: &ModelParams, b: &AmbiguityBounds, rho: f64) -> f64 {
    let a = feedback_slope(k2, m, b);
    let c = m.c() * m.c() * b.upper_sq() + 2.0 * m.a();
    k2 - (2.0 * a * a / (rho * den) + rho * (c * k2 - m.m()))
}

fn residual_derivative(k2: f64, m: &ModelParams, b: &AmbiguityBounds, rho: f64) -> f64 {
    let s = m.c() * m.d() * b.upper_sq() + m.f();
    let a = s * k2 - m.i();
    let dd = m.d() * m.d() * b.upper_sq();
    let den = m.k() - k2 * dd;
    let c = m.c() * m.c() * b.upper_sq() + 2.0 * m.a();
    1.0 - (2.0 / rho) * (2.0 * a * s * den + a * a * dd) / (den * den) - rho * c
}

/// Which admissible root to take when several exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootSelection {
    /// Root of smallest |k₂|.
    #[default]
    SmallestMagnitude,
    /// The i-th root in order of increasing |k₂|.
    Index(usize),
    /// Fail with [`Error::MultipleRoots`] unless exactly one root exists.
    Unique,
}

/// Every admissible root found, ordered by increasing |k₂|, and the one
/// chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct K2Solution {
    pub roots: Vec<f64>,
    pub selected: f64,
    pub residual: f64,
    pub search_limit: f64,
}

fn bisect(mut lo: f64, mut hi: f64, m: &ModelParams, b: &AmbiguityBounds, rho: f64) -> f64 {
    let f = |k: f64| residual_unchecked(k, effective_control_penalty(k, m, b), m, b, rho);
    let mut f_lo = f(lo);
    loop {
        let mid = 0.5 * (lo + hi);
        let width = hi - lo;
        if width <= BRACKET_WIDTH.max(4.0 * f64::EPSILON * mid.abs()) || mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    // single Newton polish, kept only if it improves the residual
    let r = f(mid);
    let dr = residual_derivative(mid, m, b, rho);
    if dr != 0.0 && dr.is_finite() {
        let cand = mid - r / dr;
        if cand.is_finite() && f(cand).abs() < r.abs() {
            return cand;
        }
    }
    mid
}

/// Scans `k₂ ∈ [−k_max, 0)` for sign changes on a geometric grid, doubling
/// `k_max` from 10³ to 10⁹ until one appears, then refines each bracket by
/// bisection and a Newton step.
pub fn solve_k2_roots(m: &ModelParams, b: &AmbiguityBounds, rho: f64) -> Result<(Vec<f64>, f64)> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must be > 0")));
    }
    let f = |k: f64| residual_unchecked(k, effective_control_penalty(k, m, b), m, b, rho);
    let ratio = 10f64.powf(1.0 / K2_SCAN_DENSITY as f64);

    let mut roots = Vec::new();
    let mut prev_k = -K2_SCAN_FLOOR;
    let mut prev_r = f(prev_k);
    if prev_r == 0.0 {
        roots.push(prev_k);
    }
    let mut mag = K2_SCAN_FLOOR;
    let mut k_max = K2_SCAN_START;
    loop {
        while mag < k_max {
            mag = (mag * ratio).min(k_max);
            let k = -mag;
            let r = f(k);
            if r == 0.0 {
                roots.push(k);
            } else if prev_r != 0.0
                && (r < 0.0) != (prev_r < 0.0)
                && r.is_finite()
                && prev_r.is_finite()
            {
                roots.push(bisect(k, prev_k, m, b, rho));
            }
            prev_k = k;
            prev_r = r;
        }
        if !roots.is_empty() || k_max >= K2_SCAN_LIMIT {
            break;
        }
        k_max = (2.0 * k_max).min(K2_SCAN_LIMIT);
    }
    roots.retain(|&k| k < 0.0 && effective_control_penalty(k, m, b) > 0.0);
    roots.sort_by(|a, b| b.total_cmp(a));
    if roots.is_empty() {
        return Err(Error::NoSolution { k_max });
    }
    Ok((roots, k_max))
}

pub fn solve_k2_with(
    m: &ModelParams,
    b: &AmbiguityBounds,
    rho: f64,
    selection: RootSelection,
) -> Result<K2Solution> {
    let (roots, search_limit) = solve_k2_roots(m, b, rho)?;
    let selected = match selection {
        RootSelection::SmallestMagnitude => roots[0],
        RootSelection::Index(i) => *roots.get(i).ok_or(Error::RootIndex {
            index: i,
            count: roots.len(),
        })?,
        RootSelection::Unique => {
            if roots.len() > 1 {
                return Err(Error::MultipleRoots { roots });
            }
            roots[0]
        }
    };
    let residual = k2_residual(selected, m, b, rho)?;
    Ok(K2Solution {
        roots,
        selected,
        residual,
        search_limit,
    })
}

/// Admissible `k₂` with the default root selection.
pub fn solve_k2(m: &ModelParams, b: &AmbiguityBounds, rho: f64) -> Result<f64> {
    solve_k2_with(m, b, rho, RootSelection::default()).map(|s| s.selected)
}

/// Solves the linear equation for `k₁` given `k₂`.
pub fn compute_k1(k2: f64, m: &ModelParams, b: &AmbiguityBounds, rho: f64) -> Result<f64> {
    finite(k2, "k2")?;
    let den = effective_control_penalty(k2, m, b);
    if at_pole(den, m) {
        return Err(Error::Pole(k2));
    }
    let a = feedback_slope(k2, m, b);
    let cross = 2.0 * a * m.f() / (rho * den);
    let coef = 1.0 - cross - rho * m.a();
    let scale = 1.0 + cross.abs() + (rho * m.a()).abs();
    if !coef.is_finite() || coef.abs() <= 1e-14 * scale {
        return Err(Error::DegenerateK1);
    }
    let rhs = -2.0 * a * m.q() / (rho * den) - rho * m.p();
    Ok(rhs / coef)
}

/// `k₀` from `k₁`, `k₂`.
pub fn compute_k0(
    k1: f64,
    k2: f64,
    m: &ModelParams,
    b: &AmbiguityBounds,
    rho: f64,
    lambda: f64,
) -> Result<f64> {
    finite(k1, "k1")?;
    finite(k2, "k2")?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} must be > 0"
        )));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must be > 0")));
    }
    let den = positive_penalty(k2, m, b)?;
    let lin = k1 * m.f() - m.q();
    Ok(lin * lin / (rho * den) + entropy_offset(lambda, rho, den))
}

/// `(λ/2ρ)(ln(2πeλ/den) − 1)`, the constant separating exploratory and
/// non-exploratory values.
pub(crate) fn entropy_offset(lambda: f64, rho: f64, den: f64) -> f64 {
    lambda / (2.0 * rho) * ((2.0 * PI * E * lambda / den).ln() - 1.0)
}

/// Solves for all three coefficients.
pub fn solve_hjb(
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
    selection: RootSelection,
) -> Result<HjbCoefficients> {
    let k2 = solve_k2_with(m, b, agent.rho(), selection)?.selected;
    let k1 = compute_k1(k2, m, b, agent.rho())?;
    let k0 = compute_k0(k1, k2, m, b, agent.rho(), agent.lambda())?;
    HjbCoefficients::new(k2, k1, k0)
}

/// `V(x) = ½k₂x² + k₁x + k₀`
pub fn exploratory_value(x: f64, coeffs: &HjbCoefficients) -> f64 {
    0.5 * coeffs.k2 * x * x + coeffs.k1 * x + coeffs.k0
}

fn feedback_mean(
    x: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
) -> Result<f64> {
    let den = positive_penalty(coeffs.k2, m, b)?;
    let slope = coeffs.k2 * (m.f() + m.c() * m.d() * b.upper_sq()) - m.i();
    Ok((slope * x + coeffs.k1 * m.f() - m.q()) / den)
}

/// Gaussian optimal randomised feedback at `x`.
pub fn optimal_policy(
    x: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    lambda: f64,
) -> Result<GaussianPolicy> {
    finite(x, "state")?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::IllPosedPolicy(format!(
            "lambda = {lambda} must be > 0"
        )));
    }
    let den = positive_penalty(coeffs.k2, m, b)?;
    GaussianPolicy::new(feedback_mean(x, coeffs, m, b)?, lambda / den)
}

/// Gaussian maximiser for an arbitrary twice-differentiable value at `x`,
/// using `G̃[v''(x)]` with the sign-dependent variance.
pub fn lq_policy_from_value(
    x: f64,
    dv: &DifferentiableValue,
    m: &ModelParams,
    b: &AmbiguityBounds,
    lambda: f64,
) -> Result<GaussianPolicy> {
    finite(x, "state")?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::IllPosedPolicy(format!(
            "lambda = {lambda} must be > 0"
        )));
    }
    let v1 = dv.v1(x)?;
    let g = g_tilde_unchecked(dv.v2(x)?, b);
    let den = m.k() - 2.0 * m.d() * m.d() * g;
    if !(den > 0.0) {
        return Err(Error::IllPosedPolicy(format!(
            "K - 2 D^2 G[v''(x)] = {den} must be positive for a well-posed Gaussian policy"
        )));
    }
    let mean = (2.0 * m.c() * m.d() * x * g + m.f() * v1 - m.i() * x - m.q()) / den;
    GaussianPolicy::new(mean, lambda / den)
}

/// Classical value `½k₂x² + k₁x + α₀` with
/// `α₀ = k₀ − (λ/2ρ)(ln(2πeλ/(K − k₂D²σ̄²)) − 1)`.
pub fn non_exploratory_value(
    x: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
) -> Result<f64> {
    let den = positive_penalty(coeffs.k2, m, b)?;
    let alpha0 = coeffs.k0 - entropy_offset(agent.lambda(), agent.rho(), den);
    Ok(0.5 * coeffs.k2 * x * x + coeffs.k1 * x + alpha0)
}

/// Deterministic optimal feedback `u*(x)`; identical to the Gaussian mean.
pub fn non_exploratory_control(
    x: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
) -> Result<f64> {
    finite(x, "state")?;
    feedback_mean(x, coeffs, m, b)
}

/// Residual of the Gaussian-reduced HJB
///
/// ```text
/// ρv = (2CDxG̃ + Fv' − Ix − Q)²/(K − 2D²G̃) + ½(2C²G̃ − M)x² + (Av' − P)x
///      + (λ/2)(ln(2πeλ/(K − 2D²G̃)) − 1)
/// ```
///
/// evaluated at `x` for the quadratic value.
pub fn reduced_hjb_residual(
    x: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
) -> Result<f64> {
    let v = exploratory_value(x, coeffs);
    let v1 = coeffs.k2 * x + coeffs.k1;
    let g = g_tilde_unchecked(coeffs.k2, b);
    let den = m.k() - 2.0 * m.d() * m.d() * g;
    if !(den > 0.0) {
        return Err(Error::IllPosedPolicy(format!("K - 2 D^2 G = {den}")));
    }
    let num = 2.0 * m.c() * m.d() * x * g + m.f() * v1 - m.i() * x - m.q();
    let lambda = agent.lambda();
    let rhs = num * num / den
        + 0.5 * (2.0 * m.c() * m.c() * g - m.m()) * x * x
        + (m.a() * v1 - m.p()) * x
        + 0.5 * lambda * ((2.0 * PI * E * lambda / den).ln() - 1.0);
    Ok(agent.rho() * v - rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ModelParams {
        ModelParams::temperature_control()
    }

    fn upper(s: f64) -> AmbiguityBounds {
        AmbiguityBounds::new((s * s).min(0.01), s * s).unwrap()
    }

    #[test]
    fn residual_vanishes_at_solution() {
        let (m, b) = (table(), upper(1.0));
        let k2 = solve_k2(&m, &b, 0.3).unwrap();
        assert!(k2 < 0.0);
        assert!(k2_residual(k2, &m, &b, 0.3).unwrap().abs() < 1e-12);
    }

    #[test]
    fn linearised_equation_by_hand() {
        // C = D = F = I = 0 leaves k₂ = ρ(2Ak₂ − M), so k₂ = −ρM/(1 − 2Aρ)
        let m = ModelParams::new(-0.4, 0.0, 0.0, 0.0, 3.0, 0.0, 2.0, 0.5, 0.2).unwrap();
        let b = upper(1.0);
        let rho = 0.7;
        let exact = -rho * m.m() / (1.0 - 2.0 * m.a() * rho);
        assert!(k2_residual(exact, &m, &b, rho).unwrap().abs() < 1e-15);
        let k2 = solve_k2(&m, &b, rho).unwrap();
        assert!((k2 - exact).abs() < 1e-13, "{k2} vs {exact}");
    }

    #[test]
    fn pole_is_reported() {
        let (m, b) = (table(), upper(1.0));
        let pole = m.k() / (m.d() * m.d() * b.upper_sq());
        assert_eq!(k2_residual(pole, &m, &b, 0.3), Err(Error::Pole(pole)));
        assert!(k2_residual(pole - 1e-6, &m, &b, 0.3).unwrap().is_finite());
    }

    #[test]
    fn larger_state_penalty_gives_more_negative_k2() {
        let (m, b) = (table(), upper(1.0));
        let k_base = solve_k2(&m, &b, 0.3).unwrap();
        let k_big = solve_k2(&m.with_m(100.0).unwrap(), &b, 0.3).unwrap();
        assert!(k_big < k_base);
    }

    #[test]
    fn lower_variance_does_not_enter() {
        let m = table();
        let a = solve_k2(&m, &AmbiguityBounds::new(1.0, 1.0).unwrap(), 0.8).unwrap();
        let c = solve_k2(&m, &AmbiguityBounds::new(0.01, 1.0).unwrap(), 0.8).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn no_admissible_root() {
        // M = 0 with no cross/linear coupling leaves only k₂ = 0
        let m = ModelParams::new(-0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            solve_k2(&m, &upper(1.0), 0.5),
            Err(Error::NoSolution { .. })
        ));
        assert!(solve_k2(&table(), &upper(1.0), 0.0).is_err());
    }

    #[test]
    fn root_selection_modes() {
        let (m, b) = (table(), upper(1.0));
        let s = solve_k2_with(&m, &b, 0.3, RootSelection::Unique).unwrap();
        assert_eq!(s.roots.len(), 1);
        assert_eq!(s.selected, s.roots[0]);
        assert!(matches!(
            solve_k2_with(&m, &b, 0.3, RootSelection::Index(1)),
            Err(Error::RootIndex { index: 1, count: 1 })
        ));
    }

    #[test]
    fn k1_cases() {
        let (m, b, rho) = (table(), upper(1.0), 0.3);
        let k2 = solve_k2(&m, &b, rho).unwrap();
        let k1 = compute_k1(k2, &m, &b, rho).unwrap();
        let den = effective_control_penalty(k2, &m, &b);
        let a = feedback_slope(k2, &m, &b);
        let rhs = 2.0 * a * (m.f() * k1 - m.q()) / (rho * den) + rho * (m.a() * k1 - m.p());
        assert!((k1 - rhs).abs() < 1e-12);

        // homogeneous: P = Q = 0
        let h = ModelParams::new(-0.2, 0.8, 0.5, 1.2, 10.0, 0.3, 2.0, 0.0, 0.0).unwrap();
        let k2h = solve_k2(&h, &b, rho).unwrap();
        assert_eq!(compute_k1(k2h, &h, &b, rho).unwrap(), 0.0);

        // A = F = 0 (and Q = 0): k₁ = −ρP
        let z = ModelParams::new(0.0, 0.0, 0.5, 1.2, 10.0, 0.3, 2.0, 0.5, 0.0).unwrap();
        let k2z = solve_k2(&z, &b, rho).unwrap();
        assert!((compute_k1(k2z, &z, &b, rho).unwrap() + rho * 0.5).abs() < 1e-15);
    }

    #[test]
    fn k1_degenerate_coefficient() {
        // F = 0, ρA = 1 zeroes the coefficient of k₁
        let m = ModelParams::new(2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(
            compute_k1(-1.0, &m, &upper(1.0), 0.5),
            Err(Error::DegenerateK1)
        );
    }

    #[test]
    fn k0_cases() {
        let (m, b, rho) = (table(), upper(1.0), 0.3);
        let k2 = -0.5;
        let den = effective_control_penalty(k2, &m, &b);
        // k₁F = Q and 2πeλ = den kill both terms but −λ/2ρ
        let k1 = m.q() / m.f();
        let lambda = den / (2.0 * PI * E);
        let k0 = compute_k0(k1, k2, &m, &b, rho, lambda).unwrap();
        assert!((k0 + lambda / (2.0 * rho)).abs() < 1e-15);

        // λ → 0⁺
        let limit = (0.3 * m.f() - m.q()).powi(2) / (rho * den);
        let tiny = compute_k0(0.3, k2, &m, &b, rho, 1e-12).unwrap();
        assert!((tiny - limit).abs() < 1e-9);

        assert!(compute_k0(0.3, k2, &m, &b, rho, 0.0).is_err());
        let pole = m.k() / (m.d() * m.d() * b.upper_sq());
        assert!(matches!(
            compute_k0(0.3, pole, &m, &b, rho, 0.6),
            Err(Error::IllPosedPolicy(_))
        ));
    }

    #[test]
    fn value_is_concave_quadratic() {
        let c = HjbCoefficients::new(-0.5, 0.1, 0.3).unwrap();
        assert_eq!(exploratory_value(0.0, &c), 0.3);
        assert!((exploratory_value(1.0, &c) - (-0.25 + 0.1 + 0.3)).abs() < 1e-15);
        for &(x, y) in &[(-3.0, 2.0), (0.1, 0.7), (-10.0, -9.0)] {
            let mid = exploratory_value(0.5 * (x + y), &c);
            assert!(mid >= 0.5 * (exploratory_value(x, &c) + exploratory_value(y, &c)));
        }
        assert!(HjbCoefficients::new(0.0, 0.0, 0.0).is_err());
        assert!(HjbCoefficients::new(-1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn reported_variances_by_discount_rate() {
        let (m, b) = (table(), upper(1.0));
        let var = |rho: f64| {
            let agent = AgentParams::new(0.6, rho).unwrap();
            let c = solve_hjb(&m, &b, &agent, RootSelection::default()).unwrap();
            optimal_policy(1.0, &c, &m, &b, 0.6).unwrap().variance()
        };
        assert!((var(1.5) - 0.07).abs() <= 0.02, "{}", var(1.5));
        assert!((var(0.1) - 0.28).abs() <= 0.02, "{}", var(0.1));
    }

    #[test]
    fn variance_is_linear_in_lambda() {
        let (m, b) = (table(), upper(1.0));
        let c = HjbCoefficients::new(-0.5, 0.1, 0.0).unwrap();
        let den = effective_control_penalty(-0.5, &m, &b);
        for &lambda in &[1.0, 1e-3, 1e-9] {
            let p = optimal_policy(1.0, &c, &m, &b, lambda).unwrap();
            assert_eq!(p.variance(), lambda / den);
        }
        assert!(optimal_policy(1.0, &c, &m, &b, 0.0).is_err());
    }

    #[test]
    fn policy_from_value_cases() {
        let (m, b) = (table(), upper(1.0));
        let lambda = 0.6;
        // flat curvature
        let dv = DifferentiableValue::new(|_| 0.7, |_| 0.0);
        let x = 1.3;
        let p = lq_policy_from_value(x, &dv, &m, &b, lambda).unwrap();
        assert!((p.mean() - (m.f() * 0.7 - m.i() * x - m.q()) / m.k()).abs() < 1e-15);
        assert_eq!(p.variance(), lambda / m.k());

        // quadratic value reproduces the closed form
        let c = HjbCoefficients::new(-0.5, 0.1, 0.0).unwrap();
        for j in 0..=20 {
            let x = -5.0 + 0.5 * j as f64;
            let a = lq_policy_from_value(x, &c.differentiable(), &m, &b, lambda).unwrap();
            let o = optimal_policy(x, &c, &m, &b, lambda).unwrap();
            assert!((a.mean() - o.mean()).abs() < 1e-12);
            assert!((a.variance() - o.variance()).abs() < 1e-12);
        }

        // D = 0 removes curvature from the variance
        let nd = ModelParams::new(-0.2, 0.8, 0.5, 0.0, 10.0, 0.3, 2.0, 0.5, 0.2).unwrap();
        for &v2 in &[-5.0, 0.0, 5.0] {
            let dv = DifferentiableValue::new(|x| x, move |_| v2);
            let p = lq_policy_from_value(0.4, &dv, &nd, &b, lambda).unwrap();
            assert_eq!(p.variance(), lambda / nd.k());
        }

        // convex value with too much curvature is ill-posed
        let dv = DifferentiableValue::new(|_| 0.0, |_| 1000.0);
        assert!(matches!(
            lq_policy_from_value(0.0, &dv, &m, &b, lambda),
            Err(Error::IllPosedPolicy(_))
        ));
    }

    #[test]
    fn non_exploratory_relations() {
        let (m, b) = (table(), upper(1.0));
        let agent = AgentParams::new(0.6, 0.3).unwrap();
        let c = solve_hjb(&m, &b, &agent, RootSelection::default()).unwrap();
        let den = effective_control_penalty(c.k2(), &m, &b);
        let expected = 0.6 / (2.0 * 0.3) * ((2.0 * PI * E * 0.6 / den).ln() - 1.0);
        for &x in &[-4.0, 0.0, 2.5] {
            let gap =
                exploratory_value(x, &c) - non_exploratory_value(x, &c, &m, &b, &agent).unwrap();
            assert!((gap - expected).abs() < 1e-12);
        }

        // u*(x₀) = 0 at the numerator root
        let slope = c.k2() * (m.f() + m.c() * m.d() * b.upper_sq()) - m.i();
        let x0 = (m.q() - c.k1() * m.f()) / slope;
        assert!(non_exploratory_control(x0, &c, &m, &b).unwrap().abs() < 1e-15);

        // affine in x
        let u = |x: f64| non_exploratory_control(x, &c, &m, &b).unwrap();
        let (x1, x2) = (1.7, -0.4);
        assert!((u(x1 + x2) - u(x2) - u(x1) + u(0.0)).abs() < 1e-14);

        // shared formula with the Gaussian mean
        for j in 0..=100 {
            let x = -5.0 + 0.1 * j as f64;
            let mu = optimal_policy(x, &c, &m, &b, 0.6).unwrap().mean();
            assert_eq!(mu, u(x));
        }
    }

    #[test]
    fn unit_discount_satisfies_reduced_hjb() {
        // At ρ = 1 the scalar coefficient equations are the matching powers
        // of x in the reduced HJB.
        let m = table();
        let b = AmbiguityBounds::classical(1.0).unwrap();
        let agent = AgentParams::new(0.6, 1.0).unwrap();
        let c = solve_hjb(&m, &b, &agent, RootSelection::default()).unwrap();
        for &x in &[-3.0, -0.5, 0.0, 1.0, 4.0] {
            let r = reduced_hjb_residual(x, &c, &m, &b, &agent).unwrap();
            assert!(r.abs() < 1e-10, "x={x} r={r}");
        }
    }
}
