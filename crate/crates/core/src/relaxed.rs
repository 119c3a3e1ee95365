//! Relaxed (density-valued) controls: averaged coefficients, differential
//! entropy and the Boltzmann maximiser of the entropy-regularised
//! Hamiltonian.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use crate::error::{finite, Error, Result};
use crate::model::{g_tilde_unchecked, AmbiguityBounds, ModelParams};
use crate::quadrature::{integrate, Tolerance};

/// Allowed deviation of a density's total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Gaussian supports are truncated this many standard deviations out.
pub const GAUSSIAN_TRUNCATION: f64 = 8.0;

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A probability density on a closed interval, zero outside it.
#[derive(Clone)]
pub struct PolicyDensity {
    pdf: Eval,
    ln_pdf: Option<Eval>,
    lo: f64,
    hi: f64,
}

impl fmt::Debug for PolicyDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyDensity")
            .field("support", &(self.lo, self.hi))
            .finish_non_exhaustive()
    }
}

impl PolicyDensity {
    /// Wraps an arbitrary density, checking that it is non-negative on a
    /// sample grid and integrates to one within [`NORMALIZATION_TOL`].
    pub fn new<F>(pdf: F, lo: f64, hi: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::build(Arc::new(pdf), None, lo, hi)
    }

    fn build(pdf: Eval, ln_pdf: Option<Eval>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "density support [{lo}, {hi}] must be a finite non-empty interval"
            )));
        }
        let steps = 1000;
        for j in 0..=steps {
            let u = lo + (hi - lo) * j as f64 / steps as f64;
            let p = pdf(u);
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "density value {p} at u = {u} is negative or non-finite"
                )));
            }
        }
        let density = Self {
            pdf,
            ln_pdf,
            lo,
            hi,
        };
        let mass = density.mass()?;
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Normalization { mass });
        }
        Ok(density)
    }

    /// Normal(mean, variance) truncated to `mean ± 8σ`.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        finite(mean, "mean")?;
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "variance {variance} must be > 0"
            )));
        }
        let sd = variance.sqrt();
        let ln_norm = -0.5 * (2.0 * PI * variance).ln();
        let ln_pdf = move |u: f64| ln_norm - (u - mean) * (u - mean) / (2.0 * variance);
        let pdf = move |u: f64| ln_pdf(u).exp();
        Self::build(
            Arc::new(pdf),
            Some(Arc::new(ln_pdf)),
            mean - GAUSSIAN_TRUNCATION * sd,
            mean + GAUSSIAN_TRUNCATION * sd,
        )
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let w = hi - lo;
        let ln_w = w.ln();
        Self::build(
            Arc::new(move |_| 1.0 / w),
            Some(Arc::new(move |_| -ln_w)),
            lo,
            hi,
        )
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Density at `u`; zero outside the support.
    pub fn pdf(&self, u: f64) -> f64 {
        if u < self.lo || u > self.hi {
            0.0
        } else {
            (self.pdf)(u)
        }
    }

    fn theta_ln_theta(&self, u: f64) -> f64 {
        match &self.ln_pdf {
            Some(ln) => {
                let l = ln(u);
                if l == f64::NEG_INFINITY {
                    0.0
                } else {
                    l.exp() * l
                }
            }
            None => {
                let p = (self.pdf)(u);
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ g(u) θ(u) du` over the support.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        integrate(
            |u| g(u) * (self.pdf)(u),
            self.lo,
            self.hi,
            Tolerance::default(),
        )
        .map(|e| e.value)
    }

    pub fn mass(&self) -> Result<f64> {
        self.expect(|_| 1.0)
    }
}

/// Evaluators for `v'` and `v''` of a candidate value function.
#[derive(Clone)]
pub struct DifferentiableValue {
    v1: Eval,
    v2: Eval,
}

impl fmt::Debug for DifferentiableValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DifferentiableValue { .. }")
    }
}

impl DifferentiableValue {
    pub fn new<F1, F2>(v1: F1, v2: F2) -> Self
    where
        F1: Fn(f64) -> f64 + Send + Sync + 'static,
        F2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            v1: Arc::new(v1),
            v2: Arc::new(v2),
        }
    }

    /// Derivatives of `½k₂x² + k₁x + k₀`.
    pub fn quadratic(k2: f64, k1: f64) -> Self {
        Self::new(move |x| k2 * x + k1, move |_| k2)
    }

    pub fn v1(&self, x: f64) -> Result<f64> {
        finite((self.v1)(x), "v'(x)")
    }

    pub fn v2(&self, x: f64) -> Result<f64> {
        finite((self.v2)(x), "v''(x)")
    }
}

/// `∫ b(x, u) θ(u) du`
pub fn relaxed_drift(x: f64, theta: &PolicyDensity, m: &ModelParams) -> Result<f64> {
    finite(x, "state")?;
    theta.expect(|u| m.a() * x + m.f() * u)
}

/// `√(∫ σ²(x, u) θ(u) du)`
pub fn relaxed_vol(x: f64, theta: &PolicyDensity, m: &ModelParams) -> Result<f64> {
    finite(x, "state")?;
    let second = theta.expect(|u| {
        let s = m.c() * x + m.d() * u;
        s * s
    })?;
    Ok(second.max(0.0).sqrt())
}

/// `∫ r(x, u) θ(u) du`
pub fn relaxed_reward(x: f64, theta: &PolicyDensity, m: &ModelParams) -> Result<f64> {
    finite(x, "state")?;
    theta.expect(|u| crate::model::reward_unchecked(x, u, m))
}

/// Differential entropy `−∫ θ ln θ du`, with `0 ln 0 = 0`.
pub fn entropy(theta: &PolicyDensity) -> Result<f64> {
    integrate(
        |u| theta.theta_ln_theta(u),
        theta.lo,
        theta.hi,
        Tolerance::default(),
    )
    .map(|e| -e.value)
}

/// Entropy of Normal(·, variance): `½ ln(2πe·variance)`.
pub fn gaussian_entropy(variance: f64) -> f64 {
    0.5 * (2.0 * PI * E * variance).ln()
}

/// Relaxed drift for a Gaussian policy: `A x + F μ`.
pub fn relaxed_drift_gaussian(x: f64, mean: f64, m: &ModelParams) -> f64 {
    m.a() * x + m.f() * mean
}

/// Squared relaxed volatility for a Gaussian policy:
/// `(C x + D μ)² + D² s²`.
pub fn relaxed_vol_sq_gaussian(x: f64, mean: f64, variance: f64, m: &ModelParams) -> f64 {
    let s = m.c() * x + m.d() * mean;
    s * s + m.d() * m.d() * variance
}

/// Relaxed reward for a Gaussian policy, using `E[u²] = μ² + s²`.
pub fn relaxed_reward_gaussian(x: f64, mean: f64, variance: f64, m: &ModelParams) -> f64 {
    -(0.5 * m.m() * x * x
        + m.i() * x * mean
        + 0.5 * m.k() * (mean * mean + variance)
        + m.p() * x
        + m.q() * mean)
}

/// The Hamiltonian exponent
/// `Ψ(x, u) = r(x, u) + σ²(x, u)·G̃[v''(x)] + b(x, u)·v'(x)`
/// as a function of `u`.
pub fn hamiltonian(
    x: f64,
    dv: &DifferentiableValue,
    m: &ModelParams,
    b: &AmbiguityBounds,
) -> Result<impl Fn(f64) -> f64 + Send + Sync + 'static> {
    finite(x, "state")?;
    let v1 = dv.v1(x)?;
    let g = g_tilde_unchecked(dv.v2(x)?, b);
    let m = *m;
    Ok(move |u: f64| {
        let s = m.c() * x + m.d() * u;
        crate::model::reward_unchecked(x, u, &m) + s * s * g + (m.a() * x + m.f() * u) * v1
    })
}

/// Normalised `exp(Ψ(u)/λ)`.
///
/// Without an explicit support the exponent must be strictly concave; the
/// support is then the vertex of the quadratic fit ± 8 implied standard
/// deviations. A bounded support accepts any exponent whose normaliser is
/// finite and positive.
pub fn boltzmann_from_exponent<P>(
    psi: P,
    lambda: f64,
    support: Option<(f64, f64)>,
) -> Result<PolicyDensity>
where
    P: Fn(f64) -> f64 + Send + Sync + 'static,
{
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} must be > 0"
        )));
    }
    let (p_m, p_0, p_p) = (psi(-1.0), psi(0.0), psi(1.0));
    if !(p_m.is_finite() && p_0.is_finite() && p_p.is_finite()) {
        return Err(Error::IllPosedPolicy("exponent is not finite".into()));
    }
    let curv = 0.5 * (p_p + p_m) - p_0;
    let slope = 0.5 * (p_p - p_m);
    let vertex = if curv < 0.0 {
        Some(-slope / (2.0 * curv))
    } else {
        None
    };

    let (lo, hi) = match support {
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "support [{lo}, {hi}] must be a finite non-empty interval"
                )));
            }
            (lo, hi)
        }
        None => {
            let Some(mu) = vertex else {
                return Err(Error::IllPosedPolicy(format!(
                    "exponent curvature {curv} >= 0: exp(Psi/lambda) is not integrable on R \
                     (K - 2 D^2 G[v''] <= 0)"
                )));
            };
            let sd = (lambda / (-2.0 * curv)).sqrt();
            (mu - GAUSSIAN_TRUNCATION * sd, mu + GAUSSIAN_TRUNCATION * sd)
        }
    };

    let mut shift = psi(lo).max(psi(hi));
    if let Some(mu) = vertex.filter(|mu| (lo..=hi).contains(mu)) {
        shift = shift.max(psi(mu));
    }
    if !shift.is_finite() {
        return Err(Error::IllPosedPolicy(
            "exponent is not finite on the support".into(),
        ));
    }

    let psi = Arc::new(psi);
    let z = {
        let psi = Arc::clone(&psi);
        integrate(
            move |u| ((psi(u) - shift) / lambda).exp(),
            lo,
            hi,
            Tolerance::default(),
        )
        .map_err(|e| Error::IllPosedPolicy(format!("normalising integral failed: {e}")))?
        .value
    };
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::IllPosedPolicy(format!("normalising constant {z}")));
    }
    let ln_z = z.ln();
    let ln_pdf = {
        let psi = Arc::clone(&psi);
        move |u: f64| (psi(u) - shift) / lambda - ln_z
    };
    let pdf = {
        let psi = Arc::clone(&psi);
        move |u: f64| ((psi(u) - shift) / lambda - ln_z).exp()
    };
    PolicyDensity::build(Arc::new(pdf), Some(Arc::new(ln_pdf)), lo, hi)
}

/// Boltzmann maximiser `θ*(u; x) ∝ exp(Ψ(x, u)/λ)` for a given value
/// function.
pub fn boltzmann_policy(
    x: f64,
    dv: &DifferentiableValue,
    m: &ModelParams,
    b: &AmbiguityBounds,
    lambda: f64,
    support: Option<(f64, f64)>,
) -> Result<PolicyDensity> {
    let psi = hamiltonian(x, dv, m, b)?;
    boltzmann_from_exponent(psi, lambda, support)
}
