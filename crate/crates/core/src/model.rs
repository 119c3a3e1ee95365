//! Model constants, ambiguity interval, agent preferences and the
//! primitive coefficient functions of the scalar LQ problem.
//!
//! The state evolves as `dX = b(X, u) dt + σ(X, u) dB` where `B` is a
//! G-Brownian motion whose quadratic variation rate lies in
//! `[σ̲², σ̄²]`, with
//!
//! ```text
//! b(x, u) = A x + F u
//! σ(x, u) = C x + D u
//! r(x, u) = -(M/2 x² + I x u + K/2 u² + P x + Q u)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{finite, Error, Result};

/// The nine constants of the linear dynamics and quadratic reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ModelParams {
    a: f64,
    f: f64,
    c: f64,
    d: f64,
    m: f64,
    i: f64,
    k: f64,
    p: f64,
    q: f64,
}

/// Unvalidated field set, used for (de)serialisation with the upper-case
/// key names of the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: f64,
}

impl TryFrom<RawModel> for ModelParams {
    type Error = Error;

    fn try_from(r: RawModel) -> Result<Self> {
        ModelParams::new(r.a, r.f, r.c, r.d, r.m, r.i, r.k, r.p, r.q)
    }
}

impl From<ModelParams> for RawModel {
    fn from(m: ModelParams) -> Self {
        RawModel {
            a: m.a,
            f: m.f,
            c: m.c,
            d: m.d,
            m: m.m,
            i: m.i,
            k: m.k,
            p: m.p,
            q: m.q,
        }
    }
}

impl ModelParams {
    /// Builds the model, rejecting `M < 0`, `K <= 0` and non-finite values.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: f64,
        f: f64,
        c: f64,
        d: f64,
        m: f64,
        i: f64,
        k: f64,
        p: f64,
        q: f64,
    ) -> Result<Self> {
        for (v, name) in [
            (a, "A"),
            (f, "F"),
            (c, "C"),
            (d, "D"),
            (m, "M"),
            (i, "I"),
            (k, "K"),
            (p, "P"),
            (q, "Q"),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} is not finite"
                )));
            }
        }
        if m < 0.0 {
            return Err(Error::InvalidParameter(format!("M = {m} must be >= 0")));
        }
        if k <= 0.0 {
            return Err(Error::InvalidParameter(format!("K = {k} must be > 0")));
        }
        Ok(Self {
            a,
            f,
            c,
            d,
            m,
            i,
            k,
            p,
            q,
        })
    }

    /// The indoor temperature regulation example: A=-0.2, F=0.8, C=0.5,
    /// D=1.2, M=10, I=0.3, K=2, P=0.5, Q=0.2.
    pub fn temperature_control() -> Self {
        Self::new(-0.2, 0.8, 0.5, 1.2, 10.0, 0.3, 2.0, 0.5, 0.2)
            .expect("reference parameters are valid")
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn f(&self) -> f64 {
        self.f
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn i(&self) -> f64 {
        self.i
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Returns a copy with `M` replaced.
    pub fn with_m(&self, m: f64) -> Result<Self> {
        Self::new(
            self.a, self.f, self.c, self.d, m, self.i, self.k, self.p, self.q,
        )
    }

    pub fn raw(&self) -> RawModel {
        (*self).into()
    }
}

/// Volatility-uncertainty interval `[σ̲², σ̄²]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityBounds {
    sigma_lower_sq: f64,
    sigma_upper_sq: f64,
}

impl AmbiguityBounds {
    pub fn new(sigma_lower_sq: f64, sigma_upper_sq: f64) -> Result<Self> {
        if !(sigma_lower_sq.is_finite() && sigma_upper_sq.is_finite()) {
            return Err(Error::InvalidParameter(
                "variance bounds must be finite".into(),
            ));
        }
        if sigma_lower_sq <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lower variance {sigma_lower_sq} must be > 0"
            )));
        }
        if sigma_lower_sq > sigma_upper_sq {
            return Err(Error::InvalidParameter(format!(
                "lower variance {sigma_lower_sq} exceeds upper variance {sigma_upper_sq}"
            )));
        }
        Ok(Self {
            sigma_lower_sq,
            sigma_upper_sq,
        })
    }

    /// Single-measure case `σ̲² = σ̄² = σ²`.
    pub fn classical(sigma_sq: f64) -> Result<Self> {
        Self::new(sigma_sq, sigma_sq)
    }

    pub fn lower_sq(&self) -> f64 {
        self.sigma_lower_sq
    }
    pub fn upper_sq(&self) -> f64 {
        self.sigma_upper_sq
    }
    pub fn lower(&self) -> f64 {
        self.sigma_lower_sq.sqrt()
    }
    pub fn upper(&self) -> f64 {
        self.sigma_upper_sq.sqrt()
    }
}

/// Exploration weight `λ` and discount rate `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    lambda: f64,
    rho: f64,
}

impl AgentParams {
    pub fn new(lambda: f64, rho: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {lambda} must be > 0"
            )));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho = {rho} must be > 0")));
        }
        Ok(Self { lambda, rho })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// `b(x, u) = A x + F u`
pub fn drift(x: f64, u: f64, m: &ModelParams) -> Result<f64> {
    finite(x, "state")?;
    finite(u, "action")?;
    Ok(m.a * x + m.f * u)
}

/// `σ(x, u) = C x + D u`
pub fn diffusion(x: f64, u: f64, m: &ModelParams) -> Result<f64> {
    finite(x, "state")?;
    finite(u, "action")?;
    Ok(m.c * x + m.d * u)
}

/// `r(x, u) = -(M/2 x² + I x u + K/2 u² + P x + Q u)`
pub fn reward(x: f64, u: f64, m: &ModelParams) -> Result<f64> {
    finite(x, "state")?;
    finite(u, "action")?;
    Ok(reward_unchecked(x, u, m))
}

#[inline]
pub(crate) fn reward_unchecked(x: f64, u: f64, m: &ModelParams) -> f64 {
    -(0.5 * m.m * x * x + m.i * x * u + 0.5 * m.k * u * u + m.p * x + m.q * u)
}

/// Lower-expectation second-order operator
/// `G̃[c] = ½(σ̲² c⁺ − σ̄² c⁻)`.
///
/// Concave curvature is charged at the upper variance and convex curvature
/// at the lower one, the ambiguity-averse choice.
pub fn g_tilde(c: f64, b: &AmbiguityBounds) -> Result<f64> {
    finite(c, "second derivative")?;
    Ok(g_tilde_unchecked(c, b))
}

#[inline]
pub(crate) fn g_tilde_unchecked(c: f64, b: &AmbiguityBounds) -> f64 {
    if c >= 0.0 {
        0.5 * b.sigma_lower_sq * c
    } else {
        0.5 * b.sigma_upper_sq * c
    }
}
