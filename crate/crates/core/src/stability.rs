//! Closed-loop stability coefficients, the Gronwall dominating bound on the
//! squared state, the exploration cost and the vanishing-exploration sweep.
//!
//! Under the optimal feedback both the exploratory and the classical state
//! follow `dX = (A₁X + A₂)dt + √((B₁X + B₂)² + C₁) dB`, with `C₁ = 0` for the
//! classical process. `G`-Itô plus `d⟨B⟩ ≤ σ̄²dt` gives
//! `Ê[X_t²] ≤ e^{αt}x² + (β/α)(e^{αt} − 1)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lq::{
    effective_control_penalty, entropy_offset, exploratory_value, non_exploratory_value,
    optimal_policy, solve_hjb, HjbCoefficients, RootSelection,
};
use crate::model::{AgentParams, AmbiguityBounds, ModelParams};
use crate::relaxed::gaussian_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    /// Exploration floor `λD²/(K − k₂D²σ̄²)`; zero for the classical process.
    pub c1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub exploratory: bool,
    pub sigma_upper_sq: f64,
}

impl StabilityCoefficients {
    /// Diffusion coefficient `√((B₁x + B₂)² + C₁)` at `x`.
    pub fn diffusion(&self, x: f64) -> f64 {
        let s = self.b1 * x + self.b2;
        (s * s + self.c1).sqrt()
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.a1 * x + self.a2
    }
}

pub fn stability_coefficients(
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    lambda: f64,
    exploratory: bool,
) -> Result<StabilityCoefficients> {
    let den = effective_control_penalty(coeffs.k2(), m, b);
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::IllPosedPolicy(format!(
            "K - k2 D^2 sigma_upper^2 = {den} is not positive"
        )));
    }
    if exploratory && !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} must be > 0"
        )));
    }
    let s2 = b.upper_sq();
    let slope = (coeffs.k2() * (m.f() + m.c() * m.d() * s2) - m.i()) / den;
    let intercept = (coeffs.k1() * m.f() - m.q()) / den;
    let a1 = m.a() + m.f() * slope;
    let a2 = m.f() * intercept;
    let b1 = m.c() + m.d() * slope;
    let b2 = m.d() * intercept;
    let c1 = if exploratory {
        lambda * m.d() * m.d() / den
    } else {
        0.0
    };
    let cross = (2.0 * a2 + 2.0 * s2 * b1 * b2).abs() / 2.0;
    let alpha = 2.0 * a1 + s2 * b1 * b1 + cross;
    let beta = cross + s2 * (b2 * b2 + c1);
    Ok(StabilityCoefficients {
        a1,
        a2,
        b1,
        b2,
        c1,
        alpha,
        beta,
        exploratory,
        sigma_upper_sq: s2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub margin: f64,
}

/// `ρ > α`, with margin `ρ − α`.
pub fn check_admissibility(rho: f64, sc: &StabilityCoefficients) -> Admissibility {
    Admissibility {
        admissible: rho > sc.alpha,
        margin: rho - sc.alpha,
    }
}

/// `Y_t` (exploratory) or `Z_t` (classical):
/// `e^{αt}x₀² + (β/α)(e^{αt} − 1)`.
pub fn dominating_bound(t: f64, x0: f64, sc: &StabilityCoefficients) -> Result<f64> {
    if sc.alpha == 0.0 {
        return Err(Error::ZeroGrowthExponent);
    }
    if !(t.is_finite() && x0.is_finite()) {
        return Err(Error::NonFinite("time or initial state"));
    }
    let growth = (sc.alpha * t).exp();
    Ok(growth * x0 * x0 + sc.beta / sc.alpha * (sc.alpha * t).exp_m1())
}

/// Exploration cost of the LQ problem, `λ/(2ρ)`.
pub fn exploration_cost(agent: &AgentParams) -> f64 {
    agent.lambda() / (2.0 * agent.rho())
}

/// `V(x) − Vⁿᵉ(x) = (λ/2ρ)(ln(2πeλ/(K − k₂D²σ̄²)) − 1)`.
pub fn value_gap(
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
) -> Result<f64> {
    let den = effective_control_penalty(coeffs.k2(), m, b);
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::IllPosedPolicy(format!(
            "K - k2 D^2 sigma_upper^2 = {den} is not positive"
        )));
    }
    Ok(entropy_offset(agent.lambda(), agent.rho(), den))
}

/// The exploration cost assembled from its definition at `x`:
/// `(Vⁿᵉ(x) − V(x)) − λ ∫₀^∞ e^{−ρt} ∫ θ ln θ du dt`.
///
/// The optimal variance does not depend on the state, so the inner entropy
/// is the constant `½ln(2πeσ²)` and the time integral is that over `ρ`.
pub fn assembled_exploration_cost(
    x: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
) -> Result<f64> {
    let v = exploratory_value(x, coeffs);
    let v_ne = non_exploratory_value(x, coeffs, m, b, agent)?;
    let variance = optimal_policy(x, coeffs, m, b, agent.lambda())?.variance();
    let neg_entropy = -gaussian_entropy(variance);
    let discounted = neg_entropy / agent.rho();
    Ok((v_ne - v) - agent.lambda() * discounted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub lambda: f64,
    pub mean: f64,
    pub variance: f64,
    pub value: f64,
    pub non_exploratory_value: f64,
    pub gap_abs: f64,
}

/// Policy variance and |V − Vⁿᵉ| at `x` along a descending λ grid.
pub fn convergence_sweep(
    lambda_grid: &[f64],
    m: &ModelParams,
    b: &AmbiguityBounds,
    rho: f64,
    x: f64,
) -> Result<Vec<ConvergenceRow>> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidGrid("lambda grid is empty".into()));
    }
    for (i, &l) in lambda_grid.iter().enumerate() {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::GridPoint {
                index: i,
                reason: format!("lambda = {l} is not strictly positive"),
            });
        }
        if i > 0 && l >= lambda_grid[i - 1] {
            return Err(Error::InvalidGrid(format!(
                "lambda grid is not strictly descending at index {i}"
            )));
        }
    }
    lambda_grid
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let row = || -> Result<ConvergenceRow> {
                let agent = AgentParams::new(lambda, rho)?;
                let c = solve_hjb(m, b, &agent, RootSelection::default())?;
                let p = optimal_policy(x, &c, m, b, lambda)?;
                let value = exploratory_value(x, &c);
                let v_ne = non_exploratory_value(x, &c, m, b, &agent)?;
                Ok(ConvergenceRow {
                    lambda,
                    mean: p.mean(),
                    variance: p.variance(),
                    value,
                    non_exploratory_value: v_ne,
                    gap_abs: (value - v_ne).abs(),
                })
            };
            row().map_err(|e| Error::GridPoint {
                index: i,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// True when both variance and |gap| strictly decrease along the rows.
pub fn is_converging(rows: &[ConvergenceRow]) -> bool {
    rows.windows(2)
        .all(|w| w[1].variance < w[0].variance && w[1].gap_abs < w[0].gap_abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::solve_hjb;

    fn setup(
        rho: f64,
        lambda: f64,
        s: f64,
    ) -> (ModelParams, AmbiguityBounds, AgentParams, HjbCoefficients) {
        let m = ModelParams::temperature_control();
        let b = AmbiguityBounds::new((s * s).min(0.01), s * s).unwrap();
        let agent = AgentParams::new(lambda, rho).unwrap();
        let c = solve_hjb(&m, &b, &agent, RootSelection::default()).unwrap();
        (m, b, agent, c)
    }

    #[test]
    fn alpha_identical_for_both_processes() {
        for &s in &[0.1, 0.5, 1.0] {
            let (m, b, agent, c) = setup(0.3, 0.6, s);
            let e = stability_coefficients(&c, &m, &b, agent.lambda(), true).unwrap();
            let k = stability_coefficients(&c, &m, &b, agent.lambda(), false).unwrap();
            assert_eq!(e.alpha, k.alpha);
            assert!(e.c1 > 0.0);
            assert_eq!(k.c1, 0.0);
            assert!(e.beta > k.beta);
        }
    }

    #[test]
    fn uncontrolled_system() {
        let m = ModelParams::new(-0.3, 0.0, 0.4, 0.0, 1.0, 0.2, 1.0, 0.1, 0.1).unwrap();
        let b = AmbiguityBounds::new(0.5, 2.0).unwrap();
        let c = HjbCoefficients::new(-1.0, 0.3, 0.0).unwrap();
        let sc = stability_coefficients(&c, &m, &b, 0.6, true).unwrap();
        assert_eq!((sc.a1, sc.b1, sc.a2, sc.b2), (-0.3, 0.4, 0.0, 0.0));
        assert!((sc.alpha - (2.0 * -0.3 + 2.0 * 0.16)).abs() < 1e-15);
    }

    #[test]
    fn reference_discount_is_admissible() {
        let (m, b, agent, c) = setup(0.3, 0.6, 1.0);
        let sc = stability_coefficients(&c, &m, &b, agent.lambda(), true).unwrap();
        assert!(sc.alpha < 0.3);
        assert!(check_admissibility(0.3, &sc).admissible);
    }

    #[test]
    fn admissibility_is_strict() {
        let (m, b, agent, c) = setup(0.3, 0.6, 1.0);
        let sc = stability_coefficients(&c, &m, &b, agent.lambda(), true).unwrap();
        let a = check_admissibility(sc.alpha + 1.0, &sc);
        assert!(a.admissible);
        assert!((a.margin - 1.0).abs() < 1e-15);
        assert!(!check_admissibility(sc.alpha, &sc).admissible);
    }

    #[test]
    fn dominating_bound_cases() {
        let (m, b, agent, c) = setup(0.3, 0.6, 1.0);
        let sc = stability_coefficients(&c, &m, &b, agent.lambda(), true).unwrap();
        assert!((dominating_bound(0.0, 1.7, &sc).unwrap() - 1.7 * 1.7).abs() < 1e-15);

        let homog = StabilityCoefficients { beta: 0.0, ..sc };
        let t = 2.5;
        assert!(
            (dominating_bound(t, 1.7, &homog).unwrap() - (sc.alpha * t).exp() * 1.7 * 1.7).abs()
                < 1e-14
        );

        let growing = StabilityCoefficients {
            alpha: 0.2,
            beta: 0.5,
            ..sc
        };
        let ys: Vec<f64> = (0..10)
            .map(|i| dominating_bound(i as f64, 1.0, &growing).unwrap())
            .collect();
        assert!(ys.windows(2).all(|w| w[1] > w[0]));

        let flat = StabilityCoefficients { alpha: 0.0, ..sc };
        assert_eq!(
            dominating_bound(1.0, 1.0, &flat),
            Err(Error::ZeroGrowthExponent)
        );
    }

    #[test]
    fn discounted_bound_vanishes_when_admissible() {
        let (m, b, agent, c) = setup(0.3, 0.6, 1.0);
        let sc = stability_coefficients(&c, &m, &b, agent.lambda(), true).unwrap();
        let tail: Vec<f64> = [10.0, 50.0, 100.0]
            .iter()
            .map(|&t| (-agent.rho() * t).exp() * dominating_bound(t, 1.0, &sc).unwrap())
            .collect();
        assert!(tail[0] > tail[1] && tail[1] > tail[2], "{tail:?}");
    }

    #[test]
    fn exploration_cost_cases() {
        assert_eq!(exploration_cost(&AgentParams::new(0.6, 0.3).unwrap()), 1.0);
        assert!(exploration_cost(&AgentParams::new(1e-300, 0.3).unwrap()) < 1e-299);
    }

    #[test]
    fn cost_identity_over_grid() {
        for &lambda in &[0.1, 0.6, 2.0] {
            for &rho in &[0.1, 0.3, 1.5] {
                for &s in &[0.1, 0.5, 1.0] {
                    let (m, b, agent, c) = setup(rho, lambda, s);
                    for &x in &[-5.0, 0.0, 7.0] {
                        let cost = assembled_exploration_cost(x, &c, &m, &b, &agent).unwrap();
                        assert!((cost - lambda / (2.0 * rho)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gap_is_state_independent() {
        let (m, b, agent, c) = setup(0.3, 0.6, 0.5);
        let gap = value_gap(&c, &m, &b, &agent).unwrap();
        for &x in &[-5.0, 0.0, 7.0] {
            let d =
                exploratory_value(x, &c) - non_exploratory_value(x, &c, &m, &b, &agent).unwrap();
            assert!((d - gap).abs() < 1e-12);
        }
        // λ tuned so that the logarithm vanishes
        let den = effective_control_penalty(c.k2(), &m, &b);
        let lambda = den / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        let a = AgentParams::new(lambda, 0.3).unwrap();
        assert!((value_gap(&c, &m, &b, &a).unwrap() + lambda / 0.6).abs() < 1e-15);
    }

    #[test]
    fn sweep_converges() {
        let m = ModelParams::temperature_control();
        let b = AmbiguityBounds::new(0.01, 1.0).unwrap();
        let rows = convergence_sweep(&[0.01, 0.005, 0.001], &m, &b, 0.3, 1.0).unwrap();
        assert!(is_converging(&rows));
        let ratio = rows[0].variance / rows[0].lambda;
        for r in &rows {
            assert!((r.variance / r.lambda - ratio).abs() < 1e-12 * ratio);
            assert_eq!(r.mean, rows[0].mean);
        }
        assert!(rows[2].gap_abs < rows[0].gap_abs);
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let m = ModelParams::temperature_control();
        let b = AmbiguityBounds::new(0.01, 1.0).unwrap();
        assert!(matches!(
            convergence_sweep(&[], &m, &b, 0.3, 1.0),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(
            convergence_sweep(&[0.01, 0.0], &m, &b, 0.3, 1.0),
            Err(Error::GridPoint { index: 1, .. })
        ));
        assert!(matches!(
            convergence_sweep(&[0.01, 0.02], &m, &b, 0.3, 1.0),
            Err(Error::InvalidGrid(_))
        ));
    }
}
