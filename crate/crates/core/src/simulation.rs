//! Euler–Maruyama simulation of the optimally controlled state under a
//! finite family of volatility scenarios.
//!
//! A scenario is a deterministic volatility path `σ_t` with
//! `σ_t² ∈ [σ̲², σ̄²]`; the G-Brownian motion is approximated by the family of
//! classical Brownian motions scaled by these paths, and lower/upper
//! expectations by the min/max of per-scenario Monte Carlo means. A finite
//! family is an inner approximation: the reported upper expectation is a
//! lower bound on the true one, and symmetrically for the lower.
//!
//! Every path draws from its own ChaCha stream derived from the master seed,
//! so results do not depend on how paths are scheduled across threads.

use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lq::{effective_control_penalty, exploratory_value, GaussianPolicy, HjbCoefficients};
use crate::model::{AgentParams, AmbiguityBounds, ModelParams};
use crate::relaxed::{gaussian_entropy, relaxed_reward_gaussian};
use crate::stability::{check_admissibility, dominating_bound, stability_coefficients};

/// Relative slack when checking `σ²` against the ambiguity interval.
const FEASIBILITY_SLACK: f64 = 1e-12;

/// Number of constant pieces in each random scenario.
pub const DEFAULT_PIECES: usize = 4;
pub const DEFAULT_RANDOM_SCENARIOS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VolatilityScenario {
    Constant {
        sigma: f64,
    },
    /// `values[j]` applies on `[breakpoints[j-1], breakpoints[j])`, with the
    /// first value from time zero and the last one beyond the final
    /// breakpoint.
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

impl VolatilityScenario {
    pub fn constant(sigma: f64) -> Self {
        Self::Constant { sigma }
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::Scenario(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                values.len()
            )));
        }
        if breakpoints.iter().any(|t| !(t.is_finite() && *t > 0.0))
            || breakpoints.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Scenario(
                "breakpoints must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self::Piecewise {
            breakpoints,
            values,
        })
    }

    pub fn sigma_at(&self, t: f64) -> f64 {
        match self {
            Self::Constant { sigma } => *sigma,
            Self::Piecewise {
                breakpoints,
                values,
            } => values[breakpoints.partition_point(|&b| b <= t)],
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Self::Constant { sigma } => std::slice::from_ref(sigma),
            Self::Piecewise { values, .. } => values,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Constant { sigma } => format!("constant({sigma})"),
            Self::Piecewise { values, .. } => format!("piecewise({} pieces)", values.len()),
        }
    }

    /// Checks `σ² ∈ [σ̲², σ̄²]` for every value.
    pub fn validate(&self, b: &AmbiguityBounds) -> Result<()> {
        for &s in self.values() {
            let s2 = s * s;
            let lo = b.lower_sq() * (1.0 - FEASIBILITY_SLACK);
            let hi = b.upper_sq() * (1.0 + FEASIBILITY_SLACK);
            if !(s.is_finite() && s >= 0.0 && lo <= s2 && s2 <= hi) {
                return Err(Error::Scenario(format!(
                    "sigma = {s} has sigma^2 = {s2} outside [{}, {}]",
                    b.lower_sq(),
                    b.upper_sq()
                )));
            }
        }
        Ok(())
    }

    fn is_constant_at(&self, sigma_sq: f64) -> bool {
        match self {
            Self::Constant { sigma } => {
                (sigma * sigma - sigma_sq).abs() <= FEASIBILITY_SLACK * sigma_sq
            }
            Self::Piecewise { .. } => false,
        }
    }

    /// `σ` at the left end of every Euler step.
    fn grid(&self, steps: usize, dt: f64) -> Vec<f64> {
        (0..steps).map(|k| self.sigma_at(k as f64 * dt)).collect()
    }
}

/// Random piecewise-constant path with `pieces` values drawn uniformly in
/// `σ² ∈ [σ̲², σ̄²]` and breakpoints at distinct interior grid times.
pub fn random_piecewise<R: Rng>(
    b: &AmbiguityBounds,
    horizon: f64,
    dt: f64,
    pieces: usize,
    rng: &mut R,
) -> Result<VolatilityScenario> {
    let steps = (horizon / dt).round() as usize;
    if pieces == 0 || pieces > steps {
        return Err(Error::Scenario(format!(
            "cannot place {pieces} pieces on {steps} steps"
        )));
    }
    let mut cuts = rand::seq::index::sample(rng, steps - 1, pieces - 1)
        .into_iter()
        .map(|i| i + 1)
        .collect::<Vec<_>>();
    cuts.sort_unstable();
    let breakpoints = cuts.iter().map(|&k| k as f64 * dt).collect();
    let values = (0..pieces)
        .map(|_| rng.random_range(b.lower_sq()..=b.upper_sq()).sqrt())
        .collect();
    VolatilityScenario::piecewise(breakpoints, values)
}

/// Both constant extremes followed by `random` piecewise scenarios.
pub fn default_scenarios(
    b: &AmbiguityBounds,
    cfg: &SimConfig,
    random: usize,
) -> Result<Vec<VolatilityScenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ce1_a210);
    let mut out = vec![
        VolatilityScenario::constant(b.lower()),
        VolatilityScenario::constant(b.upper()),
    ];
    for _ in 0..random {
        out.push(random_piecewise(
            b,
            cfg.horizon,
            cfg.dt,
            DEFAULT_PIECES.min(cfg.steps()),
            &mut rng,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep every `record_stride`-th grid point (the terminal point is
    /// always kept).
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            dt,
            horizon,
            n_paths,
            seed,
            record_stride: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        self.record_stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt = {} must be > 0",
                self.dt
            )));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::InvalidParameter(format!(
                "horizon = {} must be >= dt = {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be >= 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of Euler steps; the simulated horizon is `steps·dt`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    fn recorded(&self) -> Vec<usize> {
        let n = self.steps();
        let mut idx: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if *idx.last().unwrap() != n {
            idx.push(n);
        }
        idx
    }
}

/// How actions are produced along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ActionRule {
    /// `u ~ N(slope·x + intercept, variance)`
    Gaussian {
        slope: f64,
        intercept: f64,
        variance: f64,
    },
    /// `u = slope·x + intercept`
    Feedback { slope: f64, intercept: f64 },
}

impl ActionRule {
    pub fn mean(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian {
                slope, intercept, ..
            }
            | Self::Feedback { slope, intercept } => slope * x + intercept,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { variance, .. } => variance,
            Self::Feedback { .. } => 0.0,
        }
    }
}

/// Linear closed-loop dynamics `dX = (a1 X + a2)dt + √((b1 X + b2)² + c1)·σ_t dW`
/// together with the action rule that generated them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedLoop {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub action: ActionRule,
}

impl ClosedLoop {
    /// Optimal exploratory (`exploratory = true`) or classical closed loop.
    pub fn optimal(
        coeffs: &HjbCoefficients,
        m: &ModelParams,
        b: &AmbiguityBounds,
        lambda: f64,
        exploratory: bool,
    ) -> Result<Self> {
        let sc = stability_coefficients(coeffs, m, b, lambda, exploratory)?;
        let den = effective_control_penalty(coeffs.k2(), m, b);
        let slope = (coeffs.k2() * (m.f() + m.c() * m.d() * b.upper_sq()) - m.i()) / den;
        let intercept = (coeffs.k1() * m.f() - m.q()) / den;
        let action = if exploratory {
            ActionRule::Gaussian {
                slope,
                intercept,
                variance: lambda / den,
            }
        } else {
            ActionRule::Feedback { slope, intercept }
        };
        Ok(Self {
            a1: sc.a1,
            a2: sc.a2,
            b1: sc.b1,
            b2: sc.b2,
            c1: sc.c1,
            action,
        })
    }

    fn drift(&self, x: f64) -> f64 {
        self.a1 * x + self.a2
    }

    fn diffusion(&self, x: f64) -> f64 {
        let s = self.b1 * x + self.b2;
        (s * s + self.c1).sqrt()
    }
}

/// Draws `μ + σξ` with `ξ` standard normal.
pub fn sample_action<R: Rng + ?Sized>(policy: &GaussianPolicy, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    policy.mean() + policy.std_dev() * z
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one Euler path, calling `visit(step, x)` at every grid point
/// `0..=steps`.
fn run_path<V: FnMut(usize, f64)>(
    path: usize,
    x0: f64,
    cl: &ClosedLoop,
    sigmas: &[f64],
    dt: f64,
    seed: u64,
    mut visit: V,
) -> Result<()> {
    let mut noise = path_rng(seed, 2 * path as u64);
    let sqrt_dt = dt.sqrt();
    let mut x = x0;
    visit(0, x);
    for (k, &sigma) in sigmas.iter().enumerate() {
        let z: f64 = noise.sample(StandardNormal);
        x += cl.drift(x) * dt + cl.diffusion(x) * sigma * sqrt_dt * z;
        if !x.is_finite() {
            return Err(Error::BlowUp {
                path,
                step: k + 1,
                state: x,
            });
        }
        visit(k + 1, x);
    }
    Ok(())
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Simulated paths on the recorded part of the time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    /// `states[path][j]` is the state at `times[j]`.
    pub states: Vec<Vec<f64>>,
    /// Action drawn at each recorded state.
    pub actions: Vec<Vec<f64>>,
    pub scenario: VolatilityScenario,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.states.len()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.states.iter().map(|p| *p.last().unwrap()).collect()
    }

    /// Writes `time,path_id,state,action` rows with round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,path_id,state,action")?;
        for (id, (xs, us)) in self.states.iter().zip(&self.actions).enumerate() {
            for ((t, x), u) in self.times.iter().zip(xs).zip(us) {
                writeln!(w, "{t:?},{id},{x:?},{u:?}")?;
            }
        }
        Ok(())
    }
}

/// Simulates `cl` from `x0` under `scenario`.
pub fn simulate_closed_loop(
    x0: f64,
    cl: &ClosedLoop,
    scenario: &VolatilityScenario,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    if !x0.is_finite() {
        return Err(Error::NonFinite("initial state"));
    }
    let steps = cfg.steps();
    let sigmas = scenario.grid(steps, cfg.dt);
    let recorded = cfg.recorded();
    let mut keep = vec![usize::MAX; steps + 1];
    for (j, &k) in recorded.iter().enumerate() {
        keep[k] = j;
    }
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut actions_rng = path_rng(cfg.seed, 2 * path as u64 + 1);
            let mut xs = Vec::with_capacity(recorded.len());
            let mut us = Vec::with_capacity(recorded.len());
            run_path(path, x0, cl, &sigmas, cfg.dt, cfg.seed, |k, x| {
                let u = match cl.action {
                    ActionRule::Gaussian { variance, .. } => {
                        let z: f64 = actions_rng.sample(StandardNormal);
                        cl.action.mean(x) + variance.sqrt() * z
                    }
                    ActionRule::Feedback { .. } => cl.action.mean(x),
                };
                if keep[k] != usize::MAX {
                    xs.push(x);
                    us.push(u);
                }
            })?;
            Ok((xs, us))
        })
        .collect();
    let (states, actions) = first_error(results)?.into_iter().unzip();
    Ok(PathEnsemble {
        times: recorded.iter().map(|&k| k as f64 * cfg.dt).collect(),
        states,
        actions,
        scenario: scenario.clone(),
    })
}

fn warn_if_inadmissible(
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
    exploratory: bool,
) -> Result<()> {
    let sc = stability_coefficients(coeffs, m, b, agent.lambda(), exploratory)?;
    let adm = check_admissibility(agent.rho(), &sc);
    if !adm.admissible {
        warn!(
            "rho = {} does not exceed alpha = {}; the closed loop may not be admissible",
            agent.rho(),
            sc.alpha
        );
    }
    Ok(())
}

/// Optimal exploratory closed loop; actions are sampled from the Gaussian
/// policy at each recorded state.
pub fn simulate_exploratory(
    x0: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
    scenario: &VolatilityScenario,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    scenario.validate(b)?;
    warn_if_inadmissible(coeffs, m, b, agent, true)?;
    let cl = ClosedLoop::optimal(coeffs, m, b, agent.lambda(), true)?;
    simulate_closed_loop(x0, &cl, scenario, cfg)
}

/// Classical closed loop under the deterministic feedback `u*(x)`.
pub fn simulate_classical(
    x0: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    scenario: &VolatilityScenario,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    scenario.validate(b)?;
    let cl = ClosedLoop::optimal(coeffs, m, b, 0.0, false)?;
    simulate_closed_loop(x0, &cl, scenario, cfg)
}

/// Sample mean and standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioEstimate {
    pub scenario: String,
    pub mean: f64,
    pub std_error: f64,
}

/// Min/max over scenarios of per-scenario Monte Carlo means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationEstimate {
    pub lower: f64,
    pub upper: f64,
    pub lower_index: usize,
    pub upper_index: usize,
    pub per_scenario: Vec<ScenarioEstimate>,
}

impl ExpectationEstimate {
    fn from_scenarios(per_scenario: Vec<ScenarioEstimate>) -> Self {
        let mut lower_index = 0;
        let mut upper_index = 0;
        for (i, s) in per_scenario.iter().enumerate() {
            if s.mean < per_scenario[lower_index].mean {
                lower_index = i;
            }
            if s.mean > per_scenario[upper_index].mean {
                upper_index = i;
            }
        }
        Self {
            lower: per_scenario[lower_index].mean,
            upper: per_scenario[upper_index].mean,
            lower_index,
            upper_index,
            per_scenario,
        }
    }

    pub fn lower_se(&self) -> f64 {
        self.per_scenario[self.lower_index].std_error
    }

    pub fn upper_se(&self) -> f64 {
        self.per_scenario[self.upper_index].std_error
    }
}

fn check_scenario_set(scenarios: &[VolatilityScenario], b: &AmbiguityBounds) -> Result<()> {
    if scenarios.is_empty() {
        return Err(Error::Scenario("scenario set is empty".into()));
    }
    if scenarios.len() < 2 {
        return Err(Error::Scenario("need at least two scenarios".into()));
    }
    for s in scenarios {
        s.validate(b)?;
    }
    if !scenarios.iter().any(|s| s.is_constant_at(b.lower_sq()))
        || !scenarios.iter().any(|s| s.is_constant_at(b.upper_sq()))
    {
        return Err(Error::Scenario(
            "scenario set must contain both constant extremes".into(),
        ));
    }
    Ok(())
}

/// Lower and upper expectation of `functional(times, states, actions)` over
/// a scenario family. `simulate` produces the ensemble for one scenario.
pub fn estimate_lower_expectation<S, F>(
    scenarios: &[VolatilityScenario],
    b: &AmbiguityBounds,
    simulate: S,
    functional: F,
) -> Result<ExpectationEstimate>
where
    S: Fn(&VolatilityScenario) -> Result<PathEnsemble>,
    F: Fn(&[f64], &[f64], &[f64]) -> f64,
{
    check_scenario_set(scenarios, b)?;
    let mut per = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let ens = simulate(s)?;
        let values: Vec<f64> = ens
            .states
            .iter()
            .zip(&ens.actions)
            .map(|(xs, us)| functional(&ens.times, xs, us))
            .collect();
        let (mean, std_error) = mean_and_se(&values);
        per.push(ScenarioEstimate {
            scenario: s.label(),
            mean,
            std_error,
        });
    }
    Ok(ExpectationEstimate::from_scenarios(per))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardScenario {
    pub scenario: String,
    pub total: f64,
    pub std_error: f64,
    pub reward_part: f64,
    pub entropy_part: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardEstimate {
    pub lower: f64,
    pub upper: f64,
    pub lower_index: usize,
    pub value: f64,
    pub relative_error: f64,
    pub tail_bound: f64,
    pub per_scenario: Vec<RewardScenario>,
}

/// Per-path discounted `∫₀^T e^{−ρt}(r̃(X_t, θ) + λH(θ))dt` by the trapezoidal
/// rule, for each scenario. Returns (total, reward part, entropy part) means
/// and the standard error of the total.
pub fn discounted_reward(
    x0: f64,
    cl: &ClosedLoop,
    m: &ModelParams,
    lambda: f64,
    rho: f64,
    scenario: &VolatilityScenario,
    cfg: &SimConfig,
) -> Result<RewardScenario> {
    cfg.validate()?;
    let steps = cfg.steps();
    let sigmas = scenario.grid(steps, cfg.dt);
    let variance = cl.action.variance();
    let entropy_rate = if lambda == 0.0 {
        0.0
    } else {
        lambda * gaussian_entropy(variance)
    };
    let weights: Vec<f64> = (0..=steps)
        .map(|k| {
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            w * cfg.dt * (-rho * k as f64 * cfg.dt).exp()
        })
        .collect();
    let discount_mass: f64 = weights.iter().sum();
    let results: Vec<Result<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut acc = 0.0;
            run_path(path, x0, cl, &sigmas, cfg.dt, cfg.seed, |k, x| {
                acc += weights[k] * relaxed_reward_gaussian(x, cl.action.mean(x), variance, m);
            })?;
            Ok(acc)
        })
        .collect();
    let rewards = first_error(results)?;
    let (reward_part, std_error) = mean_and_se(&rewards);
    let entropy_part = entropy_rate * discount_mass;
    Ok(RewardScenario {
        scenario: scenario.label(),
        total: reward_part + entropy_part,
        std_error,
        reward_part,
        entropy_part,
    })
}

/// Scenario-minimum discounted reward of the optimal exploratory policy,
/// compared with `V(x₀)`.
///
/// Requires `ρ > α` and a horizon whose tail bound `e^{−ρT}·Y_T` is below
/// `0.01·|V(x₀)|`.
pub fn estimate_discounted_reward(
    x0: f64,
    coeffs: &HjbCoefficients,
    m: &ModelParams,
    b: &AmbiguityBounds,
    agent: &AgentParams,
    scenarios: &[VolatilityScenario],
    cfg: &SimConfig,
) -> Result<RewardEstimate> {
    check_scenario_set(scenarios, b)?;
    cfg.validate()?;
    let sc = stability_coefficients(coeffs, m, b, agent.lambda(), true)?;
    let adm = check_admissibility(agent.rho(), &sc);
    if !adm.admissible {
        return Err(Error::InvalidParameter(format!(
            "rho = {} must exceed alpha = {}",
            agent.rho(),
            sc.alpha
        )));
    }
    let t_end = cfg.steps() as f64 * cfg.dt;
    let value = exploratory_value(x0, coeffs);
    let tail = (-agent.rho() * t_end).exp() * dominating_bound(t_end, x0, &sc)?;
    let limit = 0.01 * value.abs();
    if !(tail < limit) {
        return Err(Error::HorizonTooShort { tail, limit });
    }
    let cl = ClosedLoop::optimal(coeffs, m, b, agent.lambda(), true)?;
    let per_scenario = scenarios
        .iter()
        .map(|s| discounted_reward(x0, &cl, m, agent.lambda(), agent.rho(), s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut lower_index = 0;
    for (i, s) in per_scenario.iter().enumerate() {
        if s.total < per_scenario[lower_index].total {
            lower_index = i;
        }
    }
    let lower = per_scenario[lower_index].total;
    let upper = per_scenario
        .iter()
        .map(|s| s.total)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RewardEstimate {
        lower,
        upper,
        lower_index,
        value,
        relative_error: (lower - value).abs() / value.abs(),
        tail_bound: tail,
        per_scenario,
    })
}

/// Volatility used by each copy in [`empirical_lln`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LlnVolatility {
    Lower,
    Upper,
    /// `σᵢ²` drawn uniformly in `[σ̲², σ̄²]` per copy.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LlnReport {
    pub copies: usize,
    pub mean_increment: f64,
    pub increment_se: f64,
    pub drift_target: f64,
    pub drift_pass: bool,
    pub mean_sq_increment: f64,
    pub sq_increment_se: f64,
    pub second_moment_lo: f64,
    pub second_moment_hi: f64,
    pub second_moment_pass: bool,
    pub pass: bool,
}

/// Draws `N` independent `(u, ξ)` pairs at state `x0`, forms one-step
/// increments `Δx = b(x,u)dt + σ(x,u)σᵢ√dt ξ` and checks that
/// `(1/N)ΣΔx` is within 4 standard errors of `b̃ dt`, and `(1/N)Σ(Δx)²`
/// within `[σ̲²σ̃²dt, σ̄²σ̃²dt] + E[b²]dt²` widened by 4 standard errors.
#[allow(clippy::too_many_arguments)]
pub fn empirical_lln(
    x0: f64,
    theta: &GaussianPolicy,
    m: &ModelParams,
    b: &AmbiguityBounds,
    copies: usize,
    dt: f64,
    volatility: LlnVolatility,
    seed: u64,
) -> Result<LlnReport> {
    if copies < 100 {
        return Err(Error::InvalidParameter(format!(
            "need at least 100 copies, got {copies}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be > 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_dt = dt.sqrt();
    let mut inc = Vec::with_capacity(copies);
    let mut sq = Vec::with_capacity(copies);
    for _ in 0..copies {
        let u = sample_action(theta, &mut rng);
        let z: f64 = rng.sample(StandardNormal);
        let sigma_sq = match volatility {
            LlnVolatility::Lower => b.lower_sq(),
            LlnVolatility::Upper => b.upper_sq(),
            LlnVolatility::Mixed => {
                if b.lower_sq() < b.upper_sq() {
                    rng.random_range(b.lower_sq()..=b.upper_sq())
                } else {
                    b.lower_sq()
                }
            }
        };
        let dx = (m.a() * x0 + m.f() * u) * dt
            + (m.c() * x0 + m.d() * u) * sigma_sq.sqrt() * sqrt_dt * z;
        inc.push(dx);
        sq.push(dx * dx);
    }
    let (mean_increment, increment_se) = mean_and_se(&inc);
    let (mean_sq_increment, sq_increment_se) = mean_and_se(&sq);

    let (mu, s2) = (theta.mean(), theta.variance());
    let drift = m.a() * x0 + m.f() * mu;
    let drift_target = drift * dt;
    let vol_sq = {
        let c = m.c() * x0 + m.d() * mu;
        c * c + m.d() * m.d() * s2
    };
    let drift_sq = drift * drift + m.f() * m.f() * s2;
    let second_moment_lo = b.lower_sq() * vol_sq * dt + drift_sq * dt * dt;
    let second_moment_hi = b.upper_sq() * vol_sq * dt + drift_sq * dt * dt;
    let drift_pass = (mean_increment - drift_target).abs() <= 4.0 * increment_se;
    let second_moment_pass = mean_sq_increment >= second_moment_lo - 4.0 * sq_increment_se
        && mean_sq_increment <= second_moment_hi + 4.0 * sq_increment_se;
    Ok(LlnReport {
        copies,
        mean_increment,
        increment_se,
        drift_target,
        drift_pass,
        mean_sq_increment,
        sq_increment_se,
        second_moment_lo,
        second_moment_hi,
        second_moment_pass,
        pass: drift_pass && second_moment_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::{non_exploratory_control, optimal_policy, solve_hjb};
    use crate::stability::stability_coefficients;
    use crate::RootSelection;
    use proptest::prelude::*;

    fn table_iv() -> (ModelParams, AmbiguityBounds, AgentParams, HjbCoefficients) {
        let m = ModelParams::temperature_control();
        let b = AmbiguityBounds::new(0.25, 1.0).unwrap();
        let agent = AgentParams::new(0.6, 0.3).unwrap();
        let c = solve_hjb(&m, &b, &agent, RootSelection::default()).unwrap();
        (m, b, agent, c)
    }

    fn brownian() -> ClosedLoop {
        ClosedLoop {
            a1: 0.0,
            a2: 0.0,
            b1: 0.0,
            b2: 1.0,
            c1: 0.0,
            action: ActionRule::Feedback {
                slope: 0.0,
                intercept: 0.0,
            },
        }
    }

    #[test]
    fn scenario_validation() {
        let b = AmbiguityBounds::new(0.25, 1.0).unwrap();
        assert!(VolatilityScenario::constant(b.lower()).validate(&b).is_ok());
        assert!(VolatilityScenario::constant(b.upper()).validate(&b).is_ok());
        assert!(VolatilityScenario::constant(1.1).validate(&b).is_err());
        assert!(VolatilityScenario::constant(0.4).validate(&b).is_err());
        assert!(VolatilityScenario::piecewise(vec![1.0], vec![0.5]).is_err());
        assert!(VolatilityScenario::piecewise(vec![2.0, 1.0], vec![0.5; 3]).is_err());
        let p = VolatilityScenario::piecewise(vec![1.0, 2.0], vec![0.5, 0.7, 1.0]).unwrap();
        assert_eq!(p.sigma_at(0.0), 0.5);
        assert_eq!(p.sigma_at(1.0), 0.7);
        assert_eq!(p.sigma_at(1.5), 0.7);
        assert_eq!(p.sigma_at(10.0), 1.0);
        assert!(p.validate(&b).is_ok());
    }

    #[test]
    fn default_family_is_feasible() {
        let b = AmbiguityBounds::new(0.25, 1.0).unwrap();
        let cfg = SimConfig::new(0.01, 5.0, 1, 3).unwrap();
        let family = default_scenarios(&b, &cfg, DEFAULT_RANDOM_SCENARIOS).unwrap();
        assert_eq!(family.len(), 2 + DEFAULT_RANDOM_SCENARIOS);
        for s in &family {
            s.validate(&b).unwrap();
            for sigma in s.grid(cfg.steps(), cfg.dt) {
                let qv = sigma * sigma * cfg.dt;
                assert!(qv >= b.lower_sq() * cfg.dt * (1.0 - 1e-12));
                assert!(qv <= b.upper_sq() * cfg.dt * (1.0 + 1e-12));
            }
        }
        assert!(check_scenario_set(&family, &b).is_ok());
        assert!(check_scenario_set(&family[1..], &b).is_err());
        assert!(check_scenario_set(&[], &b).is_err());
    }

    #[test]
    fn uncontrolled_decay_matches_ode() {
        let m = ModelParams::new(-0.2, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        let b = AmbiguityBounds::new(0.25, 1.0).unwrap();
        let c = HjbCoefficients::new(-1.0, 0.0, 0.0).unwrap();
        let agent = AgentParams::new(0.6, 0.3).unwrap();
        let cfg = SimConfig::new(1e-3, 2.0, 4, 1).unwrap();
        let ens = simulate_exploratory(
            1.5,
            &c,
            &m,
            &b,
            &agent,
            &VolatilityScenario::constant(1.0),
            &cfg,
        )
        .unwrap();
        let exact = 1.5 * (-0.2f64 * 2.0).exp();
        for x in ens.terminal() {
            assert!((x - exact).abs() < 1e-3, "{x} vs {exact}");
        }
        let classical =
            simulate_classical(1.5, &c, &m, &b, &VolatilityScenario::constant(1.0), &cfg).unwrap();
        assert_eq!(classical.terminal(), ens.terminal());
    }

    #[test]
    fn zero_diffusion_is_linear_ode() {
        let cl = ClosedLoop {
            a1: -0.5,
            a2: 0.2,
            b1: 0.0,
            b2: 0.0,
            c1: 0.0,
            action: ActionRule::Feedback {
                slope: 1.0,
                intercept: 0.0,
            },
        };
        let cfg = SimConfig::new(1e-4, 1.0, 3, 9).unwrap();
        let ens = simulate_closed_loop(2.0, &cl, &VolatilityScenario::constant(0.7), &cfg).unwrap();
        let exact = 0.4 + (2.0 - 0.4) * (-0.5f64).exp();
        for x in ens.terminal() {
            assert!((x - exact).abs() < 1e-4);
        }
        assert_eq!(ens.actions[0], ens.states[0]);
    }

    #[test]
    fn degenerate_ambiguity_equals_single_measure_run() {
        let (m, _, agent, _) = table_iv();
        let b = AmbiguityBounds::classical(0.64).unwrap();
        let c = solve_hjb(&m, &b, &agent, RootSelection::default()).unwrap();
        let cfg = SimConfig::new(1e-2, 1.0, 50, 77).unwrap();
        let s = VolatilityScenario::constant(b.lower());
        let ens = simulate_exploratory(1.0, &c, &m, &b, &agent, &s, &cfg).unwrap();
        let cl = ClosedLoop::optimal(&c, &m, &b, agent.lambda(), true).unwrap();
        let single =
            simulate_closed_loop(1.0, &cl, &VolatilityScenario::constant(0.8), &cfg).unwrap();
        assert_eq!(ens.states, single.states);
        assert_eq!(ens.actions, single.actions);
    }

    #[test]
    fn initial_state_and_recording() {
        let (m, b, agent, c) = table_iv();
        let cfg = SimConfig::new(0.01, 1.0, 20, 5)
            .unwrap()
            .with_stride(7)
            .unwrap();
        let ens = simulate_exploratory(
            1.0,
            &c,
            &m,
            &b,
            &agent,
            &VolatilityScenario::constant(1.0),
            &cfg,
        )
        .unwrap();
        assert!(ens.states.iter().all(|p| p[0] == 1.0));
        assert_eq!(*ens.times.last().unwrap(), 1.0);
        assert_eq!(ens.times.len(), 100 / 7 + 2);

        let full = simulate_exploratory(
            1.0,
            &c,
            &m,
            &b,
            &agent,
            &VolatilityScenario::constant(1.0),
            &SimConfig::new(0.01, 1.0, 20, 5).unwrap(),
        )
        .unwrap();
        assert_eq!(full.terminal(), ens.terminal());
        assert_eq!(full.states[3][7], ens.states[3][1]);
        assert_eq!(full.actions[3][7], ens.actions[3][1]);
    }

    #[test]
    fn results_independent_of_thread_count() {
        let (m, b, agent, c) = table_iv();
        let cfg = SimConfig::new(0.01, 2.0, 64, 2024).unwrap();
        let s = VolatilityScenario::piecewise(vec![0.5], vec![0.5, 1.0]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_exploratory(1.0, &c, &m, &b, &agent, &s, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn blow_up_is_reported() {
        let cl = ClosedLoop {
            a1: 1e6,
            ..brownian()
        };
        let cfg = SimConfig::new(0.1, 100.0, 4, 0).unwrap();
        let err =
            simulate_closed_loop(1.0, &cl, &VolatilityScenario::constant(1.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::BlowUp { path: 0, .. }), "{err:?}");
    }

    #[test]
    fn csv_round_trips() {
        let (m, b, agent, c) = table_iv();
        let cfg = SimConfig::new(0.1, 0.3, 2, 1).unwrap();
        let ens = simulate_exploratory(
            1.0,
            &c,
            &m,
            &b,
            &agent,
            &VolatilityScenario::constant(1.0),
            &cfg,
        )
        .unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,path_id,state,action"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 2 * 4);
        let r = &rows[5];
        assert_eq!(r[1], "1");
        assert_eq!(r[2].parse::<f64>().unwrap(), ens.states[1][1]);
        assert_eq!(r[3].parse::<f64>().unwrap(), ens.actions[1][1]);
    }

    #[test]
    fn second_moment_respects_dominating_bound() {
        let (m, b, agent, c) = table_iv();
        let sc = stability_coefficients(&c, &m, &b, agent.lambda(), true).unwrap();
        let cfg = SimConfig::new(1e-2, 5.0, 10_000, 11)
            .unwrap()
            .with_stride(500)
            .unwrap();
        let ens = simulate_exploratory(
            1.0,
            &c,
            &m,
            &b,
            &agent,
            &VolatilityScenario::constant(1.0),
            &cfg,
        )
        .unwrap();
        let sq: Vec<f64> = ens.terminal().iter().map(|x| x * x).collect();
        let (mean, se) = mean_and_se(&sq);
        let bound = dominating_bound(5.0, 1.0, &sc).unwrap();
        assert!(mean <= bound + 3.0 * se, "{mean} > {bound}");
    }

    #[test]
    fn small_lambda_matches_classical_in_distribution() {
        let m = ModelParams::temperature_control();
        let b = AmbiguityBounds::new(0.25, 1.0).unwrap();
        let agent = AgentParams::new(1e-8, 0.3).unwrap();
        let c = solve_hjb(&m, &b, &agent, RootSelection::default()).unwrap();
        let cfg = SimConfig::new(1e-2, 2.0, 5_000, 4)
            .unwrap()
            .with_stride(200)
            .unwrap();
        let s = VolatilityScenario::constant(1.0);
        let e = simulate_exploratory(1.0, &c, &m, &b, &agent, &s, &cfg)
            .unwrap()
            .terminal();
        let k = simulate_classical(1.0, &c, &m, &b, &s, &cfg)
            .unwrap()
            .terminal();
        let (me, se_e) = mean_and_se(&e);
        let (mk, se_k) = mean_and_se(&k);
        assert!((me - mk).abs() <= 3.0 * (se_e * se_e + se_k * se_k).sqrt());
        let sq = |v: &[f64], mu: f64| v.iter().map(|x| (x - mu) * (x - mu)).collect::<Vec<_>>();
        let (ve, sve) = mean_and_se(&sq(&e, me));
        let (vk, svk) = mean_and_se(&sq(&k, mk));
        assert!((ve - vk).abs() <= 3.0 * (sve * sve + svk * svk).sqrt());
    }

    #[test]
    fn weak_order_sanity() {
        let (m, b, agent, c) = table_iv();
        let s = VolatilityScenario::constant(1.0);
        let run = |dt: f64| {
            let cfg = SimConfig::new(dt, 1.0, 10_000, 8)
                .unwrap()
                .with_stride(1000)
                .unwrap();
            mean_and_se(
                &simulate_exploratory(1.0, &c, &m, &b, &agent, &s, &cfg)
                    .unwrap()
                    .terminal(),
            )
        };
        let (coarse, se) = run(0.04);
        let (fine, _) = run(0.01);
        assert!((coarse - fine).abs() < 2.0 * se, "{coarse} vs {fine}");
    }

    #[test]
    fn lower_expectation_cases() {
        let b = AmbiguityBounds::new(0.25, 1.0).unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 10_000, 31)
            .unwrap()
            .with_stride(100)
            .unwrap();
        let family = vec![
            VolatilityScenario::constant(b.lower()),
            VolatilityScenario::constant(b.upper()),
        ];
        let sim = |s: &VolatilityScenario| simulate_closed_loop(0.0, &brownian(), s, &cfg);

        let c = estimate_lower_expectation(&family, &b, sim, |_, _, _| 2.5).unwrap();
        assert_eq!((c.lower, c.upper), (2.5, 2.5));

        let t =
            estimate_lower_expectation(&family, &b, sim, |_, xs, _| *xs.last().unwrap()).unwrap();
        assert!(t.lower.abs() <= 3.0 * t.lower_se() && t.upper.abs() <= 3.0 * t.upper_se());

        let q = estimate_lower_expectation(&family, &b, sim, |_, xs, _| xs.last().unwrap().powi(2))
            .unwrap();
        assert!((q.lower - 0.25).abs() <= 3.0 * q.lower_se(), "{q:?}");
        assert!((q.upper - 1.0).abs() <= 3.0 * q.upper_se(), "{q:?}");

        assert!(estimate_lower_expectation(&[], &b, sim, |_, _, _| 0.0).is_err());
        assert!(estimate_lower_expectation(&family[..1], &b, sim, |_, _, _| 0.0).is_err());
    }

    #[test]
    fn entropy_part_matches_closed_form() {
        let m = ModelParams::new(-0.2, 0.8, 0.5, 1.2, 0.0, 0.0, 2.0, 0.0, 0.0).unwrap();
        let variance = 0.3;
        let cl = ClosedLoop {
            a1: -0.2,
            a2: 0.0,
            b1: 0.5,
            b2: 0.0,
            c1: 0.0,
            action: ActionRule::Gaussian {
                slope: 0.0,
                intercept: 0.0,
                variance,
            },
        };
        let (lambda, rho, t) = (0.6, 0.3, 5.0);
        let cfg = SimConfig::new(1e-3, t, 2, 1).unwrap();
        let r = discounted_reward(
            1.0,
            &cl,
            &m,
            lambda,
            rho,
            &VolatilityScenario::constant(1.0),
            &cfg,
        )
        .unwrap();
        let exact = lambda * gaussian_entropy(variance) * (1.0 - (-rho * t).exp()) / rho;
        assert!((r.entropy_part - exact).abs() < 1e-6 * exact.abs());
    }

    #[test]
    fn zero_reward_zero_lambda() {
        let m = ModelParams::new(-0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        let cl = ClosedLoop {
            a1: -0.2,
            ..brownian()
        };
        let cfg = SimConfig::new(0.01, 1.0, 10, 1).unwrap();
        let r = discounted_reward(
            1.0,
            &cl,
            &m,
            0.0,
            0.3,
            &VolatilityScenario::constant(1.0),
            &cfg,
        )
        .unwrap();
        assert_eq!((r.total, r.reward_part, r.entropy_part), (0.0, 0.0, 0.0));
    }

    #[test]
    fn short_horizon_is_rejected() {
        let (m, b, agent, c) = table_iv();
        let cfg = SimConfig::new(0.01, 1.0, 10, 1).unwrap();
        let family = default_scenarios(&b, &cfg, 2).unwrap();
        assert!(matches!(
            estimate_discounted_reward(1.0, &c, &m, &b, &agent, &family, &cfg),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn sample_action_moments() {
        let p = GaussianPolicy::new(0.7, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v: Vec<f64> = (0..1_000_000)
            .map(|_| sample_action(&p, &mut rng))
            .collect();
        let (mean, se) = mean_and_se(&v);
        assert!((mean - 0.7).abs() <= 4.0 * se);
        let sq: Vec<f64> = v.iter().map(|x| (x - 0.7).powi(2)).collect();
        let (var, se_var) = mean_and_se(&sq);
        assert!((var - 0.2).abs() <= 4.0 * se_var);

        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_action(&p, &mut a), sample_action(&p, &mut b));
        }
    }

    #[test]
    fn lln_cases() {
        let (m, b, agent, c) = table_iv();
        let theta = optimal_policy(1.0, &c, &m, &b, agent.lambda()).unwrap();
        for vol in [
            LlnVolatility::Lower,
            LlnVolatility::Upper,
            LlnVolatility::Mixed,
        ] {
            let r = empirical_lln(1.0, &theta, &m, &b, 10_000, 0.01, vol, 3).unwrap();
            assert!(r.pass, "{vol:?}: {r:?}");
        }
        let single = AmbiguityBounds::classical(0.5).unwrap();
        let r = empirical_lln(
            1.0,
            &theta,
            &m,
            &single,
            10_000,
            0.01,
            LlnVolatility::Mixed,
            3,
        )
        .unwrap();
        assert_eq!(r.second_moment_lo, r.second_moment_hi);
        assert!(r.pass);

        let mean = non_exploratory_control(1.0, &c, &m, &b).unwrap();
        let narrow = GaussianPolicy::new(mean, 1e-12).unwrap();
        let r = empirical_lln(1.0, &narrow, &m, &b, 10_000, 0.01, LlnVolatility::Mixed, 9).unwrap();
        assert!(r.drift_pass);
        assert!((r.drift_target - (m.a() + m.f() * mean) * 0.01).abs() < 1e-15);

        assert!(empirical_lln(1.0, &theta, &m, &b, 99, 0.01, LlnVolatility::Mixed, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lower_never_exceeds_upper(seed in any::<u64>(), power in 1i32..4) {
            let b = AmbiguityBounds::new(0.25, 1.0).unwrap();
            let cfg = SimConfig::new(0.05, 1.0, 200, seed).unwrap();
            let family = default_scenarios(&b, &cfg, 3).unwrap();
            let e = estimate_lower_expectation(
                &family,
                &b,
                |s| simulate_closed_loop(0.3, &brownian(), s, &cfg),
                |_, xs, _| xs.last().unwrap().powi(power),
            ).unwrap();
            prop_assert!(e.lower <= e.upper);
        }
    }
}
