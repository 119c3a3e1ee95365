//! End-to-end acceptance criteria for the solver, simulator and harness.
//!
//! Each criterion returns a verdict and a one-line detail; [`run_all`]
//! evaluates them in order and times each one.

use std::time::Instant;

use knightian_lq::config::{SimulationSection, VerificationConfig};
use knightian_lq::lq::{
    exploratory_value, k2_residual, non_exploratory_control, optimal_policy, solve_hjb, solve_k2,
};
use knightian_lq::relaxed::{boltzmann_policy, DifferentiableValue};
use knightian_lq::simulation::{
    default_scenarios, empirical_lln, estimate_discounted_reward, estimate_lower_expectation,
    simulate_closed_loop, ActionRule, ClosedLoop, LlnVolatility, SimConfig, VolatilityScenario,
    DEFAULT_RANDOM_SCENARIOS,
};
use knightian_lq::stability::{
    assembled_exploration_cost, check_admissibility, convergence_sweep, exploration_cost,
    is_converging, stability_coefficients, value_gap,
};
use knightian_lq::verify::run_mode_a;
use knightian_lq::{AgentParams, AmbiguityBounds, ModelParams, Result, RootSelection};

const SIGMAS: [f64; 3] = [0.1, 0.5, 1.0];
const RHOS: [f64; 4] = [0.1, 0.3, 0.8, 1.5];
const SIGMA_LOWER_SQ: f64 = 0.01;

fn table_iv() -> ModelParams {
    ModelParams::temperature_control()
}

fn bounds(sigma: f64) -> AmbiguityBounds {
    AmbiguityBounds::new(SIGMA_LOWER_SQ.min(sigma * sigma), sigma * sigma).unwrap()
}

pub type Outcome = Result<(bool, String)>;
pub type Criterion = (&'static str, fn() -> Outcome);

fn variance_reproduction() -> Outcome {
    let m = table_iv();
    let b = bounds(1.0);
    let var = |rho| -> Result<f64> {
        let agent = AgentParams::new(0.6, rho)?;
        let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
        Ok(optimal_policy(1.0, &c, &m, &b, 0.6)?.variance())
    };
    let (hi, lo) = (var(0.1)?, var(1.5)?);
    let pass = (hi - 0.28).abs() <= 0.02 && (lo - 0.07).abs() <= 0.02;
    Ok((
        pass,
        format!("Var(rho=0.1) = {hi:.5} (0.28), Var(rho=1.5) = {lo:.5} (0.07), tol 0.02"),
    ))
}

fn exploration_cost_identity() -> Outcome {
    let m = table_iv();
    let mut worst: f64 = 0.0;
    for lambda in [0.1, 0.6, 2.0] {
        for rho in [0.1, 0.3, 1.5] {
            let agent = AgentParams::new(lambda, rho)?;
            for sigma in SIGMAS {
                let b = bounds(sigma);
                let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
                for x in [-5.0, -1.0, 0.0, 1.0, 7.0] {
                    let cost = assembled_exploration_cost(x, &c, &m, &b, &agent)?;
                    worst = worst.max((cost - lambda / (2.0 * rho)).abs());
                }
            }
        }
    }
    let reference = exploration_cost(&AgentParams::new(0.6, 0.3)?);
    Ok((
        worst <= 1e-12 && reference == 1.0,
        format!("max |cost - lambda/(2 rho)| = {worst:.2e}; cost(0.6, 0.3) = {reference}"),
    ))
}

/// Independent evaluation of the k₂ equation.
fn oracle_residual(k2: f64, m: &ModelParams, s2: f64, rho: f64) -> f64 {
    let a = (m.c() * m.d() * s2 + m.f()) * k2 - m.i();
    let den = m.k() - k2 * m.d() * m.d() * s2;
    k2 - (2.0 * a * a / (rho * den) + rho * ((m.c() * m.c() * s2 + 2.0 * m.a()) * k2 - m.m()))
}

/// Negative roots by a uniform 10⁶-point scan of `[-span, 0)` followed by
/// bisection, smallest magnitude first.
fn oracle_roots(m: &ModelParams, s2: f64, rho: f64, span: f64) -> Vec<f64> {
    const POINTS: usize = 1_000_000;
    let h = span / POINTS as f64;
    let f = |k: f64| oracle_residual(k, m, s2, rho);
    let mut roots = Vec::new();
    let mut hi = -h * 1e-6;
    let mut f_hi = f(hi);
    for j in 1..=POINTS {
        let lo = -(j as f64) * h;
        let f_lo = f(lo);
        if f_lo == 0.0 {
            roots.push(lo);
        } else if f_lo.signum() != f_hi.signum() {
            let (mut a, mut b, mut fa) = (lo, hi, f_lo);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                let fm = f(mid);
                if fm.signum() == fa.signum() {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        hi = lo;
        f_hi = f_lo;
    }
    roots
}

fn root_oracle() -> Outcome {
    let m = table_iv();
    let (mut worst_diff, mut worst_res): (f64, f64) = (0.0, 0.0);
    let mut failures = Vec::new();
    for sigma in SIGMAS {
        let b = bounds(sigma);
        for rho in RHOS {
            let k2 = solve_k2(&m, &b, rho)?;
            let span = (4.0 * k2.abs()).max(50.0);
            let oracle = oracle_roots(&m, b.upper_sq(), rho, span);
            match oracle.first() {
                Some(&o) => worst_diff = worst_diff.max((k2 - o).abs()),
                None => failures.push(format!("no oracle root at sigma={sigma}, rho={rho}")),
            }
            worst_res = worst_res.max(k2_residual(k2, &m, &b, rho)?.abs());
        }
    }
    let pass = failures.is_empty() && worst_diff <= 1e-8 && worst_res < 1e-10;
    Ok((
        pass,
        format!(
            "12 grid points, max |k2 - oracle| = {worst_diff:.2e}, max residual = {worst_res:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    ))
}

fn policy_mean_identity() -> Outcome {
    let m = table_iv();
    let b = bounds(1.0);
    let agent = AgentParams::new(0.6, 0.3)?;
    let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
    let mut worst: f64 = 0.0;
    for j in 0..101 {
        let x = -5.0 + 0.1 * j as f64;
        let mu = optimal_policy(x, &c, &m, &b, agent.lambda())?.mean();
        let u = non_exploratory_control(x, &c, &m, &b)?;
        worst = worst.max((mu - u).abs());
    }
    Ok((
        worst <= 1e-14,
        format!("101 states in [-5, 5], max |mu(x) - u*(x)| = {worst:.2e}"),
    ))
}

fn vanishing_exploration() -> Outcome {
    let m = table_iv();
    let grid = [0.01, 0.005, 0.001];
    let rho = 0.3;
    let mut notes = Vec::new();
    let mut pass = true;
    for sigma in SIGMAS {
        let b = bounds(sigma);
        let rows = convergence_sweep(&grid, &m, &b, rho, 1.0)?;
        let ratio0 = rows[0].variance / rows[0].lambda;
        let ratio_dev = rows
            .iter()
            .map(|r| (r.variance / r.lambda - ratio0).abs() / ratio0)
            .fold(0.0, f64::max);
        let mut gap_dev: f64 = 0.0;
        for r in &rows {
            let agent = AgentParams::new(r.lambda, rho)?;
            let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
            gap_dev = gap_dev
                .max(((r.value - r.non_exploratory_value) - value_gap(&c, &m, &b, &agent)?).abs());
        }
        let ok = is_converging(&rows) && ratio_dev <= 1e-12 && gap_dev <= 1e-12;
        pass &= ok;
        notes.push(format!(
            "sigma={sigma}: monotone={} var/lambda dev={ratio_dev:.1e} gap dev={gap_dev:.1e}",
            is_converging(&rows)
        ));
    }
    Ok((pass, notes.join("; ")))
}

fn boltzmann_consistency() -> Outcome {
    let m = table_iv();
    let agent = AgentParams::new(0.6, 0.3)?;
    let x = 1.0;
    let mut worst: f64 = 0.0;
    for sigma in SIGMAS {
        let b = bounds(sigma);
        let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
        let g = optimal_policy(x, &c, &m, &b, agent.lambda())?;
        let dv = DifferentiableValue::quadratic(c.k2(), c.k1());
        let theta = boltzmann_policy(x, &dv, &m, &b, agent.lambda(), None)?;
        for j in 0..101 {
            let u = g.mean() - 4.0 * g.std_dev() + 0.08 * g.std_dev() * j as f64;
            worst = worst.max((theta.pdf(u) - g.pdf(u)).abs());
        }
    }
    Ok((
        worst <= 1e-6,
        format!("3 x 101 points, max |pdf difference| = {worst:.2e}"),
    ))
}

fn stability_equality() -> Outcome {
    let m = table_iv();
    let agent = AgentParams::new(0.6, 0.3)?;
    let mut pass = true;
    let mut notes = Vec::new();
    for sigma in SIGMAS {
        let b = bounds(sigma);
        let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
        let e = stability_coefficients(&c, &m, &b, agent.lambda(), true)?;
        let k = stability_coefficients(&c, &m, &b, agent.lambda(), false)?;
        let admissible = check_admissibility(agent.rho(), &e).admissible;
        pass &= e.alpha == k.alpha && admissible;
        notes.push(format!(
            "sigma={sigma}: alpha={:.4} (equal={})",
            e.alpha,
            e.alpha == k.alpha
        ));
    }
    Ok((pass, format!("{}; rho=0.3 > alpha", notes.join("; "))))
}

fn normality_suite() -> Outcome {
    let cfg = VerificationConfig {
        model: table_iv().raw(),
        sigma_lower_sq: SIGMA_LOWER_SQ,
        sigma_upper: SIGMAS.to_vec(),
        lambdas: vec![0.6],
        rhos: vec![0.3],
        x_test: 1.0,
        epsilon: 1e-10,
        n_samples: 10_000,
        simulation: SimulationSection::default(),
    };
    let mut ks = [0usize; 3];
    let mut ad = [0usize; 3];
    for rep in 0..100u64 {
        let report = run_mode_a(&cfg, rep * 1000)?;
        for (j, row) in report.rows.iter().enumerate() {
            ks[j] += (row.ks_pass == Some(true)) as usize;
            ad[j] += (row.ad_pass == Some(true)) as usize;
        }
    }
    let pass = ks.iter().chain(&ad).all(|&n| n >= 93);
    Ok((
        pass,
        format!("passes out of 100 per sigma {SIGMAS:?}: K-S {ks:?}, A-D {ad:?} (need >= 93)"),
    ))
}

fn sensitivity_signs() -> Outcome {
    let m = table_iv();
    let var = |sigma: f64, rho: f64| -> Result<f64> {
        let b = bounds(sigma);
        let agent = AgentParams::new(0.6, rho)?;
        let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
        Ok(optimal_policy(1.0, &c, &m, &b, 0.6)?.variance())
    };
    let by_rho = RHOS
        .iter()
        .map(|&r| var(1.0, r))
        .collect::<Result<Vec<_>>>()?;
    let by_sigma = SIGMAS
        .iter()
        .map(|&s| var(s, 0.3))
        .collect::<Result<Vec<_>>>()?;
    let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    Ok((
        dec(&by_rho) && dec(&by_sigma),
        format!("Var over rho {by_rho:.4?}; over sigma {by_sigma:.4?}"),
    ))
}

fn g_expectation_sanity() -> Outcome {
    let b = AmbiguityBounds::new(0.25, 1.0)?;
    let cfg = SimConfig::new(0.01, 1.0, 10_000, 2024)?.with_stride(100)?;
    let brownian = ClosedLoop {
        a1: 0.0,
        a2: 0.0,
        b1: 0.0,
        b2: 1.0,
        c1: 0.0,
        action: ActionRule::Feedback {
            slope: 0.0,
            intercept: 0.0,
        },
    };
    let family = [
        VolatilityScenario::constant(b.lower()),
        VolatilityScenario::constant(b.upper()),
    ];
    let e = estimate_lower_expectation(
        &family,
        &b,
        |s| simulate_closed_loop(0.0, &brownian, s, &cfg),
        |_, xs, _| xs.last().unwrap().powi(2),
    )?;
    let pass =
        (e.lower - 0.25).abs() <= 3.0 * e.lower_se() && (e.upper - 1.0).abs() <= 3.0 * e.upper_se();
    Ok((
        pass,
        format!(
            "B_1^2: lower {:.4} ± {:.4} (0.25), upper {:.4} ± {:.4} (1.0)",
            e.lower,
            e.lower_se(),
            e.upper,
            e.upper_se()
        ),
    ))
}

fn lln_interval() -> Outcome {
    let m = table_iv();
    let b = AmbiguityBounds::new(0.25, 1.0)?;
    let agent = AgentParams::new(0.6, 0.3)?;
    let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
    let theta = optimal_policy(1.0, &c, &m, &b, agent.lambda())?;
    let mut passes = 0;
    for seed in 0..100 {
        passes += empirical_lln(
            1.0,
            &theta,
            &m,
            &b,
            10_000,
            0.01,
            LlnVolatility::Mixed,
            seed,
        )?
        .pass as usize;
    }
    Ok((
        passes >= 95,
        format!("{passes} of 100 seeds pass (need >= 95)"),
    ))
}

fn monte_carlo_value() -> Outcome {
    let m = table_iv();
    let b = bounds(1.0);
    let agent = AgentParams::new(0.6, 0.3)?;
    let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
    let cfg = SimConfig::new(1e-3, 20.0, 10_000, 7)?;
    let family = default_scenarios(&b, &cfg, DEFAULT_RANDOM_SCENARIOS)?;
    let r = estimate_discounted_reward(1.0, &c, &m, &b, &agent, &family, &cfg)?;
    let v = exploratory_value(1.0, &c);
    let lo = &r.per_scenario[r.lower_index];
    Ok((
        r.relative_error <= 0.10,
        format!(
            "scenario-min reward {:.4} ± {:.4} ({}) vs V(1) = {v:.4}, relative error {:.1}%",
            r.lower,
            lo.std_error,
            lo.scenario,
            100.0 * r.relative_error
        ),
    ))
}

pub struct CriterionOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} criterion {}: {} [{:.2}s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub const CRITERIA: [Criterion; 12] = [
    ("1 variance reproduction", variance_reproduction),
    ("2 exploration cost identity", exploration_cost_identity),
    ("3 k2 root oracle and residual", root_oracle),
    ("4 policy mean identity", policy_mean_identity),
    ("5 vanishing exploration", vanishing_exploration),
    ("6 Boltzmann-Gaussian consistency", boltzmann_consistency),
    ("7 stability equality", stability_equality),
    ("8 normality suite", normality_suite),
    ("9 sensitivity signs", sensitivity_signs),
    ("10 G-expectation sanity", g_expectation_sanity),
    ("11 LLN interval check", lln_interval),
    ("12 Monte Carlo value consistency", monte_carlo_value),
];

/// Evaluates every criterion, calling `report` as each one finishes.
pub fn run_all<F: FnMut(&CriterionOutcome)>(mut report: F) -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .map(|&(name, run)| {
            let start = Instant::now();
            let (pass, detail) = match run() {
                Ok(v) => v,
                Err(e) => (false, format!("error: {e}")),
            };
            let outcome = CriterionOutcome {
                name,
                pass,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            };
            report(&outcome);
            outcome
        })
        .collect()
}
