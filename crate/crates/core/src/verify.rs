//! Verification harness: policy normality (mode A), discount-rate
//! sensitivity (mode B), vanishing-exploration limits of the policy
//! (mode C) and of the value function (mode D).
//!
//! Each run produces one row per grid point and a list of pass/fail
//! criteria. Grid points are evaluated in parallel; rows are emitted in grid
//! order and sampling uses the seed `master + index`, so a report depends
//! only on the configuration and the seed.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::VerificationConfig;
use crate::error::{Error, Result};
use crate::lq::{
    effective_control_penalty, exploratory_value, non_exploratory_control, non_exploratory_value,
    optimal_policy, solve_hjb, GaussianPolicy, RootSelection,
};
use crate::model::{AgentParams, ModelParams};
use crate::simulation::sample_action;
use crate::stability::{check_admissibility, stability_coefficients, value_gap};
use crate::stats::{ad_test, ks_test};

/// Points per density curve.
const DENSITY_POINTS: usize = 201;
/// Density curves span `μ ± DENSITY_WIDTH·σ`.
const DENSITY_WIDTH: f64 = 4.0;
/// Absolute tolerance of the value-gap cross-check.
const GAP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    A,
    B,
    C,
    D,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Mode::A),
            "B" => Ok(Mode::B),
            "C" => Ok(Mode::C),
            "D" => Ok(Mode::D),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::A => "A",
            Mode::B => "B",
            Mode::C => "C",
            Mode::D => "D",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum RowStatus {
    #[default]
    Ok,
    InvalidParameters,
    IllPosed,
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowStatus::Ok => "ok",
            RowStatus::InvalidParameters => "invalid-parameters",
            RowStatus::IllPosed => "ill-posed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Row {
    pub index: usize,
    pub sigma_upper: f64,
    pub lambda: f64,
    pub rho: f64,
    pub x: f64,
    pub status: RowStatus,
    pub error: Option<String>,
    pub k2: Option<f64>,
    pub k1: Option<f64>,
    pub k0: Option<f64>,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub std_dev: Option<f64>,
    pub alpha: Option<f64>,
    pub rho_gt_alpha: Option<bool>,
    pub k2_negative: Option<bool>,
    pub den_positive: Option<bool>,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    pub ks_pass: Option<bool>,
    pub ad_statistic: Option<f64>,
    pub ad_pass: Option<bool>,
    pub value: Option<f64>,
    pub value_ne: Option<f64>,
    pub gap: Option<f64>,
    pub gap_reference: Option<f64>,
}

impl Row {
    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }

    /// `ρ > α`, `k₂ < 0` and `K − k₂D²σ̄² > 0`.
    pub fn well_posed(&self) -> bool {
        self.rho_gt_alpha == Some(true)
            && self.k2_negative == Some(true)
            && self.den_positive == Some(true)
    }

    fn policy(&self) -> Option<GaussianPolicy> {
        match (self.mean, self.variance) {
            (Some(m), Some(v)) if v > 0.0 => GaussianPolicy::new(m, v).ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Criterion {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityPoint {
    pub sigma_upper: f64,
    pub lambda: f64,
    pub rho: f64,
    pub u: f64,
    pub pdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub mode: Mode,
    pub seed: u64,
    pub rows: Vec<Row>,
    pub summary: Vec<Criterion>,
    pub density: Vec<DensityPoint>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.summary.iter().all(|c| c.pass)
    }
}

struct Point {
    index: usize,
    sigma_upper: f64,
    lambda: f64,
    rho: f64,
}

/// Solves one grid point; `λ = 0` is the analytic limit (Dirac policy at
/// `u*(x)`, `V = Vⁿᵉ`).
fn solve_point(cfg: &VerificationConfig, p: &Point) -> Row {
    let mut row = Row {
        index: p.index,
        sigma_upper: p.sigma_upper,
        lambda: p.lambda,
        rho: p.rho,
        x: cfg.x_test,
        ..Row::default()
    };
    let inputs = || -> Result<(ModelParams, crate::AmbiguityBounds, AgentParams)> {
        let m = cfg.model()?;
        let b = cfg.bounds(p.sigma_upper)?;
        let solve_lambda = if p.lambda == 0.0 { 1.0 } else { p.lambda };
        let agent = AgentParams::new(solve_lambda, p.rho)?;
        Ok((m, b, agent))
    };
    let (m, b, agent) = match inputs() {
        Ok(v) => v,
        Err(e) => {
            row.status = RowStatus::InvalidParameters;
            row.error = Some(e.to_string());
            return row;
        }
    };
    let mut solved = || -> Result<()> {
        let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
        let den = effective_control_penalty(c.k2(), &m, &b);
        let exploratory = p.lambda > 0.0;
        let sc = stability_coefficients(&c, &m, &b, p.lambda, exploratory)?;
        row.k2 = Some(c.k2());
        row.k1 = Some(c.k1());
        row.alpha = Some(sc.alpha);
        row.rho_gt_alpha = Some(check_admissibility(p.rho, &sc).admissible);
        row.k2_negative = Some(c.k2() < 0.0);
        row.den_positive = Some(den > 0.0);
        let v_ne = non_exploratory_value(cfg.x_test, &c, &m, &b, &agent)?;
        row.value_ne = Some(v_ne);
        if exploratory {
            let pol = optimal_policy(cfg.x_test, &c, &m, &b, p.lambda)?;
            let v = exploratory_value(cfg.x_test, &c);
            row.k0 = Some(c.k0());
            row.mean = Some(pol.mean());
            row.variance = Some(pol.variance());
            row.std_dev = Some(pol.std_dev());
            row.value = Some(v);
            row.gap = Some(v - v_ne);
            row.gap_reference = Some(value_gap(&c, &m, &b, &agent)?);
        } else {
            let mean = non_exploratory_control(cfg.x_test, &c, &m, &b)?;
            let quad = 0.5 * c.k2() * cfg.x_test * cfg.x_test + c.k1() * cfg.x_test;
            row.k0 = Some(v_ne - quad);
            row.mean = Some(mean);
            row.variance = Some(0.0);
            row.std_dev = Some(0.0);
            row.value = Some(v_ne);
            row.gap = Some(0.0);
            row.gap_reference = Some(0.0);
        }
        Ok(())
    };
    if let Err(e) = solved() {
        row.status = RowStatus::IllPosed;
        row.error = Some(e.to_string());
    }
    row
}

fn run_points<F>(points: Vec<Point>, per_row: F) -> Vec<Row>
where
    F: Fn(&Point) -> Row + Sync + Send,
{
    points.par_iter().map(per_row).collect()
}

fn normality(cfg: &VerificationConfig, seed: u64, row: &mut Row) {
    let Some(policy) = row.policy() else { return };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(row.index as u64));
    let samples: Vec<f64> = (0..cfg.n_samples)
        .map(|_| sample_action(&policy, &mut rng))
        .collect();
    match (
        ks_test(&samples, policy.mean(), policy.std_dev()),
        ad_test(&samples, policy.mean(), policy.std_dev()),
    ) {
        (Ok(ks), Ok(ad)) => {
            row.ks_statistic = Some(ks.statistic);
            row.ks_p_value = Some(ks.p_value);
            row.ks_pass = Some(ks.passes());
            row.ad_statistic = Some(ad.statistic);
            row.ad_pass = Some(ad.pass);
        }
        (Err(e), _) | (_, Err(e)) => {
            row.status = RowStatus::IllPosed;
            row.error = Some(e.to_string());
        }
    }
}

fn density_curve(row: &Row) -> Vec<DensityPoint> {
    let Some(policy) = row.policy() else {
        return Vec::new();
    };
    let half = DENSITY_WIDTH * policy.std_dev();
    (0..DENSITY_POINTS)
        .map(|j| {
            let u = policy.mean() - half + 2.0 * half * j as f64 / (DENSITY_POINTS - 1) as f64;
            DensityPoint {
                sigma_upper: row.sigma_upper,
                lambda: row.lambda,
                rho: row.rho,
                u,
                pdf: policy.pdf(u),
            }
        })
        .collect()
}

fn validity_criteria(rows: &[Row]) -> Vec<Criterion> {
    let invalid: Vec<String> = rows
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| {
            format!(
                "row {} {}: {}",
                r.index,
                r.status,
                r.error.as_deref().unwrap_or("")
            )
        })
        .collect();
    let ill: Vec<usize> = rows
        .iter()
        .filter(|r| r.is_ok() && !r.well_posed())
        .map(|r| r.index)
        .collect();
    vec![
        Criterion::new(
            "all grid points valid",
            invalid.is_empty(),
            if invalid.is_empty() {
                format!("{} rows", rows.len())
            } else {
                invalid.join("; ")
            },
        ),
        Criterion::new(
            "rho > alpha, k2 < 0, K - k2 D^2 sigma^2 > 0",
            ill.is_empty() && rows.iter().any(Row::is_ok),
            if ill.is_empty() {
                "all valid rows".into()
            } else {
                format!("fails at rows {ill:?}")
            },
        ),
    ]
}

/// Strictly decreasing `key` along `rows` (already in the comparison
/// order). Returns the first offending pair of indices.
fn strictly_decreasing<F: Fn(&Row) -> Option<f64>>(
    rows: &[&Row],
    key: F,
) -> Option<(usize, usize)> {
    rows.windows(2).find_map(|w| match (key(w[0]), key(w[1])) {
        (Some(a), Some(b)) if b < a => None,
        _ => Some((w[0].index, w[1].index)),
    })
}

fn monotone_criterion<F: Fn(&Row) -> Option<f64>>(name: &str, rows: &[&Row], key: F) -> Criterion {
    match strictly_decreasing(rows, key) {
        None => Criterion::new(name, true, format!("{} points", rows.len())),
        Some((i, j)) => Criterion::new(
            name,
            false,
            format!("not decreasing between rows {i} and {j}"),
        ),
    }
}

/// Mode A: normality of the sampled policy for each `σ̄`.
pub fn run_mode_a(cfg: &VerificationConfig, seed: u64) -> Result<VerificationReport> {
    let points = cfg
        .sigma_upper
        .iter()
        .enumerate()
        .map(|(index, &s)| Point {
            index,
            sigma_upper: s,
            lambda: cfg.lambda(),
            rho: cfg.rho(),
        })
        .collect();
    let rows = run_points(points, |p| {
        let mut row = solve_point(cfg, p);
        if row.is_ok() {
            normality(cfg, seed, &mut row);
        }
        row
    });

    let mut summary = validity_criteria(&rows);
    let tested: Vec<&Row> = rows.iter().filter(|r| r.ks_pass.is_some()).collect();
    let ks_fail: Vec<usize> = tested
        .iter()
        .filter(|r| r.ks_pass != Some(true))
        .map(|r| r.index)
        .collect();
    let ad_fail: Vec<usize> = tested
        .iter()
        .filter(|r| r.ad_pass != Some(true))
        .map(|r| r.index)
        .collect();
    summary.push(Criterion::new(
        "K-S test p-value > 0.05",
        !tested.is_empty() && ks_fail.is_empty(),
        format!("{} tested, failing rows {ks_fail:?}", tested.len()),
    ));
    summary.push(Criterion::new(
        "A-D statistic < critical value",
        !tested.is_empty() && ad_fail.is_empty(),
        format!("{} tested, failing rows {ad_fail:?}", tested.len()),
    ));
    let mut by_sigma: Vec<&Row> = rows.iter().filter(|r| r.is_ok()).collect();
    by_sigma.sort_by(|a, b| a.sigma_upper.total_cmp(&b.sigma_upper));
    if by_sigma.len() >= 2 {
        summary.push(monotone_criterion("dVar/dsigma < 0", &by_sigma, |r| {
            r.variance
        }));
    }
    let density = rows.iter().flat_map(density_curve).collect();
    Ok(VerificationReport {
        mode: Mode::A,
        seed,
        rows,
        summary,
        density,
    })
}

/// Mode B: policy parameters along an ascending `ρ` grid at the first `σ̄`.
pub fn run_mode_b(cfg: &VerificationConfig, seed: u64) -> Result<VerificationReport> {
    if let Some(i) = (1..cfg.rhos.len()).find(|&i| cfg.rhos[i] <= cfg.rhos[i - 1]) {
        return Err(Error::InvalidGrid(format!(
            "rho grid is not strictly increasing at index {i}"
        )));
    }
    let points = cfg
        .rhos
        .iter()
        .enumerate()
        .map(|(index, &rho)| Point {
            index,
            sigma_upper: cfg.sigma(),
            lambda: cfg.lambda(),
            rho,
        })
        .collect();
    let rows = run_points(points, |p| solve_point(cfg, p));
    let admissible: Vec<&Row> = rows
        .iter()
        .filter(|r| r.is_ok() && r.well_posed())
        .collect();
    if admissible.len() < 2 {
        return Err(Error::InvalidGrid(format!(
            "mode B needs at least 2 admissible rho values, found {}",
            admissible.len()
        )));
    }
    let mut summary = validity_criteria(&rows);
    summary.push(monotone_criterion("dVar/drho < 0", &admissible, |r| {
        r.variance
    }));
    let density = rows.iter().flat_map(density_curve).collect();
    Ok(VerificationReport {
        mode: Mode::B,
        seed,
        rows,
        summary,
        density,
    })
}

fn check_lambda_grid(lambdas: &[f64]) -> Result<()> {
    for (i, &l) in lambdas.iter().enumerate() {
        let last = i + 1 == lambdas.len();
        if l < 0.0 || (l == 0.0 && !last) {
            return Err(Error::InvalidGrid(format!(
                "lambda grid must be positive (a single trailing 0 is the limit), bad value at index {i}"
            )));
        }
        if i > 0 && l >= lambdas[i - 1] {
            return Err(Error::InvalidGrid(format!(
                "lambda grid is not strictly descending at index {i}"
            )));
        }
    }
    Ok(())
}

fn sigma_lambda_points(cfg: &VerificationConfig) -> Vec<Point> {
    let nl = cfg.lambdas.len();
    cfg.sigma_upper
        .iter()
        .enumerate()
        .flat_map(|(si, &s)| {
            cfg.lambdas.iter().enumerate().map(move |(li, &l)| Point {
                index: si * nl + li,
                sigma_upper: s,
                lambda: l,
                rho: cfg.rho(),
            })
        })
        .collect()
}

fn groups(rows: &[Row], per: usize) -> impl Iterator<Item = Vec<&Row>> {
    rows.chunks(per)
        .map(|c| c.iter().filter(|r| r.is_ok()).collect::<Vec<_>>())
}

/// Mode C: policy spread along a descending `λ` grid for every `σ̄`.
pub fn run_mode_c(cfg: &VerificationConfig, seed: u64) -> Result<VerificationReport> {
    check_lambda_grid(&cfg.lambdas)?;
    let rows = run_points(sigma_lambda_points(cfg), |p| solve_point(cfg, p));
    let mut summary = validity_criteria(&rows);
    let nl = cfg.lambdas.len();
    let (mut dec, mut scaling, mut mean) = (Vec::new(), Vec::new(), Vec::new());
    for (si, g) in groups(&rows, nl).enumerate() {
        let s = cfg.sigma_upper[si];
        if let Some((i, j)) = strictly_decreasing(&g, |r| r.std_dev) {
            dec.push(format!("sigma_upper {s}: rows {i},{j}"));
        }
        let ratios: Vec<f64> = g
            .iter()
            .filter(|r| r.lambda > 0.0)
            .filter_map(|r| r.variance.map(|v| v / r.lambda))
            .collect();
        if let Some(&r0) = ratios.first() {
            if ratios
                .iter()
                .any(|r| (r - r0).abs() > cfg.epsilon * r0.abs().max(1.0))
            {
                scaling.push(format!("sigma_upper {s}"));
            }
        }
        let means: Vec<f64> = g.iter().filter_map(|r| r.mean).collect();
        if let Some(&m0) = means.first() {
            if means
                .iter()
                .any(|m| (m - m0).abs() > cfg.epsilon * m0.abs().max(1.0))
            {
                mean.push(format!("sigma_upper {s}"));
            }
        }
    }
    summary.push(Criterion::new(
        "policy std dev -> 0 as lambda -> 0",
        dec.is_empty(),
        if dec.is_empty() {
            "strictly decreasing".into()
        } else {
            dec.join("; ")
        },
    ));
    summary.push(Criterion::new(
        "variance / lambda constant",
        scaling.is_empty(),
        if scaling.is_empty() {
            format!("within {:e}", cfg.epsilon)
        } else {
            scaling.join("; ")
        },
    ));
    summary.push(Criterion::new(
        "policy mean invariant in lambda",
        mean.is_empty(),
        if mean.is_empty() {
            format!("within {:e}", cfg.epsilon)
        } else {
            mean.join("; ")
        },
    ));
    let density = rows.iter().flat_map(density_curve).collect();
    Ok(VerificationReport {
        mode: Mode::C,
        seed,
        rows,
        summary,
        density,
    })
}

/// Mode D: exploratory and classical values along a descending `λ` grid for
/// every `σ̄`.
pub fn run_mode_d(cfg: &VerificationConfig, seed: u64) -> Result<VerificationReport> {
    check_lambda_grid(&cfg.lambdas)?;
    let rows = run_points(sigma_lambda_points(cfg), |p| solve_point(cfg, p));
    let mut summary = validity_criteria(&rows);
    let nl = cfg.lambdas.len();
    let mut dec = Vec::new();
    for (si, g) in groups(&rows, nl).enumerate() {
        if let Some((i, j)) = strictly_decreasing(&g, |r| r.gap.map(f64::abs)) {
            dec.push(format!("sigma_upper {}: rows {i},{j}", cfg.sigma_upper[si]));
        }
    }
    summary.push(Criterion::new(
        "V -> V_ne as lambda -> 0",
        dec.is_empty(),
        if dec.is_empty() {
            "|V - V_ne| strictly decreasing".into()
        } else {
            dec.join("; ")
        },
    ));
    let worst = rows
        .iter()
        .filter_map(|r| Some((r.gap? - r.gap_reference?).abs()))
        .fold(0.0, f64::max);
    summary.push(Criterion::new(
        "value gap matches closed form",
        worst <= GAP_TOLERANCE,
        format!("max deviation {worst:e}"),
    ));
    Ok(VerificationReport {
        mode: Mode::D,
        seed,
        rows,
        summary,
        density: Vec::new(),
    })
}

pub fn run_mode(mode: Mode, cfg: &VerificationConfig, seed: u64) -> Result<VerificationReport> {
    match mode {
        Mode::A => run_mode_a(cfg, seed),
        Mode::B => run_mode_b(cfg, seed),
        Mode::C => run_mode_c(cfg, seed),
        Mode::D => run_mode_d(cfg, seed),
    }
}

pub const ROW_COLUMNS: &[&str] = &[
    "index",
    "sigma_upper",
    "lambda",
    "rho",
    "x",
    "status",
    "k2",
    "k1",
    "k0",
    "mean",
    "variance",
    "std_dev",
    "alpha",
    "rho_gt_alpha",
    "k2_negative",
    "den_positive",
    "ks_statistic",
    "ks_p_value",
    "ks_pass",
    "ad_statistic",
    "ad_pass",
    "value",
    "value_ne",
    "gap",
    "gap_reference",
    "error",
];

fn opt<T: fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map(|x| format!("{x:?}")).unwrap_or_default()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_rows_csv<W: Write>(rows: &[Row], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", ROW_COLUMNS.join(","))?;
    for r in rows {
        let fields = [
            r.index.to_string(),
            format!("{:?}", r.sigma_upper),
            format!("{:?}", r.lambda),
            format!("{:?}", r.rho),
            format!("{:?}", r.x),
            r.status.to_string(),
            opt(&r.k2),
            opt(&r.k1),
            opt(&r.k0),
            opt(&r.mean),
            opt(&r.variance),
            opt(&r.std_dev),
            opt(&r.alpha),
            opt(&r.rho_gt_alpha),
            opt(&r.k2_negative),
            opt(&r.den_positive),
            opt(&r.ks_statistic),
            opt(&r.ks_p_value),
            opt(&r.ks_pass),
            opt(&r.ad_statistic),
            opt(&r.ad_pass),
            opt(&r.value),
            opt(&r.value_ne),
            opt(&r.gap),
            opt(&r.gap_reference),
            csv_escape(r.error.as_deref().unwrap_or("")),
        ];
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn write_density_csv<W: Write>(points: &[DensityPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "sigma_upper,lambda,rho,u,pdf")?;
    for p in points {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?}",
            p.sigma_upper, p.lambda, p.rho, p.u, p.pdf
        )?;
    }
    Ok(())
}

pub fn write_summary<W: Write>(report: &VerificationReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "mode {} seed {}", report.mode, report.seed)?;
    for c in &report.summary {
        writeln!(
            w,
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        )?;
    }
    writeln!(
        w,
        "overall: {}",
        if report.all_pass() { "PASS" } else { "FAIL" }
    )
}

/// Writes `mode_<m>.csv`, `summary.txt` and, when there is density data,
/// `density_mode_<m>.csv` into `dir`. Returns the written paths.
pub fn write_report(report: &VerificationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let tag = report.mode.to_string().to_ascii_lowercase();
    let mut written = Vec::new();

    let rows = dir.join(format!("mode_{tag}.csv"));
    write_rows_csv(
        &report.rows,
        std::io::BufWriter::new(fs::File::create(&rows)?),
    )?;
    written.push(rows);

    if !report.density.is_empty() {
        let dens = dir.join(format!("density_mode_{tag}.csv"));
        write_density_csv(
            &report.density,
            std::io::BufWriter::new(fs::File::create(&dens)?),
        )?;
        written.push(dens);
    }

    let summary = dir.join("summary.txt");
    write_summary(report, std::io::BufWriter::new(fs::File::create(&summary)?))?;
    written.push(summary);
    Ok(written)
}
