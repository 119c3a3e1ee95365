use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use knightian_lq::config::VerificationConfig;
use knightian_lq::lq::{exploratory_value, optimal_policy, solve_hjb};
use knightian_lq::simulation::{random_piecewise, simulate_exploratory, VolatilityScenario};
use knightian_lq::stability::{check_admissibility, exploration_cost, stability_coefficients};
use knightian_lq::verify::{run_mode, write_report, write_summary, Mode};
use knightian_lq::volatility::{estimate_bounds, parse_samples, BatchedSamples};
use knightian_lq::{AgentParams, RootSelection};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of worker threads; all available cores when unset.
const WORKERS_ENV: &str = "KLQ_WORKERS";

#[derive(Parser)]
#[command(
    name = "klq",
    version,
    about = "Exploratory LQ control under volatility ambiguity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate [sigma_lower^2, sigma_upper^2] from newline-separated samples.
    EstimateBounds {
        datafile: PathBuf,
        #[arg(long)]
        batches: usize,
    },
    /// Solve for (k2, k1, k0) at every grid point of the config.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the optimal Gaussian policy at a state.
    Policy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
    },
    /// Simulate the optimal exploratory closed loop and write paths as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification mode and write its CSV and summary files.
    Verify {
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exploration cost lambda / (2 rho).
    Cost {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        rho: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    Constant,
    Piecewise,
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("{WORKERS_ENV}={v:?} is not a positive integer"))?;
    if n == 0 {
        bail!("{WORKERS_ENV} must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker pool")?;
    Ok(())
}

fn load(path: &Path) -> Result<VerificationConfig> {
    VerificationConfig::from_file(path).with_context(|| format!("loading {}", path.display()))
}

fn estimate(datafile: &Path, batches: usize) -> Result<()> {
    let text =
        fs::read_to_string(datafile).with_context(|| format!("reading {}", datafile.display()))?;
    let data = parse_samples(&text).with_context(|| format!("parsing {}", datafile.display()))?;
    let samples = BatchedSamples::with_batches(data, batches)?;
    let e = estimate_bounds(&samples)?;
    println!(
        "batches {} batch_size {}",
        samples.batches(),
        samples.batch_size()
    );
    println!("sigma_lower_sq {:?}", e.lower);
    println!("sigma_upper_sq {:?}", e.upper);
    println!("discarded {}", e.discarded);
    if e.degenerate_lower {
        println!("warning: degenerate lower bound (a batch is constant)");
    }
    Ok(())
}

fn solve(path: &Path) -> Result<()> {
    let cfg = load(path)?;
    let m = cfg.model()?;
    println!("sigma_upper,lambda,rho,k2,k1,k0,alpha,admissible");
    for &s in &cfg.sigma_upper {
        let b = cfg.bounds(s)?;
        for &lambda in &cfg.lambdas {
            for &rho in &cfg.rhos {
                let agent = AgentParams::new(lambda, rho)?;
                let c = solve_hjb(&m, &b, &agent, RootSelection::default())
                    .with_context(|| format!("sigma_upper={s} lambda={lambda} rho={rho}"))?;
                let sc = stability_coefficients(&c, &m, &b, lambda, true)?;
                println!(
                    "{s:?},{lambda:?},{rho:?},{:?},{:?},{:?},{:?},{}",
                    c.k2(),
                    c.k1(),
                    c.k0(),
                    sc.alpha,
                    check_admissibility(rho, &sc).admissible
                );
            }
        }
    }
    Ok(())
}

fn policy(path: &Path, x: f64) -> Result<()> {
    let cfg = load(path)?;
    let m = cfg.model()?;
    println!("sigma_upper,lambda,rho,x,mean,variance,value");
    for &s in &cfg.sigma_upper {
        let b = cfg.bounds(s)?;
        for &lambda in &cfg.lambdas {
            for &rho in &cfg.rhos {
                let agent = AgentParams::new(lambda, rho)?;
                let c = solve_hjb(&m, &b, &agent, RootSelection::default())
                    .with_context(|| format!("sigma_upper={s} lambda={lambda} rho={rho}"))?;
                let p = optimal_policy(x, &c, &m, &b, lambda)?;
                println!(
                    "{s:?},{lambda:?},{rho:?},{x:?},{:?},{:?},{:?}",
                    p.mean(),
                    p.variance(),
                    exploratory_value(x, &c)
                );
            }
        }
    }
    Ok(())
}

fn simulate(path: &Path, kind: ScenarioKind, seed: u64, out: Option<&Path>) -> Result<()> {
    let cfg = load(path)?;
    let m = cfg.model()?;
    let b = cfg.bounds(cfg.sigma())?;
    let agent = AgentParams::new(cfg.lambda(), cfg.rho())?;
    let sim = cfg.simulation.sim_config(seed)?;
    let scenario = match kind {
        ScenarioKind::Constant => VolatilityScenario::constant(b.upper()),
        ScenarioKind::Piecewise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_piecewise(&b, sim.horizon, sim.dt, 4.min(sim.steps()), &mut rng)?
        }
    };
    let c = solve_hjb(&m, &b, &agent, RootSelection::default())?;
    let ens = simulate_exploratory(cfg.x_test, &c, &m, &b, &agent, &scenario, &sim)?;
    match out {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            ens.write_csv(BufWriter::new(f))?;
            eprintln!(
                "wrote {} paths x {} times under {} to {}",
                ens.n_paths(),
                ens.times.len(),
                scenario.label(),
                p.display()
            );
        }
        None => match ens.write_csv(BufWriter::new(io::stdout().lock())) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {}
            r => r?,
        },
    }
    Ok(())
}

fn verify(mode: Mode, path: &Path, seed: u64, out: &Path) -> Result<bool> {
    let cfg = load(path)?;
    let report = run_mode(mode, &cfg, seed)?;
    let written = write_report(&report, out)?;
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    write_summary(&report, &mut lock)?;
    for p in written {
        writeln!(lock, "wrote {}", p.display())?;
    }
    Ok(report.all_pass())
}

fn run(cli: Cli) -> Result<bool> {
    configure_workers()?;
    match cli.command {
        Command::EstimateBounds { datafile, batches } => estimate(&datafile, batches)?,
        Command::Solve { config } => solve(&config)?,
        Command::Policy { config, x } => policy(&config, x)?,
        Command::Simulate {
            config,
            scenario,
            seed,
            out,
        } => simulate(&config, scenario, seed, out.as_deref())?,
        Command::Verify {
            mode,
            config,
            seed,
            out,
        } => return verify(mode, &config, seed, &out),
        Command::Cost { lambda, rho } => {
            let agent = AgentParams::new(lambda, rho)?;
            println!("{:?}", exploration_cost(&agent));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
