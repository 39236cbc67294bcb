//! `evcoord`: generate scenarios, solve them with coordinated ADMM, run the
//! unmanaged ASAP+ baseline, compare runs and self-test the kernels.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure,
//! 4 self-test failure. Log level comes from `EVCOORD_LOG` (default `info`).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use evcoord_core::report::{self, RunReport, ScenarioSummary};
use evcoord_core::scenario::{self, json_sha256, Loaded, Manifest};
use evcoord_core::{admm, selftest, AdmmOptions, Scenario};
use serde::Serialize;

#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Io(anyhow::Error),
    Selftest(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Io(_) => 3,
            Failure::Selftest(_) => 4,
        }
    }
}

impl From<evcoord_core::Error> for Failure {
    fn from(e: evcoord_core::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Io(e.into())
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "evcoord", version, about = "Coordinated, mobility-aware EV charging")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario directory.
    Generate {
        /// TOML file; only the `[generator]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[generator] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Coordinate charging with ADMM.
    Solve(SolveArgs),
    /// Schedule with the ASAP+ rule.
    Baseline {
        /// Directory with evs.csv, trajectory.csv and feeders.csv.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Only `[admm] kappa_rho` and `rho` are used, to price the EV cost.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Side-by-side metrics of two run reports (ratios are A / B).
    Compare {
        /// A report.json or a run directory; give exactly two.
        #[arg(long = "run", num_args = 1, required = true)]
        runs: Vec<PathBuf>,
        /// Write the comparison as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invariant and oracle-equivalence checks.
    Selftest {
        #[arg(long, value_enum, default_value_t = LevelArg::Quick)]
        level: LevelArg,
        /// Write the results as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Directory with evs.csv, trajectory.csv and feeders.csv.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file; only the `[admm]` table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty parameter.
    #[arg(long)]
    rho: Option<f64>,
    /// EV cost weight relative to the penalty.
    #[arg(long)]
    kappa_rho: Option<f64>,
    /// Relative certificate gap at which to stop.
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Worker threads (default: all cores). Results depend only on the inputs.
    #[arg(long)]
    threads: Option<usize>,
    /// Iterations between certificates.
    #[arg(long)]
    certificate_period: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

/// Written next to every run's outputs.
#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    files: Vec<&'static str>,
    threads: usize,
    scenario_config_sha256: Option<String>,
    scenario_seed: Option<u64>,
    options_sha256: Option<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.into()))?;
    text.push('\n');
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Io)
}

fn thread_pool(threads: Option<usize>) -> Result<(rayon::ThreadPool, usize), Failure> {
    let n = match threads {
        Some(0) => return Err(Failure::Validation(anyhow::anyhow!("--threads must be at least 1"))),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Failure::Io(e.into()))?;
    Ok((pool, n))
}

fn load(dir: &Path) -> Result<Loaded, Failure> {
    let loaded = scenario::load_scenario(dir)?;
    for id in &loaded.dropped {
        log::warn!("dropping EV {id}: its constraints cannot be met");
    }
    log::info!(
        "scenario {}: {} EVs, {} feeders, {} slots",
        dir.display(),
        loaded.scenario.n_evs(),
        loaded.scenario.n_feeders(),
        loaded.scenario.horizon()
    );
    Ok(loaded)
}

fn summary(loaded: &Loaded) -> ScenarioSummary {
    let m = loaded.manifest.as_ref();
    ScenarioSummary::new(
        &loaded.scenario,
        loaded.dropped.clone(),
        m.and_then(|m| m.config_sha256.clone()),
        m.and_then(|m| m.seed),
    )
}

fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut cfg = config::load(config)?.generator;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let scenario = scenario::generate_scenario(&cfg)?;
    let manifest = Manifest::for_generated(&cfg, &scenario)?;
    scenario::save_scenario(out, &scenario, Some(&manifest))?;
    println!(
        "wrote {} EVs, {} feeders, {} slots to {}",
        scenario.n_evs(),
        scenario.n_feeders(),
        scenario.horizon(),
        out.display()
    );
    Ok(())
}

fn solve_options(args: &SolveArgs) -> Result<AdmmOptions, Failure> {
    let mut opts = config::load(args.config.as_deref())?.admm;
    if let Some(v) = args.rho {
        opts.rho = v;
    }
    if let Some(v) = args.kappa_rho {
        opts.kappa_rho = v;
    }
    if let Some(v) = args.gap_tol {
        opts.gap_tol = v;
    }
    if let Some(v) = args.max_iter {
        opts.max_iter = v;
    }
    if let Some(v) = args.certificate_period {
        opts.certificate_period = v;
    }
    if let Some(v) = args.seed {
        opts.seed = v;
    }
    opts.validate()?;
    Ok(opts)
}

fn run_manifest(
    command: &'static str,
    files: Vec<&'static str>,
    threads: usize,
    loaded: &Loaded,
    opts: Option<&AdmmOptions>,
) -> Result<RunManifest, Failure> {
    let m = loaded.manifest.as_ref();
    Ok(RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        files,
        threads,
        scenario_config_sha256: m.and_then(|m| m.config_sha256.clone()),
        scenario_seed: m.and_then(|m| m.seed),
        options_sha256: opts.map(json_sha256).transpose()?,
    })
}

fn solve(args: &SolveArgs) -> CmdResult {
    let opts = solve_options(args)?;
    let (pool, threads) = thread_pool(args.threads)?;
    let loaded = load(&args.scenario)?;
    create_dir(&args.out)?;
    let scenario: &Scenario = &loaded.scenario;
    let period = opts.certificate_period;
    let outcome = pool.install(|| {
        admm::run_with(scenario, &opts, |r| {
            if r.iter % period == 0 {
                log::info!(
                    "iter {}: grid cost {:.6} MW, gap {}",
                    r.iter,
                    r.grid_cost,
                    r.best_rel_gap.map_or("-".into(), |g| format!("{g:.4}"))
                );
            }
        })
    })?;
    let rep = RunReport::from_solve(scenario, summary(&loaded), &opts, &outcome, threads);
    report::write_schedule(&args.out.join("schedule.csv"), scenario, &outcome.state.p)?;
    report::write_trace(&args.out.join("trace.csv"), &outcome.state.trace)?;
    rep.write(&args.out.join("report.json"))?;
    let manifest = run_manifest(
        "solve",
        vec!["schedule.csv", "trace.csv", "report.json"],
        threads,
        &loaded,
        Some(&opts),
    )?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    let gap = outcome.certificate.best_rel_gap;
    println!(
        "{:?} after {} iterations: objective {:.6}, grid cost {:.6} MW, gap {}",
        outcome.termination,
        outcome.state.iter,
        rep.objective,
        rep.grid_cost,
        gap.map_or("unavailable".into(), |g| format!("{g:.4}"))
    );
    if rep.gap_tol_met != Some(true) {
        log::warn!("gap tolerance {} not met", opts.gap_tol);
    }
    Ok(())
}

fn baseline(scenario_dir: &Path, out: &Path, config: Option<&Path>, threads: Option<usize>) -> CmdResult {
    let opts = config::load(config)?.admm;
    opts.validate()?;
    let (pool, threads) = thread_pool(threads)?;
    let loaded = load(scenario_dir)?;
    create_dir(out)?;
    let scenario = &loaded.scenario;
    let profiles = pool.install(|| scenario::asap_plus(scenario))?;
    let kappa = opts.kappa(scenario.unit_scale);
    let rep = RunReport::from_schedule(scenario, summary(&loaded), &profiles, kappa, threads);
    report::write_schedule(&out.join("schedule.csv"), scenario, &profiles)?;
    rep.write(&out.join("report.json"))?;
    let manifest = run_manifest("baseline", vec!["schedule.csv", "report.json"], threads, &loaded, None)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "ASAP+: total max violation {:.6} MW over {} feeders above threshold",
        rep.metrics.total_max_violation, rep.metrics.feeders_over_threshold
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<RunReport, Failure> {
    // a run directory stands for its report
    let file = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    Ok(RunReport::read(&file)?)
}

fn compare(runs: &[PathBuf], out: Option<&Path>) -> CmdResult {
    let [a, b] = runs else {
        return Err(Failure::Validation(anyhow::anyhow!(
            "compare takes exactly two --run arguments"
        )));
    };
    let ra = read_report(a)?;
    let rb = read_report(b)?;
    let cmp = report::compare(&ra, &rb)?;
    let cell = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
    println!("{:<24} {:>14} {:>14} {:>10}", "metric", "A", "B", "A/B");
    for m in &cmp.metrics {
        println!(
            "{:<24} {:>14} {:>14} {:>10}",
            m.name,
            cell(m.a),
            cell(m.b),
            cell(m.ratio)
        );
    }
    if let Some(out) = out {
        write_json(out, &cmp)?;
    }
    Ok(())
}

fn run_selftest(level: LevelArg, out: Option<&Path>, threads: Option<usize>) -> CmdResult {
    let level = match level {
        LevelArg::Quick => selftest::Level::Quick,
        LevelArg::Full => selftest::Level::Full,
    };
    let (pool, _) = thread_pool(threads)?;
    let results = pool.install(|| selftest::run(level));
    for r in &results {
        println!(
            "{} {:<24} {:>7.2}s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
    }
    if let Some(out) = out {
        write_json(out, &results)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Selftest(failed));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.cmd {
        Command::Generate { config, out, seed } => generate(config.as_deref(), &out, seed),
        Command::Solve(args) => solve(&args),
        Command::Baseline {
            scenario,
            out,
            config,
            threads,
        } => baseline(&scenario, &out, config.as_deref(), threads),
        Command::Compare { runs, out } => compare(&runs, out.as_deref()),
        Command::Selftest { level, out, threads } => run_selftest(level, out.as_deref(), threads),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVCOORD_LOG", "info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(e) | Failure::Io(e) => eprintln!("error: {e:#}"),
                Failure::Selftest(n) => eprintln!("selftest: {n} check(s) failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
