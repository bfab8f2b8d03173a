//! `pacing` command line: one subcommand per harness operation.
//!
//! Exit status is 0 on success, 2 for usage and configuration errors and 1
//! for anything that fails while running.

use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use pacing_core::chart::{available_metrics, render_chart};
use pacing_core::equilibrium::{
    check_monotonicity, equilibrium_utilities, solve_hp_equilibrium, solve_ncp, write_equilibria, EquilibriumResult,
};
use pacing_core::estimators::Family;
use pacing_core::harness::config::Scenario;
use pacing_core::harness::experiments::{counterexample_market, CounterexampleResult, MisreportResult};
use pacing_core::harness::sweep::cell_market;
use pacing_core::harness::{ingest_bid_log, run_counterexample, run_misreport, run_sweep, write_summary, MisreportSpec, SummaryRow, SweepSpec};
use pacing_core::hindsight::{hindsight_exact, minimize_dual, DualConfig, HindsightInstance};
use pacing_core::io::{csv_writer, fmt_f64};
use pacing_core::strategies::{draw_rounds, simulate, write_trace, DrawSource};
use pacing_core::{Error, MarketConfig, Result, RngStream, Strategy, TraceDetail};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable consulted when `--out` is not given.
pub const OUT_DIR_ENV: &str = "PACING_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "pacing", version, about = "Budget pacing simulations, equilibria and reports")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory. Defaults to $PACING_OUT_DIR, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Diagnostics window in rounds.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Summary CSV written by `sweep` (or `simulate`).
    summary: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metric column; every metric column when omitted.
    #[arg(long)]
    metric: Option<String>,
    /// Column whose values become the chart series.
    #[arg(long, default_value = "strategy")]
    group_by: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured strategies once; writes a trace and a summary.
    Simulate(Common),
    /// Repeated runs over a grid of target rates; writes summary.csv.
    Sweep(Common),
    /// The two-bidder counterexample; writes counterexample.csv and summary.csv.
    Counterexample(Common),
    /// Truthful vs misreported target rate on coupled rounds.
    Misreport(Common),
    /// Solve the IP, CP and HP complementarity problems.
    Equilibrium(Common),
    /// Grid estimate of the strong monotonicity constant.
    Monotonicity(Common),
    /// Exact hindsight welfare on short instances, against the dual bound.
    Hindsight(Common),
    /// Build empirical value laws from a bid log.
    Ingest(Common),
    /// Render SVG charts from a summary file.
    Plot(PlotArgs),
}

/// Parse `argv` (including the program name), run, and return the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

struct Context {
    scenario: Scenario,
    seed: u64,
    window: usize,
    out: PathBuf,
    hash: String,
}

impl Context {
    fn load(c: Common) -> Result<Self> {
        if !c.config.exists() {
            return Err(Error::Config(format!("config file {} not found", c.config.display())));
        }
        let mut scenario = Scenario::load(&c.config)?;
        if let Some(s) = c.seed {
            scenario.seed = s;
        }
        if let Some(w) = c.window {
            scenario.diagnostics.window = w;
        }
        if let (Some(ingest), Some(market)) = (scenario.ingest.clone(), scenario.market.as_mut()) {
            let log = File::open(&ingest.path)?;
            let result = ingest_bid_log(log, ingest.k, scenario.seed)?;
            if market.bidders.len() != result.distributions.len() {
                return Err(Error::Config(format!(
                    "ingest builds {} bidders but [market] lists {}",
                    result.distributions.len(),
                    market.bidders.len()
                )));
            }
            for (b, d) in market.bidders.iter_mut().zip(result.distributions) {
                b.value = d;
            }
        }
        let hash = scenario.hash();
        Ok(Context {
            seed: scenario.seed,
            window: scenario.diagnostics.window,
            out: out_dir(c.out),
            hash,
            scenario,
        })
    }

    fn market(&self) -> Result<&MarketConfig> {
        self.scenario.market()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| Error::Config(format!("scenario has no [{name}] table")))
}

fn run(command: Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Plot(p) => plot(p),
        Command::Simulate(c) => cmd_simulate(&Context::load(c)?),
        Command::Sweep(c) => cmd_sweep(&Context::load(c)?),
        Command::Counterexample(c) => cmd_counterexample(&Context::load(c)?),
        Command::Misreport(c) => cmd_misreport(&Context::load(c)?),
        Command::Equilibrium(c) => cmd_equilibrium(&Context::load(c)?),
        Command::Monotonicity(c) => cmd_monotonicity(&Context::load(c)?),
        Command::Hindsight(c) => cmd_hindsight(&Context::load(c)?),
        Command::Ingest(c) => cmd_ingest(&Context::load(c)?),
    }
}

fn cmd_simulate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let mut market = ctx.market()?.clone();
    market.trace_detail = TraceDetail::Full;
    let stream = RngStream::new(ctx.seed);
    let strategies = &ctx.scenario.simulate.strategies;
    if strategies.is_empty() {
        return Err(Error::Config("[simulate] lists no strategies".into()));
    }
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for &s in strategies {
        info!("simulating {} for {} rounds", s, market.horizon);
        let sim = simulate(&market, s, DrawSource::new(&market, &stream, 0, 0), ctx.window)?;
        let name = if strategies.len() == 1 {
            "trace.csv".to_string()
        } else {
            format!("trace-{}.csv", s.name().to_lowercase())
        };
        let path = ctx.path(&name);
        write_trace(&path, sim.trace.as_deref().unwrap_or_default())?;
        files.push(path);
        let rhos = market.rhos();
        let mut r = SummaryRow::from_summary(&sim.summary, 0.0, 0, ctx.seed, &ctx.hash);
        for row in &mut r {
            row.rho = rhos[row.bidder];
        }
        rows.extend(r);
    }
    let path = ctx.path("summary.csv");
    write_summary(&path, &rows)?;
    files.push(path);
    Ok(files)
}

fn cmd_sweep(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sec = section(&ctx.scenario.sweep, "sweep")?;
    let mut grid = sec.rho_grid.clone();
    if grid.is_empty() {
        match (sec.rho_step, sec.rho_count) {
            (Some(step), Some(n)) => grid = (1..=n).map(|a| step * a as f64).collect(),
            _ => return Err(Error::Config("[sweep] needs rho_grid or rho_step with rho_count".into())),
        }
    }
    let spec = SweepSpec {
        base: ctx.market()?.clone(),
        rho_grid: grid,
        repetitions: sec.repetitions,
        seed: ctx.seed,
        strategies: sec.strategies.clone(),
        rho_sd: sec.rho_sd,
        window: ctx.window,
        scenario: ctx.hash.clone(),
    };
    // fail early on a bad cell instead of deep inside the parallel run
    for &rho in &spec.rho_grid {
        cell_market(&spec, rho, 0, 0)?;
    }
    info!("sweep over {} rates x {} repetitions", spec.rho_grid.len(), spec.repetitions);
    let rows = run_sweep(&spec)?;
    let path = ctx.path("summary.csv");
    write_summary(&path, &rows)?;
    Ok(vec![path])
}

fn write_counterexample(path: &Path, r: &CounterexampleResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["strategy", "round", "bidder", "avg_utility", "std_error", "repetitions"])?;
    for s in &r.strategies {
        for c in &s.curve {
            w.write_record([
                s.strategy.name().to_string(),
                c.round.to_string(),
                c.bidder.to_string(),
                fmt_f64(c.band.mean),
                fmt_f64(c.band.std_error),
                c.band.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_counterexample(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sec = section(&ctx.scenario.counterexample, "counterexample")?;
    let market = counterexample_market(sec.p, sec.eta, sec.horizon)?;
    info!("counterexample p={} eta={} with {} repetitions", sec.p, sec.eta, sec.repetitions);
    let r = run_counterexample(&market, sec.repetitions, ctx.seed, sec.checkpoints, ctx.window, &ctx.hash)?;
    let curve = ctx.path("counterexample.csv");
    write_counterexample(&curve, &r)?;
    let rows: Vec<SummaryRow> = r.strategies.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    let summary = ctx.path("summary.csv");
    write_summary(&summary, &rows)?;
    Ok(vec![curve, summary])
}

fn write_misreport(path: &Path, r: &MisreportResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bidder", "quantity", "truthful", "misreport", "delta", "delta_std_error", "repetitions"])?;
    let k = r.delta_utility.len();
    for i in 0..k {
        for (name, t, m, d) in [
            ("utility", &r.truthful_utility, &r.misreport_utility, &r.delta_utility),
            ("value", &r.truthful_value, &r.misreport_value, &r.delta_value),
        ] {
            w.write_record([
                i.to_string(),
                name.to_string(),
                fmt_f64(t[i].mean),
                fmt_f64(m[i].mean),
                fmt_f64(d[i].mean),
                fmt_f64(d[i].std_error),
                d[i].n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_misreport(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sec = section(&ctx.scenario.misreport, "misreport")?;
    let base = ctx.market()?.clone();
    let estimator = ctx.scenario.solver.estimator(&base, ctx.seed);
    let spec = MisreportSpec {
        base,
        deviator: sec.deviator,
        reported_rho: sec.reported_rho,
        repetitions: sec.repetitions,
        seed: ctx.seed,
        strategy: sec.strategy,
    };
    let r = run_misreport(&spec, &estimator, &ctx.scenario.solver.solver_config())?;
    let main = ctx.path("misreport.csv");
    write_misreport(&main, &r)?;
    let truthful = ctx.path("equilibria-truthful.csv");
    write_equilibria(&truthful, std::slice::from_ref(&r.equilibrium_truthful))?;
    let lying = ctx.path("equilibria-misreport.csv");
    write_equilibria(&lying, std::slice::from_ref(&r.equilibrium_misreport))?;
    Ok(vec![main, truthful, lying])
}

fn report_result(r: &EquilibriumResult) {
    if !r.converged {
        log::warn!("{:?} solve did not converge; max violation {:e}", r.family, r.max_violation());
    }
    if !r.flagged.is_empty() {
        log::warn!("{:?} solve flagged bidders {:?}", r.family, r.flagged);
    }
}

fn cmd_equilibrium(ctx: &Context) -> Result<Vec<PathBuf>> {
    let market = ctx.market()?;
    let estimator = ctx.scenario.solver.estimator(market, ctx.seed);
    let config = ctx.scenario.solver.solver_config();
    let ip = solve_ncp(market, Family::Ip, &estimator, &config)?;
    let cp = solve_ncp(market, Family::Cp, &estimator, &config)?;
    let hp = solve_hp_equilibrium(market, &ip, &estimator, config.tol)?;
    let results = [ip, cp, hp];
    results.iter().for_each(report_result);
    let path = ctx.path("equilibria.csv");
    write_equilibria(&path, &results)?;

    let upath = ctx.path("equilibrium-utilities.csv");
    let mut w = csv_writer(&upath)?;
    w.write_record(["family", "bidder", "expenditure", "utility", "utility_std_error", "value"])?;
    for r in &results {
        for (k, e) in equilibrium_utilities(r, market, &estimator)?.iter().enumerate() {
            w.write_record([
                format!("{:?}", r.family).to_uppercase(),
                k.to_string(),
                fmt_f64(e.expenditure.mean),
                fmt_f64(e.utility.mean),
                fmt_f64(e.utility.std_error),
                fmt_f64(e.value.mean),
            ])?;
        }
    }
    w.flush()?;
    Ok(vec![path, upath])
}

fn cmd_monotonicity(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sec = section(&ctx.scenario.monotonicity, "monotonicity")?;
    let market = ctx.market()?;
    let k = market.k();
    let lo = if sec.lo.is_empty() { vec![0.0; k] } else { sec.lo.clone() };
    let hi = if sec.hi.is_empty() { market.caps() } else { sec.hi.clone() };
    if lo.len() != k || hi.len() != k {
        return Err(Error::Config(format!("[monotonicity] lo and hi need {k} entries")));
    }
    let estimator = ctx.scenario.solver.estimator(market, ctx.seed);
    let report = check_monotonicity(market, Family::from(sec.family), &estimator, sec.grid_width, &lo, &hi)?;
    let path = ctx.path("monotonicity.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["family", "grid_width", "gamma_hat", "pairs", "violating_a", "violating_b"])?;
    let (a, b) = match &report.violating_pair {
        Some((a, b)) => (join(a), join(b)),
        None => (String::new(), String::new()),
    };
    w.write_record([
        sec.family.name().to_string(),
        fmt_f64(report.grid_width),
        fmt_f64(report.gamma_hat),
        report.pairs.to_string(),
        a,
        b,
    ])?;
    w.flush()?;
    Ok(vec![path])
}

fn join(x: &[f64]) -> String {
    x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

fn cmd_hindsight(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sec = section(&ctx.scenario.hindsight, "hindsight")?;
    let mut market = ctx.market()?.clone();
    market.horizon = sec.horizon;
    market.trace_detail = TraceDetail::Summary;
    market.validate()?;
    let dual = minimize_dual(
        &market,
        &DualConfig {
            samples: sec.dual_samples,
            seed: ctx.seed,
            solver: ctx.scenario.solver.solver_config(),
        },
    )?;
    let stream = RngStream::new(ctx.seed);
    let path = ctx.path("hindsight.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "instance",
        "horizon",
        "hindsight_welfare",
        "instance_dual_bound",
        "market_dual_bound",
        "ip_welfare",
        "cp_welfare",
        "hp_welfare",
    ])?;
    for i in 0..sec.instances {
        let draws = draw_rounds(&market, &stream, 0, i as u64);
        let inst = HindsightInstance::new(
            draws.iter().map(|d| d.values.clone()).collect(),
            draws.iter().map(|d| d.outside_bid).collect(),
            market.rhos(),
        )?;
        // too many bidders or rounds for exact search: keep the bound columns only
        let exact = match hindsight_exact(&inst) {
            Ok(sol) => fmt_f64(sol.welfare / sec.horizon as f64),
            Err(Error::TooLarge(why)) => {
                log::warn!("instance {i}: {why}");
                String::new()
            }
            Err(e) => return Err(e),
        };
        let mut record = vec![
            i.to_string(),
            sec.horizon.to_string(),
            exact,
            fmt_f64(inst.dual_bound(&dual.mu)),
            fmt_f64(dual.value.mean),
        ];
        for s in Strategy::ALL {
            let sim = simulate(&market, s, draws.iter().cloned(), 1)?;
            record.push(fmt_f64(sim.summary.welfare()));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(vec![path])
}

fn cmd_ingest(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sec = section(&ctx.scenario.ingest, "ingest")?;
    let r = ingest_bid_log(File::open(&sec.path)?, sec.k, ctx.seed)?;
    info!("ingested {} records, skipped {}", r.records, r.skipped);
    let path = ctx.path("ingest.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["bidder", "advertiser", "part", "atoms", "mean", "support_lo", "support_hi"])?;
    for (k, (d, (adv, part))) in r.distributions.iter().zip(&r.parts).enumerate() {
        w.write_record([
            k.to_string(),
            adv.clone(),
            part.to_string(),
            d.atoms().len().to_string(),
            fmt_f64(d.mean()),
            fmt_f64(d.support_lo()),
            fmt_f64(d.support_hi()),
        ])?;
    }
    w.flush()?;
    Ok(vec![path])
}

fn plot(p: PlotArgs) -> Result<Vec<PathBuf>> {
    let out = out_dir(p.out);
    let metrics: Vec<String> = match p.metric {
        Some(m) => vec![m],
        None => available_metrics(File::open(&p.summary)?)?,
    };
    let mut files = Vec::new();
    for m in metrics {
        let svg = render_chart(File::open(&p.summary)?, &m, &p.group_by)?;
        std::fs::create_dir_all(&out)?;
        let path = out.join(format!("{m}.svg"));
        std::fs::write(&path, svg)?;
        files.push(path);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_default_out_dir() {
        assert_eq!(out_dir(Some(PathBuf::from("here"))), PathBuf::from("here"));
    }

    #[test]
    fn parse_errors_are_usage_errors() {
        assert_eq!(dispatch(["pacing", "sweep"]), EXIT_USAGE);
        assert_eq!(dispatch(["pacing", "frobnicate"]), EXIT_USAGE);
        assert_eq!(dispatch(["pacing", "--version"]), EXIT_OK);
    }
}
