use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aimd_core::compare::{compare_modes, export_comparison, ModeSummary};
use aimd_core::config::parse_config;
use aimd_core::error::ErrorCategory;
use aimd_core::metrics::{collect_metrics, Summary};
use aimd_core::oracle::{solve_projected_gradient, solve_separable, OptimalAllocation};
use aimd_core::report::{fmt_float, write_json};
use aimd_core::{export_trace, run, Config, Error, Mode};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUN: u8 = 3;
const EXIT_IO: u8 = 4;

/// Simulate AIMD resource allocation and compare it with the central optimum.
///
/// Exit codes: 0 success, 2 invalid input, 3 run failure, 4 I/O failure.
#[derive(Parser)]
#[command(name = "aimd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the modes listed in the config and export traces and metrics.
    Run(Common),
    /// Run both modes on the same population and export the differences.
    Compare(Common),
    /// Solve for the optimal allocation only.
    Solve(Common),
    /// Repeat `run` for a range of seeds, in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Inclusive seed range, `a..b` or `a..=b`.
        #[arg(long, value_parser = parse_seed_range)]
        seeds: (u64, u64),
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record every N-th step in trace.csv.
    #[arg(long)]
    stride: Option<u64>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(Config, PathBuf), Error> {
        let mut config = parse_config(&self.config)?;
        if let Some(stride) = self.stride {
            config.trace_stride = Some(stride);
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| config.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((config, out))
    }
}

fn parse_seed_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .ok_or_else(|| format!("expected a..b, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
    let (a, b) = (parse(a)?, parse(b)?);
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok((a, b))
}

fn optimum(config: &Config) -> Result<OptimalAllocation, Error> {
    solve_separable(&config.cost_functions()?, &config.capacities(), config.oracle.tol)
}

fn fmt_bits(bits: &[u64]) -> String {
    let parts: Vec<String> = bits.iter().map(u64::to_string).collect();
    parts.join(" ")
}

fn print_summary(mode: Mode, s: &Summary, dir: &Path) {
    println!(
        "{:<13} cost ratio {:.5}  |x_bar - x*| median {:.3e} max {:.3e}  events [{}]  -> {}",
        mode.label(),
        s.final_cost_ratio,
        s.distance_median,
        s.distance_max,
        fmt_bits(&s.event_bits),
        dir.display()
    );
}

/// Runs and exports every mode of `config` under `out/<mode>/`.
fn run_modes(config: &Config, opt: &OptimalAllocation, out: &Path) -> Result<Vec<(Mode, Summary)>, Error> {
    let mut done = Vec::new();
    for mode in config.mode.modes() {
        let trace = run(config, mode)?;
        let report = collect_metrics(&trace, opt)?;
        export_trace(&trace, &report, out.join(mode.label()))?;
        done.push((mode, report.summary));
    }
    Ok(done)
}

fn cmd_run(common: &Common) -> Result<(), Error> {
    let (config, out) = common.load()?;
    let opt = optimum(&config)?;
    for (mode, summary) in run_modes(&config, &opt, &out)? {
        print_summary(mode, &summary, &out.join(mode.label()));
    }
    Ok(())
}

fn print_mode(s: &ModeSummary) {
    let settle = s
        .convergence_step
        .map_or_else(|| "not reached".to_owned(), |k| format!("step {k}"));
    println!("{:<13} spread settles: {settle}  events [{}]", s.mode.label(), fmt_bits(&s.event_bits));
}

fn cmd_compare(common: &Common) -> Result<(), Error> {
    let (config, out) = common.load()?;
    let opt = optimum(&config)?;
    let report = compare_modes(&config)?;
    for trace in [&report.first, &report.second] {
        let metrics = collect_metrics(trace, &opt)?;
        let dir = out.join(trace.meta.mode.label());
        export_trace(trace, &metrics, &dir)?;
        print_summary(trace.meta.mode, &metrics.summary, &dir);
    }
    export_comparison(&report, &out)?;
    let s = &report.summary;
    print_mode(&s.first);
    print_mode(&s.second);
    println!(
        "|x_bar_D - x_bar_S| at the last step: median {:.3e} max {:.3e}  -> {}",
        s.final_median_difference,
        s.final_max_difference,
        out.display()
    );
    Ok(())
}

fn cmd_solve(common: &Common) -> Result<(), Error> {
    let (config, out) = common.load()?;
    let functions = config.cost_functions()?;
    let caps = config.capacities();
    let sep = solve_separable(&functions, &caps, config.oracle.tol)?;
    let pg = solve_projected_gradient(&functions, &caps, config.oracle.pg_tol, config.oracle.pg_max_iters)?;
    let gap = sep
        .x_star
        .iter()
        .flatten()
        .zip(pg.x_star.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let mut csv = String::from("device,resource,x_star\n");
    for (i, row) in sep.x_star.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            let _ = writeln!(csv, "{i},{j},{}", fmt_float(*x));
        }
    }
    let path = out.join("optimum.csv");
    fs::write(&path, csv).map_err(|e| io_error(&path, e))?;

    let mut json = String::from("{\n");
    let _ = writeln!(json, "  \"config_hash\": \"{}\",", config.hash());
    let _ = writeln!(json, "  \"total_cost\": {},", sep.total_cost(&functions));
    let _ = writeln!(json, "  \"mu\": [{}],", join_f64(&sep.mu));
    let _ = writeln!(json, "  \"kkt_residual\": {},", sep.kkt_residual);
    let _ = writeln!(json, "  \"certified\": {},", sep.certified);
    let _ = writeln!(json, "  \"iterations\": {},", sep.iterations);
    let _ = writeln!(json, "  \"projected_gradient_residual\": {},", pg.kkt_residual);
    let _ = writeln!(json, "  \"projected_gradient_certified\": {},", pg.certified);
    let _ = writeln!(json, "  \"projected_gradient_iterations\": {},", pg.iterations);
    let _ = writeln!(json, "  \"max_solver_gap\": {gap}");
    json.push_str("}\n");
    let path = out.join("oracle.json");
    fs::write(&path, json).map_err(|e| io_error(&path, e))?;

    println!(
        "total cost {:.6}  mu [{}]  residual {:.2e} (pg {:.2e}, gap {:.2e})  -> {}",
        sep.total_cost(&functions),
        join_f64(&sep.mu),
        sep.kkt_residual,
        pg.kkt_residual,
        gap,
        out.display()
    );
    Ok(())
}

type SeedRuns = (u64, Vec<(Mode, Summary)>);

fn cmd_sweep(common: &Common, (first, last): (u64, u64)) -> Result<(), Error> {
    let (config, out) = common.load()?;
    let results: Vec<Result<SeedRuns, Error>> = (first..=last)
        .into_par_iter()
        .map(|seed| {
            let mut c = config.clone();
            c.seed = seed;
            c.validate()?;
            let opt = optimum(&c)?;
            Ok((seed, run_modes(&c, &opt, &out.join(format!("seed-{seed}")))?))
        })
        .collect();

    let m = config.m();
    let mut csv = String::from("seed,mode,cost_ratio,distance_median,distance_max");
    for j in 0..m {
        let _ = write!(csv, ",bits_{j}");
    }
    csv.push('\n');
    for result in results {
        let (seed, runs) = result?;
        for (mode, s) in runs {
            let _ = write!(
                csv,
                "{seed},{},{},{},{}",
                mode.label(),
                fmt_float(s.final_cost_ratio),
                fmt_float(s.distance_median),
                fmt_float(s.distance_max)
            );
            for b in &s.event_bits {
                let _ = write!(csv, ",{b}");
            }
            csv.push('\n');
            print_summary(mode, &s, &out.join(format!("seed-{seed}")).join(mode.label()));
        }
    }
    let path = out.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
    write_json(&config, out.join("sweep_config.json"))?;
    Ok(())
}

fn join_f64(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    parts.join(", ")
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Solve(c) => cmd_solve(c),
        Command::Sweep { common, seeds } => cmd_sweep(common, *seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (label, code) = match e.category() {
                ErrorCategory::Validation => ("validation", EXIT_VALIDATION),
                ErrorCategory::Run => ("run", EXIT_RUN),
                ErrorCategory::Io => ("io", EXIT_IO),
            };
            eprintln!("error [{label}]: {e}");
            ExitCode::from(code)
        }
    }
}
