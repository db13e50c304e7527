use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsfilter::complexity::{measured_comparison, percent_reduction, reduction_grid, Metric};
use dsfilter::equivalence::{random_problem, run_trial, TrialReport};
use dsfilter::runio::{
    format_float, load_config, parse_inclusive_range, run_scenario, RandomStream,
};

/// Exit status contract: 0 success, 1 property or numerical violation,
/// 2 usage or configuration error.
const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "dsfilter",
    version,
    about = "Delayed-state and stochastic-cloning Kalman filter experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized SC vs DSKF vs oracle trials over a grid of sizes.
    Equiv {
        /// State dimensions, inclusive range `a..b`.
        #[arg(long = "n", default_value = "1..4")]
        n: String,
        /// Measurement dimensions, inclusive range `a..b`.
        #[arg(long = "m", default_value = "1..2")]
        m: String,
        /// Propagation steps per trajectory.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Trajectories per (n, m) cell.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Bound on the SC/DSKF and exact-conditioning discrepancies; the
        /// batch comparison uses ten times this.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Percent-reduction grid of DSKF relative to SC, rows n and columns m.
    Bench {
        /// `flops` or `memory`.
        #[arg(long, default_value = "flops")]
        metric: String,
        #[arg(long = "n-max", default_value_t = 20)]
        n_max: usize,
        #[arg(long = "m-max", default_value_t = 20)]
        m_max: usize,
        /// CSV destination, stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Emit one row per cell with instrumented operation counts.
        #[arg(long)]
        measured: bool,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate a scenario config and write the per-epoch CSV.
    Sim {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `output`; stdout when neither is set.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn violation(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VIOLATION,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Equiv {
            n,
            m,
            steps,
            trials,
            seed,
            tol,
        } => cmd_equiv(&n, &m, steps, trials, seed, tol),
        Command::Bench {
            metric,
            n_max,
            m_max,
            output,
            measured,
            trials,
            seed,
        } => cmd_bench(
            &metric,
            n_max,
            m_max,
            output.as_deref(),
            measured,
            trials,
            seed,
        ),
        Command::Sim { config, output } => cmd_sim(&config, output.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            if failure.code == EXIT_USAGE {
                eprintln!("\nFor more information, try 'dsfilter --help'.");
            }
            ExitCode::from(failure.code)
        }
    }
}

fn dims(flag: &str, text: &str) -> Result<RangeInclusive<usize>, Failure> {
    let range = parse_inclusive_range(text).map_err(|e| usage(format!("--{flag}: {e}")))?;
    if *range.start() == 0 {
        return Err(usage(format!(
            "--{flag}: dimensions start at 1, got {text:?}"
        )));
    }
    Ok(range)
}

/// Stream id of trial `trial` in cell `(n, m)`.
fn trial_stream(n: usize, m: usize, trial: usize) -> u64 {
    ((n as u64) << 48) | ((m as u64) << 32) | trial as u64
}

fn cmd_equiv(
    n: &str,
    m: &str,
    steps: usize,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<(), Failure> {
    let n_range = dims("n", n)?;
    let m_range = dims("m", m)?;
    if steps == 0 || trials == 0 {
        return Err(usage("--steps and --trials must be at least 1"));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(usage("--tol must be a finite non-negative number"));
    }

    println!("n,m,trials,updates,filter_maxdiff,oracle_maxdiff,batch_maxdiff,status");
    let mut failures = Vec::new();
    for n in n_range {
        for m in m_range.clone() {
            let mut worst = TrialReport {
                hygiene: true,
                ..TrialReport::default()
            };
            let mut offending = None;
            for trial in 0..trials {
                let stream = trial_stream(n, m, trial);
                let mut rng = RandomStream::with_stream(seed, stream);
                let report = random_problem(&mut rng, n, m, steps)
                    .and_then(|problem| run_trial(&problem))
                    .map_err(|e| {
                        violation(format!("n={n} m={m} seed={seed} stream={stream}: {e}"))
                    })?;
                let bad = report.filter_discrepancy() > tol
                    || report.oracle_discrepancy() > tol
                    || report.batch_discrepancy() > 10.0 * tol
                    || !report.hygiene;
                if bad && offending.is_none() {
                    offending = Some(stream);
                }
                worst.updates += report.updates;
                worst.sc_dskf_mean = worst.sc_dskf_mean.max(report.sc_dskf_mean);
                worst.sc_dskf_cov = worst.sc_dskf_cov.max(report.sc_dskf_cov);
                worst.joint_mean = worst.joint_mean.max(report.joint_mean);
                worst.joint_cov = worst.joint_cov.max(report.joint_cov);
                worst.batch_mean = worst.batch_mean.max(report.batch_mean);
                worst.batch_cov = worst.batch_cov.max(report.batch_cov);
                worst.hygiene &= report.hygiene;
            }
            println!(
                "{n},{m},{trials},{},{:.3e},{:.3e},{:.3e},{}",
                worst.updates,
                worst.filter_discrepancy(),
                worst.oracle_discrepancy(),
                worst.batch_discrepancy(),
                if offending.is_some() { "FAIL" } else { "ok" }
            );
            if let Some(stream) = offending {
                failures.push(format!("n={n} m={m} seed={seed} stream={stream}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(violation(format!(
            "discrepancy above tolerance {tol:e} in {} cell(s): {}",
            failures.len(),
            failures.join("; ")
        )))
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                usage(format!("cannot write {}: {e}", p.display()))
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn cmd_bench(
    metric: &str,
    n_max: usize,
    m_max: usize,
    output: Option<&Path>,
    measured: bool,
    trials: usize,
    seed: u64,
) -> Result<(), Failure> {
    let metric: Metric = metric
        .parse()
        .map_err(|e| usage(format!("--metric: {e}")))?;
    if n_max == 0 || m_max == 0 {
        return Err(usage("--n-max and --m-max must be at least 1"));
    }
    let mut out = open_output(output)?;
    let write_err = |e: io::Error| usage(format!("write failed: {e}"));

    if measured {
        writeln!(
            out,
            "n,m,reduction_pct,sc_full_mults,sc_full_adds,sc_reduced_mults,sc_reduced_adds,dskf_mults,dskf_adds"
        )
        .map_err(write_err)?;
        for n in 1..=n_max {
            for m in 1..=m_max {
                let pct = percent_reduction(metric, n as i64, m as i64)
                    .map_err(|e| usage(e.to_string()))?;
                let mut rng = RandomStream::with_stream(seed, trial_stream(n, m, 0));
                let counts = measured_comparison(n, m, trials, &mut rng)
                    .map_err(|e| violation(format!("n={n} m={m}: {e}")))?;
                writeln!(
                    out,
                    "{n},{m},{},{},{},{},{},{},{}",
                    format_float(pct),
                    counts.sc_full.multiplications(),
                    counts.sc_full.additions(),
                    counts.sc_reduced.multiplications(),
                    counts.sc_reduced.additions(),
                    counts.dskf.multiplications(),
                    counts.dskf.additions()
                )
                .map_err(write_err)?;
            }
        }
    } else {
        let grid = reduction_grid(metric, n_max, m_max).map_err(|e| usage(e.to_string()))?;
        let header: Vec<String> = (1..=m_max).map(|m| format!("m={m}")).collect();
        writeln!(out, "n,{}", header.join(",")).map_err(write_err)?;
        for n in 1..=n_max {
            let row: Vec<String> = grid.row(n - 1).iter().map(|&v| format_float(v)).collect();
            writeln!(out, "{n},{}", row.join(",")).map_err(write_err)?;
        }
    }
    out.flush().map_err(write_err)?;
    Ok(())
}

fn cmd_sim(config_path: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let config =
        load_config(config_path).map_err(|e| usage(format!("{}: {e}", config_path.display())))?;
    let result = run_scenario(&config).map_err(|e| violation(format!("{}: {e}", config.name)))?;

    let target = output.map(Path::to_path_buf).or_else(|| {
        config.output.as_ref().map(|p| match config_path.parent() {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.clone(),
        })
    });
    let mut out = open_output(target.as_deref())?;
    result
        .write_csv(&mut out)
        .and_then(|()| out.flush().map_err(Into::into))
        .map_err(|e| usage(format!("write failed: {e}")))?;

    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    eprintln!(
        "scenario {}: {} epochs, {} measurements",
        config.name,
        result.rows.len(),
        config.schedule.len()
    );
    for backend in &result.backends {
        match result.mean_nees(*backend) {
            Some(v) => eprintln!("  {} mean NEES {v:.4}", backend.label()),
            None => eprintln!("  {} mean NEES nan", backend.label()),
        }
    }
    if let Some((mean, cov)) = result.max_discrepancy() {
        eprintln!("  sc/dskf max mean diff {mean:.3e}, max cov diff {cov:.3e}");
        if !(mean <= 1e-9 && cov <= 1e-9) {
            return Err(violation("SC and DSKF estimates differ by more than 1e-9"));
        }
    }
    Ok(())
}
