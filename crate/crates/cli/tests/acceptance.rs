//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances here are fixed and must not be loosened.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dsfilter::complexity::{
    flops_model, flops_table, measured_comparison, memory_table, reduction_grid, Method, Metric,
    Polynomial, Rational,
};
use dsfilter::dskf::{dskf_gain, dskf_terms, dskf_update};
use dsfilter::equivalence::{random_problem, run_trial, TrialReport};
use dsfilter::kf::kf_update;
use dsfilter::matcore::{is_spd, Matrix, OpCounter};
use dsfilter::models::{
    odometry_measurement, Belief, DelayedMeasurement, EpochTransition, SystemModel,
};
use dsfilter::oracle::joint_condition;
use dsfilter::runio::{
    load_config, monte_carlo_nees, random_matrix, random_spd, random_transition, Backend,
    RandomStream,
};
use dsfilter::scfilter::CloningFilter;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEED: u64 = 0x5eed;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn examples_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples")
}

/// Shared randomized trial set for criteria 1, 2 and 9.
struct TrialSet {
    reports: Vec<TrialReport>,
    elapsed: Duration,
    error: Option<String>,
}

fn trial_set() -> TrialSet {
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut error = None;
    'outer: for n in 1..=6 {
        for m in 1..=4 {
            for trial in 0..9u64 {
                let mut rng = RandomStream::with_stream(SEED, ((n * 8 + m) as u64) << 16 | trial);
                let steps = rng.range_inclusive(2, 20);
                match random_problem(&mut rng, n, m, steps).and_then(|p| run_trial(&p)) {
                    Ok(report) => reports.push(report),
                    Err(e) => {
                        error = Some(format!("n={n} m={m} trial={trial}: {e}"));
                        break 'outer;
                    }
                }
            }
        }
    }
    TrialSet {
        reports,
        elapsed: start.elapsed(),
        error,
    }
}

fn worst(set: &TrialSet, f: impl Fn(&TrialReport) -> f64) -> f64 {
    set.reports.iter().map(f).fold(0.0, f64::max)
}

fn criterion_1(set: &TrialSet) -> Outcome {
    if let Some(e) = &set.error {
        return outcome(false, e.clone());
    }
    let mean = worst(set, |r| r.sc_dskf_mean);
    let cov = worst(set, |r| r.sc_dskf_cov);
    let updates: usize = set.reports.iter().map(|r| r.updates).sum();
    let pass = set.reports.len() >= 200
        && mean <= 1e-9
        && cov <= 1e-9
        && set.elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} trials, {updates} delayed updates, max mean rel {mean:.2e}, max cov rel {cov:.2e}, {:.2?}",
            set.reports.len(),
            set.elapsed
        ),
    )
}

fn criterion_2(set: &TrialSet) -> Outcome {
    if let Some(e) = &set.error {
        return outcome(false, e.clone());
    }
    let joint = worst(set, TrialReport::oracle_discrepancy);
    let batch = worst(set, TrialReport::batch_discrepancy);
    outcome(
        joint <= 1e-9 && batch <= 1e-8,
        format!("joint-conditioning max rel {joint:.2e}, batch max rel {batch:.2e}"),
    )
}

fn criterion_3(hygiene: &mut bool) -> Outcome {
    let mut rng = RandomStream::with_stream(SEED, 3);
    let mut max_diff: f64 = 0.0;
    for i in 0..100 {
        let n = rng.range_inclusive(1, 6);
        let m = rng.range_inclusive(1, 4);
        let mut run = || -> dsfilter::Result<f64> {
            let pred = Belief::new(rng.standard_normals(n), random_spd(&mut rng, n))?;
            let trans = EpochTransition::from_parts(
                random_transition(&mut rng, n),
                rng.standard_normals(n),
                random_spd(&mut rng, n),
            )?;
            let h = random_matrix(&mut rng, m, n);
            let r = random_spd(&mut rng, m);
            let y = rng.standard_normals(m);
            let meas =
                DelayedMeasurement::new(Matrix::zeros(m, n), h.clone(), r.clone(), y.clone())?;
            let ds = dskf_update(&pred, &trans, &meas, &mut OpCounter::new())?;
            let kf = kf_update(&pred, &h, &r, &y, &mut OpCounter::new())?;
            *hygiene &= ds.cov.is_symmetric() && is_spd(&ds.cov, 1e-9);
            let mean = ds
                .mean
                .iter()
                .zip(&kf.mean)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(mean.max(ds.cov.max_abs_diff(&kf.cov).unwrap_or(f64::INFINITY)))
        };
        match run() {
            Ok(d) => max_diff = max_diff.max(d),
            Err(e) => return outcome(false, format!("instance {i}: {e}")),
        }
    }
    outcome(
        max_diff <= 1e-12,
        format!("100 instances, max componentwise diff {max_diff:.2e}"),
    )
}

fn criterion_4(hygiene: &mut bool) -> Outcome {
    let mut run = || -> dsfilter::Result<[(f64, f64); 3]> {
        let one = Matrix::identity(1);
        let prior = Belief::new(vec![0.0], one.clone())?;
        let walk = SystemModel::new(one.clone(), Matrix::zeros(1, 1), one.clone(), one.clone())?;
        let y = 0.4;
        let meas = odometry_measurement(&[y], one.clone(), 1, 0..1)?;
        let trans = EpochTransition::identity(1).accumulate(&walk, &[0.0])?;

        let mut sc = CloningFilter::new(prior.clone());
        sc.anchor();
        sc.predict(&walk, &[0.0])?;
        sc.update(&meas)?;
        let sc_post = sc.current();

        let pred = Belief::new(vec![0.0], Matrix::diag(&[2.0])?)?;
        let gain = dskf_gain(&pred, &dskf_terms(&trans, &meas)?, &mut OpCounter::new())?;
        let ds_post = dskf_update(&pred, &trans, &meas, &mut OpCounter::new())?;

        let exact = joint_condition(&prior, &trans, &meas)?;
        for b in [&sc_post, &ds_post, &exact] {
            *hygiene &= b.cov.is_symmetric() && is_spd(&b.cov, 1e-9);
        }
        // Predicted innovation is y − (x̂_k − x̂_j) = y, so the gain is x⁺ / y.
        Ok([
            (sc_post.mean[0] / y, sc_post.cov[(0, 0)]),
            (gain[(0, 0)], ds_post.cov[(0, 0)]),
            (exact.mean[0] / y, exact.cov[(0, 0)]),
        ])
    };
    match run() {
        Ok(results) => {
            let pass = results
                .iter()
                .all(|(g, v)| (g - 0.5).abs() <= 1e-12 && (v - 1.5).abs() <= 1e-12);
            outcome(
                pass,
                format!(
                    "(gain, variance) sc {:?} dskf {:?} oracle {:?}",
                    results[0], results[1], results[2]
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_5() -> Outcome {
    // Rows in table order: gain mults, state mults, cov mults, gain adds,
    // state adds, cov adds, total.
    let expected = [
        (
            Method::StochasticCloning,
            [
                "0.33m^3 + 4mn^2 + 4m^2n + m^2 - 0.33m",
                "4mn",
                "16n^3 + 8mn^2 + 2m^2n",
                "0.33m^3 + 4mn^2 + 4m^2n + 0.5m^2 - 4mn - 0.83m",
                "4mn",
                "16n^3 + 8mn^2 + 2m^2n - 12n^2 - 2mn + 2n",
                "32n^3 + 0.67m^3 + 24mn^2 + 12m^2n - 12n^2 + 1.5m^2 + 2mn + 2n - 1.17m",
            ],
        ),
        (
            Method::DelayedState,
            [
                "0.33n^3 + 0.33m^3 + 3mn^2 + 4m^2n + n^2 + m^2 - 0.33m - 0.33n",
                "2mn",
                "3n^3 + 3mn^2 + m^2n",
                "0.33n^3 + 0.33m^3 + 3mn^2 + 4m^2n + 0.5n^2 + 1.5m^2 - 2mn - 0.83m - 0.83n",
                "2mn",
                "3n^3 + 3mn^2 + m^2n - 3n^2 - mn + n",
                "6.67n^3 + 0.67m^3 + 12mn^2 + 10m^2n - 1.5n^2 + 2.5m^2 + mn - 1.17m - 0.17n",
            ],
        ),
    ];
    let mut problems = Vec::new();
    for (method, rows) in expected {
        let table = flops_table(method);
        let [a, b, c, d, e, f] = table.components();
        for (got, want) in [a, b, c, d, e, f, &table.total].iter().zip(rows) {
            if got.to_table_string() != want {
                problems.push(format!(
                    "{}: {:?} != {want:?}",
                    method.label(),
                    got.to_table_string()
                ));
            }
        }
        if Polynomial::sum(table.components()).coefficients() != table.total.coefficients() {
            problems.push(format!("{} flops rows do not sum to total", method.label()));
        }
        let mem = memory_table(method);
        if Polynomial::sum(mem.components()).coefficients() != mem.total.coefficients() {
            problems.push(format!(
                "{} memory rows do not sum to total",
                method.label()
            ));
        }
    }
    let sc = flops_model(Method::StochasticCloning, 3, 3).map(|c| c.total_flops);
    let ds = flops_model(Method::DelayedState, 3, 3).map(|c| c.total_flops);
    if sc != Ok(Rational::from_integer(1780)) || ds != Ok(Rational::from_integer(806)) {
        problems.push(format!("totals at (3,3): {sc:?} {ds:?}"));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "14 rows match, rows sum to totals, SC(3,3) = 1780, DSKF(3,3) = 806".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let grid = reduction_grid(Metric::Flops, 100, 100);
    let elapsed = start.elapsed();
    match grid {
        Ok(g) => {
            let min = g.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            outcome(
                min > 0.0 && elapsed < Duration::from_secs(1),
                format!("100x100 grid, min reduction {min:.3}%, {elapsed:.2?}"),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_7() -> Outcome {
    let grid = match reduction_grid(Metric::Memory, 100, 100) {
        Ok(g) => g,
        Err(e) => return outcome(false, e.to_string()),
    };
    let at_10_2 = grid[(9, 1)];
    let at_2_10 = grid[(1, 9)];
    // Along each column the sign may only switch once, from - to +.
    let monotone = (0..100).all(|m| {
        let signs: Vec<bool> = (0..100).map(|n| grid[(n, m)] > 0.0).collect();
        signs.windows(2).all(|w| w[0] <= w[1])
    });
    let pass = at_10_2 > 0.0
        && (at_10_2 - 23.2).abs() < 0.05
        && at_2_10 < 0.0
        && (at_2_10 + 43.7).abs() < 0.05
        && monotone;
    outcome(
        pass,
        format!("(10,2) {at_10_2:+.2}%, (2,10) {at_2_10:+.2}%, single -/+ switch per column: {monotone}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = RandomStream::with_stream(SEED, 8);
    let mut cells = Vec::new();
    let mut pass = true;
    for n in [2, 4, 8, 16] {
        for m in [1, 2, 4] {
            match measured_comparison(n, m, 2, &mut rng) {
                Ok(c) => {
                    let ok =
                        c.dskf.multiplications() < c.sc_full.multiplications() && c.deterministic;
                    pass &= ok;
                    if !ok || (n, m) == (16, 4) {
                        cells.push(format!(
                            "({n},{m}) dskf {} vs sc {} mults",
                            c.dskf.multiplications(),
                            c.sc_full.multiplications()
                        ));
                    }
                }
                Err(e) => return outcome(false, format!("({n},{m}): {e}")),
            }
        }
    }
    outcome(pass, format!("12 cells, {}", cells.join(", ")))
}

fn criterion_9(set: &TrialSet, hygiene: bool) -> Outcome {
    let trials_clean = set.error.is_none() && set.reports.iter().all(|r| r.hygiene);
    let config = match load_config(examples_dir().join("odometry_1d.toml")) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let runs = 100;
    let dof = (runs * config.state_dim()) as f64;
    let chi = ChiSquared::new(dof).expect("positive dof");
    let (lo, hi) = (
        chi.inverse_cdf(0.005) / runs as f64,
        chi.inverse_cdf(0.995) / runs as f64,
    );
    let mut details = vec![format!(
        "covariances symmetric and PSD: {}",
        trials_clean && hygiene
    )];
    let mut pass = trials_clean && hygiene;
    for backend in [Backend::Sc, Backend::Dskf] {
        match monte_carlo_nees(&config, backend, runs) {
            Ok(series) => {
                let inside = series
                    .average
                    .iter()
                    .filter(|v| (lo..=hi).contains(*v))
                    .count();
                let last = *series.average.last().expect("epochs");
                let frac = inside as f64 / series.average.len() as f64;
                pass &= (lo..=hi).contains(&last) && frac >= 0.95;
                details.push(format!(
                    "{} final NEES {last:.3}, {inside}/{} epochs in [{lo:.3}, {hi:.3}]",
                    backend.label(),
                    series.average.len()
                ));
            }
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    outcome(pass, details.join("; "))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dsfilter"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!("{args:?} exited with {}", out.status))
    }
}

fn criterion_10() -> Outcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut checked = Vec::new();
    for name in ["odometry_1d", "pv_2d"] {
        let config = examples_dir().join(format!("{name}.toml"));
        let mut outputs = Vec::new();
        for run in 0..2 {
            let path = dir.path().join(format!("{name}_{run}.csv"));
            let args = [
                "sim",
                "--config",
                config.to_str().unwrap(),
                "--output",
                path.to_str().unwrap(),
            ];
            if let Err(e) = run_cli(&args) {
                return outcome(false, e);
            }
            outputs.push(std::fs::read(&path).unwrap_or_default());
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return outcome(false, format!("sim {name} output differs between runs"));
        }
        checked.push(format!("sim {name}"));
    }
    for args in [
        &[
            "bench", "--metric", "memory", "--n-max", "12", "--m-max", "12",
        ][..],
        &[
            "bench",
            "--metric",
            "flops",
            "--n-max",
            "4",
            "--m-max",
            "3",
            "--measured",
        ][..],
        &[
            "equiv", "--n", "1..2", "--m", "1..2", "--steps", "6", "--trials", "3", "--seed", "3",
        ][..],
    ] {
        let a = run_cli(args);
        let b = run_cli(args);
        match (a, b) {
            (Ok(a), Ok(b)) if !a.is_empty() && a == b => checked.push(args[..3].join(" ")),
            (Err(e), _) | (_, Err(e)) => return outcome(false, e),
            _ => return outcome(false, format!("{args:?} output differs between runs")),
        }
    }
    outcome(
        true,
        format!("byte-identical reruns: {}", checked.join(", ")),
    )
}

fn main() -> ExitCode {
    let set = trial_set();
    let mut hygiene = true;
    let results = [
        ("1 equivalence", criterion_1(&set)),
        ("2 oracle agreement", criterion_2(&set)),
        ("3 reduction to KF", criterion_3(&mut hygiene)),
        ("4 scalar golden case", criterion_4(&mut hygiene)),
        ("5 arithmetic cost table", criterion_5()),
        ("6 flops reduction grid", criterion_6()),
        ("7 memory reduction grid", criterion_7()),
        ("8 measured counts", criterion_8()),
        ("9 numerical hygiene", criterion_9(&set, hygiene)),
        ("10 determinism", criterion_10()),
    ];
    let mut failed = 0;
    for (name, result) in &results {
        println!(
            "{} criterion {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
        failed += usize::from(!result.pass);
    }
    println!(
        "acceptance: {}/{} passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
