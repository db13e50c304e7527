//! Simulated scenario runs and their CSV encoding.

use std::io::Write;

use super::config::{Backend, ScenarioConfig};
use super::rng::{sample_noise, RandomStream};
use crate::dskf::{DelayedStateFilter, CONDITION_WARN};
use crate::error::{Error, Result};
use crate::kf::{kf_predict, kf_update};
use crate::matcore::{gauss_solve, matvec, vec_add, vec_sub, Matrix, OpCounter};
use crate::models::{simulate_step, Belief, DelayedMeasurement};
use crate::scfilter::CloningFilter;

/// Per-epoch output of one backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendEstimate {
    pub mean: Vec<f64>,
    pub cov_trace: f64,
    /// NaN when the covariance is singular.
    pub nees: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub truth: Vec<f64>,
    pub estimates: Vec<BackendEstimate>,
    /// Largest absolute SC/DSKF mean difference; NaN unless both ran.
    pub sc_dskf_mean_maxdiff: f64,
    pub sc_dskf_cov_maxdiff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub backends: Vec<Backend>,
    pub state_dim: usize,
    pub rows: Vec<EpochRow>,
    pub warnings: Vec<String>,
}

impl ScenarioResult {
    pub fn header(&self) -> Vec<String> {
        let mut header = vec!["epoch".to_string()];
        header.extend((0..self.state_dim).map(|i| format!("truth_{i}")));
        for backend in &self.backends {
            let label = backend.label();
            header.extend((0..self.state_dim).map(|i| format!("{label}_mean_{i}")));
            header.push(format!("{label}_covtrace"));
            header.push(format!("{label}_nees"));
        }
        header.push("sc_dskf_mean_maxdiff".to_string());
        header.push("sc_dskf_cov_maxdiff".to_string());
        header
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.header())?;
        for row in &self.rows {
            let mut record = vec![row.epoch.to_string()];
            record.extend(row.truth.iter().map(|&v| format_float(v)));
            for est in &row.estimates {
                record.extend(est.mean.iter().map(|&v| format_float(v)));
                record.push(format_float(est.cov_trace));
                record.push(format_float(est.nees));
            }
            record.push(format_float(row.sc_dskf_mean_maxdiff));
            record.push(format_float(row.sc_dskf_cov_maxdiff));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }

    /// Largest SC/DSKF mean and covariance differences over all epochs,
    /// `None` unless both backends ran.
    pub fn max_discrepancy(&self) -> Option<(f64, f64)> {
        if !(self.backends.contains(&Backend::Sc) && self.backends.contains(&Backend::Dskf)) {
            return None;
        }
        Some(self.rows.iter().fold((0.0, 0.0), |(m, c), row| {
            (
                f64::max(m, row.sc_dskf_mean_maxdiff),
                f64::max(c, row.sc_dskf_cov_maxdiff),
            )
        }))
    }

    /// Average of the finite NEES values of `backend`.
    pub fn mean_nees(&self, backend: Backend) -> Option<f64> {
        let idx = self.backends.iter().position(|b| *b == backend)?;
        let values: Vec<f64> = self
            .rows
            .iter()
            .map(|row| row.estimates[idx].nees)
            .filter(|v| v.is_finite())
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Seventeen significant digits; `nan`, `inf` and `-inf` for non-finite values.
pub fn format_float(value: f64) -> String {
    if value.is_nan() {
        "nan".to_string()
    } else if value.is_infinite() {
        if value > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{value:.16e}")
    }
}

enum Runner {
    // Treats the delayed term as known: subtracts `H_prior x̂_j` from `y`
    // and ignores the correlation with the current estimate.
    Naive {
        belief: Belief,
        anchor_mean: Option<Vec<f64>>,
    },
    Cloning(CloningFilter),
    Delayed(DelayedStateFilter),
}

impl Runner {
    fn new(backend: Backend, initial: &Belief) -> Self {
        match backend {
            Backend::Kf => Runner::Naive {
                belief: initial.clone(),
                anchor_mean: None,
            },
            Backend::Sc => Runner::Cloning(CloningFilter::new(initial.clone())),
            Backend::Dskf => Runner::Delayed(DelayedStateFilter::new(initial.clone())),
            Backend::All => unreachable!("expanded before use"),
        }
    }

    fn anchor(&mut self) {
        match self {
            Runner::Naive {
                belief,
                anchor_mean,
            } => *anchor_mean = Some(belief.mean.clone()),
            Runner::Cloning(f) => f.anchor(),
            Runner::Delayed(f) => f.anchor(),
        }
    }

    fn predict(&mut self, config: &ScenarioConfig) -> Result<()> {
        match self {
            Runner::Naive { belief, .. } => {
                *belief = kf_predict(belief, &config.model, &config.control)?
            }
            Runner::Cloning(f) => f.predict(&config.model, &config.control)?,
            Runner::Delayed(f) => f.predict(&config.model, &config.control)?,
        }
        Ok(())
    }

    fn update(&mut self, meas: &DelayedMeasurement) -> Result<()> {
        match self {
            Runner::Naive {
                belief,
                anchor_mean,
            } => {
                let anchor = anchor_mean.take().ok_or(Error::MissingAnchor)?;
                let mut ctr = OpCounter::new();
                let known = matvec(meas.h_prior(), &anchor, &mut ctr)?;
                let y = vec_sub(meas.y(), &known, &mut ctr)?;
                *belief = kf_update(belief, meas.h_current(), meas.r_cov(), &y, &mut ctr)?;
            }
            Runner::Cloning(f) => f.update(meas)?,
            Runner::Delayed(f) => f.update(meas)?,
        }
        Ok(())
    }

    fn current(&self) -> Belief {
        match self {
            Runner::Naive { belief, .. } => belief.clone(),
            Runner::Cloning(f) => f.current(),
            Runner::Delayed(f) => f.current().clone(),
        }
    }
}

fn nees(truth: &[f64], belief: &Belief) -> f64 {
    let mut ctr = OpCounter::new();
    let err = vec_sub(truth, &belief.mean, &mut ctr).expect("matching dimensions");
    match gauss_solve(
        &belief.cov,
        &Matrix::column(&err).expect("finite"),
        &mut ctr,
    ) {
        Ok(w) => err.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum(),
        Err(_) => f64::NAN,
    }
}

fn estimate(truth: &[f64], belief: &Belief) -> BackendEstimate {
    BackendEstimate {
        mean: belief.mean.clone(),
        cov_trace: belief.cov.trace(),
        nees: nees(truth, belief),
    }
}

/// Simulates the truth, draws the scheduled measurements and runs the
/// configured backends.
///
/// Streams `3r`, `3r + 1` and `3r + 2` of the config seed drive the initial
/// state, process noise and measurement noise of repetition `r`;
/// [`run_scenario`] is repetition 0.
pub fn run_repetition(config: &ScenarioConfig, repetition: u64) -> Result<ScenarioResult> {
    let n = config.state_dim();
    let mut init_rng = RandomStream::with_stream(config.seed, 3 * repetition);
    let mut process_rng = RandomStream::with_stream(config.seed, 3 * repetition + 1);
    let mut meas_rng = RandomStream::with_stream(config.seed, 3 * repetition + 2);

    let mut truth = config.initial.mean.clone();
    if !config.exact_init {
        let offset = sample_noise(&mut init_rng, &config.initial.cov)?;
        truth = vec_add(&truth, &offset, &mut OpCounter::new())?;
    }
    let mut truths = vec![truth.clone()];

    let backends = config.backend.expand();
    let mut runners: Vec<Runner> = backends
        .iter()
        .map(|b| Runner::new(*b, &config.initial))
        .collect();
    let sc_idx = backends.iter().position(|b| *b == Backend::Sc);
    let dskf_idx = backends.iter().position(|b| *b == Backend::Dskf);

    let make_row = |epoch: usize, truth: &[f64], runners: &[Runner]| {
        let beliefs: Vec<Belief> = runners.iter().map(Runner::current).collect();
        let (mean_diff, cov_diff) = match (sc_idx, dskf_idx) {
            (Some(s), Some(d)) => (
                beliefs[s]
                    .mean
                    .iter()
                    .zip(&beliefs[d].mean)
                    .fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs())),
                beliefs[s]
                    .cov
                    .max_abs_diff(&beliefs[d].cov)
                    .unwrap_or(f64::NAN),
            ),
            _ => (f64::NAN, f64::NAN),
        };
        EpochRow {
            epoch,
            truth: truth.to_vec(),
            estimates: beliefs.iter().map(|b| estimate(truth, b)).collect(),
            sc_dskf_mean_maxdiff: mean_diff,
            sc_dskf_cov_maxdiff: cov_diff,
        }
    };

    let mut rows = vec![make_row(0, &truth, &runners)];
    let mut next = 0;
    for t in 0..config.steps {
        let mut step = |runners: &mut Vec<Runner>, truths: &mut Vec<Vec<f64>>| -> Result<()> {
            if config.schedule.get(next).is_some_and(|&(j, _)| j == t) {
                runners.iter_mut().for_each(Runner::anchor);
            }
            for runner in runners.iter_mut() {
                runner.predict(config)?;
            }
            let current = simulate_step(
                truths.last().expect("non-empty"),
                &config.model,
                &config.control,
                &mut process_rng,
            )?;
            truths.push(current);
            Ok(())
        };
        step(&mut runners, &mut truths).map_err(|e| e.at_epoch(t + 1))?;
        let epoch = t + 1;
        truth = truths[epoch].clone();

        if let Some(&(j, k)) = config.schedule.get(next) {
            if k == epoch {
                let meas = scheduled_measurement(config, &truths[j], &truth, &mut meas_rng)
                    .map_err(|e| e.at_epoch(epoch))?;
                for runner in runners.iter_mut() {
                    runner.update(&meas).map_err(|e| e.at_epoch(epoch))?;
                }
                next += 1;
            }
        }
        rows.push(make_row(epoch, &truth, &runners));
    }

    let mut warnings = Vec::new();
    for runner in &runners {
        if let Runner::Delayed(f) = runner {
            if f.worst_condition() > CONDITION_WARN {
                warnings.push(format!(
                    "accumulated transition condition estimate {:.3e} exceeds {CONDITION_WARN:e}",
                    f.worst_condition()
                ));
            }
        }
    }
    Ok(ScenarioResult {
        backends,
        state_dim: n,
        rows,
        warnings,
    })
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    run_repetition(config, 0)
}

fn scheduled_measurement(
    config: &ScenarioConfig,
    truth_j: &[f64],
    truth_k: &[f64],
    rng: &mut RandomStream,
) -> Result<DelayedMeasurement> {
    let mut ctr = OpCounter::new();
    let clean = vec_add(
        &matvec(&config.h_prior, truth_j, &mut ctr)?,
        &matvec(&config.h_current, truth_k, &mut ctr)?,
        &mut ctr,
    )?;
    let y = vec_add(&clean, &sample_noise(rng, &config.r_cov)?, &mut ctr)?;
    DelayedMeasurement::new(
        config.h_prior.clone(),
        config.h_current.clone(),
        config.r_cov.clone(),
        y,
    )
}

/// Per-epoch NEES averaged over Monte-Carlo repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct NeesSeries {
    pub runs: usize,
    pub state_dim: usize,
    /// Index is the epoch; NaN where any repetition had a singular covariance.
    pub average: Vec<f64>,
}

/// Runs repetitions `1..=runs` of the scenario and averages the NEES of
/// `backend` at every epoch.
pub fn monte_carlo_nees(
    config: &ScenarioConfig,
    backend: Backend,
    runs: usize,
) -> Result<NeesSeries> {
    let mut cfg = config.clone();
    cfg.backend = backend;
    let mut sums = vec![0.0; config.steps + 1];
    for rep in 1..=runs as u64 {
        let result = run_repetition(&cfg, rep)?;
        for (sum, row) in sums.iter_mut().zip(&result.rows) {
            *sum += row.estimates[0].nees;
        }
    }
    Ok(NeesSeries {
        runs,
        state_dim: config.state_dim(),
        average: sums.into_iter().map(|s| s / runs as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runio::parse_config;

    fn config(extra: &str) -> ScenarioConfig {
        parse_config(&format!(
            r#"
seed = 11
steps = 12
{extra}
[model]
preset = "random_walk_1d"
[initial]
mean = [0.0]
cov = [[1.0]]
[measurement]
r = [[0.5]]
schedule = [[0, 3], [3, 5], [6, 10]]
"#
        ))
        .unwrap()
    }

    #[test]
    fn all_backends_agree() {
        let result = run_scenario(&config("")).unwrap();
        assert_eq!(result.rows.len(), 13);
        let (mean, cov) = result.max_discrepancy().unwrap();
        assert!(mean <= 1e-9 && cov <= 1e-9, "{mean} {cov}");
        assert!(result.warnings.is_empty());
    }

    #[test]
    fn header_layout() {
        let result = run_scenario(&config("backend = \"dskf\"")).unwrap();
        assert_eq!(
            result.header(),
            [
                "epoch",
                "truth_0",
                "dskf_mean_0",
                "dskf_covtrace",
                "dskf_nees",
                "sc_dskf_mean_maxdiff",
                "sc_dskf_cov_maxdiff"
            ]
        );
        assert!(result.max_discrepancy().is_none());
        assert!(result.rows.iter().all(|r| r.sc_dskf_mean_maxdiff.is_nan()));
    }

    #[test]
    fn deterministic_csv() {
        let cfg = config("");
        let a = run_scenario(&cfg).unwrap().to_csv_string().unwrap();
        let b = run_scenario(&cfg).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert!(a.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02e23] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_float(f64::NAN), "nan");
        assert_eq!(format_float(f64::NEG_INFINITY), "-inf");
    }
}
