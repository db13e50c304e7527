//! Randomized cross-checks of the two filters against each other and
//! against the oracles.

use crate::dskf::DelayedStateFilter;
use crate::error::{Error, Result};
use crate::matcore::{is_spd, matvec, vec_add, Matrix, OpCounter};
use crate::models::{simulate_step, Belief, DelayedMeasurement, EpochTransition, SystemModel};
use crate::oracle::{batch_solve, joint_condition, TrajectoryProblem};
use crate::runio::{gaussian_vector, random_matrix, random_spd, random_transition, RandomStream};
use crate::scfilter::CloningFilter;

/// Random trajectory with `steps` epochs after the initial one.
///
/// Every step has a fresh transition with condition number below 1e3,
/// invertible process noise and a scalar control. Delayed measurements
/// cover the trajectory with gaps of one to three epochs between anchor
/// and measurement, occasionally skipping an epoch before the next anchor.
pub fn random_problem(
    rng: &mut RandomStream,
    n: usize,
    m: usize,
    steps: usize,
) -> Result<TrajectoryProblem> {
    if n == 0 || m == 0 || steps == 0 {
        return Err(Error::InvalidProblem(format!(
            "need positive dimensions and steps (n = {n}, m = {m}, steps = {steps})"
        )));
    }
    let initial_belief = Belief::new(rng.standard_normals(n), random_spd(rng, n))?;
    let mut truth = vec_add(
        &initial_belief.mean,
        &gaussian_vector(rng, &initial_belief.cov)?,
        &mut OpCounter::new(),
    )?;
    let mut truths = vec![truth.clone()];
    let mut problem_steps = Vec::with_capacity(steps);
    for _ in 0..steps {
        let model = SystemModel::new(
            random_transition(rng, n),
            random_matrix(rng, n, 1),
            random_transition(rng, n),
            random_spd(rng, n),
        )?;
        let u = rng.standard_normals(1);
        truth = simulate_step(&truth, &model, &u, rng)?;
        truths.push(truth.clone());
        problem_steps.push((model, u));
    }

    let mut measurements = Vec::new();
    let mut anchor = 0;
    while anchor < steps {
        let k = (anchor + rng.range_inclusive(1, 3)).min(steps);
        let h_prior = random_matrix(rng, m, n);
        let h_current = random_matrix(rng, m, n);
        let r_cov = random_spd(rng, m);
        let mut ctr = OpCounter::new();
        let clean = vec_add(
            &matvec(&h_prior, &truths[anchor], &mut ctr)?,
            &matvec(&h_current, &truths[k], &mut ctr)?,
            &mut ctr,
        )?;
        let y = vec_add(&clean, &gaussian_vector(rng, &r_cov)?, &mut ctr)?;
        measurements.push((
            (anchor, k),
            DelayedMeasurement::new(h_prior, h_current, r_cov, y)?,
        ));
        anchor = k + rng.range_inclusive(0, 1);
    }
    Ok(TrajectoryProblem {
        initial_belief,
        steps: problem_steps,
        measurements,
    })
}

/// Worst discrepancies seen over one trajectory. Relative differences are
/// `‖a − b‖₂ / ‖b‖₂` for means and Frobenius-relative for covariances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialReport {
    pub updates: usize,
    /// SC (full and reduced) against the delayed-state filter.
    pub sc_dskf_mean: f64,
    pub sc_dskf_cov: f64,
    /// Either filter against exact conditioning, per update.
    pub joint_mean: f64,
    pub joint_cov: f64,
    /// Either filter against the batch solution at the final epoch.
    pub batch_mean: f64,
    pub batch_cov: f64,
    /// Every posterior covariance exactly symmetric and PSD within 1e-9.
    pub hygiene: bool,
}

impl TrialReport {
    pub fn filter_discrepancy(&self) -> f64 {
        self.sc_dskf_mean.max(self.sc_dskf_cov)
    }

    pub fn oracle_discrepancy(&self) -> f64 {
        self.joint_mean.max(self.joint_cov)
    }

    pub fn batch_discrepancy(&self) -> f64 {
        self.batch_mean.max(self.batch_cov)
    }
}

pub fn relative_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn relative_mat(a: &Matrix, b: &Matrix) -> f64 {
    let diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / b.norm_frobenius().max(f64::MIN_POSITIVE)
}

fn clean(belief: &Belief) -> bool {
    belief.cov.is_symmetric() && is_spd(&belief.cov, 1e-9)
}

fn compare(report: &mut (f64, f64), a: &Belief, b: &Belief) {
    report.0 = report.0.max(relative_vec(&a.mean, &b.mean));
    report.1 = report.1.max(relative_mat(&a.cov, &b.cov));
}

/// Runs the full and reduced cloning filters and the delayed-state filter
/// along `problem`, checking every delayed update against exact
/// conditioning and the final beliefs against [`batch_solve`].
pub fn run_trial(problem: &TrajectoryProblem) -> Result<TrialReport> {
    problem.validate()?;
    let mut prev_k = 0;
    for ((j, k), _) in &problem.measurements {
        if *j < prev_k {
            return Err(Error::InvalidProblem(format!(
                "measurement ({j}, {k}) anchors before the previous measurement epoch {prev_k}"
            )));
        }
        prev_k = *k;
    }

    let init = &problem.initial_belief;
    let mut sc = CloningFilter::new(init.clone());
    let mut sc_reduced = CloningFilter::new(init.clone()).reduced();
    let mut ds = DelayedStateFilter::new(init.clone());
    let mut anchor: Option<(Belief, EpochTransition)> = None;
    let mut report = TrialReport {
        hygiene: true,
        ..TrialReport::default()
    };
    let (mut filt, mut joint) = ((0.0, 0.0), (0.0, 0.0));
    let mut next = 0;
    let meas = &problem.measurements;

    let mut update_at = |epoch: usize,
                         sc: &mut CloningFilter,
                         sc_reduced: &mut CloningFilter,
                         ds: &mut DelayedStateFilter,
                         anchor: &mut Option<(Belief, EpochTransition)>,
                         next: &mut usize|
     -> Result<()> {
        while let Some(((j, k), m)) = meas.get(*next) {
            if *k != epoch {
                break;
            }
            let (prior, trans) = match anchor.take() {
                Some(a) if j < k => a,
                _ => (ds.current().clone(), EpochTransition::identity(init.dim())),
            };
            let exact = joint_condition(&prior, &trans, m)?;
            sc.update(m)?;
            sc_reduced.update(m)?;
            ds.update(m)?;
            let (a, b, c) = (sc.current(), sc_reduced.current(), ds.current().clone());
            compare(&mut filt, &a, &c);
            compare(&mut filt, &b, &c);
            for belief in [&a, &b, &c] {
                compare(&mut joint, belief, &exact);
                report.hygiene &= clean(belief);
            }
            report.updates += 1;
            *next += 1;
        }
        Ok(())
    };

    for (t, (model, u)) in problem.steps.iter().enumerate() {
        update_at(t, &mut sc, &mut sc_reduced, &mut ds, &mut anchor, &mut next)
            .map_err(|e| e.at_epoch(t))?;
        if meas.get(next).is_some_and(|((j, k), _)| *j == t && j < k) {
            sc.anchor();
            sc_reduced.anchor();
            ds.anchor();
            anchor = Some((ds.current().clone(), EpochTransition::identity(init.dim())));
        }
        sc.predict(model, u)?;
        sc_reduced.predict(model, u)?;
        ds.predict(model, u)?;
        if let Some((_, trans)) = anchor.as_mut() {
            *trans = trans.accumulate(model, u)?;
        }
    }
    let last = problem.final_epoch();
    update_at(
        last,
        &mut sc,
        &mut sc_reduced,
        &mut ds,
        &mut anchor,
        &mut next,
    )
    .map_err(|e| e.at_epoch(last))?;

    let batch = batch_solve(problem)?;
    let mut batch_diff = (0.0, 0.0);
    for belief in [&sc.current(), &sc_reduced.current(), ds.current()] {
        compare(&mut batch_diff, belief, &batch);
    }
    report.sc_dskf_mean = filt.0;
    report.sc_dskf_cov = filt.1;
    report.joint_mean = joint.0;
    report.joint_cov = joint.1;
    report.batch_mean = batch_diff.0;
    report.batch_cov = batch_diff.1;
    Ok(report)
}
