//! Independent ground truth for the filters.
//!
//! Only `matcore` and the model types are shared with the filter modules;
//! none of the update code is reused here.

use crate::error::{Error, Result};
use crate::matcore::{
    add, gauss_solve, matmul, matvec, sub, symmetrize, vec_add, vec_sub, MatError, Matrix,
    OpCounter,
};
use crate::models::{expect_dim, Belief, DelayedMeasurement, EpochTransition, SystemModel};

/// Exact Gaussian update of the current state.
///
/// Builds the joint distribution of `(x_j, x_k)` implied by `prior_j` and the
/// transition, conditions it on `y = H_prior x_j + H_current x_k + v`, and
/// returns the marginal of `x_k`.
pub fn joint_condition(
    prior_j: &Belief,
    trans: &EpochTransition,
    meas: &DelayedMeasurement,
) -> Result<Belief> {
    let n = prior_j.dim();
    expect_dim("transition state dimension", n, trans.state_dim())?;
    expect_dim("measurement state dimension", n, meas.state_dim())?;
    let mut ctr = OpCounter::new();
    let phi = trans.phi_accum();
    let p_j = &prior_j.cov;

    let mean_k = vec_add(
        &matvec(phi, &prior_j.mean, &mut ctr)?,
        trans.drift_accum(),
        &mut ctr,
    )?;
    let cross = matmul(p_j, &phi.transpose(), &mut ctr)?; // cov(x_j, x_k)
    let cov_k = add(&matmul(phi, &cross, &mut ctr)?, trans.s_accum(), &mut ctr)?;

    let mut joint = Matrix::zeros(2 * n, 2 * n);
    joint.set_block(0, 0, p_j);
    joint.set_block(0, n, &cross);
    joint.set_block(n, 0, &cross.transpose());
    joint.set_block(n, n, &cov_k);
    let mut joint_mean = prior_j.mean.clone();
    joint_mean.extend_from_slice(&mean_k);

    let h = meas.stacked_h();
    // cov(x_k, y) = [cov(x_k, x_j)  cov(x_k, x_k)] Hᵀ
    let cov_ky = matmul(&joint.block(n, 0, n, 2 * n), &h.transpose(), &mut ctr)?;
    let cov_yy = add(
        &matmul(&matmul(&h, &joint, &mut ctr)?, &h.transpose(), &mut ctr)?,
        meas.r_cov(),
        &mut ctr,
    )?;
    let cov_yy = symmetrize(&cov_yy)?;
    let residual = vec_sub(meas.y(), &matvec(&h, &joint_mean, &mut ctr)?, &mut ctr)?;

    // Σ_yy⁻¹ [residual | Σ_yk]
    let mut rhs = Matrix::zeros(meas.meas_dim(), 1 + n);
    rhs.set_block(0, 0, &Matrix::column(&residual)?);
    rhs.set_block(0, 1, &cov_ky.transpose());
    let solved = gauss_solve(&cov_yy, &rhs, &mut ctr).map_err(|err| match err {
        MatError::Singular { .. } => Error::InnovationCovariance(err),
        other => other.into(),
    })?;
    let weights = solved.block(0, 0, meas.meas_dim(), 1).into_vec();
    let mean = vec_add(&mean_k, &matvec(&cov_ky, &weights, &mut ctr)?, &mut ctr)?;
    let reduction = matmul(&cov_ky, &solved.block(0, 1, meas.meas_dim(), n), &mut ctr)?;
    let cov = symmetrize(&sub(&cov_k, &reduction, &mut ctr)?)?;
    Ok(Belief { mean, cov })
}

/// A linear-Gaussian trajectory: epoch 0 carries `initial_belief`; step `i`
/// moves epoch `i` to `i + 1`. A measurement keyed `(j, k)` observes
/// `H_prior x_j + H_current x_k`; `j == k` means a current-state measurement.
#[derive(Debug, Clone)]
pub struct TrajectoryProblem {
    pub initial_belief: Belief,
    pub steps: Vec<(SystemModel, Vec<f64>)>,
    pub measurements: Vec<((usize, usize), DelayedMeasurement)>,
}

impl TrajectoryProblem {
    pub fn final_epoch(&self) -> usize {
        self.steps.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.initial_belief.dim();
        for (model, u) in &self.steps {
            expect_dim("step state dimension", n, model.state_dim())?;
            expect_dim("step control length", model.control_dim(), u.len())?;
        }
        let mut last_k = 0;
        for (idx, ((j, k), meas)) in self.measurements.iter().enumerate() {
            expect_dim("measurement state dimension", n, meas.state_dim())?;
            if j > k || *k > self.final_epoch() {
                return Err(Error::InvalidProblem(format!(
                    "measurement {idx}: epochs ({j}, {k}) invalid for {} steps",
                    self.final_epoch()
                )));
            }
            if idx > 0 && *k < last_k {
                return Err(Error::InvalidProblem(format!(
                    "measurement {idx}: epochs must be non-decreasing"
                )));
            }
            last_k = *k;
        }
        Ok(())
    }
}

/// Full-information MAP estimate over all epochs, returning the final-epoch
/// marginal.
///
/// Prior, dynamics and measurement residuals are whitened by their
/// covariances and accumulated into the normal equations `Λ z = η`, which
/// are solved by Gaussian elimination. The initial covariance and every step
/// noise `G Q Gᵀ` must be invertible.
pub fn batch_solve(problem: &TrajectoryProblem) -> Result<Belief> {
    problem.validate()?;
    let n = problem.initial_belief.dim();
    let epochs = problem.final_epoch() + 1;
    let dim = n * epochs;
    let mut info = Matrix::zeros(dim, dim);
    let mut eta = vec![0.0; dim];
    let mut ctr = OpCounter::new();

    let accumulate = |info: &mut Matrix, row_block: usize, col_block: usize, block: &Matrix| {
        for r in 0..n {
            for c in 0..n {
                let (rr, cc) = (row_block * n + r, col_block * n + c);
                info.set(rr, cc, info[(rr, cc)] + block[(r, c)]);
            }
        }
    };
    let add_eta = |eta: &mut [f64], block: usize, v: &[f64]| {
        for (i, x) in v.iter().enumerate() {
            eta[block * n + i] += x;
        }
    };

    let prior_w = whitening(&problem.initial_belief.cov, &mut ctr)?;
    accumulate(&mut info, 0, 0, &prior_w);
    add_eta(
        &mut eta,
        0,
        &matvec(&prior_w, &problem.initial_belief.mean, &mut ctr)?,
    );

    for (i, (model, u)) in problem.steps.iter().enumerate() {
        // residual: x_{i+1} − Φ x_i − B u, coefficient [−Φ  I]
        let w = whitening(&model.process_noise()?, &mut ctr)?;
        let phi = model.phi();
        let bu = model.control_effect(u)?;
        let phi_t_w = matmul(&phi.transpose(), &w, &mut ctr)?;
        accumulate(&mut info, i, i, &matmul(&phi_t_w, phi, &mut ctr)?);
        let off = phi_t_w.scale(-1.0, &mut ctr)?;
        accumulate(&mut info, i, i + 1, &off);
        accumulate(&mut info, i + 1, i, &off.transpose());
        accumulate(&mut info, i + 1, i + 1, &w);
        let w_bu = matvec(&w, &bu, &mut ctr)?;
        add_eta(&mut eta, i, &matvec(&off, &bu, &mut ctr)?);
        add_eta(&mut eta, i + 1, &w_bu);
    }

    for ((j, k), meas) in &problem.measurements {
        let w = whitening(meas.r_cov(), &mut ctr)?;
        let coeffs = [(*j, meas.h_prior()), (*k, meas.h_current())];
        for (a, ha) in coeffs {
            let ha_t_w = matmul(&ha.transpose(), &w, &mut ctr)?;
            for (b, hb) in coeffs {
                accumulate(&mut info, a, b, &matmul(&ha_t_w, hb, &mut ctr)?);
            }
            add_eta(&mut eta, a, &matvec(&ha_t_w, meas.y(), &mut ctr)?);
        }
    }

    let info = symmetrize(&info)?;
    let last = epochs - 1;
    let mut rhs = Matrix::zeros(dim, 1 + n);
    rhs.set_block(0, 0, &Matrix::column(&eta)?);
    for i in 0..n {
        rhs.set(last * n + i, 1 + i, 1.0);
    }
    let solved = gauss_solve(&info, &rhs, &mut ctr).map_err(|err| match err {
        MatError::Singular { .. } => Error::Unobservable(err),
        other => other.into(),
    })?;
    let mean = (0..n).map(|i| solved[(last * n + i, 0)]).collect();
    let cov = symmetrize(&solved.block(last * n, 1, n, n))?;
    Ok(Belief { mean, cov })
}

fn whitening(cov: &Matrix, ctr: &mut OpCounter) -> Result<Matrix> {
    let inv = gauss_solve(cov, &Matrix::identity(cov.rows()), ctr).map_err(|err| match err {
        MatError::Singular { .. } => Error::Unobservable(err),
        other => other.into(),
    })?;
    Ok(symmetrize(&inv)?)
}
