//! Delayed-state Kalman filter.
//!
//! The measurement `y = H_prior x_j + H_current x_k + v` is re-expressed in
//! terms of the predicted current state by back-propagating through the
//! (invertible) transition `Φ_kj`. The back-propagation carries the process
//! noise accumulated over `j → k`, which makes the innovation correlated with
//! the predicted-state error; the gain and covariance update account for
//! that correlation through `N̆` instead of augmenting the state.
//!
//! With `Φ_jk = Φ_kj⁻¹` and `S` the accumulated process noise:
//!
//! ```text
//! J̆ = H_prior Φ_jk            H̆ = J̆ + H_current
//! N̆ = J̆ S                     R̆ = J̆ S J̆ᵀ + R
//! δy = y − H̆ x⁻ + J̆ d         (d: accumulated control drift)
//! Ῠ  = H̆ P⁻ H̆ᵀ − N̆ H̆ᵀ − H̆ N̆ᵀ + R̆
//! K̆  = (P⁻ H̆ᵀ − N̆ᵀ) Ῠ⁻¹
//! P⁺ = A P⁻ Aᵀ + A N̆ᵀ K̆ᵀ + K̆ N̆ Aᵀ + K̆ R̆ K̆ᵀ,   A = I − K̆ H̆
//! ```
//!
//! When `H_prior = 0` every correction term vanishes and the update is the
//! conventional Kalman update.

use crate::error::{Error, Result};
use crate::kf::{kf_predict, kf_update, solve_gain};
use crate::matcore::{
    add, gauss_solve, is_spd, matmul, matvec, sub, symmetrize, vec_add, vec_sub, MatError, Matrix,
    OpCounter,
};
use crate::models::{
    expect_dim, Belief, DelayedMeasurement, EpochTransition, SystemModel, BELIEF_SPD_TOL,
};

/// Transitions whose condition estimate exceeds this are rejected.
pub const CONDITION_REJECT: f64 = 1e12;
/// Transitions above this condition estimate are accepted but flagged.
pub const CONDITION_WARN: f64 = 1e8;

/// Correlation-aware measurement terms for one delayed update.
#[derive(Debug, Clone, PartialEq)]
pub struct DskfTerms {
    /// `J̆ = H_prior Φ_jk`
    pub j_mat: Matrix,
    /// `H̆ = J̆ + H_current`
    pub h_eff: Matrix,
    /// `N̆ = J̆ S`
    pub n_mat: Matrix,
    /// `R̆ = J̆ S J̆ᵀ + R`
    pub r_eff: Matrix,
    /// `‖Φ_kj‖∞ ‖Φ_jk‖∞`
    pub transition_condition: f64,
}

impl DskfTerms {
    pub fn condition_warning(&self) -> bool {
        self.transition_condition > CONDITION_WARN
    }
}

pub fn dskf_terms(trans: &EpochTransition, meas: &DelayedMeasurement) -> Result<DskfTerms> {
    terms_counted(trans, meas, &mut OpCounter::new())
}

fn inverse_transition(trans: &EpochTransition, counter: &mut OpCounter) -> Result<(Matrix, f64)> {
    let phi = trans.phi_accum();
    let inverse =
        gauss_solve(phi, &Matrix::identity(phi.rows()), counter).map_err(|err| match err {
            MatError::Singular { .. } | MatError::NonFinite { .. } => {
                Error::NonInvertibleTransition {
                    condition: f64::INFINITY,
                }
            }
            other => other.into(),
        })?;
    let condition = phi.norm_inf() * inverse.norm_inf();
    if condition > CONDITION_REJECT {
        return Err(Error::NonInvertibleTransition { condition });
    }
    Ok((inverse, condition))
}

fn terms_counted(
    trans: &EpochTransition,
    meas: &DelayedMeasurement,
    counter: &mut OpCounter,
) -> Result<DskfTerms> {
    expect_dim(
        "measurement state dimension",
        trans.state_dim(),
        meas.state_dim(),
    )?;
    let (phi_jk, transition_condition) = inverse_transition(trans, counter)?;
    let j_mat = matmul(meas.h_prior(), &phi_jk, counter)?;
    let h_eff = add(&j_mat, meas.h_current(), counter)?;
    let n_mat = matmul(&j_mat, trans.s_accum(), counter)?;
    let r_eff = symmetrize(&add(
        &matmul(&n_mat, &j_mat.transpose(), counter)?,
        meas.r_cov(),
        counter,
    )?)?;
    Ok(DskfTerms {
        j_mat,
        h_eff,
        n_mat,
        r_eff,
        transition_condition,
    })
}

/// `δy = y − H̆ x⁻ + J̆ d`: the delayed innovation without the stored prior mean.
pub fn dskf_innovation(
    belief_pred: &Belief,
    trans: &EpochTransition,
    meas: &DelayedMeasurement,
    terms: &DskfTerms,
) -> Result<Vec<f64>> {
    innovation_counted(belief_pred, trans, meas, terms, &mut OpCounter::new())
}

fn innovation_counted(
    belief_pred: &Belief,
    trans: &EpochTransition,
    meas: &DelayedMeasurement,
    terms: &DskfTerms,
    counter: &mut OpCounter,
) -> Result<Vec<f64>> {
    let predicted = matvec(&terms.h_eff, &belief_pred.mean, counter)?;
    let drift = matvec(&terms.j_mat, trans.drift_accum(), counter)?;
    Ok(vec_add(
        &vec_sub(meas.y(), &predicted, counter)?,
        &drift,
        counter,
    )?)
}

/// Reference form of the innovation that keeps the anchor-epoch estimate:
/// `y − H_prior x_j − H_current x⁻`.
pub fn innovation_from_prior(
    prior_mean: &[f64],
    belief_pred: &Belief,
    meas: &DelayedMeasurement,
) -> Result<Vec<f64>> {
    let mut ctr = OpCounter::new();
    let mut stacked = prior_mean.to_vec();
    stacked.extend_from_slice(&belief_pred.mean);
    let predicted = matvec(&meas.stacked_h(), &stacked, &mut ctr)?;
    Ok(vec_sub(meas.y(), &predicted, &mut ctr)?)
}

/// `K̆ = (P⁻ H̆ᵀ − N̆ᵀ) Ῠ⁻¹`.
pub fn dskf_gain(
    belief_pred: &Belief,
    terms: &DskfTerms,
    counter: &mut OpCounter,
) -> Result<Matrix> {
    expect_dim(
        "gain state dimension",
        belief_pred.dim(),
        terms.h_eff.cols(),
    )?;
    let numerator = sub(
        &matmul(&belief_pred.cov, &terms.h_eff.transpose(), counter)?,
        &terms.n_mat.transpose(),
        counter,
    )?;
    // H̆ (P H̆ᵀ − N̆ᵀ) − N̆ H̆ᵀ + R̆ expands to H̆PH̆ᵀ − H̆N̆ᵀ − N̆H̆ᵀ + R̆.
    let upsilon = symmetrize(&add(
        &sub(
            &matmul(&terms.h_eff, &numerator, counter)?,
            &matmul(&terms.n_mat, &terms.h_eff.transpose(), counter)?,
            counter,
        )?,
        &terms.r_eff,
        counter,
    )?)?;
    solve_gain(&upsilon, &numerator, counter)
}

/// Delayed-state update of the predicted belief at epoch `k` given the
/// transition accumulated since the anchor epoch `j`.
pub fn dskf_update(
    belief_pred: &Belief,
    trans: &EpochTransition,
    meas: &DelayedMeasurement,
    counter: &mut OpCounter,
) -> Result<Belief> {
    update_with_condition(belief_pred, trans, meas, counter).map(|(belief, _)| belief)
}

fn update_with_condition(
    belief_pred: &Belief,
    trans: &EpochTransition,
    meas: &DelayedMeasurement,
    counter: &mut OpCounter,
) -> Result<(Belief, f64)> {
    if !is_spd(&belief_pred.cov, BELIEF_SPD_TOL) {
        return Err(Error::NotPositiveSemidefinite {
            what: "predicted covariance",
        });
    }
    expect_dim(
        "transition state dimension",
        belief_pred.dim(),
        trans.state_dim(),
    )?;
    let terms = terms_counted(trans, meas, counter)?;
    let innovation = innovation_counted(belief_pred, trans, meas, &terms, counter)?;
    let gain = dskf_gain(belief_pred, &terms, counter)?;
    let mean = vec_add(
        &belief_pred.mean,
        &matvec(&gain, &innovation, counter)?,
        counter,
    )?;

    let n = belief_pred.dim();
    let a = sub(
        &Matrix::identity(n),
        &matmul(&gain, &terms.h_eff, counter)?,
        counter,
    )?;
    let joseph = matmul(
        &matmul(&a, &belief_pred.cov, counter)?,
        &a.transpose(),
        counter,
    )?;
    // A N̆ᵀ K̆ᵀ; its transpose is the K̆ N̆ Aᵀ term.
    let cross = matmul(
        &a,
        &matmul(&gain, &terms.n_mat, counter)?.transpose(),
        counter,
    )?;
    let noise = matmul(
        &matmul(&gain, &terms.r_eff, counter)?,
        &gain.transpose(),
        counter,
    )?;
    let cov = add(
        &add(&joseph, &cross, counter)?,
        &add(&cross.transpose(), &noise, counter)?,
        counter,
    )?;
    let cov = symmetrize(&cov)?;
    if !is_spd(&cov, BELIEF_SPD_TOL) {
        return Err(Error::NumericalFailure(
            "updated covariance has a negative pivot beyond -1e-9 trace/n".into(),
        ));
    }
    Ok((Belief { mean, cov }, terms.transition_condition))
}

/// `Φ_jk (P⁻ − S) Φ_jkᵀ`: the anchor-epoch covariance reconstructed from
/// the prediction.
pub fn back_propagated_cov(belief_pred: &Belief, trans: &EpochTransition) -> Result<Matrix> {
    expect_dim(
        "transition state dimension",
        belief_pred.dim(),
        trans.state_dim(),
    )?;
    let mut ctr = OpCounter::new();
    let (phi_jk, _) = inverse_transition(trans, &mut ctr)?;
    let diff = sub(&belief_pred.cov, trans.s_accum(), &mut ctr)?;
    let out = matmul(
        &matmul(&phi_jk, &diff, &mut ctr)?,
        &phi_jk.transpose(),
        &mut ctr,
    )?;
    Ok(symmetrize(&out)?)
}

/// Sequential delayed-state filter. Holds only the current belief and the
/// transition accumulated since the last anchor epoch.
#[derive(Debug, Clone)]
pub struct DelayedStateFilter {
    belief: Belief,
    transition: Option<EpochTransition>,
    counter: OpCounter,
    worst_condition: f64,
}

impl DelayedStateFilter {
    pub fn new(initial: Belief) -> Self {
        Self {
            belief: initial,
            transition: None,
            counter: OpCounter::new(),
            worst_condition: 0.0,
        }
    }

    pub fn anchor(&mut self) {
        self.transition = Some(EpochTransition::identity(self.belief.dim()));
    }

    pub fn is_anchored(&self) -> bool {
        self.transition.is_some()
    }

    pub fn predict(&mut self, model: &SystemModel, u: &[f64]) -> Result<()> {
        let belief = kf_predict(&self.belief, model, u)?;
        if let Some(trans) = &self.transition {
            self.transition = Some(trans.accumulate(model, u)?);
        }
        self.belief = belief;
        Ok(())
    }

    pub fn update(&mut self, meas: &DelayedMeasurement) -> Result<()> {
        self.belief = match &self.transition {
            Some(trans) => {
                let (belief, condition) =
                    update_with_condition(&self.belief, trans, meas, &mut self.counter)?;
                self.worst_condition = self.worst_condition.max(condition);
                belief
            }
            None if meas.is_delayed() => return Err(Error::MissingAnchor),
            None => kf_update(
                &self.belief,
                meas.h_current(),
                meas.r_cov(),
                meas.y(),
                &mut self.counter,
            )?,
        };
        self.transition = None;
        Ok(())
    }

    pub fn current(&self) -> &Belief {
        &self.belief
    }

    pub fn transition(&self) -> Option<&EpochTransition> {
        self.transition.as_ref()
    }

    pub fn counter(&self) -> OpCounter {
        self.counter
    }

    /// Largest transition condition estimate seen by delayed updates.
    pub fn worst_condition(&self) -> f64 {
        self.worst_condition
    }
}
