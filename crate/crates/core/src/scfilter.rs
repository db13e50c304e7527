//! Stochastic cloning: the anchor-epoch state is copied into an augmented
//! `2n` state so a measurement on `(x_j, x_k)` becomes a function of the
//! augmented current state, then a standard Kalman update is applied.

use crate::error::{Error, Result};
use crate::kf::{kf_update, solve_gain};
use crate::matcore::{
    add, is_spd, matmul, matvec, sub, symmetrize, vec_add, vec_sub, Matrix, OpCounter,
};
use crate::models::{
    expect_dim, Belief, DelayedMeasurement, EpochTransition, SystemModel, BELIEF_SPD_TOL,
};

/// Clone `x_j` stacked above current `x_k`, with their joint covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBelief {
    pub mean_aug: Vec<f64>,
    pub cov_aug: Matrix,
    just_cloned: bool,
}

impl AugmentedBelief {
    pub fn new(mean_aug: Vec<f64>, cov_aug: Matrix) -> Result<Self> {
        if !mean_aug.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                what: "augmented mean length (even)",
                expected: mean_aug.len() + 1,
                actual: mean_aug.len(),
            });
        }
        let joint = Belief::new(mean_aug, cov_aug)?;
        Ok(Self {
            mean_aug: joint.mean,
            cov_aug: joint.cov,
            just_cloned: false,
        })
    }

    /// Dimension `n` of the un-augmented state.
    pub fn state_dim(&self) -> usize {
        self.mean_aug.len() / 2
    }

    pub fn clone_block(&self) -> Belief {
        let n = self.state_dim();
        Belief {
            mean: self.mean_aug[..n].to_vec(),
            cov: self.cov_aug.block(0, 0, n, n),
        }
    }

    pub fn current(&self) -> Belief {
        let n = self.state_dim();
        Belief {
            mean: self.mean_aug[n..].to_vec(),
            cov: self.cov_aug.block(n, n, n, n),
        }
    }

    /// `P_jk`, the clone/current cross-covariance (top-right block).
    pub fn cross_cov(&self) -> Matrix {
        let n = self.state_dim();
        self.cov_aug.block(0, n, n, n)
    }

    fn as_belief(&self) -> Belief {
        Belief {
            mean: self.mean_aug.clone(),
            cov: self.cov_aug.clone(),
        }
    }
}

/// `[x; x]` with covariance `[[P, P], [P, P]]`.
pub fn sc_clone(belief: &Belief) -> AugmentedBelief {
    let n = belief.dim();
    let mut mean_aug = belief.mean.clone();
    mean_aug.extend_from_slice(&belief.mean);
    let mut cov_aug = Matrix::zeros(2 * n, 2 * n);
    for (r0, c0) in [(0, 0), (0, n), (n, 0), (n, n)] {
        cov_aug.set_block(r0, c0, &belief.cov);
    }
    AugmentedBelief {
        mean_aug,
        cov_aug,
        just_cloned: true,
    }
}

/// Augmented prediction with `Φ̆ P̆ Φ̆ᵀ + S̆`.
///
/// The first prediction after cloning uses `Φ̆ = [[0, I], [0, Φ]]`, which
/// re-seeds the clone from the current block; later predictions in the same
/// gap hold the clone with `[[I, 0], [0, Φ]]`. Both agree on a fresh clone.
pub fn sc_predict(
    aug: &AugmentedBelief,
    model: &SystemModel,
    u: &[f64],
) -> Result<AugmentedBelief> {
    let step = EpochTransition::identity(model.state_dim()).accumulate(model, u)?;
    sc_predict_over(aug, &step)
}

/// Augmented prediction across an accumulated transition.
pub fn sc_predict_over(aug: &AugmentedBelief, trans: &EpochTransition) -> Result<AugmentedBelief> {
    let n = aug.state_dim();
    expect_dim("transition state dimension", n, trans.state_dim())?;
    let mut phi_aug = Matrix::zeros(2 * n, 2 * n);
    if aug.just_cloned {
        phi_aug.set_block(0, n, &Matrix::identity(n));
    } else {
        phi_aug.set_block(0, 0, &Matrix::identity(n));
    }
    phi_aug.set_block(n, n, trans.phi_accum());
    let mut s_aug = Matrix::zeros(2 * n, 2 * n);
    s_aug.set_block(n, n, trans.s_accum());
    let mut drift_aug = vec![0.0; n];
    drift_aug.extend_from_slice(trans.drift_accum());

    let mut ctr = OpCounter::new();
    let mean_aug = vec_add(
        &matvec(&phi_aug, &aug.mean_aug, &mut ctr)?,
        &drift_aug,
        &mut ctr,
    )?;
    let propagated = matmul(
        &matmul(&phi_aug, &aug.cov_aug, &mut ctr)?,
        &phi_aug.transpose(),
        &mut ctr,
    )?;
    let cov_aug = symmetrize(&add(&propagated, &s_aug, &mut ctr)?)?;
    Ok(AugmentedBelief {
        mean_aug,
        cov_aug,
        just_cloned: false,
    })
}

/// Full Kalman update of the augmented state with `H̆ = [H_prior  H_current]`.
/// Returns the updated augmented belief and its current-state block.
pub fn sc_update(
    aug: &AugmentedBelief,
    meas: &DelayedMeasurement,
    counter: &mut OpCounter,
) -> Result<(AugmentedBelief, Belief)> {
    expect_dim(
        "measurement state dimension",
        aug.state_dim(),
        meas.state_dim(),
    )?;
    let updated = kf_update(
        &aug.as_belief(),
        &meas.stacked_h(),
        meas.r_cov(),
        meas.y(),
        counter,
    )?;
    let out = AugmentedBelief {
        mean_aug: updated.mean,
        cov_aug: updated.cov,
        just_cloned: false,
    };
    let current = out.current();
    Ok((out, current))
}

/// Update restricted to the current-state block: only the bottom `n` rows of
/// the augmented gain are formed.
pub fn sc_update_reduced(
    aug: &AugmentedBelief,
    meas: &DelayedMeasurement,
    counter: &mut OpCounter,
) -> Result<Belief> {
    let n = aug.state_dim();
    expect_dim("measurement state dimension", n, meas.state_dim())?;
    if !is_spd(&aug.cov_aug, BELIEF_SPD_TOL) {
        return Err(Error::NotPositiveSemidefinite {
            what: "augmented covariance",
        });
    }
    let h_aug = meas.stacked_h();
    let innovation = vec_sub(meas.y(), &matvec(&h_aug, &aug.mean_aug, counter)?, counter)?;
    let ph_t = matmul(&aug.cov_aug, &h_aug.transpose(), counter)?;
    let upsilon = symmetrize(&add(
        &matmul(&h_aug, &ph_t, counter)?,
        meas.r_cov(),
        counter,
    )?)?;
    let m = meas.meas_dim();
    let gain = solve_gain(&upsilon, &ph_t.block(n, 0, n, m), counter)?;

    let mean = vec_add(
        &aug.mean_aug[n..],
        &matvec(&gain, &innovation, counter)?,
        counter,
    )?;

    // Bottom rows of (I − K̆ H̆): [−K H_prior, I − K H_current].
    let mut rows = Matrix::zeros(n, 2 * n);
    rows.set_block(
        0,
        0,
        &matmul(&gain, meas.h_prior(), counter)?.scale(-1.0, counter)?,
    );
    rows.set_block(
        0,
        n,
        &sub(
            &Matrix::identity(n),
            &matmul(&gain, meas.h_current(), counter)?,
            counter,
        )?,
    );
    let left = matmul(
        &matmul(&rows, &aug.cov_aug, counter)?,
        &rows.transpose(),
        counter,
    )?;
    let right = matmul(
        &matmul(&gain, meas.r_cov(), counter)?,
        &gain.transpose(),
        counter,
    )?;
    let cov = symmetrize(&add(&left, &right, counter)?)?;
    Ok(Belief { mean, cov })
}

#[derive(Debug, Clone)]
enum CloneState {
    Plain(Belief),
    Cloned(AugmentedBelief),
}

/// Sequential stochastic-cloning filter holding at most one clone.
///
/// Call [`anchor`](Self::anchor) at the epoch a delayed measurement refers
/// back to; the clone is dropped after the delayed update.
#[derive(Debug, Clone)]
pub struct CloningFilter {
    state: CloneState,
    reduced: bool,
    counter: OpCounter,
}

impl CloningFilter {
    pub fn new(initial: Belief) -> Self {
        Self {
            state: CloneState::Plain(initial),
            reduced: false,
            counter: OpCounter::new(),
        }
    }

    /// Use [`sc_update_reduced`] for delayed updates.
    pub fn reduced(mut self) -> Self {
        self.reduced = true;
        self
    }

    pub fn anchor(&mut self) {
        let belief = self.current();
        self.state = CloneState::Cloned(sc_clone(&belief));
    }

    pub fn is_anchored(&self) -> bool {
        matches!(self.state, CloneState::Cloned(_))
    }

    pub fn predict(&mut self, model: &SystemModel, u: &[f64]) -> Result<()> {
        self.state = match &self.state {
            CloneState::Plain(b) => CloneState::Plain(crate::kf::kf_predict(b, model, u)?),
            CloneState::Cloned(aug) => CloneState::Cloned(sc_predict(aug, model, u)?),
        };
        Ok(())
    }

    pub fn update(&mut self, meas: &DelayedMeasurement) -> Result<()> {
        let next = match &self.state {
            CloneState::Plain(_) if meas.is_delayed() => return Err(Error::MissingAnchor),
            CloneState::Plain(b) => kf_update(
                b,
                meas.h_current(),
                meas.r_cov(),
                meas.y(),
                &mut self.counter,
            )?,
            CloneState::Cloned(aug) if self.reduced => {
                sc_update_reduced(aug, meas, &mut self.counter)?
            }
            CloneState::Cloned(aug) => sc_update(aug, meas, &mut self.counter)?.1,
        };
        self.state = CloneState::Plain(next);
        Ok(())
    }

    /// Current-state belief (the bottom block while a clone is held).
    pub fn current(&self) -> Belief {
        match &self.state {
            CloneState::Plain(b) => b.clone(),
            CloneState::Cloned(aug) => aug.current(),
        }
    }

    pub fn augmented(&self) -> Option<&AugmentedBelief> {
        match &self.state {
            CloneState::Cloned(aug) => Some(aug),
            CloneState::Plain(_) => None,
        }
    }

    pub fn counter(&self) -> OpCounter {
        self.counter
    }
}
