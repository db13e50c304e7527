//! Conventional Kalman filter predict and update.

use crate::error::{Error, Result};
use crate::matcore::{
    add, gauss_solve, is_spd, matmul, matvec, sub, symmetrize, vec_add, vec_sub, MatError, Matrix,
    OpCounter,
};
use crate::models::{
    expect_dim, Belief, EpochTransition, SystemModel, BELIEF_SPD_TOL, MODEL_SPD_TOL,
};

/// `x⁻ = Φ x + B u`, `P⁻ = Φ P Φᵀ + G Q Gᵀ`.
pub fn kf_predict(belief: &Belief, model: &SystemModel, u: &[f64]) -> Result<Belief> {
    let step = EpochTransition::identity(model.state_dim()).accumulate(model, u)?;
    kf_predict_over(belief, &step)
}

/// Prediction across an accumulated transition.
pub fn kf_predict_over(belief: &Belief, trans: &EpochTransition) -> Result<Belief> {
    check_belief(belief)?;
    expect_dim(
        "transition state dimension",
        belief.dim(),
        trans.state_dim(),
    )?;
    let mut ctr = OpCounter::new();
    let phi = trans.phi_accum();
    let mean = vec_add(
        &matvec(phi, &belief.mean, &mut ctr)?,
        trans.drift_accum(),
        &mut ctr,
    )?;
    let propagated = matmul(
        &matmul(phi, &belief.cov, &mut ctr)?,
        &phi.transpose(),
        &mut ctr,
    )?;
    let cov = symmetrize(&add(&propagated, trans.s_accum(), &mut ctr)?)?;
    Ok(Belief { mean, cov })
}

/// Measurement update with the Joseph-form covariance.
pub fn kf_update(
    belief: &Belief,
    h: &Matrix,
    r: &Matrix,
    y: &[f64],
    counter: &mut OpCounter,
) -> Result<Belief> {
    check_belief(belief)?;
    let n = belief.dim();
    expect_dim("measurement matrix columns", n, h.cols())?;
    expect_dim("measurement-noise rows", h.rows(), r.rows())?;
    expect_dim("measurement length", h.rows(), y.len())?;
    if !is_spd(r, MODEL_SPD_TOL) {
        return Err(Error::NotPositiveSemidefinite {
            what: "measurement-noise covariance",
        });
    }

    let innovation = vec_sub(y, &matvec(h, &belief.mean, counter)?, counter)?;
    let ph_t = matmul(&belief.cov, &h.transpose(), counter)?;
    let upsilon = symmetrize(&add(&matmul(h, &ph_t, counter)?, r, counter)?)?;
    let gain = solve_gain(&upsilon, &ph_t, counter)?;

    let mean = vec_add(&belief.mean, &matvec(&gain, &innovation, counter)?, counter)?;
    let cov = joseph(&belief.cov, &gain, h, r, counter)?;
    Ok(Belief { mean, cov })
}

/// `K = numerator · Υ⁻¹` computed as the solve `Υᵀ Kᵀ = numeratorᵀ`.
pub(crate) fn solve_gain(
    upsilon: &Matrix,
    numerator: &Matrix,
    counter: &mut OpCounter,
) -> Result<Matrix> {
    let gain_t = gauss_solve(&upsilon.transpose(), &numerator.transpose(), counter).map_err(
        |err| match err {
            MatError::Singular { .. } => Error::InnovationCovariance(err),
            other => other.into(),
        },
    )?;
    Ok(gain_t.transpose())
}

/// `(I − K H) P (I − K H)ᵀ + K R Kᵀ`, symmetrized.
pub(crate) fn joseph(
    p: &Matrix,
    gain: &Matrix,
    h: &Matrix,
    r: &Matrix,
    counter: &mut OpCounter,
) -> Result<Matrix> {
    let n = p.rows();
    let ikh = sub(&Matrix::identity(n), &matmul(gain, h, counter)?, counter)?;
    let left = matmul(&matmul(&ikh, p, counter)?, &ikh.transpose(), counter)?;
    let right = matmul(&matmul(gain, r, counter)?, &gain.transpose(), counter)?;
    Ok(symmetrize(&add(&left, &right, counter)?)?)
}

fn check_belief(belief: &Belief) -> Result<()> {
    expect_dim("covariance rows", belief.dim(), belief.cov.rows())?;
    expect_dim("covariance columns", belief.dim(), belief.cov.cols())?;
    if is_spd(&belief.cov, BELIEF_SPD_TOL) {
        Ok(())
    } else {
        Err(Error::NotPositiveSemidefinite {
            what: "belief covariance",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn scalar(x: f64, p: f64) -> Belief {
        Belief::new(vec![x], m(&[&[p]])).unwrap()
    }

    #[test]
    fn predict_identity_noiseless() {
        let b = Belief::new(vec![1.0, 2.0], m(&[&[1.0, 0.2], &[0.2, 3.0]])).unwrap();
        let model = SystemModel::new(
            Matrix::identity(2),
            Matrix::zeros(2, 1),
            Matrix::identity(2),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(kf_predict(&b, &model, &[0.0]).unwrap(), b);
    }

    #[test]
    fn predict_scalar_sum() {
        let model =
            SystemModel::new(m(&[&[1.0]]), m(&[&[0.0]]), m(&[&[1.0]]), m(&[&[1.0]])).unwrap();
        let out = kf_predict(&scalar(0.0, 1.0), &model, &[0.0]).unwrap();
        assert_eq!(out.cov.as_slice(), &[2.0]);
    }

    #[test]
    fn predict_matches_direct_formula() {
        let phi = m(&[&[0.9, 0.1, 0.0], &[-0.2, 1.0, 0.3], &[0.05, 0.0, 0.8]]);
        let b_mat = m(&[&[1.0], &[0.0], &[0.5]]);
        let q = m(&[&[0.2, 0.0, 0.01], &[0.0, 0.1, 0.0], &[0.01, 0.0, 0.3]]);
        let model = SystemModel::new(phi.clone(), b_mat, Matrix::identity(3), q.clone()).unwrap();
        let p = m(&[&[1.0, 0.1, 0.0], &[0.1, 2.0, 0.3], &[0.0, 0.3, 1.5]]);
        let belief = Belief::new(vec![1.0, -1.0, 0.5], p.clone()).unwrap();
        let out = kf_predict(&belief, &model, &[2.0]).unwrap();
        for i in 0..3 {
            let mut mean = 0.0;
            for k in 0..3 {
                mean += phi[(i, k)] * belief.mean[k];
            }
            mean += [2.0, 0.0, 1.0][i];
            assert!((out.mean[i] - mean).abs() < 1e-14);
            for j in 0..3 {
                let mut acc = q[(i, j)];
                for k in 0..3 {
                    for l in 0..3 {
                        acc += phi[(i, k)] * p[(k, l)] * phi[(j, l)];
                    }
                }
                assert!((out.cov[(i, j)] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn update_scalar_closed_form() {
        // K = P/(P+R) = 0.5, x+ = 0 + 0.5*2, P+ = (1-K)^2 P + K^2 R = 0.5
        let out = kf_update(
            &scalar(0.0, 1.0),
            &m(&[&[1.0]]),
            &m(&[&[1.0]]),
            &[2.0],
            &mut OpCounter::new(),
        )
        .unwrap();
        assert_eq!(out.mean, vec![1.0]);
        assert_eq!(out.cov.as_slice(), &[0.5]);
    }

    #[test]
    fn uninformative_measurement_leaves_belief() {
        let b = Belief::new(vec![1.0, 2.0], m(&[&[1.0, 0.2], &[0.2, 3.0]])).unwrap();
        let out = kf_update(
            &b,
            &Matrix::zeros(1, 2),
            &m(&[&[0.5]]),
            &[7.0],
            &mut OpCounter::new(),
        )
        .unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn zero_innovation_still_contracts() {
        let b = Belief::new(vec![1.0, 2.0], m(&[&[1.0, 0.2], &[0.2, 3.0]])).unwrap();
        let h = m(&[&[1.0, 1.0]]);
        let out = kf_update(&b, &h, &m(&[&[0.5]]), &[3.0], &mut OpCounter::new()).unwrap();
        assert_eq!(out.mean, b.mean);
        assert!(out.cov.trace() < b.cov.trace());
    }

    #[test]
    fn singular_innovation_reported() {
        let b = Belief::new(vec![0.0], Matrix::zeros(1, 1)).unwrap();
        let err = kf_update(
            &b,
            &m(&[&[1.0]]),
            &Matrix::zeros(1, 1),
            &[0.0],
            &mut OpCounter::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InnovationCovariance(_)));
    }

    #[test]
    fn rejects_indefinite_input() {
        let b = Belief {
            mean: vec![0.0, 0.0],
            cov: Matrix::diag(&[1.0, -1.0]).unwrap(),
        };
        assert!(matches!(
            kf_update(
                &b,
                &Matrix::identity(2),
                &Matrix::identity(2),
                &[0.0, 0.0],
                &mut OpCounter::new()
            ),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }
}
