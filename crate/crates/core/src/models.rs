//! System and measurement models.
//!
//! Discrete linear dynamics `x_k = Φ x_j + B u + G w`, `w ~ N(0, Q)`, and
//! measurements that may depend on an earlier (anchor) state as well as the
//! current one: `y = H_prior x_j + H_current x_k + v`, `v ~ N(0, R)`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::matcore::{self, is_spd, matmul, matvec, symmetrize, Matrix, OpCounter};
use crate::runio::{sample_noise, RandomStream};

pub(crate) const MODEL_SPD_TOL: f64 = 1e-10;
pub(crate) const BELIEF_SPD_TOL: f64 = 1e-9;

/// One step of linear dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    phi: Matrix,
    b: Matrix,
    g: Matrix,
    q_cov: Matrix,
}

impl SystemModel {
    pub fn new(phi: Matrix, b: Matrix, g: Matrix, q_cov: Matrix) -> Result<Self> {
        let n = phi.rows();
        expect_dim("transition columns", n, phi.cols())?;
        expect_dim("control-input rows", n, b.rows())?;
        expect_dim("noise-coupling rows", n, g.rows())?;
        expect_dim("process-noise rows", g.cols(), q_cov.rows())?;
        expect_dim("process-noise columns", g.cols(), q_cov.cols())?;
        if !is_spd(&q_cov, MODEL_SPD_TOL) {
            return Err(Error::NotPositiveSemidefinite {
                what: "process-noise covariance",
            });
        }
        Ok(Self {
            phi,
            b,
            g,
            q_cov: symmetrize(&q_cov)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.phi.rows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn q_cov(&self) -> &Matrix {
        &self.q_cov
    }

    /// `G Q Gᵀ` for this step.
    pub fn process_noise(&self) -> Result<Matrix> {
        process_noise_cov(&self.g, &self.q_cov)
    }

    /// Deterministic control contribution `B u`.
    pub fn control_effect(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(matvec(&self.b, u, &mut OpCounter::new())?)
    }
}

/// Accumulated dynamics between an anchor epoch `j` and the current epoch `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTransition {
    phi_accum: Matrix,
    drift_accum: Vec<f64>,
    s_accum: Matrix,
}

impl EpochTransition {
    /// The empty transition: `Φ = I`, no drift, no accumulated noise.
    pub fn identity(n: usize) -> Self {
        Self {
            phi_accum: Matrix::identity(n),
            drift_accum: vec![0.0; n],
            s_accum: Matrix::zeros(n, n),
        }
    }

    pub fn from_parts(phi_accum: Matrix, drift_accum: Vec<f64>, s_accum: Matrix) -> Result<Self> {
        let n = phi_accum.rows();
        expect_dim("transition columns", n, phi_accum.cols())?;
        expect_dim("drift length", n, drift_accum.len())?;
        expect_dim("noise rows", n, s_accum.rows())?;
        expect_dim("noise columns", n, s_accum.cols())?;
        if !is_spd(&s_accum, MODEL_SPD_TOL) {
            return Err(Error::NotPositiveSemidefinite {
                what: "accumulated process noise",
            });
        }
        Ok(Self {
            phi_accum,
            drift_accum,
            s_accum: symmetrize(&s_accum)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.phi_accum.rows()
    }

    pub fn phi_accum(&self) -> &Matrix {
        &self.phi_accum
    }

    pub fn drift_accum(&self) -> &[f64] {
        &self.drift_accum
    }

    pub fn s_accum(&self) -> &Matrix {
        &self.s_accum
    }

    /// Composes one more step of `model` with control `u` onto this transition.
    pub fn accumulate(&self, model: &SystemModel, u: &[f64]) -> Result<Self> {
        expect_dim("model state dimension", self.state_dim(), model.state_dim())?;
        let mut ctr = OpCounter::new();
        let phi = model.phi();
        let phi_accum = matmul(phi, &self.phi_accum, &mut ctr)?;
        let drift_accum = matcore::vec_add(
            &matvec(phi, &self.drift_accum, &mut ctr)?,
            &model.control_effect(u)?,
            &mut ctr,
        )?;
        let propagated = matmul(
            &matmul(phi, &self.s_accum, &mut ctr)?,
            &phi.transpose(),
            &mut ctr,
        )?;
        let s_accum = symmetrize(&matcore::add(
            &propagated,
            &model.process_noise()?,
            &mut ctr,
        )?)?;
        Ok(Self {
            phi_accum,
            drift_accum,
            s_accum,
        })
    }
}

/// Estimate and covariance of the state at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl Belief {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        expect_dim("covariance rows", mean.len(), cov.rows())?;
        expect_dim("covariance columns", mean.len(), cov.cols())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(matcore::MatError::NonFinite { op: "belief mean" }.into());
        }
        if !is_spd(&cov, BELIEF_SPD_TOL) {
            return Err(Error::NotPositiveSemidefinite {
                what: "belief covariance",
            });
        }
        Ok(Self {
            mean,
            cov: symmetrize(&cov)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Measurement tied to an anchor epoch `j` and the current epoch `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedMeasurement {
    h_prior: Matrix,
    h_current: Matrix,
    r_cov: Matrix,
    y: Vec<f64>,
}

impl DelayedMeasurement {
    pub fn new(h_prior: Matrix, h_current: Matrix, r_cov: Matrix, y: Vec<f64>) -> Result<Self> {
        let m = h_current.rows();
        expect_dim("prior-state coefficient rows", m, h_prior.rows())?;
        expect_dim(
            "prior-state coefficient columns",
            h_current.cols(),
            h_prior.cols(),
        )?;
        expect_dim("measurement-noise rows", m, r_cov.rows())?;
        expect_dim("measurement-noise columns", m, r_cov.cols())?;
        expect_dim("measurement length", m, y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(matcore::MatError::NonFinite { op: "measurement" }.into());
        }
        if !is_spd(&r_cov, MODEL_SPD_TOL) {
            return Err(Error::NotPositiveSemidefinite {
                what: "measurement-noise covariance",
            });
        }
        Ok(Self {
            h_prior,
            h_current,
            r_cov: symmetrize(&r_cov)?,
            y,
        })
    }

    /// A measurement of the current state only (`H_prior = 0`).
    pub fn current_only(h: Matrix, r_cov: Matrix, y: Vec<f64>) -> Result<Self> {
        let h_prior = Matrix::zeros(h.rows(), h.cols());
        Self::new(h_prior, h, r_cov, y)
    }

    pub fn meas_dim(&self) -> usize {
        self.h_current.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.h_current.cols()
    }

    pub fn h_prior(&self) -> &Matrix {
        &self.h_prior
    }

    pub fn h_current(&self) -> &Matrix {
        &self.h_current
    }

    pub fn r_cov(&self) -> &Matrix {
        &self.r_cov
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn is_delayed(&self) -> bool {
        !self.h_prior.is_zero()
    }

    /// Same coefficients with a different observed value.
    pub fn with_value(&self, y: Vec<f64>) -> Result<Self> {
        expect_dim("measurement length", self.meas_dim(), y.len())?;
        Ok(Self { y, ..self.clone() })
    }

    /// `[H_prior  H_current]`, the coefficient on the stacked `(x_j, x_k)`.
    pub fn stacked_h(&self) -> Matrix {
        Matrix::hstack(&self.h_prior, &self.h_current).expect("row counts validated")
    }
}

/// `S = G Q Gᵀ`, symmetrized.
pub fn process_noise_cov(g: &Matrix, q_cov: &Matrix) -> Result<Matrix> {
    let mut ctr = OpCounter::new();
    let gq = matmul(g, q_cov, &mut ctr)?;
    Ok(symmetrize(&matmul(&gq, &g.transpose(), &mut ctr)?)?)
}

/// Relative-position measurement `y = p_k - p_j + v` where the position
/// occupies `position_slice` of an `n`-dimensional state.
pub fn odometry_measurement(
    observed: &[f64],
    r_cov: Matrix,
    n: usize,
    position_slice: Range<usize>,
) -> Result<DelayedMeasurement> {
    let d = position_slice.len();
    if d == 0 || position_slice.end > n {
        return Err(Error::SliceOutOfBounds {
            start: position_slice.start,
            end: position_slice.end,
            n,
        });
    }
    expect_dim("observed displacement length", d, observed.len())?;
    let mut h_prior = Matrix::zeros(d, n);
    let mut h_current = Matrix::zeros(d, n);
    for (row, col) in position_slice.enumerate() {
        h_prior.set(row, col, -1.0);
        h_current.set(row, col, 1.0);
    }
    DelayedMeasurement::new(h_prior, h_current, r_cov, observed.to_vec())
}

/// Draws `Φ x + B u + G w` with `w ~ N(0, Q)`.
pub fn simulate_step(
    truth: &[f64],
    model: &SystemModel,
    u: &[f64],
    rng: &mut RandomStream,
) -> Result<Vec<f64>> {
    let mut ctr = OpCounter::new();
    let deterministic = matcore::vec_add(
        &matvec(model.phi(), truth, &mut ctr)?,
        &model.control_effect(u)?,
        &mut ctr,
    )?;
    let w = sample_noise(rng, model.q_cov())?;
    let noise = matvec(model.g(), &w, &mut ctr)?;
    Ok(matcore::vec_add(&deterministic, &noise, &mut ctr)?)
}

pub(crate) fn expect_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn naive_triple(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), c.cols());
        for i in 0..a.rows() {
            for l in 0..c.cols() {
                let mut acc = 0.0;
                for j in 0..a.cols() {
                    for k in 0..b.cols() {
                        acc += a[(i, j)] * b[(j, k)] * c[(k, l)];
                    }
                }
                out.set(i, l, acc);
            }
        }
        out
    }

    #[test]
    fn process_noise_cases() {
        let q = m(&[&[2.0, 0.5], &[0.5, 1.0]]);
        assert_eq!(process_noise_cov(&Matrix::identity(2), &q).unwrap(), q);
        let s = process_noise_cov(&m(&[&[2.0]]), &m(&[&[1.0]])).unwrap();
        assert_eq!(s.as_slice(), &[4.0]);

        let g = m(&[&[0.3, -1.2], &[0.7, 0.1], &[-0.4, 2.0]]);
        let s = process_noise_cov(&g, &q).unwrap();
        let oracle = naive_triple(&g, &q, &g.transpose());
        assert!(s.max_abs_diff(&oracle).unwrap() < 1e-14);
        assert!(s.is_symmetric());
        assert!(is_spd(&s, 1e-10));
    }

    fn scalar_model(phi: f64, b: f64, q: f64) -> SystemModel {
        SystemModel::new(m(&[&[phi]]), m(&[&[b]]), m(&[&[1.0]]), m(&[&[q]])).unwrap()
    }

    #[test]
    fn accumulate_single_step_and_identity_chain() {
        let model = SystemModel::new(
            m(&[&[1.0, 0.5], &[0.0, 1.0]]),
            m(&[&[0.125], &[0.5]]),
            Matrix::identity(2),
            m(&[&[0.2, 0.05], &[0.05, 0.1]]),
        )
        .unwrap();
        let t = EpochTransition::identity(2)
            .accumulate(&model, &[2.0])
            .unwrap();
        assert_eq!(t.phi_accum(), model.phi());
        assert_eq!(t.drift_accum(), &[0.25, 1.0]);
        assert_eq!(t.s_accum(), &model.process_noise().unwrap());

        let walk = scalar_model(1.0, 0.0, 0.7);
        let mut t = EpochTransition::identity(1);
        for _ in 0..3 {
            t = t.accumulate(&walk, &[0.0]).unwrap();
        }
        assert!((t.s_accum()[(0, 0)] - 2.1).abs() < 1e-15);
        assert_eq!(t.drift_accum(), &[0.0]);
    }

    #[test]
    fn accumulate_two_steps_matches_hand_expansion() {
        // x2 = Φ2(Φ1 x0 + B1u1 + w1) + B2u2 + w2
        //    = Φ2Φ1 x0 + (Φ2B1u1 + B2u2) + (Φ2 w1 + w2)
        let m1 = SystemModel::new(
            m(&[&[0.9, 0.2], &[-0.1, 1.1]]),
            m(&[&[1.0], &[0.0]]),
            Matrix::identity(2),
            m(&[&[0.3, 0.1], &[0.1, 0.2]]),
        )
        .unwrap();
        let m2 = SystemModel::new(
            m(&[&[1.0, -0.3], &[0.4, 0.8]]),
            m(&[&[0.5], &[2.0]]),
            m(&[&[1.0], &[0.5]]),
            m(&[&[0.4]]),
        )
        .unwrap();
        let t = EpochTransition::identity(2)
            .accumulate(&m1, &[1.5])
            .unwrap()
            .accumulate(&m2, &[-1.0])
            .unwrap();
        let (p1, p2) = (m1.phi(), m2.phi());
        let phi_oracle = [
            p2[(0, 0)] * p1[(0, 0)] + p2[(0, 1)] * p1[(1, 0)],
            p2[(0, 0)] * p1[(0, 1)] + p2[(0, 1)] * p1[(1, 1)],
            p2[(1, 0)] * p1[(0, 0)] + p2[(1, 1)] * p1[(1, 0)],
            p2[(1, 0)] * p1[(0, 1)] + p2[(1, 1)] * p1[(1, 1)],
        ];
        for (a, b) in t.phi_accum().as_slice().iter().zip(phi_oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        // drift: Φ2 (B1 u1) + B2 u2 with B1 u1 = (1.5, 0)
        let drift = [p2[(0, 0)] * 1.5 - 0.5, p2[(1, 0)] * 1.5 - 2.0];
        for (a, b) in t.drift_accum().iter().zip(drift) {
            assert!((a - b).abs() < 1e-15);
        }
        let s1 = m1.process_noise().unwrap();
        let s2 = m2.process_noise().unwrap();
        let s_oracle = naive_triple(p2, &s1, &p2.transpose());
        for r in 0..2 {
            for c in 0..2 {
                let want = s_oracle[(r, c)] + s2[(r, c)];
                assert!((t.s_accum()[(r, c)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn odometry_structure() {
        let meas = odometry_measurement(&[0.3], m(&[&[0.1]]), 1, 0..1).unwrap();
        assert_eq!(meas.h_prior().as_slice(), &[-1.0]);
        assert_eq!(meas.h_current().as_slice(), &[1.0]);

        let meas = odometry_measurement(&[0.0, 0.0], Matrix::identity(2), 4, 0..2).unwrap();
        assert_eq!(
            meas.h_prior(),
            &m(&[&[-1.0, 0.0, 0.0, 0.0], &[0.0, -1.0, 0.0, 0.0]])
        );
        assert_eq!(
            meas.h_current(),
            &m(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]])
        );
        assert_eq!(meas.y(), &[0.0, 0.0]);
        let sum = matcore::add(meas.h_prior(), meas.h_current(), &mut OpCounter::new()).unwrap();
        assert!(sum.is_zero());

        assert!(matches!(
            odometry_measurement(&[0.0, 0.0], Matrix::identity(2), 4, 3..5),
            Err(Error::SliceOutOfBounds { .. })
        ));
    }

    #[test]
    fn simulate_noiseless() {
        let mut rng = RandomStream::new(1);
        let model = SystemModel::new(
            Matrix::identity(2),
            Matrix::zeros(2, 1),
            Matrix::identity(2),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(
            simulate_step(&[1.0, -2.0], &model, &[0.0], &mut rng).unwrap(),
            vec![1.0, -2.0]
        );
        let doubling = SystemModel::new(
            Matrix::diag(&[2.0, 2.0]).unwrap(),
            Matrix::zeros(2, 1),
            Matrix::identity(2),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(
            simulate_step(&[1.0, 1.0], &doubling, &[0.0], &mut rng).unwrap(),
            vec![2.0, 2.0]
        );
    }

    #[test]
    fn simulate_noise_is_zero_mean() {
        let mut rng = RandomStream::new(99);
        let model = SystemModel::new(
            Matrix::zeros(2, 2).clone(),
            Matrix::zeros(2, 1),
            Matrix::identity(2),
            m(&[&[1.0, 0.3], &[0.3, 2.0]]),
        )
        .unwrap();
        let draws = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..draws {
            let w = simulate_step(&[0.0, 0.0], &model, &[0.0], &mut rng).unwrap();
            sum[0] += w[0];
            sum[1] += w[1];
        }
        let sigmas = [1.0_f64, 2.0_f64.sqrt()];
        for (s, sigma) in sum.iter().zip(sigmas) {
            let mean = s / draws as f64;
            assert!(
                mean.abs() < 4.0 * sigma / (draws as f64).sqrt(),
                "mean {mean}"
            );
        }
    }

    #[test]
    fn validation() {
        assert!(SystemModel::new(
            Matrix::identity(2),
            Matrix::zeros(2, 1),
            Matrix::identity(2),
            Matrix::diag(&[1.0, -1.0]).unwrap()
        )
        .is_err());
        assert!(Belief::new(vec![0.0], Matrix::identity(2)).is_err());
        assert!(DelayedMeasurement::new(
            Matrix::zeros(1, 2),
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            vec![0.0, 0.0]
        )
        .is_err());
    }
}
