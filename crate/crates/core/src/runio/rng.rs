use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::matcore::{cholesky, gauss_solve, matmul, matvec, symmetrize, Matrix, OpCounter};

/// Identifier of the generator behind [`RandomStream`].
pub const RNG_ALGORITHM: &str = "chacha8";

/// Deterministic random source: ChaCha8 keyed by a 64-bit seed, with a
/// 64-bit stream id selecting independent sub-streams.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    spare: Option<f64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            seed,
            stream,
            spare: None,
        }
    }

    /// A fresh, independent stream derived from this stream's seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        lo + (self.rng.next_u64() % span) as usize
    }

    /// Standard normal draw by the Box–Muller transform.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn standard_normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }
}

/// Zero-mean Gaussian draw with covariance `cov`, coloured by the Cholesky
/// factor. `cov` must be strictly positive definite.
pub fn gaussian_vector(rng: &mut RandomStream, cov: &Matrix) -> Result<Vec<f64>> {
    let factor = cholesky(cov)?;
    let z = rng.standard_normals(cov.rows());
    Ok(matvec(&factor, &z, &mut OpCounter::new())?)
}

/// Like [`gaussian_vector`], but an exactly zero covariance yields a zero
/// vector instead of a factorization error.
pub fn sample_noise(rng: &mut RandomStream, cov: &Matrix) -> Result<Vec<f64>> {
    if cov.is_zero() {
        Ok(vec![0.0; cov.rows()])
    } else {
        gaussian_vector(rng, cov)
    }
}

/// Matrix of independent standard normal entries.
pub fn random_matrix(rng: &mut RandomStream, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, rng.standard_normals(rows * cols)).expect("finite draws")
}

/// `A Aᵀ / n + I / 10` for a Gaussian `A`: symmetric, eigenvalues at least 0.1.
pub fn random_spd(rng: &mut RandomStream, n: usize) -> Matrix {
    let a = random_matrix(rng, n, n);
    let mut ctr = OpCounter::new();
    let mut out = matmul(&a, &a.transpose(), &mut ctr).expect("square");
    for r in 0..n {
        for c in 0..n {
            let v = out[(r, c)] / n as f64 + if r == c { 0.1 } else { 0.0 };
            out.set(r, c, v);
        }
    }
    symmetrize(&out).expect("square")
}

/// Perturbed identity with infinity-norm condition number below 1e3.
pub fn random_transition(rng: &mut RandomStream, n: usize) -> Matrix {
    let scale = 0.25 / (n as f64).sqrt();
    loop {
        let mut phi = random_matrix(rng, n, n);
        for r in 0..n {
            for c in 0..n {
                let v = phi[(r, c)] * scale + if r == c { 0.95 } else { 0.0 };
                phi.set(r, c, v);
            }
        }
        if condition_inf(&phi) < 1e3 {
            return phi;
        }
    }
}

/// `‖A‖∞ ‖A⁻¹‖∞`, infinite when the solve fails.
pub fn condition_inf(a: &Matrix) -> f64 {
    match gauss_solve(a, &Matrix::identity(a.rows()), &mut OpCounter::new()) {
        Ok(inv) => a.norm_inf() * inv.norm_inf(),
        Err(_) => f64::INFINITY,
    }
}
