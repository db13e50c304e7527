//! Dense row-major matrices with operation counting.
//!
//! Every arithmetic routine that contributes to filter cost takes an
//! [`OpCounter`]. The accounting convention: an inner product of length `q`
//! costs `q` multiplications and `q - 1` additions, a division counts as a
//! multiplication, and an elementwise add or subtract costs one addition.

use std::fmt;
use std::ops::Index;

use thiserror::Error;

pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid shape {rows}x{cols} for {len} entries")]
    InvalidShape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("{op}: expected a square matrix, got {shape:?}")]
    NotSquare { op: &'static str, shape: Shape },
    #[error("{op}: non-finite entry in result")]
    NonFinite { op: &'static str },
    #[error("singular matrix: pivot {pivot:e} at column {column} below threshold {threshold:e}")]
    Singular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
}

/// Multiplication and addition tallies for one counting scope.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpCounter {
    multiplications: u64,
    additions: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn multiplications(&self) -> u64 {
        self.multiplications
    }

    pub fn additions(&self) -> u64 {
        self.additions
    }

    pub fn flops(&self) -> u64 {
        self.multiplications + self.additions
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn record_mul(&mut self, count: usize) {
        self.multiplications += count as u64;
    }

    pub fn record_add(&mut self, count: usize) {
        self.additions += count as u64;
    }
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(r, c)])?;
            }
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        assert!(
            r < self.rows && c < self.cols,
            "index ({r},{c}) out of bounds"
        );
        &self.data[r * self.cols + c]
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(MatError::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MatError::NonFinite { op: "new" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, MatError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(MatError::InvalidShape {
                    rows: nrows,
                    cols: ncols,
                    len: data.len() + row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(nrows, ncols, data)
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Result<Self, MatError> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Self::new(n, n, data)
    }

    /// Column matrix holding `v`.
    pub fn column(v: &[f64]) -> Result<Self, MatError> {
        Self::new(v.len(), 1, v.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self[(r, c)]
    }

    /// Unchecked against finiteness; callers building matrices entry-wise
    /// validate through the producing operation.
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        assert!(
            r < self.rows && c < self.cols,
            "index ({r},{c}) out of bounds"
        );
        self.data[r * self.cols + c] = value;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(
            r0 + rows <= self.rows && c0 + cols <= self.cols,
            "block out of bounds"
        );
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let src = (r0 + r) * self.cols + c0;
            out.data[r * cols..(r + 1) * cols].copy_from_slice(&self.data[src..src + cols]);
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "block out of bounds"
        );
        for r in 0..block.rows {
            let dst = (r0 + r) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(r));
        }
    }

    pub fn hstack(left: &Matrix, right: &Matrix) -> Result<Matrix, MatError> {
        if left.rows != right.rows {
            return Err(MatError::DimensionMismatch {
                op: "hstack",
                left: left.shape(),
                right: right.shape(),
            });
        }
        let mut out = Matrix::zeros(left.rows, left.cols + right.cols);
        out.set_block(0, 0, left);
        out.set_block(0, left.cols, right);
        Ok(out)
    }

    pub fn vstack(top: &Matrix, bottom: &Matrix) -> Result<Matrix, MatError> {
        if top.cols != bottom.cols {
            return Err(MatError::DimensionMismatch {
                op: "vstack",
                left: top.shape(),
                right: bottom.shape(),
            });
        }
        let mut data = top.data.clone();
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }

    pub fn scale(&self, factor: f64, counter: &mut OpCounter) -> Result<Matrix, MatError> {
        counter.record_mul(self.data.len());
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        };
        out.check_finite("scale")
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// Largest entrywise absolute difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> Option<f64> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| (r + 1..self.cols).all(|c| self[(r, c)] == self[(c, r)]))
    }

    fn check_finite(self, op: &'static str) -> Result<Matrix, MatError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(MatError::NonFinite { op })
        }
    }
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}

/// Textbook product; `p*q*r` multiplications and `p*r*(q-1)` additions.
pub fn matmul(a: &Matrix, b: &Matrix, counter: &mut OpCounter) -> Result<Matrix, MatError> {
    if a.cols != b.rows {
        return Err(MatError::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (p, q, r) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(p, r);
    for i in 0..p {
        let arow = a.row(i);
        for j in 0..r {
            let mut acc = arow[0] * b.data[j];
            for (k, &av) in arow.iter().enumerate().take(q).skip(1) {
                acc += av * b.data[k * r + j];
            }
            out.data[i * r + j] = acc;
        }
    }
    counter.record_mul(p * q * r);
    counter.record_add(p * r * (q - 1));
    out.check_finite("matmul")
}

/// Matrix-vector product, counted like `matmul` with a single column.
pub fn matvec(a: &Matrix, x: &[f64], counter: &mut OpCounter) -> Result<Vec<f64>, MatError> {
    if a.cols != x.len() {
        return Err(MatError::DimensionMismatch {
            op: "matvec",
            left: a.shape(),
            right: (x.len(), 1),
        });
    }
    let out: Vec<f64> = (0..a.rows)
        .map(|i| {
            let row = a.row(i);
            let mut acc = row[0] * x[0];
            for k in 1..x.len() {
                acc += row[k] * x[k];
            }
            acc
        })
        .collect();
    counter.record_mul(a.rows * a.cols);
    counter.record_add(a.rows * (a.cols - 1));
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(MatError::NonFinite { op: "matvec" })
    }
}

fn elementwise(
    op: &'static str,
    a: &Matrix,
    b: &Matrix,
    counter: &mut OpCounter,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Matrix, MatError> {
    if a.shape() != b.shape() {
        return Err(MatError::DimensionMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    counter.record_add(a.data.len());
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    }
    .check_finite(op)
}

pub fn add(a: &Matrix, b: &Matrix, counter: &mut OpCounter) -> Result<Matrix, MatError> {
    elementwise("add", a, b, counter, |x, y| x + y)
}

pub fn sub(a: &Matrix, b: &Matrix, counter: &mut OpCounter) -> Result<Matrix, MatError> {
    elementwise("sub", a, b, counter, |x, y| x - y)
}

fn vec_elementwise(
    op: &'static str,
    a: &[f64],
    b: &[f64],
    counter: &mut OpCounter,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>, MatError> {
    if a.len() != b.len() {
        return Err(MatError::DimensionMismatch {
            op,
            left: (a.len(), 1),
            right: (b.len(), 1),
        });
    }
    counter.record_add(a.len());
    let out: Vec<f64> = a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(MatError::NonFinite { op })
    }
}

pub fn vec_add(a: &[f64], b: &[f64], counter: &mut OpCounter) -> Result<Vec<f64>, MatError> {
    vec_elementwise("vec_add", a, b, counter, |x, y| x + y)
}

pub fn vec_sub(a: &[f64], b: &[f64], counter: &mut OpCounter) -> Result<Vec<f64>, MatError> {
    vec_elementwise("vec_sub", a, b, counter, |x, y| x - y)
}

/// `(A + Aᵀ) / 2`. Exactly symmetric output; symmetric input is returned unchanged.
pub fn symmetrize(a: &Matrix) -> Result<Matrix, MatError> {
    if !a.is_square() {
        return Err(MatError::NotSquare {
            op: "symmetrize",
            shape: a.shape(),
        });
    }
    let n = a.rows;
    let mut out = a.clone();
    for r in 0..n {
        for c in r + 1..n {
            let v = 0.5 * (a.data[r * n + c] + a.data[c * n + r]);
            out.data[r * n + c] = v;
            out.data[c * n + r] = v;
        }
    }
    Ok(out)
}

/// Solves `A X = B` by Gaussian elimination with partial (row) pivoting.
///
/// A pivot whose magnitude is at or below `1e-12 * ‖A‖∞` is reported as
/// [`MatError::Singular`]. The counter records the multiplications,
/// divisions and additions actually performed.
pub fn gauss_solve(a: &Matrix, b: &Matrix, counter: &mut OpCounter) -> Result<Matrix, MatError> {
    if !a.is_square() {
        return Err(MatError::NotSquare {
            op: "gauss_solve",
            shape: a.shape(),
        });
    }
    if b.rows != a.rows {
        return Err(MatError::DimensionMismatch {
            op: "gauss_solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let m = a.rows;
    let p = b.cols;
    let threshold = 1e-12 * a.norm_inf();
    let mut lhs = a.data.clone();
    let mut rhs = b.data.clone();

    for k in 0..m {
        let (pivot_row, pivot_abs) =
            (k..m)
                .map(|i| (i, lhs[i * m + k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cand| if cand.1 > best.1 { cand } else { best },
                );
        if pivot_abs <= threshold {
            return Err(MatError::Singular {
                column: k,
                pivot: lhs[pivot_row * m + k],
                threshold,
            });
        }
        if pivot_row != k {
            for c in 0..m {
                lhs.swap(k * m + c, pivot_row * m + c);
            }
            for c in 0..p {
                rhs.swap(k * p + c, pivot_row * p + c);
            }
        }
        let pivot = lhs[k * m + k];
        for i in k + 1..m {
            let factor = lhs[i * m + k] / pivot;
            counter.record_mul(1);
            lhs[i * m + k] = 0.0;
            for c in k + 1..m {
                lhs[i * m + c] -= factor * lhs[k * m + c];
            }
            for c in 0..p {
                rhs[i * p + c] -= factor * rhs[k * p + c];
            }
            counter.record_mul(m - k - 1 + p);
            counter.record_add(m - k - 1 + p);
        }
    }

    for i in (0..m).rev() {
        let diag = lhs[i * m + i];
        for c in 0..p {
            let mut acc = rhs[i * p + c];
            for j in i + 1..m {
                acc -= lhs[i * m + j] * rhs[j * p + c];
            }
            rhs[i * p + c] = acc / diag;
        }
        counter.record_mul(p * (m - i - 1 + 1));
        counter.record_add(p * (m - i - 1));
    }

    Matrix {
        rows: m,
        cols: p,
        data: rhs,
    }
    .check_finite("gauss_solve")
}

/// Lower-triangular `L` with `L Lᵀ = A` for strictly positive definite `A`.
pub fn cholesky(a: &Matrix) -> Result<Matrix, MatError> {
    if !a.is_square() {
        return Err(MatError::NotSquare {
            op: "cholesky",
            shape: a.shape(),
        });
    }
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(MatError::NotPositiveDefinite {
                column: j,
                pivot: d,
            });
        }
        let d = d.sqrt();
        l.data[j * n + j] = d;
        for i in j + 1..n {
            let mut s = 0.5 * (a[(i, j)] + a[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l.data[i * n + j] = s / d;
        }
    }
    l.check_finite("cholesky")
}

/// Positive (semi)definiteness check.
///
/// Accepts when the asymmetry is at most `tol` (relative to the largest
/// entry, floored at 1) and every pivot of a diagonally pivoted symmetric
/// elimination is at least `-tol * trace(A) / n`. Once the largest remaining
/// pivot drops to that floor the remaining Schur complement must vanish to
/// the same tolerance, which admits singular covariances such as a freshly
/// cloned joint covariance.
pub fn is_spd(a: &Matrix, tol: f64) -> bool {
    if !a.is_square() || a.data.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let n = a.rows;
    let scale = a.max_abs().max(1.0);
    let asym = (0..n)
        .flat_map(|r| (r + 1..n).map(move |c| (r, c)))
        .fold(0.0_f64, |acc, (r, c)| {
            acc.max((a[(r, c)] - a[(c, r)]).abs())
        });
    if asym > tol * scale {
        return false;
    }
    let Ok(sym) = symmetrize(a) else {
        return false;
    };
    let floor = tol * (sym.trace() / n as f64).max(0.0);
    let mut s = sym.data;
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let (pos, &p) = remaining
            .iter()
            .enumerate()
            .max_by(|x, y| s[*x.1 * n + *x.1].total_cmp(&s[*y.1 * n + *y.1]))
            .expect("non-empty");
        let d = s[p * n + p];
        if d < -floor {
            return false;
        }
        if d <= floor {
            // Numerically zero remainder: every remaining entry must vanish too.
            return remaining
                .iter()
                .all(|&i| remaining.iter().all(|&j| s[i * n + j].abs() <= floor));
        }
        remaining.swap_remove(pos);
        for &i in &remaining {
            let lip = s[i * n + p] / d;
            for &j in &remaining {
                s[i * n + j] -= lip * s[p * n + j];
            }
        }
    }
    true
}
