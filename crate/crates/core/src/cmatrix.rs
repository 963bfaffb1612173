//! Dense square matrices over `f64` and `Complex64`.
//!
//! Row-major storage; every hot loop walks contiguous rows. The operator
//! matrices in this crate are perturbations of the identity of size at
//! most a few thousand, so plain partial-pivoting LU and a Householder/QL
//! symmetric eigensolver are adequate.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn modulus(self) -> f64;
    fn argument(self) -> f64;
    fn finite(self) -> bool;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn argument(self) -> f64 {
        if self < 0.0 {
            PI
        } else {
            0.0
        }
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn argument(self) -> f64 {
        self.arg()
    }
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

pub type RealMatrix = Matrix<f64>;
pub type ComplexMatrix = Matrix<Complex64>;

impl<T: Debug> Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.n, self.n)?;
        for i in 0..self.n {
            writeln!(f, "  {:?}", &self.data[i * self.n..(i + 1) * self.n])?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> T>(n: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Builds from row-major entries; `data.len()` must be a perfect square.
    pub fn from_row_major(data: Vec<T>) -> Self {
        let n = (data.len() as f64).sqrt().round() as usize;
        assert_eq!(n * n, data.len(), "row-major data is not square");
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    /// Leading principal `m x m` block.
    pub fn leading_block(&self, m: usize) -> Self {
        assert!(m <= self.n);
        Self::from_fn(m, |i, j| self[(i, j)])
    }

    /// Trailing principal block starting at row/column `start`.
    pub fn trailing_block(&self, start: usize) -> Self {
        assert!(start <= self.n);
        Self::from_fn(self.n - start, |i, j| self[(i + start, j + start)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let aik = self.data[i * n + k];
                if aik == T::zero() {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// `A A^T` (plain transpose).
    pub fn gram_rows(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let s = dot(self.row(i), self.row(j));
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn mat_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) {
        assert_eq!(self.n, other.n);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.modulus()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> T {
        (0..self.n).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.finite())
    }
}

impl RealMatrix {
    pub fn to_complex(&self) -> ComplexMatrix {
        ComplexMatrix {
            n: self.n,
            data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    /// `(A + A^T) / 2`
    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// Largest entry of `|A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.n {
            for j in 0..i {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }
}

impl ComplexMatrix {
    pub fn re(&self) -> RealMatrix {
        RealMatrix {
            n: self.n,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn im(&self) -> RealMatrix {
        RealMatrix {
            n: self.n,
            data: self.data.iter().map(|z| z.im).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Determinant as `exp(log_modulus) * exp(i arg)` with `arg` in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPolarDet {
    pub log_modulus: f64,
    pub arg: f64,
}

impl LogPolarDet {
    pub fn value(&self) -> Complex64 {
        Complex64::from_polar(self.log_modulus.exp(), self.arg)
    }

    /// Principal square root, same representation.
    pub fn sqrt(&self) -> LogPolarDet {
        LogPolarDet {
            log_modulus: 0.5 * self.log_modulus,
            arg: 0.5 * self.arg,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.log_modulus == f64::NEG_INFINITY
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// `P A = L U` with unit lower `L`; both factors share one matrix.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    swaps: usize,
    zero_pivot: Option<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Partial pivoting on modulus. An exactly zero pivot column is
    /// recorded rather than reported so that `det` can still return 0.
    pub fn factor(a: &Matrix<T>) -> Self {
        let n = a.n;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        let mut zero_pivot = None;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].modulus();
            for i in k + 1..n {
                let v = lu[(i, k)].modulus();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                zero_pivot.get_or_insert(k);
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let (head, tail) = lu.data.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n..];
            let inv = T::one() / pivot_row[k];
            for i in 0..n - k - 1 {
                let row = &mut tail[i * n..(i + 1) * n];
                let l = row[k] * inv;
                row[k] = l;
                if l == T::zero() {
                    continue;
                }
                for (x, &u) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                    *x -= l * u;
                }
            }
        }
        Self {
            lu,
            perm,
            swaps,
            zero_pivot,
        }
    }

    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn det(&self) -> LogPolarDet {
        if self.zero_pivot.is_some() {
            return LogPolarDet {
                log_modulus: f64::NEG_INFINITY,
                arg: 0.0,
            };
        }
        let mut log_modulus = 0.0;
        let mut arg = if self.swaps % 2 == 1 { PI } else { 0.0 };
        for k in 0..self.lu.n {
            let u = self.lu[(k, k)];
            log_modulus += u.modulus().ln();
            arg = wrap_angle(arg + u.argument());
        }
        LogPolarDet { log_modulus, arg }
    }

    fn check(&self) -> Result<()> {
        match self.zero_pivot {
            Some(pivot) => Err(Error::Singular { pivot }),
            None => Ok(()),
        }
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        self.check()?;
        let n = self.lu.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s = dot(&row[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
        Ok(x)
    }

    /// Solves `A^T x = b` (plain transpose).
    pub fn solve_transpose(&self, b: &[T]) -> Result<Vec<T>> {
        self.check()?;
        let n = self.lu.n;
        assert_eq!(b.len(), n);
        // U^T y = b, then L^T z = y, then x = P^T z
        let mut y = b.to_vec();
        for i in 0..n {
            let yi = y[i] / self.lu[(i, i)];
            y[i] = yi;
            let row = self.lu.row(i);
            for (t, &u) in y[i + 1..].iter_mut().zip(&row[i + 1..]) {
                *t -= u * yi;
            }
        }
        for i in (0..n).rev() {
            let yi = y[i];
            let row = self.lu.row(i);
            for (t, &l) in y[..i].iter_mut().zip(&row[..i]) {
                *t -= l * yi;
            }
        }
        let mut x = vec![T::zero(); n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix<T>> {
        self.check()?;
        let n = self.lu.n;
        // columns of the inverse are the rows of the inverse of A^T
        let mut inv_t = Matrix::zeros(n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve(&e)?;
            e[j] = T::zero();
            inv_t.row_mut(j).copy_from_slice(&col);
        }
        Ok(inv_t.transpose())
    }
}

pub fn lu_invert<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    Lu::factor(a).inverse()
}

pub fn lu_det<T: Scalar>(a: &Matrix<T>) -> LogPolarDet {
    Lu::factor(a).det()
}

/// Lower Cholesky factor `C` with `S = C C^T`.
pub fn cholesky(s: &RealMatrix) -> Result<RealMatrix> {
    let n = s.n;
    let mut c = RealMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let (ci, cj) = if i == j {
                let r = c.row(i);
                (r, r)
            } else {
                (c.row(i), c.row(j))
            };
            let v = s[(i, j)] - dot(&ci[..j], &cj[..j]);
            if i == j {
                if v.is_nan() || v <= 0.0 {
                    return Err(Error::NotPositiveDefinite {
                        index: i,
                        eigenvalue: v,
                    });
                }
                c[(i, i)] = v.sqrt();
            } else {
                c[(i, j)] = v / c[(j, j)];
            }
        }
    }
    Ok(c)
}

/// Solves `C X = M` for lower-triangular `C`, all columns at once.
pub fn lower_solve_matrix(c: &RealMatrix, m: &RealMatrix) -> RealMatrix {
    let n = c.n;
    assert_eq!(m.n, n);
    let mut x = m.clone();
    for i in 0..n {
        let (done, rest) = x.data.split_at_mut(i * n);
        let xi = &mut rest[..n];
        let crow = c.row(i);
        for k in 0..i {
            let cik = crow[k];
            if cik == 0.0 {
                continue;
            }
            let xk = &done[k * n..(k + 1) * n];
            for (t, &v) in xi.iter_mut().zip(xk) {
                *t -= cik * v;
            }
        }
        let inv = 1.0 / crow[i];
        for t in xi.iter_mut() {
            *t *= inv;
        }
    }
    x
}

/// `A = L D L^T` (plain transpose) of a complex symmetric matrix, without
/// pivoting. `L` is unit lower triangular.
#[derive(Debug, Clone)]
pub struct SymmetricLdl {
    l: ComplexMatrix,
    pub d: Vec<Complex64>,
}

impl SymmetricLdl {
    pub fn factor(a: &ComplexMatrix) -> Result<Self> {
        let n = a.n;
        let mut l = ComplexMatrix::identity(n);
        // row i of `ld` holds L[i][k] d[k]
        let mut ld = ComplexMatrix::zeros(n);
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..i {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &ld.row(j)[..j]);
                l[(i, j)] = s / d[j];
            }
            let li = &l.data[i * n..i * n + i];
            let ldi = &mut ld.data[i * n..i * n + i];
            let mut s = a[(i, i)];
            for k in 0..i {
                ldi[k] = li[k] * d[k];
                s -= li[k] * ldi[k];
            }
            if s == Complex64::new(0.0, 0.0) || !s.finite() {
                return Err(Error::Singular { pivot: i });
            }
            d[i] = s;
        }
        Ok(Self { l, d })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l.row(i)[..i], &x[..i]);
            x[i] -= s;
        }
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        for i in (0..n).rev() {
            let xi = x[i];
            for k in 0..i {
                x[k] -= self.l[(i, k)] * xi;
            }
        }
        x
    }

    /// Sum of the principal logarithms of the pivots.
    pub fn log_det(&self) -> Complex64 {
        self.d.iter().map(|d| d.ln()).sum()
    }
}

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: RealMatrix,
}

fn symmetric_tolerance_check(s: &RealMatrix) -> Result<()> {
    let scale = s.max_abs();
    if !s.is_finite() {
        return Err(Error::Numerical("non-finite entry in symmetric matrix".into()));
    }
    if s.asymmetry() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "matrix is not symmetric (asymmetry {:e}, scale {:e})",
            s.asymmetry(),
            scale
        )));
    }
    Ok(())
}

pub fn sym_eigen(s: &RealMatrix) -> Result<SymEigen> {
    symmetric_tolerance_check(s)?;
    let n = s.n;
    if n == 0 {
        return Ok(SymEigen {
            eigenvalues: vec![],
            eigenvectors: RealMatrix::zeros(0),
        });
    }
    // w holds V^T so that the column operations of the classical
    // algorithm become row operations
    let mut w = s.symmetrized();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    householder_tridiagonal(&mut w, &mut d, &mut e, true);
    tql(&mut d, &mut e, Some(&mut w))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap());
    let eigenvalues = order.iter().map(|&k| d[k]).collect();
    let eigenvectors = RealMatrix::from_fn(n, |i, k| w[(order[k], i)]);
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only, sorted descending.
pub fn sym_eigenvalues(s: &RealMatrix) -> Result<Vec<f64>> {
    symmetric_tolerance_check(s)?;
    let n = s.n;
    if n == 0 {
        return Ok(vec![]);
    }
    let mut w = s.symmetrized();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    householder_tridiagonal(&mut w, &mut d, &mut e, false);
    tql(&mut d, &mut e, None)?;
    d.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(d)
}

/// Eigenvalues of the symmetric tridiagonal matrix with the given diagonal
/// and off-diagonal (length `n - 1`), in ascending order.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(vec![]);
    }
    assert_eq!(off.len(), n - 1);
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[1..].copy_from_slice(off);
    tql(&mut d, &mut e, None)?;
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

// Householder reduction to tridiagonal form (EISPACK tred2 lineage).
// On entry `w` is the symmetric matrix, on exit (if `accumulate`) it holds
// the transposed orthogonal transformation. d/e receive the diagonal and
// the subdiagonal in e[1..].
fn householder_tridiagonal(w: &mut RealMatrix, d: &mut [f64], e: &mut [f64], accumulate: bool) {
    let n = w.n;
    for j in 0..n {
        d[j] = w[(j, n - 1)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = w[(j, i - 1)];
                w[(j, i)] = 0.0;
                w[(i, j)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                w[(i, j)] = f;
                let row = w.row(j);
                g = e[j] + row[j] * f;
                for k in j + 1..i {
                    g += row[k] * d[k];
                    e[k] += row[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let row = w.row_mut(j);
                for k in j..i {
                    row[k] -= f * e[k] + g * d[k];
                }
                d[j] = row[i - 1];
                row[i] = 0.0;
            }
        }
        d[i] = h;
    }

    if !accumulate {
        for i in 0..n {
            d[i] = w[(i, i)];
        }
        e[0] = 0.0;
        return;
    }

    for i in 0..n - 1 {
        w[(i, n - 1)] = w[(i, i)];
        w[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = w[(i + 1, k)] / h;
            }
            for j in 0..=i {
                let g = dot(&w.row(i + 1)[..=i], &w.row(j)[..=i]);
                let row = w.row_mut(j);
                for k in 0..=i {
                    row[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            w[(i + 1, k)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = w[(j, n - 1)];
        w[(j, n - 1)] = 0.0;
    }
    w[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit-shift QL on a symmetric tridiagonal matrix (EISPACK tql2
// lineage). `w`, when present, holds transposed eigenvectors.
fn tql(d: &mut [f64], e: &mut [f64], mut w: Option<&mut RealMatrix>) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let cap = 30 * n.max(1);
    let mut iterations = 0usize;
    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                iterations += 1;
                if iterations > cap {
                    return Err(Error::Numerical(format!(
                        "symmetric eigensolver did not converge within {cap} iterations"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(w) = w.as_deref_mut() {
                        let nn = w.n;
                        let (lo, hi) = w.data.split_at_mut((i + 1) * nn);
                        let vi = &mut lo[i * nn..];
                        let vi1 = &mut hi[..nn];
                        for (a, b) in vi.iter_mut().zip(vi1.iter_mut()) {
                            let t = *b;
                            *b = s * *a + c * t;
                            *a = c * *a - s * t;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    Ok(())
}

/// `S^p` for `p = +1/2` or `p = -1/2` and symmetric positive definite `S`.
pub fn spd_power(s: &RealMatrix, p: f64) -> Result<RealMatrix> {
    if p != 0.5 && p != -0.5 {
        return Err(Error::Domain(format!("spd_power supports p = +-1/2, got {p}")));
    }
    let eig = sym_eigen(s)?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0).abs();
    if let Some((index, &eigenvalue)) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, &l)| l <= 1e-12 * top || top == 0.0)
    {
        return Err(Error::NotPositiveDefinite { index, eigenvalue });
    }
    let n = s.n;
    let powered: Vec<f64> = eig.eigenvalues.iter().map(|l| l.powf(p)).collect();
    let q = &eig.eigenvectors;
    // Q diag(l^p) Q^T; scale the rows of Q^T so the product walks rows
    let qt = q.transpose();
    let mut scaled = qt.clone();
    for k in 0..n {
        let f = powered[k];
        for x in scaled.row_mut(k) {
            *x *= f;
        }
    }
    Ok(q.matmul(&scaled).symmetrized())
}
