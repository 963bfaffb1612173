//! The `(u, w)`-dependent operator matrices.
//!
//! `K_n` is real, so every adjoint below is a plain transpose.

use crate::cmatrix::{cholesky, lu_invert, ComplexMatrix, RealMatrix};
use crate::error::{Error, Result};
use crate::kernel::{KernelMatrices, ModelParams, TimeGrid};
use num_complex::Complex64;

/// A transform argument `(u, w)` with `0 <= Re u <= 1` and `Re w <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArgPoint {
    pub u: Complex64,
    pub w: Complex64,
}

impl ArgPoint {
    pub fn new(u: Complex64, w: Complex64) -> Result<Self> {
        if !(u.re.is_finite() && u.im.is_finite() && w.re.is_finite() && w.im.is_finite()) {
            return Err(Error::Domain("transform argument must be finite".into()));
        }
        if !(0.0..=1.0).contains(&u.re) {
            return Err(Error::Domain(format!("Re(u) must lie in [0, 1], got {}", u.re)));
        }
        if w.re > 0.0 {
            return Err(Error::Domain(format!("Re(w) must be <= 0, got {}", w.re)));
        }
        Ok(Self { u, w })
    }

    /// Log-price point `u = re + i im`, `w = 0`.
    pub fn log_price(re: f64, im: f64) -> Result<Self> {
        Self::new(Complex64::new(re, im), Complex64::new(0.0, 0.0))
    }

    /// Integrated-variance point `u = 0`, `w = re + i im`.
    pub fn int_var(re: f64, im: f64) -> Result<Self> {
        Self::new(Complex64::new(0.0, 0.0), Complex64::new(re, im))
    }

    pub fn conj(&self) -> Self {
        Self {
            u: self.u.conj(),
            w: self.w.conj(),
        }
    }
}

/// `a = w + (u^2 - u)/2`, `b = rho nu u` (no mean reversion).
pub fn build_ab(point: &ArgPoint, params: &ModelParams) -> (Complex64, Complex64) {
    let u = point.u;
    let a = point.w + 0.5 * (u * u - u);
    let b = params.rho * params.nu * u + params.kappa;
    (a, b)
}

fn resolvent_inverse(km: &KernelMatrices, b: Complex64) -> Result<ComplexMatrix> {
    let n = km.n();
    let l = ComplexMatrix::identity(n).sub(&km.k_n().to_complex().scaled(b));
    lu_invert(&l)
}

/// `(I - b K_n)^{-1} Sigma_{n,i} (I - b K_n^T)^{-1}`
pub fn build_sigma_tilde(km: &KernelMatrices, b: Complex64, i: usize) -> Result<ComplexMatrix> {
    let sigma = km.sigma(i)?;
    let linv = resolvent_inverse(km, b)?;
    Ok(linv.matmul(&sigma.to_complex()).matmul(&linv.transpose()))
}

/// `I - 2 a (T/n) SigmaTilde`
pub fn build_phi_n(sigma_tilde: &ComplexMatrix, a: Complex64, grid: &TimeGrid) -> ComplexMatrix {
    let n = sigma_tilde.dim();
    let mut phi = ComplexMatrix::identity(n);
    phi.axpy(-2.0 * a * grid.dt(), sigma_tilde);
    phi
}

/// `a (I - b K_n^T)^{-1} (I - 2 a (T/n) SigmaTilde_{n,i})^{-1} (I - b K_n)^{-1}`
pub fn build_psi_n_i(km: &KernelMatrices, a: Complex64, b: Complex64, i: usize) -> Result<ComplexMatrix> {
    let linv = resolvent_inverse(km, b)?;
    let sigma = km.sigma(i)?.to_complex();
    let st = linv.matmul(&sigma).matmul(&linv.transpose());
    let phi = build_phi_n(&st, a, km.grid());
    let phi_inv = lu_invert(&phi).map_err(|e| {
        Error::Domain(format!(
            "I - 2a(T/n)SigmaTilde is singular ({e}); the point lies outside the admissible set"
        ))
    })?;
    Ok(linv.transpose().matmul(&phi_inv).matmul(&linv).scaled(a))
}

/// `I - b(K + K^T) + b^2 K K^T`, i.e. `(I - bK)(I - bK)^T`.
pub(crate) fn resolvent_gram(k: &RealMatrix, kkt: &RealMatrix, b: Complex64) -> ComplexMatrix {
    let n = k.dim();
    let b2 = b * b;
    ComplexMatrix::from_fn(n, |r, c| {
        let id = if r == c { 1.0 } else { 0.0 };
        Complex64::new(id, 0.0) - b * (k[(r, c)] + k[(c, r)]) + b2 * kkt[(r, c)]
    })
}

/// `I - b(K_n + K_n^T) + b^2 K_n K_n^T - 2a (T/n) Sigma_n`
pub fn build_phi_tilde_n(km: &KernelMatrices, a: Complex64, b: Complex64) -> Result<ComplexMatrix> {
    let sigma = km.sigma(0)?;
    let mut m = resolvent_gram(km.k_n(), km.kkt(), b);
    let s = -2.0 * a * km.grid().dt();
    for r in 0..m.dim() {
        let srow = sigma.row(r);
        for (x, &v) in m.row_mut(r).iter_mut().zip(srow) {
            *x += s * v;
        }
    }
    Ok(m)
}

/// Checks that `Re(PhiTilde)` is symmetric positive definite.
pub fn check_re_positive_definite(phi_tilde: &ComplexMatrix) -> Result<()> {
    let re = phi_tilde.re();
    cholesky(&re).map(|_| ()).map_err(|e| {
        Error::Domain(format!(
            "Re(PhiTilde) is not positive definite ({e}); parameters lie outside the guaranteed region"
        ))
    })
}

/// All operator matrices at one point.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub a: Complex64,
    pub b: Complex64,
    pub sigma_tilde: ComplexMatrix,
    pub phi: ComplexMatrix,
    pub phi_tilde: ComplexMatrix,
    pub psi: ComplexMatrix,
}

impl OperatorSet {
    pub fn build(km: &KernelMatrices, point: &ArgPoint) -> Result<Self> {
        let (a, b) = build_ab(point, km.params());
        let sigma_tilde = build_sigma_tilde(km, b, 0)?;
        let phi = build_phi_n(&sigma_tilde, a, km.grid());
        let phi_tilde = build_phi_tilde_n(km, a, b)?;
        let psi = build_psi_n_i(km, a, b, 0)?;
        Ok(Self {
            a,
            b,
            sigma_tilde,
            phi,
            phi_tilde,
            psi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmatrix::{lu_det, sym_eigen, sym_eigenvalues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn params(rho: f64) -> ModelParams {
        ModelParams {
            kappa: 0.0,
            nu: 0.3,
            theta: -0.1,
            rho,
            x0: -0.05,
            hurst: 0.3,
            s0: 1.0,
            maturity: 1.0,
        }
    }

    fn km(n: usize, rho: f64) -> KernelMatrices {
        KernelMatrices::new(&params(rho), TimeGrid::new(n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn arg_point_validation() {
        assert!(ArgPoint::new(c(0.5, 3.0), c(0.0, 0.0)).is_ok());
        assert!(ArgPoint::new(c(1.1, 0.0), c(0.0, 0.0)).is_err());
        assert!(ArgPoint::new(c(-0.1, 0.0), c(0.0, 0.0)).is_err());
        assert!(ArgPoint::new(c(0.5, 0.0), c(0.1, 0.0)).is_err());
        assert!(ArgPoint::new(c(0.5, f64::NAN), c(0.0, 0.0)).is_err());
    }

    #[test]
    fn ab_examples() {
        let p = params(-0.9);
        let (a, b) = build_ab(&ArgPoint::log_price(0.0, 0.0).unwrap(), &p);
        assert_eq!((a, b), (c(0.0, 0.0), c(0.0, 0.0)));
        let (a, b) = build_ab(&ArgPoint::log_price(1.0, 0.0).unwrap(), &p);
        assert_eq!(a, c(0.0, 0.0));
        assert!((b - c(-0.27, 0.0)).norm() < 1e-16);
        let v = 2.5;
        let (a, _) = build_ab(&ArgPoint::log_price(0.5, v).unwrap(), &p);
        assert!((a - c(-(v * v + 0.25) / 2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sigma_tilde_limits() {
        let k = km(6, -0.5);
        let s0 = k.sigma(0).unwrap().to_complex();
        assert!(build_sigma_tilde(&k, c(0.0, 0.0), 0).unwrap().sub(&s0).max_abs() < 1e-16);
        // real b gives a real symmetric positive semidefinite matrix
        let st = build_sigma_tilde(&k, c(-0.2, 0.0), 0).unwrap();
        assert_eq!(st.im().max_abs(), 0.0);
        assert!(st.re().asymmetry() < 1e-15);
        let e = sym_eigenvalues(&st.re()).unwrap();
        assert!(*e.last().unwrap() > -1e-12);
    }

    #[test]
    fn sigma_tilde_nilpotent_series() {
        let k = km(3, -0.5);
        let b = c(0.0, 0.1);
        let kn = k.k_n().to_complex();
        let k2 = kn.matmul(&kn);
        let left = ComplexMatrix::identity(3).add(&kn.scaled(b)).add(&k2.scaled(b * b));
        let want = left.matmul(&k.sigma(0).unwrap().to_complex()).matmul(&left.transpose());
        let got = build_sigma_tilde(&k, b, 0).unwrap();
        assert!(got.sub(&want).max_abs() < 1e-15);
    }

    #[test]
    fn phi_n_examples() {
        let g = TimeGrid::new(4, 1.0).unwrap();
        let st = ComplexMatrix::from_fn(4, |i, j| c((i + j) as f64, 0.5));
        assert_eq!(build_phi_n(&st, c(0.0, 0.0), &g), ComplexMatrix::identity(4));
        let a = c(-0.7, 1.2);
        let phi = build_phi_n(&st, a, &g);
        for i in 0..4 {
            for j in 0..4 {
                let id = if i == j { 1.0 } else { 0.0 };
                let want = c(id, 0.0) - 2.0 * a * 0.25 * st[(i, j)];
                assert!((phi[(i, j)] - want).norm() < 1e-15);
            }
        }
        let g1 = TimeGrid::new(1, 2.0).unwrap();
        let one = ComplexMatrix::from_fn(1, |_, _| c(0.3, 0.0));
        assert!((build_phi_n(&one, a, &g1)[(0, 0)] - (1.0 - 2.0 * a * 2.0 * 0.3)).norm() < 1e-15);
    }

    fn inverse3(m: &ComplexMatrix) -> ComplexMatrix {
        let e = |i: usize, j: usize| m[(i % 3, j % 3)];
        let det = e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1))
            - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
            + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0));
        ComplexMatrix::from_fn(3, |j, i| {
            (e(i + 1, j + 1) * e(i + 2, j + 2) - e(i + 1, j + 2) * e(i + 2, j + 1)) / det
        })
    }

    #[test]
    fn psi_examples() {
        let k = km(5, -0.5);
        assert_eq!(
            build_psi_n_i(&k, c(0.0, 0.0), c(0.1, 0.2), 0).unwrap().max_abs(),
            0.0
        );
        let k1 = km(1, 0.0);
        // n = 1: the covariance of the single left knot t_0 = 0 vanishes
        let a = c(-0.4, 0.3);
        let psi = build_psi_n_i(&k1, a, c(0.0, 0.0), 0).unwrap();
        let s11 = k1.sigma(0).unwrap()[(0, 0)];
        assert!((psi[(0, 0)] - a / (1.0 - 2.0 * a * 1.0 * s11)).norm() < 1e-15);

        let k3 = km(3, -0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let u = c(rng.random_range(0.0..1.0), rng.random_range(-5.0..5.0));
            let w = c(-rng.random_range(0.0..1.0), rng.random_range(-5.0..5.0));
            let p = ArgPoint::new(u, w).unwrap();
            let (a, b) = build_ab(&p, k3.params());
            let l = ComplexMatrix::identity(3).sub(&k3.k_n().to_complex().scaled(b));
            let li = inverse3(&l);
            let st = li.matmul(&k3.sigma(0).unwrap().to_complex()).matmul(&li.transpose());
            let phi = ComplexMatrix::identity(3).sub(&st.scaled(2.0 * a / 3.0));
            let want = li.transpose().matmul(&inverse3(&phi)).matmul(&li).scaled(a);
            let got = build_psi_n_i(&k3, a, b, 0).unwrap();
            assert!(got.sub(&want).max_abs() < 1e-12 * want.max_abs().max(1.0));
        }
    }

    #[test]
    fn phi_tilde_examples() {
        let k = km(8, -0.7);
        assert_eq!(
            build_phi_tilde_n(&k, c(0.0, 0.0), c(0.0, 0.0)).unwrap(),
            ComplexMatrix::identity(8)
        );
        let a = c(-0.8, 0.0);
        let pt = build_phi_tilde_n(&k, a, c(0.0, 0.0)).unwrap();
        let want = ComplexMatrix::identity(8).sub(&k.sigma(0).unwrap().to_complex().scaled(2.0 * a / 8.0));
        assert!(pt.sub(&want).max_abs() < 1e-15);
        assert_eq!(pt.im().max_abs(), 0.0);
        assert!(sym_eigen(&pt.re()).unwrap().eigenvalues.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn determinant_identity_and_definiteness() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [5usize, 20, 60] {
            let k = km(n, -0.9);
            for _ in 0..8 {
                let u = c(rng.random_range(0.0..=1.0), rng.random_range(-20.0..20.0));
                let w = c(-rng.random_range(0.0..2.0), rng.random_range(-20.0..20.0));
                let p = ArgPoint::new(u, w).unwrap();
                let ops = OperatorSet::build(&k, &p).unwrap();
                let d1 = lu_det(&ops.phi).value();
                let d2 = lu_det(&ops.phi_tilde).value();
                assert!((d1 - d2).norm() <= 1e-9 * d1.norm(), "n={n} {p:?}");
                assert!(ops.phi_tilde.re().asymmetry() < 1e-12);
                assert!(ops.phi_tilde.im().asymmetry() < 1e-12);
                check_re_positive_definite(&ops.phi_tilde).unwrap();
                // Psi_{n,0} = a PhiTilde^{-1}
                let alt = lu_invert(&ops.phi_tilde).unwrap().scaled(ops.a);
                assert!(alt.sub(&ops.psi).max_abs() <= 1e-9 * ops.psi.max_abs().max(1e-300));
            }
        }
    }

    #[test]
    fn real_b_eigen_product() {
        let k = km(40, 0.0);
        let p = ArgPoint::new(c(0.3, 4.0), c(-0.2, 7.0)).unwrap();
        let ops = OperatorSet::build(&k, &p).unwrap();
        assert_eq!(ops.b, c(0.0, 0.0));
        let lam = sym_eigenvalues(&ops.sigma_tilde.re().scaled(1.0 / 40.0)).unwrap();
        let prod = lam.iter().fold(c(1.0, 0.0), |acc, &l| acc * (1.0 - 2.0 * ops.a * l));
        let det = lu_det(&ops.phi).value();
        assert!((det - prod).norm() <= 1e-9 * prod.norm());
    }
}
