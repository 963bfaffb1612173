//! Fourier–Laplace transform of `(log S_T, int_0^T X_s^2 ds)`.
//!
//! The sign-corrected determinant routes share [`det_core`]: one complex LU
//! of `PhiTilde = (I - bK)(I - bK)^T - 2a(T/n) Sigma_n`, which has the same
//! determinant as `Phi_n` (the resolvent factors are unit triangular) and
//! gives the inner product through `Psi_{n,0} = a PhiTilde^{-1}`. The
//! prefactor-free route factors `PhiTilde = L D L^T` instead; every pivot of
//! `D` lies in the right half-plane, so the principal logs of the pivots sum
//! to the continuous branch of `log det PhiTilde`.

use crate::cmatrix::{
    cholesky, dot, lower_solve_matrix, sym_eigenvalues, wrap_angle, ComplexMatrix, LogPolarDet, Lu, RealMatrix,
    SymmetricLdl,
};
use crate::crossing::default_lipschitz;
use crate::error::{Error, Result};
use crate::kernel::{KernelMatrices, TimeGrid};
use crate::operators::{build_ab, build_phi_tilde_n, resolvent_gram, ArgPoint};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Trace,
    DetRaw,
    Hybrid,
    Lipschitz,
    PrefactorFree,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Trace,
        Method::DetRaw,
        Method::Hybrid,
        Method::Lipschitz,
        Method::PrefactorFree,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Trace => "trace",
            Method::DetRaw => "det_raw",
            Method::Hybrid => "hybrid",
            Method::Lipschitz => "lipschitz",
            Method::PrefactorFree => "prefactor_free",
        }
    }

    /// Methods whose value is continuous in the argument.
    pub fn is_corrected(&self) -> bool {
        !matches!(self, Method::DetRaw)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown transform method '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `log |det Phi_n|`
    pub det_log_modulus: f64,
    /// Principal argument of `det Phi_n`.
    pub det_arg: f64,
    /// `(T/n) g^T Psi_{n,0} g`
    pub inner: Complex64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformValue {
    pub value: Complex64,
    pub k: Option<i64>,
    pub method: Method,
    pub n_used: usize,
    pub diagnostics: Diagnostics,
}

/// Scan variable: `u = fixed_real + i x` (with `w = 0`) or
/// `w = fixed_real + i x` (with `u = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    U,
    W,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::U => "u",
            Axis::W => "w",
        })
    }
}

impl Axis {
    pub fn point(&self, fixed_real: f64, x: f64) -> Result<ArgPoint> {
        match self {
            Axis::U => ArgPoint::log_price(fixed_real, x),
            Axis::W => ArgPoint::int_var(fixed_real, x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub axis: Axis,
    pub fixed_real: f64,
    pub upper: f64,
    pub l_theta: f64,
}

impl ScanSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_theta > 0.0 && self.l_theta.is_finite()) {
            return Err(Error::Config(format!(
                "Lipschitz constant must be positive and finite, got {}",
                self.l_theta
            )));
        }
        if !(self.upper >= 0.0 && self.upper.is_finite()) {
            return Err(Error::Config(format!("scan upper limit must be >= 0, got {}", self.upper)));
        }
        self.axis.point(self.fixed_real, 0.0).map(|_| ())
    }

    fn key(&self) -> (Axis, u64, u64, u64) {
        (
            self.axis,
            self.fixed_real.to_bits(),
            self.upper.to_bits(),
            self.l_theta.to_bits(),
        )
    }
}

/// Precomputed rotation counts on the grid `u_i = i pi / L`, `u_N = U`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzTable {
    pub nodes: Vec<f64>,
    pub args: Vec<f64>,
    pub k: Vec<i64>,
}

/// Largest table the Lipschitz precomputation will build.
pub const MAX_LIPSCHITZ_NODES: usize = 2_000_000;

/// The jump rule: a wrap of the principal argument by more than `pi`
/// between neighbours is one crossing of the negative real axis.
pub fn jump_step(prev_arg: f64, next_arg: f64) -> i64 {
    let d = next_arg - prev_arg;
    if d > PI {
        -1
    } else if d < -PI {
        1
    } else {
        0
    }
}

fn sign_factor(k: i64) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Shared determinant data at one point.
#[derive(Debug, Clone)]
pub struct DetCore {
    pub a: Complex64,
    pub b: Complex64,
    pub phi_tilde: ComplexMatrix,
    pub det: LogPolarDet,
    pub inner: Complex64,
}

pub fn det_core(km: &KernelMatrices, point: &ArgPoint) -> Result<DetCore> {
    let (a, b) = build_ab(point, km.params());
    let phi_tilde = build_phi_tilde_n(km, a, b)?;
    let lu = Lu::factor(&phi_tilde);
    let det = lu.det();
    if det.is_zero() || !det.log_modulus.is_finite() {
        return Err(Error::Domain(format!(
            "det(Phi_n) vanishes at u = {}, w = {}",
            point.u, point.w
        )));
    }
    let g: Vec<Complex64> = km.g_n().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let inner = if a == Complex64::new(0.0, 0.0) {
        Complex64::new(0.0, 0.0)
    } else {
        let x = lu.solve(&g)?;
        km.grid().dt() * a * dot(&g, &x)
    };
    Ok(DetCore {
        a,
        b,
        phi_tilde,
        det,
        inner,
    })
}

/// `det Phi_n` alone, in log-polar form.
pub fn det_phi(km: &KernelMatrices, point: &ArgPoint) -> Result<LogPolarDet> {
    let (a, b) = build_ab(point, km.params());
    let det = Lu::factor(&build_phi_tilde_n(km, a, b)?).det();
    if det.is_zero() || !det.log_modulus.is_finite() {
        return Err(Error::Domain(format!(
            "det(Phi_n) vanishes at u = {}, w = {}",
            point.u, point.w
        )));
    }
    Ok(det)
}

fn diagnostics(core: &DetCore) -> Diagnostics {
    Diagnostics {
        det_log_modulus: core.det.log_modulus,
        det_arg: core.det.arg,
        inner: core.inner,
        warnings: Vec::new(),
    }
}

/// `exp(inner) / sqrt(det)` with the principal root.
fn principal_value(core: &DetCore) -> Complex64 {
    let s = core.det.sqrt();
    (core.inner - Complex64::new(s.log_modulus, s.arg)).exp()
}

pub fn eval_det_raw(km: &KernelMatrices, point: &ArgPoint) -> Result<TransformValue> {
    let core = det_core(km, point)?;
    Ok(TransformValue {
        value: principal_value(&core),
        k: None,
        method: Method::DetRaw,
        n_used: km.n(),
        diagnostics: diagnostics(&core),
    })
}

/// `phi_n = -(T/n) sum_i Tr(Psi_{n,i} SigmaDot_{n,i})`.
///
/// `SigmaDot_{n,i} = -nu^2 p q^T` is rank one and both it and `Sigma_{n,i}`
/// live on the indices `>= i`, so each term is one linear solve with the
/// corresponding block of `(I - bK)(I - bK)^T - 2a(T/n) Sigma_{n,i}`.
pub fn phi_n_trace(km: &KernelMatrices, a: Complex64, b: Complex64) -> Result<Complex64> {
    let n = km.n();
    let c = km.grid().dt();
    let nu2 = km.params().nu * km.params().nu;
    if a == Complex64::new(0.0, 0.0) || nu2 == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let terms: Vec<Result<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let blk = km.trace_block(i)?;
            let mut p_mat = resolvent_gram(&blk.k, &blk.kkt, b);
            p_mat.axpy(-2.0 * a * c, &blk.sigma.to_complex());
            let lu = Lu::factor(&p_mat);
            let rhs: Vec<Complex64> = blk.p.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let x = lu.solve(&rhs).map_err(|e| {
                Error::Domain(format!("Psi_{{n,{i}}} is singular ({e})"))
            })?;
            let q: Vec<Complex64> = blk.q.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            Ok(dot(&q, &x))
        })
        .collect();
    let mut sum = Complex64::new(0.0, 0.0);
    for t in terms {
        sum += t?;
    }
    Ok(c * nu2 * a * sum)
}

pub fn eval_trace(km: &KernelMatrices, point: &ArgPoint) -> Result<TransformValue> {
    let core = det_core(km, point)?;
    let phi = phi_n_trace(km, core.a, core.b)?;
    Ok(TransformValue {
        value: (phi + core.inner).exp(),
        k: None,
        method: Method::Trace,
        n_used: km.n(),
        diagnostics: diagnostics(&core),
    })
}

/// `log det(sqrt(Phi_n))` via `Re(PhiTilde) = C C^T`: the spectrum of
/// `C^{-1} Im(PhiTilde) C^{-T}` equals that of
/// `Re^{-1/2} Im Re^{-1/2}`, and `det Re = prod C_ii^2`.
pub fn log_det_sqrt_spectral(phi_tilde: &ComplexMatrix) -> Result<Complex64> {
    let c = real_part_cholesky(phi_tilde)?;
    let y = lower_solve_matrix(&c, &phi_tilde.im());
    let bmat = lower_solve_matrix(&c, &y.transpose()).symmetrized();
    let lambda = sym_eigenvalues(&bmat)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..c.dim() {
        acc.re += c[(i, i)].ln();
    }
    for &l in &lambda {
        acc += Complex64::new(0.25 * l.mul_add(l, 1.0).ln(), 0.5 * l.atan());
    }
    Ok(acc)
}

fn real_part_cholesky(phi_tilde: &ComplexMatrix) -> Result<RealMatrix> {
    cholesky(&phi_tilde.re()).map_err(|e| Error::Domain(format!("Re(PhiTilde) is not positive definite ({e})")))
}

/// `PhiTilde = L D L^T` for positive definite `Re(PhiTilde)`. The pivot
/// `d_k` is the ratio of consecutive leading minors; by interlacing of the
/// leading blocks of `C^{-1} Im(PhiTilde) C^{-T}` its argument lies in
/// `(-pi/2, pi/2)`, so the principal logarithms of the pivots add up to
/// the same branch as [`log_det_sqrt_spectral`].
fn branch_ldl(phi_tilde: &ComplexMatrix) -> Result<SymmetricLdl> {
    real_part_cholesky(phi_tilde)?;
    let ldl = SymmetricLdl::factor(phi_tilde)?;
    if let Some(k) = ldl.d.iter().position(|d| !(d.re > 0.0)) {
        return Err(Error::Numerical(format!(
            "pivot {k} of PhiTilde = L D L^T left the right half-plane: {}",
            ldl.d[k]
        )));
    }
    Ok(ldl)
}

/// `log det(sqrt(Phi_n))` on the branch that is continuous in the argument.
pub fn log_det_sqrt(phi_tilde: &ComplexMatrix) -> Result<Complex64> {
    Ok(0.5 * branch_ldl(phi_tilde)?.log_det())
}

pub fn eval_prefactor_free(km: &KernelMatrices, point: &ArgPoint) -> Result<TransformValue> {
    let (a, b) = build_ab(point, km.params());
    let ldl = branch_ldl(&build_phi_tilde_n(km, a, b)?)?;
    let log_det = ldl.log_det();
    let inner = if a == Complex64::new(0.0, 0.0) {
        Complex64::new(0.0, 0.0)
    } else {
        let g: Vec<Complex64> = km.g_n().iter().map(|&x| Complex64::new(x, 0.0)).collect();
        km.grid().dt() * a * dot(&g, &ldl.solve(&g))
    };
    Ok(TransformValue {
        value: (inner - 0.5 * log_det).exp(),
        k: None,
        method: Method::PrefactorFree,
        n_used: km.n(),
        diagnostics: Diagnostics {
            det_log_modulus: log_det.re,
            det_arg: wrap_angle(log_det.im),
            inner,
            warnings: Vec::new(),
        },
    })
}

/// `phi~_n = (T/n) int_0^1 Tr(Psi_{n,s} Sigma_n) ds` with
/// `Psi_{n,s} = a ((I - bK)(I - bK)^T - 2 s a (T/n) Sigma_n)^{-1}`.
pub fn phi_tilde_n(km: &KernelMatrices, point: &ArgPoint, tol: f64) -> Result<Complex64> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("quadrature tolerance must be positive, got {tol}")));
    }
    let (a, b) = build_ab(point, km.params());
    if a == Complex64::new(0.0, 0.0) {
        return Ok(a);
    }
    let c = km.grid().dt();
    let gram = resolvent_gram(km.k_n(), km.kkt(), b);
    let sigma = km.sigma(0)?.to_complex();
    let n = km.n();
    let f = |s: f64| -> Result<Complex64> {
        let mut m = gram.clone();
        m.axpy(-2.0 * s * a * c, &sigma);
        let lu = Lu::factor(&m);
        let mut tr = Complex64::new(0.0, 0.0);
        let st = sigma.transpose();
        for j in 0..n {
            // Sigma is symmetric, so row j is column j
            let x = lu.solve(st.row(j))?;
            tr += x[j];
        }
        Ok(c * a * tr)
    };
    adaptive_simpson(&f, 0.0, 1.0, tol, 30)
}

fn adaptive_simpson<F: Fn(f64) -> Result<Complex64>>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<Complex64> {
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> Result<Complex64>>(
    f: &F,
    a: f64,
    b: f64,
    fa: Complex64,
    fm: Complex64,
    fb: Complex64,
    whole: Complex64,
    tol: f64,
    depth: u32,
) -> Result<Complex64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::Numerical("non-finite integrand in phi_tilde_n".into()));
    }
    if delta.norm() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numerical(format!(
            "adaptive Simpson did not converge on [{a}, {b}] (error estimate {:e})",
            delta.norm() / 15.0
        )));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// `pi k = arg(det)/2 + Im(phi)`, given `det ~ exp(-2 phi)`.
pub fn rotation_count(det: &LogPolarDet, phi: Complex64) -> Result<i64> {
    let gap = (det.log_modulus + 2.0 * phi.re).abs();
    if !(gap <= 1e-6) {
        return Err(Error::Inconsistent(format!(
            "log|det| = {} but -2 Re(phi) = {}",
            det.log_modulus,
            -2.0 * phi.re
        )));
    }
    let k = (0.5 * det.arg + phi.im) / PI;
    let r = k.round();
    if (k - r).abs() > 1e-6 {
        return Err(Error::Inconsistent(format!(
            "(arg/2 + Im phi)/pi = {k} is not an integer"
        )));
    }
    Ok(r as i64)
}

/// Options for [`TransformEngine::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_coarse: usize,
    pub scan: Option<ScanSpec>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_coarse: 40,
            scan: None,
        }
    }
}

/// Evaluates the transform by any method over shared kernel matrices,
/// caching the coarse matrices of the hybrid method and the Lipschitz
/// crossing tables.
#[derive(Debug)]
pub struct TransformEngine {
    km: Arc<KernelMatrices>,
    /// `|xi_coarse|` below which an ambiguous hybrid sign test is reported.
    pub hybrid_floor: f64,
    coarse: Mutex<HashMap<usize, Arc<KernelMatrices>>>,
    tables: Mutex<HashMap<(Axis, u64, u64, u64), Arc<LipschitzTable>>>,
}

impl TransformEngine {
    pub fn new(km: Arc<KernelMatrices>) -> Self {
        Self {
            km,
            hybrid_floor: 1e-12,
            coarse: Mutex::new(HashMap::new()),
            tables: Mutex::new(HashMap::new()),
        }
    }

    pub fn kernel_matrices(&self) -> &Arc<KernelMatrices> {
        &self.km
    }

    pub fn n(&self) -> usize {
        self.km.n()
    }

    pub fn trace(&self, point: &ArgPoint) -> Result<TransformValue> {
        eval_trace(&self.km, point)
    }

    pub fn det_raw(&self, point: &ArgPoint) -> Result<TransformValue> {
        eval_det_raw(&self.km, point)
    }

    pub fn prefactor_free(&self, point: &ArgPoint) -> Result<TransformValue> {
        eval_prefactor_free(&self.km, point)
    }

    /// Kernel matrices at `n_coarse` points; built outside the lock so that
    /// a racing builder only costs duplicate work.
    pub fn coarse_matrices(&self, n_coarse: usize) -> Result<Arc<KernelMatrices>> {
        if n_coarse < 2 || n_coarse > self.n() {
            return Err(Error::Config(format!(
                "n_coarse must lie in [2, {}], got {n_coarse}",
                self.n()
            )));
        }
        if n_coarse == self.n() {
            return Ok(self.km.clone());
        }
        if let Some(k) = self.coarse.lock().unwrap().get(&n_coarse) {
            return Ok(k.clone());
        }
        let grid = TimeGrid::new(n_coarse, self.km.grid().maturity)?;
        let built = Arc::new(KernelMatrices::with_kernel(
            self.km.params(),
            grid,
            self.km.kernel_arc(),
        )?);
        let mut map = self.coarse.lock().unwrap();
        Ok(map.entry(n_coarse).or_insert(built).clone())
    }

    /// Sign-corrects `det_raw` against the trace formula on a coarse grid:
    /// flip iff both the real and the imaginary parts disagree in sign.
    pub fn hybrid(&self, point: &ArgPoint, n_coarse: usize) -> Result<TransformValue> {
        let coarse_km = self.coarse_matrices(n_coarse)?;
        let raw = eval_det_raw(&self.km, point)?;
        let coarse = eval_trace(&coarse_km, point)?.value;
        let v = raw.value;
        let re = v.re * coarse.re;
        let im = v.im * coarse.im;
        let mut diagnostics = raw.diagnostics;
        let flip = if (re < 0.0) == (im < 0.0) {
            re < 0.0
        } else {
            // the componentwise test is split; fall back to the half-plane test
            let half_plane = (v * coarse.conj()).re < 0.0;
            diagnostics.warnings.push(format!(
                "split hybrid sign test at |xi_coarse| = {:e}; half-plane test gives flip = {half_plane}",
                coarse.norm()
            ));
            if coarse.norm() < self.hybrid_floor {
                diagnostics.warnings.push(format!(
                    "ambiguous hybrid sign test: |xi_coarse| = {:e} below floor {:e}",
                    coarse.norm(),
                    self.hybrid_floor
                ));
            }
            half_plane
        };
        Ok(TransformValue {
            value: if flip { -v } else { v },
            k: Some(i64::from(flip)),
            method: Method::Hybrid,
            n_used: self.n(),
            diagnostics,
        })
    }

    /// Crossing table of the scan, computed once and then shared.
    pub fn lipschitz_table(&self, scan: &ScanSpec) -> Result<Arc<LipschitzTable>> {
        scan.validate()?;
        let key = scan.key();
        if let Some(t) = self.tables.lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let spacing = PI / scan.l_theta;
        let steps = (scan.upper / spacing).ceil();
        if steps > MAX_LIPSCHITZ_NODES as f64 {
            return Err(Error::Config(format!(
                "Lipschitz scan needs {steps} nodes (limit {MAX_LIPSCHITZ_NODES})"
            )));
        }
        let big_n = steps as usize;
        let nodes: Vec<f64> = (0..=big_n)
            .map(|i| if i < big_n { i as f64 * spacing } else { scan.upper })
            .collect();
        let args: Vec<f64> = nodes
            .par_iter()
            .map(|&x| {
                let p = scan.axis.point(scan.fixed_real, x)?;
                Ok(det_phi(&self.km, &p)?.arg)
            })
            .collect::<Result<_>>()?;
        let mut k = vec![0i64; nodes.len()];
        for i in 1..nodes.len() {
            k[i] = k[i - 1] + jump_step(args[i - 1], args[i]);
        }
        let table = Arc::new(LipschitzTable { nodes, args, k });
        let mut map = self.tables.lock().unwrap();
        Ok(map.entry(key).or_insert(table).clone())
    }

    /// `det_raw` corrected by the rotation count of the crossing table.
    /// Negative nodes use conjugate symmetry.
    pub fn lipschitz(&self, scan: &ScanSpec, node: f64) -> Result<TransformValue> {
        scan.validate()?;
        if !node.is_finite() || node.abs() > scan.upper {
            return Err(Error::Domain(format!(
                "node {node} outside the scan range [0, {}]",
                scan.upper
            )));
        }
        if node < 0.0 {
            let mut v = self.lipschitz(scan, -node)?;
            v.value = v.value.conj();
            v.diagnostics.det_arg = -v.diagnostics.det_arg;
            v.diagnostics.inner = v.diagnostics.inner.conj();
            return Ok(v);
        }
        let table = self.lipschitz_table(scan)?;
        let point = scan.axis.point(scan.fixed_real, node)?;
        let raw = eval_det_raw(&self.km, &point)?;
        let i = ((node * scan.l_theta / PI).floor() as usize).min(table.nodes.len() - 1);
        let k = table.k[i] + jump_step(table.args[i], raw.diagnostics.det_arg);
        Ok(TransformValue {
            value: sign_factor(k) * raw.value,
            k: Some(k),
            method: Method::Lipschitz,
            n_used: self.n(),
            diagnostics: raw.diagnostics,
        })
    }

    /// Evaluates `method` at `point`; a non-finite value is an error.
    pub fn evaluate(&self, method: Method, point: &ArgPoint, opts: &EvalOptions) -> Result<TransformValue> {
        let v = self.evaluate_unchecked(method, point, opts)?;
        if v.value.re.is_finite() && v.value.im.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!(
                "{method} value is not finite at u = {}, w = {}",
                point.u, point.w
            )))
        }
    }

    fn evaluate_unchecked(&self, method: Method, point: &ArgPoint, opts: &EvalOptions) -> Result<TransformValue> {
        match method {
            Method::Trace => self.trace(point),
            Method::DetRaw => self.det_raw(point),
            Method::Hybrid => self.hybrid(point, opts.n_coarse),
            Method::PrefactorFree => self.prefactor_free(point),
            Method::Lipschitz => {
                let scan = opts.scan.ok_or_else(|| {
                    Error::Config("the lipschitz method needs a scan specification".into())
                })?;
                let (var, other) = match scan.axis {
                    Axis::U => (point.u, point.w),
                    Axis::W => (point.w, point.u),
                };
                if var.re != scan.fixed_real || other != Complex64::new(0.0, 0.0) {
                    return Err(Error::Config(format!(
                        "point (u = {}, w = {}) is not on the {} scan line with real part {}",
                        point.u, point.w, scan.axis, scan.fixed_real
                    )));
                }
                self.lipschitz(&scan, var.im)
            }
        }
    }
}

/// Evaluates `method` at `fixed_real + i x` along `axis` for every `x` in
/// `xs`; failures are kept per point. The Lipschitz method scans up to the
/// largest `|x|`, estimating `L` when `l_theta` is `None`.
pub fn scan_transform(
    engine: &TransformEngine,
    method: Method,
    axis: Axis,
    fixed_real: f64,
    xs: &[f64],
    n_coarse: usize,
    l_theta: Option<f64>,
) -> Result<Vec<Result<TransformValue>>> {
    let upper = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scan = if method == Method::Lipschitz {
        let l = match l_theta {
            Some(l) => l,
            None if upper > 0.0 => default_lipschitz(engine.kernel_matrices(), axis, fixed_real, upper)?,
            None => 1.0,
        };
        let scan = ScanSpec {
            axis,
            fixed_real,
            upper,
            l_theta: l,
        };
        engine.lipschitz_table(&scan)?;
        Some(scan)
    } else {
        None
    };
    let opts = EvalOptions { n_coarse, scan };
    Ok(xs
        .par_iter()
        .map(|&x| engine.evaluate(method, &axis.point(fixed_real, x)?, &opts))
        .collect())
}

/// `max |d_i| / median |d_i|` over adjacent differences `d_i`. Values above
/// 10 flag a jump that grid refinement would not remove.
pub fn max_jump_ratio(values: &[f64]) -> f64 {
    let mut d: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if d.is_empty() {
        return 1.0;
    }
    let max = d.iter().copied().fold(0.0, f64::max);
    d.sort_by(f64::total_cmp);
    let median = d[d.len() / 2];
    if median > 0.0 {
        max / median
    } else if max > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}
