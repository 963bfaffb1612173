//! Model parameters, time grid, Volterra kernels and the discretized
//! objects that do not depend on the transform arguments.

use crate::cmatrix::RealMatrix;
use crate::error::{Error, Result};
use crate::specfun::{gamma_fn, hyp2f1_special, integrate_adaptive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::{Arc, OnceLock};

/// Volterra Stein-Stein parameters with the fractional input curve
/// `g0(t) = x0 + theta * t^(H+1/2) / Gamma(H+3/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Mean reversion; only `kappa = 0` is supported.
    #[serde(default)]
    pub kappa: f64,
    pub nu: f64,
    pub theta: f64,
    pub rho: f64,
    pub x0: f64,
    pub hurst: f64,
    #[serde(default = "default_spot")]
    pub s0: f64,
    pub maturity: f64,
}

fn default_spot() -> f64 {
    1.0
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kappa,
            self.nu,
            self.theta,
            self.rho,
            self.x0,
            self.hurst,
            self.s0,
            self.maturity,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        if self.kappa != 0.0 {
            return Err(Error::Config(format!(
                "kappa = {} is not supported; fold mean reversion into the kernel and input curve first",
                self.kappa
            )));
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::Config(format!("hurst must lie in (0, 1), got {}", self.hurst)));
        }
        // nu = 0 is the degenerate Black-Scholes limit and is accepted
        if self.nu < 0.0 {
            return Err(Error::Config(format!("nu must be >= 0, got {}", self.nu)));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::Config(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if self.s0 <= 0.0 {
            return Err(Error::Config(format!("s0 must be > 0, got {}", self.s0)));
        }
        if self.maturity <= 0.0 {
            return Err(Error::Config(format!(
                "maturity must be > 0, got {}",
                self.maturity
            )));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.hurst + 0.5
    }

    pub fn with_maturity(mut self, maturity: f64) -> Self {
        self.maturity = maturity;
        self
    }
}

/// Uniform grid `t_i = i T / n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub n: usize,
    pub maturity: f64,
}

impl TimeGrid {
    pub fn new(n: usize, maturity: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(Error::Config(format!("maturity must be > 0, got {maturity}")));
        }
        Ok(Self { n, maturity })
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n {
            self.maturity
        } else {
            i as f64 * self.maturity / self.n as f64
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.t(i)).collect()
    }
}

/// A Volterra kernel `K(t, s)`, zero for `s >= t`.
///
/// The provided methods integrate numerically; kernels with closed forms
/// override them.
pub trait VolterraKernel: Send + Sync + fmt::Debug {
    fn eval(&self, t: f64, s: f64) -> f64;

    /// `int_a^b K(t, s) ds`
    fn integral(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        let b = b.min(t);
        if b <= a {
            return Ok(0.0);
        }
        integrate_adaptive(|s| self.eval(t, s), a, b, 1e-10, 1e-15)
    }

    /// `int_a^b K(r, s) dr` (integration in the first argument)
    fn integral_first(&self, s: f64, a: f64, b: f64) -> Result<f64> {
        let a = a.max(s);
        if b <= a {
            return Ok(0.0);
        }
        integrate_adaptive(|r| self.eval(r, s), a, b, 1e-10, 1e-15)
    }

    /// `int_from^{min(t1, t2)} K(t1, s) K(t2, s) ds`
    fn covariance(&self, t1: f64, t2: f64, from: f64) -> Result<f64> {
        let top = t1.min(t2);
        if top <= from {
            return Ok(0.0);
        }
        integrate_adaptive(
            |s| self.eval(t1, s) * self.eval(t2, s),
            from,
            top,
            1e-10,
            1e-15,
        )
    }

    /// True when `K(t, s)` depends on `t - s` only; on a uniform grid the
    /// `i`-indexed families are then shifts of the `i = 0` members.
    fn shift_invariant(&self) -> bool {
        false
    }
}

/// Riemann-Liouville kernel `(t - s)^(H - 1/2) / Gamma(H + 1/2)`.
#[derive(Debug, Clone)]
pub struct FractionalKernel {
    alpha: f64,
    gamma_alpha: f64,
    gamma_1p_alpha: f64,
    diag_const: f64,
    off_const: f64,
}

impl FractionalKernel {
    pub fn new(hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::Config(format!("hurst must lie in (0, 1), got {hurst}")));
        }
        let alpha = hurst + 0.5;
        let gamma_alpha = gamma_fn(alpha)?;
        let gamma_1p_alpha = gamma_fn(1.0 + alpha)?;
        let diag_const =
            gamma_fn(2.0 * alpha - 1.0)? / (gamma_alpha * gamma_alpha * gamma_fn(2.0 * alpha)?);
        Ok(Self {
            alpha,
            gamma_alpha,
            gamma_1p_alpha,
            diag_const,
            off_const: 1.0 / (gamma_alpha * gamma_1p_alpha),
        })
    }

    fn brownian(&self) -> bool {
        self.alpha == 1.0
    }
}

impl VolterraKernel for FractionalKernel {
    fn eval(&self, t: f64, s: f64) -> f64 {
        if s >= t {
            0.0
        } else if self.brownian() {
            1.0
        } else {
            (t - s).powf(self.alpha - 1.0) / self.gamma_alpha
        }
    }

    fn integral(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        let b = b.min(t);
        if b <= a {
            return Ok(0.0);
        }
        if self.brownian() {
            return Ok(b - a);
        }
        Ok(((t - a).powf(self.alpha) - (t - b).powf(self.alpha)) / self.gamma_1p_alpha)
    }

    fn integral_first(&self, s: f64, a: f64, b: f64) -> Result<f64> {
        let a = a.max(s);
        if b <= a {
            return Ok(0.0);
        }
        if self.brownian() {
            return Ok(b - a);
        }
        Ok(((b - s).powf(self.alpha) - (a - s).powf(self.alpha)) / self.gamma_1p_alpha)
    }

    fn covariance(&self, t1: f64, t2: f64, from: f64) -> Result<f64> {
        let lo = t1.min(t2) - from;
        let hi = t1.max(t2) - from;
        if lo <= 0.0 {
            return Ok(0.0);
        }
        if self.brownian() {
            return Ok(lo);
        }
        if lo == hi {
            return Ok(self.diag_const * lo.powf(2.0 * self.alpha - 1.0));
        }
        let f = hyp2f1_special(self.alpha, lo / hi)?;
        Ok(self.off_const * lo.powf(self.alpha) / hi.powf(1.0 - self.alpha) * f)
    }

    fn shift_invariant(&self) -> bool {
        true
    }
}

/// Kernel given pointwise by a closure; every discretized entry comes from
/// adaptive quadrature.
#[derive(Clone)]
pub struct NumericKernel {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    shift_invariant: bool,
}

impl NumericKernel {
    /// `f(t, s)` is only queried for `s < t`.
    pub fn new<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self {
            f: Arc::new(f),
            shift_invariant: false,
        }
    }

    /// Declares that `f(t, s)` depends on `t - s` only.
    pub fn convolution(mut self) -> Self {
        self.shift_invariant = true;
        self
    }
}

impl fmt::Debug for NumericKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NumericKernel")
            .field("shift_invariant", &self.shift_invariant)
            .finish_non_exhaustive()
    }
}

impl VolterraKernel for NumericKernel {
    fn eval(&self, t: f64, s: f64) -> f64 {
        if s >= t {
            0.0
        } else {
            (self.f)(t, s)
        }
    }

    fn shift_invariant(&self) -> bool {
        self.shift_invariant
    }
}

/// Rank-one factors of the kernel derivative matrix:
/// `SigmaDot_{n,i} = -nu^2 p q^T`, with
/// `p_j = K(t_j, t_i)` for `j > i` and `q_k = int_{t_k}^{t_{k+1}} K(s, t_i) ds`
/// for `k >= i` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDotFactors {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Everything the trace evaluator needs at index `i`, restricted to the
/// rows/columns `>= i` outside of which the covariance vanishes.
#[derive(Debug, Clone)]
pub struct TraceBlock {
    pub k: RealMatrix,
    pub kkt: RealMatrix,
    pub sigma: RealMatrix,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// The `(u, w)`-independent discretized objects.
///
/// Immutable apart from the lazily filled per-`i` caches, which are
/// written at most once per index and may be filled from several threads.
pub struct KernelMatrices {
    params: ModelParams,
    grid: TimeGrid,
    kernel: Arc<dyn VolterraKernel>,
    k_n: RealMatrix,
    kkt: RealMatrix,
    g_n: Vec<f64>,
    sigma: Vec<OnceLock<Arc<RealMatrix>>>,
    sigma_dot: Vec<OnceLock<Arc<SigmaDotFactors>>>,
}

impl fmt::Debug for KernelMatrices {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelMatrices")
            .field("params", &self.params)
            .field("grid", &self.grid)
            .field("kernel", &self.kernel)
            .finish_non_exhaustive()
    }
}

impl KernelMatrices {
    /// Fractional kernel with the closed-form entries.
    pub fn new(params: &ModelParams, grid: TimeGrid) -> Result<Self> {
        let kernel = FractionalKernel::new(params.hurst)?;
        Self::with_kernel(params, grid, Arc::new(kernel))
    }

    pub fn with_kernel(
        params: &ModelParams,
        grid: TimeGrid,
        kernel: Arc<dyn VolterraKernel>,
    ) -> Result<Self> {
        params.validate()?;
        if (grid.maturity - params.maturity).abs() > 1e-14 * params.maturity {
            return Err(Error::Config(format!(
                "grid maturity {} differs from model maturity {}",
                grid.maturity, params.maturity
            )));
        }
        let k_n = assemble_k(kernel.as_ref(), &grid)?;
        let kkt = k_n.gram_rows();
        let g_n = assemble_g(kernel.as_ref(), params, &grid)?;
        let n = grid.n;
        let out = Self {
            params: *params,
            grid,
            kernel,
            k_n,
            kkt,
            g_n,
            sigma: (0..n).map(|_| OnceLock::new()).collect(),
            sigma_dot: (0..n).map(|_| OnceLock::new()).collect(),
        };
        // the determinant path always needs i = 0
        out.sigma(0)?;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kernel(&self) -> &dyn VolterraKernel {
        self.kernel.as_ref()
    }

    pub fn kernel_arc(&self) -> Arc<dyn VolterraKernel> {
        self.kernel.clone()
    }

    pub fn k_n(&self) -> &RealMatrix {
        &self.k_n
    }

    /// `K_n K_n^T`
    pub fn kkt(&self) -> &RealMatrix {
        &self.kkt
    }

    pub fn g_n(&self) -> &[f64] {
        &self.g_n
    }

    /// `Sigma_{n,i}` (including the `nu^2` factor).
    pub fn sigma(&self, i: usize) -> Result<Arc<RealMatrix>> {
        self.check_index(i)?;
        if let Some(s) = self.sigma[i].get() {
            return Ok(s.clone());
        }
        let built = if i > 0 && self.kernel.shift_invariant() {
            let base = self.sigma(0)?;
            let n = self.n();
            RealMatrix::from_fn(n, |j, k| {
                if j >= i && k >= i {
                    base[(j - i, k - i)]
                } else {
                    0.0
                }
            })
        } else {
            assemble_sigma(self.kernel.as_ref(), &self.params, &self.grid, i)?
        };
        let _ = self.sigma[i].set(Arc::new(built));
        Ok(self.sigma[i].get().unwrap().clone())
    }

    /// Cached factors of `SigmaDot_{n,i} = -nu^2 p q^T`.
    pub fn sigma_dot_factors(&self, i: usize) -> Result<Arc<SigmaDotFactors>> {
        self.check_index(i)?;
        if let Some(s) = self.sigma_dot[i].get() {
            return Ok(s.clone());
        }
        let n = self.n();
        let built = if i > 0 && self.kernel.shift_invariant() {
            let base = self.sigma_dot_factors(0)?;
            let shift = |v: &[f64]| -> Vec<f64> {
                (0..n).map(|j| if j >= i { v[j - i] } else { 0.0 }).collect()
            };
            SigmaDotFactors {
                p: shift(&base.p),
                q: shift(&base.q),
            }
        } else {
            assemble_sigma_dot(self.kernel.as_ref(), &self.grid, i)?
        };
        let _ = self.sigma_dot[i].set(Arc::new(built));
        Ok(self.sigma_dot[i].get().unwrap().clone())
    }

    /// Dense `SigmaDot_{n,i}`.
    pub fn sigma_dot(&self, i: usize) -> Result<RealMatrix> {
        let f = self.sigma_dot_factors(i)?;
        let nu2 = self.params.nu * self.params.nu;
        Ok(RealMatrix::from_fn(self.n(), |j, k| -nu2 * f.p[j] * f.q[k]))
    }

    /// Restriction to indices `>= i` of `K_n`, of the Gram matrix of that
    /// restriction, of `Sigma_{n,i}` and of the `SigmaDot` factors.
    pub fn trace_block(&self, i: usize) -> Result<TraceBlock> {
        self.check_index(i)?;
        let m = self.n() - i;
        if self.kernel.shift_invariant() {
            let f = self.sigma_dot_factors(0)?;
            Ok(TraceBlock {
                k: self.k_n.leading_block(m),
                kkt: self.kkt.leading_block(m),
                sigma: self.sigma(0)?.leading_block(m),
                p: f.p[..m].to_vec(),
                q: f.q[..m].to_vec(),
            })
        } else {
            let k = self.k_n.trailing_block(i);
            let kkt = k.gram_rows();
            let f = self.sigma_dot_factors(i)?;
            Ok(TraceBlock {
                k,
                kkt,
                sigma: self.sigma(i)?.trailing_block(i),
                p: f.p[i..].to_vec(),
                q: f.q[i..].to_vec(),
            })
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::Domain(format!(
                "index {i} outside 0..{} for the covariance family",
                self.n()
            )));
        }
        Ok(())
    }
}

fn assemble_k(kernel: &dyn VolterraKernel, grid: &TimeGrid) -> Result<RealMatrix> {
    let n = grid.n;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|k| {
                    if k < j {
                        kernel.integral(grid.t(j), grid.t(k), grid.t(k + 1))
                    } else {
                        Ok(0.0)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(RealMatrix::from_row_major(rows.concat()))
}

fn assemble_g(kernel: &dyn VolterraKernel, params: &ModelParams, grid: &TimeGrid) -> Result<Vec<f64>> {
    (0..grid.n)
        .map(|j| {
            let t = grid.t(j);
            Ok(params.x0 + params.theta * kernel.integral(t, 0.0, t)?)
        })
        .collect()
}

fn assemble_sigma(
    kernel: &dyn VolterraKernel,
    params: &ModelParams,
    grid: &TimeGrid,
    i: usize,
) -> Result<RealMatrix> {
    let n = grid.n;
    let nu2 = params.nu * params.nu;
    let from = grid.t(i);
    let lower: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..=j)
                .map(|k| {
                    if k > i {
                        Ok(nu2 * kernel.covariance(grid.t(j), grid.t(k), from)?)
                    } else {
                        Ok(0.0)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut s = RealMatrix::zeros(n);
    for (j, row) in lower.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            s[(j, k)] = v;
            s[(k, j)] = v;
        }
    }
    Ok(s)
}

fn assemble_sigma_dot(kernel: &dyn VolterraKernel, grid: &TimeGrid, i: usize) -> Result<SigmaDotFactors> {
    let n = grid.n;
    let ti = grid.t(i);
    // strict indicator j > i: the kernel is evaluated off its diagonal only
    let p = (0..n)
        .map(|j| if j > i { kernel.eval(grid.t(j), ti) } else { 0.0 })
        .collect();
    let q = (0..n)
        .map(|k| {
            if k >= i {
                kernel.integral_first(ti, grid.t(k), grid.t(k + 1))
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SigmaDotFactors { p, q })
}

pub fn build_k_n(params: &ModelParams, grid: &TimeGrid) -> Result<RealMatrix> {
    params.validate()?;
    assemble_k(&FractionalKernel::new(params.hurst)?, grid)
}

pub fn build_sigma_n(params: &ModelParams, grid: &TimeGrid, i: usize) -> Result<RealMatrix> {
    params.validate()?;
    if i >= grid.n {
        return Err(Error::Domain(format!("index {i} outside 0..{}", grid.n)));
    }
    assemble_sigma(&FractionalKernel::new(params.hurst)?, params, grid, i)
}

pub fn build_sigma_dot_n(params: &ModelParams, grid: &TimeGrid, i: usize) -> Result<RealMatrix> {
    params.validate()?;
    if i >= grid.n {
        return Err(Error::Domain(format!("index {i} outside 0..{}", grid.n)));
    }
    let f = assemble_sigma_dot(&FractionalKernel::new(params.hurst)?, grid, i)?;
    let nu2 = params.nu * params.nu;
    Ok(RealMatrix::from_fn(grid.n, |j, k| -nu2 * f.p[j] * f.q[k]))
}

pub fn build_g_n(params: &ModelParams, grid: &TimeGrid) -> Result<Vec<f64>> {
    params.validate()?;
    assemble_g(&FractionalKernel::new(params.hurst)?, params, grid)
}
