//! European puts from the transform along `Re(u) = 1/2` with
//! Gauss–Laguerre quadrature; calls by parity at zero rates.
//!
//! The default scheme integrates `xi - xi_BS` for a Black–Scholes transform
//! with the model's expected integrated variance `v0`, on nodes stretched by
//! `0.2 / sqrt(v0)`. The difference has no poles at `x = +-i/2`, and the
//! stretch matches the Gaussian decay of `xi`, so degree 30 is already
//! accurate at short maturities. `LewisScheme::Plain` is the unmodified sum.

use crate::crossing::default_lipschitz;
use crate::error::{Error, Result};
use crate::kernel::{KernelMatrices, ModelParams, TimeGrid};
use crate::operators::ArgPoint;
use crate::specfun::{gauss_laguerre, normal_cdf, QuadratureRule, MAX_LAGUERRE_DEGREE};
use crate::transform::{Axis, EvalOptions, Method, ScanSpec, TransformEngine};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LewisScheme {
    #[default]
    ControlVariate,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceRequest {
    pub strike: f64,
    pub method: Method,
    pub quad_degree: usize,
    pub n: usize,
    #[serde(default = "default_n_coarse")]
    pub n_coarse: usize,
    /// Lipschitz constant of the determinant argument along `Im(u)`;
    /// estimated when absent.
    #[serde(default)]
    pub l_theta: Option<f64>,
    #[serde(default)]
    pub scheme: LewisScheme,
}

fn default_n_coarse() -> usize {
    40
}

impl PriceRequest {
    pub fn new(strike: f64, method: Method, quad_degree: usize, n: usize) -> Self {
        Self {
            strike,
            method,
            quad_degree,
            n,
            n_coarse: default_n_coarse(),
            l_theta: None,
            scheme: LewisScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::Config(format!("strike must be positive, got {}", self.strike)));
        }
        if self.quad_degree == 0 || self.quad_degree > MAX_LAGUERRE_DEGREE {
            return Err(Error::Config(format!(
                "quadrature degree must lie in [1, {MAX_LAGUERRE_DEGREE}], got {}",
                self.quad_degree
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("grid size n must be >= 1".into()));
        }
        if self.method == Method::Hybrid && (self.n_coarse < 2 || self.n_coarse > self.n) {
            return Err(Error::Config(format!(
                "n_coarse must lie in [2, {}], got {}",
                self.n, self.n_coarse
            )));
        }
        if let Some(l) = self.l_theta {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("Lipschitz constant must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceResult {
    pub strike: f64,
    pub put: f64,
    pub call: f64,
    /// `(x_j, xi(1/2 + i x_j))` at the quadrature nodes.
    pub samples: Vec<(f64, Complex64)>,
    pub warnings: Vec<String>,
}

/// Log-moneyness, in standard deviations `sqrt(v0)`, beyond which a
/// degree-30 rule no longer resolves the twist `e^{i x log(S0/K)}`.
pub const RESOLVED_MONEYNESS: f64 = 4.0;

/// Transform values at the quadrature nodes; independent of the strike.
#[derive(Debug, Clone)]
pub struct NodeValues {
    pub rule: QuadratureRule,
    pub scheme: LewisScheme,
    /// Node stretch: the transform is sampled at `x_j = scale * y_j`.
    pub scale: f64,
    /// Total variance of the Black–Scholes control variate.
    pub cv_variance: f64,
    pub xi: Vec<Complex64>,
}

impl NodeValues {
    pub fn abscissae(&self) -> impl Iterator<Item = f64> + '_ {
        self.rule.nodes.iter().map(move |&y| self.scale * y)
    }
}

/// `E int_0^T X_s^2 ds` of the discretized model, `(T/n) sum_j (g_j^2 + Sigma_jj)`.
pub fn expected_integrated_variance(km: &KernelMatrices) -> Result<f64> {
    let sigma = km.sigma(0)?;
    let s: f64 = km
        .g_n()
        .iter()
        .enumerate()
        .map(|(j, g)| g * g + sigma[(j, j)])
        .sum();
    Ok(km.grid().dt() * s)
}

/// Zero-rate Black–Scholes `(put, call)` for total variance `sigma^2 T`.
pub fn bs_reference(s0: f64, strike: f64, total_variance: f64) -> Result<(f64, f64)> {
    if !(total_variance >= 0.0) {
        return Err(Error::Domain(format!(
            "total variance must be >= 0, got {total_variance}"
        )));
    }
    if !(s0 > 0.0 && strike > 0.0) {
        return Err(Error::Domain("spot and strike must be positive".into()));
    }
    if total_variance == 0.0 {
        return Ok(((strike - s0).max(0.0), (s0 - strike).max(0.0)));
    }
    let sd = total_variance.sqrt();
    let d1 = ((s0 / strike).ln() + 0.5 * total_variance) / sd;
    let d2 = d1 - sd;
    let call = s0 * normal_cdf(d1) - strike * normal_cdf(d2);
    let put = strike * normal_cdf(-d2) - s0 * normal_cdf(-d1);
    Ok((put, call))
}

fn bs_transform(total_variance: f64, x: f64) -> f64 {
    (-0.5 * total_variance * (x * x + 0.25)).exp()
}

/// `P = K - sqrt(S0 K)/pi sum_j w_j e^{y_j} Re(e^{i x_j log(S0/K)} xi_j / (x_j^2 + 1/4))`,
/// with the control variate added back analytically.
pub fn put_from_nodes(s0: f64, strike: f64, nodes: &NodeValues) -> Result<PriceResult> {
    let k = (s0 / strike).ln();
    let cv = nodes.scheme == LewisScheme::ControlVariate;
    let mut acc = 0.0;
    for (j, (x, &xi)) in nodes.abscissae().zip(&nodes.xi).enumerate() {
        let twist = Complex64::from_polar(1.0, x * k);
        let f = if cv { xi - bs_transform(nodes.cv_variance, x) } else { xi };
        acc += nodes.scale * nodes.rule.damped_weight(j) * (twist * f).re / (x * x + 0.25);
    }
    let base = if cv { bs_reference(s0, strike, nodes.cv_variance)?.0 } else { strike };
    let put = base - (s0 * strike).sqrt() / PI * acc;
    let mut warnings = Vec::new();
    let sd = nodes.cv_variance.sqrt();
    if k.abs() > RESOLVED_MONEYNESS * sd {
        warnings.push(format!(
            "log-moneyness {k:.3} is {:.1} standard deviations out; quadrature error may exceed 1e-6",
            k.abs() / sd
        ));
    }
    Ok(PriceResult {
        strike,
        put,
        call: put + s0 - strike,
        samples: nodes.abscissae().zip(nodes.xi.iter().copied()).collect(),
        warnings,
    })
}

type NodeKey = (Method, usize, usize, Option<u64>, LewisScheme);

/// Prices against one set of kernel matrices, evaluating the transform at
/// each quadrature node once per method and degree.
#[derive(Debug)]
pub struct Pricer {
    engine: TransformEngine,
    evaluations: AtomicUsize,
    cache: Mutex<HashMap<NodeKey, Arc<NodeValues>>>,
}

impl Pricer {
    pub fn new(params: &ModelParams, n: usize) -> Result<Self> {
        let grid = TimeGrid::new(n, params.maturity)?;
        Ok(Self::from_engine(TransformEngine::new(Arc::new(KernelMatrices::new(params, grid)?))))
    }

    pub fn from_engine(engine: TransformEngine) -> Self {
        Self {
            engine,
            evaluations: AtomicUsize::new(0),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn engine(&self) -> &TransformEngine {
        &self.engine
    }

    /// Transform evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Quadrature rule, control-variate variance and node stretch.
    fn layout(&self, req: &PriceRequest) -> Result<(QuadratureRule, f64, f64)> {
        let rule = gauss_laguerre(req.quad_degree)?;
        let cv_variance = expected_integrated_variance(self.engine.kernel_matrices())?;
        let scale = match req.scheme {
            LewisScheme::Plain => 1.0,
            LewisScheme::ControlVariate => (0.2 / cv_variance.max(1e-12).sqrt()).min(1e4),
        };
        Ok((rule, cv_variance, scale))
    }

    /// `req.l_theta`, or the empirical estimate over the node range.
    pub fn lipschitz_constant(&self, req: &PriceRequest) -> Result<f64> {
        if let Some(l) = req.l_theta {
            return Ok(l);
        }
        let (rule, _, scale) = self.layout(req)?;
        default_lipschitz(self.engine.kernel_matrices(), Axis::U, 0.5, scale * *rule.nodes.last().unwrap())
    }

    pub fn nodes(&self, req: &PriceRequest) -> Result<Arc<NodeValues>> {
        req.validate()?;
        if req.n != self.engine.n() {
            return Err(Error::Config(format!(
                "request asks for n = {} but the matrices have n = {}",
                req.n,
                self.engine.n()
            )));
        }
        let n_coarse = if req.method == Method::Hybrid { req.n_coarse } else { 0 };
        let key = (req.method, req.quad_degree, n_coarse, req.l_theta.map(f64::to_bits), req.scheme);
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let (rule, cv_variance, scale) = self.layout(req)?;
        let upper = scale * *rule.nodes.last().unwrap();
        let scan = if req.method == Method::Lipschitz {
            let scan = ScanSpec {
                axis: Axis::U,
                fixed_real: 0.5,
                upper,
                l_theta: self.lipschitz_constant(req)?,
            };
            self.engine.lipschitz_table(&scan)?;
            Some(scan)
        } else {
            None
        };
        let opts = EvalOptions {
            n_coarse: req.n_coarse,
            scan,
        };
        let xi = rule
            .nodes
            .par_iter()
            .enumerate()
            .map(|(j, &y)| {
                let p = ArgPoint::log_price(0.5, scale * y).map_err(|e| Error::at_node(j, e))?;
                self.engine
                    .evaluate(req.method, &p, &opts)
                    .map(|v| v.value)
                    .map_err(|e| Error::at_node(j, e))
            })
            .collect::<Result<Vec<_>>>()?;
        self.evaluations.fetch_add(xi.len(), Ordering::Relaxed);
        let values = Arc::new(NodeValues {
            rule,
            scheme: req.scheme,
            scale,
            cv_variance,
            xi,
        });
        let mut map = self.cache.lock().unwrap();
        Ok(map.entry(key).or_insert(values).clone())
    }

    pub fn put(&self, req: &PriceRequest) -> Result<PriceResult> {
        let nodes = self.nodes(req)?;
        put_from_nodes(self.engine.kernel_matrices().params().s0, req.strike, &nodes)
    }
}

pub fn lewis_put(params: &ModelParams, req: &PriceRequest) -> Result<PriceResult> {
    req.validate()?;
    Pricer::new(params, req.n)?.put(req)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceCell {
    pub maturity: f64,
    pub strike: f64,
    pub result: std::result::Result<PriceResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceReport {
    pub cells: Vec<SurfaceCell>,
    pub transform_evaluations: usize,
}

/// Prices every `(maturity, strike)` cell; `defaults.strike` is ignored.
/// Failures are recorded per cell.
pub fn price_surface(
    params: &ModelParams,
    strikes: &[f64],
    maturities: &[f64],
    defaults: &PriceRequest,
) -> Result<SurfaceReport> {
    if let Some(t) = maturities.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Config(format!("maturities must be positive, got {t}")));
    }
    let mut cells = Vec::with_capacity(strikes.len() * maturities.len());
    let mut evaluations = 0;
    for &t in maturities {
        let p = params.with_maturity(t);
        let pricer = Pricer::new(&p, defaults.n);
        for &k in strikes {
            let req = PriceRequest { strike: k, ..*defaults };
            let result = match &pricer {
                Ok(pr) => pr.put(&req).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            cells.push(SurfaceCell {
                maturity: t,
                strike: k,
                result,
            });
        }
        if let Ok(pr) = &pricer {
            evaluations += pr.evaluations();
        }
    }
    Ok(SurfaceReport {
        cells,
        transform_evaluations: evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs_params(x0: f64, t: f64) -> ModelParams {
        ModelParams {
            kappa: 0.0,
            nu: 0.0,
            theta: 0.0,
            rho: -0.5,
            x0,
            hurst: 0.3,
            s0: 1.0,
            maturity: t,
        }
    }

    fn fig6() -> ModelParams {
        ModelParams {
            kappa: 0.0,
            nu: 0.25,
            theta: 0.1,
            rho: -0.7,
            x0: 0.1,
            hurst: 0.3,
            s0: 1.0,
            maturity: 0.05,
        }
    }

    #[test]
    fn bs_examples() {
        assert_eq!(bs_reference(1.0, 1.0, 0.0).unwrap(), (0.0, 0.0));
        let (p, c) = bs_reference(1.0, 1.1, 0.0).unwrap();
        assert!((p - 0.1).abs() < 1e-15 && c == 0.0);
        let (p, c) = bs_reference(1.0, 1.0, 0.04).unwrap();
        // 2 N(0.1) - 1 from the tabulated normal CDF
        let want = 2.0 * 0.539_827_837_277_029 - 1.0;
        assert!((p - want).abs() < 1e-14);
        assert!((c - p).abs() < 1e-15);
        assert!(bs_reference(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn request_validation() {
        let r = PriceRequest::new(1.0, Method::Hybrid, 30, 50);
        assert!(r.validate().is_ok());
        assert!(PriceRequest { strike: 0.0, ..r }.validate().is_err());
        assert!(PriceRequest { quad_degree: 0, ..r }.validate().is_err());
        assert!(PriceRequest { n_coarse: 60, ..r }.validate().is_err());
        assert!(PriceRequest { l_theta: Some(-1.0), ..r }.validate().is_err());
        let pr = Pricer::new(&fig6(), 20).unwrap();
        assert!(matches!(pr.put(&r), Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_model_matches_black_scholes() {
        let p = bs_params(0.2, 1.0);
        let pr = Pricer::new(&p, 50).unwrap();
        for k in [0.8, 1.0, 1.25] {
            let got = pr.put(&PriceRequest::new(k, Method::PrefactorFree, 60, 50)).unwrap();
            let (put, call) = bs_reference(1.0, k, 0.04).unwrap();
            assert!((got.put - put).abs() < 1e-6, "K={k} {} {put}", got.put);
            assert!((got.call - call).abs() < 1e-6);
        }
    }

    #[test]
    fn parity_and_intrinsic_floor() {
        let pr = Pricer::new(&fig6(), 40).unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in [0.9, 0.95, 1.0, 1.05, 1.1] {
            let r = pr.put(&PriceRequest::new(k, Method::PrefactorFree, 30, 40)).unwrap();
            assert!(r.warnings.is_empty());
            assert_eq!(r.call, r.put + 1.0 - k);
            assert!(r.put >= (k - 1.0f64).max(0.0) - 1e-8, "K={k} {}", r.put);
            assert!(r.put >= last);
            last = r.put;
        }
        let far = pr.put(&PriceRequest::new(0.5, Method::PrefactorFree, 30, 40)).unwrap();
        assert_eq!(far.warnings.len(), 1);
        assert_eq!(pr.evaluations(), 30);
    }

    #[test]
    fn plain_scheme_converges_to_the_same_price() {
        let pr = Pricer::new(&ModelParams { maturity: 1.0, ..fig6() }, 40).unwrap();
        let cv = pr.put(&PriceRequest::new(1.0, Method::PrefactorFree, 30, 40)).unwrap().put;
        let plain = |d| {
            let r = PriceRequest { scheme: LewisScheme::Plain, ..PriceRequest::new(1.0, Method::PrefactorFree, d, 40) };
            pr.put(&r).unwrap().put
        };
        assert!((plain(200) - cv).abs() < 1e-9);
        assert!((plain(30) - cv).abs() > 1e-6);
    }

    #[test]
    fn expected_variance_of_flat_volatility() {
        let k = KernelMatrices::new(&bs_params(0.2, 1.5), TimeGrid::new(10, 1.5).unwrap()).unwrap();
        assert!((expected_integrated_variance(&k).unwrap() - 0.06).abs() < 1e-15);
    }

    #[test]
    fn vanishing_strike_limit() {
        let pr = Pricer::new(&bs_params(0.2, 1.0), 40).unwrap();
        let mut last = f64::INFINITY;
        for k in [0.5, 0.1, 1e-2, 1e-3] {
            let r = pr.put(&PriceRequest::new(k, Method::PrefactorFree, 30, 40)).unwrap();
            assert!(r.put >= -1e-12 && r.put <= last + 1e-15, "{k} {} {last}", r.put);
            last = r.put;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn corrected_methods_agree() {
        let pr = Pricer::new(&ModelParams { maturity: 1.0, ..fig6() }, 60).unwrap();
        let base = PriceRequest::new(1.0, Method::PrefactorFree, 80, 60);
        let pf = pr.put(&base).unwrap().put;
        for m in [Method::Hybrid, Method::Lipschitz] {
            let v = pr.put(&PriceRequest { method: m, ..base }).unwrap().put;
            assert!((v - pf).abs() < 1e-8, "{m} {v} {pf}");
        }
    }

    #[test]
    fn surface_reuses_nodes() {
        let req = PriceRequest::new(1.0, Method::PrefactorFree, 20, 30);
        let one = price_surface(&fig6(), &[1.0], &[0.05], &req).unwrap();
        assert_eq!(one.transform_evaluations, 20);
        let single = lewis_put(&fig6(), &req).unwrap();
        assert_eq!(one.cells[0].result.as_ref().unwrap(), &single);
        let two = price_surface(&fig6(), &[0.9, 1.1], &[0.05], &req).unwrap();
        assert_eq!(two.transform_evaluations, 20);
        let a = two.cells[0].result.as_ref().unwrap();
        let b = two.cells[1].result.as_ref().unwrap();
        assert!(a.put <= b.put);
        assert_eq!(a, &lewis_put(&fig6(), &PriceRequest { strike: 0.9, ..req }).unwrap());
        assert!(price_surface(&fig6(), &[1.0], &[0.0], &req).is_err());
        let bad = price_surface(&ModelParams { rho: 0.0, ..fig6() }, &[1.0], &[0.05, 1.0], &PriceRequest { n: 0, ..req }).unwrap();
        assert!(bad.cells.iter().all(|c| c.result.is_err()));
    }

    #[test]
    fn quadrature_degree_stability() {
        let pr = Pricer::new(&fig6(), 50).unwrap();
        let p30 = pr.put(&PriceRequest::new(1.0, Method::PrefactorFree, 30, 50)).unwrap().put;
        let p60 = pr.put(&PriceRequest::new(1.0, Method::PrefactorFree, 60, 50)).unwrap().put;
        assert!((p30 - p60).abs() <= 1e-6, "{p30} {p60}");
        let pr = Pricer::new(&ModelParams { maturity: 1.0, ..fig6() }, 50).unwrap();
        let p80 = pr.put(&PriceRequest::new(1.0, Method::PrefactorFree, 80, 50)).unwrap().put;
        let p120 = pr.put(&PriceRequest::new(1.0, Method::PrefactorFree, 120, 50)).unwrap().put;
        assert!((p80 - p120).abs() <= 1e-6, "{p80} {p120}");
    }
}
