use crate::config::{ConfigError, Format, RunConfig};
use crate::output::{write_csv, write_json, Row};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io;
use std::sync::Arc;
use std::time::Instant;
use vss::cmatrix::lu_det;
use vss::crossing::scan_crossings;
use vss::montecarlo::mc_prices;
use vss::operators::{build_ab, build_phi_n, build_sigma_tilde};
use vss::pricing::put_from_nodes;
use vss::transform::{phi_tilde_n, scan_transform};
use vss::{ArgPoint, Complex64, CrossingReport, KernelMatrices, ModelParams, Pricer, TimeGrid, TransformEngine};

pub enum CommandError {
    Config(ConfigError),
    Io(io::Error),
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e)
    }
}

impl From<io::Error> for CommandError {
    fn from(e: io::Error) -> Self {
        CommandError::Io(e)
    }
}

/// What a command wrote and how many rows failed.
#[derive(Debug, Default)]
pub struct Summary {
    pub rows: usize,
    pub domain_errors: usize,
    pub threshold_failures: usize,
    pub note: String,
}

fn matrices(model: &ModelParams, n: usize) -> vss::Result<Arc<KernelMatrices>> {
    Ok(Arc::new(KernelMatrices::new(model, TimeGrid::new(n, model.maturity)?)?))
}

fn emit<R: Row>(config: &RunConfig, rows: &[R]) -> io::Result<()> {
    match config.output.format {
        Format::Csv => write_csv(&config.output.path, rows),
        Format::Json => write_json(&config.output.path, rows),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformRow {
    pub abscissa: f64,
    pub re_xi: Option<f64>,
    pub im_xi: Option<f64>,
    pub k: Option<i64>,
    pub log_abs_det: Option<f64>,
    pub arg_det: Option<f64>,
    pub error: Option<String>,
}

impl Row for TransformRow {
    const HEADER: &'static [&'static str] = &["abscissa", "re_xi", "im_xi", "k", "log_abs_det", "arg_det", "error"];
}

impl TransformRow {
    fn failed(abscissa: f64, e: &vss::Error) -> Self {
        Self {
            abscissa,
            re_xi: None,
            im_xi: None,
            k: None,
            log_abs_det: None,
            arg_det: None,
            error: Some(e.to_string()),
        }
    }
}

pub fn transform_scan(config: &RunConfig) -> Result<Summary, CommandError> {
    let scan = config.validate_transform_scan()?;
    let xs = scan.abscissae();
    let values = if xs.is_empty() {
        Ok(Vec::new())
    } else {
        matrices(&config.model, config.grid.n).and_then(|km| {
            let engine = TransformEngine::new(km);
            scan_transform(&engine, scan.method, scan.axis, scan.fixed_real, &xs, scan.n_coarse, scan.l_theta)
        })
    };
    if let Err(e @ vss::Error::Config(_)) = &values {
        return Err(ConfigError(e.to_string()).into());
    }
    let rows: Vec<TransformRow> = match values {
        Ok(values) => xs
            .iter()
            .zip(values)
            .map(|(&x, v)| match v {
                Ok(v) => TransformRow {
                    abscissa: x,
                    re_xi: Some(v.value.re),
                    im_xi: Some(v.value.im),
                    k: v.k,
                    log_abs_det: Some(v.diagnostics.det_log_modulus),
                    arg_det: Some(v.diagnostics.det_arg),
                    error: None,
                },
                Err(e) => TransformRow::failed(x, &e),
            })
            .collect(),
        Err(e) => xs.iter().map(|&x| TransformRow::failed(x, &e)).collect(),
    };
    emit(config, &rows)?;
    Ok(Summary {
        rows: rows.len(),
        domain_errors: rows.iter().filter(|r| r.error.is_some()).count(),
        threshold_failures: 0,
        note: format!("{} {} points", scan.method, rows.len()),
    })
}

/// One record of a crossing scan. `kind` is `eigenvalue` (value = lambda),
/// `crossing` (value = midpoint of `[lower, upper]`), `first_crossing`, or
/// `bound` (value = bound at `radius`, empty when undefined).
#[derive(Debug, Clone, Serialize)]
pub struct CrossingRow {
    pub sweep: Option<f64>,
    pub kind: &'static str,
    pub index: usize,
    pub value: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub radius: Option<f64>,
    pub error: Option<String>,
}

impl Row for CrossingRow {
    const HEADER: &'static [&'static str] = &["sweep", "kind", "index", "value", "lower", "upper", "radius", "error"];
}

impl CrossingRow {
    fn new(sweep: Option<f64>, kind: &'static str, index: usize, value: Option<f64>) -> Self {
        Self {
            sweep,
            kind,
            index,
            value,
            lower: None,
            upper: None,
            radius: None,
            error: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepReport {
    sweep: Option<f64>,
    report: Option<CrossingReport>,
    error: Option<String>,
}

fn crossing_rows(sweep: Option<f64>, report: &CrossingReport) -> Vec<CrossingRow> {
    let mut rows = Vec::new();
    for (i, &l) in report.spectrum.iter().enumerate() {
        rows.push(CrossingRow::new(sweep, "eigenvalue", i, Some(l)));
    }
    for (i, c) in report.crossings.iter().enumerate() {
        rows.push(CrossingRow {
            lower: Some(c.lower),
            upper: Some(c.upper),
            ..CrossingRow::new(sweep, "crossing", i, Some(c.location()))
        });
    }
    rows.push(CrossingRow::new(sweep, "first_crossing", 0, report.first_crossing));
    for (i, &(r, b)) in report.bounds.iter().enumerate() {
        rows.push(CrossingRow {
            radius: Some(r),
            ..CrossingRow::new(sweep, "bound", i, b)
        });
    }
    rows
}

pub fn crossing_scan(config: &RunConfig) -> Result<Summary, CommandError> {
    let scan = config.validate_crossing_scan()?;
    let reports: Vec<SweepReport> = config
        .models()
        .into_iter()
        .map(|(sweep, model)| {
            match matrices(&model, config.grid.n).and_then(|km| scan_crossings(&km, &scan)) {
                Ok(r) => SweepReport {
                    sweep,
                    report: Some(r),
                    error: None,
                },
                Err(e) => SweepReport {
                    sweep,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let failed = reports.iter().filter(|r| r.error.is_some()).count();
    let mut violations = 0;
    for r in reports.iter().filter_map(|r| r.report.as_ref()) {
        if let Some(first) = r.first_crossing {
            violations += r.bounds.iter().filter(|(_, b)| b.is_some_and(|b| b < first)).count();
        }
    }
    let firsts: Vec<String> = reports
        .iter()
        .map(|r| match r.report.as_ref().and_then(|r| r.first_crossing) {
            Some(x) => format!("{x:.4}"),
            None => "-".into(),
        })
        .collect();
    let rows = match config.output.format {
        Format::Csv => {
            let rows: Vec<CrossingRow> = reports
                .iter()
                .flat_map(|r| match (&r.report, &r.error) {
                    (Some(rep), _) => crossing_rows(r.sweep, rep),
                    (None, e) => vec![CrossingRow {
                        error: e.clone(),
                        ..CrossingRow::new(r.sweep, "error", 0, None)
                    }],
                })
                .collect();
            write_csv(&config.output.path, &rows)?;
            rows.len()
        }
        Format::Json => {
            write_json(&config.output.path, &reports)?;
            reports.len()
        }
    };
    Ok(Summary {
        rows,
        domain_errors: failed,
        threshold_failures: 0,
        note: format!("first crossings [{}]; {violations} bound(s) below the first crossing", firsts.join(", ")),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PriceRow {
    pub sweep: Option<f64>,
    pub maturity: f64,
    pub n: usize,
    pub method: String,
    pub strike: f64,
    pub put: Option<f64>,
    pub call: Option<f64>,
    pub matrices_s: Option<f64>,
    pub transform_s: Option<f64>,
    pub quadrature_s: Option<f64>,
    pub warnings: String,
    pub error: Option<String>,
}

impl Row for PriceRow {
    const HEADER: &'static [&'static str] = &[
        "sweep",
        "maturity",
        "n",
        "method",
        "strike",
        "put",
        "call",
        "matrices_s",
        "transform_s",
        "quadrature_s",
        "warnings",
        "error",
    ];
}

pub fn price(config: &RunConfig) -> Result<Summary, CommandError> {
    let p = config.validate_price()?;
    let mut rows = Vec::new();
    for (sweep, model) in config.models() {
        let maturities = if p.maturities.is_empty() { vec![model.maturity] } else { p.maturities.clone() };
        for &t in &maturities {
            let model = model.with_maturity(t);
            for &n in &config.price_sizes(p) {
                let start = Instant::now();
                let km = matrices(&model, n);
                let matrices_s = start.elapsed().as_secs_f64();
                let pricer = km.map(|km| Pricer::from_engine(TransformEngine::new(km)));
                for &method in &p.methods {
                    let base = PriceRow {
                        sweep,
                        maturity: t,
                        n,
                        method: method.to_string(),
                        strike: 0.0,
                        put: None,
                        call: None,
                        matrices_s: Some(matrices_s),
                        transform_s: None,
                        quadrature_s: None,
                        warnings: String::new(),
                        error: None,
                    };
                    let start = Instant::now();
                    let nodes = pricer
                        .as_ref()
                        .map_err(Clone::clone)
                        .and_then(|pr| pr.nodes(&config.price_request(p, p.strikes[0], method, n)));
                    let transform_s = start.elapsed().as_secs_f64();
                    for &k in &p.strikes {
                        let start = Instant::now();
                        let res = nodes.as_ref().map_err(Clone::clone).and_then(|nv| put_from_nodes(model.s0, k, nv));
                        let quadrature_s = start.elapsed().as_secs_f64();
                        rows.push(match res {
                            Ok(r) => PriceRow {
                                strike: k,
                                put: Some(r.put),
                                call: Some(r.call),
                                transform_s: Some(transform_s),
                                quadrature_s: Some(quadrature_s),
                                warnings: r.warnings.join("; "),
                                ..base.clone()
                            },
                            Err(e) => PriceRow {
                                strike: k,
                                error: Some(e.to_string()),
                                ..base.clone()
                            },
                        });
                    }
                }
            }
        }
    }
    emit(config, &rows)?;
    Ok(Summary {
        rows: rows.len(),
        domain_errors: rows.iter().filter(|r| r.error.is_some()).count(),
        threshold_failures: 0,
        note: format!("{} price cells", rows.len()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct McRow {
    pub sweep: Option<f64>,
    pub strike: f64,
    pub payoff: String,
    pub price: Option<f64>,
    pub stderr: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub fourier: Option<f64>,
    pub contained: Option<bool>,
    pub error: Option<String>,
}

impl Row for McRow {
    const HEADER: &'static [&'static str] = &[
        "sweep", "strike", "payoff", "price", "stderr", "ci_low", "ci_high", "fourier", "contained", "error",
    ];
}

pub fn mc_benchmark(config: &RunConfig) -> Result<Summary, CommandError> {
    let mc = config.validate_mc()?;
    let cfg = mc.mc_config();
    let payoff = match mc.payoff {
        vss::Payoff::Call => "call",
        vss::Payoff::Put => "put",
    };
    let mut rows = Vec::new();
    for (sweep, model) in config.models() {
        let results = mc_prices(&model, &cfg, &mc.strikes, mc.payoff);
        let fourier = if mc.fourier.is_empty() {
            fourier_prices(config, &model, &mc.strikes, mc.payoff)?
        } else {
            mc.fourier.iter().map(|&f| Ok(Some(f))).collect()
        };
        for (i, &k) in mc.strikes.iter().enumerate() {
            let (fourier, fourier_error) = match &fourier[i] {
                Ok(f) => (*f, None),
                Err(e) => (None, Some(e.clone())),
            };
            rows.push(match &results {
                Ok(r) => McRow {
                    sweep,
                    strike: k,
                    payoff: payoff.into(),
                    price: Some(r[i].price),
                    stderr: Some(r[i].stderr),
                    ci_low: Some(r[i].ci95.0),
                    ci_high: Some(r[i].ci95.1),
                    fourier,
                    contained: fourier.map(|f| r[i].contains(f)),
                    error: fourier_error,
                },
                Err(e) => McRow {
                    sweep,
                    strike: k,
                    payoff: payoff.into(),
                    price: None,
                    stderr: None,
                    ci_low: None,
                    ci_high: None,
                    fourier,
                    contained: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    emit(config, &rows)?;
    let outside = rows.iter().filter(|r| r.contained == Some(false)).count();
    Ok(Summary {
        rows: rows.len(),
        domain_errors: rows.iter().filter(|r| r.error.is_some()).count(),
        threshold_failures: 0,
        note: format!("{} MC rows, {outside} Fourier price(s) outside the 95% interval", rows.len()),
    })
}

/// Fourier prices from the first method and grid size of the `price`
/// block, when there is one.
/// Fourier reference prices from the first method and size of the price
/// block; `Ok(None)` when there is no price block.
fn fourier_prices(
    config: &RunConfig,
    model: &ModelParams,
    strikes: &[f64],
    payoff: vss::Payoff,
) -> Result<Vec<Result<Option<f64>, String>>, CommandError> {
    let Some(p) = &config.price else {
        return Ok(vec![Ok(None); strikes.len()]);
    };
    let method = *p.methods.first().ok_or_else(|| ConfigError("price.methods must not be empty".into()))?;
    let n = config.price_sizes(p)[0];
    let pricer = matrices(model, n).map(|km| Pricer::from_engine(TransformEngine::new(km)));
    Ok(strikes
        .iter()
        .map(|&k| {
            let req = config.price_request(p, k, method, n);
            let r = req
                .validate()
                .and_then(|_| pricer.as_ref().map_err(Clone::clone)?.put(&req))
                .map_err(|e| format!("Fourier price failed: {e}"))?;
            Ok(Some(match payoff {
                vss::Payoff::Call => r.call,
                vss::Payoff::Put => r.put,
            }))
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityRow {
    pub n: usize,
    pub re_u: f64,
    pub im_u: f64,
    pub re_w: f64,
    pub im_w: f64,
    pub rel_error: Option<f64>,
    pub pass: bool,
    pub error: Option<String>,
}

impl Row for IdentityRow {
    const HEADER: &'static [&'static str] = &["n", "re_u", "im_u", "re_w", "im_w", "rel_error", "pass", "error"];
}

fn identity_error(km: &KernelMatrices, point: &ArgPoint, quad_tol: f64) -> vss::Result<f64> {
    let (a, b) = build_ab(point, km.params());
    let det = lu_det(&build_phi_n(&build_sigma_tilde(km, b, 0)?, a, km.grid())).value();
    let phi = phi_tilde_n(km, point, quad_tol)?;
    Ok(((-2.0 * phi).exp() - det).norm() / det.norm())
}

pub fn det_identity_check(config: &RunConfig) -> Result<Summary, CommandError> {
    let id = config.validate_identity()?;
    let mut points = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(id.seed);
    let r = id.im_range;
    for _ in 0..id.points {
        let u = Complex64::new(rng.random_range(0.0..=1.0), rng.random_range(-r..=r));
        let w = Complex64::new(-rng.random_range(0.0..=2.0), rng.random_range(-r..=r));
        points.push((u, w));
    }
    if id.include_scan {
        let scan = config.scan.as_ref().unwrap();
        for x in scan.abscissae() {
            let p = scan.axis.point(scan.fixed_real, x).map_err(ConfigError::from)?;
            points.push((p.u, p.w));
        }
    }
    let sizes = if id.sizes.is_empty() { vec![config.grid.n] } else { id.sizes.clone() };
    let mut rows = Vec::new();
    for &n in &sizes {
        let km = matrices(&config.model, n);
        for &(u, w) in &points {
            let res = km
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|km| identity_error(km, &ArgPoint::new(u, w)?, id.quad_tol));
            let (rel_error, error) = match res {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(IdentityRow {
                n,
                re_u: u.re,
                im_u: u.im,
                re_w: w.re,
                im_w: w.im,
                rel_error,
                pass: rel_error.is_some_and(|e| e <= id.tolerance),
                error,
            });
        }
    }
    emit(config, &rows)?;
    let worst = rows.iter().filter_map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(Summary {
        rows: rows.len(),
        domain_errors: rows.iter().filter(|r| r.error.is_some()).count(),
        threshold_failures: rows.iter().filter(|r| r.error.is_none() && !r.pass).count(),
        note: format!("max relative error {worst:.3e} (tolerance {:.1e})", id.tolerance),
    })
}
