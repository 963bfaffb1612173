use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use vss::transform::{Axis, Method};
use vss::{LewisScheme, ModelParams, Payoff};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl From<vss::Error> for ConfigError {
    fn from(e: vss::Error) -> Self {
        ConfigError(e.to_string())
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Format,
}

/// Model parameter varied across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Nu,
    Theta,
    Rho,
    X0,
    Hurst,
    Maturity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn apply(&self, model: &ModelParams, value: f64) -> ModelParams {
        let mut m = *model;
        match self.param {
            SweepParam::Nu => m.nu = value,
            SweepParam::Theta => m.theta = value,
            SweepParam::Rho => m.rho = value,
            SweepParam::X0 => m.x0 = value,
            SweepParam::Hurst => m.hurst = value,
            SweepParam::Maturity => m.maturity = value,
        }
        m
    }
}

fn default_n_coarse() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub method: Method,
    pub axis: Axis,
    pub fixed_real: f64,
    #[serde(default)]
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
    #[serde(default = "default_n_coarse")]
    pub n_coarse: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_theta: Option<f64>,
}

impl ScanConfig {
    /// `lower, lower + step, ...` up to `upper`; empty when `upper < lower`.
    pub fn abscissae(&self) -> Vec<f64> {
        if self.upper < self.lower {
            return Vec::new();
        }
        let m = ((self.upper - self.lower) / self.step * (1.0 + 1e-12)).floor() as usize;
        (0..=m).map(|i| self.lower + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingConfig {
    pub axis: Axis,
    pub fixed_real: f64,
    pub upper: f64,
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_theta: Option<f64>,
}

fn default_degree() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    pub strikes: Vec<f64>,
    /// Defaults to the model maturity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maturities: Vec<f64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Grid sizes; defaults to `grid.n`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_n_coarse")]
    pub n_coarse: usize,
    #[serde(default)]
    pub scheme: LewisScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_theta: Option<f64>,
}

fn default_payoff() -> Payoff {
    Payoff::Call
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    pub strikes: Vec<f64>,
    #[serde(default = "default_payoff")]
    pub payoff: Payoff,
    /// Fourier prices to test for containment, aligned with `strikes`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fourier: Vec<f64>,
}

impl McBlock {
    pub fn mc_config(&self) -> vss::McConfig {
        vss::McConfig {
            paths: self.paths,
            steps: self.steps,
            seed: self.seed,
            antithetic: self.antithetic,
        }
    }
}

fn default_points() -> usize {
    20
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_quad_tol() -> f64 {
    1e-11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    /// Random points drawn with `Re u in [0, 1]`, `Re w in [-2, 0]` and
    /// imaginary parts in `[-im_range, im_range]`.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_im_range")]
    pub im_range: f64,
    /// Grid sizes; defaults to `grid.n`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
    /// Also check every point of the `scan` block.
    #[serde(default)]
    pub include_scan: bool,
}

fn default_im_range() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridConfig,
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing: Option<CrossingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<PriceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<IdentityConfig>,
}

/// Loads `path` and applies `key.path=value` overrides; values are parsed
/// as TOML and fall back to plain strings.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut doc: toml::Table = text.parse().map_err(|e| ConfigError(format!("invalid TOML: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError(format!("invalid configuration: {}", e.message())))
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let Some((key, raw)) = spec.split_once('=') else {
        return err(format!("override '{spec}' is not of the form key=value"));
    };
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().unwrap();
    let mut table = doc;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override '{key}': '{p}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

pub fn to_toml(config: &RunConfig) -> String {
    toml::to_string(config).expect("configuration serializes")
}

impl RunConfig {
    pub fn models(&self) -> Vec<(Option<f64>, ModelParams)> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| (Some(v), s.apply(&self.model, v))).collect(),
            None => vec![(None, self.model)],
        }
    }

    fn validate_common(&self) -> Result<(), ConfigError> {
        if self.grid.n == 0 {
            return err("grid.n must be >= 1");
        }
        for (_, m) in self.models() {
            m.validate()?;
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return err("sweep.values must not be empty");
            }
        }
        Ok(())
    }

    pub fn validate_transform_scan(&self) -> Result<&ScanConfig, ConfigError> {
        self.validate_common()?;
        if self.sweep.is_some() {
            return err("transform-scan does not support a sweep block");
        }
        let Some(scan) = &self.scan else {
            return err("transform-scan needs a [scan] block");
        };
        if !(scan.step > 0.0 && scan.step.is_finite()) {
            return err(format!("scan.step must be positive, got {}", scan.step));
        }
        if !(scan.lower.is_finite() && scan.upper.is_finite()) {
            return err("scan range must be finite");
        }
        if scan.method == Method::Hybrid && !(2..=self.grid.n).contains(&scan.n_coarse) {
            return err(format!("scan.n_coarse must lie in [2, {}], got {}", self.grid.n, scan.n_coarse));
        }
        if let Some(l) = scan.l_theta {
            if !(l > 0.0 && l.is_finite()) {
                return err(format!("scan.l_theta must be positive, got {l}"));
            }
        }
        scan.axis.point(scan.fixed_real, 0.0)?;
        Ok(scan)
    }

    pub fn validate_crossing_scan(&self) -> Result<vss::CrossingScan, ConfigError> {
        self.validate_common()?;
        let Some(c) = &self.crossing else {
            return err("crossing-scan needs a [crossing] block");
        };
        let scan = vss::CrossingScan {
            axis: c.axis,
            fixed_real: c.fixed_real,
            upper: c.upper,
            step: c.step,
            l_theta: c.l_theta,
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate_price(&self) -> Result<&PriceConfig, ConfigError> {
        self.validate_common()?;
        let Some(p) = &self.price else {
            return err("price needs a [price] block");
        };
        if p.strikes.is_empty() || p.methods.is_empty() {
            return err("price.strikes and price.methods must not be empty");
        }
        if let Some(t) = p.maturities.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return err(format!("price.maturities must be positive, got {t}"));
        }
        for &n in &self.price_sizes(p) {
            for &m in &p.methods {
                for &k in &p.strikes {
                    self.price_request(p, k, m, n).validate()?;
                }
            }
        }
        Ok(p)
    }

    pub fn price_sizes(&self, p: &PriceConfig) -> Vec<usize> {
        if p.sizes.is_empty() {
            vec![self.grid.n]
        } else {
            p.sizes.clone()
        }
    }

    pub fn price_request(&self, p: &PriceConfig, strike: f64, method: Method, n: usize) -> vss::PriceRequest {
        vss::PriceRequest {
            strike,
            method,
            quad_degree: p.degree,
            n,
            n_coarse: p.n_coarse,
            l_theta: p.l_theta,
            scheme: p.scheme,
        }
    }

    pub fn validate_mc(&self) -> Result<&McBlock, ConfigError> {
        self.validate_common()?;
        let Some(mc) = &self.mc else {
            return err("mc-benchmark needs an [mc] block");
        };
        mc.mc_config().validate()?;
        if mc.strikes.is_empty() {
            return err("mc.strikes must not be empty");
        }
        if let Some(k) = mc.strikes.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
            return err(format!("mc.strikes must be positive, got {k}"));
        }
        if !mc.fourier.is_empty() && mc.fourier.len() != mc.strikes.len() {
            return err(format!(
                "mc.fourier has {} entries for {} strikes",
                mc.fourier.len(),
                mc.strikes.len()
            ));
        }
        Ok(mc)
    }

    pub fn validate_identity(&self) -> Result<&IdentityConfig, ConfigError> {
        self.validate_common()?;
        if self.sweep.is_some() {
            return err("det-identity-check does not support a sweep block");
        }
        let Some(id) = &self.identity else {
            return err("det-identity-check needs an [identity] block");
        };
        if !(id.tolerance > 0.0 && id.quad_tol > 0.0) {
            return err("identity.tolerance and identity.quad_tol must be positive");
        }
        if !(id.im_range >= 0.0 && id.im_range.is_finite()) {
            return err(format!("identity.im_range must be >= 0, got {}", id.im_range));
        }
        if id.sizes.contains(&0) {
            return err("identity.sizes must be >= 1");
        }
        if id.include_scan {
            self.validate_transform_scan()?;
        }
        Ok(id)
    }
}
