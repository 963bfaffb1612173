//! Monte Carlo oracle. The volatility is the discrete convolution of the
//! Brownian increments with the integrated-kernel weights of `K_n`, carried
//! out by FFT; the log-price follows Euler steps.
//!
//! Every draw owns a ChaCha8 stream selected by its index, so results do not
//! depend on how paths are split across threads.

use crate::error::{Error, Result};
use crate::kernel::{FractionalKernel, ModelParams, TimeGrid, VolterraKernel};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;
use std::sync::Arc;

pub const MAX_STEPS: usize = 1 << 20;
/// Upper limit on `paths * steps`.
pub const MAX_WORK: f64 = 1e12;
const DRAWS_PER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 || self.steps < 2 {
            return Err(Error::Config(format!(
                "need paths >= 2 and steps >= 2, got {} and {}",
                self.paths, self.steps
            )));
        }
        if self.antithetic && self.paths % 2 == 1 {
            return Err(Error::Config(format!(
                "antithetic sampling needs an even path count, got {}",
                self.paths
            )));
        }
        if self.steps > MAX_STEPS || self.paths as f64 * self.steps as f64 > MAX_WORK {
            return Err(Error::Config(format!(
                "{} paths x {} steps exceeds the simulation limits",
                self.paths, self.steps
            )));
        }
        Ok(())
    }

    fn draws(&self) -> usize {
        if self.antithetic {
            self.paths / 2
        } else {
            self.paths
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McResult {
    pub price: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
}

impl McResult {
    /// Mean and standard error of independent samples.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = pairwise_sum(samples) / n;
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if samples.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
        let stderr = (var / n).sqrt();
        Self {
            price: mean,
            stderr,
            ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci95.0 <= x && x <= self.ci95.1
    }
}

/// Componentwise estimate of a complex expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McComplexResult {
    pub re: McResult,
    pub im: McResult,
}

impl McComplexResult {
    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.re.price, self.im.price)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payoff {
    Call,
    Put,
}

impl Payoff {
    pub fn value(self, spot: f64, strike: f64) -> f64 {
        match self {
            Payoff::Call => (spot - strike).max(0.0),
            Payoff::Put => (strike - spot).max(0.0),
        }
    }
}

/// State of one path at maturity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    pub log_s: f64,
    /// Left-point Riemann sum of `X^2`.
    pub int_var: f64,
    pub x_t: f64,
}

/// Deterministic summation order, independent of thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    -SQRT_2 * erfc_inv(2.0 * u)
}

struct Simulator {
    params: ModelParams,
    config: McConfig,
    dt: f64,
    /// `g_0(t_j)` for `j = 0..=steps`.
    g: Vec<f64>,
    weights_hat: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// Buffers for one draw and the path built from it.
struct PathView<'a> {
    x: &'a [f64],
    dw: &'a [f64],
    dw_perp: &'a [f64],
}

impl Simulator {
    fn new(params: &ModelParams, config: &McConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let kernel = FractionalKernel::new(params.hurst)?;
        let steps = config.steps;
        let grid = TimeGrid::new(steps, params.maturity)?;
        let dt = grid.dt();
        let g = (0..=steps)
            .map(|j| {
                let t = grid.t(j);
                Ok(params.x0 + params.theta * kernel.integral(t, 0.0, t)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let len = (2 * steps + 2).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        let mut weights_hat = vec![Complex64::new(0.0, 0.0); len];
        for (m, w) in weights_hat.iter_mut().enumerate().take(steps + 1).skip(1) {
            let t = m as f64 * dt;
            // the inverse transform is unnormalized
            *w = Complex64::new(kernel.integral(t, 0.0, dt)? / len as f64, 0.0);
        }
        fft.process(&mut weights_hat);
        Ok(Self {
            params: *params,
            config: *config,
            dt,
            g,
            weights_hat,
            fft,
            ifft,
        })
    }

    fn fill_normals(&self, draw: usize, z: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(draw as u64);
        for v in z.iter_mut() {
            *v = standard_normal(&mut rng);
        }
    }

    /// Visits the paths generated by the draws in `draws`, in path order.
    fn run<F: FnMut(&PathView)>(&self, draws: std::ops::Range<usize>, mut visit: F) {
        let steps = self.config.steps;
        let len = self.weights_hat.len();
        let scale = self.params.nu / self.dt.sqrt();
        let sdt = self.dt.sqrt();
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len().max(self.ifft.get_inplace_scratch_len())];
        let mut z = [vec![0.0; 2 * steps], vec![0.0; 2 * steps]];
        let mut conv = [vec![0.0; steps + 1], vec![0.0; steps + 1]];
        let mut x = vec![0.0; steps + 1];
        let mut dw = vec![0.0; steps];
        let mut dw_perp = vec![0.0; steps];
        let mut d = draws.start;
        while d < draws.end {
            let pair = (draws.end - d).min(2);
            for p in 0..pair {
                self.fill_normals(d + p, &mut z[p]);
            }
            // two real convolutions in one complex transform
            for (j, b) in buf.iter_mut().enumerate() {
                *b = if j < steps {
                    Complex64::new(z[0][j], if pair == 2 { z[1][j] } else { 0.0 })
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (b, w) in buf.iter_mut().zip(&self.weights_hat) {
                *b *= w;
            }
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            for j in 0..=steps {
                conv[0][j] = buf[j].re;
                conv[1][j] = buf[j].im;
            }
            for p in 0..pair {
                let signs: &[f64] = if self.config.antithetic { &[1.0, -1.0] } else { &[1.0] };
                for &sign in signs {
                    for j in 0..=steps {
                        x[j] = self.g[j] + sign * scale * conv[p][j];
                    }
                    for j in 0..steps {
                        dw[j] = sign * sdt * z[p][j];
                        dw_perp[j] = sign * sdt * z[p][steps + j];
                    }
                    visit(&PathView {
                        x: &x,
                        dw: &dw,
                        dw_perp: &dw_perp,
                    });
                }
            }
            d += pair;
        }
    }

    fn chunks(&self) -> Vec<std::ops::Range<usize>> {
        let draws = self.config.draws();
        (0..draws)
            .step_by(DRAWS_PER_CHUNK)
            .map(|a| a..(a + DRAWS_PER_CHUNK).min(draws))
            .collect()
    }

    fn terminal(&self, path: &PathView) -> Terminal {
        let rho = self.params.rho;
        let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
        let mut log_s = self.params.s0.ln();
        let mut int_var = 0.0;
        for j in 0..self.config.steps {
            let x = path.x[j];
            let db = rho * path.dw[j] + rho_perp * path.dw_perp[j];
            log_s += x * db - 0.5 * x * x * self.dt;
            int_var += x * x * self.dt;
        }
        Terminal {
            log_s,
            int_var,
            x_t: path.x[self.config.steps],
        }
    }
}

/// Per-path `(log S_T, int_0^T X^2 ds, X_T)`, in path order. Antithetic
/// partners occupy consecutive indices.
pub fn simulate_terminals(params: &ModelParams, config: &McConfig) -> Result<Vec<Terminal>> {
    let sim = Simulator::new(params, config)?;
    let parts: Vec<Vec<Terminal>> = sim
        .chunks()
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(2 * r.len());
            sim.run(r, |p| out.push(sim.terminal(p)));
            out
        })
        .collect();
    Ok(parts.concat())
}

/// Samples entering the mean; antithetic partners are averaged first.
fn paired(values: Vec<f64>, antithetic: bool) -> Vec<f64> {
    if antithetic {
        values.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect()
    } else {
        values
    }
}

pub fn mc_price(params: &ModelParams, config: &McConfig, strike: f64, payoff: Payoff) -> Result<McResult> {
    Ok(mc_prices(params, config, &[strike], payoff)?[0])
}

/// Prices every strike on one set of paths.
pub fn mc_prices(params: &ModelParams, config: &McConfig, strikes: &[f64], payoff: Payoff) -> Result<Vec<McResult>> {
    if let Some(k) = strikes.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::Config(format!("strike must be positive, got {k}")));
    }
    let spots: Vec<f64> = simulate_terminals(params, config)?.iter().map(|t| t.log_s.exp()).collect();
    Ok(strikes
        .iter()
        .map(|&k| {
            let values = spots.iter().map(|&s| payoff.value(s, k)).collect();
            McResult::from_samples(&paired(values, config.antithetic))
        })
        .collect())
}

/// `E[exp(w int_0^T X^2 ds)]` for `Re(w) <= 0`.
pub fn mc_integrated_variance_transform(
    params: &ModelParams,
    config: &McConfig,
    w: Complex64,
) -> Result<McComplexResult> {
    if !(w.re <= 0.0 && w.im.is_finite()) {
        return Err(Error::Domain(format!("need Re(w) <= 0, got w = {w}")));
    }
    let terminals = simulate_terminals(params, config)?;
    let values: Vec<Complex64> = terminals.iter().map(|t| (w * t.int_var).exp()).collect();
    let re = paired(values.iter().map(|v| v.re).collect(), config.antithetic);
    let im = paired(values.iter().map(|v| v.im).collect(), config.antithetic);
    Ok(McComplexResult {
        re: McResult::from_samples(&re),
        im: McResult::from_samples(&im),
    })
}
