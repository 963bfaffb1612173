//! Where `det Phi_n` crosses the negative real axis.

use crate::cmatrix::{lu_invert, sym_eigenvalues, wrap_angle, RealMatrix};
use crate::error::{Error, Result};
use crate::kernel::KernelMatrices;
use crate::transform::{det_phi, jump_step, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Descending eigenvalues of `(T/n) SigmaTilde_n` for a real `b`.
pub fn spectrum(km: &KernelMatrices, b: f64) -> Result<Vec<f64>> {
    let n = km.n();
    let l = RealMatrix::identity(n).sub(&km.k_n().scaled(b));
    let li = lu_invert(&l)?;
    let st = li.matmul(km.sigma(0)?.as_ref()).matmul(&li.transpose());
    let mut eig = sym_eigenvalues(&st.scaled(km.grid().dt()))?;
    let floor = -1e-12 * eig.first().copied().unwrap_or(0.0).abs().max(1.0);
    for e in &mut eig {
        if *e < floor {
            return Err(Error::Numerical(format!(
                "adjusted covariance has eigenvalue {e:e} below the round-off gate"
            )));
        }
        *e = e.max(0.0);
    }
    Ok(eig)
}

/// `theta = sum_k arctan(y_k / x_k)` with `x = 1 - 2 Re(a) lambda`,
/// `y = -2 Im(a) lambda`.
pub fn theta_from_spectrum(spectrum: &[f64], a: Complex64) -> Result<f64> {
    let mut theta = 0.0;
    for &l in spectrum {
        let x = 1.0 - 2.0 * a.re * l;
        if x <= 0.0 {
            return Err(Error::Domain(format!("1 - 2 Re(a) lambda = {x} is not positive")));
        }
        theta += (-2.0 * a.im * l / x).atan();
    }
    Ok(theta)
}

fn count_above(spectrum: &[f64], r: f64) -> usize {
    spectrum.iter().filter(|&&l| l > r).count()
}

/// Upper bound on the first crossing in `Im(w)` (integrated variance),
/// defined when at least three eigenvalues exceed `r`.
pub fn bound_first_crossing_intvar(spectrum: &[f64], r: f64, re_w: f64) -> Option<f64> {
    let nr = count_above(spectrum, r);
    if !(r > 0.0) || nr < 3 {
        return None;
    }
    Some((PI / nr as f64).tan() * (0.5 / r - re_w))
}

/// Upper bound on the first crossing in `Im(u)` for an uncorrelated
/// log-price, defined when `N_r >= 3` and the radicand is nonnegative.
pub fn bound_first_crossing_logprice(spectrum: &[f64], r: f64, re_u: f64) -> Option<f64> {
    let nr = count_above(spectrum, r);
    if !(r > 0.0) || nr < 3 {
        return None;
    }
    let h = (1.0 - 2.0 * re_u) / (2.0 * (PI / nr as f64).tan());
    let radicand = h * h - 4.0 * (1.0 / r + re_u * (1.0 - re_u));
    if radicand < 0.0 {
        return None;
    }
    Some(h.abs() - radicand.sqrt())
}

/// `L = 2 sum_k arctan(lambda_k / (1 - 2 Re(w) lambda_k))`.
pub fn lipschitz_bound_intvar(spectrum: &[f64], re_w: f64) -> f64 {
    2.0 * spectrum
        .iter()
        .map(|&l| (l / (1.0 - 2.0 * re_w * l)).atan())
        .sum::<f64>()
}

/// `sup |d theta / d Im(w)| = 2 sum_k lambda_k / (1 - 2 Re(w) lambda_k)`,
/// attained at `Im(w) = 0`.
pub fn theta_slope_sup_intvar(spectrum: &[f64], re_w: f64) -> f64 {
    2.0 * spectrum.iter().map(|&l| l / (1.0 - 2.0 * re_w * l)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingScan {
    pub axis: Axis,
    pub fixed_real: f64,
    pub upper: f64,
    pub step: f64,
    /// When given, `step` must not exceed `pi / l_theta`.
    #[serde(default)]
    pub l_theta: Option<f64>,
}

impl CrossingScan {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("scan step must be positive, got {}", self.step)));
        }
        if !(self.upper >= 0.0 && self.upper.is_finite()) {
            return Err(Error::Config(format!("scan upper limit must be >= 0, got {}", self.upper)));
        }
        if let Some(l) = self.l_theta {
            if !(l > 0.0) {
                return Err(Error::Config(format!("Lipschitz constant must be positive, got {l}")));
            }
            if self.step > PI / l * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "step {} exceeds pi / L = {}",
                    self.step,
                    PI / l
                )));
            }
        }
        self.axis.point(self.fixed_real, 0.0).map(|_| ())
    }

    /// `0, step, 2 step, ...` with `upper` appended.
    pub fn abscissae(&self) -> Vec<f64> {
        let m = (self.upper / self.step).floor() as usize;
        let mut x: Vec<f64> = (0..=m).map(|i| i as f64 * self.step).collect();
        if *x.last().unwrap() < self.upper {
            x.push(self.upper);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub lower: f64,
    pub upper: f64,
    /// Change of the rotation count across the interval.
    pub direction: i64,
}

impl Crossing {
    pub fn location(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingReport {
    pub axis: Axis,
    pub fixed_real: f64,
    pub grid: Vec<f64>,
    pub log_modulus: Vec<f64>,
    pub arg_det: Vec<f64>,
    pub k_profile: Vec<i64>,
    pub crossings: Vec<Crossing>,
    pub first_crossing: Option<f64>,
    pub spectrum: Vec<f64>,
    /// `(r, bound)` pairs over [`bound_radii`].
    pub bounds: Vec<(f64, Option<f64>)>,
}

/// Ten radii spaced logarithmically over three decades below the top
/// eigenvalue.
pub fn bound_radii(spectrum: &[f64]) -> Vec<f64> {
    let top = spectrum.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Vec::new();
    }
    (0..10)
        .map(|j| top * 10f64.powf(-3.0 * (j as f64 + 1.0) / 10.0))
        .collect()
}

fn arg_at(km: &KernelMatrices, axis: Axis, fixed_real: f64, x: f64) -> Result<f64> {
    Ok(det_phi(km, &axis.point(fixed_real, x)?)?.arg)
}

pub fn scan_crossings(km: &KernelMatrices, scan: &CrossingScan) -> Result<CrossingReport> {
    scan.validate()?;
    let grid = scan.abscissae();
    let dets: Vec<_> = grid
        .par_iter()
        .map(|&x| det_phi(km, &scan.axis.point(scan.fixed_real, x)?))
        .collect::<Result<_>>()?;
    let arg_det: Vec<f64> = dets.iter().map(|d| d.arg).collect();
    let log_modulus = dets.iter().map(|d| d.log_modulus).collect();
    let mut k_profile = vec![0i64; grid.len()];
    let mut jumps = Vec::new();
    for i in 1..grid.len() {
        let s = jump_step(arg_det[i - 1], arg_det[i]);
        k_profile[i] = k_profile[i - 1] + s;
        if s != 0 {
            jumps.push((i - 1, s));
        }
    }
    let crossings = jumps
        .par_iter()
        .map(|&(i, s)| {
            let (mut lo, mut hi) = (grid[i], grid[i + 1]);
            let lo_arg = arg_det[i];
            let width = scan.step / 100.0;
            while hi - lo > width {
                let mid = 0.5 * (lo + hi);
                let m = arg_at(km, scan.axis, scan.fixed_real, mid)?;
                if jump_step(lo_arg, m) != 0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(Crossing {
                lower: lo,
                upper: hi,
                direction: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first_crossing = crossings.first().map(Crossing::location);
    let spec = spectrum(km, 0.0)?;
    let bounds = bound_radii(&spec)
        .into_iter()
        .map(|r| {
            let b = match scan.axis {
                Axis::W => bound_first_crossing_intvar(&spec, r, scan.fixed_real),
                Axis::U => bound_first_crossing_logprice(&spec, r, scan.fixed_real),
            };
            (r, b)
        })
        .collect();
    Ok(CrossingReport {
        axis: scan.axis,
        fixed_real: scan.fixed_real,
        grid,
        log_modulus,
        arg_det,
        k_profile,
        crossings,
        first_crossing,
        spectrum: spec,
        bounds,
    })
}

/// Probes and safety factor of [`default_lipschitz`].
pub const LIPSCHITZ_PROBES: usize = 64;
pub const LIPSCHITZ_SAFETY: f64 = 1.5;

/// Empirical Lipschitz constant with the default probes and seed 0; a flat
/// argument, which never wraps, gets `L = 1`.
pub fn default_lipschitz(km: &KernelMatrices, axis: Axis, fixed_real: f64, upper: f64) -> Result<f64> {
    let l = lipschitz_estimate_empirical(km, axis, fixed_real, upper, LIPSCHITZ_PROBES, LIPSCHITZ_SAFETY, 0)?;
    Ok(if l > 0.0 { l } else { 1.0 })
}

/// Safety-scaled maximum of sampled `|d arg det / dx|` over `[0, upper]`.
///
/// One random difference pair per stratum, then a finer pass around the
/// steepest stratum.
pub fn lipschitz_estimate_empirical(
    km: &KernelMatrices,
    axis: Axis,
    fixed_real: f64,
    upper: f64,
    probe_count: usize,
    safety: f64,
    seed: u64,
) -> Result<f64> {
    if probe_count < 16 {
        return Err(Error::Config(format!("probe_count must be >= 16, got {probe_count}")));
    }
    if !(safety >= 1.0) {
        return Err(Error::Config(format!("safety factor must be >= 1, got {safety}")));
    }
    if !(upper > 0.0 && upper.is_finite()) {
        return Err(Error::Config(format!("scan upper limit must be positive, got {upper}")));
    }
    axis.point(fixed_real, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = upper / probe_count as f64;
    let h = width / 64.0;
    let starts: Vec<f64> = (0..probe_count)
        .map(|j| (j as f64 + rng.random::<f64>()) * width - h * rng.random::<f64>())
        .map(|x| x.clamp(0.0, upper - h))
        .collect();
    let slope = |x: f64, dx: f64| -> Result<f64> {
        let a0 = arg_at(km, axis, fixed_real, x)?;
        let a1 = arg_at(km, axis, fixed_real, x + dx)?;
        Ok(wrap_angle(a1 - a0).abs() / dx)
    };
    let coarse: Vec<f64> = starts
        .par_iter()
        .map(|&x| slope(x, h))
        .collect::<Result<_>>()?;
    let (best, &best_slope) = coarse
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let centre = starts[best];
    let lo = (centre - width).max(0.0);
    let hi = (centre + width).min(upper);
    let fine_h = h / 8.0;
    let fine: Vec<f64> = (0..probe_count)
        .map(|j| lo + (hi - lo - fine_h).max(0.0) * (j as f64 + 0.5) / probe_count as f64)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&x| slope(x, fine_h))
        .collect::<Result<_>>()?;
    let m = fine.into_iter().fold(best_slope, f64::max);
    Ok(safety * m)
}
