//! Backscatter channel spread statistics.
//!
//! Delay spread is the power-weighted standard deviation of path delays.
//! Angular spread follows Fleury: the power-weighted dispersion of the unit
//! phasors `exp(j phi)` around their weighted mean.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::preprocess::{extract_paths, Frame, PathSet};

/// Spread statistics of one path set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadStats {
    /// Mean delay, seconds.
    pub tau_mean: f64,
    /// RMS delay spread, seconds.
    pub tau_rms: f64,
    /// Weighted circular mean of the unit phasors.
    pub phi_mean: Complex64,
    /// Dimensionless Fleury spread, in [0, 1] for unit phasors.
    pub phi_spread: f64,
}

impl SpreadStats {
    /// Fleury spread converted with `sigma * 180 / pi`.
    pub fn phi_spread_deg_equiv(&self) -> f64 {
        self.phi_spread.to_degrees()
    }
}

fn total_power(paths: &PathSet) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::EmptyPathSet);
    }
    let p: f64 = paths.paths.iter().map(|p| p.power).sum();
    if !(p > 0.0) {
        return Err(Error::InvalidParameter("path set carries no power".into()));
    }
    Ok(p)
}

/// `(tau_mean, tau_rms)` in seconds.
pub fn delay_spread(paths: &PathSet) -> Result<(f64, f64)> {
    let total = total_power(paths)?;
    let mean = paths.paths.iter().map(|p| p.power * p.delay).sum::<f64>() / total;
    let var = paths
        .paths
        .iter()
        .map(|p| p.power * (p.delay - mean).powi(2))
        .sum::<f64>()
        / total;
    Ok((mean, var.sqrt()))
}

/// `(mu_phi, sigma_phi)`; azimuths taken in radians.
pub fn angular_spread(paths: &PathSet) -> Result<(Complex64, f64)> {
    let total = total_power(paths)?;
    let phasor = |deg: f64| Complex64::from_polar(1.0, deg.to_radians());
    let mean = paths
        .paths
        .iter()
        .map(|p| phasor(p.azimuth_deg) * p.power)
        .sum::<Complex64>()
        / total;
    Ok((mean, (1.0 - mean.norm_sqr()).max(0.0).sqrt()))
}

pub fn spread_stats(paths: &PathSet) -> Result<SpreadStats> {
    let (tau_mean, tau_rms) = delay_spread(paths)?;
    let (phi_mean, phi_spread) = angular_spread(paths)?;
    Ok(SpreadStats {
        tau_mean,
        tau_rms,
        phi_mean,
        phi_spread,
    })
}

/// Empirical distribution of a sample with its log-normal fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfFit {
    /// Sorted sample.
    pub sorted: Vec<f64>,
    /// Fit `(mu, sigma)` of the logarithm, when every sample is positive.
    pub lognormal: Option<(f64, f64)>,
}

impl EcdfFit {
    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        let count = self.sorted.partition_point(|v| *v <= x);
        count as f64 / self.sorted.len() as f64
    }

    /// Step points `(x_i, F(x_i))`, one per distinct value.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = f,
                _ => out.push((v, f)),
            }
        }
        out
    }
}

/// Right-continuous empirical CDF; NaNs are dropped.
pub fn ecdf(values: &[f64]) -> EcdfFit {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let lognormal = lognormal_fit(&sorted).ok();
    EcdfFit { sorted, lognormal }
}

/// Mean and population standard deviation of `ln(x)`.
pub fn lognormal_fit(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(
            "log-normal fit needs at least one sample".into(),
        ));
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveSample(*bad));
    }
    let n = values.len() as f64;
    // Deviations from the first log keep a constant sample exact.
    let l0 = values[0].ln();
    let dev: Vec<f64> = values.iter().map(|v| v.ln() - l0).collect();
    let shift = dev.iter().sum::<f64>() / n;
    let var = dev.iter().map(|d| (d - shift).powi(2)).sum::<f64>() / n;
    Ok((l0 + shift, var.sqrt()))
}

/// Per-position statistics and their aggregate over a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadReport {
    /// `(scan_index, stats)` for each position with at least one path.
    pub positions: Vec<(usize, SpreadStats)>,
    /// Scan indices skipped for lack of paths.
    pub skipped: Vec<usize>,
    /// Root mean square of `tau_rms` over positions, seconds.
    pub tau_rms_aggregate: f64,
    /// Root mean square of `phi_spread` over positions.
    pub phi_spread_aggregate: f64,
}

pub fn scenario_spread_report(frames: &[Frame]) -> SpreadReport {
    let mut positions = Vec::new();
    let mut skipped = Vec::new();
    for frame in frames {
        match spread_stats(&extract_paths(frame)) {
            Ok(stats) => positions.push((frame.scan_index(), stats)),
            Err(_) => skipped.push(frame.scan_index()),
        }
    }
    let rms = |f: fn(&SpreadStats) -> f64| {
        if positions.is_empty() {
            0.0
        } else {
            (positions.iter().map(|(_, s)| f(s).powi(2)).sum::<f64>() / positions.len() as f64)
                .sqrt()
        }
    };
    SpreadReport {
        tau_rms_aggregate: rms(|s| s.tau_rms),
        phi_spread_aggregate: rms(|s| s.phi_spread),
        positions,
        skipped,
    }
}
