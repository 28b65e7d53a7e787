//! Frequency sweeps to impulse responses, and angular resampling.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::preprocess::{AngleDelayMatrix, Axes};

const FREQUENCY_GRID_TOLERANCE: f64 = 1e-6;

/// Taper applied to the sweep before the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    None,
    #[default]
    Hann,
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Window::None),
            "hann" => Ok(Window::Hann),
            other => Err(Error::InvalidParameter(format!("unknown window `{other}`"))),
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Window::None => "none",
            Window::Hann => "hann",
        })
    }
}

/// Sampled impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub samples: Vec<Complex64>,
    /// Sample spacing, seconds: `1 / (len * step_hz)`.
    pub t_s: f64,
}

/// Step of a uniform frequency grid.
pub fn uniform_frequency_step(freqs_hz: &[f64]) -> Result<f64> {
    if freqs_hz.len() < 2 {
        return Err(Error::InvalidParameter(
            "a sweep needs at least two frequency points".into(),
        ));
    }
    let step = freqs_hz[1] - freqs_hz[0];
    if !(step > 0.0) {
        return Err(Error::NonUniformFrequency(1));
    }
    for (i, w) in freqs_hz.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > FREQUENCY_GRID_TOLERANCE * step {
            return Err(Error::NonUniformFrequency(i + 1));
        }
    }
    Ok(step)
}

/// Coherent-gain-normalised taper of length `n`.
fn taper(window: Window, n: usize) -> Vec<f64> {
    match window {
        Window::None => vec![1.0; n],
        Window::Hann => {
            if n == 1 {
                return vec![1.0];
            }
            let w: Vec<f64> = (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos())
                .collect();
            let mean = w.iter().sum::<f64>() / n as f64;
            w.into_iter().map(|v| v / mean).collect()
        }
    }
}

/// Inverse transform of a uniform sweep, zero-padded to `fft_len` points
/// (at least the sweep length). The result has `fft_len` samples spaced
/// `1 / (fft_len * step_hz)`; a unit flat sweep maps to a unit impulse.
pub fn cfr_to_cir(
    cfr: &[Complex64],
    window: Window,
    step_hz: f64,
    fft_len: Option<usize>,
) -> Result<Cir> {
    let p = cfr.len();
    if p < 2 {
        return Err(Error::InvalidParameter(
            "a sweep needs at least two frequency points".into(),
        ));
    }
    if !(step_hz > 0.0 && step_hz.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "frequency step must be positive, got {step_hz}"
        )));
    }
    let len = fft_len.unwrap_or(p);
    if len < p {
        return Err(Error::InvalidParameter(format!(
            "transform length {len} is shorter than the sweep ({p})"
        )));
    }
    let w = taper(window, p);
    let mut buf: Vec<Complex64> = cfr.iter().zip(&w).map(|(h, w)| h * w).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / p as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(Cir {
        samples: buf,
        t_s: 1.0 / (len as f64 * step_hz),
    })
}

/// Forward transform undoing [`cfr_to_cir`] without window or padding.
pub fn cir_to_cfr(cir: &[Complex64]) -> Vec<Complex64> {
    let mut buf = cir.to_vec();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

/// Angular resampling result.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub cirs: Vec<Vec<Complex64>>,
    /// Targets outside the measured span, clamped to the nearest end.
    pub clamped: usize,
}

/// Complex linear interpolation of per-angle responses onto `target_deg`.
pub fn interpolate_angles(
    coarse_deg: &[f64],
    cirs: &[Vec<Complex64>],
    target_deg: &[f64],
) -> Result<Interpolated> {
    if coarse_deg.is_empty() || coarse_deg.len() != cirs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} angles for {} responses",
            coarse_deg.len(),
            cirs.len()
        )));
    }
    let len = cirs[0].len();
    if let Some((row, c)) = cirs.iter().enumerate().find(|(_, c)| c.len() != len) {
        return Err(Error::Ragged {
            row,
            len: c.len(),
            expected: len,
        });
    }
    if coarse_deg.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "measured angles must be strictly increasing".into(),
        ));
    }
    let (lo, hi) = (coarse_deg[0], coarse_deg[coarse_deg.len() - 1]);
    let mut clamped = 0;
    let mut out = Vec::with_capacity(target_deg.len());
    for &t in target_deg {
        if t < lo || t > hi {
            clamped += 1;
        }
        let t = t.clamp(lo, hi);
        let j = coarse_deg
            .partition_point(|a| *a <= t)
            .clamp(1, coarse_deg.len())
            - 1;
        if j + 1 == coarse_deg.len() || coarse_deg[j] == t {
            out.push(cirs[j].clone());
            continue;
        }
        let f = (t - coarse_deg[j]) / (coarse_deg[j + 1] - coarse_deg[j]);
        out.push(
            cirs[j]
                .iter()
                .zip(&cirs[j + 1])
                .map(|(a, b)| a * (1.0 - f) + b * f)
                .collect(),
        );
    }
    Ok(Interpolated { cirs: out, clamped })
}

/// Frequency sweeps measured at one position, one per steering angle.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSet {
    /// Strictly increasing.
    pub angles_deg: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    /// `cfr[n][p]` at `angles_deg[n]`, `freqs_hz[p]`.
    pub cfr: Vec<Vec<Complex64>>,
}

/// Parses `angle_deg,freq_hz,re,im` rows (header line first). Rows of one
/// angle must be contiguous and share the frequency list of the first angle.
pub fn sweeps_from_csv(text: &str) -> Result<SweepSet> {
    let mut set = SweepSet {
        angles_deg: Vec::new(),
        freqs_hz: Vec::new(),
        cfr: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("sweep line {}", i + 1);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(
                &loc,
                format!("expected 4 fields, found {}", f.len()),
            ));
        }
        let mut v = [0.0; 4];
        for (slot, t) in v.iter_mut().zip(&f) {
            *slot = t
                .parse()
                .map_err(|e| Error::parse(&loc, format!("`{t}`: {e}")))?;
        }
        let [angle, freq, re, im] = v;
        if set.angles_deg.last() != Some(&angle) {
            if set.angles_deg.last().is_some_and(|a| angle <= *a) {
                return Err(Error::parse(&loc, "angles must increase"));
            }
            set.angles_deg.push(angle);
            set.cfr.push(Vec::new());
        }
        let n = set.cfr.len() - 1;
        let p = set.cfr[n].len();
        if n == 0 {
            set.freqs_hz.push(freq);
        } else if set.freqs_hz.get(p) != Some(&freq) {
            return Err(Error::parse(
                &loc,
                format!("frequency {freq} does not match the first sweep"),
            ));
        }
        set.cfr[n].push(Complex64::new(re, im));
    }
    if set.cfr.is_empty() {
        return Err(Error::parse("sweep file", "no samples"));
    }
    if let Some((row, c)) = set
        .cfr
        .iter()
        .enumerate()
        .find(|(_, c)| c.len() != set.freqs_hz.len())
    {
        return Err(Error::Ragged {
            row,
            len: c.len(),
            expected: set.freqs_hz.len(),
        });
    }
    Ok(set)
}

pub fn sweeps_to_csv(set: &SweepSet) -> String {
    let mut s = String::from("angle_deg,freq_hz,re,im\n");
    for (a, row) in set.angles_deg.iter().zip(&set.cfr) {
        for (f, c) in set.freqs_hz.iter().zip(row) {
            s.push_str(&format!("{a},{f},{},{}\n", c.re, c.im));
        }
    }
    s
}

/// Angle-delay magnitudes on a uniform steering grid from `start_deg` to
/// `end_deg`, keeping the first `n_bins` delay samples when given.
/// Returns the matrix and the number of steering angles clamped to the
/// measured span.
pub fn angle_delay_from_sweeps(
    set: &SweepSet,
    window: Window,
    start_deg: f64,
    end_deg: f64,
    step_deg: f64,
    n_bins: Option<usize>,
) -> Result<(AngleDelayMatrix, usize)> {
    if !(step_deg > 0.0 && end_deg >= start_deg) {
        return Err(Error::InvalidParameter(format!(
            "steering grid {start_deg}..{end_deg} step {step_deg} is empty"
        )));
    }
    let step_hz = uniform_frequency_step(&set.freqs_hz)?;
    let cirs = set
        .cfr
        .iter()
        .map(|c| cfr_to_cir(c, window, step_hz, None))
        .collect::<Result<Vec<_>>>()?;
    let t_s = cirs[0].t_s;
    let n_angles = ((end_deg - start_deg) / step_deg).round() as usize + 1;
    let target: Vec<f64> = (0..n_angles)
        .map(|i| start_deg + i as f64 * step_deg)
        .collect();
    let samples: Vec<Vec<Complex64>> = cirs.into_iter().map(|c| c.samples).collect();
    let interp = interpolate_angles(&set.angles_deg, &samples, &target)?;
    let len = samples[0].len();
    let bins = n_bins.unwrap_or(len).min(len);
    let values = interp
        .cirs
        .iter()
        .flat_map(|c| c[..bins].iter().map(|z| z.norm()))
        .collect();
    let axes = Axes {
        angle_start_deg: start_deg,
        angle_step_deg: step_deg,
        t_min: 0.0,
        t_s,
    };
    Ok((
        AngleDelayMatrix::new(values, n_angles, bins, axes)?,
        interp.clamped,
    ))
}
