//! 2D transforms and phase correlation.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Relative floor below which cross-power bins are treated as empty.
pub const CPS_EPSILON: f64 = 1e-12;

/// Dense real grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// Circularly shifted copy: `out[r][c] = self[r - dr][c - dc]`.
    pub fn circular_shift(&self, dr: isize, dc: isize) -> Self {
        let mut out = Self::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let sr = (r as isize - dr).rem_euclid(self.rows as isize) as usize;
            for c in 0..self.cols {
                let sc = (c as isize - dc).rem_euclid(self.cols as isize) as usize;
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }

    /// Multiplies by a separable periodic Hann window peaking at the centre.
    pub fn hann_windowed(&self) -> Self {
        let wr = hann(self.rows);
        let wc = hann(self.cols);
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[r * self.cols + c] *= wr[r] * wc[c];
            }
        }
        out
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Complex frequency-domain grid, unshifted (DC at index 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    /// Element-wise magnitude with DC moved to `(rows / 2, cols / 2)`.
    pub fn centered_magnitude(&self) -> RealGrid {
        let mut out = RealGrid::zeros(self.rows, self.cols);
        let (hr, hc) = (self.rows / 2, self.cols / 2);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.get(r, c).norm();
                out.set((r + hr) % self.rows, (c + hc) % self.cols, v);
            }
        }
        out
    }
}

fn transform_rows(
    data: &mut [Complex64],
    rows: usize,
    cols: usize,
    inverse: bool,
    planner: &mut FftPlanner<f64>,
) {
    let fft = if inverse {
        planner.plan_fft_inverse(cols)
    } else {
        planner.plan_fft_forward(cols)
    };
    debug_assert_eq!(data.len(), rows * cols);
    fft.process(data);
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn transform_2d(
    mut data: Vec<Complex64>,
    rows: usize,
    cols: usize,
    inverse: bool,
) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    transform_rows(&mut data, rows, cols, inverse, &mut planner);
    let mut t = transpose(&data, rows, cols);
    transform_rows(&mut t, cols, rows, inverse, &mut planner);
    transpose(&t, cols, rows)
}

/// Forward 2D DFT of a real grid.
pub fn fft2(grid: &RealGrid) -> Spectrum2D {
    let data = grid.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Spectrum2D {
        rows: grid.rows,
        cols: grid.cols,
        data: transform_2d(data, grid.rows, grid.cols, false),
    }
}

/// Unnormalised inverse 2D DFT.
pub fn ifft2(spec: &Spectrum2D) -> Vec<Complex64> {
    transform_2d(spec.data.clone(), spec.rows, spec.cols, true)
}

/// Normalised cross-power spectrum `A conj(B) / |A conj(B)|`.
///
/// Bins whose product magnitude falls below [`CPS_EPSILON`] times the mean
/// product magnitude are set to zero.
pub fn cross_power_spectrum(a: &Spectrum2D, b: &Spectrum2D) -> Result<Spectrum2D> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "cross-power spectrum of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let products: Vec<Complex64> = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x * y.conj())
        .collect();
    let mean = products.iter().map(|p| p.norm()).sum::<f64>() / products.len().max(1) as f64;
    let floor = CPS_EPSILON * mean;
    let data = products
        .into_iter()
        .map(|p| {
            let mag = p.norm();
            if mag < floor || mag == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                p / mag
            }
        })
        .collect();
    Ok(Spectrum2D {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Location and strength of a phase-correlation peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakShift {
    /// Integer peak location as signed circular shifts.
    pub shift_rows: isize,
    pub shift_cols: isize,
    /// Refined shift (equal to the integer shift unless sub-cell refinement ran).
    pub rows: f64,
    pub cols: f64,
    /// Peak height over the summed modulus of the cross-power spectrum, in [0, 1].
    pub quality: f64,
}

impl PeakShift {
    pub const NONE: PeakShift = PeakShift {
        shift_rows: 0,
        shift_cols: 0,
        rows: 0.0,
        cols: 0.0,
        quality: 0.0,
    };
}

/// Signed representative of a circular index.
pub(crate) fn signed_index(i: usize, n: usize) -> isize {
    if i > n / 2 {
        i as isize - n as isize
    } else {
        i as isize
    }
}

/// Finds the shift `s` such that `b(x) ≈ a(x - s)`.
///
/// `subpixel` adds a three-point parabolic refinement on each axis.
pub fn phase_correlation(a: &RealGrid, b: &RealGrid, subpixel: bool) -> Result<PeakShift> {
    phase_correlation_boxed(a, b, subpixel, 1)
}

/// Phase correlation whose peak is located on the surface summed over a
/// `box_width` square (odd). Quality is that box sum; sub-cell refinement
/// takes the centroid of the positive surface inside the box.
pub fn phase_correlation_boxed(
    a: &RealGrid,
    b: &RealGrid,
    subpixel: bool,
    box_width: usize,
) -> Result<PeakShift> {
    if box_width == 0 || box_width % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "peak box width must be odd, got {box_width}"
        )));
    }
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "phase correlation of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.is_all_zero() || b.is_all_zero() {
        return Ok(PeakShift::NONE);
    }
    let cps = cross_power_spectrum(&fft2(b), &fft2(a))?;
    Ok(correlation_peak_boxed(&cps, subpixel, box_width))
}

/// Peak of the inverse transform of a cross-power spectrum.
pub fn correlation_peak(cps: &Spectrum2D, subpixel: bool) -> PeakShift {
    correlation_peak_boxed(cps, subpixel, 1)
}

fn correlation_peak_boxed(cps: &Spectrum2D, subpixel: bool, box_width: usize) -> PeakShift {
    let total: f64 = cps.data.iter().map(|c| c.norm()).sum();
    if total == 0.0 {
        return PeakShift::NONE;
    }
    let surface: Vec<f64> = ifft2(cps).into_iter().map(|c| c.re).collect();
    let (rows, cols) = (cps.rows, cps.cols);
    let search = if box_width > 1 {
        box_sum(&surface, rows, cols, box_width / 2)
    } else {
        surface.clone()
    };
    let (mut best, mut best_search) = (0, f64::NEG_INFINITY);
    for (i, &v) in search.iter().enumerate() {
        if v > best_search {
            best_search = v;
            best = i;
        }
    }
    if box_width > 1 {
        // The strongest single cell inside the winning box is the peak.
        let h = box_width / 2;
        let (br, bc) = (best / cols, best % cols);
        for dr in 0..=2 * h {
            for dc in 0..=2 * h {
                let i = ((br + rows * (h + 1) + dr - h) % rows) * cols
                    + (bc + cols * (h + 1) + dc - h) % cols;
                if surface[i] > surface[best] {
                    best = i;
                }
            }
        }
        best_search = search[best];
    }
    let best_val = surface[best];
    let (pr, pc) = (best / cols, best % cols);
    let shift_rows = signed_index(pr, rows);
    let shift_cols = signed_index(pc, cols);
    let (mut fr, mut fc) = (shift_rows as f64, shift_cols as f64);
    let at = |r: usize, c: usize| surface[r * cols + c];
    if subpixel && box_width > 1 {
        let h = box_width / 2;
        let (mut w, mut sr, mut sc) = (0.0, 0.0, 0.0);
        for dr in 0..=2 * h {
            for dc in 0..=2 * h {
                let v = at(
                    (pr + rows * (h + 1) + dr - h) % rows,
                    (pc + cols * (h + 1) + dc - h) % cols,
                )
                .max(0.0);
                w += v;
                sr += v * (dr as f64 - h as f64);
                sc += v * (dc as f64 - h as f64);
            }
        }
        if w > 0.0 {
            fr += sr / w;
            fc += sc / w;
        }
    } else if subpixel {
        if rows >= 3 {
            fr += parabolic_offset(
                at((pr + rows - 1) % rows, pc),
                best_val,
                at((pr + 1) % rows, pc),
            );
        }
        if cols >= 3 {
            fc += parabolic_offset(
                at(pr, (pc + cols - 1) % cols),
                best_val,
                at(pr, (pc + 1) % cols),
            );
        }
    }
    PeakShift {
        shift_rows,
        shift_cols,
        rows: fr,
        cols: fc,
        quality: (best_search / total).clamp(0.0, 1.0),
    }
}

/// Wrapped sum over a `(2h+1)` square around every cell.
fn box_sum(surface: &[f64], rows: usize, cols: usize, h: usize) -> Vec<f64> {
    let mut horiz = vec![0.0; surface.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for d in 0..=2 * h {
                acc += surface[r * cols + (c + cols * (h + 1) + d - h) % cols];
            }
            horiz[r * cols + c] = acc;
        }
    }
    let mut out = vec![0.0; surface.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for d in 0..=2 * h {
                acc += horiz[((r + rows * (h + 1) + d - h) % rows) * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Vertex offset of the parabola through `(-1, l), (0, c), (1, r)`.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RealGrid {
        RealGrid::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap()
    }

    fn random_spectrum(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Spectrum2D {
        Spectrum2D {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        }
    }

    #[test]
    fn fft_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_grid(&mut rng, 6, 10);
        let back = ifft2(&fft2(&g));
        for (x, y) in g.data.iter().zip(back) {
            assert!((x - y.re / 60.0).abs() < 1e-12);
            assert!(y.im.abs() < 1e-9);
        }
    }

    #[test]
    fn cps_of_identical_spectra_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spectrum(&mut rng, 8, 8);
        let cps = cross_power_spectrum(&a, &a).unwrap();
        for c in &cps.data {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn cps_isolates_linear_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (8, 16);
        let b = random_spectrum(&mut rng, rows, cols);
        let s = 3.0;
        let ramp = |c: usize| {
            Complex64::from_polar(
                1.0,
                -2.0 * std::f64::consts::PI * c as f64 * s / cols as f64,
            )
        };
        let mut a = b.clone();
        for r in 0..rows {
            for c in 0..cols {
                a.data[r * cols + c] = b.get(r, c) * ramp(c);
            }
        }
        let cps = cross_power_spectrum(&a, &b).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                assert!((cps.get(r, c) - ramp(c)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cps_has_unit_modulus_except_masked_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_spectrum(&mut rng, 12, 12);
        let mut b = random_spectrum(&mut rng, 12, 12);
        b.data[5] = Complex64::new(0.0, 0.0);
        let cps = cross_power_spectrum(&a, &b).unwrap();
        for (i, c) in cps.data.iter().enumerate() {
            if i == 5 {
                assert_eq!(*c, Complex64::new(0.0, 0.0));
            } else {
                assert!((c.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cps_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spectrum(&mut rng, 4, 4);
        let b = random_spectrum(&mut rng, 4, 5);
        assert!(matches!(
            cross_power_spectrum(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn identity_gives_zero_shift_full_quality() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_grid(&mut rng, 32, 32);
        let p = phase_correlation(&a, &a, false).unwrap();
        assert_eq!((p.shift_rows, p.shift_cols), (0, 0));
        assert!((p.quality - 1.0).abs() < 1e-9);
    }

    #[test]
    fn circular_shift_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_grid(&mut rng, 32, 32);
        let b = a.circular_shift(3, -2);
        let p = phase_correlation(&a, &b, false).unwrap();
        assert_eq!((p.shift_rows, p.shift_cols), (3, -2));
    }

    #[test]
    fn zero_input_has_zero_quality() {
        let a = RealGrid::zeros(8, 8);
        let mut b = RealGrid::zeros(8, 8);
        b.set(1, 1, 1.0);
        assert_eq!(phase_correlation(&a, &b, false).unwrap(), PeakShift::NONE);
    }

    #[test]
    fn cropped_shift_matches_spatial_correlation_oracle() {
        // Support well inside the window so that zero-filled shifting loses nothing.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 32;
        let mut a = RealGrid::zeros(n, n);
        for r in 8..24 {
            for c in 8..24 {
                a.set(r, c, rng.gen::<f64>());
            }
        }
        let (dr, dc) = (3isize, -2isize);
        let mut b = RealGrid::zeros(n, n);
        for r in 0..n as isize {
            for c in 0..n as isize {
                let (sr, sc) = (r - dr, c - dc);
                if (0..n as isize).contains(&sr) && (0..n as isize).contains(&sc) {
                    b.set(r as usize, c as usize, a.get(sr as usize, sc as usize));
                }
            }
        }
        // Brute-force spatial cross-correlation argmax.
        let mut best = (0, 0, f64::NEG_INFINITY);
        for sr in -6..=6isize {
            for sc in -6..=6isize {
                let mut acc = 0.0;
                for r in 0..n as isize {
                    for c in 0..n as isize {
                        let (ar, ac) = (r - sr, c - sc);
                        if (0..n as isize).contains(&ar) && (0..n as isize).contains(&ac) {
                            acc += b.get(r as usize, c as usize) * a.get(ar as usize, ac as usize);
                        }
                    }
                }
                if acc > best.2 {
                    best = (sr, sc, acc);
                }
            }
        }
        assert_eq!((best.0, best.1), (dr, dc));
        let p = phase_correlation(&a, &b, false).unwrap();
        assert!((p.shift_rows - best.0).abs() <= 1 && (p.shift_cols - best.1).abs() <= 1);
    }

    #[test]
    fn parabolic_refinement_is_symmetric() {
        assert_eq!(parabolic_offset(1.0, 2.0, 1.0), 0.0);
        assert!((parabolic_offset(2.0, 2.0, 0.0) + 0.5).abs() < 1e-12);
        assert!(parabolic_offset(0.5, 1.0, 0.8) > 0.0);
    }

    #[test]
    fn boxed_peak_keeps_circular_shifts_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_grid(&mut rng, 32, 32);
        for (dr, dc) in [(0, 0), (3, -2), (-7, 11), (15, -15)] {
            let p = phase_correlation_boxed(&a, &a.circular_shift(dr, dc), true, 3).unwrap();
            assert_eq!((p.shift_rows, p.shift_cols), (dr, dc));
            assert!((p.rows - dr as f64).abs() < 1e-9 && (p.cols - dc as f64).abs() < 1e-9);
            assert!((p.quality - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn boxed_peak_rejects_even_width() {
        let g = RealGrid::zeros(4, 4);
        assert!(phase_correlation_boxed(&g, &g, false, 2).is_err());
        assert!(phase_correlation_boxed(&g, &g, false, 0).is_err());
    }
}
