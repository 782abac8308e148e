//! Angle-series conditioning: gap filling, Savitzky–Golay smoothing and
//! percentile range of motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{AngleSample, AngleSeries};
use crate::linalg::{Cholesky, Matrix};
use crate::num::{percentile_sorted, sorted_copy, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig<T> {
    /// Odd frame count.
    pub window_length: usize,
    pub poly_order: usize,
    /// Seconds; shorter interior gaps are linearly interpolated.
    pub max_gap: T,
    pub rom_low_pct: T,
    pub rom_high_pct: T,
}

impl<T: Real> Default for SmoothingConfig<T> {
    fn default() -> Self {
        Self {
            window_length: 11,
            poly_order: 2,
            max_gap: T::cst(2.0),
            rom_low_pct: T::cst(5.0),
            rom_high_pct: T::cst(95.0),
        }
    }
}

impl<T: Real> SmoothingConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.window_length % 2 == 0 {
            return Err(Error::Config(format!("window_length must be odd, got {}", self.window_length)));
        }
        if self.window_length <= self.poly_order {
            return Err(Error::Config(format!(
                "window_length ({}) must exceed poly_order ({})",
                self.window_length, self.poly_order
            )));
        }
        if !(self.max_gap > T::zero()) {
            return Err(Error::Config("max_gap must be positive".into()));
        }
        let (lo, hi) = (self.rom_low_pct, self.rom_high_pct);
        if !(lo >= T::zero() && lo < hi && hi <= T::cst(100.0)) {
            return Err(Error::Config(format!(
                "percentile bounds must satisfy 0 <= low < high <= 100, got {lo}..{hi}"
            )));
        }
        Ok(())
    }
}

/// Fills interior invalid runs whose flanking valid samples are less than
/// `max_gap` seconds apart. Boundary runs and longer gaps stay invalid.
pub fn interpolate_gaps<T: Real>(series: &AngleSeries<T>, max_gap: T) -> AngleSeries<T> {
    let mut samples = series.samples().to_vec();
    let n = samples.len();
    let mut i = 0;
    while i < n {
        if samples[i].is_valid() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !samples[i].is_valid() {
            i += 1;
        }
        // invalid run is start..i
        if start == 0 || i == n {
            continue;
        }
        let (left, right) = (samples[start - 1], samples[i]);
        let span = right.timestamp - left.timestamp;
        if span >= max_gap {
            continue;
        }
        let (a0, a1) = (left.angle.unwrap(), right.angle.unwrap());
        for s in &mut samples[start..i] {
            let f = (s.timestamp - left.timestamp) / span;
            s.angle = Some(a0 + f * (a1 - a0));
        }
    }
    series.with_samples(samples)
}

/// Least-squares weights that evaluate the order-`order` polynomial fitted
/// to `len` equally spaced samples at position `at`.
pub fn savgol_weights<T: Real>(len: usize, order: usize, at: usize) -> Vec<T> {
    assert!(order < len && at < len);
    let half = T::from_usize_lossy(len - 1) / T::cst(2.0);
    let cols = order + 1;
    // Vandermonde on centred abscissae keeps the normal matrix well conditioned.
    let x = Matrix::from_fn(len, cols, |i, j| (T::from_usize_lossy(i) - half).powi(j as i32));
    let xtx = x.tr_matmul(&x);
    let chol = Cholesky::new(&xtx).expect("Vandermonde normal matrix is positive definite");
    let z = x.row(at).to_vec();
    let a = chol.solve(&z);
    x.matvec(&a)
}

/// Smooths each maximal run of valid samples independently.
///
/// Interior points use the centred window. The first and last `window / 2`
/// points of a run are read off the polynomial fitted to the boundary window,
/// so polynomials up to `poly_order` pass through unchanged everywhere.
/// Runs shorter than the window use the largest odd window that fits; runs
/// under five samples are copied as is.
pub fn savitzky_golay<T: Real>(series: &AngleSeries<T>, cfg: &SmoothingConfig<T>) -> Result<AngleSeries<T>> {
    cfg.validate()?;
    let mut samples = series.samples().to_vec();
    let values: Vec<Option<T>> = samples.iter().map(|s| s.angle).collect();
    let kernels = KernelCache::new(cfg.window_length, cfg.poly_order);
    for (start, end) in valid_runs(&values) {
        let seg: Vec<T> = values[start..end].iter().map(|v| v.unwrap()).collect();
        let smoothed = kernels.filter(&seg);
        for (s, v) in samples[start..end].iter_mut().zip(smoothed) {
            s.angle = Some(v);
        }
    }
    Ok(series.with_samples(samples))
}

/// Gap filling followed by smoothing.
pub fn condition<T: Real>(series: &AngleSeries<T>, cfg: &SmoothingConfig<T>) -> Result<AngleSeries<T>> {
    cfg.validate()?;
    savitzky_golay(&interpolate_gaps(series, cfg.max_gap), cfg)
}

/// `P(high) - P(low)` over valid samples, linear interpolation between order
/// statistics.
pub fn percentile_rom<T: Real>(series: &AngleSeries<T>, cfg: &SmoothingConfig<T>) -> Result<T> {
    let v = sorted_copy(series.valid_values());
    if v.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "percentile ROM needs at least 2 valid samples, found {}",
            v.len()
        )));
    }
    Ok(percentile_sorted(&v, cfg.rom_high_pct) - percentile_sorted(&v, cfg.rom_low_pct))
}

/// Half-open index ranges of consecutive `Some` values.
pub(crate) fn valid_runs<T>(values: &[Option<T>]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if values[i].is_none() {
            i += 1;
            continue;
        }
        let s = i;
        while i < values.len() && values[i].is_some() {
            i += 1;
        }
        runs.push((s, i));
    }
    runs
}

const MIN_SMOOTHABLE: usize = 5;

struct KernelCache<T> {
    window: usize,
    order: usize,
    // weights for the full window indexed by evaluation offset
    full: Vec<Vec<T>>,
}

impl<T: Real> KernelCache<T> {
    fn new(window: usize, order: usize) -> Self {
        let full = (0..window).map(|at| savgol_weights(window, order, at)).collect();
        Self { window, order, full }
    }

    fn filter(&self, seg: &[T]) -> Vec<T> {
        let n = seg.len();
        if n < MIN_SMOOTHABLE {
            return seg.to_vec();
        }
        let (m, shrunk);
        let weights: &[Vec<T>] = if n >= self.window {
            m = self.window;
            &self.full
        } else {
            m = if n % 2 == 1 { n } else { n - 1 };
            let order = self.order.min(m - 1);
            shrunk = (0..m).map(|at| savgol_weights(m, order, at)).collect::<Vec<_>>();
            &shrunk
        };
        let h = m / 2;
        let dot = |w: &[T], xs: &[T]| w.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let v = if i < h {
                dot(&weights[i], &seg[..m])
            } else if i + h >= n {
                dot(&weights[m - (n - i)], &seg[n - m..])
            } else {
                dot(&weights[h], &seg[i - h..=i + h])
            };
            out.push(v);
        }
        out
    }
}

/// Convenience for tests and generators: marks samples in `[from, to)` invalid.
pub fn occlude<T: Real>(series: &AngleSeries<T>, from: T, to: T) -> AngleSeries<T> {
    let samples = series
        .samples()
        .iter()
        .map(|s| {
            if s.timestamp >= from && s.timestamp < to {
                AngleSample::invalid(s.timestamp)
            } else {
                *s
            }
        })
        .collect();
    series.with_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::JointTriple;
    use crate::model::BodySide;

    fn series(values: &[f64], fps: f64) -> AngleSeries<f64> {
        AngleSeries::from_values(values, fps, JointTriple::elbow(BodySide::Left))
    }

    fn angles(s: &AngleSeries<f64>) -> Vec<Option<f64>> {
        s.samples().iter().map(|s| s.angle).collect()
    }

    #[test]
    fn linear_gap_fill() {
        let s = series(&[10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 70.0], 10.0);
        let s = occlude(&s, 0.05, 0.55);
        let filled = interpolate_gaps(&s, 2.0);
        let got: Vec<f64> = filled.valid_values();
        for (g, w) in got.iter().zip([10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0]) {
            assert!((g - w).abs() < 1e-9, "{got:?}");
        }
        assert_eq!(filled.coverage(), 1.0);
    }

    #[test]
    fn long_and_boundary_gaps_stay_open() {
        let vals: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = series(&vals, 10.0);
        let long = occlude(&s, 3.0, 6.0);
        assert_eq!(angles(&interpolate_gaps(&long, 2.0)), angles(&long));
        let head = occlude(&s, 0.0, 0.5);
        assert_eq!(angles(&interpolate_gaps(&head, 2.0)), angles(&head));
        assert_eq!(interpolate_gaps(&s, 2.0), s);
    }

    #[test]
    fn reproduces_quadratic() {
        let vals: Vec<f64> = (0..60)
            .map(|i| {
                let t = i as f64 / 30.0;
                3.0 * t * t - 2.0 * t + 1.0
            })
            .collect();
        let out = savitzky_golay(&series(&vals, 30.0), &SmoothingConfig::default()).unwrap();
        for (a, b) in out.valid_values().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn short_runs() {
        let cfg = SmoothingConfig::default();
        let s = series(&[1.0, 5.0, 2.0, 8.0], 30.0);
        assert_eq!(savitzky_golay(&s, &cfg).unwrap(), s);
        // seven samples shrink to a 7-point window and still keep a line
        let line: Vec<f64> = (0..7).map(|i| 2.0 * i as f64).collect();
        let out = savitzky_golay(&series(&line, 30.0), &cfg).unwrap();
        for (a, b) in out.valid_values().iter().zip(&line) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_samples_pass_through() {
        let vals: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() * 20.0).collect();
        let s = occlude(&series(&vals, 10.0), 1.5, 1.85);
        let out = savitzky_golay(&s, &SmoothingConfig::default()).unwrap();
        assert_eq!(out.len(), s.len());
        for (a, b) in out.samples().iter().zip(s.samples()) {
            assert_eq!(a.is_valid(), b.is_valid());
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SmoothingConfig::<f64>::default();
        cfg.window_length = 3;
        cfg.poly_order = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.window_length = 10;
        cfg.poly_order = 2;
        assert!(cfg.validate().is_err());
        let s = series(&[0.0; 20], 10.0);
        assert!(savitzky_golay(&s, &cfg).is_err());
    }

    #[test]
    fn rom_percentiles() {
        let cfg = SmoothingConfig::default();
        let vals: Vec<f64> = (0..100).map(f64::from).collect();
        let rom = percentile_rom(&series(&vals, 10.0), &cfg).unwrap();
        assert!((rom - 89.10).abs() < 1e-9);
        assert_eq!(percentile_rom(&series(&[7.0; 20], 10.0), &cfg).unwrap(), 0.0);
        assert!(percentile_rom(&series(&[7.0], 10.0), &cfg).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for at in 0..11 {
            let w: Vec<f64> = savgol_weights(11, 2, at);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let centre: Vec<f64> = savgol_weights(5, 2, 2);
        let want = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|x| x / 35.0);
        for (a, b) in centre.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn works_in_f32() {
        let vals: Vec<f32> = (0..30).map(|i| i as f32 * 0.5).collect();
        let s = AngleSeries::from_values(&vals, 30.0f32, JointTriple::elbow(BodySide::Right));
        let out = savitzky_golay(&s, &SmoothingConfig::default()).unwrap();
        for (a, b) in out.valid_values().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
