//! Short-gap imputation with monotone cubic Hermite splines.
//!
//! A gap of at most `short_gap_max` hours with observations on both sides is
//! filled from a piecewise cubic Hermite interpolant whose node slopes follow
//! the Fritsch-Carlson limiting rules, fitted to up to [`CONTEXT_POINTS`]
//! observed hours on each side. Longer gaps and gaps touching either end of a
//! series stay missing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{ObservationGrid, HOURS_PER_DAY};

/// Default longest run of missing hours treated as a short gap.
pub const DEFAULT_SHORT_GAP_MAX: usize = 4;

/// Observed points used on each side of a gap.
pub const CONTEXT_POINTS: usize = 4;

/// Shape-preserving piecewise cubic Hermite interpolant.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InvalidInput(
                "monotone cubic needs at least two knots of matching length".into(),
            ));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("knots must be finite".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        if h.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidInput("knot abscissae must increase".into()));
        }
        let secant: Vec<f64> = y.windows(2).zip(&h).map(|(w, d)| (w[1] - w[0]) / d).collect();

        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = secant[0];
            slopes[1] = secant[0];
        } else {
            for k in 1..n - 1 {
                let (s0, s1) = (secant[k - 1], secant[k]);
                // zero at local extrema and flat stretches
                if s0 * s1 > 0.0 {
                    let w0 = 2.0 * h[k] + h[k - 1];
                    let w1 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w0 + w1) / (w0 / s0 + w1 / s1);
                }
            }
            slopes[0] = end_slope(h[0], h[1], secant[0], secant[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], secant[n - 2], secant[n - 3]);
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            slopes,
        })
    }

    /// Evaluates the interpolant; `t` is clamped to the knot range.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let t = t.clamp(self.x[0], self.x[n - 1]);
        let k = match self.x.partition_point(|&xk| xk <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

// Three-point end slope, limited so it keeps the sign of the first secant.
fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d * s0 <= 0.0 {
        0.0
    } else if s0 * s1 < 0.0 && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

/// Fills short interior gaps of one hourly series in place, reading the
/// spline context from the series as it was on entry. Returns the number of
/// cells filled.
pub fn impute_series(series: &mut [Option<f64>], short_gap_max: usize) -> usize {
    let original = series.to_vec();
    let len = original.len();
    let mut filled = 0;
    let mut i = 0;
    while i < len {
        if original[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < len && original[i].is_none() {
            i += 1;
        }
        let end = i;
        if start == 0 || end == len || end - start > short_gap_max {
            continue;
        }

        let mut x = Vec::with_capacity(2 * CONTEXT_POINTS);
        let mut y = Vec::with_capacity(2 * CONTEXT_POINTS);
        for j in (0..start).rev().take(CONTEXT_POINTS) {
            match original[j] {
                Some(v) => {
                    x.push(j as f64);
                    y.push(v);
                }
                None => break,
            }
        }
        x.reverse();
        y.reverse();
        for (j, v) in original.iter().enumerate().skip(end).take(CONTEXT_POINTS) {
            match v {
                Some(v) => {
                    x.push(j as f64);
                    y.push(*v);
                }
                None => break,
            }
        }

        let left = original[start - 1].expect("bracketing observation");
        let right = original[end].expect("bracketing observation");
        let (lo, hi) = (left.min(right), left.max(right));
        let Ok(spline) = MonotoneCubic::new(&x, &y) else {
            continue;
        };
        for (t, cell) in series.iter_mut().enumerate().take(end).skip(start) {
            // clamp guards against round-off only
            *cell = Some(spline.eval(t as f64).clamp(lo, hi));
            filled += 1;
        }
    }
    filled
}

/// Imputes short gaps in every (site, pollutant) series of the grid.
pub fn impute_short_gaps(grid: &ObservationGrid, short_gap_max: usize) -> Result<(ObservationGrid, usize)> {
    if short_gap_max < 1 {
        return Err(Error::Config("short_gap_max must be at least 1".into()));
    }
    let mut out = grid.clone();
    if out.days == 0 {
        return Ok((out, 0));
    }
    let slots = out.days * HOURS_PER_DAY;
    let count = out
        .values_mut()
        .par_chunks_mut(slots)
        .map(|series| impute_series(series, short_gap_max))
        .sum();
    Ok((out, count))
}
