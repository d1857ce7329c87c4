//! Independent reference computations used by the integration and acceptance
//! tests. Nothing here calls into the routines it is used to check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept separate from the library's sampler
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..p).map(|_| gaussian(rng)).collect())
        .collect()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Textbook two-pass covariance with divisor n - 1.
pub fn two_pass_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let p = rows[0].len();
    let mut mean = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            mean[j] += r[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in 0..p {
            let s: f64 = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum();
            cov[a][b] = s / (n as f64 - 1.0);
        }
    }
    cov
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let mx = sx / n;
    let my = sy / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Correlation matrix computed directly from its definition.
pub fn correlation_matrix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = rows[0].len();
    let cols: Vec<Vec<f64>> = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    (0..p)
        .map(|a| (0..p).map(|b| if a == b { 1.0 } else { pearson(&cols[a], &cols[b]) }).collect())
        .collect()
}

/// Coefficients of det(xI - M) from highest to lowest degree, by the
/// Faddeev-LeVerrier recursion.
pub fn characteristic_polynomial(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut coeffs = vec![1.0];
    let mut mk = vec![vec![0.0; n]; n];
    let mut c = 1.0;
    for k in 1..=n {
        // M_k = M * M_{k-1} + c_{n-k+1} I
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = (0..n).map(|l| m[i][l] * mk[l][j]).sum::<f64>();
            }
            next[i][i] += c;
        }
        mk = next;
        let am: f64 = (0..n)
            .map(|i| (0..n).map(|l| m[i][l] * mk[l][i]).sum::<f64>())
            .sum();
        c = -am / k as f64;
        coeffs.push(c);
    }
    coeffs
}

fn horner(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &c in coeffs {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// Real roots (descending) of a polynomial known to have only real roots,
/// found by Newton iteration with implicit deflation (Maehly) started above
/// the largest root.
pub fn real_roots_descending(coeffs: &[f64], upper: f64) -> Vec<f64> {
    let n = coeffs.len() - 1;
    let mut roots: Vec<f64> = Vec::with_capacity(n);
    let mut x = upper;
    for _ in 0..n {
        for _ in 0..500 {
            let (p, dp) = horner(coeffs, x);
            let defl: f64 = roots.iter().map(|r| 1.0 / (x - r)).sum();
            let denom = dp - p * defl;
            if denom == 0.0 {
                break;
            }
            let step = p / denom;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        roots.push(x);
        // restart just below the found root so the next search stays in order
        x -= 1e-7 * x.abs().max(1.0);
    }
    roots
}

/// Eigenvalues of a symmetric matrix via its characteristic polynomial.
pub fn char_poly_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let coeffs = characteristic_polynomial(m);
    // Gershgorin bound sits above every eigenvalue
    let bound = m
        .iter()
        .enumerate()
        .map(|(i, r)| r[i] + r.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut roots = real_roots_descending(&coeffs, bound + 1.0);
    roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
    roots
}

/// Fritsch-Carlson monotone cubic Hermite interpolant written from the
/// textbook formulas, evaluated in Bernstein form.
pub struct ReferencePchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl ReferencePchip {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        assert!(n >= 2);
        let h: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            for k in 1..n - 1 {
                if del[k - 1] * del[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                }
            }
            d[0] = Self::end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = Self::end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Self {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        }
    }

    fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
        let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
        if d * del0 <= 0.0 {
            0.0
        } else if del0 * del1 < 0.0 && d.abs() > 3.0 * del0.abs() {
            3.0 * del0
        } else {
            d
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self
            .x
            .windows(2)
            .position(|w| t >= w[0] && t <= w[1])
            .expect("t inside knot range");
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        // Bernstein control points of the Hermite cubic
        let b0 = self.y[k];
        let b1 = self.y[k] + self.d[k] * h / 3.0;
        let b2 = self.y[k + 1] - self.d[k + 1] * h / 3.0;
        let b3 = self.y[k + 1];
        let u = 1.0 - s;
        u * u * u * b0 + 3.0 * u * u * s * b1 + 3.0 * u * s * s * b2 + s * s * s * b3
    }
}

/// Linear-interpolation sample quantile (the default "type 7" rule) on a
/// freshly sorted copy.
pub fn sorted_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
