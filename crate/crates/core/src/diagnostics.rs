//! Rolling-window diagnostics on a panel: Henze-Zirkler multivariate
//! normality p-values, the share of robust Mahalanobis outliers, and pairwise
//! Pearson correlations. Every series is stamped at the last day of its
//! trailing window.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, LogNormal};

use crate::error::{Error, Result};
use crate::linalg::{covariance, eigen_sym, Matrix, SymMatrix};
use crate::panel::Panel;

/// Default coverage fraction of the robust fit.
pub const DEFAULT_ALPHA: f64 = 0.75;

/// Quantile level of the chi-square cutoff used while reweighting.
const REWEIGHT_LEVEL: f64 = 0.975;
const MAX_REWEIGHT_ITERATIONS: usize = 50;
/// Normal-consistency factor of the median absolute deviation.
const MAD_SCALE: f64 = 1.482_602_218_505_602;
/// Covariances whose smallest/largest eigenvalue ratio falls below this are
/// treated as singular.
const SINGULAR_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    HzPvalue,
    OutlierProp,
    PearsonR(String, String),
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::HzPvalue => f.write_str("hz_pvalue"),
            Metric::OutlierProp => f.write_str("outlier_prop"),
            Metric::PearsonR(a, b) => write!(f, "pearson_r:{a}:{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSeries {
    pub hour: usize,
    pub window: usize,
    pub metric: Metric,
    pub day_index: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
    pub flags: Vec<Option<String>>,
}

fn check_window(panel: &Panel, window: usize) -> Result<()> {
    let p = panel.pollutants.len();
    if window <= p + 1 {
        return Err(Error::Config(format!(
            "diagnostic window {window} must exceed the number of variables plus one ({})",
            p + 1
        )));
    }
    if window > panel.rows() {
        return Err(Error::InsufficientData(format!(
            "panel has {} days, window needs {window}",
            panel.rows()
        )));
    }
    if !panel.is_complete() {
        return Err(Error::InvalidInput(format!(
            "hour {} panel has missing cells",
            panel.hour
        )));
    }
    Ok(())
}

fn rolling<F>(panel: &Panel, window: usize, metric: Metric, f: F) -> Result<DiagnosticsSeries>
where
    F: Fn(&Matrix) -> (Option<f64>, Option<String>) + Sync,
{
    check_window(panel, window)?;
    let ends: Vec<usize> = (window - 1..panel.rows()).collect();
    let computed: Vec<(Option<f64>, Option<String>)> = ends
        .par_iter()
        .map(|&end| f(&panel.values.row_range(end + 1 - window, end + 1)))
        .collect();
    let (values, flags) = computed.into_iter().unzip();
    Ok(DiagnosticsSeries {
        hour: panel.hour,
        window,
        metric,
        dates: ends.iter().map(|&d| panel.date_of(d)).collect(),
        day_index: ends,
        values,
        flags,
    })
}

/// Rows of `x` mapped to coordinates in which `scatter` is the identity,
/// after subtracting `center`. `None` when `scatter` is singular.
fn whiten(x: &Matrix, center: &[f64], scatter: &SymMatrix) -> Option<Matrix> {
    let eig = eigen_sym(scatter).ok()?;
    let largest = eig.values[0];
    let smallest = *eig.values.last()?;
    if !(largest > 0.0) || smallest <= SINGULAR_RATIO * largest {
        return None;
    }
    let p = x.cols();
    Some(Matrix::from_fn(x.rows(), p, |i, k| {
        let proj: f64 = (0..p).map(|j| (x[(i, j)] - center[j]) * eig.vectors[(j, k)]).sum();
        proj / eig.values[k].sqrt()
    }))
}

fn squared_norms(y: &Matrix) -> Vec<f64> {
    (0..y.rows()).map(|i| y.row(i).iter().map(|v| v * v).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HzTest {
    pub statistic: f64,
    pub p_value: f64,
    pub beta: f64,
}

/// Henze-Zirkler test of multivariate normality.
///
/// Distances use the maximum-likelihood covariance (divisor `n`), the
/// smoothing parameter is `beta = ((2p + 1) n / 4)^(1/(p+4)) / sqrt(2)`, and
/// the p-value comes from the lognormal approximation to the statistic's
/// null distribution. Returns `None` for a singular sample covariance.
pub fn henze_zirkler(x: &Matrix) -> Result<Option<HzTest>> {
    let n = x.rows();
    let p = x.cols();
    if n < p + 2 {
        return Err(Error::InsufficientData(format!(
            "Henze-Zirkler needs more than {} rows, got {n}",
            p + 1
        )));
    }
    let nf = n as f64;
    let pf = p as f64;
    let unbiased = covariance(x, false)?;
    let mle = SymMatrix::from_upper(p, |a, b| unbiased.get(a, b) * (nf - 1.0) / nf);
    let Some(y) = whiten(x, &x.column_means(), &mle) else {
        return Ok(None);
    };

    let beta = ((2.0 * pf + 1.0) * nf / 4.0).powf(1.0 / (pf + 4.0)) / std::f64::consts::SQRT_2;
    let b2 = beta * beta;
    let to_mean = squared_norms(&y);

    let mut pair_sum = 0.0;
    for j in 0..n {
        pair_sum += 1.0; // k == j
        for k in j + 1..n {
            let d: f64 = y.row(j).iter().zip(y.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            pair_sum += 2.0 * (-0.5 * b2 * d).exp();
        }
    }
    let mean_term: f64 = to_mean.iter().map(|d| (-b2 / (2.0 * (1.0 + b2)) * d).exp()).sum();
    let statistic = pair_sum / nf - 2.0 * (1.0 + b2).powf(-pf / 2.0) * mean_term
        + nf * (1.0 + 2.0 * b2).powf(-pf / 2.0);

    let a = 1.0 + 2.0 * b2;
    let wb = (1.0 + b2) * (1.0 + 3.0 * b2);
    let b4 = b2 * b2;
    let b8 = b4 * b4;
    let mu = 1.0 - a.powf(-pf / 2.0) * (1.0 + pf * b2 / a + pf * (pf + 2.0) * b4 / (2.0 * a * a));
    let si2 = 2.0 * (1.0 + 4.0 * b2).powf(-pf / 2.0)
        + 2.0 * a.powf(-pf) * (1.0 + 2.0 * pf * b4 / (a * a) + 3.0 * pf * (pf + 2.0) * b8 / (4.0 * a.powi(4)))
        - 4.0 * wb.powf(-pf / 2.0) * (1.0 + 3.0 * pf * b4 / (2.0 * wb) + pf * (pf + 2.0) * b8 / (2.0 * wb * wb));
    let log_mean = (mu.powi(4) / (si2 + mu * mu)).sqrt().ln();
    let log_sd = ((si2 + mu * mu) / (mu * mu)).ln().sqrt();
    let lognormal = LogNormal::new(log_mean, log_sd)
        .map_err(|e| Error::InvalidInput(format!("lognormal approximation: {e}")))?;
    let p_value = (1.0 - lognormal.cdf(statistic.max(0.0))).clamp(0.0, 1.0);
    Ok(Some(HzTest {
        statistic,
        p_value,
        beta,
    }))
}

pub fn rolling_hz_test(panel: &Panel, window: usize) -> Result<DiagnosticsSeries> {
    rolling(panel, window, Metric::HzPvalue, |w| match henze_zirkler(w) {
        Ok(Some(t)) => (Some(t.p_value), None),
        Ok(None) => (None, Some("singular".to_string())),
        Err(e) => (None, Some(format!("error:{e}"))),
    })
}

/// Robust location and scatter of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit {
    pub center: Vec<f64>,
    pub scatter: SymMatrix,
    /// Squared robust distances of every row.
    pub distances: Vec<f64>,
    pub kept: usize,
    pub iterations: usize,
}

fn chi2(p: usize) -> ChiSquared {
    ChiSquared::new(p as f64).expect("positive degrees of freedom")
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// Rows with squared distance within the cutoff, topped up with the closest
// rows until at least `min_kept` are in.
fn select_kept(distances: &[f64], cutoff: f64, min_kept: usize) -> Vec<bool> {
    let mut kept: Vec<bool> = distances.iter().map(|&d| d <= cutoff).collect();
    let count = kept.iter().filter(|k| **k).count();
    if count < min_kept {
        let mut order: Vec<usize> = (0..distances.len()).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        for &i in order.iter().take(min_kept) {
            kept[i] = true;
        }
    }
    kept
}

/// Deterministic reweighted estimate of location and scatter.
///
/// Starts from coordinatewise medians with MAD scales, then repeatedly fits
/// mean and covariance to the rows whose squared distance is within the
/// 0.975 chi-square quantile (never fewer than `ceil(alpha * n)` rows) until
/// the kept set stops changing. The covariance is rescaled for consistency
/// at the normal model given the kept fraction. Returns `None` when the
/// scatter is singular.
pub fn robust_fit(x: &Matrix, alpha: f64) -> Result<Option<RobustFit>> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} must lie in [0.5, 1]")));
    }
    let n = x.rows();
    let p = x.cols();
    if n < p + 2 {
        return Err(Error::InsufficientData(format!(
            "robust fit needs more than {} rows, got {n}",
            p + 1
        )));
    }
    let dist = chi2(p);
    let cutoff = dist.inverse_cdf(REWEIGHT_LEVEL);
    let min_kept = ((alpha * n as f64).ceil() as usize).clamp(p + 2, n);

    let mut center = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let sds = x.column_sds();
    for j in 0..p {
        let mut col = x.column(j);
        let med = median_of(&mut col);
        let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
        let mad = MAD_SCALE * median_of(&mut dev);
        let scale = if mad > 0.0 { mad } else { sds[j] };
        if !(scale > 0.0) {
            return Ok(None);
        }
        center.push(med);
        scales.push(scale);
    }
    let mut distances: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|j| ((x[(i, j)] - center[j]) / scales[j]).powi(2)).sum())
        .collect();
    let mut kept = select_kept(&distances, cutoff, min_kept);

    let mut iterations = 0;
    let mut scatter;
    loop {
        iterations += 1;
        let rows: Vec<&[f64]> = (0..n).filter(|&i| kept[i]).map(|i| x.row(i)).collect();
        let subset = Matrix::from_rows(&rows)?;
        center = subset.column_means();
        let raw = covariance(&subset, false)?;
        let q = rows.len() as f64 / n as f64;
        let consistency = if q < 1.0 {
            let level = dist.inverse_cdf(q);
            q / chi2(p + 2).cdf(level)
        } else {
            1.0
        };
        scatter = SymMatrix::from_upper(p, |a, b| raw.get(a, b) * consistency);
        let Some(y) = whiten(x, &center, &scatter) else {
            return Ok(None);
        };
        distances = squared_norms(&y);
        let next = select_kept(&distances, cutoff, min_kept);
        if next == kept || iterations >= MAX_REWEIGHT_ITERATIONS {
            break;
        }
        kept = next;
    }
    Ok(Some(RobustFit {
        center,
        scatter,
        distances,
        kept: kept.iter().filter(|k| **k).count(),
        iterations,
    }))
}

/// Adaptive outlier cutoff on squared robust distances.
///
/// Compares the empirical distribution of the distances with the
/// chi-square(p) law beyond its 0.975 quantile. When the largest excess
/// exceeds the critical value `(0.24 - 0.003 p) / sqrt(n)` (p <= 10, else
/// `(0.252 - 0.0018 p) / sqrt(n)`), the cutoff becomes the larger of the
/// 0.975 quantile and the distance just below the excess tail; otherwise
/// nothing is declared an outlier.
pub fn adjusted_cutoff(distances: &[f64], p: usize) -> f64 {
    let n = distances.len();
    let nf = n as f64;
    let dist = chi2(p);
    let delta = dist.inverse_cdf(REWEIGHT_LEVEL);
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pcrit = if p <= 10 {
        (0.24 - 0.003 * p as f64) / nf.sqrt()
    } else {
        (0.252 - 0.0018 * p as f64) / nf.sqrt()
    };
    let excess = sorted
        .iter()
        .enumerate()
        .filter(|(_, &d)| d >= delta)
        .map(|(i, &d)| dist.cdf(d) - (i as f64 + 0.5) / nf)
        .filter(|dif| *dif > 0.0)
        .fold(0.0, f64::max);
    if excess < pcrit || excess == 0.0 {
        return f64::INFINITY;
    }
    let tail = (nf * excess).ceil() as usize;
    match n.checked_sub(tail + 1) {
        Some(i) => sorted[i].max(delta),
        None => delta,
    }
}

/// Fraction of rows flagged as outliers by the adjusted robust distance.
/// `None` when the robust scatter is singular.
pub fn outlier_fraction(x: &Matrix, alpha: f64) -> Result<Option<f64>> {
    let Some(fit) = robust_fit(x, alpha)? else {
        return Ok(None);
    };
    let cutoff = adjusted_cutoff(&fit.distances, x.cols());
    let flagged = fit.distances.iter().filter(|&&d| d > cutoff).count();
    Ok(Some(flagged as f64 / x.rows() as f64))
}

pub fn rolling_outliers(panel: &Panel, window: usize, alpha: f64) -> Result<DiagnosticsSeries> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} must lie in [0.5, 1]")));
    }
    rolling(panel, window, Metric::OutlierProp, |w| match outlier_fraction(w, alpha) {
        Ok(Some(f)) => (Some(f), None),
        Ok(None) => (None, Some("singular".to_string())),
        Err(e) => (None, Some(format!("error:{e}"))),
    })
}

/// Pearson correlation; `None` when either column has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rolling_pearson(panel: &Panel, window: usize, pair: (usize, usize)) -> Result<DiagnosticsSeries> {
    let p = panel.pollutants.len();
    if pair.0 >= p || pair.1 >= p {
        return Err(Error::Range(format!("pollutant pair {pair:?} outside 0..{p}")));
    }
    let metric = Metric::PearsonR(
        panel.pollutants[pair.0].clone(),
        panel.pollutants[pair.1].clone(),
    );
    rolling(panel, window, metric, |w| match pearson(&w.column(pair.0), &w.column(pair.1)) {
        Some(r) => (Some(r), None),
        None => (None, Some("zero_variance".to_string())),
    })
}

/// Every unordered pollutant pair of a panel.
pub fn all_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect()
}

pub fn write_diagnostics_csv<W: Write>(series: &[DiagnosticsSeries], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "hour,day_index,date,metric,value,flag")?;
    for s in series {
        let metric = s.metric.to_string();
        for i in 0..s.values.len() {
            let value = s.values[i].map(|v| v.to_string()).unwrap_or_default();
            let flag = s.flags[i].as_deref().unwrap_or("");
            writeln!(out, "{},{},{},{metric},{value},{flag}", s.hour, s.day_index[i], s.dates[i])?;
        }
    }
    out.flush()?;
    Ok(())
}
