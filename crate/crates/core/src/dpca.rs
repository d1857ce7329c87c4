//! Dynamic PCA: a standardized PCA re-fitted on every trailing window of a
//! per-hour panel, producing explained-variance series and loading
//! trajectories.
//!
//! A window ending at panel row `d` covers rows `d - window + 1 ..= d` and its
//! result is stamped at `d`. Eigenvector signs are arbitrary per window, so
//! loadings are reflected afterwards: for each component the pollutant with
//! the largest mean absolute coefficient (MAC) over all windows is the pivot,
//! and every window's column is flipped to make the pivot coefficient
//! positive. Smoothing happens after that reflection.

use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance, eigen_sym, standardize_columns, Matrix, DEGENERATE_SD};
use crate::panel::{Aggregator, Panel, Stage};

pub const DEFAULT_WINDOW: usize = 45;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpcaConfig {
    pub window: usize,
    /// Number of score columns returned by [`WindowPca::scores`]; `None`
    /// keeps all. EV is always reported for every component.
    pub components_kept: Option<usize>,
    pub standardize_per_window: bool,
    pub smoothing_window: usize,
}

impl Default for DpcaConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            components_kept: None,
            standardize_per_window: true,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

impl DpcaConfig {
    pub fn validate(&self, variables: usize) -> Result<()> {
        if self.window <= variables + 1 {
            return Err(Error::Config(format!(
                "window {} must exceed the number of variables plus one ({})",
                self.window,
                variables + 1
            )));
        }
        if self.smoothing_window < 1 {
            return Err(Error::Config("smoothing window must be at least 1".into()));
        }
        if let Some(k) = self.components_kept {
            if k == 0 || k > variables {
                return Err(Error::Config(format!(
                    "components_kept {k} must lie in 1..={variables}"
                )));
            }
        }
        Ok(())
    }
}

/// PCA of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPca {
    /// Square roots of the covariance eigenvalues, non-increasing.
    pub singular_values: Vec<f64>,
    /// Variables x components; columns are unit eigenvectors.
    pub loadings: Matrix,
    pub ev: Vec<f64>,
    pub cev: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl WindowPca {
    /// Principal component scores `Z = X V` for rows of `x`, after the same
    /// centering (and scaling) the fit used. Only the first `kept` components
    /// are returned.
    pub fn scores(&self, x: &Matrix, kept: Option<usize>) -> Result<Matrix> {
        let p = self.loadings.rows();
        if x.cols() != p {
            return Err(Error::InvalidInput(format!(
                "scores need {p} columns, got {}",
                x.cols()
            )));
        }
        let k = kept.unwrap_or(p).min(p);
        let prepared = Matrix::from_fn(x.rows(), p, |i, j| (x[(i, j)] - self.means[j]) / self.scales[j]);
        let v = Matrix::from_fn(p, k, |i, j| self.loadings[(i, j)]);
        prepared.matmul(&v)
    }
}

/// PCA of a complete window via the eigendecomposition of its covariance.
///
/// With `standardize` the columns are scaled to unit variance first, which
/// makes the decomposition that of the correlation matrix.
pub fn window_pca(x: &Matrix, standardize: bool) -> Result<WindowPca> {
    if !x.is_finite() {
        return Err(Error::InvalidInput("window has missing or non-finite values".into()));
    }
    let (prepared, means, scales) = if standardize {
        let s = standardize_columns(x)?;
        (s.values, s.means, s.sds)
    } else {
        let means = x.column_means();
        let centered = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - means[j]);
        (centered, means, vec![1.0; x.cols()])
    };
    let cov = covariance(&prepared, true)?;
    if !standardize && cov.trace() <= DEGENERATE_SD * DEGENERATE_SD {
        return Err(Error::DegenerateColumn {
            column: 0,
            sd: cov.trace().sqrt(),
        });
    }
    let eig = eigen_sym(&cov)?;
    let clamped: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let ev: Vec<f64> = clamped.iter().map(|v| v / total).collect();
    let cev: Vec<f64> = ev
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    Ok(WindowPca {
        singular_values: clamped.iter().map(|v| v.sqrt()).collect(),
        loadings: eig.vectors,
        ev,
        cev,
        means,
        scales,
    })
}

/// Why a window produced no result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WindowFlag {
    Degenerate { column: usize },
}

impl std::fmt::Display for WindowFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WindowFlag::Degenerate { column } => write!(f, "degenerate:{column}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    /// Panel row of the window's last day.
    pub day_index: usize,
    pub date: NaiveDate,
    pub result: Option<WindowPca>,
    pub flag: Option<WindowFlag>,
}

/// All windows of one hourly panel.
#[derive(Debug, Clone, PartialEq)]
pub struct DpcaRun {
    pub hour: usize,
    pub stage: Stage,
    pub aggregator: Aggregator,
    pub pollutants: Vec<String>,
    pub window: usize,
    pub windows: Vec<WindowOutcome>,
}

impl DpcaRun {
    pub fn degenerate_count(&self) -> usize {
        self.windows.iter().filter(|w| w.result.is_none()).count()
    }
}

pub fn run_dpca(panel: &Panel, cfg: &DpcaConfig) -> Result<DpcaRun> {
    let p = panel.pollutants.len();
    cfg.validate(p)?;
    if !panel.is_complete() {
        return Err(Error::InvalidInput(format!(
            "hour {} panel has missing cells",
            panel.hour
        )));
    }
    let rows = panel.rows();
    if rows < cfg.window {
        return Err(Error::InsufficientData(format!(
            "panel has {rows} days, window needs {}",
            cfg.window
        )));
    }
    let windows = (cfg.window - 1..rows)
        .into_par_iter()
        .map(|end| {
            let slice = panel.values.row_range(end + 1 - cfg.window, end + 1);
            let (result, flag) = match window_pca(&slice, cfg.standardize_per_window) {
                Ok(r) => (Some(r), None),
                Err(Error::DegenerateColumn { column, .. }) => {
                    (None, Some(WindowFlag::Degenerate { column }))
                }
                Err(e) => return Err(e),
            };
            Ok(WindowOutcome {
                day_index: end,
                date: panel.date_of(end),
                result,
                flag,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DpcaRun {
        hour: panel.hour,
        stage: panel.stage,
        aggregator: panel.aggregator,
        pollutants: panel.pollutants.clone(),
        window: cfg.window,
        windows,
    })
}

/// Mean absolute loading coefficients of one hour and the pivot pollutant of
/// every component.
#[derive(Debug, Clone, PartialEq)]
pub struct MacTable {
    pub hour: usize,
    pub pollutants: Vec<String>,
    /// Pollutants x components.
    pub mac: Matrix,
    /// Pivot pollutant index per component.
    pub pivots: Vec<usize>,
}

/// MAC over a set of loading matrices (pollutants x components).
pub fn mean_abs_coefficients<'a, I>(loadings: I) -> Option<Matrix>
where
    I: IntoIterator<Item = &'a Matrix>,
{
    let mut acc: Option<Matrix> = None;
    let mut count = 0usize;
    for v in loadings {
        let a = acc.get_or_insert_with(|| Matrix::zeros(v.rows(), v.cols()));
        for i in 0..v.rows() {
            for j in 0..v.cols() {
                a[(i, j)] += v[(i, j)].abs();
            }
        }
        count += 1;
    }
    let mut a = acc?;
    let n = count as f64;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            a[(i, j)] /= n;
        }
    }
    Some(a)
}

/// Reflects every loading column so its pivot coefficient is positive.
///
/// The pivot of component `k` is the pollutant with the largest MAC (lowest
/// index on ties). A window whose pivot coefficient is exactly zero keeps its
/// sign. Only signs change.
pub fn sign_normalize(loadings: &mut [&mut Matrix]) -> Result<(Matrix, Vec<usize>)> {
    let mac = mean_abs_coefficients(loadings.iter().map(|m| &**m)).ok_or_else(|| {
        Error::InsufficientData("sign normalization needs at least one window".into())
    })?;
    let pivots: Vec<usize> = (0..mac.cols())
        .map(|k| {
            let mut best = 0;
            for p in 1..mac.rows() {
                if mac[(p, k)] > mac[(best, k)] {
                    best = p;
                }
            }
            best
        })
        .collect();
    for v in loadings.iter_mut() {
        for (k, &pivot) in pivots.iter().enumerate() {
            if v[(pivot, k)] < 0.0 {
                for p in 0..v.rows() {
                    v[(p, k)] = -v[(p, k)];
                }
            }
        }
    }
    Ok((mac, pivots))
}

/// Sign-normalizes every window of a run in place.
pub fn sign_normalize_run(run: &mut DpcaRun) -> Result<MacTable> {
    let mut views: Vec<&mut Matrix> = run
        .windows
        .iter_mut()
        .filter_map(|w| w.result.as_mut().map(|r| &mut r.loadings))
        .collect();
    let (mac, pivots) = sign_normalize(&mut views)?;
    Ok(MacTable {
        hour: run.hour,
        pollutants: run.pollutants.clone(),
        mac,
        pivots,
    })
}

/// Coefficient series of one (pollutant, component) loading at one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingTrajectory {
    pub hour: usize,
    pub pollutant: usize,
    /// Zero-based component index.
    pub component: usize,
    pub day_index: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    pub raw: Vec<Option<f64>>,
    pub smoothed: Vec<Option<f64>>,
    pub mac: f64,
}

/// Trailing mean over the last `window` entries, skipping missing ones. The
/// first `window - 1` entries average the available prefix.
pub fn trailing_mean(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            // running-mean update keeps constant stretches exact
            let (mean, count) = values[lo..=i]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(m, c), v| (m + (v - m) / (c + 1) as f64, c + 1));
            (count > 0).then_some(mean)
        })
        .collect()
}

pub fn smooth_loadings(t: &LoadingTrajectory, smoothing_window: usize) -> LoadingTrajectory {
    LoadingTrajectory {
        smoothed: trailing_mean(&t.raw, smoothing_window),
        ..t.clone()
    }
}

/// Loading trajectories of a (sign-normalized) run, one per pollutant and
/// component, smoothed with `smoothing_window`.
pub fn loading_trajectories(run: &DpcaRun, mac: &MacTable, smoothing_window: usize) -> Vec<LoadingTrajectory> {
    let p = run.pollutants.len();
    let day_index: Vec<usize> = run.windows.iter().map(|w| w.day_index).collect();
    let dates: Vec<NaiveDate> = run.windows.iter().map(|w| w.date).collect();
    let mut out = Vec::with_capacity(p * p);
    for pollutant in 0..p {
        for component in 0..p {
            let raw: Vec<Option<f64>> = run
                .windows
                .iter()
                .map(|w| w.result.as_ref().map(|r| r.loadings[(pollutant, component)]))
                .collect();
            let t = LoadingTrajectory {
                hour: run.hour,
                pollutant,
                component,
                day_index: day_index.clone(),
                dates: dates.clone(),
                smoothed: Vec::new(),
                raw,
                mac: mac.mac[(pollutant, component)],
            };
            out.push(smooth_loadings(&t, smoothing_window));
        }
    }
    out
}

/// EV per window of one hour, the unit summaries and surfaces are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyEv {
    pub hour: usize,
    pub day_index: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    /// Per window: EV for every component, or `None` for a flagged window.
    pub ev: Vec<Option<Vec<f64>>>,
    pub flags: Vec<Option<String>>,
}

impl From<&DpcaRun> for HourlyEv {
    fn from(run: &DpcaRun) -> Self {
        Self {
            hour: run.hour,
            day_index: run.windows.iter().map(|w| w.day_index).collect(),
            dates: run.windows.iter().map(|w| w.date).collect(),
            ev: run
                .windows
                .iter()
                .map(|w| w.result.as_ref().map(|r| r.ev.clone()))
                .collect(),
            flags: run.windows.iter().map(|w| w.flag.map(|f| f.to_string())).collect(),
        }
    }
}

impl HourlyEv {
    pub fn components(&self) -> usize {
        self.ev.iter().flatten().map(Vec::len).next().unwrap_or(0)
    }

    /// EV (or CEV when `cumulative`) of zero-based component `k` per window.
    pub fn series(&self, k: usize, cumulative: bool) -> Vec<Option<f64>> {
        self.ev
            .iter()
            .map(|e| {
                e.as_ref().map(|e| {
                    if cumulative {
                        e[..=k].iter().sum()
                    } else {
                        e[k]
                    }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Ev,
    Cev,
}

/// Hours x window-end days of EV or CEV for one component.
#[derive(Debug, Clone, PartialEq)]
pub struct EvSurface {
    /// Zero-based component index.
    pub component: usize,
    pub measure: Measure,
    pub hours: Vec<usize>,
    pub day_index: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl EvSurface {
    pub fn assemble(hourly: &[HourlyEv], component: usize, measure: Measure) -> Result<Self> {
        let first = hourly
            .first()
            .ok_or_else(|| Error::InsufficientData("no hourly EV series".into()))?;
        if hourly.iter().any(|h| h.day_index != first.day_index) {
            return Err(Error::InvalidInput(
                "hourly EV series cover different windows".into(),
            ));
        }
        let mut sorted: Vec<&HourlyEv> = hourly.iter().collect();
        sorted.sort_by_key(|h| h.hour);
        Ok(Self {
            component,
            measure,
            hours: sorted.iter().map(|h| h.hour).collect(),
            day_index: first.day_index.clone(),
            dates: first.dates.clone(),
            values: sorted
                .iter()
                .map(|h| h.series(component, measure == Measure::Cev))
                .collect(),
        })
    }
}

pub fn write_ev_csv<W: Write>(hourly: &[HourlyEv], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "hour,day_index,date,k,ev,cev,flag")?;
    for h in hourly {
        let p = h.components().max(1);
        for (w, ev) in h.ev.iter().enumerate() {
            let flag = h.flags[w].as_deref().unwrap_or("");
            match ev {
                Some(ev) => {
                    let mut cev = 0.0;
                    for (k, e) in ev.iter().enumerate() {
                        cev += e;
                        writeln!(out, "{},{},{},{},{e},{cev},{flag}", h.hour, h.day_index[w], h.dates[w], k + 1)?;
                    }
                }
                None => {
                    for k in 0..p {
                        writeln!(out, "{},{},{},{},,,{flag}", h.hour, h.day_index[w], h.dates[w], k + 1)?;
                    }
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EvRecord {
    hour: usize,
    day_index: usize,
    date: NaiveDate,
    k: usize,
    ev: Option<f64>,
    #[allow(dead_code)]
    cev: Option<f64>,
    flag: Option<String>,
}

/// Reads an EV surface CSV back into per-hour series, ordered by hour.
pub fn read_ev_csv<R: Read>(reader: R) -> Result<Vec<HourlyEv>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut by_hour: std::collections::BTreeMap<usize, HourlyEv> = Default::default();
    for rec in rdr.deserialize() {
        let rec: EvRecord = rec?;
        if rec.k == 0 {
            return Err(Error::Schema {
                line: 0,
                message: "component index k is 1-based".into(),
            });
        }
        let h = by_hour.entry(rec.hour).or_insert_with(|| HourlyEv {
            hour: rec.hour,
            day_index: Vec::new(),
            dates: Vec::new(),
            ev: Vec::new(),
            flags: Vec::new(),
        });
        if h.day_index.last() != Some(&rec.day_index) {
            h.day_index.push(rec.day_index);
            h.dates.push(rec.date);
            h.ev.push(rec.ev.map(|_| Vec::new()));
            h.flags.push(rec.flag.filter(|f| !f.is_empty()));
        }
        let slot = h.ev.last_mut().expect("pushed above");
        match (slot, rec.ev) {
            (Some(v), Some(e)) if v.len() + 1 == rec.k => v.push(e),
            (None, None) => {}
            _ => {
                return Err(Error::Schema {
                    line: 0,
                    message: format!(
                        "inconsistent EV rows for hour {} day {}",
                        rec.hour, rec.day_index
                    ),
                })
            }
        }
    }
    Ok(by_hour.into_values().collect())
}

pub fn write_loadings_csv<W: Write>(trajectories: &[LoadingTrajectory], pollutants: &[String], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "hour,day_index,date,pollutant,k,weight_raw,weight_smoothed")?;
    let mut sorted: Vec<&LoadingTrajectory> = trajectories.iter().collect();
    sorted.sort_by_key(|t| (t.hour, t.pollutant, t.component));
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let windows = sorted.first().map_or(0, |t| t.raw.len());
    for w in 0..windows {
        for t in &sorted {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.hour,
                t.day_index[w],
                t.dates[w],
                pollutants[t.pollutant],
                t.component + 1,
                fmt(t.raw[w]),
                fmt(t.smoothed[w])
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_mac_csv<W: Write>(tables: &[MacTable], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "hour,pollutant,k,mac")?;
    for t in tables {
        for (p, name) in t.pollutants.iter().enumerate() {
            for k in 0..t.mac.cols() {
                writeln!(out, "{},{},{},{}", t.hour, name, k + 1, t.mac[(p, k)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
