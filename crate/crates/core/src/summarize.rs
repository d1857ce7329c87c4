//! Reductions over per-hour EV series and the static-PCA comparison harness.

use std::io::Write;

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpca::{run_dpca, window_pca, DpcaConfig, HourlyEv};
use crate::error::{Error, Result};
use crate::ingest::ObservationGrid;
use crate::linalg::Matrix;
use crate::panel::{build_sao, transform, Aggregator, Panel, Stage};

/// Mean EV of one hour over its non-flagged windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourMeanEv {
    pub hour: usize,
    /// Windows that contributed.
    pub count: usize,
    pub total: usize,
    /// Per component; empty when no window contributed.
    pub mean_ev: Vec<f64>,
    pub mean_cev: Vec<f64>,
}

impl HourMeanEv {
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }
}

fn running_sum(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

pub fn mean_ev_by_hour(hourly: &[HourlyEv]) -> Vec<HourMeanEv> {
    let mut out: Vec<HourMeanEv> = hourly
        .iter()
        .map(|h| {
            let p = h.components();
            let mut sums = vec![0.0; p];
            let mut count = 0;
            for ev in h.ev.iter().flatten() {
                sums.iter_mut().zip(ev).for_each(|(s, v)| *s += v);
                count += 1;
            }
            let mean_ev: Vec<f64> = if count == 0 {
                Vec::new()
            } else {
                sums.iter().map(|s| s / count as f64).collect()
            };
            HourMeanEv {
                hour: h.hour,
                count,
                total: h.ev.len(),
                mean_cev: running_sum(&mean_ev),
                mean_ev,
            }
        })
        .collect();
    out.sort_by_key(|h| h.hour);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMeanEv {
    pub mean_ev: Vec<f64>,
    pub mean_cev: Vec<f64>,
    /// Hours with at least one contributing window.
    pub hours: usize,
    /// Contributing windows over all windows, across hours.
    pub coverage: f64,
}

/// Unweighted mean over hours of the hourly means.
pub fn overall_mean_ev(table: &[HourMeanEv]) -> OverallMeanEv {
    let used: Vec<&HourMeanEv> = table.iter().filter(|h| h.count > 0).collect();
    let p = used.first().map_or(0, |h| h.mean_ev.len());
    let mut mean_ev = vec![0.0; p];
    for h in &used {
        mean_ev.iter_mut().zip(&h.mean_ev).for_each(|(m, v)| *m += v);
    }
    mean_ev.iter_mut().for_each(|m| *m /= used.len() as f64);
    let count: usize = table.iter().map(|h| h.count).sum();
    let total: usize = table.iter().map(|h| h.total).sum();
    OverallMeanEv {
        mean_cev: running_sum(&mean_ev),
        mean_ev,
        hours: used.len(),
        coverage: if total == 0 { 0.0 } else { count as f64 / total as f64 },
    }
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub hour: usize,
    /// Zero-based component index.
    pub component: usize,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// `(day_index, value)` beyond 1.5 IQR from the quartiles.
    pub outliers: Vec<(usize, f64)>,
}

/// Box-plot summary of component `k` per hour. Hours without any
/// non-flagged window are omitted.
pub fn ev_distribution_by_hour(hourly: &[HourlyEv], k: usize) -> Vec<BoxSummary> {
    let mut out: Vec<BoxSummary> = hourly
        .iter()
        .filter_map(|h| {
            let points: Vec<(usize, f64)> = h
                .series(k, false)
                .into_iter()
                .zip(&h.day_index)
                .filter_map(|(v, &d)| v.map(|v| (d, v)))
                .collect();
            if points.is_empty() {
                return None;
            }
            let mut sorted: Vec<f64> = points.iter().map(|p| p.1).collect();
            sorted.sort_by(f64::total_cmp);
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let iqr = q3 - q1;
            let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
            Some(BoxSummary {
                hour: h.hour,
                component: k,
                n: sorted.len(),
                min: sorted[0],
                q1,
                median: quantile_sorted(&sorted, 0.5),
                q3,
                max: sorted[sorted.len() - 1],
                outliers: points.into_iter().filter(|&(_, v)| v < lo || v > hi).collect(),
            })
        })
        .collect();
    out.sort_by_key(|b| b.hour);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    Whole,
    SummerWinter,
    DayNight,
}

impl std::str::FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(Self::Whole),
            "summer-winter" => Ok(Self::SummerWinter),
            "day-night" => Ok(Self::DayNight),
            other => Err(Error::Config(format!(
                "unknown partition scheme {other:?} (expected whole, summer-winter or day-night)"
            ))),
        }
    }
}

/// Season and day-time boundaries used by the partition schemes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionBounds {
    pub summer_months: Vec<u32>,
    pub winter_months: Vec<u32>,
    /// First and last hour (inclusive) counted as day.
    pub day_start_hour: usize,
    pub day_end_hour: usize,
}

impl Default for PartitionBounds {
    fn default() -> Self {
        Self {
            summer_months: vec![6, 7, 8],
            winter_months: vec![12, 1, 2],
            day_start_hour: 6,
            day_end_hour: 17,
        }
    }
}

/// Number of leading components reported by the static comparison.
pub const STATIC_COMPONENTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPca {
    pub partition: String,
    pub rows: usize,
    pub ev: Vec<f64>,
    pub cev: Vec<f64>,
}

/// Pools every (hour, day) row of `panels` that falls in the partition,
/// standardizes the pooled sample once and fits a single PCA.
pub fn static_pca(panels: &[Panel], name: &str, keep: impl Fn(usize, chrono::NaiveDate) -> bool) -> Result<StaticPca> {
    let mut rows: Vec<&[f64]> = Vec::new();
    for panel in panels {
        for r in 0..panel.rows() {
            if keep(panel.hour, panel.date_of(r)) {
                rows.push(panel.values.row(r));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("partition {name} selects no observations")));
    }
    let pooled = Matrix::from_rows(&rows)?;
    let fit = window_pca(&pooled, true)?;
    let k = STATIC_COMPONENTS.min(fit.ev.len());
    Ok(StaticPca {
        partition: name.to_string(),
        rows: rows.len(),
        ev: fit.ev[..k].to_vec(),
        cev: fit.cev[..k].to_vec(),
    })
}

pub fn static_pca_partition(panels: &[Panel], scheme: PartitionScheme, bounds: &PartitionBounds) -> Result<Vec<StaticPca>> {
    if let Some(p) = panels.iter().find(|p| !p.is_complete()) {
        return Err(Error::InvalidInput(format!("hour {} panel has missing cells", p.hour)));
    }
    let in_day = |h: usize| (bounds.day_start_hour..=bounds.day_end_hour).contains(&h);
    match scheme {
        PartitionScheme::Whole => Ok(vec![static_pca(panels, "whole", |_, _| true)?]),
        PartitionScheme::SummerWinter => Ok(vec![
            static_pca(panels, "summer", |_, d| bounds.summer_months.contains(&d.month()))?,
            static_pca(panels, "winter", |_, d| bounds.winter_months.contains(&d.month()))?,
        ]),
        PartitionScheme::DayNight => Ok(vec![
            static_pca(panels, "day", |h, _| in_day(h))?,
            static_pca(panels, "night", |h, _| !in_day(h))?,
        ]),
    }
}

/// SAO for one hour, taken up the transform ladder and run through DPCA.
pub fn hourly_ev(grid: &ObservationGrid, hour: usize, aggregator: Aggregator, stage: Stage, cfg: &DpcaConfig) -> Result<HourlyEv> {
    let panel = transform(&build_sao(grid, hour, aggregator)?, stage)?;
    Ok(HourlyEv::from(&run_dpca(&panel, cfg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantCurve {
    pub aggregator: Aggregator,
    pub stage: Stage,
    /// Mean EV of the first component per hour, in `hours` order.
    pub mean_ev1: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformComparison {
    pub hours: Vec<usize>,
    pub variants: Vec<VariantCurve>,
}

/// Hourly mean EV of the first component for every aggregator x stage
/// variant, computed concurrently. `grid` should already be imputed.
pub fn transform_comparison(grid: &ObservationGrid, cfg: &DpcaConfig, hours: &[usize]) -> Result<TransformComparison> {
    let variants: Vec<(Aggregator, Stage)> = [Aggregator::Mean, Aggregator::Median]
        .into_iter()
        .flat_map(|a| [Stage::Sao, Stage::Lsao, Stage::Nsao].map(|s| (a, s)))
        .collect();
    let curves = variants
        .par_iter()
        .map(|&(aggregator, stage)| {
            let mut mean_ev1 = Vec::with_capacity(hours.len());
            let mut count = Vec::with_capacity(hours.len());
            for &hour in hours {
                let summary = &mean_ev_by_hour(&[hourly_ev(grid, hour, aggregator, stage, cfg)?])[0];
                mean_ev1.push(summary.mean_ev.first().copied());
                count.push(summary.count);
            }
            Ok(VariantCurve {
                aggregator,
                stage,
                mean_ev1,
                count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformComparison {
        hours: hours.to_vec(),
        variants: curves,
    })
}

/// Every summary table of one run, for the optional JSON bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBundle {
    pub mean_ev_by_hour: Vec<HourMeanEv>,
    pub overall: OverallMeanEv,
    pub distributions: Vec<BoxSummary>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_mean_ev_csv<W: Write>(table: &[HourMeanEv], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "hour,k,mean_ev,mean_cev,count,total,coverage")?;
    for h in table {
        let p = h.mean_ev.len().max(1);
        for k in 0..p {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                h.hour,
                k + 1,
                opt(h.mean_ev.get(k).copied()),
                opt(h.mean_cev.get(k).copied()),
                h.count,
                h.total,
                h.coverage()
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_overall_csv<W: Write>(overall: &OverallMeanEv, writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "k,mean_ev,mean_cev,hours,coverage")?;
    for k in 0..overall.mean_ev.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            k + 1,
            overall.mean_ev[k],
            overall.mean_cev[k],
            overall.hours,
            overall.coverage
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Outliers are written as `day_index:value` pairs separated by `;`.
pub fn write_distribution_csv<W: Write>(summaries: &[BoxSummary], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "hour,k,n,min,q1,median,q3,max,outliers")?;
    for b in summaries {
        let outliers: Vec<String> = b.outliers.iter().map(|(d, v)| format!("{d}:{v}")).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            b.hour,
            b.component + 1,
            b.n,
            b.min,
            b.q1,
            b.median,
            b.q3,
            b.max,
            outliers.join(";")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_static_csv<W: Write>(rows: &[StaticPca], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "partition,rows,k,ev,cev")?;
    for r in rows {
        for k in 0..r.ev.len() {
            writeln!(out, "{},{},{},{},{}", r.partition, r.rows, k + 1, r.ev[k], r.cev[k])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(cmp: &TransformComparison, writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "aggregator,stage,hour,mean_ev1,count")?;
    for v in &cmp.variants {
        for (i, hour) in cmp.hours.iter().enumerate() {
            writeln!(
                out,
                "{},{},{hour},{},{}",
                v.aggregator.name(),
                v.stage.name(),
                opt(v.mean_ev1[i]),
                v.count[i]
            )?;
        }
    }
    out.flush()?;
    Ok(())
}
