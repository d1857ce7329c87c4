//! Per-hour day x pollutant panels.
//!
//! A panel starts as spatially aggregated observations (SAO: median or mean
//! across sites), moves to `log(1 + x)` (LSAO) and finally to day-over-day
//! differences of the log (NSAO). Differencing consumes the first day, so an
//! NSAO panel has one row fewer and its row 0 is dated one day later.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ObservationGrid, HOURS_PER_DAY};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    #[serde(alias = "sao")]
    Sao,
    #[serde(alias = "lsao")]
    Lsao,
    #[serde(alias = "nsao")]
    Nsao,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Sao => "sao",
            Stage::Lsao => "lsao",
            Stage::Nsao => "nsao",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sao" => Ok(Stage::Sao),
            "lsao" => Ok(Stage::Lsao),
            "nsao" => Ok(Stage::Nsao),
            other => Err(Error::Config(format!("unknown transform {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Median,
    Mean,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Median => "median",
            Aggregator::Mean => "mean",
        }
    }

    /// Aggregates a non-empty slice. Even-length medians take the midpoint
    /// of the two central values.
    pub fn apply(self, values: &mut [f64]) -> f64 {
        debug_assert!(!values.is_empty());
        match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Median => {
                values.sort_by(f64::total_cmp);
                let n = values.len();
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "median" => Ok(Aggregator::Median),
            "mean" => Ok(Aggregator::Mean),
            other => Err(Error::Config(format!("unknown aggregator {other:?}"))),
        }
    }
}

/// A panel cell whose value was filled along the day axis because no site
/// reported it (or that derives from such a cell after differencing).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlaggedCell {
    pub day_index: usize,
    pub pollutant: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub hour: usize,
    pub stage: Stage,
    pub aggregator: Aggregator,
    /// Date of row 0.
    pub start_date: NaiveDate,
    pub pollutants: Vec<String>,
    /// Days x pollutants. `NaN` marks a missing cell, which only an SAO panel
    /// may carry.
    pub values: Matrix,
    pub flagged_cells: Vec<FlaggedCell>,
}

impl Panel {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn date_of(&self, row: usize) -> NaiveDate {
        self.start_date + Duration::days(row as i64)
    }

    pub fn is_complete(&self) -> bool {
        self.values.is_finite()
    }

    fn require_complete(&self) -> Result<()> {
        if let Some(pos) = self.values.as_slice().iter().position(|v| !v.is_finite()) {
            let p = self.values.cols();
            return Err(Error::InvalidInput(format!(
                "hour {} {} panel has a missing cell at day {} pollutant {}",
                self.hour,
                self.stage.name(),
                pos / p,
                self.pollutants[pos % p]
            )));
        }
        Ok(())
    }
}

/// Collapses the site dimension at one hour of day.
///
/// Cells no site reported are filled by linear interpolation along days
/// (flat extension before the first and after the last observed day) and
/// listed in `flagged_cells`. A pollutant that no site ever reported at this
/// hour stays missing.
pub fn build_sao(grid: &ObservationGrid, hour: usize, aggregator: Aggregator) -> Result<Panel> {
    if hour >= HOURS_PER_DAY {
        return Err(Error::Range(format!("hour {hour} is outside 0..23")));
    }
    let p = grid.pollutants.len();
    let mut values = Matrix::from_fn(grid.days, p, |_, _| f64::NAN);
    let mut scratch = Vec::with_capacity(grid.sites.len());
    for d in 0..grid.days {
        for j in 0..p {
            scratch.clear();
            scratch.extend((0..grid.sites.len()).filter_map(|s| grid.get(hour, d, s, j)));
            if !scratch.is_empty() {
                values[(d, j)] = aggregator.apply(&mut scratch);
            }
        }
    }

    let mut flagged = Vec::new();
    for j in 0..p {
        let mut column = values.column(j);
        for d in fill_along_days(&mut column) {
            flagged.push(FlaggedCell {
                day_index: d,
                pollutant: grid.pollutants[j].clone(),
            });
        }
        for (d, v) in column.into_iter().enumerate() {
            values[(d, j)] = v;
        }
    }
    flagged.sort();

    Ok(Panel {
        hour,
        stage: Stage::Sao,
        aggregator,
        start_date: grid.start_date,
        pollutants: grid.pollutants.clone(),
        values,
        flagged_cells: flagged,
    })
}

// Linear interpolation over interior NaN runs, flat extension at the ends.
// Returns the indices that were filled.
fn fill_along_days(column: &mut [f64]) -> Vec<usize> {
    let observed: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_finite()).collect();
    let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
        return Vec::new();
    };
    let mut filled = Vec::new();
    for i in 0..first {
        column[i] = column[first];
        filled.push(i);
    }
    for w in observed.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            column[i] = column[a] + t * (column[b] - column[a]);
            filled.push(i);
        }
    }
    for i in last + 1..column.len() {
        column[i] = column[last];
        filled.push(i);
    }
    filled
}

/// Elementwise natural `log(1 + x)`.
pub fn to_lsao(panel: &Panel) -> Result<Panel> {
    if panel.stage != Stage::Sao {
        return Err(Error::InvalidInput(format!(
            "to_lsao expects an SAO panel, got {}",
            panel.stage.name()
        )));
    }
    panel.require_complete()?;
    if let Some(v) = panel.values.as_slice().iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!("negative SAO value {v}")));
    }
    let values = Matrix::from_fn(panel.rows(), panel.values.cols(), |i, j| {
        panel.values[(i, j)].ln_1p()
    });
    Ok(Panel {
        stage: Stage::Lsao,
        values,
        ..panel.clone()
    })
}

/// Day-over-day differences: output row `r` is input row `r + 1` minus row `r`.
pub fn to_nsao(panel: &Panel) -> Result<Panel> {
    if panel.stage != Stage::Lsao {
        return Err(Error::InvalidInput(format!(
            "to_nsao expects an LSAO panel, got {}",
            panel.stage.name()
        )));
    }
    if panel.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "differencing needs at least 2 days, got {}",
            panel.rows()
        )));
    }
    panel.require_complete()?;
    let values = Matrix::from_fn(panel.rows() - 1, panel.values.cols(), |i, j| {
        panel.values[(i + 1, j)] - panel.values[(i, j)]
    });
    let mut flagged: Vec<FlaggedCell> = panel
        .flagged_cells
        .iter()
        .flat_map(|c| {
            let before = c.day_index.checked_sub(1);
            let after = (c.day_index < values.rows()).then_some(c.day_index);
            before.into_iter().chain(after).map(|day_index| FlaggedCell {
                day_index,
                pollutant: c.pollutant.clone(),
            })
        })
        .collect();
    flagged.sort();
    flagged.dedup();
    Ok(Panel {
        stage: Stage::Nsao,
        start_date: panel.date_of(1),
        values,
        flagged_cells: flagged,
        ..panel.clone()
    })
}

/// Applies the ladder up to `stage` starting from an SAO panel.
pub fn transform(sao: &Panel, stage: Stage) -> Result<Panel> {
    match stage {
        Stage::Sao => Ok(sao.clone()),
        Stage::Lsao => to_lsao(sao),
        Stage::Nsao => to_nsao(&to_lsao(sao)?),
    }
}

/// Sidecar metadata written next to a panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub hour: usize,
    pub stage: Stage,
    pub aggregator: Aggregator,
    pub flagged_cells: Vec<FlaggedCell>,
}

impl From<&Panel> for PanelMeta {
    fn from(p: &Panel) -> Self {
        Self {
            hour: p.hour,
            stage: p.stage,
            aggregator: p.aggregator,
            flagged_cells: p.flagged_cells.clone(),
        }
    }
}

pub fn write_panel_csv<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    write!(out, "day_index,date")?;
    for p in &panel.pollutants {
        write!(out, ",{p}")?;
    }
    writeln!(out)?;
    for r in 0..panel.rows() {
        write!(out, "{r},{}", panel.date_of(r))?;
        for v in panel.values.row(r) {
            if v.is_finite() {
                write!(out, ",{v}")?;
            } else {
                write!(out, ",")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_panel_meta<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut out, &PanelMeta::from(panel))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_panel<R: Read, M: Read>(csv_reader: R, meta_reader: M) -> Result<Panel> {
    let meta: PanelMeta = serde_json::from_reader(meta_reader)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "day_index" || &headers[1] != "date" {
        return Err(Error::Schema {
            line: 1,
            message: "panel header must be day_index,date,<pollutants...>".into(),
        });
    }
    let pollutants: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut data = Vec::new();
    let mut start_date = None;
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let date: NaiveDate = record[1].parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad date {:?}: {e}", &record[1]),
        })?;
        if start_date.is_none() {
            start_date = Some(date);
        }
        for field in record.iter().skip(2) {
            let v = if field.is_empty() {
                f64::NAN
            } else {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad value {field:?}: {e}"),
                })?
            };
            data.push(v);
        }
        rows += 1;
    }
    let values = Matrix::from_vec(rows, pollutants.len(), data)?;
    Ok(Panel {
        hour: meta.hour,
        stage: meta.stage,
        aggregator: meta.aggregator,
        start_date: start_date.unwrap_or_else(|| NaiveDate::from_ymd_opt(1970, 1, 1).expect("date")),
        pollutants,
        values,
        flagged_cells: meta.flagged_cells,
    })
}
