//! Raw observation files: long-format CSV parsing into an hour x day x site x
//! pollutant lattice, quality-control code handling, daylight-saving repair
//! and the missing-data summary.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOURS_PER_DAY: usize = 24;

/// Default pollutant order.
pub const DEFAULT_POLLUTANTS: [&str; 5] = ["O3", "CO", "NO2", "SO2", "PM2.5"];

/// A station that is silent for this many consecutive days is treated as
/// off-line for that stretch in the missingness summary.
pub const OFFLINE_DAYS: usize = 31;

/// Offset of the fixed, DST-free clock raw files are indexed in (UTC-06:00).
pub const FIXED_OFFSET_SECS: i32 = -6 * 3600;

pub fn fixed_offset() -> FixedOffset {
    FixedOffset::east_opt(FIXED_OFFSET_SECS).expect("valid offset")
}

/// Which clock the hour slots of a grid refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Uninterrupted hourly slots at UTC-06:00.
    Fixed,
    /// Local civil time after daylight-saving repair.
    Local,
}

/// Quality-control codes that mark a measurement as invalid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcPolicy {
    pub invalid_codes: BTreeSet<String>,
}

impl QcPolicy {
    pub fn new<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            invalid_codes: codes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_invalid(&self, code: &str) -> bool {
        self.invalid_codes.contains(code)
    }
}

/// Site-level observations on a 24-slot-per-day lattice.
///
/// Values are stored series-major: every (site, pollutant) pair owns a
/// contiguous run of `days * 24` hourly slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    pub start_date: NaiveDate,
    pub days: usize,
    pub sites: Vec<String>,
    pub pollutants: Vec<String>,
    pub units: Vec<String>,
    pub clock: Clock,
    values: Vec<Option<f64>>,
}

impl ObservationGrid {
    /// An all-missing grid.
    pub fn empty(
        start_date: NaiveDate,
        days: usize,
        sites: Vec<String>,
        pollutants: Vec<String>,
        clock: Clock,
    ) -> Self {
        let len = days * HOURS_PER_DAY * sites.len() * pollutants.len();
        let units = vec![String::new(); pollutants.len()];
        Self {
            start_date,
            days,
            sites,
            pollutants,
            units,
            clock,
            values: vec![None; len],
        }
    }

    pub fn slots(&self) -> usize {
        self.days * HOURS_PER_DAY
    }

    fn series_offset(&self, site: usize, pollutant: usize) -> usize {
        (site * self.pollutants.len() + pollutant) * self.slots()
    }

    pub fn series(&self, site: usize, pollutant: usize) -> &[Option<f64>] {
        let off = self.series_offset(site, pollutant);
        &self.values[off..off + self.slots()]
    }

    pub fn series_mut(&mut self, site: usize, pollutant: usize) -> &mut [Option<f64>] {
        let off = self.series_offset(site, pollutant);
        let len = self.slots();
        &mut self.values[off..off + len]
    }

    pub fn get(&self, hour: usize, day: usize, site: usize, pollutant: usize) -> Option<f64> {
        self.series(site, pollutant)[day * HOURS_PER_DAY + hour]
    }

    pub fn set(&mut self, hour: usize, day: usize, site: usize, pollutant: usize, value: Option<f64>) {
        self.series_mut(site, pollutant)[day * HOURS_PER_DAY + hour] = value;
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Option<f64>] {
        &mut self.values
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn pollutant_index(&self, code: &str) -> Option<usize> {
        self.pollutants.iter().position(|p| p == code)
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    /// Wall-clock label of an absolute slot in this grid's clock.
    pub fn slot_datetime(&self, slot: usize) -> NaiveDateTime {
        self.start_date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::hours(slot as i64)
    }
}

/// Grid plus any non-fatal remarks produced while reading it.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub grid: ObservationGrid,
    pub warnings: Vec<String>,
}

struct RawRow {
    line: usize,
    stamp: NaiveDateTime,
    site: String,
    pollutant: usize,
    value: Option<f64>,
}

/// Reads `timestamp,site_id,pollutant,value[,qc_code]` rows.
///
/// Offset-qualified timestamps are converted to UTC-06:00 and yield a
/// [`Clock::Fixed`] grid. Timestamps without an offset are read as local
/// civil time (the form written for DST-repaired grids). A file must use one
/// form throughout.
pub fn parse_observations<R: Read>(
    reader: R,
    policy: &QcPolicy,
    pollutant_order: &[String],
) -> Result<ParseOutcome> {
    let mut warnings = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let empty_file = headers.is_empty() || (headers.len() == 1 && headers[0].is_empty());
    let (ts_col, site_col, pol_col, val_col) = match (
        column("timestamp"),
        column("site_id"),
        column("pollutant"),
        column("value"),
    ) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ if empty_file => {
            warnings.push("input is empty; grid has no days".to_string());
            let grid = empty_grid(pollutant_order);
            return Ok(ParseOutcome { grid, warnings });
        }
        _ => {
            return Err(Error::Schema {
                line: 1,
                message: "header must contain timestamp,site_id,pollutant,value[,qc_code]".into(),
            })
        }
    };
    let qc_col = column("qc_code");
    if qc_col.is_some() && policy.invalid_codes.is_empty() {
        warnings.push("qc_code column present but no invalid codes configured".to_string());
    }

    let offset = fixed_offset();
    let mut clock: Option<Clock> = None;
    let mut rows = Vec::new();
    let mut seen: HashMap<(NaiveDateTime, String, usize), usize> = HashMap::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let field = |i: usize| record.get(i).unwrap_or("");

        let (stamp, row_clock) = parse_timestamp(field(ts_col), &offset).map_err(|message| {
            Error::Parse { line, message }
        })?;
        match clock {
            None => clock = Some(row_clock),
            Some(c) if c != row_clock => {
                return Err(Error::Parse {
                    line,
                    message: "mixes offset-qualified and local timestamps".into(),
                })
            }
            Some(_) => {}
        }

        let site = field(site_col).to_string();
        if site.is_empty() {
            return Err(Error::Schema {
                line,
                message: "empty site_id".into(),
            });
        }
        let code = field(pol_col);
        let pollutant = pollutant_order
            .iter()
            .position(|p| p == code)
            .ok_or_else(|| Error::Schema {
                line,
                message: format!("unknown pollutant code {code:?}"),
            })?;

        let qc_invalid = qc_col.is_some_and(|c| policy.is_invalid(field(c)));
        let value = match field(val_col).parse::<f64>() {
            Ok(v) if v.is_finite() => {
                if v < 0.0 {
                    return Err(Error::Schema {
                        line,
                        message: format!("negative concentration {v}"),
                    });
                }
                Some(v)
            }
            _ => None,
        };
        let value = if qc_invalid { None } else { value };

        let key = (stamp, site.clone(), pollutant);
        if let Some(&first_line) = seen.get(&key) {
            return Err(Error::Conflict {
                first_line,
                second_line: line,
                key: format!("{} {} {}", stamp.format("%Y-%m-%dT%H:%M"), site, code),
            });
        }
        seen.insert(key, line);
        rows.push(RawRow {
            line,
            stamp,
            site,
            pollutant,
            value,
        });
    }

    if rows.is_empty() {
        warnings.push("input has no data rows; grid has no days".to_string());
        return Ok(ParseOutcome {
            grid: empty_grid(pollutant_order),
            warnings,
        });
    }

    let first = rows.iter().map(|r| r.stamp).min().expect("non-empty");
    let last = rows.iter().map(|r| r.stamp).max().expect("non-empty");
    let start_date = first.date();
    let days = (last.date() - start_date).num_days() as usize + 1;
    let sites: Vec<String> = rows
        .iter()
        .map(|r| r.site.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let site_index: HashMap<&str, usize> =
        sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut grid = ObservationGrid::empty(
        start_date,
        days,
        sites.clone(),
        pollutant_order.to_vec(),
        clock.unwrap_or(Clock::Fixed),
    );
    let origin = start_date.and_hms_opt(0, 0, 0).expect("midnight");
    for row in &rows {
        let slot = (row.stamp - origin).num_hours();
        debug_assert!(slot >= 0, "line {}", row.line);
        let site = site_index[row.site.as_str()];
        grid.series_mut(site, row.pollutant)[slot as usize] = row.value;
    }
    Ok(ParseOutcome { grid, warnings })
}

fn empty_grid(pollutant_order: &[String]) -> ObservationGrid {
    ObservationGrid::empty(
        NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date"),
        0,
        Vec::new(),
        pollutant_order.to_vec(),
        Clock::Fixed,
    )
}

fn parse_timestamp(text: &str, offset: &FixedOffset) -> std::result::Result<(NaiveDateTime, Clock), String> {
    let (stamp, clock) = if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        (dt.with_timezone(offset).naive_local(), Clock::Fixed)
    } else if let Ok(dt) = DateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S%:z") {
        (dt.with_timezone(offset).naive_local(), Clock::Fixed)
    } else if let Ok(naive) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S") {
        (naive, Clock::Local)
    } else if let Ok(naive) = NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S") {
        (naive, Clock::Local)
    } else {
        return Err(format!("unparseable timestamp {text:?}"));
    };
    if stamp.minute() != 0 || stamp.second() != 0 || stamp.nanosecond() != 0 {
        return Err(format!("timestamp {text:?} is not on the hour"));
    }
    Ok((stamp, clock))
}

/// Writes every cell of the grid in the ingest CSV format. Missing cells get
/// an empty `value`; `qc_code` is always empty.
pub fn write_observations<W: Write>(grid: &ObservationGrid, writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "timestamp,site_id,pollutant,value,qc_code")?;
    let suffix = match grid.clock {
        Clock::Fixed => "-06:00",
        Clock::Local => "",
    };
    for slot in 0..grid.slots() {
        let stamp = grid.slot_datetime(slot).format("%Y-%m-%dT%H:%M:%S");
        for (s, site) in grid.sites.iter().enumerate() {
            for (p, pollutant) in grid.pollutants.iter().enumerate() {
                match grid.series(s, p)[slot] {
                    Some(v) => writeln!(out, "{stamp}{suffix},{site},{pollutant},{v},")?,
                    None => writeln!(out, "{stamp}{suffix},{site},{pollutant},,")?,
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// One year's daylight-saving transitions, as instants.
///
/// `jump` is the moment local clocks skip an hour forward (spring) and
/// `compression` the moment they fall back (autumn).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DstRule {
    pub year: i32,
    pub jump: DateTime<FixedOffset>,
    pub compression: DateTime<FixedOffset>,
}

pub fn parse_zone_rules<R: Read>(reader: R) -> Result<Vec<DstRule>> {
    Ok(serde_json::from_reader(reader)?)
}

/// Re-indexes a fixed-clock grid to local civil time.
///
/// The skipped hour on each jump day is filled by the midpoint of the two
/// neighbouring local hours (left missing if either neighbour is missing);
/// on each compression day the repeated hour keeps its first occurrence.
/// With no rules the grid is returned unchanged.
pub fn apply_dst(grid: &ObservationGrid, rules: &[DstRule]) -> Result<ObservationGrid> {
    if rules.is_empty() {
        return Ok(grid.clone());
    }
    if grid.clock == Clock::Local {
        return Err(Error::InvalidInput(
            "grid is already indexed in local time".into(),
        ));
    }
    let offset = fixed_offset();
    let origin = grid.start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let len = grid.slots();
    let to_slot = |instant: &DateTime<FixedOffset>, what: &str, year: i32| -> Result<usize> {
        let local = instant.with_timezone(&offset).naive_local();
        let hours = (local - origin).num_hours();
        if hours < 0 || hours as usize >= len || local.minute() != 0 {
            return Err(Error::Range(format!(
                "{what} instant {instant} for {year} lies outside the grid span"
            )));
        }
        Ok(hours as usize)
    };

    let mut jumps = Vec::with_capacity(rules.len());
    let mut compressions = Vec::with_capacity(rules.len());
    for rule in rules {
        jumps.push(to_slot(&rule.jump, "jump", rule.year)?);
        compressions.push(to_slot(&rule.compression, "compression", rule.year)?);
    }
    jumps.sort_unstable();
    compressions.sort_unstable();

    let shift = |t: usize| -> i64 {
        let j = jumps.partition_point(|&s| s <= t) as i64;
        let c = compressions.partition_point(|&s| s <= t) as i64;
        j - c
    };
    // local slots left empty by a forward jump
    let holes: Vec<usize> = jumps
        .iter()
        .filter_map(|&j| {
            let hole = j as i64 + shift(j) - 1;
            (hole >= 0 && (hole as usize) < len).then_some(hole as usize)
        })
        .collect();

    let mut out = grid.clone();
    out.clock = Clock::Local;
    for s in 0..grid.sites.len() {
        for p in 0..grid.pollutants.len() {
            let src = grid.series(s, p);
            let dst = out.series_mut(s, p);
            let mut assigned = vec![false; len];
            dst.iter_mut().for_each(|v| *v = None);
            for (t, value) in src.iter().enumerate() {
                let lt = t as i64 + shift(t);
                if lt < 0 || lt as usize >= len {
                    continue;
                }
                let lt = lt as usize;
                if !assigned[lt] {
                    assigned[lt] = true;
                    dst[lt] = *value;
                }
            }
            for &hole in &holes {
                if hole == 0 || hole + 1 >= len || assigned[hole] {
                    continue;
                }
                if let (Some(a), Some(b)) = (dst[hole - 1], dst[hole + 1]) {
                    dst[hole] = Some(0.5 * (a + b));
                }
            }
        }
    }
    Ok(out)
}

/// Missing-run tallies for one series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunTally {
    pub short: usize,
    pub long: usize,
    /// Cells inside off-line stretches; excluded from the denominator.
    pub offline: usize,
    pub len: usize,
}

impl RunTally {
    pub fn expected(&self) -> usize {
        self.len - self.offline
    }
}

pub fn tally_missing_runs(series: &[Option<f64>], short_gap_max: usize, offline_min: usize) -> RunTally {
    let mut tally = RunTally {
        len: series.len(),
        ..Default::default()
    };
    let mut i = 0;
    while i < series.len() {
        if series[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < series.len() && series[i].is_none() {
            i += 1;
        }
        let run = i - start;
        if run >= offline_min {
            tally.offline += run;
        } else if run <= short_gap_max {
            tally.short += run;
        } else {
            tally.long += run;
        }
    }
    tally
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessRow {
    pub pollutant: String,
    pub short_pct: f64,
    pub long_pct: f64,
    pub total_pct: f64,
    pub site_count: usize,
}

/// Share of missing hours per pollutant split into short and long runs.
///
/// Only sites that report the pollutant at least once take part; stretches
/// of [`OFFLINE_DAYS`] or more consecutive missing days are dropped from
/// both numerator and denominator.
pub fn missingness_report(grid: &ObservationGrid, short_gap_max: usize) -> Vec<MissingnessRow> {
    let offline_min = OFFLINE_DAYS * HOURS_PER_DAY;
    grid.pollutants
        .iter()
        .enumerate()
        .map(|(p, code)| {
            let mut short = 0usize;
            let mut long = 0usize;
            let mut expected = 0usize;
            let mut site_count = 0usize;
            for s in 0..grid.sites.len() {
                let series = grid.series(s, p);
                if series.iter().all(Option::is_none) {
                    continue;
                }
                site_count += 1;
                let t = tally_missing_runs(series, short_gap_max, offline_min);
                short += t.short;
                long += t.long;
                expected += t.expected();
            }
            let pct = |n: usize| {
                if expected == 0 {
                    0.0
                } else {
                    100.0 * n as f64 / expected as f64
                }
            };
            MissingnessRow {
                pollutant: code.clone(),
                short_pct: pct(short),
                long_pct: pct(long),
                total_pct: pct(short + long),
                site_count,
            }
        })
        .collect()
}

pub fn write_missingness<W: Write>(rows: &[MissingnessRow], writer: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(writer);
    writeln!(out, "pollutant,short_pct,long_pct,total_pct,site_count")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{}",
            r.pollutant, r.short_pct, r.long_pct, r.total_pct, r.site_count
        )?;
    }
    out.flush()?;
    Ok(())
}
