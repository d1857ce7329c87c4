//! One function per pipeline stage. Each reads its input (from memory when
//! chained by `pipeline`, otherwise from disk), writes its outputs through
//! the run record and returns what the next stage needs.

use std::path::PathBuf;

use dpca_core::diagnostics::{all_pairs, rolling_hz_test, rolling_outliers, rolling_pearson, write_diagnostics_csv};
use dpca_core::dpca::{
    loading_trajectories, read_ev_csv, run_dpca, sign_normalize_run, write_ev_csv, write_loadings_csv, write_mac_csv,
    HourlyEv,
};
use dpca_core::impute::impute_short_gaps;
use dpca_core::ingest::{
    apply_dst, missingness_report, parse_observations, parse_zone_rules, write_missingness, write_observations,
    ObservationGrid, QcPolicy,
};
use dpca_core::panel::{build_sao, read_panel, transform, write_panel_csv, write_panel_meta, Panel, Stage};
use dpca_core::summarize::{
    ev_distribution_by_hour, mean_ev_by_hour, overall_mean_ev, static_pca_partition, transform_comparison,
    write_comparison_csv, write_distribution_csv, write_mean_ev_csv, write_overall_csv, write_static_csv,
    PartitionScheme, SummaryBundle,
};
use dpca_core::synth::{generate, SynthMetadata};
use dpca_core::{Error, Result};
use rayon::prelude::*;

use crate::config::Config;
use crate::manifest::Run;

pub const GRID_FILE: &str = "grid.csv";
pub const IMPUTED_FILE: &str = "imputed.csv";
pub const PANEL_DIR: &str = "panels";
pub const DPCA_DIR: &str = "dpca";

pub struct Ctx {
    pub cfg: Config,
    pub input: Option<PathBuf>,
}

impl Ctx {
    /// The `--input` path, or `default` under the output directory.
    fn input_or(&self, run: &Run, default: &str) -> PathBuf {
        self.input.clone().unwrap_or_else(|| run.out_dir().join(default))
    }

    fn required_input(&self, what: &str) -> Result<PathBuf> {
        self.input
            .clone()
            .ok_or_else(|| Error::Config(format!("--input is required ({what})")))
    }
}

fn panel_name(panel_stage: Stage, cfg: &Config, hour: usize) -> String {
    format!("{}_{}_h{hour:02}", panel_stage.name(), cfg.aggregator.name())
}

fn parse_grid(bytes: &[u8], cfg: &Config, policy: &QcPolicy, run: &mut Run) -> Result<ObservationGrid> {
    let outcome = parse_observations(bytes, policy, &cfg.pollutants)?;
    for w in outcome.warnings {
        run.warn(w);
    }
    Ok(outcome.grid)
}

fn read_grid(ctx: &Ctx, run: &mut Run, default: &str) -> Result<ObservationGrid> {
    let path = ctx.input_or(run, default);
    let bytes = run.read(&path)?;
    parse_grid(&bytes, &ctx.cfg, &QcPolicy::default(), run)
}

pub fn ingest(ctx: &Ctx, run: &mut Run) -> Result<ObservationGrid> {
    let cfg = &ctx.cfg;
    let bytes = run.read(&ctx.required_input("raw observation CSV")?)?;
    let mut grid = parse_grid(&bytes, cfg, &QcPolicy::new(cfg.qc_codes.iter().cloned()), run)?;
    if let Some(rules_path) = &cfg.zone_rules {
        let rules = parse_zone_rules(run.read(rules_path)?.as_slice())?;
        grid = apply_dst(&grid, &rules)?;
    }
    run.count("days", grid.days);
    run.count("sites", grid.sites.len());
    run.count("present_cells", grid.present_count());
    run.emit(GRID_FILE, |w| write_observations(&grid, w))?;
    let report = missingness_report(&grid, cfg.short_gap_max);
    run.emit("missingness.csv", |w| write_missingness(&report, w))?;
    Ok(grid)
}

pub fn impute(ctx: &Ctx, run: &mut Run, grid: Option<ObservationGrid>) -> Result<ObservationGrid> {
    let grid = match grid {
        Some(g) => g,
        None => read_grid(ctx, run, GRID_FILE)?,
    };
    let (imputed, filled) = impute_short_gaps(&grid, ctx.cfg.short_gap_max)?;
    run.count("imputed_cells", filled);
    run.emit(IMPUTED_FILE, |w| write_observations(&imputed, w))?;
    Ok(imputed)
}

fn write_panels(run: &mut Run, cfg: &Config, panels: &[Panel]) -> Result<()> {
    for panel in panels {
        let name = panel_name(panel.stage, cfg, panel.hour);
        run.emit(&format!("{PANEL_DIR}/{name}.csv"), |w| write_panel_csv(panel, w))?;
        run.emit(&format!("{PANEL_DIR}/{name}.meta.json"), |w| write_panel_meta(panel, w))?;
        run.count(&format!("flagged_cells_{}", panel.stage.name()), panel.flagged_cells.len());
    }
    Ok(())
}

pub fn sao(ctx: &Ctx, run: &mut Run, grid: Option<ObservationGrid>) -> Result<Vec<Panel>> {
    let grid = match grid {
        Some(g) => g,
        None => read_grid(ctx, run, IMPUTED_FILE)?,
    };
    let cfg = &ctx.cfg;
    let panels = cfg
        .sorted_hours()
        .par_iter()
        .map(|&h| build_sao(&grid, h, cfg.aggregator))
        .collect::<Result<Vec<_>>>()?;
    write_panels(run, cfg, &panels)?;
    Ok(panels)
}

/// Reads the per-hour panels of `stage` from the input directory.
pub fn read_panels(ctx: &Ctx, run: &mut Run, stage: Stage) -> Result<Vec<Panel>> {
    let dir = ctx.input_or(run, PANEL_DIR);
    let mut raw = Vec::new();
    for hour in ctx.cfg.sorted_hours() {
        let name = panel_name(stage, &ctx.cfg, hour);
        let csv = run.read(&dir.join(format!("{name}.csv")))?;
        let meta = run.read(&dir.join(format!("{name}.meta.json")))?;
        raw.push((csv, meta));
    }
    let panels = raw
        .par_iter()
        .map(|(csv, meta)| read_panel(csv.as_slice(), meta.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    if let Some(p) = panels.iter().find(|p| p.stage != stage) {
        return Err(Error::InvalidInput(format!(
            "hour {} panel is {}, expected {}",
            p.hour,
            p.stage.name(),
            stage.name()
        )));
    }
    Ok(panels)
}

pub fn transform_panels(ctx: &Ctx, run: &mut Run, saos: &[Panel], stage: Stage) -> Result<Vec<Panel>> {
    let panels = saos
        .par_iter()
        .map(|p| transform(p, stage))
        .collect::<Result<Vec<_>>>()?;
    write_panels(run, &ctx.cfg, &panels)?;
    Ok(panels)
}

pub fn diagnose(ctx: &Ctx, run: &mut Run, panels: &[Panel]) -> Result<()> {
    let cfg = &ctx.cfg;
    let rendered = panels
        .par_iter()
        .map(|panel| {
            let mut series = vec![
                rolling_hz_test(panel, cfg.window)?,
                rolling_outliers(panel, cfg.window, cfg.alpha)?,
            ];
            for pair in all_pairs(panel.pollutants.len()) {
                series.push(rolling_pearson(panel, cfg.window, pair)?);
            }
            let flagged = series.iter().flat_map(|s| &s.flags).filter(|f| f.is_some()).count();
            let mut buf = Vec::new();
            write_diagnostics_csv(&series, &mut buf)?;
            Ok((panel_name(panel.stage, cfg, panel.hour), buf, flagged))
        })
        .collect::<Result<Vec<_>>>()?;
    for (name, buf, flagged) in rendered {
        run.write(&format!("diagnostics/{name}.csv"), &buf)?;
        run.count("diagnostic_flags", flagged);
    }
    Ok(())
}

pub fn dpca(ctx: &Ctx, run: &mut Run, panels: &[Panel]) -> Result<Vec<HourlyEv>> {
    let cfg = &ctx.cfg;
    let dcfg = cfg.dpca();
    let results = panels
        .par_iter()
        .map(|panel| {
            let mut result = run_dpca(panel, &dcfg)?;
            let hourly = HourlyEv::from(&result);
            let mut files = Vec::new();
            let mut ev = Vec::new();
            write_ev_csv(std::slice::from_ref(&hourly), &mut ev)?;
            files.push((format!("{DPCA_DIR}/ev_h{:02}.csv", panel.hour), ev));
            // Loadings need at least one usable window to fix signs.
            if result.degenerate_count() < result.windows.len() {
                let mac = sign_normalize_run(&mut result)?;
                let trajectories = loading_trajectories(&result, &mac, dcfg.smoothing_window);
                let mut loadings = Vec::new();
                write_loadings_csv(&trajectories, &panel.pollutants, &mut loadings)?;
                let mut mac_buf = Vec::new();
                write_mac_csv(std::slice::from_ref(&mac), &mut mac_buf)?;
                files.push((format!("{DPCA_DIR}/loadings_h{:02}.csv", panel.hour), loadings));
                files.push((format!("{DPCA_DIR}/mac_h{:02}.csv", panel.hour), mac_buf));
            }
            Ok((hourly, result.degenerate_count(), result.windows.len(), files))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(results.len());
    let mut usable = 0;
    for (hourly, degenerate, total, files) in results {
        for (rel, buf) in files {
            run.write(&rel, &buf)?;
        }
        if degenerate > 0 {
            run.warn(format!("hour {}: {degenerate} of {total} windows degenerate", hourly.hour));
        }
        run.count("windows", total);
        run.count("degenerate_windows", degenerate);
        usable += total - degenerate;
        out.push(hourly);
    }
    if usable == 0 {
        return Err(Error::Numerical("every window of every hour is degenerate".into()));
    }
    Ok(out)
}

pub fn summarize(ctx: &Ctx, run: &mut Run, hourly: Option<Vec<HourlyEv>>) -> Result<()> {
    let hourly = match hourly {
        Some(h) => h,
        None => {
            let dir = ctx.input_or(run, DPCA_DIR);
            let mut all = Vec::new();
            for hour in ctx.cfg.sorted_hours() {
                let bytes = run.read(&dir.join(format!("ev_h{hour:02}.csv")))?;
                all.extend(read_ev_csv(bytes.as_slice())?);
            }
            all
        }
    };
    let table = mean_ev_by_hour(&hourly);
    let overall = overall_mean_ev(&table);
    let components = hourly.iter().map(HourlyEv::components).max().unwrap_or(0);
    let distributions: Vec<_> = (0..components)
        .flat_map(|k| ev_distribution_by_hour(&hourly, k))
        .collect();
    run.emit("summary/ev_surface.csv", |w| write_ev_csv(&hourly, w))?;
    run.emit("summary/mean_ev_by_hour.csv", |w| write_mean_ev_csv(&table, w))?;
    run.emit("summary/overall_mean_ev.csv", |w| write_overall_csv(&overall, w))?;
    run.emit("summary/ev_distribution.csv", |w| write_distribution_csv(&distributions, w))?;
    let bundle = SummaryBundle {
        mean_ev_by_hour: table,
        overall,
        distributions,
    };
    run.emit("summary/summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &bundle)?;
        w.push(b'\n');
        Ok(())
    })?;
    Ok(())
}

fn scheme_name(scheme: PartitionScheme) -> &'static str {
    match scheme {
        PartitionScheme::Whole => "whole",
        PartitionScheme::SummerWinter => "summer-winter",
        PartitionScheme::DayNight => "day-night",
    }
}

/// With `strict` off, a scheme with an empty partition is skipped with a
/// warning instead of failing the run.
pub fn compare_static(ctx: &Ctx, run: &mut Run, nsao: &[Panel], strict: bool) -> Result<()> {
    for &scheme in &ctx.cfg.schemes {
        let rows = match static_pca_partition(nsao, scheme, &ctx.cfg.partition) {
            Err(Error::Config(msg)) if !strict => {
                run.warn(format!("static comparison {} skipped: {msg}", scheme_name(scheme)));
                continue;
            }
            other => other?,
        };
        run.emit(&format!("static/{}.csv", scheme_name(scheme)), |w| write_static_csv(&rows, w))?;
    }
    Ok(())
}

pub fn compare_transforms(ctx: &Ctx, run: &mut Run, grid: Option<ObservationGrid>) -> Result<()> {
    let grid = match grid {
        Some(g) => g,
        None => read_grid(ctx, run, IMPUTED_FILE)?,
    };
    let cmp = transform_comparison(&grid, &ctx.cfg.dpca(), &ctx.cfg.sorted_hours())?;
    run.emit("compare/transform_comparison.csv", |w| write_comparison_csv(&cmp, w))
}

pub fn synth(ctx: &Ctx, run: &mut Run) -> Result<()> {
    let spec = &ctx.cfg.synth;
    let out = generate(spec)?;
    run.count("cells", out.grid.cell_count());
    run.count("present_cells", out.grid.present_count());
    run.emit("synth/observations.csv", |w| write_observations(&out.grid, w))?;
    let meta = SynthMetadata::new(spec, &out.truth);
    run.emit("synth/metadata.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        w.push(b'\n');
        Ok(())
    })
}

pub fn pipeline(ctx: &Ctx, run: &mut Run) -> Result<()> {
    let grid = ingest(ctx, run)?;
    let imputed = impute(ctx, run, Some(grid))?;
    let saos = sao(ctx, run, Some(imputed.clone()))?;
    let lsao = transform_panels(ctx, run, &saos, Stage::Lsao)?;
    let nsao = transform_panels(ctx, run, &saos, Stage::Nsao)?;
    let analysed = match ctx.cfg.transform {
        Stage::Sao => &saos,
        Stage::Lsao => &lsao,
        Stage::Nsao => &nsao,
    };
    diagnose(ctx, run, analysed)?;
    let hourly = dpca(ctx, run, analysed)?;
    summarize(ctx, run, Some(hourly))?;
    compare_static(ctx, run, &nsao, false)?;
    compare_transforms(ctx, run, Some(imputed))
}
