//! CSV, manifest and plot-script writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so values
//! read back from the CSVs are bit-identical to the in-memory ones.

use std::fs;
use std::path::{Path, PathBuf};

use nlos_track_core::filters::FilterKind;
use nlos_track_core::metrics::{distance_cdf, error_cdf, EmpiricalCdf};
use nlos_track_core::model::LinkLabel;
use nlos_track_core::scenario::TrialRecord;

use crate::config::ScenarioFile;
use crate::experiment::FilterSummary;
use crate::AppError;

pub const TRIALS_CSV: &str = "trials.csv";
pub const MEASUREMENTS_CSV: &str = "measurements.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CDF_DISTANCE_CSV: &str = "cdf_distance.csv";
pub const CDF_SQUARED_CSV: &str = "cdf_squared.csv";
pub const MANIFEST: &str = "manifest.toml";
pub const PLOT_RMSE: &str = "plot_rmse.gp";
pub const PLOT_CDF: &str = "plot_cdf.gp";

/// Number of thresholds in the CDF tables.
pub const CDF_POINTS: usize = 401;

fn num(v: f64) -> String {
    format!("{v}")
}

fn label(l: LinkLabel) -> &'static str {
    match l {
        LinkLabel::Los => "los",
        LinkLabel::Nlos => "nlos",
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, AppError> {
    let file = fs::File::create(path).map_err(AppError::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Truth and every filter's estimate per trial and epoch, with flags.
pub fn write_trials(
    path: &Path,
    records: &[TrialRecord],
    filters: &[FilterKind],
) -> Result<(), AppError> {
    let err = csv_err(path);
    let mut w = writer(path)?;
    let mut header: Vec<String> = [
        "trial", "epoch", "truth_x", "truth_y", "truth_vx", "truth_vy",
    ]
    .map(String::from)
    .to_vec();
    for f in filters {
        for col in ["x", "y", "vx", "vy", "diverged", "projected", "skip"] {
            header.push(format!("{f}_{col}"));
        }
    }
    w.write_record(&header).map_err(&err)?;
    for r in records {
        let traces: Vec<_> = filters
            .iter()
            .map(|f| {
                r.trace(*f).ok_or_else(|| {
                    AppError::Runtime(format!("filter {f} missing in trial {}", r.trial))
                })
            })
            .collect::<Result<_, _>>()?;
        for (k, s) in r.truth.iter().enumerate() {
            let mut row = vec![r.trial.to_string(), (k + 1).to_string()];
            row.extend(s.iter().map(|v| num(*v)));
            for t in &traces {
                row.extend(t.estimates[k].iter().map(|v| num(*v)));
                let flagged = t.diverged_at.is_some_and(|e| e <= k + 1);
                row.push(u8::from(flagged).to_string());
                row.push(t.projected[k].to_string());
                row.push(u8::from(t.infeasible_skips[k]).to_string());
            }
            w.write_record(&row).map_err(&err)?;
        }
    }
    w.flush().map_err(AppError::io(path))
}

/// Every range the filters consumed, with true and reported labels.
pub fn write_measurements(path: &Path, records: &[TrialRecord]) -> Result<(), AppError> {
    let err = csv_err(path);
    let mut w = writer(path)?;
    w.write_record([
        "trial",
        "epoch",
        "anchor",
        "range",
        "true_label",
        "reported_label",
    ])
    .map_err(&err)?;
    for r in records {
        for f in &r.frames {
            for l in &f.links {
                w.write_record([
                    r.trial.to_string(),
                    f.epoch.to_string(),
                    l.anchor.id.to_string(),
                    num(l.range),
                    label(l.true_label).into(),
                    label(l.reported_label).into(),
                ])
                .map_err(&err)?;
            }
        }
    }
    w.flush().map_err(AppError::io(path))
}

/// RMSE per epoch, one column per filter (`NaN` if every trial diverged).
pub fn write_metrics(
    path: &Path,
    steps: usize,
    summaries: &[FilterSummary],
) -> Result<(), AppError> {
    let err = csv_err(path);
    let mut w = writer(path)?;
    let mut header = vec!["epoch".to_string()];
    header.extend(summaries.iter().map(|s| format!("{}_rmse", s.kind)));
    w.write_record(&header).map_err(&err)?;
    for k in 0..steps {
        let mut row = vec![(k + 1).to_string()];
        row.extend(
            summaries
                .iter()
                .map(|s| num(s.metrics.as_ref().map_or(f64::NAN, |m| m.rmse_by_epoch[k]))),
        );
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(AppError::io(path))
}

pub fn write_summary(path: &Path, summaries: &[FilterSummary]) -> Result<(), AppError> {
    let err = csv_err(path);
    let mut w = writer(path)?;
    w.write_record([
        "filter",
        "steady_state_rmse",
        "used_trials",
        "diverged_trials",
        "projected_points",
        "infeasible_skips",
        "dense_fallbacks",
        "max_mean_violation",
    ])
    .map_err(&err)?;
    for s in summaries {
        let m = s.metrics.as_ref();
        w.write_record([
            s.kind.name().to_string(),
            num(m.map_or(f64::NAN, |m| m.steady_state_rmse)),
            m.map_or(0, |m| m.used_trials).to_string(),
            s.diverged_trials.to_string(),
            s.projected_points.to_string(),
            s.infeasible_skips.to_string(),
            s.dense_fallbacks.to_string(),
            s.max_mean_violation.map_or(String::new(), num),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(AppError::io(path))
}

fn write_cdf_table(
    path: &Path,
    column: &str,
    thresholds: &[f64],
    cdfs: &[(FilterKind, Option<EmpiricalCdf>)],
) -> Result<(), AppError> {
    let err = csv_err(path);
    let mut w = writer(path)?;
    let mut header = vec![column.to_string()];
    header.extend(cdfs.iter().map(|(k, _)| k.name().to_string()));
    w.write_record(&header).map_err(&err)?;
    for x in thresholds {
        let mut row = vec![num(*x)];
        row.extend(
            cdfs.iter()
                .map(|(_, c)| num(c.as_ref().map_or(f64::NAN, |c| c.at(*x)))),
        );
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(AppError::io(path))
}

/// Distance-domain and squared-error CDFs on a shared linear grid that
/// reaches the largest 99th percentile among the filters.
pub fn write_cdfs(
    dir: &Path,
    records: &[TrialRecord],
    filters: &[FilterKind],
) -> Result<(), AppError> {
    let dist: Vec<_> = filters
        .iter()
        .map(|&k| (k, distance_cdf(records, k).ok()))
        .collect();
    let sq: Vec<_> = filters
        .iter()
        .map(|&k| (k, error_cdf(records, k).ok()))
        .collect();
    let top = dist
        .iter()
        .filter_map(|(_, c)| c.as_ref().map(|c| c.quantile(0.99)))
        .fold(0.0, f64::max);
    let grid: Vec<f64> = (0..CDF_POINTS)
        .map(|i| top * i as f64 / (CDF_POINTS - 1) as f64)
        .collect();
    let grid_sq: Vec<f64> = grid.iter().map(|d| d * d).collect();
    write_cdf_table(&dir.join(CDF_DISTANCE_CSV), "error_m", &grid, &dist)?;
    write_cdf_table(
        &dir.join(CDF_SQUARED_CSV),
        "squared_error_m2",
        &grid_sq,
        &sq,
    )
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    run: RunInfo,
    scenario: &'a ScenarioFile,
}

#[derive(serde::Serialize)]
struct RunInfo {
    version: &'static str,
    seed: u64,
    filters: Vec<&'static str>,
}

/// Code version, seed, filters and the full scenario echo.
pub fn write_manifest(
    path: &Path,
    config: &ScenarioFile,
    filters: &[FilterKind],
) -> Result<(), AppError> {
    let m = Manifest {
        run: RunInfo {
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            filters: filters.iter().map(|f| f.name()).collect(),
        },
        scenario: config,
    };
    let text = toml::to_string(&m).map_err(|e| AppError::Runtime(format!("manifest: {e}")))?;
    fs::write(path, text).map_err(AppError::io(path))
}

/// gnuplot scripts; run from the output directory.
pub fn write_plot_scripts(dir: &Path, filters: &[FilterKind]) -> Result<(), AppError> {
    let plots = |file: &str, first: usize| {
        filters
            .iter()
            .enumerate()
            .map(|(i, f)| format!("'{file}' using 1:{} with lines title '{f}'", i + first))
            .collect::<Vec<_>>()
            .join(", \\\n     ")
    };
    let rmse = format!(
        "set datafile separator ','\nset key autotitle columnhead\n\
         set terminal pngcairo size 900,600\nset output 'rmse.png'\n\
         set xlabel 'epoch'\nset ylabel 'RMSE (m)'\nset logscale y\n\
         plot {}\n",
        plots(METRICS_CSV, 2)
    );
    let cdf = format!(
        "set datafile separator ','\nset key bottom right\n\
         set terminal pngcairo size 900,600\nset output 'cdf.png'\n\
         set xlabel 'position error (m)'\nset ylabel 'CDF'\nset yrange [0:1]\n\
         plot {}\n",
        plots(CDF_DISTANCE_CSV, 2)
    );
    let p = dir.join(PLOT_RMSE);
    fs::write(&p, rmse).map_err(AppError::io(&p))?;
    let p = dir.join(PLOT_CDF);
    fs::write(&p, cdf).map_err(AppError::io(&p))
}

/// Writes every output of a run into `dir` and returns the paths.
pub fn write_run(
    dir: &Path,
    config: &ScenarioFile,
    filters: &[FilterKind],
    records: &[TrialRecord],
    summaries: &[FilterSummary],
) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    write_trials(&dir.join(TRIALS_CSV), records, filters)?;
    write_measurements(&dir.join(MEASUREMENTS_CSV), records)?;
    write_metrics(&dir.join(METRICS_CSV), config.steps, summaries)?;
    write_summary(&dir.join(SUMMARY_CSV), summaries)?;
    write_cdfs(dir, records, filters)?;
    write_manifest(&dir.join(MANIFEST), config, filters)?;
    write_plot_scripts(dir, filters)?;
    Ok([
        TRIALS_CSV,
        MEASUREMENTS_CSV,
        METRICS_CSV,
        SUMMARY_CSV,
        CDF_DISTANCE_CSV,
        CDF_SQUARED_CSV,
        MANIFEST,
        PLOT_RMSE,
        PLOT_CDF,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect())
}
