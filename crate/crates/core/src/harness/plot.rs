use super::{read_csv, write_csv, EpisodeLog, HarnessError, LEARNING_CURVE_FILE, STEPS_FILE};
use crate::metrics::{median, quantile, MetricsRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const LEARNING_BAND_FILE: &str = "plot_learning_curve.csv";
pub const INTRADAY_FILE: &str = "plot_intraday_volume.csv";

/// Learning curve across runs: median with a 25th-75th percentile band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub episode: usize,
    pub runs: usize,
    pub reward_median: f64,
    pub reward_p25: f64,
    pub reward_p75: f64,
    pub sw_median: f64,
    pub sw_p25: f64,
    pub sw_p75: f64,
}

/// Traded volume by step of day, pooled over runs and days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntradayRow {
    pub step_of_day: u32,
    pub samples: usize,
    pub volume_median: f64,
    pub volume_p25: f64,
    pub volume_p75: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotFiles {
    pub learning_curve: Option<PathBuf>,
    pub intraday_volume: Option<PathBuf>,
}

fn find(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|source| HarnessError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_dir() {
            find(&path, name, out)?;
        } else if path.file_name().is_some_and(|f| f == name) {
            out.push(path);
        }
    }
    Ok(())
}

fn band(xs: &[f64]) -> (f64, f64, f64) {
    (median(xs), quantile(xs, 0.25), quantile(xs, 0.75))
}

/// Scans `dir` recursively for learning curves and per-step metrics and
/// writes the aggregated tables into `dir`.
pub fn emit_plot_data(dir: &Path, steps_per_day: u32) -> Result<PlotFiles, HarnessError> {
    let mut curves = Vec::new();
    let mut steps = Vec::new();
    find(dir, LEARNING_CURVE_FILE, &mut curves)?;
    find(dir, STEPS_FILE, &mut steps)?;
    curves.sort();
    steps.sort();
    if curves.is_empty() && steps.is_empty() {
        return Err(HarnessError::MissingInputs {
            what: "learning curves or step metrics",
            dir: dir.to_path_buf(),
        });
    }

    let mut files = PlotFiles {
        learning_curve: None,
        intraday_volume: None,
    };
    if !curves.is_empty() {
        let mut by_episode: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for path in &curves {
            for log in read_csv::<EpisodeLog>(path)? {
                let e = by_episode.entry(log.episode).or_default();
                e.0.push(log.mean_reward);
                e.1.push(log.sw);
            }
        }
        let rows: Vec<BandRow> = by_episode
            .into_iter()
            .map(|(episode, (r, sw))| {
                let (reward_median, reward_p25, reward_p75) = band(&r);
                let (sw_median, sw_p25, sw_p75) = band(&sw);
                BandRow {
                    episode,
                    runs: r.len(),
                    reward_median,
                    reward_p25,
                    reward_p75,
                    sw_median,
                    sw_p25,
                    sw_p75,
                }
            })
            .collect();
        let path = dir.join(LEARNING_BAND_FILE);
        write_csv(&path, &rows)?;
        files.learning_curve = Some(path);
    }
    if !steps.is_empty() {
        let day = steps_per_day.max(1);
        let mut by_step: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for path in &steps {
            for rec in read_csv::<MetricsRecord>(path)? {
                by_step.entry(rec.step % day).or_default().push(rec.volume_kwh);
            }
        }
        let rows: Vec<IntradayRow> = by_step
            .into_iter()
            .map(|(step_of_day, v)| {
                let (volume_median, volume_p25, volume_p75) = band(&v);
                IntradayRow {
                    step_of_day,
                    samples: v.len(),
                    volume_median,
                    volume_p25,
                    volume_p75,
                }
            })
            .collect();
        let path = dir.join(INTRADAY_FILE);
        write_csv(&path, &rows)?;
        files.intraday_volume = Some(path);
    }
    Ok(files)
}
