//! Batch evaluation of prediction maps against masks.
//!
//! Pairs are matched by file stem. Each pair is scored independently on a
//! worker pool and rows are aggregated in stem order, so the worker count
//! never changes a reported value.

use std::path::{Path, PathBuf};

use icon_core::metrics::{aggregate, evaluate_pair, EvalPair, ImageMetrics, MetricReport, MetricSettings, THRESHOLDS};
use icon_core::ops::resample::resample_tensor;
use icon_core::ops::ResampleMode;
use icon_core::Tensor;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{write, CliError, Result};
use crate::imageio::{list_images, read_gray, Image8};

pub const WORKERS_ENV: &str = "ICON_WORKERS";

/// Explicit count, else `ICON_WORKERS`, else the available cores.
pub fn worker_count(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n.max(1));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Validation(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricReport,
    /// Stems present on only one side, as `pred/<stem>` or `gt/<stem>`.
    pub unmatched: Vec<String>,
    pub settings: MetricSettings,
}

fn to_unit(img: &Image8) -> Vec<f64> {
    img.data.iter().map(|&v| v as f64 / 255.0).collect()
}

/// Scores one prediction file against one mask file. A prediction of a
/// different size is bilinearly resized to the mask.
pub fn evaluate_files(name: &str, pred: &Path, gt: &Path, settings: &MetricSettings) -> Result<ImageMetrics> {
    let p = read_gray(pred)?;
    let g = read_gray(gt)?;
    let mut pv = to_unit(&p);
    if (p.width, p.height) != (g.width, g.height) {
        let t = Tensor::new(&[1, 1, p.height, p.width], pv).expect("pixel count matches");
        pv = resample_tensor(&t, (g.height, g.width), ResampleMode::Bilinear)?.into_data();
        pv.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let gv: Vec<f64> = g.data.iter().map(|&v| if v as f64 / 255.0 > 0.5 { 1.0 } else { 0.0 }).collect();
    let pair = EvalPair::new(&pv, &gv, g.width, g.height).map_err(|e| CliError::format(gt, e.to_string()))?;
    Ok(evaluate_pair(name, &pair, settings))
}

pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, settings: &MetricSettings, workers: usize) -> Result<EvalOutcome> {
    let preds = list_images(pred_dir)?;
    let gts = list_images(gt_dir)?;
    let mut unmatched: Vec<String> =
        preds.keys().filter(|k| !gts.contains_key(*k)).map(|k| format!("pred/{k}")).collect();
    unmatched.extend(gts.keys().filter(|k| !preds.contains_key(*k)).map(|k| format!("gt/{k}")));
    let jobs: Vec<(&String, &PathBuf, &PathBuf)> =
        preds.iter().filter_map(|(k, p)| gts.get(k).map(|g| (k, p, g))).collect();
    if jobs.is_empty() {
        return Err(CliError::Validation(format!(
            "no matching stems between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Validation(format!("worker pool: {e}")))?;
    let rows: Result<Vec<ImageMetrics>> =
        pool.install(|| jobs.par_iter().map(|(k, p, g)| evaluate_files(k, p, g, settings)).collect());
    Ok(EvalOutcome { report: aggregate(rows?)?, unmatched, settings: *settings })
}

#[derive(Serialize)]
struct JsonSettings {
    wfm_beta2: f64,
    curve_beta2: f64,
    s_alpha: f64,
    fnr_threshold: f64,
}

#[derive(Serialize)]
struct JsonAggregate {
    images: usize,
    mae: f64,
    wfm: f64,
    sm: f64,
    em: f64,
    fnr: Option<f64>,
    fnr_percent: Option<String>,
    fnr_images: usize,
    wfm_empty_gt: usize,
    max_f: f64,
    mean_f: f64,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    name: &'a str,
    mae: f64,
    wfm: f64,
    wfm_empty_gt: bool,
    sm: f64,
    em: f64,
    fnr: Option<f64>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    settings: JsonSettings,
    aggregate: JsonAggregate,
    per_image: Vec<JsonRow<'a>>,
    unmatched: &'a [String],
}

pub fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

impl EvalOutcome {
    pub fn max_f(&self) -> f64 {
        self.report.curves.f.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_f(&self) -> f64 {
        self.report.curves.f.iter().sum::<f64>() / THRESHOLDS as f64
    }

    pub fn to_json(&self) -> String {
        let a = &self.report.aggregate;
        let s = &self.settings;
        let report = JsonReport {
            settings: JsonSettings {
                wfm_beta2: s.wfm_beta2,
                curve_beta2: s.curve_beta2,
                s_alpha: s.s_alpha,
                fnr_threshold: s.fnr_threshold,
            },
            aggregate: JsonAggregate {
                images: a.images,
                mae: a.mae,
                wfm: a.wfm,
                sm: a.sm,
                em: a.em,
                fnr: a.fnr,
                fnr_percent: a.fnr.map(percent),
                fnr_images: a.fnr_images,
                wfm_empty_gt: a.wfm_empty_gt,
                max_f: self.max_f(),
                mean_f: self.mean_f(),
            },
            per_image: self
                .report
                .per_image
                .iter()
                .map(|r| JsonRow {
                    name: &r.name,
                    mae: r.mae,
                    wfm: r.wfm,
                    wfm_empty_gt: r.wfm_empty_gt,
                    sm: r.sm,
                    em: r.em,
                    fnr: r.fnr,
                })
                .collect(),
            unmatched: &self.unmatched,
        };
        let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per image: `name,mae,wfm,sm,em,fnr,fnr_percent`; an empty
    /// mask leaves both FNR columns blank.
    pub fn per_image_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "mae", "wfm", "sm", "em", "fnr", "fnr_percent"]).unwrap();
        for r in &self.report.per_image {
            w.write_record([
                r.name.clone(),
                r.mae.to_string(),
                r.wfm.to_string(),
                r.sm.to_string(),
                r.em.to_string(),
                r.fnr.map_or_else(String::new, |v| v.to_string()),
                r.fnr.map_or_else(String::new, percent),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Mean curves: `threshold,precision,recall,f` for thresholds 0..=255.
    pub fn curves_csv(&self) -> String {
        let c = &self.report.curves;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "precision", "recall", "f"]).unwrap();
        for t in 0..THRESHOLDS {
            w.write_record([t.to_string(), c.precision[t].to_string(), c.recall[t].to_string(), c.f[t].to_string()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Writes `report.json`, `per_image.csv` and, if asked, `curves.csv`
    /// into `out_dir`.
    pub fn write(&self, out_dir: &Path, curves: bool) -> Result<()> {
        write(&out_dir.join("report.json"), self.to_json().as_bytes())?;
        write(&out_dir.join("per_image.csv"), self.per_image_csv().as_bytes())?;
        if curves {
            write(&out_dir.join("curves.csv"), self.curves_csv().as_bytes())?;
        }
        Ok(())
    }
}
