//! Saliency evaluation metrics on prediction/mask pairs: MAE, weighted
//! F-measure, S-measure, mean E-measure, false negative ratio and
//! precision/recall/F curves, plus per-dataset aggregation.
//!
//! Maps are row-major `height x width` slices of `f64`. Predictions lie in
//! `[0,1]`; masks hold only 0 and 1. Binarization at threshold index `t`
//! keeps pixels with `P > t / 255`.

pub mod edt;
pub mod enhanced;
pub mod structure;
pub mod wfm;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub use edt::{edt, edt_with_values, Edt};
pub use enhanced::{e_measure_curve, e_measure_mean, enhanced_alignment};
pub use structure::s_measure;
pub use wfm::weighted_fmeasure;

pub const THRESHOLDS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPair<'a> {
    pub p: &'a [f64],
    pub g: &'a [f64],
    pub width: usize,
    pub height: usize,
}

impl<'a> EvalPair<'a> {
    pub fn new(p: &'a [f64], g: &'a [f64], width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        if n == 0 || p.len() != n || g.len() != n {
            return Err(Error::Validation(format!(
                "prediction has {} values and mask {} for a {}x{} image",
                p.len(),
                g.len(),
                width,
                height
            )));
        }
        if let Some(v) = g.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("mask value {v} is not binary")));
        }
        if let Some(v) = p.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Validation(format!("prediction value {v} outside [0,1]")));
        }
        Ok(Self { p, g, width, height })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn foreground(&self) -> usize {
        self.g.iter().filter(|&&v| v > 0.5).count()
    }
}

/// The binarization threshold for index `t`.
pub fn threshold(t: usize) -> f64 {
    t as f64 / 255.0
}

/// Number of thresholds a value survives: `#{t : v > t / 255}`.
pub fn level(v: f64) -> usize {
    let thr: [f64; THRESHOLDS] = core::array::from_fn(threshold);
    thr.partition_point(|&th| v > th)
}

/// Per-threshold confusion counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdCounts {
    pub tp: [usize; THRESHOLDS],
    pub fp: [usize; THRESHOLDS],
    pub n_fg: usize,
    pub n_bg: usize,
}

pub fn threshold_counts(pair: &EvalPair<'_>) -> ThresholdCounts {
    let thr: [f64; THRESHOLDS] = core::array::from_fn(threshold);
    let mut hist_fg = [0usize; THRESHOLDS + 1];
    let mut hist_bg = [0usize; THRESHOLDS + 1];
    for (&p, &g) in pair.p.iter().zip(pair.g) {
        let l = thr.partition_point(|&th| p > th);
        if g > 0.5 {
            hist_fg[l] += 1;
        } else {
            hist_bg[l] += 1;
        }
    }
    // a pixel of level l is positive for every t < l
    let mut tp = [0usize; THRESHOLDS];
    let mut fp = [0usize; THRESHOLDS];
    let (mut acc_fg, mut acc_bg) = (0, 0);
    for t in (0..THRESHOLDS).rev() {
        acc_fg += hist_fg[t + 1];
        acc_bg += hist_bg[t + 1];
        tp[t] = acc_fg;
        fp[t] = acc_bg;
    }
    let n_fg = hist_fg.iter().sum();
    let n_bg = hist_bg.iter().sum();
    ThresholdCounts { tp, fp, n_fg, n_bg }
}

pub fn mae(pair: &EvalPair<'_>) -> f64 {
    pair.p.iter().zip(pair.g).map(|(&p, &g)| (p - g).abs()).sum::<f64>() / pair.len() as f64
}

/// False negative ratio: the fraction of mask pixels whose prediction does
/// not exceed `bin_threshold`. Undefined for an empty mask.
pub fn fnr(pair: &EvalPair<'_>, bin_threshold: f64) -> Result<f64> {
    let (mut missed, mut total) = (0usize, 0usize);
    for (&p, &g) in pair.p.iter().zip(pair.g) {
        if g > 0.5 {
            total += 1;
            if p <= bin_threshold {
                missed += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("false negative ratio of an empty mask".into()));
    }
    Ok(missed as f64 / total as f64)
}

/// Precision, recall and F-measure at each of the 256 thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
}

impl Curves {
    pub fn zeros() -> Self {
        Self { precision: vec![0.0; THRESHOLDS], recall: vec![0.0; THRESHOLDS], f: vec![0.0; THRESHOLDS] }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn f_beta(precision: f64, recall: f64, beta2: f64) -> f64 {
    ratio((1.0 + beta2) * precision * recall, beta2 * precision + recall)
}

/// Curves with zero denominators mapped to 0.
pub fn pr_and_f_curves(pair: &EvalPair<'_>, beta2: f64) -> Curves {
    let c = threshold_counts(pair);
    let mut out = Curves::zeros();
    for t in 0..THRESHOLDS {
        let p = ratio(c.tp[t] as f64, (c.tp[t] + c.fp[t]) as f64);
        let r = ratio(c.tp[t] as f64, c.n_fg as f64);
        out.precision[t] = p;
        out.recall[t] = r;
        out.f[t] = f_beta(p, r, beta2);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSettings {
    pub wfm_beta2: f64,
    pub curve_beta2: f64,
    pub s_alpha: f64,
    pub fnr_threshold: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self { wfm_beta2: 1.0, curve_beta2: 0.3, s_alpha: 0.5, fnr_threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub mae: f64,
    pub wfm: f64,
    /// The mask was empty, so `wfm` is the fallback 0.
    pub wfm_empty_gt: bool,
    pub sm: f64,
    pub em: f64,
    /// `None` when the mask is empty.
    pub fnr: Option<f64>,
    pub curves: Curves,
}

pub fn evaluate_pair(name: &str, pair: &EvalPair<'_>, settings: &MetricSettings) -> ImageMetrics {
    let (wfm, wfm_empty_gt) = weighted_fmeasure(pair, settings.wfm_beta2);
    ImageMetrics {
        name: String::from(name),
        mae: mae(pair),
        wfm,
        wfm_empty_gt,
        sm: s_measure(pair, settings.s_alpha),
        em: e_measure_mean(pair),
        fnr: fnr(pair, settings.fnr_threshold).ok(),
        curves: pr_and_f_curves(pair, settings.curve_beta2),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub images: usize,
    pub mae: f64,
    pub wfm: f64,
    pub sm: f64,
    pub em: f64,
    /// Mean over images with a defined FNR; `None` if there are none.
    pub fnr: Option<f64>,
    pub fnr_images: usize,
    pub wfm_empty_gt: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
    /// Per-threshold means of the per-image curves.
    pub curves: Curves,
}

/// Arithmetic means over `rows`, in the given order.
pub fn aggregate(rows: Vec<ImageMetrics>) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(Error::Validation("no images to aggregate".into()));
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&ImageMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let fnrs: Vec<f64> = rows.iter().filter_map(|r| r.fnr).collect();
    let aggregate = Aggregate {
        images: rows.len(),
        mae: mean(&|r| r.mae),
        wfm: mean(&|r| r.wfm),
        sm: mean(&|r| r.sm),
        em: mean(&|r| r.em),
        fnr: if fnrs.is_empty() { None } else { Some(fnrs.iter().sum::<f64>() / fnrs.len() as f64) },
        fnr_images: fnrs.len(),
        wfm_empty_gt: rows.iter().filter(|r| r.wfm_empty_gt).count(),
    };
    let mut curves = Curves::zeros();
    for t in 0..THRESHOLDS {
        curves.precision[t] = mean(&|r| r.curves.precision[t]);
        curves.recall[t] = mean(&|r| r.curves.recall[t]);
        curves.f[t] = mean(&|r| r.curves.f[t]);
    }
    Ok(MetricReport { per_image: rows, aggregate, curves })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair<'a>(p: &'a [f64], g: &'a [f64], w: usize) -> EvalPair<'a> {
        EvalPair::new(p, g, w, p.len() / w).unwrap()
    }

    #[test]
    fn pair_validation() {
        assert!(EvalPair::new(&[0.5; 4], &[0.0; 3], 2, 2).is_err());
        assert!(EvalPair::new(&[0.5; 4], &[0.0, 0.5, 1.0, 0.0], 2, 2).is_err());
        assert!(EvalPair::new(&[1.5, 0.0, 0.0, 0.0], &[0.0; 4], 2, 2).is_err());
        assert!(EvalPair::new(&[], &[], 0, 0).is_err());
    }

    #[test]
    fn mae_cases() {
        let g = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(mae(&pair(&g, &g, 2)), 0.0);
        assert_eq!(mae(&pair(&[1.0; 4], &[0.0; 4], 2)), 1.0);
        assert_eq!(mae(&pair(&[1.0, 0.0, 0.5, 0.5], &g, 2)), 0.25);
    }

    #[test]
    fn fnr_cases() {
        let g = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        assert_eq!(fnr(&pair(&g, &g, 3), 0.5).unwrap(), 0.0);
        assert_eq!(fnr(&pair(&[0.0; 6], &g, 3), 0.5).unwrap(), 1.0);
        assert_eq!(fnr(&pair(&[0.9, 0.8, 0.7, 0.2, 1.0, 1.0], &g, 3), 0.5).unwrap(), 0.25);
        assert_eq!(fnr(&pair(&[0.5, 0.6, 0.6, 0.6, 0.0, 0.0], &g, 3), 0.5).unwrap(), 0.25);
        assert!(matches!(fnr(&pair(&[0.3; 6], &[0.0; 6], 3), 0.5), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn levels_match_strict_thresholds() {
        assert_eq!(level(0.0), 0);
        assert_eq!(level(1.0), 255);
        assert_eq!(level(128.0 / 255.0), 128);
        assert_eq!(level(0.5), 128);
        for k in 0..=255u32 {
            assert_eq!(level(k as f64 / 255.0), k as usize);
        }
    }

    #[test]
    fn perfect_curves() {
        let g = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let c = pr_and_f_curves(&pair(&g, &g, 3), 0.3);
        for t in 0..255 {
            assert_eq!((c.precision[t], c.recall[t], c.f[t]), (1.0, 1.0, 1.0));
        }
        assert_eq!((c.precision[255], c.recall[255]), (0.0, 0.0));
    }

    #[test]
    fn curve_counts_at_128() {
        let p = [0.9, 0.2, 0.51, 0.5, 0.7, 0.1, 0.6, 0.3, 1.0];
        let g = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let c = pr_and_f_curves(&pair(&p, &g, 3), 0.3);
        // P > 128/255: 0.9, 0.51, 0.7, 0.6, 1.0 -> tp = 2 (0.9, 0.6), fp = 3
        assert_eq!(c.precision[128], 2.0 / 5.0);
        assert_eq!(c.recall[128], 2.0 / 5.0);
        let f = 1.3 * 0.4 * 0.4 / (0.3 * 0.4 + 0.4);
        assert!((c.f[128] - f).abs() < 1e-15);
        assert!(c.recall.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn e_measure_binary_cases() {
        let g = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let curve = e_measure_curve(&pair(&g, &g, 4));
        assert!(curve[..255].iter().all(|&e| e == 1.0));
        assert_eq!(curve[255], 0.25);
        let inv: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
        let curve = e_measure_curve(&pair(&inv, &g, 4));
        assert!(curve[..255].iter().all(|&e| e == 0.0));
        // empty mask: theta = 1 - F
        let p = [0.9, 0.1, 0.0, 0.0];
        let curve = e_measure_curve(&pair(&p, &[0.0; 4], 2));
        assert_eq!(curve[0], 0.5);
        assert_eq!(curve[100], 0.75);
        // full mask: theta = F
        let curve = e_measure_curve(&pair(&p, &[1.0; 4], 2));
        assert_eq!(curve[0], 0.5);
    }

    #[test]
    fn e_measure_hand_case() {
        // F has 2 of 4 foreground pixels right and one false positive
        let p = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let g = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (mf, mg) = (3.0 / 16.0, 4.0 / 16.0);
        let theta = |f: f64, g: f64| {
            let (af, ag) = (f - mf, g - mg);
            let xi = 2.0 * af * ag / (af * af + ag * ag);
            (1.0 + xi).powi(2) / 4.0
        };
        let direct: f64 = p.iter().zip(&g).map(|(&f, &g)| theta(f, g)).sum::<f64>() / 16.0;
        assert!((e_measure_curve(&pair(&p, &g, 4))[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn wfm_fixed_points() {
        let mut g = [0.0; 100];
        for r in 3..7 {
            for c in 3..7 {
                g[r * 10 + c] = 1.0;
            }
        }
        assert_eq!(weighted_fmeasure(&pair(&g, &g, 10), 1.0), (1.0, false));
        assert_eq!(weighted_fmeasure(&pair(&[0.0; 100], &g, 10), 1.0), (0.0, false));
        assert_eq!(weighted_fmeasure(&pair(&[0.3; 100], &[0.0; 100], 10), 1.0), (0.0, true));
    }

    #[test]
    fn s_measure_cases() {
        let g = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        assert!((s_measure(&pair(&g, &g, 3), 0.5) - 1.0).abs() < 1e-9);
        assert!((s_measure(&pair(&[0.3; 9], &[0.0; 9], 3), 0.5) - 0.7).abs() < 1e-15);
        assert!((s_measure(&pair(&[0.3; 9], &[1.0; 9], 3), 0.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn aggregate_means_rows() {
        let g = [1.0, 0.0, 0.0, 1.0];
        let s = MetricSettings::default();
        let rows = alloc::vec![
            evaluate_pair("a", &pair(&[0.9, 0.1, 0.2, 0.4], &g, 2), &s),
            evaluate_pair("b", &pair(&[0.0; 4], &[0.0; 4], 2), &s),
        ];
        let rep = aggregate(rows.clone()).unwrap();
        assert_eq!(rep.aggregate.images, 2);
        assert_eq!(rep.aggregate.mae, (rows[0].mae + rows[1].mae) / 2.0);
        assert_eq!(rep.aggregate.fnr, rows[0].fnr);
        assert_eq!(rep.aggregate.fnr_images, 1);
        assert_eq!(rep.aggregate.wfm_empty_gt, 1);
        assert!(aggregate(Vec::new()).is_err());
    }
}
