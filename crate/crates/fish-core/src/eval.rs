//! Evaluation protocol: pick precision/recall against truth, time-resolved
//! error curves aligned at the P or S arrival, and the log-log dependence of
//! location error on the P-S gap.

use alloc::vec::Vec;

// Resolves f64 math in no_std builds; std builds use inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::decoder::{aggregate_picks, decode_pick, Phase, StepOutput};
use crate::model::Model;
use crate::session::{replay_record, SessionOptions};
use crate::tensor::{invalid, TensorError};
use crate::training::WaveformRecord;

// ---------------------------------------------------------------------------
// Pick matching
// ---------------------------------------------------------------------------

/// Pooled one-to-one matching counts.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PickCounts {
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
}

impl PickCounts {
    pub fn merge(&mut self, other: &PickCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.missed += other.missed;
    }

    pub fn score(&self) -> PickScore {
        let pr = ratio(self.tp, self.tp + self.fp);
        let re = ratio(self.tp, self.tp + self.missed);
        let f1 = if pr + re > 0.0 {
            2.0 * pr * re / (pr + re)
        } else {
            0.0
        };
        PickScore {
            precision: pr,
            recall: re,
            f1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        // Undefined ratios report 0 (a lone false positive must not score).
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PickScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy nearest-first one-to-one matching within `tol` samples.
pub fn match_picks(pred: &[u64], truth: &[u64], tol: u64) -> PickCounts {
    let mut pairs = Vec::new();
    for (pi, &p) in pred.iter().enumerate() {
        for (ti, &t) in truth.iter().enumerate() {
            let d = p.abs_diff(t);
            if d <= tol {
                pairs.push((d, pi, ti));
            }
        }
    }
    pairs.sort();
    let mut used_p = alloc::vec![false; pred.len()];
    let mut used_t = alloc::vec![false; truth.len()];
    let mut tp = 0;
    for (_, pi, ti) in pairs {
        if !used_p[pi] && !used_t[ti] {
            used_p[pi] = true;
            used_t[ti] = true;
            tp += 1;
        }
    }
    PickCounts {
        tp,
        fp: pred.len() - tp,
        missed: truth.len() - tp,
    }
}

/// Precision/recall/F1 of one prediction set against one truth set.
pub fn pick_metrics(pred: &[u64], truth: &[u64], tol: u64) -> PickScore {
    match_picks(pred, truth, tol).score()
}

// ---------------------------------------------------------------------------
// Error curves
// ---------------------------------------------------------------------------

/// Which arrival the curve offsets are measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Align {
    P,
    S,
}

/// Mean errors per whole-second offset from the aligned arrival.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorCurves {
    pub offsets_s: Vec<i64>,
    pub mag_mae: Vec<f64>,
    pub loc_err: Vec<f64>,
    pub n: Vec<usize>,
}

/// Step index whose frame contains `sample`.
fn step_of(sample: usize, f: usize) -> usize {
    sample / f
}

/// Build curves over [-pre_s, post_s] seconds around the aligned arrival.
pub fn error_curves(
    records: &[WaveformRecord],
    outputs: &[Vec<StepOutput>],
    align: Align,
    pre_s: i64,
    post_s: i64,
    downsample: usize,
) -> ErrorCurves {
    let offsets: Vec<i64> = (-pre_s..=post_s).collect();
    let mut mag_sum = alloc::vec![0.0f64; offsets.len()];
    let mut loc_sum = alloc::vec![0.0f64; offsets.len()];
    let mut n = alloc::vec![0usize; offsets.len()];
    for (rec, outs) in records.iter().zip(outputs) {
        let arrival = match align {
            Align::P => rec.p_index,
            Align::S => rec.s_index,
        };
        let (Some(arrival), Some(mag), Some(x), Some(y)) =
            (arrival, rec.magnitude, rec.x_km, rec.y_km)
        else {
            continue;
        };
        let rate = rec.sample_rate_hz;
        for (oi, &off) in offsets.iter().enumerate() {
            let sample = arrival as i64 + (off as f64 * rate) as i64;
            if sample < 0 || sample as usize >= rec.len() {
                continue;
            }
            let t = step_of(sample as usize, downsample);
            let Some(out) = outs.get(t) else { continue };
            mag_sum[oi] += (out.magnitude as f64 - mag).abs();
            let dx = out.x_km as f64 - x;
            let dy = out.y_km as f64 - y;
            loc_sum[oi] += (dx * dx + dy * dy).sqrt();
            n[oi] += 1;
        }
    }
    let mag_mae = mag_sum
        .iter()
        .zip(&n)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let loc_err = loc_sum
        .iter()
        .zip(&n)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    ErrorCurves {
        offsets_s: offsets,
        mag_mae,
        loc_err,
        n,
    }
}

// ---------------------------------------------------------------------------
// Power-law fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerLaw {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares on (log gap, log error). Zero errors clamp to 1e-3 km.
pub fn powerlaw_fit(errors: &[f64], gaps_s: &[f64]) -> Result<PowerLaw, TensorError> {
    if errors.len() != gaps_s.len() || errors.len() < 3 {
        return Err(invalid("powerlaw_fit", "need at least 3 (error, gap) points"));
    }
    let xs: Vec<f64> = gaps_s.iter().map(|&g| g.max(1e-6).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|&e| e.max(1e-3).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(invalid("powerlaw_fit", "gap values are all identical"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(PowerLaw {
        slope,
        intercept,
        r2,
    })
}

// ---------------------------------------------------------------------------
// Per-record summaries and whole-set evaluation
// ---------------------------------------------------------------------------

/// Decode per-step picks from replay outputs and aggregate them into events.
pub fn events_from_outputs(
    model: &Model,
    outputs: &[StepOutput],
) -> Vec<crate::decoder::PickEvent> {
    let t_bank = model.cfg.bank_len();
    let f = model.cfg.downsample();
    let thr = model.cfg.decoder.absent_threshold;
    let merge = (model.cfg.decoder.merge_window_s * model.cfg.sample_rate_hz) as u64;
    let mut reports = Vec::new();
    for out in outputs {
        let cur = out.sample_index + 1;
        if let Some(idx) = decode_pick(out.p_rel as f64, cur, t_bank, f, thr) {
            reports.push((Phase::P, idx));
        }
        if let Some(idx) = decode_pick(out.s_rel as f64, cur, t_bank, f, thr) {
            reports.push((Phase::S, idx));
        }
    }
    aggregate_picks(&reports, merge)
}

/// One record's evaluation numbers.
pub struct RecordSummary {
    pub counts_p: PickCounts,
    pub counts_s: PickCounts,
    /// |estimate - truth| at P + report_after_s.
    pub mag_err_at_report: Option<f64>,
    /// Euclidean location error at P + report_after_s (km).
    pub loc_err_at_report: Option<f64>,
    /// Location error divided by true distance.
    pub loc_ratio_at_report: Option<f64>,
    /// True P-S gap, seconds.
    pub gap_s: Option<f64>,
}

pub fn summarize_record(
    model: &Model,
    rec: &WaveformRecord,
    outputs: &[StepOutput],
    tol_s: f64,
    report_after_s: f64,
) -> RecordSummary {
    let f = model.cfg.downsample();
    let rate = rec.sample_rate_hz;
    let tol = (tol_s * rate).round() as u64;
    let events = events_from_outputs(model, outputs);
    let pred_p: Vec<u64> = events
        .iter()
        .filter(|e| e.phase == Phase::P)
        .map(|e| e.sample_index)
        .collect();
    let pred_s: Vec<u64> = events
        .iter()
        .filter(|e| e.phase == Phase::S)
        .map(|e| e.sample_index)
        .collect();
    let truth_p: Vec<u64> = rec.p_index.map(|v| v as u64).into_iter().collect();
    let truth_s: Vec<u64> = rec.s_index.map(|v| v as u64).into_iter().collect();
    let counts_p = match_picks(&pred_p, &truth_p, tol);
    let counts_s = match_picks(&pred_s, &truth_s, tol);

    let mut mag_err = None;
    let mut loc_err = None;
    let mut loc_ratio = None;
    if let (Some(p), Some(mag), Some(x), Some(y)) = (rec.p_index, rec.magnitude, rec.x_km, rec.y_km)
    {
        let sample = p + (report_after_s * rate) as usize;
        if sample < rec.len() {
            if let Some(out) = outputs.get(step_of(sample, f)) {
                mag_err = Some((out.magnitude as f64 - mag).abs());
                let dx = out.x_km as f64 - x;
                let dy = out.y_km as f64 - y;
                let e = (dx * dx + dy * dy).sqrt();
                loc_err = Some(e);
                let r = (x * x + y * y).sqrt();
                if r > 0.0 {
                    loc_ratio = Some(e / r);
                }
            }
        }
    }
    let gap_s = match (rec.p_index, rec.s_index) {
        (Some(p), Some(s)) => Some((s - p) as f64 / rate),
        _ => None,
    };
    RecordSummary {
        counts_p,
        counts_s,
        mag_err_at_report: mag_err,
        loc_err_at_report: loc_err,
        loc_ratio_at_report: loc_ratio,
        gap_s,
    }
}

/// Evaluation settings.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub tol_s: f64,
    pub report_after_s: f64,
    pub session: SessionOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tol_s: 0.5,
            report_after_s: 20.0,
            session: SessionOptions::default(),
        }
    }
}

/// Full evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_records: usize,
    pub tol_s: f64,
    pub report_after_s: f64,
    pub pick_p: PickScore,
    pub pick_s: PickScore,
    pub mag_mae_at_report: f64,
    pub median_loc_err_km: f64,
    pub median_loc_ratio: f64,
    /// Aligned at P, -2 s .. +70 s.
    pub curves_p: ErrorCurves,
    /// Aligned at S, -2 s .. +9 s.
    pub curves_s: ErrorCurves,
    pub powerlaw: Option<PowerLaw>,
}

/// Replay every record through a fresh session and aggregate the paper-style
/// metrics.
pub fn evaluate(
    model: &Model,
    records: &[WaveformRecord],
    opts: &EvalOptions,
) -> Result<EvalReport, TensorError> {
    let mut outputs = Vec::with_capacity(records.len());
    for rec in records {
        outputs.push(replay_record(model, &rec.samples, &opts.session)?);
    }
    let mut counts_p = PickCounts::default();
    let mut counts_s = PickCounts::default();
    let mut mag_errs = Vec::new();
    let mut loc_errs = Vec::new();
    let mut loc_ratios = Vec::new();
    let mut pl_err = Vec::new();
    let mut pl_gap = Vec::new();
    for (rec, outs) in records.iter().zip(&outputs) {
        let s = summarize_record(model, rec, outs, opts.tol_s, opts.report_after_s);
        counts_p.merge(&s.counts_p);
        counts_s.merge(&s.counts_s);
        if let Some(e) = s.mag_err_at_report {
            mag_errs.push(e);
        }
        if let Some(e) = s.loc_err_at_report {
            loc_errs.push(e);
            if let Some(g) = s.gap_s {
                pl_err.push(e);
                pl_gap.push(g);
            }
        }
        if let Some(r) = s.loc_ratio_at_report {
            loc_ratios.push(r);
        }
    }
    let f = model.cfg.downsample();
    let curves_p = error_curves(records, &outputs, Align::P, 2, 70, f);
    let curves_s = error_curves(records, &outputs, Align::S, 2, 9, f);
    let powerlaw = powerlaw_fit(&pl_err, &pl_gap).ok();
    Ok(EvalReport {
        n_records: records.len(),
        tol_s: opts.tol_s,
        report_after_s: opts.report_after_s,
        pick_p: counts_p.score(),
        pick_s: counts_s.score(),
        mag_mae_at_report: mean(&mag_errs),
        median_loc_err_km: median_f64(&mut loc_errs),
        median_loc_ratio: median_f64(&mut loc_ratios),
        curves_p,
        curves_s,
        powerlaw,
    })
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median_f64(v: &mut Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_scores_one() {
        let s = pick_metrics(&[100], &[100], 50);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn lone_false_positive_scores_zero() {
        // One prediction, no truths: precision 0; recall undefined -> 0.
        let s = pick_metrics(&[100], &[], 50);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_matched_half_scores() {
        // truths {100, 5000}, preds {120, 9000}, tol 50 samples.
        let s = pick_metrics(&[120, 9000], &[100, 5000], 50);
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn matching_is_one_to_one_and_order_free() {
        // Two predictions near one truth: only one may match.
        let c = match_picks(&[100, 104], &[102], 50);
        assert_eq!((c.tp, c.fp, c.missed), (1, 1, 0));
        let c2 = match_picks(&[104, 100], &[102], 50);
        assert_eq!((c2.tp, c2.fp, c2.missed), (1, 1, 0));
    }

    #[test]
    fn powerlaw_recovers_exact_square_law() {
        let gaps: Vec<f64> = (1..=20).map(|g| g as f64 * 0.5).collect();
        let errs: Vec<f64> = gaps.iter().map(|&g| 3.0 * g * g).collect();
        let fit = powerlaw_fit(&errs, &gaps).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-6, "slope {}", fit.slope);
        assert!((fit.r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn powerlaw_constant_errors_fit_zero_slope() {
        let gaps: Vec<f64> = (1..=10).map(|g| g as f64).collect();
        let errs = alloc::vec![2.5f64; 10];
        let fit = powerlaw_fit(&errs, &gaps).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn powerlaw_needs_three_points() {
        assert!(powerlaw_fit(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn curves_constant_offset_gives_constant_error() {
        // Estimate (0,0) against truth (3,4) at every step: 5 km everywhere.
        let rec = WaveformRecord {
            samples: crate::tensor::Tensor::zeros(&[3, 1000]),
            sample_rate_hz: 100.0,
            p_index: Some(300),
            s_index: Some(500),
            magnitude: Some(4.0),
            x_km: Some(3.0),
            y_km: Some(4.0),
            is_noise: false,
        };
        let outs: Vec<StepOutput> = (0..250)
            .map(|t| StepOutput {
                sample_index: (t * 4 + 3) as u64,
                p_rel: 1.0,
                s_rel: 1.0,
                magnitude: 4.0,
                x_km: 0.0,
                y_km: 0.0,
            })
            .collect();
        let c = error_curves(&[rec], &[outs], Align::P, 2, 3, 4);
        for (i, &le) in c.loc_err.iter().enumerate() {
            assert!((le - 5.0).abs() < 1e-6, "offset {i}");
            assert!(c.mag_mae[i].abs() < 1e-9);
        }
    }
}
