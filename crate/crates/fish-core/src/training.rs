//! Sea-mode trainer: crop augmentation, focus masks, the composite loss
//! (pick regression + masked location/magnitude + hidden-increment control),
//! Adam, and the epoch loop. All randomness derives from the config seed, so
//! two runs with the same seed produce identical checkpoints.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

// Resolves f64 math in no_std builds; std builds use inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::encode_pick;
use crate::eval;
use crate::model::{parallel_forward, FishConfig, FishParams, Model, ParallelOutputs};
use crate::rng::{stream, Stream};
use crate::scalar::{real, Real};
use crate::session::{replay_record, SessionOptions};
use crate::tape::ValueId;
use crate::tensor::{invalid, Tensor, TensorError};

/// One labeled training/eval unit: a 3-channel seismogram plus arrival and
/// source labels. Noise records carry no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    /// [3, L] in Z, N, E order.
    pub samples: Tensor<f32>,
    pub sample_rate_hz: f64,
    pub p_index: Option<usize>,
    pub s_index: Option<usize>,
    pub magnitude: Option<f64>,
    pub x_km: Option<f64>,
    pub y_km: Option<f64>,
    pub is_noise: bool,
}

impl WaveformRecord {
    pub fn len(&self) -> usize {
        self.samples.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.samples.shape().len() != 2 || self.samples.shape()[0] != 3 {
            return Err(invalid("record", "samples must be [3, L]"));
        }
        if let (Some(p), Some(s)) = (self.p_index, self.s_index) {
            if p >= s {
                return Err(invalid(
                    "record",
                    format!("p_index {p} must precede s_index {s}"),
                ));
            }
        }
        if self.is_noise && (self.p_index.is_some() || self.s_index.is_some()) {
            return Err(invalid("record", "noise records cannot carry arrivals"));
        }
        Ok(())
    }
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Focus range opens this many samples before P ...
    pub focus_before: usize,
    /// ... and closes this many samples after P.
    pub focus_after: usize,
    /// Hidden-increment penalty weight (beta).
    pub sea_beta: f64,
    /// Crop start is uniform in [P - crop_max_shift, P].
    pub crop_max_shift: usize,
    pub crop_len: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub w_pick: f64,
    pub w_loc: f64,
    pub w_mag: f64,
    /// Quake mask for the sea penalty extends to S + this margin.
    pub sea_margin_s: f64,
    /// Validation records replayed per epoch for the metrics log.
    pub val_subset: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            focus_before: 200,
            focus_after: 3000,
            sea_beta: 0.01,
            crop_max_shift: 400,
            crop_len: 2400,
            lr: 1e-3,
            batch: 4,
            epochs: 3,
            seed: 7,
            w_pick: 1.0,
            w_loc: 0.05,
            w_mag: 1.0,
            sea_margin_s: 10.0,
            val_subset: 50,
        }
    }
}

/// Training failures.
#[derive(Debug)]
pub enum TrainError {
    Tensor(TensorError),
    /// Loss went non-finite; carries the diagnostics the operator needs.
    NanLoss { epoch: usize, step: u64, lr: f64 },
    EmptyDataset,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::NanLoss { epoch, step, lr } => {
                write!(f, "non-finite loss at epoch {epoch}, step {step} (lr {lr})")
            }
            TrainError::EmptyDataset => write!(f, "training dataset is empty"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

// ---------------------------------------------------------------------------
// Crop augmentation
// ---------------------------------------------------------------------------

/// Extract a training crop. Quake records start uniformly in
/// [P - max_shift, P] (clamped at 0); noise records start anywhere. Samples
/// past the source are zero-padded; labels shift with the crop and drop when
/// they fall outside it.
pub fn augment_crop(
    rec: &WaveformRecord,
    max_shift: usize,
    crop_len: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> WaveformRecord {
    let l = rec.len();
    let start = match rec.p_index {
        Some(p) => {
            let lo = p.saturating_sub(max_shift);
            rng.gen_range(lo..=p)
        }
        None => {
            let hi = l.saturating_sub(crop_len);
            rng.gen_range(0..=hi)
        }
    };
    let mut samples = Tensor::zeros(&[3, crop_len]);
    let avail = l.saturating_sub(start).min(crop_len);
    for c in 0..3 {
        let src = &rec.samples.data()[c * l + start..c * l + start + avail];
        samples.data_mut()[c * crop_len..c * crop_len + avail].copy_from_slice(src);
    }
    let shift_label = |idx: Option<usize>| -> Option<usize> {
        idx.and_then(|i| i.checked_sub(start))
            .filter(|&i| i < crop_len)
    };
    WaveformRecord {
        samples,
        sample_rate_hz: rec.sample_rate_hz,
        p_index: shift_label(rec.p_index),
        s_index: shift_label(rec.s_index),
        magnitude: rec.magnitude,
        x_km: rec.x_km,
        y_km: rec.y_km,
        is_noise: rec.is_noise,
    }
}

// ---------------------------------------------------------------------------
// Masks and targets
// ---------------------------------------------------------------------------

fn step_intersects(t: usize, f: usize, lo: i64, hi: i64) -> bool {
    let a = (t * f) as i64;
    let b = a + f as i64 - 1;
    a <= hi && b >= lo
}

/// Focus mask over embedding steps: 1.0 where the step's sample span
/// intersects [p - a, p + b]; all zeros for records without a P arrival.
pub fn focus_mask<T: Real>(
    p_index: Option<usize>,
    a: usize,
    b: usize,
    l: usize,
    f: usize,
) -> Tensor<T> {
    let steps = l / f;
    let mut m = Tensor::zeros(&[steps, 1]);
    if let Some(p) = p_index {
        let lo = p as i64 - a as i64;
        let hi = p as i64 + b as i64;
        for t in 0..steps {
            if step_intersects(t, f, lo, hi) {
                m.data_mut()[t] = T::one();
            }
        }
    }
    m
}

/// Full-sequence focus: every step supervised.
pub fn focus_mask_full<T: Real>(l: usize, f: usize) -> Tensor<T> {
    Tensor::full(&[l / f, 1], T::one())
}

/// Quake mask for the sea penalty: the focus span extended to S + margin.
/// Steps outside it count as noise and have their increments driven to zero.
pub fn quake_mask<T: Real>(
    p_index: Option<usize>,
    s_index: Option<usize>,
    a: usize,
    b: usize,
    margin_samples: usize,
    l: usize,
    f: usize,
) -> Tensor<T> {
    let steps = l / f;
    let mut m = Tensor::zeros(&[steps, 1]);
    if let Some(p) = p_index {
        let lo = p as i64 - a as i64;
        let mut hi = p as i64 + b as i64;
        if let Some(s) = s_index {
            hi = hi.max(s as i64 + margin_samples as i64);
        }
        for t in 0..steps {
            if step_intersects(t, f, lo, hi) {
                m.data_mut()[t] = T::one();
            }
        }
    }
    m
}

/// Everything the loss needs besides the forward outputs.
pub struct TrainTargets<T> {
    pub pick: Tensor<T>,
    pub loc: Tensor<T>,
    pub mag: Tensor<T>,
    pub focus2: Tensor<T>,
    pub focus1: Tensor<T>,
    pub n_focus: usize,
    pub noise_h: Tensor<T>,
    pub n_noise: usize,
}

impl<T: Real> TrainTargets<T> {
    pub fn build(
        rec: &WaveformRecord,
        tcfg: &TrainConfig,
        f: usize,
        t_bank: usize,
        n_heads: usize,
    ) -> Self {
        let l = rec.len();
        let steps = l / f;
        let mut pick = Tensor::zeros(&[steps, 2]);
        for t in 0..steps {
            let cur = ((t + 1) * f) as u64;
            let p = encode_pick(rec.p_index.map(|v| v as u64), cur, t_bank, f);
            let s = encode_pick(rec.s_index.map(|v| v as u64), cur, t_bank, f);
            pick.data_mut()[t * 2] = real(p);
            pick.data_mut()[t * 2 + 1] = real(s);
        }
        let mut loc = Tensor::zeros(&[steps, 2]);
        let mut mag = Tensor::zeros(&[steps, 1]);
        let (x, y, m) = (
            rec.x_km.unwrap_or(0.0),
            rec.y_km.unwrap_or(0.0),
            rec.magnitude.unwrap_or(0.0),
        );
        for t in 0..steps {
            loc.data_mut()[t * 2] = real(x);
            loc.data_mut()[t * 2 + 1] = real(y);
            mag.data_mut()[t] = real(m);
        }
        let focus1 = focus_mask::<T>(rec.p_index, tcfg.focus_before, tcfg.focus_after, l, f);
        let n_focus = focus1.iter().filter(|v| **v > T::zero()).count();
        let mut focus2 = Tensor::zeros(&[steps, 2]);
        for t in 0..steps {
            let v = focus1.data()[t];
            focus2.data_mut()[t * 2] = v;
            focus2.data_mut()[t * 2 + 1] = v;
        }
        let margin = (tcfg.sea_margin_s * rec.sample_rate_hz).round() as usize;
        let quake = quake_mask::<T>(
            rec.p_index,
            rec.s_index,
            tcfg.focus_before,
            tcfg.focus_after,
            margin,
            l,
            f,
        );
        let mut noise_h = Tensor::zeros(&[steps, n_heads]);
        let mut n_noise = 0;
        for t in 0..steps {
            if quake.data()[t] == T::zero() {
                n_noise += 1;
                for h in 0..n_heads {
                    noise_h.data_mut()[t * n_heads + h] = T::one();
                }
            }
        }
        TrainTargets {
            pick,
            loc,
            mag,
            focus2,
            focus1,
            n_focus,
            noise_h,
            n_noise,
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Scalar loss node handle plus the forward values of each part.
pub struct LossParts {
    pub total: ValueId,
    pub pick: f64,
    pub loc: f64,
    pub mag: f64,
    pub sea: f64,
    pub total_value: f64,
}

fn negated<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let data = t.iter().map(|&v| -v).collect();
    Tensor::from_vec(t.shape(), data).unwrap()
}

/// Assemble pick MSE (all steps), masked MAE for location and magnitude
/// (focus steps), and the sea penalty (mean squared increment over noise
/// steps, summed over blocks and heads, times beta).
pub fn build_losses<T: Real>(
    outs: &mut ParallelOutputs<T>,
    targets: &TrainTargets<T>,
    tcfg: &TrainConfig,
) -> Result<LossParts, TensorError> {
    let (pick_id, loc_id, mag_id) = (outs.pick, outs.loc, outs.mag);
    let increments = outs.increments.clone();
    let tape = &mut outs.tape;
    let scalar = |t: &crate::tape::Tape<T>, id: ValueId| t.value(id).data()[0].to_f64().unwrap();

    let pick_diff = tape.offset_const(pick_id, &negated(&targets.pick))?;
    let pick_sq = tape.mul(pick_diff, pick_diff)?;
    let pick_sum = tape.sum_all(pick_sq);
    let n_pick = targets.pick.numel().max(1);
    let l_pick = tape.scale(pick_sum, real(1.0 / n_pick as f64));

    let loc_diff = tape.offset_const(loc_id, &negated(&targets.loc))?;
    let loc_abs = tape.abs(loc_diff);
    let loc_masked = tape.mul_const(loc_abs, &targets.focus2)?;
    let loc_sum = tape.sum_all(loc_masked);
    let l_loc = tape.scale(loc_sum, real(1.0 / (2 * targets.n_focus.max(1)) as f64));

    let mag_diff = tape.offset_const(mag_id, &negated(&targets.mag))?;
    let mag_abs = tape.abs(mag_diff);
    let mag_masked = tape.mul_const(mag_abs, &targets.focus1)?;
    let mag_sum = tape.sum_all(mag_masked);
    let l_mag = tape.scale(mag_sum, real(1.0 / targets.n_focus.max(1) as f64));

    let mut sea_total: Option<ValueId> = None;
    for &inc in &increments {
        let masked = tape.mul_const(inc, &targets.noise_h)?;
        let s = tape.sum_all(masked);
        sea_total = Some(match sea_total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let l_sea = match sea_total {
        Some(acc) => tape.scale(acc, real(tcfg.sea_beta / targets.n_noise.max(1) as f64)),
        None => tape.constant(Tensor::scalar(T::zero())),
    };

    let wp = tape.scale(l_pick, real(tcfg.w_pick));
    let wl = tape.scale(l_loc, real(tcfg.w_loc));
    let wm = tape.scale(l_mag, real(tcfg.w_mag));
    let t0 = tape.add(wp, wl)?;
    let t1 = tape.add(t0, wm)?;
    let total = tape.add(t1, l_sea)?;

    Ok(LossParts {
        pick: scalar(tape, l_pick),
        loc: scalar(tape, l_loc),
        mag: scalar(tape, l_mag),
        sea: scalar(tape, l_sea),
        total_value: scalar(tape, total),
        total,
    })
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with fixed moments (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam {
    pub lr: f64,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update; `grads` aligned with the parameter registry order.
    pub fn step(&mut self, params: &mut FishParams<f32>, grads: &[Vec<f32>]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - B1.powi(t);
        let bc2 = 1.0 - B2.powi(t);
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let mut i = 0;
        params.for_each_mut(&mut |_, tensor| {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                let gj = g[j] as f64;
                let mj = B1 * m[j] as f64 + (1.0 - B1) * gj;
                let vj = B2 * v[j] as f64 + (1.0 - B2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                *p -= (self.lr * mhat / (vhat.sqrt() + EPS)) as f32;
            }
            i += 1;
        });
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One row of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub l_pick: f64,
    pub l_loc: f64,
    pub l_mag: f64,
    pub l_sea: f64,
    pub val_f1_p: f64,
    pub val_f1_s: f64,
    pub val_mae_mag: f64,
    pub val_err_km: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,loss,l_pick,l_loc,l_mag,l_sea,val_f1_p,val_f1_s,val_mae_mag,val_err_km";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4}",
            self.epoch,
            self.loss,
            self.l_pick,
            self.l_loc,
            self.l_mag,
            self.l_sea,
            self.val_f1_p,
            self.val_f1_s,
            self.val_mae_mag,
            self.val_err_km
        )
    }
}

pub struct TrainResult {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Train from scratch on the given records. Deterministic in `tcfg.seed`.
pub fn train(
    cfg: &FishConfig,
    tcfg: &TrainConfig,
    train_recs: &[WaveformRecord],
    val_recs: &[WaveformRecord],
    mut progress: Option<&mut dyn FnMut(&EpochMetrics)>,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if train_recs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = Model::init(cfg.clone(), tcfg.seed)?;
    let f = cfg.downsample();
    let t_bank = cfg.bank_len();
    let n_heads = cfg.retention.n_heads;
    let mut adam = Adam::new(tcfg.lr);

    let mut grad_shapes = Vec::new();
    model.params.for_each(&mut |_, t| grad_shapes.push(t.numel()));

    let n = train_recs.len();
    let mut metrics = Vec::new();
    let mut global_step = 0u64;
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(tcfg.seed, Stream::Shuffle(epoch as u64)));
        let mut sums = [0.0f64; 5];
        let mut seen = 0usize;
        for batch in order.chunks(tcfg.batch.max(1)) {
            let mut grads: Vec<Vec<f32>> = grad_shapes.iter().map(|&s| vec![0.0f32; s]).collect();
            let inv_b = 1.0 / batch.len() as f32;
            for &ri in batch {
                let mut crop_rng =
                    stream(tcfg.seed, Stream::Crop(epoch as u64 * n as u64 + ri as u64));
                let rec =
                    augment_crop(&train_recs[ri], tcfg.crop_max_shift, tcfg.crop_len, &mut crop_rng);
                let targets = TrainTargets::<f32>::build(&rec, tcfg, f, t_bank, n_heads);
                let mut outs = parallel_forward(cfg, &model.params, &rec.samples, true)?;
                let losses = build_losses(&mut outs, &targets, tcfg)?;
                if !losses.total_value.is_finite() {
                    return Err(TrainError::NanLoss {
                        epoch,
                        step: global_step,
                        lr: adam.lr,
                    });
                }
                sums[0] += losses.total_value;
                sums[1] += losses.pick;
                sums[2] += losses.loc;
                sums[3] += losses.mag;
                sums[4] += losses.sea;
                let order_ids = outs.param_order.clone();
                let gradients = outs.tape.backward(losses.total)?;
                for (i, pid) in order_ids.into_iter().enumerate() {
                    if let Some(g) = gradients.get(pid) {
                        for (acc, &gv) in grads[i].iter_mut().zip(g) {
                            *acc += gv * inv_b;
                        }
                    }
                }
            }
            adam.step(&mut model.params, &grads);
            global_step += 1;
            seen += batch.len();
        }

        let val = validate(&model, val_recs, tcfg.val_subset);
        let row = EpochMetrics {
            epoch,
            loss: sums[0] / seen as f64,
            l_pick: sums[1] / seen as f64,
            l_loc: sums[2] / seen as f64,
            l_mag: sums[3] / seen as f64,
            l_sea: sums[4] / seen as f64,
            val_f1_p: val.0,
            val_f1_s: val.1,
            val_mae_mag: val.2,
            val_err_km: val.3,
        };
        if let Some(p) = progress.as_deref_mut() {
            p(&row);
        }
        metrics.push(row);
    }
    Ok(TrainResult { model, metrics })
}

/// Streaming-replay validation: (f1_p, f1_s, mag MAE, median loc err km)
/// with picks matched at +-0.5 s and point estimates read at P + 20 s.
fn validate(model: &Model, val: &[WaveformRecord], subset: usize) -> (f64, f64, f64, f64) {
    let take = subset.min(val.len());
    if take == 0 {
        return (0.0, 0.0, f64::NAN, f64::NAN);
    }
    let opts = SessionOptions::default();
    let mut counts_p = eval::PickCounts::default();
    let mut counts_s = eval::PickCounts::default();
    let mut mag_errs = Vec::new();
    let mut loc_errs = Vec::new();
    for rec in &val[..take] {
        let Ok(outs) = replay_record(model, &rec.samples, &opts) else {
            continue;
        };
        let summary = eval::summarize_record(model, rec, &outs, 0.5, 20.0);
        counts_p.merge(&summary.counts_p);
        counts_s.merge(&summary.counts_s);
        if let Some(e) = summary.mag_err_at_report {
            mag_errs.push(e);
        }
        if let Some(e) = summary.loc_err_at_report {
            loc_errs.push(e);
        }
    }
    let f1p = counts_p.score().f1;
    let f1s = counts_s.score().f1;
    let mae = if mag_errs.is_empty() {
        f64::NAN
    } else {
        mag_errs.iter().sum::<f64>() / mag_errs.len() as f64
    };
    let med = eval::median_f64(&mut loc_errs);
    (f1p, f1s, mae, med)
}
