//! Decoder: maps prediction embeddings to the three task outputs.
//!
//! Picking reads a trailing window (the memory bank) through a causal conv
//! stack, max-pools it to one feature vector, and regresses the relative
//! position of the P/S arrivals inside the bank; `1.0` encodes "no arrival
//! in the bank". Location and magnitude read only the current embedding
//! through small MLPs.
//!
//! The conv stack is causal over the embedding stream, so the parallel
//! (whole-sequence) and streaming (one step at a time) paths compute the
//! same function; slots before the stream start read as the stack's
//! response to zero embeddings.

// Resolves f64 math in no_std builds; std builds use inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels as kn;
use crate::scalar::{real, Real};
use crate::tape::{Tape, ValueId};
use crate::tensor::{invalid, Tensor, TensorError};

/// Decoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Memory bank span in seconds of embedding time.
    pub bank_seconds: f64,
    /// Kernel size of the three pick conv layers.
    pub pick_kernel: usize,
    /// Hidden width of the location/magnitude MLPs.
    pub head_hidden: usize,
    /// Pick outputs at or above this decode as "absent".
    pub absent_threshold: f64,
    /// Picks closer than this (seconds) merge into one event.
    pub merge_window_s: f64,
    /// Fixed output scale of the location head (km per unit output).
    pub loc_scale_km: f64,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.bank_seconds <= 0.0 || self.head_hidden == 0 {
            return Err(invalid("decoder config", "bank and hidden must be positive"));
        }
        if self.pick_kernel % 2 == 0 {
            return Err(invalid("decoder config", "pick kernel must be odd"));
        }
        if !(0.0 < self.absent_threshold && self.absent_threshold <= 1.0) {
            return Err(invalid("decoder config", "absent threshold outside (0, 1]"));
        }
        Ok(())
    }

    /// Bank capacity in embedding steps at the given embedding rate.
    pub fn bank_len(&self, embed_rate_hz: f64) -> usize {
        (self.bank_seconds * embed_rate_hz).round() as usize
    }

    /// Pick conv channel plan D -> D/2 -> D/4 -> D/4.
    pub fn pick_channels(&self, embed_dim: usize) -> [usize; 3] {
        let c1 = (embed_dim / 2).max(1);
        let c2 = (embed_dim / 4).max(1);
        [c1, c2, c2]
    }
}

#[derive(Debug, Clone)]
pub struct DecoderParams<T> {
    pub pick_w1: Tensor<T>,
    pub pick_b1: Tensor<T>,
    pub pick_w2: Tensor<T>,
    pub pick_b2: Tensor<T>,
    pub pick_w3: Tensor<T>,
    pub pick_b3: Tensor<T>,
    pub pick_lin_w: Tensor<T>,
    pub pick_lin_b: Tensor<T>,
    pub loc_w1: Tensor<T>,
    pub loc_b1: Tensor<T>,
    pub loc_w2: Tensor<T>,
    pub loc_b2: Tensor<T>,
    pub mag_w1: Tensor<T>,
    pub mag_b1: Tensor<T>,
    pub mag_w2: Tensor<T>,
    pub mag_b2: Tensor<T>,
}

impl<T: Real> DecoderParams<T> {
    pub fn init(cfg: &DecoderConfig, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3] = cfg.pick_channels(embed_dim);
        let k = cfg.pick_kernel;
        let h = cfg.head_hidden;
        let d = embed_dim;
        let cstd = |cin: usize| 1.0 / ((cin * k) as f64).sqrt();
        DecoderParams {
            pick_w1: Tensor::randn(&[c1, d, k], cstd(d), rng),
            pick_b1: Tensor::zeros(&[c1]),
            pick_w2: Tensor::randn(&[c2, c1, k], cstd(c1), rng),
            pick_b2: Tensor::zeros(&[c2]),
            pick_w3: Tensor::randn(&[c3, c2, k], cstd(c2), rng),
            pick_b3: Tensor::zeros(&[c3]),
            pick_lin_w: Tensor::randn(&[c3, 2], 1.0 / (c3 as f64).sqrt(), rng),
            // Start at sigmoid(4.6) ~ 0.99: streams decode as pick-free until
            // the head learns otherwise.
            pick_lin_b: Tensor::full(&[2], real::<T>(4.6)),
            loc_w1: Tensor::randn(&[d, h], 1.0 / (d as f64).sqrt(), rng),
            loc_b1: Tensor::zeros(&[h]),
            loc_w2: Tensor::randn(&[h, 2], 1.0 / (h as f64).sqrt(), rng),
            loc_b2: Tensor::zeros(&[2]),
            mag_w1: Tensor::randn(&[d, h], 1.0 / (d as f64).sqrt(), rng),
            mag_b1: Tensor::zeros(&[h]),
            mag_w2: Tensor::randn(&[h, 1], 1.0 / (h as f64).sqrt(), rng),
            mag_b2: Tensor::zeros(&[1]),
        }
    }

    pub fn for_each(&self, f: &mut impl FnMut(String, &Tensor<T>)) {
        f(format!("decoder.pick.conv1.w"), &self.pick_w1);
        f(format!("decoder.pick.conv1.b"), &self.pick_b1);
        f(format!("decoder.pick.conv2.w"), &self.pick_w2);
        f(format!("decoder.pick.conv2.b"), &self.pick_b2);
        f(format!("decoder.pick.conv3.w"), &self.pick_w3);
        f(format!("decoder.pick.conv3.b"), &self.pick_b3);
        f(format!("decoder.pick.lin.w"), &self.pick_lin_w);
        f(format!("decoder.pick.lin.b"), &self.pick_lin_b);
        f(format!("decoder.loc.w1"), &self.loc_w1);
        f(format!("decoder.loc.b1"), &self.loc_b1);
        f(format!("decoder.loc.w2"), &self.loc_w2);
        f(format!("decoder.loc.b2"), &self.loc_b2);
        f(format!("decoder.mag.w1"), &self.mag_w1);
        f(format!("decoder.mag.b1"), &self.mag_b1);
        f(format!("decoder.mag.w2"), &self.mag_w2);
        f(format!("decoder.mag.b2"), &self.mag_b2);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        f(format!("decoder.pick.conv1.w"), &mut self.pick_w1);
        f(format!("decoder.pick.conv1.b"), &mut self.pick_b1);
        f(format!("decoder.pick.conv2.w"), &mut self.pick_w2);
        f(format!("decoder.pick.conv2.b"), &mut self.pick_b2);
        f(format!("decoder.pick.conv3.w"), &mut self.pick_w3);
        f(format!("decoder.pick.conv3.b"), &mut self.pick_b3);
        f(format!("decoder.pick.lin.w"), &mut self.pick_lin_w);
        f(format!("decoder.pick.lin.b"), &mut self.pick_lin_b);
        f(format!("decoder.loc.w1"), &mut self.loc_w1);
        f(format!("decoder.loc.b1"), &mut self.loc_b1);
        f(format!("decoder.loc.w2"), &mut self.loc_w2);
        f(format!("decoder.loc.b2"), &mut self.loc_b2);
        f(format!("decoder.mag.w1"), &mut self.mag_w1);
        f(format!("decoder.mag.b1"), &mut self.mag_b1);
        f(format!("decoder.mag.w2"), &mut self.mag_w2);
        f(format!("decoder.mag.b2"), &mut self.mag_b2);
    }
}

pub struct DecoderParamIds {
    pub pick_w1: ValueId,
    pub pick_b1: ValueId,
    pub pick_w2: ValueId,
    pub pick_b2: ValueId,
    pub pick_w3: ValueId,
    pub pick_b3: ValueId,
    pub pick_lin_w: ValueId,
    pub pick_lin_b: ValueId,
    pub loc_w1: ValueId,
    pub loc_b1: ValueId,
    pub loc_w2: ValueId,
    pub loc_b2: ValueId,
    pub mag_w1: ValueId,
    pub mag_b1: ValueId,
    pub mag_w2: ValueId,
    pub mag_b2: ValueId,
}

pub fn register_decoder<T: Real>(
    tape: &mut Tape<T>,
    p: &DecoderParams<T>,
    order: &mut Vec<ValueId>,
) -> DecoderParamIds {
    let ids = DecoderParamIds {
        pick_w1: tape.param(p.pick_w1.clone()),
        pick_b1: tape.param(p.pick_b1.clone()),
        pick_w2: tape.param(p.pick_w2.clone()),
        pick_b2: tape.param(p.pick_b2.clone()),
        pick_w3: tape.param(p.pick_w3.clone()),
        pick_b3: tape.param(p.pick_b3.clone()),
        pick_lin_w: tape.param(p.pick_lin_w.clone()),
        pick_lin_b: tape.param(p.pick_lin_b.clone()),
        loc_w1: tape.param(p.loc_w1.clone()),
        loc_b1: tape.param(p.loc_b1.clone()),
        loc_w2: tape.param(p.loc_w2.clone()),
        loc_b2: tape.param(p.loc_b2.clone()),
        mag_w1: tape.param(p.mag_w1.clone()),
        mag_b1: tape.param(p.mag_b1.clone()),
        mag_w2: tape.param(p.mag_w2.clone()),
        mag_b2: tape.param(p.mag_b2.clone()),
    };
    order.extend_from_slice(&[
        ids.pick_w1,
        ids.pick_b1,
        ids.pick_w2,
        ids.pick_b2,
        ids.pick_w3,
        ids.pick_b3,
        ids.pick_lin_w,
        ids.pick_lin_b,
        ids.loc_w1,
        ids.loc_b1,
        ids.loc_w2,
        ids.loc_b2,
        ids.mag_w1,
        ids.mag_b1,
        ids.mag_w2,
        ids.mag_b2,
    ]);
    ids
}

// ---------------------------------------------------------------------------
// Parallel (tape) path
// ---------------------------------------------------------------------------

pub struct DecoderTapeOut {
    /// [L, 2] sigmoid pick positions (p, s).
    pub pick: ValueId,
    /// [L, 2] station-relative (x, y) km.
    pub loc: ValueId,
    /// [L, 1] magnitude.
    pub mag: ValueId,
}

/// Run all three heads over a [L, D] prediction-embedding sequence.
pub fn decode_on_tape<T: Real>(
    tape: &mut Tape<T>,
    cfg: &DecoderConfig,
    ids: &DecoderParamIds,
    e: ValueId,
    bank_len: usize,
) -> Result<DecoderTapeOut, TensorError> {
    let d = tape.value(e).cols();
    let k = cfg.pick_kernel;
    let pad = k - 1;

    let conv_stack = |tape: &mut Tape<T>, input: ValueId| -> Result<ValueId, TensorError> {
        let c1 = tape.conv1d(input, ids.pick_w1, Some(ids.pick_b1), 1, pad, 0)?;
        let a1 = tape.gelu(c1);
        let c2 = tape.conv1d(a1, ids.pick_w2, Some(ids.pick_b2), 1, pad, 0)?;
        let a2 = tape.gelu(c2);
        tape.conv1d(a2, ids.pick_w3, Some(ids.pick_b3), 1, pad, 0)
    };

    let et = tape.transpose(e)?;
    let c3 = conv_stack(tape, et)?;
    let seq = tape.transpose(c3)?;
    // Response of the stack to zero embeddings: the fill for missing history.
    let zero_col = tape.constant(Tensor::zeros(&[d, 1]));
    let z3 = conv_stack(tape, zero_col)?;
    let fill = tape.transpose(z3)?;
    let pooled = tape.sliding_max(seq, fill, bank_len)?;
    let logits = tape.matmul(pooled, ids.pick_lin_w)?;
    let logits = tape.add_bias(logits, ids.pick_lin_b, 1)?;
    let pick = tape.sigmoid(logits);

    let mlp2 = |tape: &mut Tape<T>,
                w1: ValueId,
                b1: ValueId,
                w2: ValueId,
                b2: ValueId|
     -> Result<ValueId, TensorError> {
        let h = tape.matmul(e, w1)?;
        let h = tape.add_bias(h, b1, 1)?;
        let h = tape.gelu(h);
        let o = tape.matmul(h, w2)?;
        tape.add_bias(o, b2, 1)
    };
    let loc_raw = mlp2(tape, ids.loc_w1, ids.loc_b1, ids.loc_w2, ids.loc_b2)?;
    let loc = tape.scale(loc_raw, real(cfg.loc_scale_km));
    let mag = mlp2(tape, ids.mag_w1, ids.mag_b1, ids.mag_w2, ids.mag_b2)?;
    Ok(DecoderTapeOut { pick, loc, mag })
}

// ---------------------------------------------------------------------------
// Memory bank
// ---------------------------------------------------------------------------

/// Fixed-capacity FIFO of embedding rows. Slots that were never written read
/// as a configurable missing-row (zeros by default).
#[derive(Debug, Clone)]
pub struct MemoryBank<T> {
    dim: usize,
    cap: usize,
    fill: usize,
    head: usize,
    data: Vec<T>,
    missing: Vec<T>,
}

impl<T: Real> MemoryBank<T> {
    pub fn new(dim: usize, cap: usize) -> Self {
        Self::with_fill(dim, cap, vec![T::zero(); dim])
    }

    pub fn with_fill(dim: usize, cap: usize, missing: Vec<T>) -> Self {
        assert!(cap > 0 && missing.len() == dim);
        MemoryBank {
            dim,
            cap,
            fill: 0,
            head: 0,
            data: vec![T::zero(); dim * cap],
            missing,
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn fill_count(&self) -> usize {
        self.fill
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Push the newest row, evicting the oldest when full.
    pub fn push(&mut self, e: &[T]) -> Result<(), TensorError> {
        if e.len() != self.dim {
            return Err(TensorError::ShapeMismatch {
                op: "bank_push",
                lhs: vec![e.len()],
                rhs: vec![self.dim],
            });
        }
        self.data[self.head * self.dim..(self.head + 1) * self.dim].copy_from_slice(e);
        self.head = (self.head + 1) % self.cap;
        if self.fill < self.cap {
            self.fill += 1;
        }
        Ok(())
    }

    /// Read window slot `i` (0 = oldest, cap-1 = newest); unwritten slots
    /// yield the missing row.
    pub fn read_slot(&self, i: usize, out: &mut [T]) {
        debug_assert!(i < self.cap);
        let missing_slots = self.cap - self.fill;
        if i < missing_slots {
            out.copy_from_slice(&self.missing);
        } else {
            let age_rank = i - missing_slots; // 0 = oldest stored
            let idx = (self.head + self.cap - self.fill + age_rank) % self.cap;
            out.copy_from_slice(&self.data[idx * self.dim..(idx + 1) * self.dim]);
        }
    }

    /// Per-dimension max over the whole window, oldest first (ties keep the
    /// oldest), matching the tape's sliding_max.
    pub fn max_per_dim(&self, out: &mut [T]) {
        if self.fill < self.cap {
            out.copy_from_slice(&self.missing);
        } else {
            let oldest = (self.head + self.cap - self.fill) % self.cap;
            out.copy_from_slice(&self.data[oldest * self.dim..(oldest + 1) * self.dim]);
        }
        let start = if self.fill < self.cap { 0 } else { 1 };
        for r in start..self.fill {
            let idx = (self.head + self.cap - self.fill + r) % self.cap;
            let row = &self.data[idx * self.dim..(idx + 1) * self.dim];
            for (o, &v) in out.iter_mut().zip(row) {
                if v > *o {
                    *o = v;
                }
            }
        }
    }

    pub fn reset(&mut self) {
        self.fill = 0;
        self.head = 0;
        for v in self.data.iter_mut() {
            *v = T::zero();
        }
    }

    pub fn state_bytes(&self) -> usize {
        (self.data.len() + self.missing.len()) * core::mem::size_of::<T>()
    }
}

// ---------------------------------------------------------------------------
// Streaming path
// ---------------------------------------------------------------------------

struct ConvWindow<T> {
    c_in: usize,
    k: usize,
    win: Vec<T>,
}

impl<T: Real> ConvWindow<T> {
    fn new(c_in: usize, k: usize) -> Self {
        ConvWindow {
            c_in,
            k,
            win: vec![T::zero(); c_in * k],
        }
    }

    fn push_and_conv(&mut self, x: &[T], w: &Tensor<T>, b: &Tensor<T>, out: &mut [T]) {
        let k = self.k;
        for ci in 0..self.c_in {
            let row = &mut self.win[ci * k..(ci + 1) * k];
            row.copy_within(1..k, 0);
            row[k - 1] = x[ci];
        }
        let cout = b.numel();
        for co in 0..cout {
            let mut acc = b.data()[co];
            for ci in 0..self.c_in {
                let wrow = &w.data()[(co * self.c_in + ci) * k..(co * self.c_in + ci + 1) * k];
                acc = acc + kn::dot(wrow, &self.win[ci * k..(ci + 1) * k]);
            }
            out[co] = acc;
        }
    }

    fn reset(&mut self) {
        for v in self.win.iter_mut() {
            *v = T::zero();
        }
    }
}

/// Per-step decoder outputs before any thresholding.
#[derive(Debug, Clone, Copy)]
pub struct HeadValues<T> {
    pub p_rel: T,
    pub s_rel: T,
    pub magnitude: T,
    pub x_km: T,
    pub y_km: T,
}

/// Streaming decoder state: three conv windows plus the feature memory bank.
pub struct DecoderStream<T> {
    params: DecoderParams<T>,
    loc_scale: T,
    win1: ConvWindow<T>,
    win2: ConvWindow<T>,
    win3: ConvWindow<T>,
    bank: MemoryBank<T>,
    c1_buf: Vec<T>,
    c2_buf: Vec<T>,
    c3_buf: Vec<T>,
    pooled: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Real> DecoderStream<T> {
    pub fn new(
        cfg: &DecoderConfig,
        params: &DecoderParams<T>,
        embed_dim: usize,
        bank_len: usize,
    ) -> Self {
        let [c1, c2, c3] = cfg.pick_channels(embed_dim);
        let k = cfg.pick_kernel;
        let fill = zero_response(cfg, params, embed_dim);
        DecoderStream {
            params: params.clone(),
            loc_scale: real(cfg.loc_scale_km),
            win1: ConvWindow::new(embed_dim, k),
            win2: ConvWindow::new(c1, k),
            win3: ConvWindow::new(c2, k),
            bank: MemoryBank::with_fill(c3, bank_len, fill),
            c1_buf: vec![T::zero(); c1],
            c2_buf: vec![T::zero(); c2],
            c3_buf: vec![T::zero(); c3],
            pooled: vec![T::zero(); c3],
            hidden: vec![T::zero(); cfg.head_hidden],
        }
    }

    /// Consume one prediction embedding, produce the decoded heads.
    pub fn step(&mut self, e: &[T]) -> HeadValues<T> {
        let p = &self.params;
        self.win1
            .push_and_conv(e, &p.pick_w1, &p.pick_b1, &mut self.c1_buf);
        for v in self.c1_buf.iter_mut() {
            *v = kn::gelu(*v);
        }
        self.win2
            .push_and_conv(&self.c1_buf, &p.pick_w2, &p.pick_b2, &mut self.c2_buf);
        for v in self.c2_buf.iter_mut() {
            *v = kn::gelu(*v);
        }
        self.win3
            .push_and_conv(&self.c2_buf, &p.pick_w3, &p.pick_b3, &mut self.c3_buf);
        self.bank.push(&self.c3_buf).expect("bank dim fixed");
        self.bank.max_per_dim(&mut self.pooled);

        let mut logits = [T::zero(), T::zero()];
        kn::matmul_acc(
            &self.pooled,
            p.pick_lin_w.data(),
            1,
            self.pooled.len(),
            2,
            &mut logits,
        );
        let p_rel = kn::sigmoid(logits[0] + p.pick_lin_b.data()[0]);
        let s_rel = kn::sigmoid(logits[1] + p.pick_lin_b.data()[1]);

        let mlp = |w1: &Tensor<T>, b1: &Tensor<T>, w2: &Tensor<T>, b2: &Tensor<T>, hidden: &mut [T], out: &mut [T]| {
            for h in hidden.iter_mut() {
                *h = T::zero();
            }
            kn::matmul_acc(e, w1.data(), 1, w1.shape()[0], w1.shape()[1], hidden);
            for (h, &b) in hidden.iter_mut().zip(b1.data()) {
                *h = kn::gelu(*h + b);
            }
            for o in out.iter_mut() {
                *o = T::zero();
            }
            kn::matmul_acc(hidden, w2.data(), 1, w2.shape()[0], w2.shape()[1], out);
            for (o, &b) in out.iter_mut().zip(b2.data()) {
                *o = *o + b;
            }
        };
        let mut loc = [T::zero(), T::zero()];
        mlp(&p.loc_w1, &p.loc_b1, &p.loc_w2, &p.loc_b2, &mut self.hidden, &mut loc);
        for v in loc.iter_mut() {
            *v = *v * self.loc_scale;
        }
        let mut mag = [T::zero()];
        mlp(&p.mag_w1, &p.mag_b1, &p.mag_w2, &p.mag_b2, &mut self.hidden, &mut mag);

        HeadValues {
            p_rel,
            s_rel,
            magnitude: mag[0],
            x_km: loc[0],
            y_km: loc[1],
        }
    }

    pub fn reset(&mut self) {
        self.win1.reset();
        self.win2.reset();
        self.win3.reset();
        self.bank.reset();
    }

    pub fn state_bytes(&self) -> usize {
        (self.win1.win.len() + self.win2.win.len() + self.win3.win.len())
            * core::mem::size_of::<T>()
            + self.bank.state_bytes()
    }
}

/// Conv-stack response to all-zero embeddings (bias propagation); the value
/// missing bank slots read as.
fn zero_response<T: Real>(cfg: &DecoderConfig, p: &DecoderParams<T>, embed_dim: usize) -> Vec<T> {
    let [c1, c2, c3] = cfg.pick_channels(embed_dim);
    let k = cfg.pick_kernel;
    let mut w1 = ConvWindow::<T>::new(embed_dim, k);
    let mut w2 = ConvWindow::<T>::new(c1, k);
    let mut w3 = ConvWindow::<T>::new(c2, k);
    let zero = vec![T::zero(); embed_dim];
    let mut b1 = vec![T::zero(); c1];
    let mut b2 = vec![T::zero(); c2];
    let mut b3 = vec![T::zero(); c3];
    // One step is enough: the windows start zeroed, equal to an infinite
    // zero history.
    w1.push_and_conv(&zero, &p.pick_w1, &p.pick_b1, &mut b1);
    for v in b1.iter_mut() {
        *v = kn::gelu(*v);
    }
    w2.push_and_conv(&b1, &p.pick_w2, &p.pick_b2, &mut b2);
    for v in b2.iter_mut() {
        *v = kn::gelu(*v);
    }
    w3.push_and_conv(&b2, &p.pick_w3, &p.pick_b3, &mut b3);
    b3
}

/// Literal pick head over a bank of raw prediction embeddings: causal conv
/// stack inside the bank, global max pool, linear, sigmoid. Equal to the
/// streaming path for every step until the first eviction.
pub fn pick_head<T: Real>(
    bank: &MemoryBank<T>,
    cfg: &DecoderConfig,
    params: &DecoderParams<T>,
) -> (T, T) {
    let d = bank.dim();
    let cap = bank.capacity();
    let [c1n, c2n, c3n] = cfg.pick_channels(d);
    let k = cfg.pick_kernel;
    let mut mat = vec![T::zero(); d * cap];
    let mut row = vec![T::zero(); d];
    for i in 0..cap {
        bank.read_slot(i, &mut row);
        for ci in 0..d {
            mat[ci * cap + i] = row[ci];
        }
    }
    let mut c1 = vec![T::zero(); c1n * cap];
    kn::conv1d(
        &mat,
        d,
        cap,
        params.pick_w1.data(),
        c1n,
        k,
        Some(params.pick_b1.data()),
        1,
        k - 1,
        cap,
        &mut c1,
    );
    for v in c1.iter_mut() {
        *v = kn::gelu(*v);
    }
    let mut c2 = vec![T::zero(); c2n * cap];
    kn::conv1d(
        &c1,
        c1n,
        cap,
        params.pick_w2.data(),
        c2n,
        k,
        Some(params.pick_b2.data()),
        1,
        k - 1,
        cap,
        &mut c2,
    );
    for v in c2.iter_mut() {
        *v = kn::gelu(*v);
    }
    let mut c3 = vec![T::zero(); c3n * cap];
    kn::conv1d(
        &c2,
        c2n,
        cap,
        params.pick_w3.data(),
        c3n,
        k,
        Some(params.pick_b3.data()),
        1,
        k - 1,
        cap,
        &mut c3,
    );
    let mut pooled = vec![T::zero(); c3n];
    for c in 0..c3n {
        let row = &c3[c * cap..(c + 1) * cap];
        let mut best = row[0];
        for &v in &row[1..] {
            if v > best {
                best = v;
            }
        }
        pooled[c] = best;
    }
    let mut logits = [T::zero(), T::zero()];
    kn::matmul_acc(&pooled, params.pick_lin_w.data(), 1, c3n, 2, &mut logits);
    (
        kn::sigmoid(logits[0] + params.pick_lin_b.data()[0]),
        kn::sigmoid(logits[1] + params.pick_lin_b.data()[1]),
    )
}

// ---------------------------------------------------------------------------
// Pick decoding and event aggregation
// ---------------------------------------------------------------------------

/// Seismic phase of a pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    P,
    S,
}

/// A point-estimate arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickEvent {
    pub phase: Phase,
    pub sample_index: u64,
}

/// Per-timestep decoder emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// Index of the newest consumed input sample (the frame end).
    pub sample_index: u64,
    pub p_rel: f32,
    pub s_rel: f32,
    pub magnitude: f32,
    pub x_km: f32,
    pub y_km: f32,
}

/// Map a relative bank position back to an absolute sample index.
/// `current_index` is the number of samples consumed so far.
pub fn decode_pick(
    rel: f64,
    current_index: u64,
    t_bank: usize,
    downsample: usize,
    absent_threshold: f64,
) -> Option<u64> {
    if !(rel < absent_threshold) {
        return None;
    }
    let span = (t_bank * downsample) as f64;
    let idx = current_index as f64 - (1.0 - rel) * span;
    let rounded = idx.round();
    if rounded < 0.0 {
        None
    } else {
        Some(rounded as u64)
    }
}

/// Encode an arrival's position as the pick head's regression target.
/// Returns 1.0 (absent) when the arrival is not inside the bank window.
pub fn encode_pick(
    arrival: Option<u64>,
    current_index: u64,
    t_bank: usize,
    downsample: usize,
) -> f64 {
    let span = (t_bank * downsample) as u64;
    match arrival {
        Some(a) if a < current_index && current_index - a <= span => {
            1.0 - (current_index - a) as f64 / span as f64
        }
        _ => 1.0,
    }
}

/// Cluster chronological per-step pick estimates into events; estimates of
/// the same phase within `merge_window` samples of the cluster median merge,
/// and each closed cluster reports its median index.
pub fn aggregate_picks(reports: &[(Phase, u64)], merge_window: u64) -> Vec<PickEvent> {
    let mut events = Vec::new();
    let mut open: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    let phase_of = |i: usize| if i == 0 { Phase::P } else { Phase::S };
    for &(phase, idx) in reports {
        let slot = if phase == Phase::P { 0 } else { 1 };
        let cluster = &mut open[slot];
        if cluster.is_empty() {
            cluster.push(idx);
            continue;
        }
        let med = median(cluster);
        if idx.abs_diff(med) <= merge_window {
            let pos = cluster.partition_point(|&v| v <= idx);
            cluster.insert(pos, idx);
        } else {
            events.push(PickEvent {
                phase: phase_of(slot),
                sample_index: med,
            });
            cluster.clear();
            cluster.push(idx);
        }
    }
    for (slot, cluster) in open.iter().enumerate() {
        if !cluster.is_empty() {
            events.push(PickEvent {
                phase: phase_of(slot),
                sample_index: median(cluster),
            });
        }
    }
    events.sort_by_key(|e| e.sample_index);
    events
}

fn median(sorted: &[u64]) -> u64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

/// Source distance derived from the regressed relative location.
pub fn distance_km(x_km: f64, y_km: f64) -> f64 {
    (x_km * x_km + y_km * y_km).sqrt()
}

/// Back-azimuth in degrees clockwise from north, derived from (x, y).
pub fn back_azimuth_deg(x_km: f64, y_km: f64) -> f64 {
    let deg = x_km.atan2(y_km).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn toy_dcfg() -> DecoderConfig {
        DecoderConfig {
            bank_seconds: 2.0,
            pick_kernel: 5,
            head_hidden: 8,
            absent_threshold: 0.99,
            merge_window_s: 1.0,
            loc_scale_km: 1.0,
        }
    }

    #[test]
    fn bank_push_and_evict() {
        let mut bank = MemoryBank::<f32>::new(2, 3);
        assert_eq!(bank.fill_count(), 0);
        bank.push(&[1.0, 1.5]).unwrap();
        assert_eq!(bank.fill_count(), 1);
        let mut row = [0.0f32; 2];
        bank.read_slot(2, &mut row); // newest
        assert_eq!(row, [1.0, 1.5]);
        bank.read_slot(0, &mut row); // unwritten -> zeros
        assert_eq!(row, [0.0, 0.0]);

        for i in 0..3 {
            bank.push(&[i as f32 + 2.0, 0.0]).unwrap();
        }
        // Pushed 1,2,3,4; capacity 3 keeps 2,3,4 in order.
        bank.read_slot(0, &mut row);
        assert_eq!(row[0], 2.0);
        bank.read_slot(2, &mut row);
        assert_eq!(row[0], 4.0);
    }

    #[test]
    fn bank_rejects_dim_mismatch() {
        let mut bank = MemoryBank::<f32>::new(2, 3);
        assert!(bank.push(&[1.0]).is_err());
    }

    #[test]
    fn decode_pick_spec_values() {
        // Absence encoding.
        assert_eq!(decode_pick(1.0, 3000, 750, 4, 0.99), None);
        // Newest slot maps back to its own frame.
        let rel = 749.0 / 750.0;
        assert_eq!(decode_pick(rel, 3000, 750, 4, 0.999), Some(2996));
        // Oldest slot.
        assert_eq!(decode_pick(0.0, 3000, 750, 4, 0.99), Some(0));
    }

    #[test]
    fn encode_decode_roundtrip_within_one_frame() {
        let (t_bank, f) = (50usize, 4usize);
        let cur = 10_000u64;
        for slot in 0..t_bank {
            let age = ((t_bank - slot) * f) as u64; // slot 0 = oldest
            let arrival = cur - age;
            let rel = encode_pick(Some(arrival), cur, t_bank, f);
            assert!(rel < 1.0);
            let back = decode_pick(rel, cur, t_bank, f, 1.1).unwrap();
            assert!(back.abs_diff(arrival) <= f as u64, "slot {slot}");
        }
        // Outside the bank or in the future -> absent.
        assert_eq!(encode_pick(Some(0), cur, t_bank, f), 1.0);
        assert_eq!(encode_pick(Some(cur + 5), cur, t_bank, f), 1.0);
        assert_eq!(encode_pick(None, cur, t_bank, f), 1.0);
    }

    #[test]
    fn aggregate_single_and_median_and_split() {
        let got = aggregate_picks(&[(Phase::P, 500)], 100);
        assert_eq!(got, vec![PickEvent { phase: Phase::P, sample_index: 500 }]);

        let got = aggregate_picks(&[(Phase::P, 500), (Phase::P, 502), (Phase::P, 498)], 100);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].sample_index, 500);

        let got = aggregate_picks(&[(Phase::P, 500), (Phase::P, 5000)], 100);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn zero_weight_heads_emit_biases() {
        let dcfg = toy_dcfg();
        let d = 8;
        let mut rng = stream(41, Stream::Test(0));
        let mut p = DecoderParams::<f32>::init(&dcfg, d, &mut rng);
        for w in [
            &mut p.pick_w1,
            &mut p.pick_w2,
            &mut p.pick_w3,
            &mut p.pick_lin_w,
            &mut p.loc_w1,
            &mut p.loc_w2,
            &mut p.mag_w1,
            &mut p.mag_w2,
        ] {
            *w = Tensor::zeros(w.shape());
        }
        p.pick_lin_b = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        p.loc_b2 = Tensor::from_vec(&[2], vec![1.5, -2.5]).unwrap();
        p.mag_b2 = Tensor::from_vec(&[1], vec![3.25]).unwrap();
        let mut ds = DecoderStream::new(&dcfg, &p, d, 10);
        let e = vec![0.5f32; d];
        let out = ds.step(&e);
        assert!((out.p_rel - kn::sigmoid(0.3f32)).abs() < 1e-7);
        assert!((out.s_rel - kn::sigmoid(-0.7f32)).abs() < 1e-7);
        assert_eq!(out.x_km, 1.5);
        assert_eq!(out.y_km, -2.5);
        assert_eq!(out.magnitude, 3.25);
    }

    #[test]
    fn parallel_and_streaming_decode_agree_bitwise() {
        let dcfg = toy_dcfg();
        let d = 8;
        let bank_len = 6;
        let mut rng = stream(42, Stream::Test(1));
        let p = DecoderParams::<f32>::init(&dcfg, d, &mut rng);
        let l = 20;
        let e = Tensor::<f32>::randn(&[l, d], 1.0, &mut rng);

        let mut tape = Tape::new();
        let mut order = Vec::new();
        let ids = register_decoder(&mut tape, &p, &mut order);
        let eid = tape.constant(e.clone());
        let out = decode_on_tape(&mut tape, &dcfg, &ids, eid, bank_len).unwrap();

        let mut ds = DecoderStream::new(&dcfg, &p, d, bank_len);
        for t in 0..l {
            let hv = ds.step(e.row(t));
            assert_eq!(hv.p_rel, tape.value(out.pick).get2(t, 0), "p t={t}");
            assert_eq!(hv.s_rel, tape.value(out.pick).get2(t, 1), "s t={t}");
            assert_eq!(hv.x_km, tape.value(out.loc).get2(t, 0), "x t={t}");
            assert_eq!(hv.y_km, tape.value(out.loc).get2(t, 1), "y t={t}");
            assert_eq!(hv.magnitude, tape.value(out.mag).get2(t, 0), "mag t={t}");
        }
    }

    #[test]
    fn literal_bank_pick_head_matches_stream_before_eviction() {
        let dcfg = toy_dcfg();
        let d = 8;
        let bank_len = 12;
        let mut rng = stream(43, Stream::Test(2));
        let p = DecoderParams::<f32>::init(&dcfg, d, &mut rng);
        let mut ds = DecoderStream::new(&dcfg, &p, d, bank_len);
        let mut bank = MemoryBank::<f32>::new(d, bank_len);
        let mut rngx = stream(44, Stream::Test(3));
        for _ in 0..bank_len {
            let e = Tensor::<f32>::randn(&[d], 1.0, &mut rngx);
            bank.push(e.data()).unwrap();
            let hv = ds.step(e.data());
            let (lp, ls) = pick_head(&bank, &dcfg, &p);
            assert!((hv.p_rel - lp).abs() < 1e-6);
            assert!((hv.s_rel - ls).abs() < 1e-6);
        }
    }

    #[test]
    fn location_error_three_four_five() {
        assert_eq!(distance_km(3.0, 4.0), 5.0);
        assert!((back_azimuth_deg(1.0, 0.0) - 90.0).abs() < 1e-12);
        assert!((back_azimuth_deg(0.0, -1.0) - 180.0).abs() < 1e-12);
    }
}
