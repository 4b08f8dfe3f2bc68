//! Retention encoder: a stack of blocks, each multi-scale retention plus an
//! FFN, executable two ways with identical results up to float reordering —
//! whole-sequence matrix form for training, per-step state updates for
//! streaming. The per-head state is a d x d accumulator; the decay ladder
//! gives heads memory horizons from tens to hundreds of steps.

// Resolves f64 math in no_std builds; std builds use inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::NORM_EPS;
use crate::kernels as kn;
use crate::scalar::{real, Real};
use crate::tape::{Tape, ValueId};
use crate::tensor::{invalid, Tensor, TensorError};

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionConfig {
    pub n_blocks: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    /// Per-head decay factors, strictly increasing in (0, 1).
    pub gammas: Vec<f64>,
}

impl RetentionConfig {
    /// Standard decay ladder gamma_h = 1 - 2^(-5-h).
    pub fn default_gammas(n_heads: usize) -> Vec<f64> {
        (0..n_heads).map(|h| 1.0 - (-5.0 - h as f64).exp2()).collect()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.n_blocks == 0 || self.model_dim == 0 || self.n_heads == 0 || self.ffn_hidden == 0 {
            return Err(invalid("retention config", "dims must be positive"));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(invalid(
                "retention config",
                format!(
                    "model_dim {} not divisible by {} heads",
                    self.model_dim, self.n_heads
                ),
            ));
        }
        if self.head_dim() % 2 != 0 {
            return Err(invalid(
                "retention config",
                format!("head dim {} must be even for rotary pairs", self.head_dim()),
            ));
        }
        if self.gammas.len() != self.n_heads {
            return Err(invalid("retention config", "one gamma per head"));
        }
        for w in self.gammas.windows(2) {
            if w[1] <= w[0] {
                return Err(invalid("retention config", "gammas must be strictly increasing"));
            }
        }
        for &g in &self.gammas {
            if !(g > 0.0 && g < 1.0) {
                return Err(invalid("retention config", format!("gamma {g} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One block's parameters.
#[derive(Debug, Clone)]
pub struct BlockParams<T> {
    pub pre_msr_gain: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wg: Tensor<T>,
    pub gate_gain: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
    pub pre_ffn_gain: Tensor<T>,
    pub ffn_w1: Tensor<T>,
    pub ffn_b1: Tensor<T>,
    pub ln_gain: Tensor<T>,
    pub ln_bias: Tensor<T>,
    pub ffn_w2: Tensor<T>,
    pub ffn_b2: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderParams<T> {
    pub blocks: Vec<BlockParams<T>>,
}

impl<T: Real> EncoderParams<T> {
    pub fn init(cfg: &RetentionConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_dim;
        let f = cfg.ffn_hidden;
        let proj_std = 1.0 / (d as f64).sqrt();
        // Residual-branch outputs scaled down with depth.
        let res_scale = 1.0 / (2.0 * cfg.n_blocks as f64).sqrt();
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockParams {
                pre_msr_gain: Tensor::full(&[d], T::one()),
                wq: Tensor::randn(&[d, d], proj_std, rng),
                wk: Tensor::randn(&[d, d], proj_std, rng),
                wv: Tensor::randn(&[d, d], proj_std, rng),
                wg: Tensor::randn(&[d, d], proj_std, rng),
                gate_gain: Tensor::full(&[d], T::one()),
                out_w: Tensor::randn(&[d, d], proj_std * res_scale, rng),
                out_b: Tensor::zeros(&[d]),
                pre_ffn_gain: Tensor::full(&[d], T::one()),
                ffn_w1: Tensor::randn(&[d, f], proj_std, rng),
                ffn_b1: Tensor::zeros(&[f]),
                ln_gain: Tensor::full(&[f], T::one()),
                ln_bias: Tensor::zeros(&[f]),
                ffn_w2: Tensor::randn(&[f, d], res_scale / (f as f64).sqrt(), rng),
                ffn_b2: Tensor::zeros(&[d]),
            })
            .collect();
        EncoderParams { blocks }
    }

    pub fn for_each(&self, f: &mut impl FnMut(String, &Tensor<T>)) {
        for (bi, b) in self.blocks.iter().enumerate() {
            f(format!("encoder.b{bi}.pre_msr.gain"), &b.pre_msr_gain);
            f(format!("encoder.b{bi}.wq"), &b.wq);
            f(format!("encoder.b{bi}.wk"), &b.wk);
            f(format!("encoder.b{bi}.wv"), &b.wv);
            f(format!("encoder.b{bi}.wg"), &b.wg);
            f(format!("encoder.b{bi}.gate.gain"), &b.gate_gain);
            f(format!("encoder.b{bi}.out.w"), &b.out_w);
            f(format!("encoder.b{bi}.out.b"), &b.out_b);
            f(format!("encoder.b{bi}.pre_ffn.gain"), &b.pre_ffn_gain);
            f(format!("encoder.b{bi}.ffn.w1"), &b.ffn_w1);
            f(format!("encoder.b{bi}.ffn.b1"), &b.ffn_b1);
            f(format!("encoder.b{bi}.ffn.ln.gain"), &b.ln_gain);
            f(format!("encoder.b{bi}.ffn.ln.bias"), &b.ln_bias);
            f(format!("encoder.b{bi}.ffn.w2"), &b.ffn_w2);
            f(format!("encoder.b{bi}.ffn.b2"), &b.ffn_b2);
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        for (bi, b) in self.blocks.iter_mut().enumerate() {
            f(format!("encoder.b{bi}.pre_msr.gain"), &mut b.pre_msr_gain);
            f(format!("encoder.b{bi}.wq"), &mut b.wq);
            f(format!("encoder.b{bi}.wk"), &mut b.wk);
            f(format!("encoder.b{bi}.wv"), &mut b.wv);
            f(format!("encoder.b{bi}.wg"), &mut b.wg);
            f(format!("encoder.b{bi}.gate.gain"), &mut b.gate_gain);
            f(format!("encoder.b{bi}.out.w"), &mut b.out_w);
            f(format!("encoder.b{bi}.out.b"), &mut b.out_b);
            f(format!("encoder.b{bi}.pre_ffn.gain"), &mut b.pre_ffn_gain);
            f(format!("encoder.b{bi}.ffn.w1"), &mut b.ffn_w1);
            f(format!("encoder.b{bi}.ffn.b1"), &mut b.ffn_b1);
            f(format!("encoder.b{bi}.ffn.ln.gain"), &mut b.ln_gain);
            f(format!("encoder.b{bi}.ffn.ln.bias"), &mut b.ln_bias);
            f(format!("encoder.b{bi}.ffn.w2"), &mut b.ffn_w2);
            f(format!("encoder.b{bi}.ffn.b2"), &mut b.ffn_b2);
        }
    }
}

pub struct BlockParamIds {
    pub pre_msr_gain: ValueId,
    pub wq: ValueId,
    pub wk: ValueId,
    pub wv: ValueId,
    pub wg: ValueId,
    pub gate_gain: ValueId,
    pub out_w: ValueId,
    pub out_b: ValueId,
    pub pre_ffn_gain: ValueId,
    pub ffn_w1: ValueId,
    pub ffn_b1: ValueId,
    pub ln_gain: ValueId,
    pub ln_bias: ValueId,
    pub ffn_w2: ValueId,
    pub ffn_b2: ValueId,
}

pub struct EncoderParamIds {
    pub blocks: Vec<BlockParamIds>,
}

pub fn register_encoder<T: Real>(
    tape: &mut Tape<T>,
    params: &EncoderParams<T>,
    order: &mut Vec<ValueId>,
) -> EncoderParamIds {
    let blocks = params
        .blocks
        .iter()
        .map(|b| {
            let ids = BlockParamIds {
                pre_msr_gain: tape.param(b.pre_msr_gain.clone()),
                wq: tape.param(b.wq.clone()),
                wk: tape.param(b.wk.clone()),
                wv: tape.param(b.wv.clone()),
                wg: tape.param(b.wg.clone()),
                gate_gain: tape.param(b.gate_gain.clone()),
                out_w: tape.param(b.out_w.clone()),
                out_b: tape.param(b.out_b.clone()),
                pre_ffn_gain: tape.param(b.pre_ffn_gain.clone()),
                ffn_w1: tape.param(b.ffn_w1.clone()),
                ffn_b1: tape.param(b.ffn_b1.clone()),
                ln_gain: tape.param(b.ln_gain.clone()),
                ln_bias: tape.param(b.ln_bias.clone()),
                ffn_w2: tape.param(b.ffn_w2.clone()),
                ffn_b2: tape.param(b.ffn_b2.clone()),
            };
            order.extend_from_slice(&[
                ids.pre_msr_gain,
                ids.wq,
                ids.wk,
                ids.wv,
                ids.wg,
                ids.gate_gain,
                ids.out_w,
                ids.out_b,
                ids.pre_ffn_gain,
                ids.ffn_w1,
                ids.ffn_b1,
                ids.ln_gain,
                ids.ln_bias,
                ids.ffn_w2,
                ids.ffn_b2,
            ]);
            ids
        })
        .collect();
    EncoderParamIds { blocks }
}

// ---------------------------------------------------------------------------
// Parallel (tape) path
// ---------------------------------------------------------------------------

/// Multi-scale retention on already-normalized input. Returns the MSR output
/// and, if requested, the per-step squared increment norms [L, H].
pub fn msr_on_tape<T: Real>(
    tape: &mut Tape<T>,
    cfg: &RetentionConfig,
    ids: &BlockParamIds,
    xn: ValueId,
    pos0: u64,
    want_increments: bool,
) -> Result<(ValueId, Option<ValueId>), TensorError> {
    let q = tape.matmul(xn, ids.wq)?;
    let k = tape.matmul(xn, ids.wk)?;
    let v = tape.matmul(xn, ids.wv)?;
    let g = tape.matmul(xn, ids.wg)?;
    let inc = if want_increments {
        Some(tape.head_sqnorm_prod(k, v, cfg.n_heads)?)
    } else {
        None
    };
    let qr = tape.rope_heads(q, cfg.n_heads, pos0)?;
    let kr = tape.rope_heads(k, cfg.n_heads, pos0)?;
    let ret = tape.retention(qr, kr, v, cfg.n_heads, &cfg.gammas)?;
    let gn = tape.rmsnorm(g, ids.gate_gain, real(NORM_EPS))?;
    let gated = tape.mul(gn, ret)?;
    let proj = tape.matmul(gated, ids.out_w)?;
    let out = tape.add_bias(proj, ids.out_b, 1)?;
    Ok((out, inc))
}

/// One full block: x + MSR(norm(x)), then FFN(norm(y)) + y.
pub fn block_on_tape<T: Real>(
    tape: &mut Tape<T>,
    cfg: &RetentionConfig,
    ids: &BlockParamIds,
    x: ValueId,
    pos0: u64,
    want_increments: bool,
) -> Result<(ValueId, Option<ValueId>), TensorError> {
    let xn = tape.rmsnorm(x, ids.pre_msr_gain, real(NORM_EPS))?;
    let (msr, inc) = msr_on_tape(tape, cfg, ids, xn, pos0, want_increments)?;
    let y = tape.add(x, msr)?;
    let h = tape.rmsnorm(y, ids.pre_ffn_gain, real(NORM_EPS))?;
    let f1 = tape.matmul(h, ids.ffn_w1)?;
    let f1 = tape.add_bias(f1, ids.ffn_b1, 1)?;
    let ln = tape.layernorm(f1, ids.ln_gain, ids.ln_bias, real(NORM_EPS))?;
    let act = tape.gelu(ln);
    let f2 = tape.matmul(act, ids.ffn_w2)?;
    let f2 = tape.add_bias(f2, ids.ffn_b2, 1)?;
    let out = tape.add(f2, y)?;
    Ok((out, inc))
}

/// Block stack. Returns prediction embeddings [L, D] and per-block increment
/// norm tensors when requested.
pub fn encoder_on_tape<T: Real>(
    tape: &mut Tape<T>,
    cfg: &RetentionConfig,
    ids: &EncoderParamIds,
    we: ValueId,
    pos0: u64,
    want_increments: bool,
) -> Result<(ValueId, Vec<ValueId>), TensorError> {
    let mut x = we;
    let mut incs = Vec::new();
    for b in &ids.blocks {
        let (nx, inc) = block_on_tape(tape, cfg, b, x, pos0, want_increments)?;
        x = nx;
        if let Some(i) = inc {
            incs.push(i);
        }
    }
    Ok((x, incs))
}

// ---------------------------------------------------------------------------
// Recurrent path
// ---------------------------------------------------------------------------

/// Per-block recurrent state: one d x d accumulator per head.
#[derive(Debug, Clone)]
pub struct BlockState<T> {
    pub heads: Vec<Tensor<T>>,
}

/// Whole-encoder state plus the shared position counter that drives rotary
/// angles. Initialized to zero; reset returns it to exactly this state.
#[derive(Debug, Clone)]
pub struct EncoderState<T> {
    pub blocks: Vec<BlockState<T>>,
    pub position: u64,
}

impl<T: Real> EncoderState<T> {
    pub fn new(cfg: &RetentionConfig) -> Self {
        let d = cfg.head_dim();
        EncoderState {
            blocks: (0..cfg.n_blocks)
                .map(|_| BlockState {
                    heads: (0..cfg.n_heads).map(|_| Tensor::zeros(&[d, d])).collect(),
                })
                .collect(),
            position: 0,
        }
    }

    pub fn reset(&mut self) {
        for b in self.blocks.iter_mut() {
            for h in b.heads.iter_mut() {
                for v in h.data_mut() {
                    *v = T::zero();
                }
            }
        }
        self.position = 0;
    }

    /// Frobenius norm over every accumulator entry.
    pub fn norm(&self) -> T {
        let mut acc = T::zero();
        for b in &self.blocks {
            for h in &b.heads {
                for &v in h.data() {
                    acc = acc + v * v;
                }
            }
        }
        acc.sqrt()
    }

    pub fn state_bytes(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.heads.iter().map(|h| h.numel()).sum::<usize>())
            .sum::<usize>()
            * core::mem::size_of::<T>()
    }
}

/// Scratch buffers reused across steps so the per-step path allocates nothing.
pub struct EncoderScratch<T> {
    xn: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    g: Vec<T>,
    gn: Vec<T>,
    ret: Vec<T>,
    out: Vec<T>,
    ffn_h: Vec<T>,
    ffn_ln: Vec<T>,
    ffn_out: Vec<T>,
}

impl<T: Real> EncoderScratch<T> {
    pub fn new(cfg: &RetentionConfig) -> Self {
        let d = cfg.model_dim;
        let f = cfg.ffn_hidden;
        EncoderScratch {
            xn: vec![T::zero(); d],
            q: vec![T::zero(); d],
            k: vec![T::zero(); d],
            v: vec![T::zero(); d],
            g: vec![T::zero(); d],
            gn: vec![T::zero(); d],
            ret: vec![T::zero(); d],
            out: vec![T::zero(); d],
            ffn_h: vec![T::zero(); f],
            ffn_ln: vec![T::zero(); f],
            ffn_out: vec![T::zero(); d],
        }
    }
}

/// One recurrent retention step for a single head:
/// H <- gamma H + v (x) k, then o = H (q / sqrt(d)).
pub fn retention_step_head<T: Real>(
    h: &mut [T],
    d: usize,
    q: &[T],
    k: &[T],
    v: &[T],
    gamma: T,
    out: &mut [T],
) {
    let inv_sqrt_d = T::one() / real::<T>(d as f64).sqrt();
    for c in 0..d {
        let row = &mut h[c * d..(c + 1) * d];
        let vc = v[c];
        for (a, hv) in row.iter_mut().enumerate() {
            *hv = gamma * *hv + vc * k[a];
        }
        out[c] = kn::dot(row, q) * inv_sqrt_d;
    }
}

fn matvec_row<T: Real>(x: &[T], w: &Tensor<T>, out: &mut [T]) {
    for o in out.iter_mut() {
        *o = T::zero();
    }
    kn::matmul_acc(x, w.data(), 1, w.shape()[0], w.shape()[1], out);
}

/// One recurrent block step; `x` is updated in place.
pub fn block_step<T: Real>(
    cfg: &RetentionConfig,
    p: &BlockParams<T>,
    state: &mut BlockState<T>,
    position: u64,
    x: &mut [T],
    s: &mut EncoderScratch<T>,
    mut increments: Option<&mut Vec<T>>,
) {
    let dh = cfg.head_dim();
    kn::rmsnorm_row(x, p.pre_msr_gain.data(), real(NORM_EPS), &mut s.xn);
    matvec_row(&s.xn, &p.wq, &mut s.q);
    matvec_row(&s.xn, &p.wk, &mut s.k);
    matvec_row(&s.xn, &p.wv, &mut s.v);
    matvec_row(&s.xn, &p.wg, &mut s.g);
    if let Some(inc) = increments.as_deref_mut() {
        for h in 0..cfg.n_heads {
            let ks = &s.k[h * dh..(h + 1) * dh];
            let vs = &s.v[h * dh..(h + 1) * dh];
            inc.push((kn::dot(ks, ks) * kn::dot(vs, vs)).sqrt());
        }
    }
    for h in 0..cfg.n_heads {
        kn::rope_rotate(&mut s.q[h * dh..(h + 1) * dh], position, crate::tape::ROPE_BASE, false);
        kn::rope_rotate(&mut s.k[h * dh..(h + 1) * dh], position, crate::tape::ROPE_BASE, false);
    }
    for h in 0..cfg.n_heads {
        retention_step_head(
            state.heads[h].data_mut(),
            dh,
            &s.q[h * dh..(h + 1) * dh],
            &s.k[h * dh..(h + 1) * dh],
            &s.v[h * dh..(h + 1) * dh],
            real(cfg.gammas[h]),
            &mut s.ret[h * dh..(h + 1) * dh],
        );
    }
    kn::rmsnorm_row(&s.g, p.gate_gain.data(), real(NORM_EPS), &mut s.gn);
    for (gv, rv) in s.gn.iter_mut().zip(&s.ret) {
        *gv = *gv * *rv;
    }
    matvec_row(&s.gn, &p.out_w, &mut s.out);
    for ((xv, &ov), &bv) in x.iter_mut().zip(&s.out).zip(p.out_b.data()) {
        *xv = *xv + ov + bv;
    }
    // FFN sublayer on y (now in x).
    kn::rmsnorm_row(x, p.pre_ffn_gain.data(), real(NORM_EPS), &mut s.xn);
    matvec_row(&s.xn, &p.ffn_w1, &mut s.ffn_h);
    for (hv, &bv) in s.ffn_h.iter_mut().zip(p.ffn_b1.data()) {
        *hv = *hv + bv;
    }
    kn::layernorm_row(
        &s.ffn_h,
        p.ln_gain.data(),
        p.ln_bias.data(),
        real(NORM_EPS),
        &mut s.ffn_ln,
    );
    for v in s.ffn_ln.iter_mut() {
        *v = kn::gelu(*v);
    }
    matvec_row(&s.ffn_ln, &p.ffn_w2, &mut s.ffn_out);
    for ((xv, &fv), &bv) in x.iter_mut().zip(&s.ffn_out).zip(p.ffn_b2.data()) {
        *xv = *xv + fv + bv;
    }
}

/// One recurrent encoder step over the whole stack; advances the position
/// counter once. The per-step work is a fixed number of operations,
/// independent of how many steps came before.
pub fn encoder_step<T: Real>(
    cfg: &RetentionConfig,
    params: &EncoderParams<T>,
    state: &mut EncoderState<T>,
    x: &mut [T],
    scratch: &mut EncoderScratch<T>,
    mut increments: Option<&mut Vec<T>>,
) {
    for (bi, p) in params.blocks.iter().enumerate() {
        block_step(
            cfg,
            p,
            &mut state.blocks[bi],
            state.position,
            x,
            scratch,
            increments.as_deref_mut(),
        );
    }
    state.position += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::tensor::max_abs_diff;

    fn toy_cfg(d: usize, heads: usize, blocks: usize) -> RetentionConfig {
        RetentionConfig {
            n_blocks: blocks,
            model_dim: d,
            n_heads: heads,
            ffn_hidden: 2 * d,
            gammas: RetentionConfig::default_gammas(heads),
        }
    }

    fn parallel_encode(
        cfg: &RetentionConfig,
        params: &EncoderParams<f32>,
        x: &Tensor<f32>,
        want_inc: bool,
    ) -> (Tensor<f32>, Vec<Tensor<f32>>) {
        let mut tape = Tape::new();
        let mut order = Vec::new();
        let ids = register_encoder(&mut tape, params, &mut order);
        let xid = tape.constant(x.clone());
        let (out, incs) = encoder_on_tape(&mut tape, cfg, &ids, xid, 0, want_inc).unwrap();
        let inct = incs.iter().map(|&i| tape.value(i).clone()).collect();
        (tape.value(out).clone(), inct)
    }

    fn recurrent_encode(
        cfg: &RetentionConfig,
        params: &EncoderParams<f32>,
        x: &Tensor<f32>,
    ) -> Tensor<f32> {
        let mut state = EncoderState::new(cfg);
        let mut scratch = EncoderScratch::new(cfg);
        let mut out = Tensor::zeros(x.shape());
        for t in 0..x.rows() {
            let mut row = x.row(t).to_vec();
            encoder_step(cfg, params, &mut state, &mut row, &mut scratch, None);
            out.row_mut(t).copy_from_slice(&row);
        }
        out
    }

    #[test]
    fn gamma_ladder_matches_schedule() {
        let g = RetentionConfig::default_gammas(4);
        assert_eq!(g, vec![1.0 - 2f64.powi(-5), 1.0 - 2f64.powi(-6), 1.0 - 2f64.powi(-7), 1.0 - 2f64.powi(-8)]);
        assert!(toy_cfg(32, 4, 2).validate().is_ok());
    }

    #[test]
    fn config_rejects_bad_shapes() {
        let mut cfg = toy_cfg(30, 4, 2);
        assert!(cfg.validate().is_err()); // 30 % 4 != 0
        cfg = toy_cfg(8, 4, 1);
        cfg.gammas = vec![0.9, 0.5, 0.95, 0.99]; // not increasing
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn recurrent_step_with_zero_state_matches_single_parallel() {
        let mut rng = stream(31, Stream::Test(0));
        let d = 4;
        let q = Tensor::<f64>::randn(&[d], 1.0, &mut rng);
        let k = Tensor::<f64>::randn(&[d], 1.0, &mut rng);
        let v = Tensor::<f64>::randn(&[d], 1.0, &mut rng);
        let mut h = vec![0.0f64; d * d];
        let mut out = vec![0.0f64; d];
        retention_step_head(&mut h, d, q.data(), k.data(), v.data(), 0.9, &mut out);
        let s = kn::dot(q.data(), k.data()) / (d as f64).sqrt();
        for c in 0..d {
            assert!((out[c] - s * v.data()[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_increment_steps_decay_state_geometrically() {
        let mut rng = stream(32, Stream::Test(1));
        let d = 4;
        let gamma = 0.96875f64; // exactly representable
        let mut h: Vec<f64> = Tensor::<f64>::randn(&[d, d], 1.0, &mut rng).into_data();
        let h0 = h.clone();
        let norm0: f64 = h0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q = vec![0.0f64; d];
        let zero = vec![0.0f64; d];
        let mut out = vec![0.0f64; d];
        let m = 10_000;
        for _ in 0..m {
            retention_step_head(&mut h, d, &q, &zero, &zero, gamma, &mut out);
        }
        let norm: f64 = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expect = gamma.powi(m) * norm0;
        let rel = (norm - expect).abs() / expect;
        assert!(rel < 1e-11, "decay rel err {rel}");
    }

    #[test]
    fn cross_mode_equivalence_single_block() {
        let cfg = toy_cfg(16, 4, 1);
        let mut rng = stream(33, Stream::Test(2));
        let params = EncoderParams::<f32>::init(&cfg, &mut rng);
        let x = Tensor::<f32>::randn(&[64, 16], 1.0, &mut rng);
        let (par, _) = parallel_encode(&cfg, &params, &x, false);
        let rec = recurrent_encode(&cfg, &params, &x);
        let d = max_abs_diff(&par, &rec);
        assert!(d < 1e-4, "single block parallel vs recurrent diff {d}");
    }

    #[test]
    fn cross_mode_equivalence_four_block_stack() {
        let cfg = toy_cfg(16, 4, 4);
        let mut rng = stream(34, Stream::Test(3));
        let params = EncoderParams::<f32>::init(&cfg, &mut rng);
        let x = Tensor::<f32>::randn(&[96, 16], 1.0, &mut rng);
        let (par, _) = parallel_encode(&cfg, &params, &x, false);
        let rec = recurrent_encode(&cfg, &params, &x);
        let d = max_abs_diff(&par, &rec);
        assert!(d < 5e-4, "stack parallel vs recurrent diff {d}");
    }

    #[test]
    fn msr_with_zero_value_projection_outputs_bias() {
        let cfg = toy_cfg(8, 2, 1);
        let mut rng = stream(35, Stream::Test(4));
        let mut params = EncoderParams::<f32>::init(&cfg, &mut rng);
        params.blocks[0].wv = Tensor::zeros(&[8, 8]);
        let mut bias = Tensor::zeros(&[8]);
        for (i, v) in bias.data_mut().iter_mut().enumerate() {
            *v = i as f32 * 0.1 - 0.3;
        }
        params.blocks[0].out_b = bias.clone();
        let x = Tensor::<f32>::randn(&[5, 8], 1.0, &mut rng);
        let mut tape = Tape::new();
        let mut order = Vec::new();
        let ids = register_encoder(&mut tape, &params, &mut order);
        let xid = tape.constant(x);
        let (msr, _) = msr_on_tape(&mut tape, &cfg, &ids.blocks[0], xid, 0, false).unwrap();
        for t in 0..5 {
            for c in 0..8 {
                assert_eq!(tape.value(msr).get2(t, c), bias.data()[c]);
            }
        }
    }

    #[test]
    fn all_zero_weights_make_block_identity() {
        let cfg = toy_cfg(8, 2, 1);
        let mut rng = stream(36, Stream::Test(5));
        let mut params = EncoderParams::<f32>::init(&cfg, &mut rng);
        let b = &mut params.blocks[0];
        for w in [&mut b.wq, &mut b.wk, &mut b.wv, &mut b.wg, &mut b.out_w] {
            *w = Tensor::zeros(w.shape());
        }
        b.ffn_w1 = Tensor::zeros(b.ffn_w1.shape());
        b.ffn_w2 = Tensor::zeros(b.ffn_w2.shape());
        let x = Tensor::<f32>::randn(&[6, 8], 1.0, &mut rng);
        let (out, _) = parallel_encode(&cfg, &params, &x, false);
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn increments_match_between_modes() {
        let cfg = toy_cfg(8, 2, 2);
        let mut rng = stream(37, Stream::Test(6));
        let params = EncoderParams::<f32>::init(&cfg, &mut rng);
        let x = Tensor::<f32>::randn(&[10, 8], 1.0, &mut rng);
        let (_, incs) = parallel_encode(&cfg, &params, &x, true);
        assert_eq!(incs.len(), 2);
        assert_eq!(incs[0].shape(), &[10, 2]);

        let mut state = EncoderState::new(&cfg);
        let mut scratch = EncoderScratch::new(&cfg);
        for t in 0..x.rows() {
            let mut row = x.row(t).to_vec();
            let mut inc = Vec::new();
            encoder_step(&cfg, &params, &mut state, &mut row, &mut scratch, Some(&mut inc));
            // inc holds per block then head sqrt(delta^2); parallel holds delta^2.
            for b in 0..2 {
                for h in 0..2 {
                    let par = incs[b].get2(t, h).sqrt();
                    let rec = inc[b * 2 + h];
                    assert!((par - rec).abs() < 1e-4, "t={t} b={b} h={h}");
                }
            }
        }
    }
}
