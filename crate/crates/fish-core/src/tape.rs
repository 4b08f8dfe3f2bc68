//! Reverse-mode automatic differentiation on a linear tape.
//!
//! The tape owns every intermediate tensor (define-by-run). Nodes record the
//! op kind and input handles; `backward` walks the tape in reverse and
//! accumulates gradients. Handles are plain indices, so topological order is
//! construction order by definition.
//!
//! The op set is exactly what the network needs — nothing speculative. The
//! one fused op is `retention`, whose masked-decay score matrix would
//! otherwise materialize as several L x L intermediates.

// Resolves f64 math in no_std builds; std builds use inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::kernels as kn;
use crate::scalar::{real, Real};
use crate::tensor::{invalid, Tensor, TensorError};

/// Rotary embedding base, fixed.
pub const ROPE_BASE: f64 = 10000.0;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Matmul {
        a: ValueId,
        b: ValueId,
    },
    Conv1d {
        x: ValueId,
        w: ValueId,
        bias: Option<ValueId>,
        stride: usize,
        pad_left: usize,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
    /// Bias broadcast along one axis of a rank-2 tensor.
    AddBias {
        x: ValueId,
        b: ValueId,
        axis: usize,
    },
    Scale {
        x: ValueId,
        c: T,
    },
    /// x + constant tensor (targets, label encodings); gradient passes through.
    OffsetConst {
        x: ValueId,
    },
    /// x * constant tensor (masks); gradient is masked the same way.
    MulConst {
        x: ValueId,
        mask: Tensor<T>,
    },
    Abs {
        x: ValueId,
    },
    Gelu {
        x: ValueId,
    },
    Sigmoid {
        x: ValueId,
    },
    RmsNorm {
        x: ValueId,
        gain: ValueId,
        eps: T,
    },
    LayerNorm {
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
        eps: T,
    },
    RopeHeads {
        x: ValueId,
        n_heads: usize,
        pos0: u64,
    },
    Retention {
        q: ValueId,
        k: ValueId,
        v: ValueId,
        n_heads: usize,
        gammas: Vec<T>,
        /// Masked, decayed, scaled score matrix per head, saved for backward.
        scores: Vec<Tensor<T>>,
    },
    /// Per-step squared hidden-increment norms ||k_h||^2 * ||v_h||^2, [L, H].
    HeadSqnormProd {
        k: ValueId,
        v: ValueId,
        n_heads: usize,
    },
    Concat {
        parts: Vec<ValueId>,
        axis: usize,
    },
    Transpose {
        x: ValueId,
    },
    /// Trailing-window max over rows of seq, with `fill` standing in for
    /// rows before the start of the sequence.
    SlidingMax {
        seq: ValueId,
        fill: ValueId,
        arg: Vec<i64>,
    },
    FrameMean {
        x: ValueId,
        stride: usize,
    },
    SumAll {
        x: ValueId,
    },
    /// Kernel reparameterization (w - reverse(w)) / 2 along the tap axis.
    AntiSym {
        w: ValueId,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs: bool,
}

/// Gradient store produced by `Tape::backward`.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ValueId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn take(&mut self, id: ValueId) -> Option<Vec<T>> {
        self.grads[id.0].take()
    }
}

/// Reverse-mode tape.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs: bool) -> ValueId {
        self.nodes.push(Node { value, op, needs });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs
    }

    /// Trainable leaf: gradients will be computed for it.
    pub fn param(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: inputs, targets, masks.
    pub fn constant(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Op::Leaf, false)
    }

    // -- forward builders ---------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kn::matmul_acc(ta.data(), tb.data(), m, k, n, out.data_mut());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul { a, b }, needs))
    }

    /// Cross-correlation conv1d with explicit left/right zero padding.
    pub fn conv1d(
        &mut self,
        x: ValueId,
        w: ValueId,
        bias: Option<ValueId>,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<ValueId, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.shape().len() != 2 || tw.shape().len() != 3 || tw.shape()[1] != tx.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let (cin, l) = (tx.shape()[0], tx.shape()[1]);
        let (cout, k) = (tw.shape()[0], tw.shape()[2]);
        if k % 2 == 0 {
            return Err(invalid("conv1d", format_args!("kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(invalid("conv1d", "stride must be >= 1"));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d bias",
                    lhs: self.value(b).shape().to_vec(),
                    rhs: vec![cout],
                });
            }
        }
        let l_out = kn::conv_out_len(l, k, stride, pad_left, pad_right)
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                invalid(
                    "conv1d",
                    format_args!(
                        "non-positive output length for L={l}, K={k}, stride={stride}, padding=({pad_left},{pad_right})"
                    ),
                )
            })?;
        let mut out = Tensor::zeros(&[cout, l_out]);
        {
            let (tx, tw) = (self.value(x), self.value(w));
            let bias_data = bias.map(|b| self.value(b).data().to_vec());
            kn::conv1d(
                tx.data(),
                cin,
                l,
                tw.data(),
                cout,
                k,
                bias_data.as_deref(),
                stride,
                pad_left,
                l_out,
                out.data_mut(),
            );
        }
        let needs =
            self.needs(x) || self.needs(w) || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad_left,
            },
            needs,
        ))
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: ValueId,
        b: ValueId,
    ) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data).unwrap();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data).unwrap();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul { a, b }, needs))
    }

    /// Broadcast-add a rank-1 bias along `axis` of a rank-2 tensor.
    pub fn add_bias(&mut self, x: ValueId, b: ValueId, axis: usize) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let tb = self.value(b);
        if tx.shape().len() != 2 || axis > 1 || tb.numel() != tx.shape()[axis] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let mut out = tx.clone();
        for i in 0..r {
            for j in 0..c {
                let bv = if axis == 0 {
                    tb.data()[i]
                } else {
                    tb.data()[j]
                };
                out.data_mut()[i * c + j] = out.data()[i * c + j] + bv;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddBias { x, b, axis }, needs))
    }

    pub fn scale(&mut self, x: ValueId, c: T) -> ValueId {
        let data = self.value(x).iter().map(|&v| v * c).collect();
        let out = Tensor::from_vec(self.value(x).shape(), data).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, c }, needs)
    }

    /// x + constant tensor.
    pub fn offset_const(&mut self, x: ValueId, c: &Tensor<T>) -> Result<ValueId, TensorError> {
        if self.value(x).shape() != c.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "offset_const",
                lhs: self.value(x).shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let data = self
            .value(x)
            .iter()
            .zip(c.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        let out = Tensor::from_vec(c.shape(), data).unwrap();
        let needs = self.needs(x);
        Ok(self.push(out, Op::OffsetConst { x }, needs))
    }

    /// x * constant tensor (masking).
    pub fn mul_const(&mut self, x: ValueId, mask: &Tensor<T>) -> Result<ValueId, TensorError> {
        if self.value(x).shape() != mask.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                lhs: self.value(x).shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let data = self
            .value(x)
            .iter()
            .zip(mask.iter())
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::from_vec(mask.shape(), data).unwrap();
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::MulConst {
                x,
                mask: mask.clone(),
            },
            needs,
        ))
    }

    fn unary(&mut self, x: ValueId, f: impl Fn(T) -> T, mk: impl Fn(ValueId) -> Op<T>) -> ValueId {
        let data = self.value(x).iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(self.value(x).shape(), data).unwrap();
        let needs = self.needs(x);
        self.push(out, mk(x), needs)
    }

    pub fn abs(&mut self, x: ValueId) -> ValueId {
        self.unary(x, |v| v.abs(), |x| Op::Abs { x })
    }

    pub fn gelu(&mut self, x: ValueId) -> ValueId {
        self.unary(x, kn::gelu, |x| Op::Gelu { x })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        self.unary(x, kn::sigmoid, |x| Op::Sigmoid { x })
    }

    /// RMS normalization over the last axis with a learned gain.
    pub fn rmsnorm(&mut self, x: ValueId, gain: ValueId, eps: T) -> Result<ValueId, TensorError> {
        let d = *self.value(x).shape().last().unwrap();
        if self.value(gain).numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "rmsnorm",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let tx = self.value(x);
        let n_rows = tx.numel() / d;
        let mut out = Tensor::zeros(tx.shape());
        for r in 0..n_rows {
            let xrow = &tx.data()[r * d..(r + 1) * d];
            kn::rmsnorm_row(
                xrow,
                self.value(gain).data(),
                eps,
                &mut out.data_mut()[r * d..(r + 1) * d],
            );
        }
        let needs = self.needs(x) || self.needs(gain);
        Ok(self.push(out, Op::RmsNorm { x, gain, eps }, needs))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layernorm(
        &mut self,
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
        eps: T,
    ) -> Result<ValueId, TensorError> {
        let d = *self.value(x).shape().last().unwrap();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let tx = self.value(x);
        let n_rows = tx.numel() / d;
        let mut out = Tensor::zeros(tx.shape());
        for r in 0..n_rows {
            kn::layernorm_row(
                &tx.data()[r * d..(r + 1) * d],
                self.value(gain).data(),
                self.value(bias).data(),
                eps,
                &mut out.data_mut()[r * d..(r + 1) * d],
            );
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }, needs))
    }

    /// Rotary position embedding applied per head; row i gets angle
    /// (pos0 + i) * theta_j.
    pub fn rope_heads(
        &mut self,
        x: ValueId,
        n_heads: usize,
        pos0: u64,
    ) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let d_model = tx.cols();
        if d_model % n_heads != 0 || (d_model / n_heads) % 2 != 0 {
            return Err(invalid(
                "rope",
                format_args!("head dim {}/{n_heads} must be even", d_model),
            ));
        }
        let dh = d_model / n_heads;
        let rows = tx.rows();
        let mut out = tx.clone();
        for i in 0..rows {
            let row = out.row_mut(i);
            for h in 0..n_heads {
                kn::rope_rotate(&mut row[h * dh..(h + 1) * dh], pos0 + i as u64, ROPE_BASE, false);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::RopeHeads { x, n_heads, pos0 }, needs))
    }

    /// Multi-head retention in parallel mode:
    /// O_i = sum_{j<=i} gamma^{i-j} (q_i . k_j) v_j / sqrt(d), per head.
    pub fn retention(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
        n_heads: usize,
        gammas: &[f64],
    ) -> Result<ValueId, TensorError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "retention",
                lhs: tq.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let d_model = tq.cols();
        if d_model % n_heads != 0 || gammas.len() != n_heads {
            return Err(invalid(
                "retention",
                format_args!("{n_heads} heads incompatible with dim {d_model}"),
            ));
        }
        let l = tq.rows();
        let dh = d_model / n_heads;
        let inv_sqrt_d = real::<T>(1.0 / (dh as f64).sqrt());
        let mut out = Tensor::zeros(&[l, d_model]);
        let mut scores = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let gamma = real::<T>(gammas[h]);
            // Decay powers built iteratively, matching the recurrent update's
            // repeated multiplication.
            let mut pows = vec![T::one(); l];
            for m in 1..l {
                pows[m] = pows[m - 1] * gamma;
            }
            let qh = copy_head(tq, h, dh);
            let kh = copy_head(tk, h, dh);
            let vh = copy_head(tv, h, dh);
            let mut s = Tensor::zeros(&[l, l]);
            for i in 0..l {
                let qrow = &qh[i * dh..(i + 1) * dh];
                let srow = &mut s.data_mut()[i * l..i * l + i + 1];
                for (j, sv) in srow.iter_mut().enumerate() {
                    *sv = kn::dot(qrow, &kh[j * dh..(j + 1) * dh]) * inv_sqrt_d * pows[i - j];
                }
            }
            for i in 0..l {
                let srow = &s.data()[i * l..i * l + i + 1];
                let orow = &mut out.row_mut(i)[h * dh..(h + 1) * dh];
                for (j, &sv) in srow.iter().enumerate() {
                    kn::axpy(sv, &vh[j * dh..(j + 1) * dh], orow);
                }
            }
            scores.push(s);
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            out,
            Op::Retention {
                q,
                k,
                v,
                n_heads,
                gammas: gammas.iter().map(|&g| real::<T>(g)).collect(),
                scores,
            },
            needs,
        ))
    }

    /// Squared hidden-increment norms per step and head:
    /// out[t, h] = ||k_h(t)||^2 * ||v_h(t)||^2.
    pub fn head_sqnorm_prod(
        &mut self,
        k: ValueId,
        v: ValueId,
        n_heads: usize,
    ) -> Result<ValueId, TensorError> {
        self.binary_same_shape("head_sqnorm_prod", k, v)?;
        let (tk, tv) = (self.value(k), self.value(v));
        let (l, d_model) = (tk.rows(), tk.cols());
        if d_model % n_heads != 0 {
            return Err(invalid("head_sqnorm_prod", "dim not divisible by heads"));
        }
        let dh = d_model / n_heads;
        let mut out = Tensor::zeros(&[l, n_heads]);
        for t in 0..l {
            for h in 0..n_heads {
                let ks = &tk.row(t)[h * dh..(h + 1) * dh];
                let vs = &tv.row(t)[h * dh..(h + 1) * dh];
                out.data_mut()[t * n_heads + h] = kn::dot(ks, ks) * kn::dot(vs, vs);
            }
        }
        let needs = self.needs(k) || self.needs(v);
        Ok(self.push(out, Op::HeadSqnormProd { k, v, n_heads }, needs))
    }

    /// Concatenate rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[ValueId], axis: usize) -> Result<ValueId, TensorError> {
        if parts.is_empty() || axis > 1 {
            return Err(invalid("concat", "needs parts and axis in {0,1}"));
        }
        let other = 1 - axis;
        let common = self.value(parts[0]).shape()[other];
        let mut along = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[other] != common {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            along += s[axis];
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(along * common);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_vec(&[along, common], data).unwrap()
        } else {
            let rows = common;
            let mut out = Tensor::zeros(&[rows, along]);
            for r in 0..rows {
                let mut off = 0;
                for &p in parts {
                    let t = self.value(p);
                    let c = t.cols();
                    out.row_mut(r)[off..off + c].copy_from_slice(t.row(r));
                    off += c;
                }
            }
            out
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId, TensorError> {
        if self.value(x).shape().len() != 2 {
            return Err(invalid("transpose", "rank-2 only"));
        }
        let out = self.value(x).transposed();
        let needs = self.needs(x);
        Ok(self.push(out, Op::Transpose { x }, needs))
    }

    /// Per-channel max over the trailing `window` rows of `seq`; rows before
    /// the sequence start read as the `fill` row. Ties keep the oldest row.
    pub fn sliding_max(
        &mut self,
        seq: ValueId,
        fill: ValueId,
        window: usize,
    ) -> Result<ValueId, TensorError> {
        let (ts, tf) = (self.value(seq), self.value(fill));
        let (l, c) = (ts.rows(), ts.cols());
        if tf.numel() != c || window == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "sliding_max",
                lhs: ts.shape().to_vec(),
                rhs: tf.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(&[l, c]);
        let mut arg = vec![0i64; l * c];
        for t in 0..l {
            let lo = t as i64 - window as i64 + 1;
            for ch in 0..c {
                let (mut best, mut besti) = if lo < 0 {
                    (tf.data()[ch], -1i64)
                } else {
                    (ts.get2(lo as usize, ch), lo)
                };
                let from = if lo < 0 { 0 } else { lo as usize + 1 };
                for u in from..=t {
                    let v = ts.get2(u, ch);
                    if v > best {
                        best = v;
                        besti = u as i64;
                    }
                }
                out.data_mut()[t * c + ch] = best;
                arg[t * c + ch] = besti;
            }
        }
        let needs = self.needs(seq) || self.needs(fill);
        Ok(self.push(
            out,
            Op::SlidingMax { seq, fill, arg },
            needs,
        ))
    }

    /// Mean-pool frames of `stride` columns of a [C, L] tensor.
    pub fn frame_mean(&mut self, x: ValueId, stride: usize) -> Result<ValueId, TensorError> {
        let tx = self.value(x);
        let (cin, l) = (tx.rows(), tx.cols());
        if stride == 0 || l / stride == 0 {
            return Err(invalid("frame_mean", "empty output"));
        }
        let l_out = l / stride;
        let mut out = Tensor::zeros(&[cin, l_out]);
        kn::frame_mean(tx.data(), cin, l, stride, l_out, out.data_mut());
        let needs = self.needs(x);
        Ok(self.push(out, Op::FrameMean { x, stride }, needs))
    }

    /// Sum of all elements, as a [1] tensor.
    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let s = self.value(x).iter().fold(T::zero(), |a, &v| a + v);
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, needs)
    }

    /// Anti-symmetrize conv kernels along the tap axis; the center tap
    /// becomes exactly zero, so constant inputs produce zero response.
    pub fn antisymmetrize(&mut self, w: ValueId) -> Result<ValueId, TensorError> {
        let tw = self.value(w);
        if tw.shape().len() != 3 {
            return Err(invalid("antisymmetrize", "expects [Cout, Cin, K] kernels"));
        }
        let k = tw.shape()[2];
        if k % 2 == 0 {
            return Err(invalid(
                "antisymmetrize",
                format_args!("kernel size {k} must be odd"),
            ));
        }
        let mut out = tw.clone();
        let half = real::<T>(0.5);
        let rows = tw.numel() / k;
        for r in 0..rows {
            for t in 0..k {
                let a = tw.data()[r * k + t];
                let b = tw.data()[r * k + (k - 1 - t)];
                out.data_mut()[r * k + t] = (a - b) * half;
            }
        }
        let needs = self.needs(w);
        Ok(self.push(out, Op::AntiSym { w }, needs))
    }

    // -- backward -----------------------------------------------------------

    /// Backpropagate from a scalar loss; consumes the tape.
    pub fn backward(self, loss: ValueId) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(
                "backward",
                format_args!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..n).rev() {
            if !self.nodes[i].needs {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            // Leaf grads are the product; re-store them.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn ensure<'a>(&self, grads: &'a mut Vec<Option<Vec<T>>>, id: ValueId) -> &'a mut Vec<T> {
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); self.nodes[id.0].value.numel()]);
        }
        slot.as_mut().unwrap()
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, i: usize, g: &[T], grads: &mut Vec<Option<Vec<T>>>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.needs(*a) {
                    let bd = self.value(*b).data().to_vec();
                    let da = self.ensure(grads, *a);
                    kn::matmul_nt_acc(g, &bd, m, n, k, da);
                }
                if self.needs(*b) {
                    let ad = self.value(*a).data().to_vec();
                    let db = self.ensure(grads, *b);
                    kn::matmul_tn_acc(&ad, g, m, k, n, db);
                }
            }
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad_left,
            } => {
                let (cin, l) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let (cout, k) = (self.value(*w).shape()[0], self.value(*w).shape()[2]);
                let l_out = node.value.shape()[1];
                let xd = self.value(*x).data().to_vec();
                let wd = self.value(*w).data().to_vec();
                let mut dx = if self.needs(*x) {
                    Some(vec![T::zero(); cin * l])
                } else {
                    None
                };
                let mut dw = if self.needs(*w) {
                    Some(vec![T::zero(); cout * cin * k])
                } else {
                    None
                };
                let mut db = bias
                    .filter(|b| self.needs(*b))
                    .map(|_| vec![T::zero(); cout]);
                kn::conv1d_backward(
                    &xd,
                    cin,
                    l,
                    &wd,
                    cout,
                    k,
                    *stride,
                    *pad_left,
                    l_out,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    kn::axpy(T::one(), &dx, self.ensure(grads, *x));
                }
                if let Some(dw) = dw {
                    kn::axpy(T::one(), &dw, self.ensure(grads, *w));
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    kn::axpy(T::one(), &db, self.ensure(grads, *b));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    kn::axpy(T::one(), g, self.ensure(grads, *a));
                }
                if self.needs(*b) {
                    kn::axpy(T::one(), g, self.ensure(grads, *b));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let bd = self.value(*b).data().to_vec();
                    let da = self.ensure(grads, *a);
                    for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(&bd) {
                        *d = *d + gv * bv;
                    }
                }
                if self.needs(*b) {
                    let ad = self.value(*a).data().to_vec();
                    let db = self.ensure(grads, *b);
                    for ((d, &gv), &av) in db.iter_mut().zip(g).zip(&ad) {
                        *d = *d + gv * av;
                    }
                }
            }
            Op::AddBias { x, b, axis } => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                if self.needs(*x) {
                    kn::axpy(T::one(), g, self.ensure(grads, *x));
                }
                if self.needs(*b) {
                    let db = self.ensure(grads, *b);
                    for i2 in 0..r {
                        for j in 0..c {
                            let idx = if *axis == 0 { i2 } else { j };
                            db[idx] = db[idx] + g[i2 * c + j];
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.needs(*x) {
                    kn::axpy(*c, g, self.ensure(grads, *x));
                }
            }
            Op::OffsetConst { x } => {
                if self.needs(*x) {
                    kn::axpy(T::one(), g, self.ensure(grads, *x));
                }
            }
            Op::MulConst { x, mask } => {
                if self.needs(*x) {
                    let dx = self.ensure(grads, *x);
                    for ((d, &gv), &mv) in dx.iter_mut().zip(g).zip(mask.iter()) {
                        *d = *d + gv * mv;
                    }
                }
            }
            Op::Abs { x } => {
                if self.needs(*x) {
                    let xd = self.value(*x).data().to_vec();
                    let dx = self.ensure(grads, *x);
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(&xd) {
                        // Subgradient 0 at exactly 0.
                        let s = if xv > T::zero() {
                            T::one()
                        } else if xv < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *d = *d + gv * s;
                    }
                }
            }
            Op::Gelu { x } => {
                if self.needs(*x) {
                    let xd = self.value(*x).data().to_vec();
                    let dx = self.ensure(grads, *x);
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(&xd) {
                        *d = *d + gv * kn::dgelu(xv);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    let yd = node.value.data().to_vec();
                    let dx = self.ensure(grads, *x);
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(&yd) {
                        *d = *d + gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::RmsNorm { x, gain, eps } => {
                let d = *self.value(*x).shape().last().unwrap();
                let rows = self.value(*x).numel() / d;
                let xd = self.value(*x).data().to_vec();
                let gd = self.value(*gain).data().to_vec();
                let mut dx = vec![T::zero(); xd.len()];
                let mut dg = vec![T::zero(); d];
                for r in 0..rows {
                    kn::rmsnorm_backward_row(
                        &xd[r * d..(r + 1) * d],
                        &gd,
                        *eps,
                        &g[r * d..(r + 1) * d],
                        &mut dx[r * d..(r + 1) * d],
                        &mut dg,
                    );
                }
                if self.needs(*x) {
                    kn::axpy(T::one(), &dx, self.ensure(grads, *x));
                }
                if self.needs(*gain) {
                    kn::axpy(T::one(), &dg, self.ensure(grads, *gain));
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let d = *self.value(*x).shape().last().unwrap();
                let rows = self.value(*x).numel() / d;
                let xd = self.value(*x).data().to_vec();
                let gd = self.value(*gain).data().to_vec();
                let mut dx = vec![T::zero(); xd.len()];
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for r in 0..rows {
                    kn::layernorm_backward_row(
                        &xd[r * d..(r + 1) * d],
                        &gd,
                        *eps,
                        &g[r * d..(r + 1) * d],
                        &mut dx[r * d..(r + 1) * d],
                        &mut dg,
                        &mut db,
                    );
                }
                if self.needs(*x) {
                    kn::axpy(T::one(), &dx, self.ensure(grads, *x));
                }
                if self.needs(*gain) {
                    kn::axpy(T::one(), &dg, self.ensure(grads, *gain));
                }
                if self.needs(*bias) {
                    kn::axpy(T::one(), &db, self.ensure(grads, *bias));
                }
            }
            Op::RopeHeads { x, n_heads, pos0 } => {
                if self.needs(*x) {
                    let rows = node.value.rows();
                    let d_model = node.value.cols();
                    let dh = d_model / n_heads;
                    let mut dg = g.to_vec();
                    for r in 0..rows {
                        let row = &mut dg[r * d_model..(r + 1) * d_model];
                        for h in 0..*n_heads {
                            kn::rope_rotate(
                                &mut row[h * dh..(h + 1) * dh],
                                pos0 + r as u64,
                                ROPE_BASE,
                                true,
                            );
                        }
                    }
                    kn::axpy(T::one(), &dg, self.ensure(grads, *x));
                }
            }
            Op::Retention {
                q,
                k,
                v,
                n_heads,
                gammas,
                scores,
            } => {
                let l = node.value.rows();
                let d_model = node.value.cols();
                let dh = d_model / n_heads;
                let inv_sqrt_d = real::<T>(1.0 / (dh as f64).sqrt());
                let tq = self.value(*q);
                let tk = self.value(*k);
                let tv = self.value(*v);
                let mut dq = vec![T::zero(); l * d_model];
                let mut dk = vec![T::zero(); l * d_model];
                let mut dv = vec![T::zero(); l * d_model];
                for h in 0..*n_heads {
                    let gamma = gammas[h];
                    let mut pows = vec![T::one(); l];
                    for m in 1..l {
                        pows[m] = pows[m - 1] * gamma;
                    }
                    let qh = copy_head(tq, h, dh);
                    let kh = copy_head(tk, h, dh);
                    let vh = copy_head(tv, h, dh);
                    let s = &scores[h];
                    for i in 0..l {
                        let doi = &g[i * d_model + h * dh..i * d_model + (h + 1) * dh];
                        let qrow = &qh[i * dh..(i + 1) * dh];
                        let srow = &s.data()[i * l..i * l + i + 1];
                        for j in 0..=i {
                            // dV via saved scores.
                            kn::axpy(srow[j], doi, &mut dv[j * d_model + h * dh..j * d_model + (h + 1) * dh]);
                            // dScore -> dQ, dK through the decay mask.
                            let ds = kn::dot(doi, &vh[j * dh..(j + 1) * dh]) * pows[i - j] * inv_sqrt_d;
                            kn::axpy(ds, &kh[j * dh..(j + 1) * dh], &mut dq[i * d_model + h * dh..i * d_model + (h + 1) * dh]);
                            kn::axpy(ds, qrow, &mut dk[j * d_model + h * dh..j * d_model + (h + 1) * dh]);
                        }
                    }
                }
                if self.needs(*q) {
                    kn::axpy(T::one(), &dq, self.ensure(grads, *q));
                }
                if self.needs(*k) {
                    kn::axpy(T::one(), &dk, self.ensure(grads, *k));
                }
                if self.needs(*v) {
                    kn::axpy(T::one(), &dv, self.ensure(grads, *v));
                }
            }
            Op::HeadSqnormProd { k, v, n_heads } => {
                let tk = self.value(*k);
                let tv = self.value(*v);
                let (l, d_model) = (tk.rows(), tk.cols());
                let dh = d_model / n_heads;
                let two = real::<T>(2.0);
                let mut dk = vec![T::zero(); l * d_model];
                let mut dv = vec![T::zero(); l * d_model];
                for t in 0..l {
                    for h in 0..*n_heads {
                        let gv = g[t * n_heads + h];
                        let ks = &tk.row(t)[h * dh..(h + 1) * dh];
                        let vs = &tv.row(t)[h * dh..(h + 1) * dh];
                        let ksq = kn::dot(ks, ks);
                        let vsq = kn::dot(vs, vs);
                        for e in 0..dh {
                            dk[t * d_model + h * dh + e] = dk[t * d_model + h * dh + e] + gv * two * ks[e] * vsq;
                            dv[t * d_model + h * dh + e] = dv[t * d_model + h * dh + e] + gv * two * vs[e] * ksq;
                        }
                    }
                }
                if self.needs(*k) {
                    kn::axpy(T::one(), &dk, self.ensure(grads, *k));
                }
                if self.needs(*v) {
                    kn::axpy(T::one(), &dv, self.ensure(grads, *v));
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        if self.needs(p) {
                            kn::axpy(T::one(), &g[off..off + n], self.ensure(grads, p));
                        }
                        off += n;
                    }
                } else {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.needs(p) {
                            let dp = self.ensure(grads, p);
                            for r in 0..rows {
                                for j in 0..c {
                                    dp[r * c + j] = dp[r * c + j] + g[r * total + off + j];
                                }
                            }
                        }
                        off += c;
                    }
                }
            }
            Op::Transpose { x } => {
                if self.needs(*x) {
                    let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                    let dx = self.ensure(grads, *x);
                    for i2 in 0..r {
                        for j in 0..c {
                            dx[j * r + i2] = dx[j * r + i2] + g[i2 * c + j];
                        }
                    }
                }
            }
            Op::SlidingMax { seq, fill, arg, .. } => {
                let c = node.value.cols();
                let l = node.value.rows();
                let mut dseq = if self.needs(*seq) {
                    Some(vec![T::zero(); l * c])
                } else {
                    None
                };
                let mut dfill = if self.needs(*fill) {
                    Some(vec![T::zero(); c])
                } else {
                    None
                };
                for t in 0..l {
                    for ch in 0..c {
                        let a = arg[t * c + ch];
                        let gv = g[t * c + ch];
                        if a >= 0 {
                            if let Some(ds) = dseq.as_mut() {
                                ds[a as usize * c + ch] = ds[a as usize * c + ch] + gv;
                            }
                        } else if let Some(df) = dfill.as_mut() {
                            df[ch] = df[ch] + gv;
                        }
                    }
                }
                if let Some(ds) = dseq {
                    kn::axpy(T::one(), &ds, self.ensure(grads, *seq));
                }
                if let Some(df) = dfill {
                    kn::axpy(T::one(), &df, self.ensure(grads, *fill));
                }
            }
            Op::FrameMean { x, stride } => {
                if self.needs(*x) {
                    let (cin, l_out) = (node.value.shape()[0], node.value.shape()[1]);
                    let l = self.value(*x).shape()[1];
                    let inv = T::one() / real::<T>(*stride as f64);
                    let dx = self.ensure(grads, *x);
                    for ci in 0..cin {
                        for u in 0..l_out {
                            let gv = g[ci * l_out + u] * inv;
                            for t in 0..*stride {
                                let e = ci * l + u * stride + t;
                                dx[e] = dx[e] + gv;
                            }
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.needs(*x) {
                    let gv = g[0];
                    let dx = self.ensure(grads, *x);
                    for d in dx.iter_mut() {
                        *d = *d + gv;
                    }
                }
            }
            Op::AntiSym { w } => {
                if self.needs(*w) {
                    let k = node.value.shape()[2];
                    let rows = node.value.numel() / k;
                    let half = real::<T>(0.5);
                    let dw = self.ensure(grads, *w);
                    for r in 0..rows {
                        for t in 0..k {
                            let a = g[r * k + t];
                            let b = g[r * k + (k - 1 - t)];
                            dw[r * k + t] = dw[r * k + t] + (a - b) * half;
                        }
                    }
                }
            }
        }
    }
}

fn copy_head<T: Real>(t: &Tensor<T>, h: usize, dh: usize) -> Vec<T> {
    let l = t.rows();
    let mut out = Vec::with_capacity(l * dh);
    for i in 0..l {
        out.extend_from_slice(&t.row(i)[h * dh..(h + 1) * dh]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::tensor::max_abs_diff;

    #[test]
    fn matmul_identity_and_projector() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let proj = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let out = tape.matmul(proj, b).unwrap();
        assert_eq!(tape.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_identity_associativity_is_bitwise() {
        let mut rng = stream(3, Stream::Test(1));
        let av = Tensor::<f32>::randn(&[4, 4], 1.0, &mut rng);
        let bv = Tensor::<f32>::randn(&[4, 4], 1.0, &mut rng);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(av);
        let b = tape.constant(bv);
        let i = tape.constant(eye);
        let ai = tape.matmul(a, i).unwrap();
        let aib = tape.matmul(ai, b).unwrap();
        let ab = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(aib).data(), tape.value(ab).data());
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.constant(Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv1d(x, w, None, 1, 0, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv1d_antisymmetric_kernel_on_constant() {
        // Anti-symmetric taps null the constant interior; edges see padding.
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let w = tape.constant(Tensor::from_vec(&[1, 1, 3], vec![-1.0, 0.0, 1.0]).unwrap());
        let y = tape.conv1d(x, w, None, 1, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn conv1d_rejects_empty_output() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 5]));
        assert!(tape.conv1d(x, w, None, 1, 0, 0).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones_and_square_doubles() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &[1.0, 1.0]);

        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn rmsnorm_anchors() {
        let mut tape = Tape::<f64>::new();
        let zero = tape.constant(Tensor::zeros(&[1, 4]));
        let gain = tape.constant(Tensor::full(&[4], 1.0));
        let y = tape.rmsnorm(zero, gain, 1e-6).unwrap();
        assert!(tape.value(y).max_abs() < 1e-12);

        // Constant positive vector normalizes to ones as eps -> 0.
        let c = tape.constant(Tensor::full(&[1, 4], 3.0));
        let y = tape.rmsnorm(c, gain, 1e-12).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rmsnorm_scale_invariance() {
        let mut rng = stream(5, Stream::Test(2));
        let x = Tensor::<f64>::randn(&[3, 8], 1.0, &mut rng);
        let x2data: alloc::vec::Vec<f64> = x.iter().map(|&v| v * 2.0).collect();
        let x2 = Tensor::from_vec(&[3, 8], x2data).unwrap();
        let mut tape = Tape::<f64>::new();
        let gain = tape.constant(Tensor::full(&[8], 1.0));
        let a = tape.constant(x);
        let b = tape.constant(x2);
        let ya = tape.rmsnorm(a, gain, 1e-6).unwrap();
        let yb = tape.rmsnorm(b, gain, 1e-6).unwrap();
        let d = max_abs_diff(tape.value(ya), tape.value(yb));
        assert!(d < 1e-5, "rmsnorm not scale invariant: {d}");
    }

    #[test]
    fn layernorm_anchors() {
        let mut tape = Tape::<f64>::new();
        let gain = tape.constant(Tensor::full(&[2], 1.0));
        let bias = tape.constant(Tensor::zeros(&[2]));
        // Constant row -> zeros before gain/bias.
        let c = tape.constant(Tensor::full(&[1, 2], 5.0));
        let y = tape.layernorm(c, gain, bias, 1e-9).unwrap();
        assert!(tape.value(y).max_abs() < 1e-6);
        // Already-normalized row passes through.
        let x = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap());
        let y = tape.layernorm(x, gain, bias, 1e-12).unwrap();
        assert!((tape.value(y).data()[0] - 1.0).abs() < 1e-6);
        assert!((tape.value(y).data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn antisymmetrize_matches_hand_values() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.antisymmetrize(w).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 0.0, 1.0]);
        // Idempotent on an already anti-symmetric kernel.
        let w2 = tape.constant(Tensor::from_vec(&[1, 1, 3], vec![-2.0, 0.0, 2.0]).unwrap());
        let y2 = tape.antisymmetrize(w2).unwrap();
        assert_eq!(tape.value(y2).data(), &[-2.0, 0.0, 2.0]);
        // Even kernel size is rejected.
        let w3 = tape.constant(Tensor::zeros(&[1, 1, 4]));
        assert!(tape.antisymmetrize(w3).is_err());
    }

    #[test]
    fn rope_position_zero_is_identity_and_norms_hold() {
        let mut rng = stream(9, Stream::Test(3));
        let x = Tensor::<f64>::randn(&[4, 8], 1.0, &mut rng);
        let mut tape = Tape::<f64>::new();
        let xid = tape.constant(x.clone());
        let y = tape.rope_heads(xid, 2, 0).unwrap();
        // Row 0 has position 0: unchanged.
        assert_eq!(&tape.value(y).row(0), &x.row(0));
        for r in 0..4 {
            let n0: f64 = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1: f64 = tape.value(y).row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() < 1e-5);
        }
    }

    #[test]
    fn rope_relative_position_property() {
        // <rope(q,i), rope(k,j)> depends only on i - j.
        let mut rng = stream(11, Stream::Test(4));
        let q = Tensor::<f64>::randn(&[1, 8], 1.0, &mut rng);
        let k = Tensor::<f64>::randn(&[1, 8], 1.0, &mut rng);
        let pair = |i: u64, j: u64| -> f64 {
            let mut tape = Tape::<f64>::new();
            let qi = tape.constant(q.clone());
            let ki = tape.constant(k.clone());
            let qr = tape.rope_heads(qi, 1, i).unwrap();
            let kr = tape.rope_heads(ki, 1, j).unwrap();
            kn::dot(tape.value(qr).row(0), tape.value(kr).row(0))
        };
        let a = pair(3, 7);
        let b = pair(3 + 41, 7 + 41);
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn sliding_max_uses_fill_before_start() {
        let mut tape = Tape::<f64>::new();
        let seq = tape.constant(Tensor::from_vec(&[3, 1], vec![1.0, 5.0, 2.0]).unwrap());
        let fill = tape.constant(Tensor::from_vec(&[1], vec![10.0]).unwrap());
        let y = tape.sliding_max(seq, fill, 2).unwrap();
        // t=0: window {fill, seq[0]} -> 10; t=1: {1,5} -> 5; t=2: {5,2} -> 5.
        assert_eq!(tape.value(y).data(), &[10.0, 5.0, 5.0]);
    }

    #[test]
    fn retention_single_step_is_scaled_outer() {
        // L=1: O = (q.k / sqrt(d)) v.
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let k = tape.constant(Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap());
        let v = tape.constant(Tensor::from_vec(&[1, 2], vec![5.0, 6.0]).unwrap());
        let o = tape.retention(q, k, v, 1, &[0.5]).unwrap();
        let s = (1.0 * 3.0 + 2.0 * 4.0) / (2.0f64).sqrt();
        assert!((tape.value(o).data()[0] - s * 5.0).abs() < 1e-12);
        assert!((tape.value(o).data()[1] - s * 6.0).abs() < 1e-12);
    }

    #[test]
    fn retention_gamma_zero_is_diagonal() {
        // gamma = 0 keeps only the j == i term (0^0 = 1 convention).
        let mut rng = stream(13, Stream::Test(5));
        let q = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let k = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let v = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let mut tape = Tape::<f64>::new();
        let (qi, ki, vi) = (
            tape.constant(q.clone()),
            tape.constant(k.clone()),
            tape.constant(v.clone()),
        );
        let o = tape.retention(qi, ki, vi, 1, &[0.0]).unwrap();
        for i in 0..4 {
            let s = kn::dot(q.row(i), k.row(i)) / (2.0f64).sqrt();
            for c in 0..2 {
                assert!((tape.value(o).get2(i, c) - s * v.get2(i, c)).abs() < 1e-12);
            }
        }
    }
}
