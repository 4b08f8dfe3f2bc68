//! Whole-network assembly: configuration, parameter registry, and the
//! parallel-mode forward pass used for training and offline evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::decoder::{decode_on_tape, register_decoder, DecoderConfig, DecoderParams};
use crate::embedder::{
    embed_on_tape, ewm_decompose, register_embedder, EmbedderConfig, EmbedderParams, WAVE_CHANNELS,
};
use crate::retention::{encoder_on_tape, register_encoder, EncoderParams, RetentionConfig};
use crate::rng::{stream, Stream};
use crate::scalar::Real;
use crate::tape::{Tape, ValueId};
use crate::tensor::{invalid, Tensor, TensorError};

/// Full model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FishConfig {
    pub sample_rate_hz: f64,
    pub embedder: EmbedderConfig,
    pub retention: RetentionConfig,
    pub decoder: DecoderConfig,
}

impl FishConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        self.embedder.validate()?;
        self.retention.validate()?;
        self.decoder.validate()?;
        if self.embedder.embed_dim != self.retention.model_dim {
            return Err(invalid(
                "config",
                "embedder embed_dim must equal retention model_dim",
            ));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(invalid("config", "sample rate must be positive"));
        }
        Ok(())
    }

    pub fn downsample(&self) -> usize {
        self.embedder.downsample()
    }

    pub fn embed_rate_hz(&self) -> f64 {
        self.sample_rate_hz / self.downsample() as f64
    }

    pub fn bank_len(&self) -> usize {
        self.decoder.bank_len(self.embed_rate_hz())
    }

    /// Desk-scale configuration used by the synthetic-training pipeline.
    pub fn toy() -> Self {
        FishConfig {
            sample_rate_hz: 100.0,
            embedder: EmbedderConfig {
                n_layers: 3,
                branch_kernels: alloc::vec![[3, 5, 7]; 3],
                channels_per_branch: 8,
                embed_dim: 32,
                strides: alloc::vec![2, 2, 1],
                antisymmetric: true,
                ewm_alpha: None,
            },
            retention: RetentionConfig {
                n_blocks: 2,
                model_dim: 32,
                n_heads: 4,
                ffn_hidden: 64,
                gammas: RetentionConfig::default_gammas(4),
            },
            decoder: DecoderConfig {
                bank_seconds: 15.0,
                pick_kernel: 5,
                head_hidden: 32,
                absent_threshold: 0.99,
                merge_window_s: 1.0,
                loc_scale_km: 30.0,
            },
        }
    }

    /// Larger configuration for real deployments (not exercised by the
    /// desk-scale tests).
    pub fn standard() -> Self {
        let mut cfg = Self::toy();
        cfg.embedder.embed_dim = 64;
        cfg.embedder.channels_per_branch = 16;
        cfg.retention.model_dim = 64;
        cfg.retention.n_blocks = 4;
        cfg.retention.ffn_hidden = 128;
        cfg.decoder.bank_seconds = 30.0;
        cfg.decoder.head_hidden = 64;
        cfg
    }

    /// Tiny config for fast tests.
    pub fn tiny() -> Self {
        FishConfig {
            sample_rate_hz: 100.0,
            embedder: EmbedderConfig {
                n_layers: 2,
                branch_kernels: alloc::vec![[3, 5, 7]; 2],
                channels_per_branch: 4,
                embed_dim: 16,
                strides: alloc::vec![2, 2],
                antisymmetric: true,
                ewm_alpha: None,
            },
            retention: RetentionConfig {
                n_blocks: 1,
                model_dim: 16,
                n_heads: 2,
                ffn_hidden: 32,
                gammas: RetentionConfig::default_gammas(2),
            },
            decoder: DecoderConfig {
                bank_seconds: 6.0,
                pick_kernel: 5,
                head_hidden: 16,
                absent_threshold: 0.99,
                merge_window_s: 1.0,
                loc_scale_km: 30.0,
            },
        }
    }
}

/// All trainable parameters.
#[derive(Debug, Clone)]
pub struct FishParams<T> {
    pub embedder: EmbedderParams<T>,
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
}

impl<T: Real> FishParams<T> {
    pub fn init(cfg: &FishConfig, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Init);
        FishParams {
            embedder: EmbedderParams::init(&cfg.embedder, &mut rng),
            encoder: EncoderParams::init(&cfg.retention, &mut rng),
            decoder: DecoderParams::init(&cfg.decoder, cfg.embedder.embed_dim, &mut rng),
        }
    }

    /// Visit every tensor in the fixed registry order (embedder, encoder,
    /// decoder). Checkpoints, optimizers, and tape registration all share
    /// this order.
    pub fn for_each(&self, f: &mut impl FnMut(String, &Tensor<T>)) {
        self.embedder.for_each(f);
        self.encoder.for_each(f);
        self.decoder.for_each(f);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        self.embedder.for_each_mut(f);
        self.encoder.for_each_mut(f);
        self.decoder.for_each_mut(f);
    }

    pub fn n_tensors(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, _| n += 1);
        n
    }

    pub fn n_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.numel());
        n
    }

    pub fn cast<U: Real>(&self) -> FishParams<U> {
        // Field-by-field cast via the shared traversal would lose structure;
        // clone through init-shaped copies instead.
        FishParams {
            embedder: EmbedderParams {
                layers: self
                    .embedder
                    .layers
                    .iter()
                    .map(|l| crate::embedder::MslParams {
                        branch_w: l.branch_w.iter().map(|w| w.cast()).collect(),
                        mix_w: l.mix_w.cast(),
                        mix_b: l.mix_b.cast(),
                        norm_gain: l.norm_gain.cast(),
                    })
                    .collect(),
            },
            encoder: EncoderParams {
                blocks: self
                    .encoder
                    .blocks
                    .iter()
                    .map(|b| crate::retention::BlockParams {
                        pre_msr_gain: b.pre_msr_gain.cast(),
                        wq: b.wq.cast(),
                        wk: b.wk.cast(),
                        wv: b.wv.cast(),
                        wg: b.wg.cast(),
                        gate_gain: b.gate_gain.cast(),
                        out_w: b.out_w.cast(),
                        out_b: b.out_b.cast(),
                        pre_ffn_gain: b.pre_ffn_gain.cast(),
                        ffn_w1: b.ffn_w1.cast(),
                        ffn_b1: b.ffn_b1.cast(),
                        ln_gain: b.ln_gain.cast(),
                        ln_bias: b.ln_bias.cast(),
                        ffn_w2: b.ffn_w2.cast(),
                        ffn_b2: b.ffn_b2.cast(),
                    })
                    .collect(),
            },
            decoder: DecoderParams {
                pick_w1: self.decoder.pick_w1.cast(),
                pick_b1: self.decoder.pick_b1.cast(),
                pick_w2: self.decoder.pick_w2.cast(),
                pick_b2: self.decoder.pick_b2.cast(),
                pick_w3: self.decoder.pick_w3.cast(),
                pick_b3: self.decoder.pick_b3.cast(),
                pick_lin_w: self.decoder.pick_lin_w.cast(),
                pick_lin_b: self.decoder.pick_lin_b.cast(),
                loc_w1: self.decoder.loc_w1.cast(),
                loc_b1: self.decoder.loc_b1.cast(),
                loc_w2: self.decoder.loc_w2.cast(),
                loc_b2: self.decoder.loc_b2.cast(),
                mag_w1: self.decoder.mag_w1.cast(),
                mag_b1: self.decoder.mag_b1.cast(),
                mag_w2: self.decoder.mag_w2.cast(),
                mag_b2: self.decoder.mag_b2.cast(),
            },
        }
    }
}

/// A loaded model: config + weights.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: FishConfig,
    pub params: FishParams<f32>,
}

impl Model {
    pub fn init(cfg: FishConfig, seed: u64) -> Result<Self, TensorError> {
        cfg.validate()?;
        let params = FishParams::init(&cfg, seed);
        Ok(Model { cfg, params })
    }
}

/// Everything the trainer needs from one parallel-mode forward pass.
pub struct ParallelOutputs<T: Real> {
    pub tape: Tape<T>,
    /// [L', D] prediction embeddings.
    pub embed: ValueId,
    /// [L', 2] sigmoid pick outputs.
    pub pick: ValueId,
    /// [L', 2] location outputs (x, y km).
    pub loc: ValueId,
    /// [L', 1] magnitude outputs.
    pub mag: ValueId,
    /// Per block: [L', H] squared increment norms (when requested).
    pub increments: Vec<ValueId>,
    /// Trainable leaves in registry order.
    pub param_order: Vec<ValueId>,
}

/// Run embedder, encoder, and decoder over a whole [3, L] waveform on a
/// fresh tape. EWM trend removal, when configured, is applied to the input
/// before it enters the tape (it has no trainable parameters).
pub fn parallel_forward<T: Real>(
    cfg: &FishConfig,
    params: &FishParams<T>,
    wave: &Tensor<T>,
    want_increments: bool,
) -> Result<ParallelOutputs<T>, TensorError> {
    if wave.shape().len() != 2 || wave.shape()[0] != WAVE_CHANNELS {
        return Err(invalid(
            "forward",
            alloc::format!("expected [3, L] waveform, got {:?}", wave.shape()),
        ));
    }
    let mut tape = Tape::new();
    let mut order = Vec::new();
    let e_ids = register_embedder(&mut tape, &params.embedder, &mut order);
    let r_ids = register_encoder(&mut tape, &params.encoder, &mut order);
    let d_ids = register_decoder(&mut tape, &params.decoder, &mut order);

    let input = match cfg.embedder.ewm_alpha {
        Some(alpha) => {
            let (_, resid) = ewm_decompose(wave, alpha)?;
            resid
        }
        None => wave.clone(),
    };
    let x = tape.constant(input);
    let we = embed_on_tape(&mut tape, &cfg.embedder, &e_ids, x)?;
    let (pe, increments) =
        encoder_on_tape(&mut tape, &cfg.retention, &r_ids, we, 0, want_increments)?;
    let heads = decode_on_tape(&mut tape, &cfg.decoder, &d_ids, pe, cfg.bank_len())?;
    Ok(ParallelOutputs {
        tape,
        embed: pe,
        pick: heads.pick,
        loc: heads.loc,
        mag: heads.mag,
        increments,
        param_order: order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_order_matches_for_each() {
        let cfg = FishConfig::tiny();
        let params = FishParams::<f32>::init(&cfg, 7);
        let mut names = Vec::new();
        params.for_each(&mut |n, _| names.push(n));
        assert_eq!(names.len(), params.n_tensors());
        // Registration must traverse in the same order with the same count.
        let wave = Tensor::zeros(&[3, 16]);
        let out = parallel_forward(&cfg, &params, &wave, false).unwrap();
        assert_eq!(out.param_order.len(), names.len());
        let mut i = 0;
        params.for_each(&mut |_, t| {
            assert_eq!(out.tape.value(out.param_order[i]).shape(), t.shape());
            i += 1;
        });
    }

    #[test]
    fn forward_shapes_are_consistent() {
        let cfg = FishConfig::tiny();
        let params = FishParams::<f32>::init(&cfg, 3);
        let mut rng = crate::rng::stream(1, crate::rng::Stream::Test(0));
        let wave = Tensor::<f32>::randn(&[3, 64], 1.0, &mut rng);
        let out = parallel_forward(&cfg, &params, &wave, true).unwrap();
        let l = 64 / cfg.downsample();
        assert_eq!(out.tape.value(out.embed).shape(), &[l, 16]);
        assert_eq!(out.tape.value(out.pick).shape(), &[l, 2]);
        assert_eq!(out.tape.value(out.loc).shape(), &[l, 2]);
        assert_eq!(out.tape.value(out.mag).shape(), &[l, 1]);
        assert_eq!(out.increments.len(), cfg.retention.n_blocks);
        for &v in out.tape.value(out.pick).data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn toy_and_standard_configs_validate() {
        assert!(FishConfig::toy().validate().is_ok());
        assert!(FishConfig::standard().validate().is_ok());
        assert!(FishConfig::tiny().validate().is_ok());
        let mut bad = FishConfig::toy();
        bad.retention.model_dim = 24; // != embed_dim
        assert!(bad.validate().is_err());
    }
}
