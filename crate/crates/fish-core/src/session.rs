//! Streaming sessions: one sample in, O(1) work, one decoded output per
//! embedding frame. A session owns every piece of mutable state — embedder
//! windows, retention accumulators, decoder conv windows, the memory bank —
//! and its footprint never grows with stream length.

// Resolves f64 math in no_std builds; std builds use inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use crate::decoder::{DecoderStream, StepOutput};
use crate::embedder::EmbedderStream;
use crate::model::Model;
use crate::retention::{encoder_step, EncoderScratch, EncoderState};
use crate::tensor::{invalid, Tensor, TensorError};

/// Session policy knobs.
#[derive(Debug, Clone)]
pub struct SessionOptions {
    /// Reset state automatically after a quiet stretch with no picks.
    pub auto_reset: bool,
    /// Quiet stretch length, seconds of embedding time.
    pub quiet_horizon_s: f64,
    /// Record per-step hidden-increment norms (costs two dots per head).
    pub record_increments: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            auto_reset: true,
            quiet_horizon_s: 60.0,
            record_increments: false,
        }
    }
}

/// Quiet-pick auto-reset policy: counts consecutive absent-pick steps and
/// fires once the horizon is exceeded.
#[derive(Debug, Clone)]
pub struct QuietReset {
    pub horizon_steps: u64,
    pub quiet_steps: u64,
}

impl QuietReset {
    pub fn new(horizon_steps: u64) -> Self {
        QuietReset {
            horizon_steps,
            quiet_steps: 0,
        }
    }

    /// Observe one step; returns true when a reset should fire.
    pub fn observe(&mut self, absent: bool) -> bool {
        if absent {
            self.quiet_steps += 1;
        } else {
            self.quiet_steps = 0;
        }
        if self.quiet_steps > self.horizon_steps {
            self.quiet_steps = 0;
            true
        } else {
            false
        }
    }
}

/// A live recurrent-mode inference session.
pub struct StreamSession {
    cfg_downsample: usize,
    absent_threshold: f32,
    embedder: EmbedderStream<f32>,
    enc_state: EncoderState<f32>,
    enc_scratch: EncoderScratch<f32>,
    decoder: DecoderStream<f32>,
    model: alloc::sync::Arc<Model>,
    samples_seen: u64,
    quiet: QuietReset,
    opts: SessionOptions,
    resets: u64,
    last_increments: Vec<f32>,
}

impl StreamSession {
    /// Build a session with all state zeroed. Deterministic.
    pub fn new(model: alloc::sync::Arc<Model>, opts: SessionOptions) -> Result<Self, TensorError> {
        model.cfg.validate()?;
        let embedder = EmbedderStream::new(&model.cfg.embedder, &model.params.embedder)?;
        let enc_state = EncoderState::new(&model.cfg.retention);
        let enc_scratch = EncoderScratch::new(&model.cfg.retention);
        let decoder = DecoderStream::new(
            &model.cfg.decoder,
            &model.params.decoder,
            model.cfg.embedder.embed_dim,
            model.cfg.bank_len(),
        );
        let horizon = (opts.quiet_horizon_s * model.cfg.embed_rate_hz()).round() as u64;
        Ok(StreamSession {
            cfg_downsample: model.cfg.downsample(),
            absent_threshold: model.cfg.decoder.absent_threshold as f32,
            embedder,
            enc_state,
            enc_scratch,
            decoder,
            model,
            samples_seen: 0,
            quiet: QuietReset::new(horizon),
            opts,
            resets: 0,
            last_increments: Vec::new(),
        })
    }

    /// Feed one 3-channel sample. Every F-th sample yields a StepOutput.
    pub fn step(&mut self, sample: [f32; 3]) -> Result<Option<StepOutput>, TensorError> {
        if !sample.iter().all(|v| v.is_finite()) {
            return Err(invalid(
                "stream",
                alloc::format!("non-finite sample at index {}", self.samples_seen),
            ));
        }
        let idx = self.samples_seen;
        self.samples_seen += 1;
        let Some(mut row) = self.embedder.push(&sample) else {
            return Ok(None);
        };
        if self.opts.record_increments {
            self.last_increments.clear();
            encoder_step(
                &self.model.cfg.retention,
                &self.model.params.encoder,
                &mut self.enc_state,
                &mut row,
                &mut self.enc_scratch,
                Some(&mut self.last_increments),
            );
        } else {
            encoder_step(
                &self.model.cfg.retention,
                &self.model.params.encoder,
                &mut self.enc_state,
                &mut row,
                &mut self.enc_scratch,
                None,
            );
        }
        let hv = self.decoder.step(&row);
        let out = StepOutput {
            sample_index: idx,
            p_rel: hv.p_rel,
            s_rel: hv.s_rel,
            magnitude: hv.magnitude,
            x_km: hv.x_km,
            y_km: hv.y_km,
        };
        if self.opts.auto_reset {
            let absent = hv.p_rel >= self.absent_threshold && hv.s_rel >= self.absent_threshold;
            if self.quiet.observe(absent) {
                self.reset();
                self.resets += 1;
            }
        }
        Ok(Some(out))
    }

    /// Zero all model state: embedder windows, retention accumulators and
    /// position counter, decoder windows and bank, quiet counter. The sample
    /// clock keeps running (it indexes the external stream, not the state).
    pub fn reset(&mut self) {
        self.embedder.reset();
        self.enc_state.reset();
        self.decoder.reset();
        self.quiet.quiet_steps = 0;
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    /// Auto-resets fired so far.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// Frobenius norm of the full retention state.
    pub fn state_norm(&self) -> f32 {
        self.enc_state.norm()
    }

    /// Per-head increment norms of the most recent step (block-major), when
    /// recording is enabled.
    pub fn last_increments(&self) -> &[f32] {
        &self.last_increments
    }

    /// Resident mutable state, in bytes. Constant for the session's life.
    pub fn state_bytes(&self) -> usize {
        self.embedder.state_bytes() + self.enc_state.state_bytes() + self.decoder.state_bytes()
    }

    pub fn downsample(&self) -> usize {
        self.cfg_downsample
    }
}

/// Replay a whole [3, L] waveform through a fresh session, collecting every
/// step output.
pub fn replay_record(
    model: &Model,
    wave: &Tensor<f32>,
    opts: &SessionOptions,
) -> Result<Vec<StepOutput>, TensorError> {
    let arc = alloc::sync::Arc::new(model.clone());
    let mut session = StreamSession::new(arc, opts.clone())?;
    let l = wave.cols();
    let mut outs = Vec::with_capacity(l / session.downsample() + 1);
    for t in 0..l {
        let sample = [wave.get2(0, t), wave.get2(1, t), wave.get2(2, t)];
        if let Some(o) = session.step(sample)? {
            outs.push(o);
        }
    }
    Ok(outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::sync::Arc;
    use crate::model::{FishConfig, Model};
    use crate::rng::{stream, Stream};

    fn tiny_model() -> Arc<Model> {
        Arc::new(Model::init(FishConfig::tiny(), 11).unwrap())
    }

    #[test]
    fn one_output_every_f_samples() {
        let model = tiny_model();
        let f = model.cfg.downsample();
        let mut s = StreamSession::new(model, SessionOptions::default()).unwrap();
        let mut count = 0;
        for t in 0..40 {
            if let Some(out) = s.step([0.1, -0.2, 0.05]).unwrap() {
                count += 1;
                assert_eq!(out.sample_index as usize, count * f - 1);
            }
            let _ = t;
        }
        assert_eq!(count, 40 / f);
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let mut s = StreamSession::new(tiny_model(), SessionOptions::default()).unwrap();
        assert!(s.step([f32::NAN, 0.0, 0.0]).is_err());
        let err = s.step([0.0, f32::INFINITY, 0.0]).unwrap_err();
        assert!(alloc::format!("{err}").contains("non-finite"));
    }

    #[test]
    fn init_twice_and_reset_are_identical() {
        let model = tiny_model();
        let mut rng = stream(3, Stream::Test(0));
        let wave = Tensor::<f32>::randn(&[3, 64], 1.0, &mut rng);
        let opts = SessionOptions {
            auto_reset: false,
            ..SessionOptions::default()
        };
        let a = replay_record(&model, &wave, &opts).unwrap();
        let b = replay_record(&model, &wave, &opts).unwrap();
        assert_eq!(a, b);

        // Reset brings a used session back to the fresh-session outputs.
        let mut s = StreamSession::new(model.clone(), opts.clone()).unwrap();
        for t in 0..32 {
            s.step([wave.get2(0, t), wave.get2(1, t), wave.get2(2, t)])
                .unwrap();
        }
        assert!(s.state_norm() > 0.0);
        s.reset();
        assert_eq!(s.state_norm(), 0.0);
        let mut replayed = Vec::new();
        for t in 0..64 {
            if let Some(o) = s
                .step([wave.get2(0, t), wave.get2(1, t), wave.get2(2, t)])
                .unwrap()
            {
                replayed.push(o);
            }
        }
        for (x, y) in a.iter().zip(&replayed) {
            assert_eq!(x.p_rel, y.p_rel);
            assert_eq!(x.magnitude, y.magnitude);
            assert_eq!(x.x_km, y.x_km);
        }
    }

    #[test]
    fn session_isolation_under_interleaving() {
        let model = tiny_model();
        let mut rng = stream(5, Stream::Test(1));
        let wa = Tensor::<f32>::randn(&[3, 48], 1.0, &mut rng);
        let wb = Tensor::<f32>::randn(&[3, 48], 2.0, &mut rng);
        let opts = SessionOptions::default();
        let solo_a = replay_record(&model, &wa, &opts).unwrap();
        let solo_b = replay_record(&model, &wb, &opts).unwrap();

        let mut sa = StreamSession::new(model.clone(), opts.clone()).unwrap();
        let mut sb = StreamSession::new(model.clone(), opts.clone()).unwrap();
        let mut got_a = Vec::new();
        let mut got_b = Vec::new();
        for t in 0..48 {
            if let Some(o) = sa.step([wa.get2(0, t), wa.get2(1, t), wa.get2(2, t)]).unwrap() {
                got_a.push(o);
            }
            if let Some(o) = sb.step([wb.get2(0, t), wb.get2(1, t), wb.get2(2, t)]).unwrap() {
                got_b.push(o);
            }
        }
        assert_eq!(solo_a, got_a);
        assert_eq!(solo_b, got_b);
    }

    #[test]
    fn quiet_counter_fires_once_after_horizon() {
        let mut q = QuietReset::new(10);
        let mut fires = 0;
        for _ in 0..11 {
            if q.observe(true) {
                fires += 1;
            }
        }
        assert_eq!(fires, 1);
        // A pick resets the counter.
        let mut q = QuietReset::new(10);
        for _ in 0..10 {
            assert!(!q.observe(true));
        }
        assert!(!q.observe(false));
        for _ in 0..10 {
            assert!(!q.observe(true));
        }
        assert!(q.observe(true));
    }

    #[test]
    fn state_bytes_constant_over_stream() {
        let mut s = StreamSession::new(tiny_model(), SessionOptions::default()).unwrap();
        let before = s.state_bytes();
        for _ in 0..500 {
            s.step([0.3, 0.1, -0.2]).unwrap();
        }
        assert_eq!(s.state_bytes(), before);
    }
}
