// Temporary perf probe; removed before finalizing.
use std::time::Instant;

use fish_core::model::{parallel_forward, FishConfig, FishParams};
use fish_core::synth::{gen_synthetic, SyntheticParams};
use fish_core::training::{augment_crop, build_losses, TrainConfig, TrainTargets};
use fish_core::rng::{stream, Stream};

#[test]
fn probe_step_time() {
    let cfg = FishConfig::toy();
    let tcfg = TrainConfig::default();
    let params = FishParams::<f32>::init(&cfg, 1);
    let recs = gen_synthetic(&SyntheticParams::default(), 4, 9);
    let mut rng = stream(1, Stream::Test(0));
    let t0 = Instant::now();
    let mut n = 0;
    for rec in &recs {
        let rec = augment_crop(rec, tcfg.crop_max_shift, tcfg.crop_len, &mut rng);
        let targets = TrainTargets::<f32>::build(&rec, &tcfg, cfg.downsample(), cfg.bank_len(), 4);
        let mut outs = parallel_forward(&cfg, &params, &rec.samples, true).unwrap();
        let losses = build_losses(&mut outs, &targets, &tcfg).unwrap();
        let _ = outs.tape.backward(losses.total).unwrap();
        n += 1;
    }
    let dt = t0.elapsed();
    println!("fwd+bwd per record: {:?} ({} records)", dt / n, n);
    println!("projected epoch(2000 recs): {:?}", dt / n * 2000);
}
