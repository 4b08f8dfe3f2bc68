// Temporary learning probe; removed before finalizing.
use fish_core::model::FishConfig;
use fish_core::synth::{gen_synthetic, SyntheticParams};
use fish_core::training::{train, TrainConfig};

#[test]
fn probe_learning() {
    let cfg = FishConfig::toy();
    let tcfg = TrainConfig {
        epochs: 4,
        seed: 7,
        val_subset: 40,
        ..TrainConfig::default()
    };
    let params = SyntheticParams::default();
    let train_recs = gen_synthetic(&params, 600, 1);
    let val_recs = gen_synthetic(&params, 60, 2);
    let mut cb = |m: &fish_core::training::EpochMetrics| {
        println!(
            "epoch {} loss {:.4} pick {:.4} loc {:.3} mag {:.3} sea {:.4} | F1p {:.3} F1s {:.3} magMAE {:.3} locKm {:.2}",
            m.epoch, m.loss, m.l_pick, m.l_loc, m.l_mag, m.l_sea, m.val_f1_p, m.val_f1_s, m.val_mae_mag, m.val_err_km
        );
    };
    let result = train(&cfg, &tcfg, &train_recs, &val_recs, Some(&mut cb)).unwrap();
    let last = result.metrics.last().unwrap();
    println!("final: {last:?}");
}
