//! One function per subcommand.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use fish_core::checkpoint::{Checkpoint, TrainMeta};
use fish_core::decoder::{back_azimuth_deg, distance_km, Phase, StepOutput};
use fish_core::eval::{evaluate, events_from_outputs, EvalOptions};
use fish_core::model::Model;
use fish_core::rng::{stream, Stream};
use fish_core::session::{SessionOptions, StreamSession};
use fish_core::synth::gen_record;
use fish_core::training::{train, EpochMetrics, TrainConfig};

use crate::error::CliError;
use crate::files::{
    self, read_split, write_checkpoint, write_manifest, write_record, FileConfig, Manifest,
    ManifestEntry,
};
use crate::jsonl;

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

pub fn gen_data(
    cfgfile: &FileConfig,
    seed: u64,
    out: &Path,
    n_train: usize,
    n_eval: usize,
) -> Result<(), CliError> {
    let synth = cfgfile.synth();
    fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(n_train + n_eval);
    for i in 0..n_train + n_eval {
        let rec = gen_record(&synth, seed, i as u64);
        let split = if i < n_train { "train" } else { "eval" };
        let file = format!("{split}{i:06}.fsh1");
        write_record(&out.join(&file), &rec)?;
        entries.push(ManifestEntry {
            file,
            split: split.to_string(),
        });
    }
    write_manifest(out, &Manifest { records: entries })?;
    eprintln!(
        "wrote {} train + {} eval records to {}",
        n_train,
        n_eval,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn train_cmd(
    cfgfile: &FileConfig,
    seed: Option<u64>,
    data: &Path,
    out: &Path,
    metrics_path: Option<&PathBuf>,
) -> Result<(), CliError> {
    let cfg = cfgfile.model();
    let mut tcfg: TrainConfig = cfgfile.train();
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    let train_recs = read_split(data, "train")?;
    let val_recs = read_split(data, "eval")?;
    eprintln!(
        "training on {} records ({} eval) for {} epochs",
        train_recs.len(),
        val_recs.len(),
        tcfg.epochs
    );
    let mut rows: Vec<EpochMetrics> = Vec::new();
    let mut on_epoch = |m: &EpochMetrics| {
        eprintln!("{}", m.csv_row());
        rows.push(m.clone());
    };
    let result = train(&cfg, &tcfg, &train_recs, &val_recs, Some(&mut on_epoch))?;
    let ckpt = Checkpoint::from_model(
        &result.model,
        Some(TrainMeta {
            seed: tcfg.seed,
            epochs: tcfg.epochs,
            n_train_records: train_recs.len(),
        }),
    );
    write_checkpoint(out, &ckpt)?;
    if let Some(path) = metrics_path {
        let mut text = String::from(EpochMetrics::CSV_HEADER);
        text.push('\n');
        for m in &result.metrics {
            text.push_str(&m.csv_row());
            text.push('\n');
        }
        fs::write(path, text)?;
    }
    eprintln!("checkpoint written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

/// Replay result: the JSONL body plus the summary JSON value.
pub struct ReplayResult {
    pub jsonl: String,
    pub summary: serde_json::Value,
}

/// Drive one record through a fresh session; pure so tests can diff bytes.
pub fn replay_to_string(
    model: &Model,
    samples: &fish_core::tensor::Tensor<f32>,
    report_after_s: f64,
    auto_reset: bool,
) -> Result<ReplayResult, CliError> {
    let opts = SessionOptions {
        auto_reset,
        ..SessionOptions::default()
    };
    let outputs = fish_core::session::replay_record(model, samples, &opts)?;
    let mut body = String::new();
    for o in &outputs {
        body.push_str(&jsonl::line(o));
        body.push('\n');
    }
    let events = events_from_outputs(model, &outputs);
    let rate = model.cfg.sample_rate_hz;
    let first_p = events
        .iter()
        .find(|e| e.phase == Phase::P)
        .map(|e| e.sample_index);
    let report = first_p.and_then(|p| {
        let at = p + (report_after_s * rate) as u64;
        let f = model.cfg.downsample() as u64;
        let idx = (at / f).min((outputs.len() as u64).saturating_sub(1));
        outputs.get(idx as usize).map(report_json)
    });
    let summary = serde_json::json!({
        "events": events.iter().map(|e| serde_json::json!({
            "phase": match e.phase { Phase::P => "P", Phase::S => "S" },
            "sample_index": e.sample_index,
            "time_s": e.sample_index as f64 / rate,
        })).collect::<Vec<_>>(),
        "report_after_s": report_after_s,
        "report": report,
        "steps": outputs.len(),
    });
    Ok(ReplayResult {
        jsonl: body,
        summary,
    })
}

fn report_json(o: &StepOutput) -> serde_json::Value {
    serde_json::json!({
        "sample_index": o.sample_index,
        "magnitude": o.magnitude,
        "x_km": o.x_km,
        "y_km": o.y_km,
        "distance_km": distance_km(o.x_km as f64, o.y_km as f64),
        "back_azimuth_deg": back_azimuth_deg(o.x_km as f64, o.y_km as f64),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn replay_cmd(
    ckpt: Option<&PathBuf>,
    input: &Path,
    jsonl_path: Option<&PathBuf>,
    summary_path: Option<&PathBuf>,
    report_after_s: f64,
    auto_reset: bool,
) -> Result<(), CliError> {
    let model = files::load_model(ckpt)?;
    let rec = files::read_record(input)?;
    if (rec.sample_rate_hz - model.cfg.sample_rate_hz).abs() > 1e-9 {
        return Err(CliError::Parse(format!(
            "input sample rate {} Hz does not match the model's {} Hz (resampling is out of scope)",
            rec.sample_rate_hz, model.cfg.sample_rate_hz
        )));
    }
    let result = replay_to_string(&model, &rec.samples, report_after_s, auto_reset)?;
    match jsonl_path {
        Some(p) => fs::write(p, &result.jsonl)?,
        None => {
            let mut lock = std::io::stdout().lock();
            lock.write_all(result.jsonl.as_bytes())?;
        }
    }
    let summary = serde_json::to_string_pretty(&result.summary).expect("summary serializable");
    match summary_path {
        Some(p) => fs::write(p, summary)?,
        None => eprintln!("{summary}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// stream
// ---------------------------------------------------------------------------

pub fn stream_cmd(ckpt: Option<&PathBuf>, auto_reset: bool) -> Result<(), CliError> {
    let model = Arc::new(files::load_model(ckpt)?);
    let opts = SessionOptions {
        auto_reset,
        ..SessionOptions::default()
    };
    let mut session = StreamSession::new(model, opts)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (lineno, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = [0.0f32; 3];
        let mut parts = line.split_whitespace();
        for v in vals.iter_mut() {
            let tok = parts.next().ok_or_else(|| {
                CliError::Parse(format!("stdin line {}: expected 3 samples", lineno + 1))
            })?;
            *v = tok.parse().map_err(|e| {
                CliError::Parse(format!("stdin line {}: {e}", lineno + 1))
            })?;
        }
        if let Some(o) = session.step(vals)? {
            out.write_all(jsonl::line(&o).as_bytes())?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

/// Per-decile latency report over a synthetic noise stream.
#[derive(Debug, serde::Serialize)]
pub struct BenchReport {
    pub steps: usize,
    pub decile_ns_per_step: Vec<f64>,
    pub state_bytes: Vec<usize>,
    pub total_seconds: f64,
    pub realtime_factor: f64,
    /// max decile mean / min decile mean - 1.
    pub decile_spread: f64,
}

pub fn run_bench(model: Arc<Model>, steps: usize, seed: u64) -> Result<BenchReport, CliError> {
    let mut session = StreamSession::new(model.clone(), SessionOptions::default())?;
    let mut rng = stream(seed, Stream::Test(0));
    let chunk = (steps / 10).max(1);
    let mut decile_ns = Vec::with_capacity(10);
    let mut state_bytes = Vec::with_capacity(10);
    let t_all = Instant::now();
    for _ in 0..10 {
        let t0 = Instant::now();
        for _ in 0..chunk {
            let s = [
                rng.gen_range(-0.5f32..0.5),
                rng.gen_range(-0.5f32..0.5),
                rng.gen_range(-0.5f32..0.5),
            ];
            session.step(s)?;
        }
        decile_ns.push(t0.elapsed().as_nanos() as f64 / chunk as f64);
        state_bytes.push(session.state_bytes());
    }
    let total = t_all.elapsed().as_secs_f64();
    let streamed_seconds = (chunk * 10) as f64 / model.cfg.sample_rate_hz;
    let max = decile_ns.iter().cloned().fold(f64::MIN, f64::max);
    let min = decile_ns.iter().cloned().fold(f64::MAX, f64::min);
    Ok(BenchReport {
        steps: chunk * 10,
        decile_ns_per_step: decile_ns,
        state_bytes,
        total_seconds: total,
        realtime_factor: streamed_seconds / total,
        decile_spread: max / min - 1.0,
    })
}

pub fn bench_cmd(ckpt: Option<&PathBuf>, steps: usize, seed: u64) -> Result<(), CliError> {
    if steps < 100_000 {
        return Err(CliError::Other(anyhow::anyhow!(
            "bench needs at least 1e5 steps for stable deciles"
        )));
    }
    let model = Arc::new(files::load_model(ckpt)?);
    let report = run_bench(model, steps, seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializable")
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn eval_cmd(
    ckpt: Option<&PathBuf>,
    data: &Path,
    out: Option<&PathBuf>,
    curves: Option<&PathBuf>,
) -> Result<(), CliError> {
    let model = files::load_model(ckpt)?;
    let records = read_split(data, "eval")?;
    if records.is_empty() {
        return Err(CliError::Parse("dataset has no eval split".to_string()));
    }
    let report = evaluate(&model, &records, &EvalOptions::default())?;
    let json = serde_json::to_string_pretty(&report).expect("report serializable");
    match out {
        Some(p) => fs::write(p, &json)?,
        None => println!("{json}"),
    }
    if let Some(path) = curves {
        let mut text = String::from("align,offset_s,mag_mae,loc_err_km,n\n");
        for (i, off) in report.curves_p.offsets_s.iter().enumerate() {
            text.push_str(&format!(
                "P,{},{:.6},{:.6},{}\n",
                off, report.curves_p.mag_mae[i], report.curves_p.loc_err[i], report.curves_p.n[i]
            ));
        }
        for (i, off) in report.curves_s.offsets_s.iter().enumerate() {
            text.push_str(&format!(
                "S,{},{:.6},{:.6},{}\n",
                off, report.curves_s.mag_mae[i], report.curves_s.loc_err[i], report.curves_s.n[i]
            ));
        }
        fs::write(path, text)?;
    }
    Ok(())
}
