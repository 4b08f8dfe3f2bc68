//! File-level IO: dataset directories (FSH1 records + manifest JSON),
//! checkpoint files, and the optional JSON config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fish_core::checkpoint::Checkpoint;
use fish_core::fsh1;
use fish_core::model::{FishConfig, Model};
use fish_core::synth::SyntheticParams;
use fish_core::training::{TrainConfig, WaveformRecord};

use crate::error::CliError;

/// Optional JSON config file; absent sections fall back to defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(default)]
    pub model: Option<FishConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub synth: Option<SyntheticParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Parse(format!("config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Parse(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn model(&self) -> FishConfig {
        self.model.clone().unwrap_or_else(FishConfig::toy)
    }

    pub fn train(&self) -> TrainConfig {
        self.train.clone().unwrap_or_default()
    }

    pub fn synth(&self) -> SyntheticParams {
        self.synth.clone().unwrap_or_default()
    }
}

/// Dataset manifest: file names and split assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: String,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializable");
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Parse(format!("manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("manifest {}: {e}", path.display())))
}

pub fn write_record(path: &Path, rec: &WaveformRecord) -> Result<(), CliError> {
    fs::write(path, fsh1::encode_record(rec))?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<WaveformRecord, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    fsh1::decode_record(&bytes)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Load every record of one split, in manifest order.
pub fn read_split(dir: &Path, split: &str) -> Result<Vec<WaveformRecord>, CliError> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::new();
    for entry in manifest.records.iter().filter(|e| e.split == split) {
        out.push(read_record(&dir.join(&entry.file))?);
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    fs::write(path, ckpt.encode())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(Checkpoint::decode(&bytes)?)
}

pub fn load_model(path: Option<&PathBuf>) -> Result<Model, CliError> {
    let path = path.ok_or_else(|| {
        CliError::Checkpoint("this command needs --ckpt <path>".to_string())
    })?;
    Ok(load_checkpoint(path)?.to_model()?)
}
