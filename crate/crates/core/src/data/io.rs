//! On-disk dataset: `metadata.json` plus one raw matrix file per window
//! (little-endian `f32`, row-major time x channel, no header).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{CarryStyle, Dataset, GaitWindow, ParticipantRecord, SensorLayout, TrialSample};

pub const METADATA_FILE: &str = "metadata.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub schema_version: u32,
    pub num_styles: usize,
    pub style_names: Vec<String>,
    pub num_channels: usize,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub load_units: String,
    pub participants: Vec<ParticipantEntry>,
    pub trials: Vec<TrialEntry>,
    /// Generator seed and config hash when the data is synthetic.
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantEntry {
    pub participant_id: String,
    pub baseline_file: String,
    pub time_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub participant_id: String,
    pub trial_id: String,
    pub load_lbs: f64,
    pub style: usize,
    pub file: String,
    pub time_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
}

pub fn write_window_file(path: &Path, w: &GaitWindow) -> Result<()> {
    let mut bytes = Vec::with_capacity(w.values().len() * 4);
    for &v in w.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_window_file(path: &Path, time_steps: usize, num_channels: usize) -> Result<GaitWindow> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != time_steps * num_channels * 4 {
        return Err(Error::Data(format!(
            "{} holds {} bytes, expected {time_steps}x{num_channels} f32",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    GaitWindow::new(values, time_steps, num_channels)
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_dataset(dir: &Path, ds: &Dataset, provenance: Option<Provenance>) -> Result<()> {
    ds.validate()?;
    let win_dir = dir.join("windows");
    fs::create_dir_all(&win_dir).map_err(|e| Error::io(&win_dir, e))?;
    let mut participants = Vec::new();
    let mut trials = Vec::new();
    for p in &ds.participants {
        let base = format!("windows/{}__baseline.f32", safe_name(&p.participant_id));
        write_window_file(&dir.join(&base), &p.baseline_gait)?;
        participants.push(ParticipantEntry {
            participant_id: p.participant_id.clone(),
            baseline_file: base,
            time_steps: p.baseline_gait.time_steps(),
        });
        for t in &p.trials {
            let file = format!(
                "windows/{}__{}.f32",
                safe_name(&p.participant_id),
                safe_name(&t.trial_id)
            );
            write_window_file(&dir.join(&file), &t.loaded_gait)?;
            trials.push(TrialEntry {
                participant_id: p.participant_id.clone(),
                trial_id: t.trial_id.clone(),
                load_lbs: t.load_lbs,
                style: t.style.index(),
                file,
                time_steps: t.loaded_gait.time_steps(),
            });
        }
    }
    let meta = DatasetMetadata {
        schema_version: SCHEMA_VERSION,
        num_styles: ds.num_styles(),
        style_names: ds.style_names.clone(),
        num_channels: ds.layout.num_channels,
        sample_rate_hz: ds.layout.sample_rate_hz,
        channel_names: ds.layout.channel_names.clone(),
        load_units: "lbs".into(),
        participants,
        trials,
        provenance,
    };
    let path = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<(Dataset, DatasetMetadata)> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMetadata = serde_json::from_str(&text)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset schema version {}",
            meta.schema_version
        )));
    }
    if meta.style_names.len() != meta.num_styles {
        return Err(Error::Data(
            "style_names length differs from num_styles".into(),
        ));
    }
    let layout = SensorLayout {
        num_channels: meta.num_channels,
        sample_rate_hz: meta.sample_rate_hz,
        channel_names: meta.channel_names.clone(),
    };
    layout.validate()?;
    let mut participants = Vec::with_capacity(meta.participants.len());
    for p in &meta.participants {
        let baseline_gait =
            read_window_file(&dir.join(&p.baseline_file), p.time_steps, meta.num_channels)?;
        participants.push(ParticipantRecord {
            participant_id: p.participant_id.clone(),
            baseline_gait,
            trials: Vec::new(),
        });
    }
    for t in &meta.trials {
        let rec = participants
            .iter_mut()
            .find(|p| p.participant_id == t.participant_id)
            .ok_or_else(|| {
                Error::Data(format!(
                    "trial {} names unknown participant {}",
                    t.trial_id, t.participant_id
                ))
            })?;
        rec.trials.push(TrialSample {
            loaded_gait: read_window_file(&dir.join(&t.file), t.time_steps, meta.num_channels)?,
            load_lbs: t.load_lbs,
            style: CarryStyle::new(t.style, meta.num_styles)?,
            participant_id: t.participant_id.clone(),
            trial_id: t.trial_id.clone(),
        });
    }
    let ds = Dataset {
        layout,
        style_names: meta.style_names.clone(),
        participants,
    };
    ds.validate()?;
    Ok((ds, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let w = |off: f64| {
            GaitWindow::new((0..6).map(|i| i as f64 * 0.25 + off).collect(), 3, 2).unwrap()
        };
        let p = |id: &str| ParticipantRecord {
            participant_id: id.into(),
            baseline_gait: w(0.0),
            trials: vec![TrialSample {
                loaded_gait: w(1.0),
                load_lbs: 20.0,
                style: CarryStyle::new(2, 4).unwrap(),
                participant_id: id.into(),
                trial_id: "s2_l20_r0".into(),
            }],
        };
        Dataset {
            layout: SensorLayout::generic(2, 80.0),
            style_names: crate::data::STYLE_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            participants: vec![p("p00"), p("p01")],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        write_dataset(dir.path(), &ds, None).unwrap();
        let (back, meta) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(meta.trials.len(), 2);
        let raw = fs::read(dir.path().join(&meta.trials[0].file)).unwrap();
        assert_eq!(&raw[4..8], &1.25f32.to_le_bytes());
        assert_eq!(&raw[..4], &1.0f32.to_le_bytes());
        assert_eq!(raw.len(), 24);
    }

    #[test]
    fn truncated_window_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &tiny(), None).unwrap();
        let f = dir.path().join("windows/p00__baseline.f32");
        let mut raw = fs::read(&f).unwrap();
        raw.pop();
        fs::write(&f, raw).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn unknown_metadata_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &tiny(), None).unwrap();
        let p = dir.path().join(METADATA_FILE);
        let text = fs::read_to_string(&p)
            .unwrap()
            .replacen('{', "{\"extra\": 1,", 1);
        fs::write(&p, text).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }
}
