//! Dataset schema: gait windows, carrying styles, participants, and the
//! per-fold preprocessing applied to them.

mod io;
mod normalize;
mod resample;
mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    read_dataset, read_window_file, write_dataset, write_window_file, DatasetMetadata,
    ParticipantEntry, Provenance, TrialEntry, METADATA_FILE, SCHEMA_VERSION,
};
pub use normalize::{fit_normalization, NormalizationStats, STD_FLOOR};
pub use resample::resample_to_length;
pub use split::{lopo_splits, FoldSplit};

/// Canonical carrying-style order.
pub const STYLE_NAMES: [&str; 4] = [
    "one_handed_right",
    "one_handed_left",
    "two_handed_side",
    "two_handed_anterior",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub num_channels: usize,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
}

impl SensorLayout {
    /// Twelve IMUs with tri-axial acceleration and angular velocity.
    pub fn imu_default() -> Self {
        Self::generic(72, 80.0)
    }

    /// `num_channels` channels named `s{sensor}_{attr}` in groups of six.
    pub fn generic(num_channels: usize, sample_rate_hz: f64) -> Self {
        const ATTRS: [&str; 6] = ["ax", "ay", "az", "gx", "gy", "gz"];
        let channel_names = (0..num_channels)
            .map(|c| format!("s{:02}_{}", c / 6, ATTRS[c % 6]))
            .collect();
        Self {
            num_channels,
            sample_rate_hz,
            channel_names,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_channels == 0 || self.channel_names.len() != self.num_channels {
            return Err(Error::Data(format!(
                "layout declares {} channels but names {}",
                self.num_channels,
                self.channel_names.len()
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// A `(time_steps x num_channels)` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitWindow {
    values: Vec<f64>,
    time_steps: usize,
    num_channels: usize,
}

impl GaitWindow {
    pub fn new(values: Vec<f64>, time_steps: usize, num_channels: usize) -> Result<Self> {
        if time_steps == 0 || num_channels == 0 || values.len() != time_steps * num_channels {
            return Err(Error::Data(format!(
                "{} values for a {time_steps}x{num_channels} window",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("window contains non-finite values".into()));
        }
        Ok(Self {
            values,
            time_steps,
            num_channels,
        })
    }

    pub fn from_channels(channels: &[Vec<f64>]) -> Result<Self> {
        let c = channels.len();
        let t = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|ch| ch.len() != t) {
            return Err(Error::Data("channels differ in length".into()));
        }
        let mut values = Vec::with_capacity(t * c);
        for ti in 0..t {
            values.extend(channels.iter().map(|ch| ch[ti]));
        }
        Self::new(values, t, c)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.num_channels + c]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.time_steps).map(|t| self.get(t, c)).collect()
    }

    pub fn channel_rms(&self, c: usize) -> f64 {
        let s: f64 = (0..self.time_steps).map(|t| self.get(t, c).powi(2)).sum();
        (s / self.time_steps as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarryStyle {
    index: usize,
    num_styles: usize,
}

impl CarryStyle {
    pub fn new(index: usize, num_styles: usize) -> Result<Self> {
        if index >= num_styles {
            return Err(Error::Data(format!(
                "style index {index} out of range for {num_styles} styles"
            )));
        }
        Ok(Self { index, num_styles })
    }

    pub fn from_one_hot(v: &[f64]) -> Result<Self> {
        let ones: Vec<usize> = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == 1.0)
            .map(|(i, _)| i)
            .collect();
        if ones.len() != 1 || v.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::Data("not a one-hot vector".into()));
        }
        Self::new(ones[0], v.len())
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn num_styles(self) -> usize {
        self.num_styles
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_styles];
        v[self.index] = 1.0;
        v
    }

    pub fn name(self) -> String {
        STYLE_NAMES
            .get(self.index)
            .map_or_else(|| format!("style_{}", self.index), |s| s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialSample {
    pub loaded_gait: GaitWindow,
    pub load_lbs: f64,
    pub style: CarryStyle,
    pub participant_id: String,
    pub trial_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticipantRecord {
    pub participant_id: String,
    pub baseline_gait: GaitWindow,
    pub trials: Vec<TrialSample>,
}

impl ParticipantRecord {
    pub fn validate(&self) -> Result<()> {
        let ch = self.baseline_gait.num_channels();
        for t in &self.trials {
            if t.participant_id != self.participant_id {
                return Err(Error::Data(format!(
                    "trial {} carries participant {} inside record {}",
                    t.trial_id, t.participant_id, self.participant_id
                )));
            }
            if t.loaded_gait.num_channels() != ch {
                return Err(Error::Data(format!(
                    "trial {} channel count differs from baseline",
                    t.trial_id
                )));
            }
            if !(t.load_lbs >= 0.0) {
                return Err(Error::Data(format!(
                    "trial {} has negative load",
                    t.trial_id
                )));
            }
        }
        Ok(())
    }

    /// Every window of this participant: baseline first, then trials.
    pub fn windows(&self) -> impl Iterator<Item = &GaitWindow> {
        std::iter::once(&self.baseline_gait).chain(self.trials.iter().map(|t| &t.loaded_gait))
    }
}

/// Participants plus the layout and style vocabulary they share.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub layout: SensorLayout,
    pub style_names: Vec<String>,
    pub participants: Vec<ParticipantRecord>,
}

impl Dataset {
    pub fn num_styles(&self) -> usize {
        self.style_names.len()
    }

    pub fn num_trials(&self) -> usize {
        self.participants.iter().map(|p| p.trials.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.participants {
            if !seen.insert(&p.participant_id) {
                return Err(Error::Data(format!(
                    "duplicate participant {}",
                    p.participant_id
                )));
            }
            p.validate()?;
            if p.baseline_gait.num_channels() != self.layout.num_channels {
                return Err(Error::Data(format!(
                    "participant {} does not match the sensor layout",
                    p.participant_id
                )));
            }
            if p.trials
                .iter()
                .any(|t| t.style.num_styles() != self.num_styles())
            {
                return Err(Error::Data("style vocabulary mismatch".into()));
            }
        }
        Ok(())
    }

    /// Resamples every loaded window to `loaded_len` and every baseline to
    /// `baseline_len`.
    pub fn resampled(&self, loaded_len: usize, baseline_len: usize) -> Result<Self> {
        let mut out = self.clone();
        for p in &mut out.participants {
            p.baseline_gait = resample_to_length(&p.baseline_gait, baseline_len)?;
            for t in &mut p.trials {
                t.loaded_gait = resample_to_length(&t.loaded_gait, loaded_len)?;
            }
        }
        Ok(out)
    }

    pub fn participant(&self, id: &str) -> Option<&ParticipantRecord> {
        self.participants.iter().find(|p| p.participant_id == id)
    }
}
