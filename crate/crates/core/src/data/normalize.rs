use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{GaitWindow, ParticipantRecord};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel z-score statistics, fit on training participants only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub per_channel_mean: Vec<f64>,
    pub per_channel_std: Vec<f64>,
}

/// Pools every loaded and baseline window of `train_records` and computes
/// the population mean and standard deviation of each channel.
pub fn fit_normalization(train_records: &[ParticipantRecord]) -> Result<NormalizationStats> {
    let windows: Vec<&GaitWindow> = train_records.iter().flat_map(|r| r.windows()).collect();
    if train_records.iter().all(|r| r.trials.is_empty()) {
        return Err(Error::Data("normalization needs at least one trial".into()));
    }
    fit_windows(&windows)
}

pub(crate) fn fit_windows(windows: &[&GaitWindow]) -> Result<NormalizationStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Data("normalization needs at least one window".into()))?;
    let c = first.num_channels();
    if windows.iter().any(|w| w.num_channels() != c) {
        return Err(Error::Data("windows differ in channel count".into()));
    }
    let mut sum = vec![0.0; c];
    let mut count = 0usize;
    for w in windows {
        for row in w.values().chunks(c) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        count += w.time_steps();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; c];
    for w in windows {
        for row in w.values().chunks(c) {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormalizationStats {
        per_channel_mean: mean,
        per_channel_std: std,
    })
}

impl NormalizationStats {
    fn check(&self, w: &GaitWindow) -> Result<()> {
        if w.num_channels() != self.per_channel_mean.len() {
            return Err(Error::shape(
                "normalization",
                format!(
                    "window has {} channels, stats have {}",
                    w.num_channels(),
                    self.per_channel_mean.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, w: &GaitWindow) -> Result<GaitWindow> {
        self.check(w)?;
        let c = w.num_channels();
        let values = w
            .values()
            .chunks(c)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.per_channel_mean)
                    .zip(&self.per_channel_std)
                    .map(|((v, m), s)| (v - m) / s)
            })
            .collect();
        GaitWindow::new(values, w.time_steps(), c)
    }

    pub fn invert(&self, w: &GaitWindow) -> Result<GaitWindow> {
        self.check(w)?;
        let c = w.num_channels();
        let values = w
            .values()
            .chunks(c)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.per_channel_mean)
                    .zip(&self.per_channel_std)
                    .map(|((v, m), s)| v * s + m)
            })
            .collect();
        GaitWindow::new(values, w.time_steps(), c)
    }

    /// Normalizes every window of the given records.
    pub fn apply_records(&self, records: &[ParticipantRecord]) -> Result<Vec<ParticipantRecord>> {
        records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.baseline_gait = self.apply(&r.baseline_gait)?;
                for t in &mut r.trials {
                    t.loaded_gait = self.apply(&t.loaded_gait)?;
                }
                Ok(r)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CarryStyle, TrialSample};
    use proptest::prelude::*;

    fn record(id: &str, baseline: GaitWindow, loaded: Vec<GaitWindow>) -> ParticipantRecord {
        ParticipantRecord {
            participant_id: id.into(),
            baseline_gait: baseline,
            trials: loaded
                .into_iter()
                .enumerate()
                .map(|(i, w)| TrialSample {
                    loaded_gait: w,
                    load_lbs: 10.0,
                    style: CarryStyle::new(0, 4).unwrap(),
                    participant_id: id.into(),
                    trial_id: format!("t{i}"),
                })
                .collect(),
        }
    }

    fn col(v: &[f64]) -> GaitWindow {
        GaitWindow::new(v.to_vec(), v.len(), 1).unwrap()
    }

    #[test]
    fn hand_computed_stats() {
        let s = fit_windows(&[&col(&[1.0, 3.0])]).unwrap();
        assert_eq!(s.per_channel_mean, vec![2.0]);
        assert_eq!(s.per_channel_std, vec![1.0]);

        let s = fit_windows(&[&col(&[0.0]), &col(&[2.0])]).unwrap();
        assert_eq!(s.per_channel_mean, vec![1.0]);
        assert_eq!(s.per_channel_std, vec![1.0]);

        let s = fit_windows(&[&col(&[5.0, 5.0, 5.0])]).unwrap();
        assert_eq!(s.per_channel_mean, vec![5.0]);
        assert_eq!(s.per_channel_std, vec![STD_FLOOR]);
    }

    #[test]
    fn fit_pools_baseline_and_trials() {
        let r = record("a", col(&[0.0, 0.0]), vec![col(&[4.0, 4.0])]);
        let s = fit_normalization(&[r]).unwrap();
        assert_eq!(s.per_channel_mean, vec![2.0]);
        assert!(fit_normalization(&[]).is_err());
        let empty = record("b", col(&[1.0, 2.0]), vec![]);
        assert!(fit_normalization(&[empty]).is_err());
    }

    #[test]
    fn apply_reference_values() {
        let s = NormalizationStats {
            per_channel_mean: vec![0.0, 1.0],
            per_channel_std: vec![2.0, 1.0],
        };
        let w = GaitWindow::new(vec![4.0, 1.0], 1, 2).unwrap();
        assert_eq!(s.apply(&w).unwrap().values(), &[2.0, 0.0]);
        let bad = GaitWindow::new(vec![4.0], 1, 1).unwrap();
        assert!(s.apply(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_standardized_pool(
            vals in prop::collection::vec(-50.0f64..50.0, 6..60),
        ) {
            let c = 3;
            let t = vals.len() / c;
            let w = GaitWindow::new(vals[..t * c].to_vec(), t, c).unwrap();
            let s = fit_windows(&[&w]).unwrap();
            let n = s.apply(&w).unwrap();
            let back = s.invert(&n).unwrap();
            for (a, b) in back.values().iter().zip(w.values()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            for ch in 0..c {
                if s.per_channel_std[ch] > STD_FLOOR * 10.0 {
                    let col = n.channel(ch);
                    let m = col.iter().sum::<f64>() / t as f64;
                    let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t as f64;
                    prop_assert!(m.abs() < 1e-8);
                    prop_assert!((v.sqrt() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
