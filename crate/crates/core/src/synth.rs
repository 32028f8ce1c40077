//! Synthetic gait generator.
//!
//! Each channel is a sinusoid at the participant's stride frequency with a
//! per-channel amplitude and phase, plus white noise. Carrying a load slows
//! the cadence and attenuates every amplitude; the carrying style boosts
//! one contiguous block of channels (one block per style).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    CarryStyle, Dataset, GaitWindow, ParticipantRecord, SensorLayout, TrialSample, STYLE_NAMES,
};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct PersonTraits {
    pub stride_freq_hz: f64,
    pub amp_scale: Vec<f64>,
    pub phase_offset: Vec<f64>,
    pub noise_std: f64,
}

impl PersonTraits {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, num_channels: usize, noise_std: f64) -> Self {
        let stride_freq_hz = rng.random_range(0.7..=1.2);
        let amp_scale = (0..num_channels)
            .map(|_| rng.random_range(0.5..=1.5))
            .collect();
        let phase_offset = (0..num_channels)
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        Self {
            stride_freq_hz,
            amp_scale,
            phase_offset,
            noise_std,
        }
    }

    pub fn validate(&self, num_channels: usize) -> Result<()> {
        let ok = (0.7..=1.2).contains(&self.stride_freq_hz)
            && self.amp_scale.len() == num_channels
            && self.phase_offset.len() == num_channels
            && self.amp_scale.iter().all(|a| (0.5..=1.5).contains(a))
            && self
                .phase_offset
                .iter()
                .all(|p| (0.0..2.0 * PI).contains(p))
            && self.noise_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("person traits out of range".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_participants: usize,
    pub trials_per_condition: usize,
    pub load_levels_lbs: Vec<f64>,
    pub num_styles: usize,
    pub cadence_slow_per_lb: f64,
    pub amp_atten_per_lb: f64,
    pub style_asym_gain: f64,
    pub noise_std: f64,
    pub num_channels: usize,
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub baseline_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_participants: 22,
            trials_per_condition: 1,
            load_levels_lbs: vec![10.0, 20.0, 30.0, 50.0],
            num_styles: 4,
            cadence_slow_per_lb: 0.002,
            amp_atten_per_lb: 0.004,
            style_asym_gain: 0.3,
            noise_std: 0.05,
            num_channels: 72,
            sample_rate_hz: 80.0,
            window_len: 800,
            baseline_len: 800,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("synth.{field}"),
                reason: reason.into(),
            })
        };
        if self.num_participants == 0 {
            return fail("num_participants", "must be positive");
        }
        if self.trials_per_condition == 0 {
            return fail("trials_per_condition", "must be positive");
        }
        if self.load_levels_lbs.is_empty()
            || self.load_levels_lbs.iter().any(|l| !(*l >= 0.0))
            || self.load_levels_lbs.windows(2).any(|w| w[0] > w[1])
        {
            return fail(
                "load_levels_lbs",
                "must be nonempty, nonnegative and sorted ascending",
            );
        }
        if self.num_styles == 0 || self.num_styles > self.num_channels {
            return fail("num_styles", "must be in 1..=num_channels");
        }
        for (name, v) in [
            ("cadence_slow_per_lb", self.cadence_slow_per_lb),
            ("amp_atten_per_lb", self.amp_atten_per_lb),
            ("style_asym_gain", self.style_asym_gain),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0) {
                return fail(name, "must be nonnegative");
            }
        }
        if !(self.sample_rate_hz > 0.0) {
            return fail("sample_rate_hz", "must be positive");
        }
        if self.window_len < 2 || self.baseline_len < 2 {
            return fail("window_len", "windows need at least 2 samples");
        }
        Ok(())
    }

    pub fn layout(&self) -> SensorLayout {
        SensorLayout::generic(self.num_channels, self.sample_rate_hz)
    }
}

/// Channels boosted by `style`: the `index`-th of `num_styles` contiguous
/// blocks of the channel list.
pub fn style_channels(style: CarryStyle, num_channels: usize) -> std::ops::Range<usize> {
    let l = style.num_styles();
    let i = style.index();
    (i * num_channels / l)..((i + 1) * num_channels / l)
}

fn render(
    traits: &PersonTraits,
    layout: &SensorLayout,
    len: usize,
    freq: f64,
    gains: &[f64],
    rng_seed: u64,
) -> Result<GaitWindow> {
    if len < 2 {
        return Err(Error::InvalidArgument(
            "window length must be at least 2".into(),
        ));
    }
    traits.validate(layout.num_channels)?;
    let c = layout.num_channels;
    let mut rng = seed::rng(rng_seed, "synth/noise");
    let mut values = Vec::with_capacity(len * c);
    for t in 0..len {
        let arg = 2.0 * PI * freq * t as f64 / layout.sample_rate_hz;
        for ch in 0..c {
            let clean = traits.amp_scale[ch] * gains[ch] * (arg + traits.phase_offset[ch]).sin();
            let noise = if traits.noise_std > 0.0 {
                traits.noise_std * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            values.push(clean + noise);
        }
    }
    GaitWindow::new(values, len, c)
}

pub fn generate_baseline(
    traits: &PersonTraits,
    layout: &SensorLayout,
    len: usize,
    rng_seed: u64,
) -> Result<GaitWindow> {
    let gains = vec![1.0; layout.num_channels];
    render(traits, layout, len, traits.stride_freq_hz, &gains, rng_seed)
}

pub fn generate_loaded(
    traits: &PersonTraits,
    layout: &SensorLayout,
    len: usize,
    load_lbs: f64,
    style: CarryStyle,
    cfg: &SynthConfig,
    rng_seed: u64,
) -> Result<GaitWindow> {
    if !(load_lbs >= 0.0) {
        return Err(Error::InvalidArgument("load must be nonnegative".into()));
    }
    if style.num_styles() != cfg.num_styles {
        return Err(Error::InvalidArgument(format!(
            "style {} of {} does not match {} configured styles",
            style.index(),
            style.num_styles(),
            cfg.num_styles
        )));
    }
    let freq = traits.stride_freq_hz / (1.0 + cfg.cadence_slow_per_lb * load_lbs);
    let atten = 1.0 / (1.0 + cfg.amp_atten_per_lb * load_lbs);
    let mut gains = vec![atten; layout.num_channels];
    for ch in style_channels(style, layout.num_channels) {
        gains[ch] *= 1.0 + cfg.style_asym_gain;
    }
    render(traits, layout, len, freq, &gains, rng_seed)
}

pub fn participant_id(i: usize) -> String {
    format!("p{i:02}")
}

pub fn trial_id(style: usize, load: f64, rep: usize) -> String {
    format!("s{style}_l{load}_r{rep}")
}

fn generate_participant(
    cfg: &SynthConfig,
    layout: &SensorLayout,
    index: usize,
) -> Result<ParticipantRecord> {
    let pseed = seed::derive(cfg.seed, &format!("synth/participant/{index}"));
    let mut trait_rng = seed::rng(pseed, "traits");
    let traits = PersonTraits::sample(&mut trait_rng, layout.num_channels, cfg.noise_std);
    let pid = participant_id(index);
    let baseline_gait = generate_baseline(
        &traits,
        layout,
        cfg.baseline_len,
        seed::derive(pseed, "baseline"),
    )?;
    let mut trials = Vec::new();
    for rep in 0..cfg.trials_per_condition {
        for s in 0..cfg.num_styles {
            let style = CarryStyle::new(s, cfg.num_styles)?;
            for &load in &cfg.load_levels_lbs {
                let tid = trial_id(s, load, rep);
                let w = generate_loaded(
                    &traits,
                    layout,
                    cfg.window_len,
                    load,
                    style,
                    cfg,
                    seed::derive(pseed, &format!("trial/{tid}")),
                )?;
                trials.push(TrialSample {
                    loaded_gait: w,
                    load_lbs: load,
                    style,
                    participant_id: pid.clone(),
                    trial_id: tid,
                });
            }
        }
    }
    Ok(ParticipantRecord {
        participant_id: pid,
        baseline_gait,
        trials,
    })
}

/// Every participant derives its own stream from `(cfg.seed, index)`.
pub fn generate_dataset(
    cfg: &SynthConfig,
    layout: &SensorLayout,
) -> Result<Vec<ParticipantRecord>> {
    cfg.validate()?;
    layout.validate()?;
    if layout.num_channels != cfg.num_channels {
        return Err(Error::Config {
            field: "synth.num_channels".into(),
            reason: format!("layout has {} channels", layout.num_channels),
        });
    }
    (0..cfg.num_participants)
        .map(|i| generate_participant(cfg, layout, i))
        .collect()
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let layout = cfg.layout();
    let participants = generate_dataset(cfg, &layout)?;
    let style_names = (0..cfg.num_styles)
        .map(|i| {
            STYLE_NAMES
                .get(i)
                .map_or_else(|| format!("style_{i}"), |s| s.to_string())
        })
        .collect();
    Ok(Dataset {
        layout,
        style_names,
        participants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clean_traits(c: usize) -> PersonTraits {
        PersonTraits {
            stride_freq_hz: 1.0,
            amp_scale: vec![1.0; c],
            phase_offset: vec![0.0; c],
            noise_std: 0.0,
        }
    }

    #[test]
    fn pure_sinusoid_is_bounded_with_expected_zero_crossings() {
        let layout = SensorLayout::generic(1, 80.0);
        let w = generate_baseline(&clean_traits(1), &layout, 800, 0).unwrap();
        assert!(w.values().iter().all(|v| v.abs() <= 1.0));
        // near-zero samples, plus sign flips between samples clear of zero
        let x = w.channel(0);
        let mut crossings = Vec::new();
        for t in 0..x.len() {
            let clear = |v: f64| v.abs() >= 1e-9;
            if !clear(x[t]) || (t > 0 && clear(x[t - 1]) && x[t - 1] * x[t] < 0.0) {
                crossings.push(t);
            }
        }
        // half-period of 40 samples: zeros at 0, 40, ..., 760
        let expect: Vec<usize> = (0..20).map(|k| 40 * k).collect();
        assert_eq!(crossings, expect);
    }

    #[test]
    fn same_seed_same_window() {
        let layout = SensorLayout::generic(6, 80.0);
        let mut rng = seed::rng(1, "t");
        let tr = PersonTraits::sample(&mut rng, 6, 0.05);
        let a = generate_baseline(&tr, &layout, 100, 42).unwrap();
        let b = generate_baseline(&tr, &layout, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_baseline(&tr, &layout, 100, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_load_zero_gain_matches_baseline() {
        let layout = SensorLayout::generic(8, 80.0);
        let mut rng = seed::rng(2, "t");
        let tr = PersonTraits::sample(&mut rng, 8, 0.05);
        let cfg = SynthConfig {
            style_asym_gain: 0.0,
            num_channels: 8,
            ..SynthConfig::default()
        };
        let base = generate_baseline(&tr, &layout, 64, 9).unwrap();
        let loaded = generate_loaded(
            &tr,
            &layout,
            64,
            0.0,
            CarryStyle::new(1, 4).unwrap(),
            &cfg,
            9,
        )
        .unwrap();
        assert_eq!(base, loaded);
    }

    #[test]
    fn attenuation_scales_rms() {
        let layout = SensorLayout::generic(4, 80.0);
        let tr = clean_traits(4);
        let cfg = SynthConfig {
            amp_atten_per_lb: 0.01,
            cadence_slow_per_lb: 0.0,
            style_asym_gain: 0.0,
            num_channels: 4,
            ..SynthConfig::default()
        };
        let base = generate_baseline(&tr, &layout, 800, 0).unwrap();
        let loaded = generate_loaded(
            &tr,
            &layout,
            800,
            50.0,
            CarryStyle::new(0, 4).unwrap(),
            &cfg,
            0,
        )
        .unwrap();
        for c in 0..4 {
            let ratio = loaded.channel_rms(c) / base.channel_rms(c);
            assert!((ratio - 1.0 / 1.5).abs() < 1e-12, "{ratio}");
        }
    }

    #[test]
    fn styles_differ_exactly_on_their_blocks() {
        let layout = SensorLayout::generic(12, 80.0);
        let mut rng = seed::rng(5, "t");
        let tr = PersonTraits::sample(&mut rng, 12, 0.0);
        let cfg = SynthConfig {
            num_channels: 12,
            ..SynthConfig::default()
        };
        let (s0, s2) = (
            CarryStyle::new(0, 4).unwrap(),
            CarryStyle::new(2, 4).unwrap(),
        );
        let a = generate_loaded(&tr, &layout, 50, 20.0, s0, &cfg, 1).unwrap();
        let b = generate_loaded(&tr, &layout, 50, 20.0, s2, &cfg, 1).unwrap();
        let differing: Vec<usize> = (0..12).filter(|&c| a.channel(c) != b.channel(c)).collect();
        let mut expect: Vec<usize> = style_channels(s0, 12)
            .chain(style_channels(s2, 12))
            .collect();
        expect.sort();
        assert_eq!(differing, expect);
    }

    #[test]
    fn unknown_style_rejected() {
        let layout = SensorLayout::generic(4, 80.0);
        let cfg = SynthConfig {
            num_channels: 4,
            ..SynthConfig::default()
        };
        let bad = CarryStyle::new(1, 2).unwrap();
        assert!(generate_loaded(&clean_traits(4), &layout, 10, 10.0, bad, &cfg, 0).is_err());
    }

    #[test]
    fn default_grid_has_sixteen_trials() {
        let cfg = SynthConfig {
            num_participants: 2,
            num_channels: 8,
            window_len: 16,
            baseline_len: 16,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg, &cfg.layout()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.iter().all(|p| p.trials.len() == 16));
        let one = SynthConfig {
            num_participants: 1,
            ..cfg.clone()
        };
        assert_eq!(generate_dataset(&one, &one.layout()).unwrap().len(), 1);
        let other = SynthConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            generate_dataset(&cfg, &cfg.layout()).unwrap(),
            generate_dataset(&other, &other.layout()).unwrap()
        );
        assert_eq!(
            generate_dataset(&cfg, &cfg.layout()).unwrap(),
            generate_dataset(&cfg, &cfg.layout()).unwrap()
        );
    }

    #[test]
    fn nearest_centroid_on_rms_ratios_separates_styles() {
        let cfg = SynthConfig {
            num_participants: 6,
            noise_std: 0.0,
            num_channels: 12,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg, &cfg.layout()).unwrap();
        let feats: Vec<(usize, Vec<f64>)> = ds
            .iter()
            .flat_map(|p| {
                let base: Vec<f64> = (0..12).map(|c| p.baseline_gait.channel_rms(c)).collect();
                p.trials.iter().map(move |t| {
                    let f = (0..12)
                        .map(|c| t.loaded_gait.channel_rms(c) / base[c])
                        .collect();
                    (t.style.index(), f)
                })
            })
            .collect();
        let mut centroids = vec![vec![0.0; 12]; 4];
        let mut counts = [0usize; 4];
        for (s, f) in &feats {
            counts[*s] += 1;
            centroids[*s].iter_mut().zip(f).for_each(|(c, v)| *c += v);
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        for (s, f) in &feats {
            let dist = |c: &Vec<f64>| c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..4)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            assert_eq!(best, *s);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rms_strictly_decreases_with_load(seed_v in 0u64..1000, steps in prop::collection::vec(5.0f64..15.0, 3)) {
            let layout = SensorLayout::generic(6, 80.0);
            let mut rng = seed::rng(seed_v, "traits");
            let tr = PersonTraits::sample(&mut rng, 6, 0.0);
            let cfg = SynthConfig { num_channels: 6, ..SynthConfig::default() };
            let style = CarryStyle::new(0, 4).unwrap();
            let mut load = 0.0;
            let mut prev: Option<GaitWindow> = None;
            for s in std::iter::once(0.0).chain(steps) {
                load += s;
                let w = generate_loaded(&tr, &layout, 800, load, style, &cfg, 0).unwrap();
                if let Some(p) = &prev {
                    for c in 0..6 {
                        prop_assert!(w.channel_rms(c) < p.channel_rms(c));
                    }
                }
                prev = Some(w);
            }
        }
    }
}
