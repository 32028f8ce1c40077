//! Checkpoint directory:
//!
//! ```text
//! manifest.json   model config, its hash, tensor index, optimizer state, normalization
//! params.bin      parameters then buffers, little-endian f32, in index order
//! adam_m.bin      first moments, same order as the parameters
//! adam_v.bin      second moments
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::model::{AuxVae, ModelConfig};
use crate::nn::{AdamHyper, AdamState, ParamStore, ParamTensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub path: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub model: ModelConfig,
    pub run_config_hash: Option<String>,
    pub seed: u64,
    /// Seed the parameters were initialized from.
    pub init_seed: u64,
    pub epochs_completed: usize,
    pub adam: AdamHyper,
    pub adam_step: u64,
    pub normalization: NormalizationStats,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub normalization: NormalizationStats,
    pub seed: u64,
    pub epochs_completed: usize,
    pub run_config_hash: Option<String>,
}

fn encode(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!(
            "{} is not a whole number of f32 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn index<'a>(
    tensors: impl Iterator<Item = (&'a String, &'a ParamTensor<f32>)>,
    offset: &mut usize,
) -> Vec<TensorEntry> {
    tensors
        .map(|(p, t)| {
            let e = TensorEntry {
                path: p.clone(),
                shape: t.shape.clone(),
                offset: *offset,
            };
            *offset += t.data.len();
            e
        })
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut offset = 0;
    let params = index(ckpt.store.params(), &mut offset);
    let buffers = index(ckpt.store.buffers(), &mut offset);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        code_version: crate::VERSION.to_string(),
        config_hash: ckpt.model.hash(),
        model: ckpt.model.clone(),
        run_config_hash: ckpt.run_config_hash.clone(),
        seed: ckpt.seed,
        init_seed: ckpt.store.rng_seed,
        epochs_completed: ckpt.epochs_completed,
        adam: ckpt.adam.hyper,
        adam_step: ckpt.adam.step_count,
        normalization: ckpt.normalization.clone(),
        params,
        buffers,
    };
    let values = ckpt
        .store
        .params()
        .chain(ckpt.store.buffers())
        .flat_map(|(_, t)| t.data.iter().copied());
    write(&dir.join("params.bin"), &encode(values))?;
    for (name, moments) in [("adam_m.bin", &ckpt.adam.m), ("adam_v.bin", &ckpt.adam.v)] {
        let mut values = Vec::new();
        for (p, t) in ckpt.store.params() {
            match moments.get(p) {
                Some(m) => values.extend_from_slice(&m.data),
                None => values.extend(std::iter::repeat_n(0.0f32, t.data.len())),
            }
        }
        write(&dir.join(name), &encode(values.into_iter()))?;
    }
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            m.format_version
        )));
    }
    if m.model.hash() != m.config_hash {
        return Err(Error::Checkpoint(
            "manifest config hash does not match its model config".into(),
        ));
    }
    Ok(m)
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

fn slice(flat: &[f32], e: &TensorEntry, what: &str) -> Result<ParamTensor<f32>> {
    let n: usize = e.shape.iter().product();
    let data = flat.get(e.offset..e.offset + n).ok_or_else(|| {
        Error::Checkpoint(format!("{what} `{}` lies past the end of its file", e.path))
    })?;
    Ok(ParamTensor {
        shape: e.shape.clone(),
        data: data.to_vec(),
    })
}

/// Loads a checkpoint. With `expected`, the stored model config must hash
/// to the same value.
pub fn load_checkpoint(dir: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let m = read_manifest(dir)?;
    if let Some(cfg) = expected {
        let want = cfg.hash();
        if want != m.config_hash {
            return Err(Error::HashMismatch {
                expected: want,
                found: m.config_hash,
            });
        }
    }
    let flat = read_f32(&dir.join("params.bin"))?;
    let total: usize = m
        .params
        .iter()
        .chain(&m.buffers)
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if flat.len() != total {
        return Err(Error::Checkpoint(format!(
            "params.bin holds {} values, index needs {total}",
            flat.len()
        )));
    }
    let mut store = ParamStore::empty(m.init_seed);
    for e in &m.params {
        store.insert_param(e.path.clone(), slice(&flat, e, "parameter")?);
    }
    for e in &m.buffers {
        store.insert_buffer(e.path.clone(), slice(&flat, e, "buffer")?);
    }
    AuxVae::new(m.model.clone())?.check_store(&store)?;

    let mut moments = Vec::new();
    for name in ["adam_m.bin", "adam_v.bin"] {
        let flat = read_f32(&dir.join(name))?;
        let n: usize = m
            .params
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum();
        if flat.len() != n {
            return Err(Error::Checkpoint(format!(
                "{name} holds {} values, expected {n}",
                flat.len()
            )));
        }
        let map: BTreeMap<String, ParamTensor<f32>> = m
            .params
            .iter()
            .map(|e| Ok((e.path.clone(), slice(&flat, e, "moment")?)))
            .collect::<Result<_>>()?;
        moments.push(map);
    }
    let v = moments.pop().expect("two moment files");
    let mo = moments.pop().expect("two moment files");
    Ok(Checkpoint {
        model: m.model,
        store,
        adam: AdamState {
            hyper: m.adam,
            step_count: m.adam_step,
            m: mo,
            v,
        },
        normalization: m.normalization,
        seed: m.seed,
        epochs_completed: m.epochs_completed,
        run_config_hash: m.run_config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> Checkpoint {
        let mut cfg = ModelConfig::new(2, 8, 8, 2);
        cfg.encoder.tcn_channels = vec![3];
        cfg.encoder.attn_dim = 4;
        cfg.encoder.num_heads = 2;
        cfg.encoder.d_k = 2;
        cfg.encoder.d_v = 2;
        cfg.encoder.latent_dim = 3;
        cfg.head_hidden = 4;
        let model = AuxVae::new(cfg.clone()).unwrap();
        let store = model.init_params::<f32>(9).unwrap();
        let mut adam = AdamState::new(&store, AdamHyper::default());
        let grads = store
            .params()
            .map(|(p, t)| (p.clone(), vec![0.5f32; t.data.len()]))
            .collect();
        let mut stepped = store.clone();
        adam.step(&mut stepped, &grads).unwrap();
        Checkpoint {
            model: cfg,
            store: stepped,
            adam,
            normalization: NormalizationStats {
                per_channel_mean: vec![-0.042411387842642756, 0.2],
                per_channel_std: vec![0.6707069521137048, 2.0],
            },
            seed: 11,
            epochs_completed: 1,
            run_config_hash: Some("abc".into()),
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny();
        save_checkpoint(dir.path(), &c).unwrap();
        let back = load_checkpoint(dir.path(), Some(&c.model)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn altered_latent_dim_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny();
        save_checkpoint(dir.path(), &c).unwrap();
        let mut other = c.model.clone();
        other.encoder.latent_dim = 4;
        assert!(matches!(
            load_checkpoint(dir.path(), Some(&other)),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &tiny()).unwrap();
        let p = dir.path().join("params.bin");
        let mut raw = fs::read(&p).unwrap();
        raw.truncate(raw.len() - 4);
        fs::write(&p, raw).unwrap();
        assert!(load_checkpoint(dir.path(), None).is_err());
        fs::write(dir.path().join(MANIFEST_FILE), "{").unwrap();
        assert!(matches!(
            load_checkpoint(dir.path(), None),
            Err(Error::Checkpoint(_))
        ));
    }
}
