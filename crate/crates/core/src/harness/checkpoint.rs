//! Single-file run container: model weights, optimizer state, progress
//! counters, and the full run configuration, reloadable bit-for-bit.
//!
//! Layout: 8-byte magic, little-endian u64 metadata length, JSON metadata,
//! then all tensor payloads as little-endian f64 in one blob. Tensor order
//! and shapes live in the metadata.

use super::optim::AdamW;
use super::RunConfig;
use crate::error::{Error, Result};
use crate::params::{Arr, ParamStore};
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"CNCK0001";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, counted in f64 elements.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct OptMeta {
    steps: u64,
    /// First-moment then second-moment entries, same order as `params`.
    m: Vec<TensorMeta>,
    v: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: RunConfig,
    epoch: usize,
    best_metric: Option<f64>,
    lr_scale: f64,
    params: Vec<TensorMeta>,
    optimizer: Option<OptMeta>,
}

/// A loaded checkpoint, decoded but not yet applied to any store.
pub struct Snapshot {
    pub config: RunConfig,
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub lr_scale: f64,
    pub tensors: BTreeMap<String, Arr>,
    /// Optimizer step count plus per-parameter (m, v) moment slots.
    pub optimizer: Option<(u64, BTreeMap<String, (Arr, Arr)>)>,
}

pub fn save(
    path: &Path,
    store: &ParamStore,
    config: &RunConfig,
    epoch: usize,
    best_metric: Option<f64>,
    lr_scale: f64,
    optimizer: Option<&AdamW>,
) -> Result<()> {
    let mut blob: Vec<f64> = Vec::new();
    let describe = |name: String, arr: &Arr, blob: &mut Vec<f64>| {
        let meta = TensorMeta {
            name,
            shape: arr.shape().to_vec(),
            offset: blob.len() as u64,
        };
        blob.extend(arr.iter().copied());
        meta
    };

    let mut params = Vec::new();
    for id in store.ids() {
        params.push(describe(store.name(id).to_string(), store.value(id), &mut blob));
    }
    let optimizer = optimizer.map(|opt| {
        let (m, v) = opt.slots();
        let mut m_meta = Vec::new();
        let mut v_meta = Vec::new();
        for id in store.ids() {
            let name = store.name(id).to_string();
            m_meta.push(describe(name.clone(), &m[id.index()], &mut blob));
            v_meta.push(describe(name, &v[id.index()], &mut blob));
        }
        OptMeta { steps: opt.steps(), m: m_meta, v: v_meta }
    });

    let meta = Meta {
        config: config.clone(),
        epoch,
        best_metric,
        lr_scale,
        params,
        optimizer,
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::Checkpoint(format!("metadata encode: {e}")))?;

    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(meta_json.len() as u64).to_le_bytes())?;
    file.write_all(&meta_json)?;
    let mut bytes = Vec::with_capacity(blob.len() * 8);
    for value in &blob {
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Snapshot> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("unrecognized container magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("file too short for metadata length".into()))?;
    let meta_len = u64::from_le_bytes(len_bytes) as usize;
    let mut meta_json = vec![0u8; meta_len];
    file.read_exact(&mut meta_json)
        .map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
    let meta: Meta = serde_json::from_slice(&meta_json)
        .map_err(|e| Error::Checkpoint(format!("metadata decode: {e}")))?;

    let mut byte_blob = Vec::new();
    file.read_to_end(&mut byte_blob)?;
    if byte_blob.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of values".into()));
    }
    let blob: Vec<f64> = byte_blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let take = |meta: &TensorMeta| -> Result<Arr> {
        let len: usize = meta.shape.iter().product();
        let start = meta.offset as usize;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= blob.len())
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} overruns payload", meta.name)))?;
        Arr::from_shape_vec(IxDyn(&meta.shape), blob[start..end].to_vec())
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", meta.name)))
    };

    let mut tensors = BTreeMap::new();
    for tm in &meta.params {
        if tensors.insert(tm.name.clone(), take(tm)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {}", tm.name)));
        }
    }
    let optimizer = match &meta.optimizer {
        None => None,
        Some(om) => {
            if om.m.len() != meta.params.len() || om.v.len() != meta.params.len() {
                return Err(Error::Checkpoint("optimizer slot count mismatch".into()));
            }
            let mut slots = BTreeMap::new();
            for (mm, vm) in om.m.iter().zip(&om.v) {
                if mm.name != vm.name {
                    return Err(Error::Checkpoint("optimizer slot name mismatch".into()));
                }
                slots.insert(mm.name.clone(), (take(mm)?, take(vm)?));
            }
            Some((om.steps, slots))
        }
    };

    Ok(Snapshot {
        config: meta.config,
        epoch: meta.epoch,
        best_metric: meta.best_metric,
        lr_scale: meta.lr_scale,
        tensors,
        optimizer,
    })
}

impl Snapshot {
    /// Copies the stored weights into `store`. The parameter sets must match
    /// exactly, names and shapes both ways.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {} parameters",
                self.tensors.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in &ids {
            let name = store.name(*id);
            let stored = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if stored.shape() != store.value(*id).shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: stored {:?}, model {:?}",
                    stored.shape(),
                    store.value(*id).shape()
                )));
            }
        }
        for id in ids {
            let stored = self.tensors[store.name(id)].clone();
            *store.value_mut(id) = stored;
        }
        Ok(())
    }

    /// Rebuilds the optimizer from stored moments, or a fresh one if the
    /// checkpoint carried none.
    pub fn restore_optimizer(&self, store: &ParamStore) -> Result<AdamW> {
        let Some((steps, slots)) = &self.optimizer else {
            return Ok(AdamW::new(store));
        };
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for id in store.ids() {
            let name = store.name(id);
            let (sm, sv) = slots
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer slots for {name}")))?;
            m.push(sm.clone());
            v.push(sv.clone());
        }
        AdamW::from_slots(store, *steps, m, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::optim::OptimConfig;

    fn demo_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("backbone.w", ndarray::arr2(&[[0.1, -0.7], [3.5e-11, 2.0]]).into_dyn());
        s.add("decoder.b", ndarray::arr1(&[1.0 / 3.0, f64::MIN_POSITIVE]).into_dyn());
        s
    }

    fn bits(a: &Arr) -> Vec<u64> {
        a.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ck");
        let mut store = demo_store();
        let cfg = RunConfig { seed: 11, ..Default::default() };

        // Give the optimizer non-trivial moments.
        let mut opt = AdamW::new(&store);
        for id in store.ids().collect::<Vec<_>>() {
            let g = Arr::from_elem(store.value(id).raw_dim(), 0.125);
            store.accumulate_grad(id, g);
        }
        opt.step(&mut store, &OptimConfig::default(), 1.0, 1e-9);

        save(&path, &store, &cfg, 17, Some(0.042), 0.25, Some(&opt)).unwrap();
        let snap = load(&path).unwrap();
        assert_eq!(snap.epoch, 17);
        assert_eq!(snap.best_metric, Some(0.042));
        assert_eq!(snap.lr_scale, 0.25);
        assert_eq!(snap.config.seed, 11);

        let mut restored = demo_store();
        snap.restore_params(&mut restored).unwrap();
        for id in store.ids() {
            assert_eq!(bits(store.value(id)), bits(restored.value(id)));
        }
        let opt2 = snap.restore_optimizer(&restored).unwrap();
        assert_eq!(opt2.steps(), opt.steps());
        let (m1, v1) = opt.slots();
        let (m2, v2) = opt2.slots();
        for i in 0..m1.len() {
            assert_eq!(bits(&m1[i]), bits(&m2[i]));
            assert_eq!(bits(&v1[i]), bits(&v2[i]));
        }
    }

    #[test]
    fn missing_optimizer_section_yields_fresh_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ck");
        let store = demo_store();
        save(&path, &store, &RunConfig::default(), 0, None, 1.0, None).unwrap();
        let snap = load(&path).unwrap();
        assert!(snap.optimizer.is_none());
        let opt = snap.restore_optimizer(&store).unwrap();
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ck");
        save(&path, &demo_store(), &RunConfig::default(), 0, None, 1.0, None).unwrap();
        let snap = load(&path).unwrap();

        let mut renamed = ParamStore::new();
        renamed.add("backbone.w", ndarray::arr2(&[[0.0, 0.0], [0.0, 0.0]]).into_dyn());
        renamed.add("decoder.other", ndarray::arr1(&[0.0, 0.0]).into_dyn());
        assert!(snap.restore_params(&mut renamed).is_err());

        let mut reshaped = ParamStore::new();
        reshaped.add("backbone.w", ndarray::arr1(&[0.0; 4]).into_dyn());
        reshaped.add("decoder.b", ndarray::arr1(&[0.0, 0.0]).into_dyn());
        assert!(snap.restore_params(&mut reshaped).is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ck");
        save(&path, &demo_store(), &RunConfig::default(), 0, None, 1.0, None).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad_magic = dir.path().join("bad_magic.ck");
        std::fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(load(&bad_magic), Err(Error::Checkpoint(_))));

        let truncated = dir.path().join("short.ck");
        std::fs::write(&truncated, &std::fs::read(&path).unwrap()[..20]).unwrap();
        assert!(load(&truncated).is_err());
    }
}
