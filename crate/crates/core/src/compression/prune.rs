//! Global magnitude pruning of dense-layer weights.

use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore};

/// Target sparsity and the magnitude threshold it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub sparsity: f64,
    pub gamma: f64,
}

fn check_sparsity(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::arg(format!("sparsity must be in [0, 1), got {s}")));
    }
    Ok(())
}

/// Number of connections a sparsity ratio removes from `total`.
pub fn pruned_count(total: usize, s: f64) -> Result<usize> {
    check_sparsity(s)?;
    Ok((s * total as f64).round() as usize)
}

/// Magnitude threshold that prunes the `round(s N)` smallest connections.
///
/// Connections are kept when `|w| > gamma`, so the threshold is the largest
/// magnitude among the pruned ones; for `s = 0` it is zero.
pub fn threshold_from_sparsity(magnitudes: &[f64], s: f64) -> Result<f64> {
    check_sparsity(s)?;
    if magnitudes.is_empty() {
        return Err(Error::arg("no prunable weights"));
    }
    let p = pruned_count(magnitudes.len(), s)?;
    if p == 0 {
        return Ok(0.0);
    }
    let mut sorted: Vec<f64> = magnitudes.iter().map(|m| m.abs()).collect();
    let (_, nth, _) = sorted.select_nth_unstable_by(p - 1, f64::total_cmp);
    Ok(*nth)
}

/// Zero every entry with `|w| <= gamma`. The returned mask is `true` where a
/// weight survives.
pub fn prune_weights(w: &[f64], gamma: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(Error::arg(format!("pruning threshold must be >= 0, got {gamma}")));
    }
    let mask: Vec<bool> = w.iter().map(|v| v.abs() > gamma).collect();
    let pruned = w
        .iter()
        .zip(&mask)
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect();
    Ok((pruned, mask))
}

/// Table-style bookkeeping of a pruning pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningAccount {
    pub total: usize,
    pub pruned: usize,
    pub remaining: usize,
}

impl PruningAccount {
    pub fn for_sparsity(total: usize, s: f64) -> Result<Self> {
        let pruned = pruned_count(total, s)?;
        Ok(Self {
            total,
            pruned,
            remaining: total - pruned,
        })
    }
}

/// Persistent 0/1 masks over the prunable tensors of a model.
#[derive(Debug, Clone)]
pub struct PruneMasks {
    pub spec: PruneSpec,
    masks: BTreeMap<String, Tensor>,
    kept: BTreeMap<String, Vec<bool>>,
}

impl PruneMasks {
    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.masks.keys()
    }

    pub fn mask(&self, name: &str) -> Option<&[bool]> {
        self.kept.get(name).map(|v| v.as_slice())
    }

    pub fn pruned(&self) -> usize {
        self.kept.values().map(|m| m.iter().filter(|k| !**k).count()).sum()
    }

    pub fn covered(&self) -> usize {
        self.kept.values().map(|m| m.len()).sum()
    }

    /// Re-zero masked positions, e.g. after an optimizer step.
    pub fn apply(&self, store: &ParamStore) -> Result<()> {
        for (name, mask) in &self.masks {
            let p = store
                .get(name)
                .ok_or_else(|| Error::arg(format!("mask for unknown parameter {name}")))?;
            let v = p.var.as_tensor().mul(mask)?;
            p.var.set(&v)?;
        }
        Ok(())
    }
}

/// Global magnitude pruning over every dense weight in `store`.
pub fn prune_model(store: &ParamStore, s: f64) -> Result<PruneMasks> {
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::DenseWeight)
        .map(|(n, _)| n.clone())
        .collect();
    let mut values = BTreeMap::new();
    let mut all = Vec::new();
    for n in &names {
        let v = store.values_f64(n)?;
        all.extend(v.iter().map(|x| x.abs()));
        values.insert(n.clone(), v);
    }
    let gamma = threshold_from_sparsity(&all, s)?;
    let mut masks = BTreeMap::new();
    let mut kept = BTreeMap::new();
    for (n, v) in values {
        let (pruned, mask) = prune_weights(&v, gamma)?;
        store.set_values_f64(&n, &pruned)?;
        let dims = store.get(&n).unwrap().var.dims().to_vec();
        let m: Vec<f64> = mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        let t = Tensor::from_vec(m, dims, store.device())?.to_dtype(store.dtype())?;
        masks.insert(n.clone(), t);
        kept.insert(n, mask);
    }
    Ok(PruneMasks {
        spec: PruneSpec { sparsity: s, gamma },
        masks,
        kept,
    })
}
