//! Packed representation of a compressed codec and its size accounting.
//!
//! Dense weights are stored as a keep-bitmap plus the integer codes of the
//! surviving entries, with one `(alpha, w_min)` pair per tensor. Every other
//! parameter stays in FP32.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, RawTensor};
use crate::codec::{ModelConfig, SwinSitCodec};
use crate::compression::prune::{pruned_count, PruneMasks, PruneSpec};
use crate::compression::quant::{quantize_weights, ActivationRangeState, QuantizedTensor};
use crate::error::{Error, Result};
use crate::nn::{ParamKind, QuantRuntime};

pub const COMPRESSED_FORMAT: &str = "swinsit-compressed/1";

/// Bytes of per-tensor quantization metadata: `alpha` and `w_min` as f64.
pub const TENSOR_META_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTensor {
    pub shape: Vec<usize>,
    /// `true` where the weight survived pruning.
    pub mask: Vec<bool>,
    /// Codes of the surviving entries in row-major order.
    pub quant: QuantizedTensor,
}

impl CompressedTensor {
    pub fn kept(&self) -> usize {
        self.quant.codes.len()
    }

    /// Dense dequantized values with zeros at pruned positions.
    pub fn dequantize(&self) -> Vec<f64> {
        let vals = self.quant.dequantize();
        let mut it = vals.into_iter();
        self.mask
            .iter()
            .map(|&k| if k { it.next().unwrap_or(0.0) } else { 0.0 })
            .collect()
    }
}

/// Parameter counts and serialized sizes before and after compression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub total_params: usize,
    /// Parameters in pruning scope.
    pub prunable_params: usize,
    pub pruned_params: usize,
    /// `total - pruned`.
    pub remaining_params: usize,
    pub bits: u32,
    pub quantized_tensors: usize,
    /// Every parameter as FP32.
    pub dense_fp32_bytes: usize,
    /// Surviving parameters as FP32, value-only.
    pub pruned_value_bytes: usize,
    /// Keep-bitmaps over the prunable tensors.
    pub mask_bytes: usize,
    /// Codes of the surviving prunable parameters plus per-tensor metadata.
    pub quantized_payload_bytes: usize,
    /// Surviving prunable parameters as FP32.
    pub quantized_fp32_equivalent_bytes: usize,
    /// Parameters kept in FP32 outside pruning scope.
    pub unquantized_bytes: usize,
}

impl ModelStats {
    /// Accounting for a model of `total` parameters of which `prunable` are
    /// pruned at ratio `s` and quantized to `bits` in `tensors` tensors.
    pub fn from_counts(total: usize, prunable: usize, s: f64, bits: u32, tensors: usize) -> Result<Self> {
        if prunable > total {
            return Err(Error::arg(format!("prunable {prunable} exceeds total {total}")));
        }
        let pruned = pruned_count(prunable, s)?;
        Ok(Self::assemble(total, prunable, pruned, bits, tensors, prunable.div_ceil(8)))
    }

    fn assemble(total: usize, prunable: usize, pruned: usize, bits: u32, tensors: usize, mask_bytes: usize) -> Self {
        let remaining = total - pruned;
        let kept_prunable = prunable - pruned;
        Self {
            total_params: total,
            prunable_params: prunable,
            pruned_params: pruned,
            remaining_params: remaining,
            bits,
            quantized_tensors: tensors,
            dense_fp32_bytes: 4 * total,
            pruned_value_bytes: 4 * remaining,
            mask_bytes,
            quantized_payload_bytes: (kept_prunable * bits as usize).div_ceil(8) + tensors * TENSOR_META_BYTES,
            quantized_fp32_equivalent_bytes: 4 * kept_prunable,
            unquantized_bytes: 4 * (total - prunable),
        }
    }

    /// Sparse FP32 storage: values plus bitmaps.
    pub fn pruned_packed_bytes(&self) -> usize {
        self.pruned_value_bytes + self.mask_bytes
    }

    /// Value-only size of the pruned and quantized model.
    pub fn compressed_bytes(&self) -> usize {
        self.quantized_payload_bytes + self.unquantized_bytes
    }

    pub fn compressed_packed_bytes(&self) -> usize {
        self.compressed_bytes() + self.mask_bytes
    }

    pub fn size_ratio(&self) -> f64 {
        self.dense_fp32_bytes as f64 / self.compressed_bytes() as f64
    }
}

/// Stats of an uncompressed codec: nothing pruned, FP32 everywhere.
pub fn report_model_stats(codec: &SwinSitCodec) -> ModelStats {
    let total = codec.store.num_params();
    let prunable = codec.store.num_params_of(ParamKind::DenseWeight);
    ModelStats::assemble(total, prunable, 0, 32, 0, 0)
}

#[derive(Debug, Clone)]
pub struct CompressedModel {
    pub config: ModelConfig,
    pub bits: u32,
    pub spec: PruneSpec,
    pub dense: BTreeMap<String, CompressedTensor>,
    /// Parameters outside compression scope, as FP32.
    pub float: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    pub activations: BTreeMap<String, ActivationRangeState>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    shape: Vec<usize>,
    alpha: Option<f64>,
    w_min: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    bits: u32,
    spec: PruneSpec,
    tensors: BTreeMap<String, TensorMeta>,
    activations: BTreeMap<String, ActivationRangeState>,
}

impl CompressedModel {
    /// Pack the current codec weights under `masks`, quantizing the surviving
    /// dense weights per tensor.
    pub fn from_codec(codec: &SwinSitCodec, masks: &PruneMasks, quant: &QuantRuntime) -> Result<Self> {
        let mut dense = BTreeMap::new();
        let mut float = BTreeMap::new();
        for (name, p) in codec.store.iter() {
            let values = codec.store.values_f64(name)?;
            let shape = p.var.dims().to_vec();
            match (p.kind, masks.mask(name)) {
                (ParamKind::DenseWeight, Some(mask)) => {
                    let kept: Vec<f64> = values.iter().zip(mask).filter(|(_, k)| **k).map(|(v, _)| *v).collect();
                    let q = if kept.is_empty() {
                        QuantizedTensor {
                            codes: Vec::new(),
                            alpha: None,
                            w_min: 0.0,
                            bits: quant.bits,
                        }
                    } else {
                        quantize_weights(&kept, quant.bits)?
                    };
                    dense.insert(
                        name.clone(),
                        CompressedTensor {
                            shape,
                            mask: mask.to_vec(),
                            quant: q,
                        },
                    );
                }
                _ => {
                    float.insert(name.clone(), (shape, values.iter().map(|&v| v as f32).collect()));
                }
            }
        }
        Ok(Self {
            config: codec.config.clone(),
            bits: quant.bits,
            spec: masks.spec,
            dense,
            float,
            activations: quant.activations.clone(),
        })
    }

    pub fn stats(&self) -> ModelStats {
        let prunable: usize = self.dense.values().map(|t| t.mask.len()).sum();
        let pruned: usize = self.dense.values().map(|t| t.mask.len() - t.kept()).sum();
        let other: usize = self.float.values().map(|(_, v)| v.len()).sum();
        let mask_bytes = self.dense.values().map(|t| t.mask.len().div_ceil(8)).sum();
        ModelStats::assemble(prunable + other, prunable, pruned, self.bits, self.dense.len(), mask_bytes)
    }

    /// Rebuild a codec holding the dequantized weights, plus the runtime that
    /// quantizes activations with the calibrated ranges.
    pub fn to_codec(&self, dtype: DType) -> Result<(SwinSitCodec, QuantRuntime)> {
        let codec = SwinSitCodec::new(self.config.clone(), dtype, 0)?;
        for (name, _) in codec.store.iter() {
            if let Some(t) = self.dense.get(name) {
                codec.store.set_values_f64(name, &t.dequantize())?;
            } else if let Some((_, v)) = self.float.get(name) {
                let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                codec.store.set_values_f64(name, &v)?;
            } else {
                return Err(Error::Checkpoint(format!("compressed model lacks {name}")));
            }
        }
        let quant = QuantRuntime {
            bits: self.bits,
            quantize_weights: false,
            activations: self.activations.clone(),
        };
        Ok((codec, quant))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        let mut metas = BTreeMap::new();
        for (name, t) in &self.dense {
            let codes = match self.bits {
                0..=8 => RawTensor::u8(t.quant.codes.iter().map(|&c| c as u8).collect()),
                9..=16 => RawTensor::u16(&t.quant.codes.iter().map(|&c| c as u16).collect::<Vec<_>>()),
                _ => RawTensor::u32(&t.quant.codes),
            };
            tensors.push((format!("{name}.codes"), codes));
            tensors.push((format!("{name}.mask"), RawTensor::u8(pack_bits(&t.mask))));
            metas.insert(
                name.clone(),
                TensorMeta {
                    shape: t.shape.clone(),
                    alpha: t.quant.alpha,
                    w_min: t.quant.w_min,
                },
            );
        }
        for (name, (shape, v)) in &self.float {
            tensors.push((name.clone(), RawTensor::f32(shape.clone(), v)));
        }
        let header = Header {
            bits: self.bits,
            spec: self.spec,
            tensors: metas,
            activations: self.activations.clone(),
        };
        let meta = HashMap::from([
            ("format".to_string(), COMPRESSED_FORMAT.to_string()),
            ("config".to_string(), serde_json::to_string(&self.config)?),
            ("compression".to_string(), serde_json::to_string(&header)?),
        ]);
        checkpoint::write_tensors(path, &tensors, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = checkpoint::read_tensors(path)?;
        checkpoint::expect_format(path, &meta, COMPRESSED_FORMAT)?;
        let config: ModelConfig = checkpoint::config_of(path, &meta)?;
        let header: Header = serde_json::from_str(
            meta.get("compression")
                .ok_or_else(|| checkpoint::st_err(path, "missing compression header"))?,
        )?;
        let missing = |n: &str| checkpoint::st_err(path, format!("missing tensor {n}"));
        let mut dense = BTreeMap::new();
        for (name, m) in header.tensors {
            let codes_name = format!("{name}.codes");
            let mask_name = format!("{name}.mask");
            let codes = checkpoint::raw_to_u32(
                path,
                &codes_name,
                tensors.get(&codes_name).ok_or_else(|| missing(&codes_name))?,
            )?;
            let n: usize = m.shape.iter().product();
            let mask = unpack_bits(&tensors.get(&mask_name).ok_or_else(|| missing(&mask_name))?.bytes, n);
            if mask.iter().filter(|k| **k).count() != codes.len() {
                return Err(checkpoint::st_err(path, format!("{name}: mask and codes disagree")));
            }
            dense.insert(
                name,
                CompressedTensor {
                    shape: m.shape,
                    mask,
                    quant: QuantizedTensor {
                        codes,
                        alpha: m.alpha,
                        w_min: m.w_min,
                        bits: header.bits,
                    },
                },
            );
        }
        let mut float = BTreeMap::new();
        for (name, t) in &tensors {
            if name.ends_with(".codes") || name.ends_with(".mask") {
                continue;
            }
            let v = checkpoint::raw_to_f64(path, name, t)?;
            float.insert(name.clone(), (t.shape.clone(), v.iter().map(|&x| x as f32).collect()));
        }
        Ok(Self {
            config,
            bits: header.bits,
            spec: header.spec,
            dense,
            float,
            activations: header.activations,
        })
    }
}

fn pack_bits(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &k) in mask.iter().enumerate() {
        if k {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes.get(i / 8).is_some_and(|b| b & (1 << (i % 8)) != 0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_counts() {
        let s = ModelStats::from_counts(13_679_488, 13_679_488, 0.6, 8, 0).unwrap();
        assert_eq!(s.pruned_params, 8_207_693);
        assert_eq!(s.remaining_params, 5_471_795);
        assert_eq!(s.pruned_params + s.remaining_params, s.total_params);
        let ratio = s.size_ratio();
        assert!((ratio - 10.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn int8_payload_is_a_quarter() {
        let s = ModelStats::from_counts(100_000, 90_000, 0.6, 8, 40).unwrap();
        let kept = 90_000 - 54_000;
        assert_eq!(s.quantized_payload_bytes, kept + 40 * TENSOR_META_BYTES);
        let r = s.quantized_payload_bytes as f64 / s.quantized_fp32_equivalent_bytes as f64;
        assert!((r - 0.25).abs() <= 0.025);
    }

    #[test]
    fn bitmap_round_trip() {
        let m: Vec<bool> = (0..19).map(|i| i % 3 != 0).collect();
        assert_eq!(unpack_bits(&pack_bits(&m), 19), m);
        assert_eq!(pack_bits(&m).len(), 3);
    }

    #[test]
    fn dequantize_places_zeros() {
        let t = CompressedTensor {
            shape: vec![4],
            mask: vec![true, false, false, true],
            quant: quantize_weights(&[-1.0, 1.0], 8).unwrap(),
        };
        assert_eq!(t.dequantize(), vec![-1.0, 0.0, 0.0, 1.0]);
    }
}
