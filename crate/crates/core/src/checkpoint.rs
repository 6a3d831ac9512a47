//! Safetensors checkpoints. The codec and the denoiser are stored in
//! separate files; each file carries its JSON config in the header metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::ceac::{DnCnnConfig, Denoiser};
use crate::codec::{ModelConfig, SwinSitCodec};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CODEC_FORMAT: &str = "swinsit-codec/1";
pub const DENOISER_FORMAT: &str = "swinsit-dncnn/1";

/// An owned tensor ready for serialization.
#[derive(Debug, Clone)]
pub(crate) struct RawTensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl RawTensor {
    pub fn f32(shape: Vec<usize>, values: &[f32]) -> Self {
        Self {
            dtype: Dtype::F32,
            shape,
            bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn f64(shape: Vec<usize>, values: &[f64]) -> Self {
        Self {
            dtype: Dtype::F64,
            shape,
            bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn u8(values: Vec<u8>) -> Self {
        Self {
            dtype: Dtype::U8,
            shape: vec![values.len()],
            bytes: values,
        }
    }

    pub fn u16(values: &[u16]) -> Self {
        Self {
            dtype: Dtype::U16,
            shape: vec![values.len()],
            bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn u32(values: &[u32]) -> Self {
        Self {
            dtype: Dtype::U32,
            shape: vec![values.len()],
            bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }
}

pub(crate) fn st_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {e}", path.display()))
}

pub(crate) fn write_tensors(
    path: &Path,
    tensors: &[(String, RawTensor)],
    metadata: HashMap<String, String>,
) -> Result<()> {
    let mut views = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let v = TensorView::new(t.dtype, t.shape.clone(), &t.bytes).map_err(|e| st_err(path, e))?;
        views.push((name.as_str(), v));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    safetensors::serialize_to_file(views, Some(metadata), path).map_err(|e| st_err(path, e))
}

/// All tensors of a file plus its metadata.
pub(crate) fn read_tensors(path: &Path) -> Result<(HashMap<String, RawTensor>, HashMap<String, String>)> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| st_err(path, e))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(&bytes).map_err(|e| st_err(path, e))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        out.insert(
            name,
            RawTensor {
                dtype: view.dtype(),
                shape: view.shape().to_vec(),
                bytes: view.data().to_vec(),
            },
        );
    }
    Ok((out, meta))
}

pub(crate) fn raw_to_f64(path: &Path, name: &str, t: &RawTensor) -> Result<Vec<f64>> {
    match t.dtype {
        Dtype::F32 => Ok(t
            .bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()),
        Dtype::F64 => Ok(t
            .bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()),
        other => Err(st_err(path, format!("tensor {name}: unsupported dtype {other:?}"))),
    }
}

pub(crate) fn raw_to_u32(path: &Path, name: &str, t: &RawTensor) -> Result<Vec<u32>> {
    match t.dtype {
        Dtype::U8 => Ok(t.bytes.iter().map(|&b| b as u32).collect()),
        Dtype::U16 => Ok(t
            .bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as u32)
            .collect()),
        Dtype::U32 => Ok(t
            .bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect()),
        other => Err(st_err(path, format!("tensor {name}: unsupported code dtype {other:?}"))),
    }
}

pub(crate) fn tensor_to_raw(t: &Tensor) -> Result<RawTensor> {
    let shape = t.dims().to_vec();
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => RawTensor::f64(shape, &flat.to_vec1::<f64>()?),
        _ => RawTensor::f32(shape, &flat.to_dtype(DType::F32)?.to_vec1::<f32>()?),
    })
}

/// Write every tensor of `store`, buffers included.
pub fn save_store(path: &Path, store: &ParamStore, metadata: HashMap<String, String>) -> Result<()> {
    let tensors = store
        .iter()
        .map(|(n, p)| Ok((n.clone(), tensor_to_raw(p.var.as_tensor())?)))
        .collect::<Result<Vec<_>>>()?;
    write_tensors(path, &tensors, metadata)
}

/// Fill `store` from a file holding exactly its tensor names and shapes.
pub fn load_store(path: &Path, store: &ParamStore) -> Result<HashMap<String, String>> {
    let (tensors, meta) = read_tensors(path)?;
    for (name, p) in store.iter() {
        let t = tensors
            .get(name)
            .ok_or_else(|| st_err(path, format!("missing tensor {name}")))?;
        if t.shape != p.var.dims() {
            return Err(st_err(
                path,
                format!("tensor {name}: shape {:?}, model expects {:?}", t.shape, p.var.dims()),
            ));
        }
        store.set_values_f64(name, &raw_to_f64(path, name, t)?)?;
    }
    if let Some(extra) = tensors.keys().find(|k| store.get(k).is_none()) {
        return Err(st_err(path, format!("unexpected tensor {extra}")));
    }
    Ok(meta)
}

/// Header metadata of a safetensors file.
pub fn read_metadata(path: &Path) -> Result<HashMap<String, String>> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| st_err(path, e))?;
    Ok(header.metadata().clone().unwrap_or_default())
}

pub(crate) fn expect_format(path: &Path, meta: &HashMap<String, String>, format: &str) -> Result<()> {
    match meta.get("format") {
        Some(f) if f == format => Ok(()),
        Some(f) => Err(st_err(path, format!("format {f}, expected {format}"))),
        None => Err(st_err(path, "missing format tag")),
    }
}

pub(crate) fn config_of<T: serde::de::DeserializeOwned>(path: &Path, meta: &HashMap<String, String>) -> Result<T> {
    let raw = meta.get("config").ok_or_else(|| st_err(path, "missing config"))?;
    Ok(serde_json::from_str(raw)?)
}

pub fn save_codec(path: &Path, codec: &SwinSitCodec) -> Result<()> {
    let meta = HashMap::from([
        ("format".to_string(), CODEC_FORMAT.to_string()),
        ("config".to_string(), serde_json::to_string(&codec.config)?),
    ]);
    save_store(path, &codec.store, meta)
}

pub fn load_codec(path: &Path, dtype: DType) -> Result<SwinSitCodec> {
    let meta = read_metadata(path)?;
    expect_format(path, &meta, CODEC_FORMAT)?;
    let config: ModelConfig = config_of(path, &meta)?;
    let codec = SwinSitCodec::new(config, dtype, 0)?;
    load_store(path, &codec.store)?;
    Ok(codec)
}

pub fn save_denoiser(path: &Path, denoiser: &Denoiser) -> Result<()> {
    let meta = HashMap::from([
        ("format".to_string(), DENOISER_FORMAT.to_string()),
        ("config".to_string(), serde_json::to_string(&denoiser.config)?),
    ]);
    save_store(path, &denoiser.store, meta)
}

pub fn load_denoiser(path: &Path, dtype: DType) -> Result<Denoiser> {
    let meta = read_metadata(path)?;
    expect_format(path, &meta, DENOISER_FORMAT)?;
    let config: DnCnnConfig = config_of(path, &meta)?;
    let denoiser = Denoiser::new(config, dtype, 0)?;
    load_store(path, &denoiser.store)?;
    Ok(denoiser)
}
