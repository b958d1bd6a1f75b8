//! Binary model checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! "MFDK1"  u32 entry count
//! per entry: u16 name length, name, u8 rank, rank x u32 dims, f32 data
//! u32 metadata length, metadata as `key=value` lines
//! ```
//!
//! The metadata holds the model configuration (keys prefixed `model.`) and
//! free-form training information.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::dataset::parse_key_values;
use crate::detector::model::{architecture, LAYER_NAMES};
use crate::detector::{FusionMode, Layer, LayerStack, LossWeights, ModelConfig};
use crate::error::{Error, Result};
use crate::surgery::{SurgeryMode, SurgeryPlan};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"MFDK1";
const MODEL_PREFIX: &str = "model.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: LayerStack,
    /// Training metadata (epoch, metrics, provenance); never `model.*` keys.
    pub info: BTreeMap<String, String>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

fn config_to_meta(cfg: &ModelConfig) -> BTreeMap<String, String> {
    let anchors = cfg
        .anchors
        .iter()
        .map(|(w, h)| format!("{w}x{h}"))
        .collect::<Vec<_>>()
        .join(",");
    [
        ("input_size", cfg.input_size.to_string()),
        ("fusion_mode", cfg.fusion_mode.to_string()),
        ("base_width", cfg.base_width.to_string()),
        ("num_classes", cfg.num_classes.to_string()),
        ("anchors", anchors),
        ("leaky_slope", cfg.leaky_slope.to_string()),
        ("lambda_obj", cfg.loss_weights.objectness.to_string()),
        ("lambda_cls", cfg.loss_weights.class.to_string()),
        ("lambda_box", cfg.loss_weights.box_iou.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{MODEL_PREFIX}{k}"), v))
    .collect()
}

fn config_from_meta(meta: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let get = |k: &str| {
        meta.get(&format!("{MODEL_PREFIX}{k}"))
            .ok_or_else(|| corrupt(format!("metadata is missing {MODEL_PREFIX}{k}")))
    };
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| corrupt(format!("metadata {MODEL_PREFIX}{key}={v:?} is not a number")))
    }
    let anchors = get("anchors")?
        .split(',')
        .map(|a| {
            let (w, h) = a
                .split_once('x')
                .ok_or_else(|| corrupt(format!("anchor {a:?} is not WxH")))?;
            Ok((num("anchors", w)?, num("anchors", h)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let fusion_mode: FusionMode = get("fusion_mode")?
        .parse()
        .map_err(|e| corrupt(format!("metadata fusion mode: {e}")))?;
    let cfg = ModelConfig {
        input_size: num("input_size", get("input_size")?)?,
        fusion_mode,
        base_width: num("base_width", get("base_width")?)?,
        num_classes: num("num_classes", get("num_classes")?)?,
        anchors,
        leaky_slope: num("leaky_slope", get("leaky_slope")?)?,
        loss_weights: LossWeights {
            objectness: num("lambda_obj", get("lambda_obj")?)?,
            class: num("lambda_cls", get("lambda_cls")?)?,
            box_iou: num("lambda_box", get("lambda_box")?)?,
        },
    };
    cfg.validate()
        .map_err(|e| corrupt(format!("embedded model config: {e}")))?;
    Ok(cfg)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(model: LayerStack) -> Self {
        Checkpoint {
            model,
            info: BTreeMap::new(),
        }
    }

    pub fn with_info(mut self, key: &str, value: impl ToString) -> Self {
        self.info.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.named_params();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut meta = config_to_meta(&self.model.config);
        for (k, v) in &self.info {
            meta.entry(k.clone()).or_insert_with(|| v.clone());
        }
        let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(corrupt("bad magic, not a checkpoint file"));
        }
        let count = r.u32("entry count")? as usize;
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| corrupt(format!("entry {i} name is not UTF-8")))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            if rank == 0 || rank > 4 {
                return Err(corrupt(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| corrupt(format!("tensor {name} shape {shape:?} overflows")))?;
            let raw = r.take(numel, &format!("data of {name}"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| corrupt(format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(corrupt(format!("duplicate tensor {name}")));
            }
        }
        let meta_len = r.u32("metadata length")? as usize;
        let text = std::str::from_utf8(r.take(meta_len, "metadata")?).map_err(|_| corrupt("metadata is not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let meta = parse_key_values(text).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let config = config_from_meta(&meta)?;

        let mut layers = Vec::new();
        for ((spec, act), name) in architecture(&config).into_iter().zip(LAYER_NAMES) {
            let mut layer = Layer::zeros(name, spec, act);
            for (slot, suffix) in [(&mut layer.weight, "weight"), (&mut layer.bias, "bias")] {
                let key = format!("{name}.{suffix}");
                let t = tensors
                    .remove(&key)
                    .ok_or_else(|| corrupt(format!("missing tensor {key}")))?;
                if t.shape() != slot.shape() {
                    return Err(corrupt(format!(
                        "tensor {key} has shape {:?}, config expects {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t;
            }
            layers.push(layer);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(corrupt(format!("unexpected tensor {extra}")));
        }
        let info = meta.into_iter().filter(|(k, _)| !k.starts_with(MODEL_PREFIX)).collect();
        Ok(Checkpoint {
            model: LayerStack::from_layers(config, layers),
            info,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Weight surgery on a checkpoint; training metadata is carried over.
    pub fn adapt(&self, mode: SurgeryMode, n: usize) -> Result<Checkpoint> {
        let model = SurgeryPlan {
            mode,
            source: &self.model,
            n,
        }
        .apply()?;
        let mut info = self.info.clone();
        // the recorded sampling described the source's frame count
        info.remove("sampling");
        info.insert(
            "surgery".into(),
            format!(
                "{}:{n}",
                match mode {
                    SurgeryMode::EarlyFusion => "early_fusion",
                    SurgeryMode::Grouped => "grouped",
                }
            ),
        );
        Ok(Checkpoint { model, info })
    }
}
