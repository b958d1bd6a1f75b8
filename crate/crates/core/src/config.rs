//! Run configuration: a `key = value` file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::dataset::parse_key_values;
use crate::data::SamplingSpec;
use crate::detector::{FusionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::optim::SgdConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub sampling: SamplingSpec,
    pub fusion_mode: FusionMode,
    pub input_size: usize,
    pub base_width: usize,
    pub num_classes: usize,
    pub num_anchors: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lr_decay: f32,
    pub lr_decay_at: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
    pub val_fraction: f32,
    pub augment: bool,
    pub max_translate: f32,
    pub max_scale: f32,
    pub conf_threshold: f32,
    pub nms_iou: f32,
    /// Optional starting weights (for example a surgically adapted checkpoint).
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            dataset_root: None,
            out_dir: PathBuf::from("runs"),
            sampling: SamplingSpec::Adjacent { n: 1 },
            fusion_mode: FusionMode::Single,
            input_size: 64,
            base_width: 32,
            num_classes: 1,
            num_anchors: 3,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.sgd.learning_rate,
            lr_decay: t.lr_decay,
            lr_decay_at: t.lr_decay_at,
            momentum: t.sgd.momentum,
            weight_decay: t.sgd.weight_decay,
            seed: 0,
            val_fraction: 0.2,
            augment: t.augment,
            max_translate: t.max_translate,
            max_scale: t.max_scale,
            conf_threshold: t.conf_threshold,
            nms_iou: t.nms_iou,
            init_checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::invalid("config value", format!("{key}={value}: {e}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 23] = [
        "dataset_root",
        "out_dir",
        "sampling",
        "fusion_mode",
        "input_size",
        "base_width",
        "num_classes",
        "num_anchors",
        "epochs",
        "batch_size",
        "lr",
        "lr_decay",
        "lr_decay_at",
        "momentum",
        "weight_decay",
        "seed",
        "val_fraction",
        "augment",
        "max_translate",
        "max_scale",
        "conf_threshold",
        "nms_iou",
        "init_checkpoint",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset_root" => self.dataset_root = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "sampling" => self.sampling = parse(key, value)?,
            "fusion_mode" => self.fusion_mode = parse(key, value)?,
            "input_size" => self.input_size = parse(key, value)?,
            "base_width" => self.base_width = parse(key, value)?,
            "num_classes" => self.num_classes = parse(key, value)?,
            "num_anchors" => self.num_anchors = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "lr_decay_at" => self.lr_decay_at = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "max_translate" => self.max_translate = parse(key, value)?,
            "max_scale" => self.max_scale = parse(key, value)?,
            "conf_threshold" => self.conf_threshold = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "init_checkpoint" => self.init_checkpoint = Some(PathBuf::from(value)),
            _ => {
                return Err(Error::invalid(
                    "config key",
                    format!("unknown key {key:?}; known keys: {}", Self::KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        entries.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let entries = parse_key_values(text).map_err(|e| Error::invalid("config file", e))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&entries)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Format {
            kind: "config",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Applies `--key value` / `--key=value` overrides.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(body) = arg.strip_prefix("--") else {
                return Err(Error::invalid("override", format!("expected --key, got {arg:?}")));
            };
            let (key, value) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::invalid("override", format!("--{body} needs a value")))?;
                    (body.to_string(), v.clone())
                }
            };
            self.set(&key.replace('-', "_"), &value)?;
        }
        Ok(())
    }

    /// Canonical `key=value` text that [`RunConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let pairs: Vec<(&str, Option<String>)> = vec![
            ("dataset_root", opt(&self.dataset_root)),
            ("out_dir", Some(self.out_dir.display().to_string())),
            ("sampling", Some(self.sampling.to_string())),
            ("fusion_mode", Some(self.fusion_mode.to_string())),
            ("input_size", Some(self.input_size.to_string())),
            ("base_width", Some(self.base_width.to_string())),
            ("num_classes", Some(self.num_classes.to_string())),
            ("num_anchors", Some(self.num_anchors.to_string())),
            ("epochs", Some(self.epochs.to_string())),
            ("batch_size", Some(self.batch_size.to_string())),
            ("lr", Some(self.lr.to_string())),
            ("lr_decay", Some(self.lr_decay.to_string())),
            ("lr_decay_at", Some(self.lr_decay_at.to_string())),
            ("momentum", Some(self.momentum.to_string())),
            ("weight_decay", Some(self.weight_decay.to_string())),
            ("seed", Some(self.seed.to_string())),
            ("val_fraction", Some(self.val_fraction.to_string())),
            ("augment", Some(self.augment.to_string())),
            ("max_translate", Some(self.max_translate.to_string())),
            ("max_scale", Some(self.max_scale.to_string())),
            ("conf_threshold", Some(self.conf_threshold.to_string())),
            ("nms_iou", Some(self.nms_iou.to_string())),
            ("init_checkpoint", opt(&self.init_checkpoint)),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v}\n")))
            .collect()
    }

    /// Checks cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        if self.sampling.frames() != self.fusion_mode.frames() {
            return Err(Error::invalid(
                "run config",
                format!(
                    "sampling {} yields {} frames but fusion mode {} expects {}",
                    self.sampling,
                    self.sampling.frames(),
                    self.fusion_mode,
                    self.fusion_mode.frames()
                ),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(
                "run config",
                format!("val_fraction {} is not in (0, 1)", self.val_fraction),
            ));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::invalid("run config", "thresholds must lie in [0, 1]"));
        }
        self.model_config(crate::detector::config::DEFAULT_ANCHORS[..self.num_anchors.min(3)].to_vec())
            .validate()?;
        self.train_config().validate()
    }

    pub fn model_config(&self, anchors: Vec<(f32, f32)>) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            fusion_mode: self.fusion_mode,
            base_width: self.base_width,
            num_classes: self.num_classes,
            anchors,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            sgd: SgdConfig {
                learning_rate: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            lr_decay: self.lr_decay,
            lr_decay_at: self.lr_decay_at,
            seed: self.seed,
            augment: self.augment,
            max_translate: self.max_translate,
            max_scale: self.max_scale,
            conf_threshold: self.conf_threshold,
            nms_iou: self.nms_iou,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("sampling", "stepped:3:2").unwrap();
        cfg.set("fusion_mode", "grouped:3").unwrap();
        cfg.set("lr", "0.05").unwrap();
        cfg.dataset_root = Some("data/x".into());
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::from_text("epochs = 5\nseed=3\n").unwrap();
        let args: Vec<String> = ["--epochs", "7", "--batch-size=2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cfg.apply_overrides(&args).unwrap();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.seed), (7, 2, 3));
    }

    #[test]
    fn unknown_key_lists_known() {
        let err = RunConfig::from_text("epoch=3").unwrap_err().to_string();
        assert!(err.contains("epoch") && err.contains("batch_size"), "{err}");
    }

    #[test]
    fn frame_count_mismatch() {
        let mut cfg = RunConfig::default();
        cfg.set("fusion_mode", "early_fusion:3").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("expects 3"));
    }
}
