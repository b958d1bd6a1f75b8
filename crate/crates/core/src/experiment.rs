//! Single-frame versus frame-stack comparison on freshly generated data.

use crate::data::{generate, FrameStack, GenerateParams, Preset, SamplingSpec};
use crate::detector::{build_model, FusionMode, LayerStack, LossWeights, ModelConfig};
use crate::error::Result;
use crate::metrics::evaluate;
use crate::surgery::{adapt_early_fusion, adapt_grouped};
use crate::train::{anchors_for, train, TrainConfig};

#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub mode: FusionMode,
    pub sampling: SamplingSpec,
}

impl Variant {
    pub fn single() -> Self {
        Variant {
            name: "single".into(),
            mode: FusionMode::Single,
            sampling: SamplingSpec::Adjacent { n: 1 },
        }
    }

    pub fn early_fusion(n: usize) -> Self {
        Variant {
            name: format!("early_fusion:{n}"),
            mode: FusionMode::EarlyFusion(n),
            sampling: SamplingSpec::Adjacent { n },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonParams {
    pub preset: Preset,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub frames_per_sequence: usize,
    pub image_size: usize,
    /// Static unlabeled look-alikes per sequence.
    pub distractors: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub train: TrainConfig,
    /// Single-frame pretraining on separate videos before every variant is
    /// fine-tuned from the result; 0 trains every variant from scratch.
    pub pretrain_epochs: usize,
    pub pretrain_sequences: usize,
    pub loss_weights: LossWeights,
}

impl Default for ComparisonParams {
    fn default() -> Self {
        ComparisonParams {
            preset: Preset::Mixed,
            train_sequences: 48,
            test_sequences: 16,
            frames_per_sequence: 10,
            image_size: 64,
            distractors: 6,
            seeds: vec![0, 1, 2],
            variants: vec![Variant::single(), Variant::early_fusion(3)],
            train: TrainConfig {
                epochs: 80,
                ..TrainConfig::default()
            },
            pretrain_epochs: 0,
            pretrain_sequences: 12,
            // a distractor-heavy scene needs objectness to carry real weight
            loss_weights: LossWeights {
                objectness: 20.0,
                ..LossWeights::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub name: String,
    pub map50: Vec<f64>,
    pub map5095: Vec<f64>,
    pub train_stacks: usize,
    pub test_stacks: usize,
}

impl VariantResult {
    pub fn mean_map50(&self) -> f64 {
        self.map50.iter().sum::<f64>() / self.map50.len().max(1) as f64
    }

    pub fn mean_map5095(&self) -> f64 {
        self.map5095.iter().sum::<f64>() / self.map5095.len().max(1) as f64
    }
}

/// The starting weights of `mode`, adapted from `pretrained` when given.
fn initial_model(config: &ModelConfig, pretrained: Option<&LayerStack>, seed: u64) -> Result<LayerStack> {
    let Some(source) = pretrained else {
        return build_model(config, seed);
    };
    match config.fusion_mode {
        FusionMode::Single => Ok(source.clone()),
        FusionMode::EarlyFusion(n) => adapt_early_fusion(source, n),
        FusionMode::Grouped(n) => adapt_grouped(source, n),
    }
}

fn dataset_stacks(
    params: &ComparisonParams,
    seed: u64,
    sequences: usize,
    spec: &SamplingSpec,
) -> Result<Vec<FrameStack>> {
    let ds = generate(&GenerateParams {
        preset: params.preset,
        seed,
        num_sequences: sequences,
        frames_per_sequence: params.frames_per_sequence,
        width: params.image_size,
        height: params.image_size,
        distractors: params.distractors,
        ..GenerateParams::default()
    })?;
    ds.stacks(spec)
}

/// Trains and tests every variant under every seed. Pretraining, training
/// and test data come from disjoint generator seeds; all variants see the
/// same videos and the same target frames.
pub fn run_comparison(params: &ComparisonParams, mut progress: impl FnMut(&str)) -> Result<Vec<VariantResult>> {
    let mut results: Vec<VariantResult> = params
        .variants
        .iter()
        .map(|v| VariantResult {
            name: v.name.clone(),
            map50: Vec::new(),
            map5095: Vec::new(),
            train_stacks: 0,
            test_stacks: 0,
        })
        .collect();
    for &seed in &params.seeds {
        let train_seed = 2 * seed + 1000;
        let test_seed = 2 * seed + 1001;
        let single = SamplingSpec::Adjacent { n: 1 };
        let anchors = anchors_for(&dataset_stacks(params, train_seed, params.train_sequences, &single)?, 3);
        let base_config = ModelConfig {
            input_size: params.image_size,
            anchors,
            loss_weights: params.loss_weights,
            ..ModelConfig::default()
        };
        let pretrained = if params.pretrain_epochs > 0 {
            let stacks = dataset_stacks(params, seed + 5000, params.pretrain_sequences, &single)?;
            let cfg = TrainConfig {
                seed,
                epochs: params.pretrain_epochs,
                ..params.train.clone()
            };
            let outcome = train(build_model(&base_config, seed)?, &stacks, &[], &cfg, |e, _| {
                progress(&format!("seed {seed} pretrain epoch {} loss {:.4}", e.epoch, e.loss));
                Ok(())
            })?;
            Some(outcome.last)
        } else {
            None
        };
        for (variant, out) in params.variants.iter().zip(results.iter_mut()) {
            let train_set = dataset_stacks(params, train_seed, params.train_sequences, &variant.sampling)?;
            let test_set = dataset_stacks(params, test_seed, params.test_sequences, &variant.sampling)?;
            let config = ModelConfig {
                fusion_mode: variant.mode,
                ..base_config.clone()
            };
            let model = initial_model(&config, pretrained.as_ref(), seed)?;
            let cfg = TrainConfig {
                seed,
                ..params.train.clone()
            };
            let outcome = train(model, &train_set, &[], &cfg, |e, _| {
                progress(&format!(
                    "seed {seed} {} epoch {} loss {:.4}",
                    variant.name, e.epoch, e.loss
                ));
                Ok(())
            })?;
            let report = evaluate(&outcome.last, &test_set, cfg.conf_threshold, cfg.nms_iou)?;
            progress(&format!(
                "seed {seed} {}: test mAP50 {:.4} mAP50-95 {:.4}",
                variant.name, report.map50, report.map5095
            ));
            out.map50.push(report.map50);
            out.map5095.push(report.map5095);
            out.train_stacks = train_set.len();
            out.test_stacks = test_set.len();
        }
    }
    Ok(results)
}
