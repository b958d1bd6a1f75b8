//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use std::collections::BTreeMap;

use mfdet::checkpoint::Checkpoint;
use mfdet::data::{generate, AugmentParams, Dataset, GenerateParams, Preset, SamplingSpec};
use mfdet::detector::{build_model, BoxLabel, Detection, FusionMode, LayerStack, ModelConfig};
use mfdet::train::training_batch;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One evaluation instance: per-image predictions and ground truth.
pub type Instance = Vec<(Vec<Detection>, Vec<BoxLabel>)>;

fn corners(cx: f32, cy: f32, w: f32, h: f32) -> [f64; 4] {
    let (cx, cy, w, h) = (cx as f64, cy as f64, w as f64, h as f64);
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

fn box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Prediction indices by descending confidence, ties by index.
fn rank(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].confidence.total_cmp(&preds[i].confidence).then(i.cmp(&j)));
    order
}

/// True-positive flags in input order for one image at one IoU threshold.
fn oracle_tp(preds: &[Detection], gts: &[BoxLabel], thr: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; preds.len()];
    for i in rank(preds) {
        let p = &preds[i];
        let pb = corners(p.cx, p.cy, p.w, p.h);
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.class_id != p.class_id {
                continue;
            }
            let v = box_iou(pb, corners(g.cx, g.cy, g.w, g.h));
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp[i] = true;
        }
    }
    tp
}

/// Sum over the 101 recall levels of the interpolated precision, found by
/// enumerating every cutoff of the ranked list.
pub fn oracle_interpolated_sum(scored: &[(f32, bool)], num_gt: usize) -> f64 {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| scored[j].0.total_cmp(&scored[i].0).then(i.cmp(&j)));
    let cutoffs: Vec<(f64, f64)> = (1..=order.len())
        .map(|k| {
            let tp = order[..k].iter().filter(|&&i| scored[i].1).count();
            (tp as f64 / num_gt as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let best = cutoffs
            .iter()
            .filter(|(recall, _)| *recall >= level)
            .map(|&(_, p)| p)
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))));
        if let Some(p) = best {
            sum += p;
        }
    }
    sum
}

/// Per-class AP at each of the ten IoU thresholds, computed from scratch.
pub fn oracle_per_class_ap(images: &Instance) -> BTreeMap<usize, Vec<f64>> {
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let mut classes: Vec<usize> = images
        .iter()
        .flat_map(|(p, g)| p.iter().map(|d| d.class_id).chain(g.iter().map(|l| l.class_id)))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let flags: Vec<Vec<Vec<bool>>> = images
        .iter()
        .map(|(p, g)| thresholds.iter().map(|&t| oracle_tp(p, g, t)).collect())
        .collect();
    classes
        .into_iter()
        .map(|c| {
            let num_gt = images
                .iter()
                .map(|(_, g)| g.iter().filter(|l| l.class_id == c).count())
                .sum();
            let aps = (0..thresholds.len())
                .map(|t| {
                    let scored: Vec<(f32, bool)> = images
                        .iter()
                        .zip(&flags)
                        .flat_map(|((p, _), f)| {
                            p.iter()
                                .zip(&f[t])
                                .filter(|(d, _)| d.class_id == c)
                                .map(|(d, &tp)| (d.confidence, tp))
                        })
                        .collect();
                    match num_gt {
                        0 if scored.is_empty() => 1.0,
                        0 => 0.0,
                        n => oracle_interpolated_sum(&scored, n) / 101.0,
                    }
                })
                .collect();
            (c, aps)
        })
        .collect()
}

/// A random instance with at most five predictions and five boxes per image.
/// Confidences come from a coarse grid so that ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let images = rng.gen_range(1..=4);
    (0..images)
        .map(|_| {
            let gts: Vec<BoxLabel> = (0..rng.gen_range(0..=5))
                .map(|_| {
                    BoxLabel::new(
                        rng.gen_range(0..2),
                        rng.gen_range(0.1..0.9),
                        rng.gen_range(0.1..0.9),
                        rng.gen_range(0.05..0.4),
                        rng.gen_range(0.05..0.4),
                    )
                })
                .collect();
            let preds = (0..rng.gen_range(0..=5))
                .map(|_| {
                    let confidence = rng.gen_range(1..=10) as f32 / 10.0;
                    match gts.get(rng.gen_range(0..gts.len() + 2)) {
                        Some(g) => Detection {
                            class_id: if rng.gen_bool(0.9) { g.class_id } else { 1 - g.class_id },
                            confidence,
                            cx: g.cx + rng.gen_range(-0.05..0.05),
                            cy: g.cy + rng.gen_range(-0.05..0.05),
                            w: g.w * rng.gen_range(0.7..1.3),
                            h: g.h * rng.gen_range(0.7..1.3),
                        },
                        None => Detection {
                            class_id: rng.gen_range(0..2),
                            confidence,
                            cx: rng.gen_range(0.1..0.9),
                            cy: rng.gen_range(0.1..0.9),
                            w: rng.gen_range(0.05..0.4),
                            h: rng.gen_range(0.05..0.4),
                        },
                    }
                })
                .collect();
            (preds, gts)
        })
        .collect()
}

/// A model with a random configuration and random weights.
pub fn random_model(rng: &mut ChaCha8Rng) -> LayerStack {
    let n = rng.gen_range(2..=5);
    let fusion_mode = match rng.gen_range(0..3) {
        0 => FusionMode::Single,
        1 => FusionMode::EarlyFusion(n),
        _ => FusionMode::Grouped(n),
    };
    let anchors = (0..rng.gen_range(1..=3))
        .map(|_| (rng.gen_range(0.01..0.9f32), rng.gen_range(0.01..0.9f32)))
        .collect();
    let config = ModelConfig {
        input_size: 8 * rng.gen_range(1..=8),
        fusion_mode,
        base_width: rng.gen_range(1..=6),
        num_classes: rng.gen_range(1..=3),
        anchors,
        leaky_slope: rng.gen_range(0.0..0.3),
        ..ModelConfig::default()
    };
    build_model(&config, rng.gen()).expect("valid random config")
}

/// Byte offsets of every field in the first tensor header of an encoded checkpoint.
pub fn first_header_len(bytes: &[u8]) -> usize {
    let name_len = u16::from_le_bytes([bytes[9], bytes[10]]) as usize;
    let rank = bytes[11 + name_len] as usize;
    12 + name_len + 4 * rank
}

/// Named corruptions of a valid checkpoint's header and framing.
pub fn header_corruptions(bytes: &[u8], rng: &mut ChaCha8Rng) -> Vec<(String, Vec<u8>)> {
    let header = first_header_len(bytes);
    let mut cases = Vec::new();
    for cut in 0..header {
        cases.push((format!("truncated to {cut} bytes"), bytes[..cut].to_vec()));
    }
    cases.push(("truncated in the metadata".into(), bytes[..bytes.len() - 1].to_vec()));
    let mut trailing = bytes.to_vec();
    trailing.push(0);
    cases.push(("trailing byte".into(), trailing));
    for i in 0..header {
        let mut flipped = bytes.to_vec();
        flipped[i] ^= 1 << rng.gen_range(0..8);
        cases.push((format!("bit flip at header byte {i}"), flipped));
    }
    for (label, rank) in [("rank 0", 0u8), ("rank 5", 5), ("rank 255", 255)] {
        let mut b = bytes.to_vec();
        let name_len = u16::from_le_bytes([b[9], b[10]]) as usize;
        b[11 + name_len] = rank;
        cases.push((label.into(), b));
    }
    let mut count = bytes.to_vec();
    count[5..9].copy_from_slice(&u32::MAX.to_le_bytes());
    cases.push(("entry count u32::MAX".into(), count));
    let mut name = bytes.to_vec();
    name[9..11].copy_from_slice(&u16::MAX.to_le_bytes());
    cases.push(("name length u16::MAX".into(), name));
    let mut dim = bytes.to_vec();
    let name_len = u16::from_le_bytes([dim[9], dim[10]]) as usize;
    dim[12 + name_len..16 + name_len].copy_from_slice(&u32::MAX.to_le_bytes());
    cases.push(("dimension u32::MAX".into(), dim));
    cases
}

/// Bitwise equality of every parameter, configuration and info entry.
pub fn bitwise_equal(a: &Checkpoint, b: &Checkpoint) -> bool {
    let bits = |m: &LayerStack| -> Vec<(String, Vec<usize>, Vec<u32>)> {
        m.named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    a.model.config == b.model.config && a.info == b.info && bits(&a.model) == bits(&b.model)
}

/// A copy of `ds` in which only frame `t` of sequence `s` keeps its labels.
pub fn keep_only_target_labels(ds: &Dataset, s: usize, t: usize) -> Dataset {
    let mut out = ds.clone();
    for (si, seq) in out.sequences.iter_mut().enumerate() {
        for (ti, labels) in seq.labels.iter_mut().enumerate() {
            if (si, ti) != (s, t) {
                labels.clear();
            }
        }
    }
    out
}

/// Checks, for every target frame of a small generated dataset, that the
/// stack carries exactly the target frame's labels and that its training
/// batch is unchanged when every other frame loses its labels.
pub fn weak_supervision_violations(seed: u64, spec: &SamplingSpec) -> Vec<String> {
    let ds = generate(&GenerateParams {
        preset: Preset::Mixed,
        seed,
        num_sequences: 2,
        frames_per_sequence: 10,
        width: 32,
        height: 32,
        ..GenerateParams::default()
    })
    .expect("generate");
    let model = build_model(
        &ModelConfig {
            input_size: 32,
            fusion_mode: FusionMode::EarlyFusion(spec.frames()),
            ..ModelConfig::default()
        },
        seed,
    )
    .expect("model");
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut problems = Vec::new();
    for (s, seq) in ds.sequences.iter().enumerate() {
        for t in 0..seq.len() {
            let stack = seq.stack(t, spec).expect("stack");
            if stack.labels != seq.labels[t] {
                problems.push(format!(
                    "seq {} frame {t}: stack labels differ from the target frame",
                    seq.id
                ));
            }
            let stripped = keep_only_target_labels(&ds, s, t).sequences[s]
                .stack(t, spec)
                .expect("stack");
            let aug = [AugmentParams::sample(&mut rng, 0.1, 0.2)];
            let (xa, ta) = training_batch(&[&stack], &aug, &model).expect("batch");
            let (xb, tb) = training_batch(&[&stripped], &aug, &model).expect("batch");
            if xa != xb || ta.values != tb.values || ta.mask != tb.mask {
                problems.push(format!("seq {} frame {t}: batch depends on non-target labels", seq.id));
            }
        }
    }
    problems
}
