//! Named scene recipes for dataset generation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, DatasetMeta, Sequence};
use super::scene::{render_sequence, Degradation, DegradationKind, ObjectSpec, SceneScript, ShapeKind, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Clean,
    Occlusion,
    Blur,
    BoundaryExit,
    Glare,
    Mixed,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Clean,
        Preset::Occlusion,
        Preset::Blur,
        Preset::BoundaryExit,
        Preset::Glare,
        Preset::Mixed,
    ];

    fn degradations(&self) -> &'static [DegradationKind] {
        use DegradationKind::*;
        match self {
            Preset::Clean => &[],
            Preset::Occlusion => &[OccluderSweep],
            Preset::Blur => &[MotionBlur],
            Preset::BoundaryExit => &[BoundaryExit],
            Preset::Glare => &[Glare],
            Preset::Mixed => &[OccluderSweep, MotionBlur, BoundaryExit, Glare],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Clean => "clean",
            Preset::Occlusion => "occlusion",
            Preset::Blur => "blur",
            Preset::BoundaryExit => "boundary-exit",
            Preset::Glare => "glare",
            Preset::Mixed => "mixed",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.to_string() == s).ok_or_else(|| {
            let names: Vec<String> = Preset::ALL.iter().map(|p| p.to_string()).collect();
            Error::invalid("preset", format!("`{s}`; available presets: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateParams {
    pub preset: Preset,
    pub seed: u64,
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f32,
    /// Static unlabeled look-alikes per sequence.
    pub distractors: usize,
}

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams {
            preset: Preset::Mixed,
            seed: 0,
            num_sequences: 8,
            frames_per_sequence: 40,
            width: 64,
            height: 64,
            fps: 25.0,
            distractors: 2,
        }
    }
}

const PALETTE: [[u8; 3]; 6] = [
    [200, 60, 50],
    [60, 170, 70],
    [60, 90, 200],
    [210, 190, 60],
    [170, 70, 190],
    [60, 190, 190],
];

fn random_shape<R: Rng>(rng: &mut R, min_size: f32, max_size: f32) -> (ShapeKind, f32, f32, [u8; 3]) {
    let kind = [ShapeKind::Disc, ShapeKind::Rect, ShapeKind::Triangle][rng.gen_range(0..3)];
    let size = rng.gen_range(min_size..max_size);
    let aspect = if kind == ShapeKind::Rect {
        rng.gen_range(0.6..1.6)
    } else {
        1.0
    };
    (kind, size, aspect, PALETTE[rng.gen_range(0..PALETTE.len())])
}

/// The scene script for sequence `index` of a generated dataset.
pub fn preset_script(params: &GenerateParams, index: usize) -> SceneScript {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
    let (w, h) = (params.width as f32, params.height as f32);
    let t_len = params.frames_per_sequence;
    let scale = w.min(h) / 64.0;
    let min_size = 3.5 * scale;
    let max_size = 6.5 * scale;

    let mut objects = Vec::new();
    let moving = rng.gen_range(1..=3);
    for _ in 0..moving {
        let (kind, size, aspect, color) = random_shape(&mut rng, min_size, max_size);
        let speed = rng.gen_range(0.8..2.2) * scale;
        let angle = rng.gen_range(0.0..std::f32::consts::TAU);
        let (x0, y0) = (rng.gen_range(0.2..0.8) * w, rng.gen_range(0.2..0.8) * h);
        let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
        // keep the path roughly inside the frame: bounce direction by reflecting
        // the velocity when the end point would leave the image
        let end = (x0 + vx * t_len as f32, y0 + vy * t_len as f32);
        let vx = if end.0 < 0.0 || end.0 > w { -vx * 0.5 } else { vx };
        let vy = if end.1 < 0.0 || end.1 > h { -vy * 0.5 } else { vy };
        let trajectory = if rng.gen_bool(0.5) {
            Trajectory::Linear { x0, y0, vx, vy }
        } else {
            Trajectory::Sinusoidal {
                x0,
                y0,
                vx,
                vy,
                amp_x: rng.gen_range(2.0..6.0) * scale,
                amp_y: rng.gen_range(2.0..6.0) * scale,
                period: rng.gen_range(12.0..30.0),
                phase: rng.gen_range(0.0..std::f32::consts::TAU),
            }
        };
        objects.push(ObjectSpec {
            kind,
            size,
            aspect,
            color,
            class_id: 0,
            trajectory,
            labeled: true,
        });
    }
    for _ in 0..params.distractors {
        let (kind, size, aspect, color) = random_shape(&mut rng, min_size, max_size);
        let (x0, y0) = (rng.gen_range(0.1..0.9) * w, rng.gen_range(0.1..0.9) * h);
        objects.insert(
            0,
            ObjectSpec {
                kind,
                size,
                aspect,
                color,
                class_id: 0,
                trajectory: Trajectory::Linear {
                    x0,
                    y0,
                    vx: 0.0,
                    vy: 0.0,
                },
                labeled: false,
            },
        );
    }

    // several kinds share a sequence, so each gets a shorter window
    let kinds = params.preset.degradations();
    let (lo, hi) = if kinds.len() > 1 {
        (t_len / 8, t_len / 4)
    } else {
        (t_len / 4, t_len / 2)
    };
    let mut degradations = Vec::new();
    for &kind in kinds {
        let len = rng.gen_range(lo..=hi).max(1);
        let start = rng.gen_range(0..=t_len - len);
        let intensity = match kind {
            DegradationKind::BoundaryExit => rng.gen_range(0.15..0.35),
            _ => rng.gen_range(0.5..0.95),
        };
        degradations.push(Degradation {
            kind,
            start,
            end: start + len,
            intensity,
        });
    }

    let base = rng.gen_range(90..150u8);
    SceneScript {
        seed: params.seed ^ ((index as u64) << 32),
        num_frames: t_len,
        width: params.width,
        height: params.height,
        background: [
            base,
            base.saturating_add(rng.gen_range(0..20)),
            base.saturating_sub(rng.gen_range(0..20)),
        ],
        texture: 22.0,
        noise: 10.0,
        objects,
        degradations,
    }
}

/// Renders a whole dataset; deterministic under `params`.
pub fn generate(params: &GenerateParams) -> Result<Dataset> {
    if params.num_sequences == 0 || params.frames_per_sequence == 0 {
        return Err(Error::invalid("generate", "needs at least one sequence of one frame"));
    }
    let mut sequences = Vec::with_capacity(params.num_sequences);
    let mut kinds: Vec<DegradationKind> = Vec::new();
    for i in 0..params.num_sequences {
        let script = preset_script(params, i);
        for k in script.degradation_kinds() {
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        let rendered = render_sequence(&script)?;
        sequences.push(Sequence {
            id: format!("{i:03}"),
            frames: rendered.frames,
            labels: rendered.labels,
        });
    }
    let mut extra = BTreeMap::new();
    extra.insert("preset".to_string(), params.preset.to_string());
    extra.insert("seed".to_string(), params.seed.to_string());
    extra.insert("distractors".to_string(), params.distractors.to_string());
    extra.insert(
        "degradations".to_string(),
        kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
    );
    Ok(Dataset {
        meta: DatasetMeta {
            fps: params.fps,
            width: params.width,
            height: params.height,
            extra,
        },
        sequences,
    })
}
