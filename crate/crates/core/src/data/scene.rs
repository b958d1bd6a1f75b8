//! Deterministic synthetic video: moving shapes over a textured background,
//! with scripted degradations and per-frame ground truth.

use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use crate::detector::BoxLabel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Rect,
    Triangle,
}

/// Object center path in pixel units, evaluated at (possibly fractional) frame time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Trajectory {
    Linear {
        x0: f32,
        y0: f32,
        vx: f32,
        vy: f32,
    },
    Sinusoidal {
        x0: f32,
        y0: f32,
        vx: f32,
        vy: f32,
        amp_x: f32,
        amp_y: f32,
        period: f32,
        phase: f32,
    },
}

impl Trajectory {
    pub fn at(&self, t: f32) -> (f32, f32) {
        match *self {
            Trajectory::Linear { x0, y0, vx, vy } => (x0 + vx * t, y0 + vy * t),
            Trajectory::Sinusoidal {
                x0,
                y0,
                vx,
                vy,
                amp_x,
                amp_y,
                period,
                phase,
            } => {
                let a = 2.0 * PI * t / period + phase;
                (x0 + vx * t + amp_x * a.sin(), y0 + vy * t + amp_y * a.cos())
            }
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Trajectory::Linear { x0, y0, vx, vy } => [x0, y0, vx, vy].iter().all(|v| v.is_finite()),
            Trajectory::Sinusoidal {
                x0,
                y0,
                vx,
                vy,
                amp_x,
                amp_y,
                period,
                phase,
            } => {
                [x0, y0, vx, vy, amp_x, amp_y, period, phase]
                    .iter()
                    .all(|v| v.is_finite())
                    && period != 0.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub kind: ShapeKind,
    /// Half extent in pixels (radius for discs).
    pub size: f32,
    /// Height / width ratio for rectangles.
    pub aspect: f32,
    pub color: [u8; 3],
    pub class_id: usize,
    pub trajectory: Trajectory,
    /// Unlabeled objects are rendered but never produce a box.
    pub labeled: bool,
}

impl ObjectSpec {
    fn half_extent(&self) -> (f32, f32) {
        match self.kind {
            ShapeKind::Rect => (self.size, self.size * self.aspect),
            _ => (self.size, self.size),
        }
    }

    fn covers(&self, cx: f32, cy: f32, px: f32, py: f32) -> bool {
        let (dx, dy) = (px - cx, py - cy);
        match self.kind {
            ShapeKind::Disc => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Rect => dx.abs() <= self.size && dy.abs() <= self.size * self.aspect,
            ShapeKind::Triangle => {
                // apex up; half width grows linearly from 0 at the top to `size` at the base
                if dy.abs() > self.size {
                    return false;
                }
                let half_w = self.size * (dy + self.size) / (2.0 * self.size);
                dx.abs() <= half_w
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DegradationKind {
    OccluderSweep,
    MotionBlur,
    BoundaryExit,
    Glare,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [
        DegradationKind::OccluderSweep,
        DegradationKind::MotionBlur,
        DegradationKind::BoundaryExit,
        DegradationKind::Glare,
    ];
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DegradationKind::OccluderSweep => "occluder-sweep",
            DegradationKind::MotionBlur => "motion-blur",
            DegradationKind::BoundaryExit => "boundary-exit",
            DegradationKind::Glare => "glare",
        })
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradationKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::invalid("degradation kind", s.to_string()))
    }
}

/// A degradation active on frames `start..end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub kind: DegradationKind,
    pub start: usize,
    pub end: usize,
    /// Strength in `[0, 1]`.
    pub intensity: f32,
}

impl Degradation {
    fn active(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }

    /// Fraction of the window elapsed after frame `t`, clamped to `[0, 1]`.
    fn progress(&self, t: usize) -> f32 {
        if t < self.start {
            return 0.0;
        }
        ((t - self.start + 1) as f32 / (self.end - self.start) as f32).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneScript {
    pub seed: u64,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub background: [u8; 3],
    /// Amplitude of the static background texture, in 8-bit levels.
    pub texture: f32,
    /// Standard deviation of per-frame sensor noise, in 8-bit levels.
    pub noise: f32,
    pub objects: Vec<ObjectSpec>,
    pub degradations: Vec<Degradation>,
}

impl SceneScript {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("scene script", reason));
        if self.num_frames == 0 {
            return bad("needs at least one frame".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("resolution {}x{} is empty", self.width, self.height));
        }
        if !(self.texture >= 0.0 && self.noise >= 0.0) {
            return bad("texture and noise must be non-negative".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.trajectory.is_finite() {
                return bad(format!("object {i} has a non-finite trajectory"));
            }
            if !(o.size > 0.0 && o.aspect > 0.0) {
                return bad(format!("object {i} has non-positive size"));
            }
        }
        for (i, d) in self.degradations.iter().enumerate() {
            if d.start >= d.end || d.end > self.num_frames {
                return bad(format!(
                    "degradation {i} window {}..{} is invalid for {} frames",
                    d.start, d.end, self.num_frames
                ));
            }
            if !(0.0..=1.0).contains(&d.intensity) {
                return bad(format!("degradation {i} intensity {} is outside [0, 1]", d.intensity));
            }
        }
        Ok(())
    }

    pub fn degradation_kinds(&self) -> Vec<DegradationKind> {
        let mut kinds: Vec<DegradationKind> = Vec::new();
        for d in &self.degradations {
            if !kinds.contains(&d.kind) {
                kinds.push(d.kind);
            }
        }
        kinds
    }
}

/// A rendered sequence with ground truth for every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSequence {
    pub frames: Vec<Image>,
    pub labels: Vec<Vec<BoxLabel>>,
}

/// Minimum in-image share of an object's nominal box for it to stay labeled.
pub const MIN_VISIBLE_AREA: f32 = 0.25;

const OCCLUDER_COLOR: [f32; 3] = [70.0, 70.0, 70.0];

struct Placed<'a> {
    spec: &'a ObjectSpec,
    center: (f32, f32),
}

fn boundary_shift(script: &SceneScript, obj_x: f32, t: usize) -> f32 {
    let w = script.width as f32;
    script
        .degradations
        .iter()
        .filter(|d| d.kind == DegradationKind::BoundaryExit && t >= d.start)
        .map(|d| {
            let dir = if obj_x < w / 2.0 { -1.0 } else { 1.0 };
            dir * d.intensity * w * d.progress(t)
        })
        .sum()
}

/// Boundary exits carry labeled objects out of view; unlabeled scenery stays put.
fn position(script: &SceneScript, obj: &ObjectSpec, time: f32, frame: usize) -> (f32, f32) {
    let (x, y) = obj.trajectory.at(time);
    if !obj.labeled {
        return (x, y);
    }
    (x + boundary_shift(script, obj.trajectory.at(0.0).0, frame), y)
}

fn blur_samples(script: &SceneScript, t: usize) -> (usize, f32) {
    script
        .degradations
        .iter()
        .filter(|d| d.kind == DegradationKind::MotionBlur && d.active(t))
        .map(|d| (2 + (d.intensity * 6.0).round() as usize, 1.0 + 2.0 * d.intensity))
        .max_by(|a, b| a.0.cmp(&b.0))
        .unwrap_or((1, 0.0))
}

fn occluder_span(script: &SceneScript, t: usize) -> Vec<(f32, f32)> {
    let w = script.width as f32;
    script
        .degradations
        .iter()
        .filter(|d| d.kind == DegradationKind::OccluderSweep && d.active(t))
        .map(|d| {
            let bar = w * (0.1 + 0.3 * d.intensity);
            let len = (d.end - d.start).max(2) - 1;
            let frac = (t - d.start) as f32 / len as f32;
            let left = -bar + (w + bar) * frac;
            (left, left + bar)
        })
        .collect()
}

fn static_texture(script: &SceneScript) -> Vec<f32> {
    let (w, h) = (script.width, script.height);
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed ^ 0x7e57_u64);
    let waves: Vec<(f32, f32, f32)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.02..0.2),
                rng.gen_range(0.02..0.2),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let v: f32 = waves
                .iter()
                .map(|&(fx, fy, p)| (fx * x as f32 + fy * y as f32 + p).sin())
                .sum::<f32>()
                / waves.len() as f32;
            out[y * w + x] = v * script.texture;
        }
    }
    out
}

fn glare_centers(script: &SceneScript) -> Vec<(f32, f32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed ^ 0x61a3e_u64);
    script
        .degradations
        .iter()
        .map(|_| {
            (
                rng.gen_range(0.2..0.8) * script.width as f32,
                rng.gen_range(0.2..0.8) * script.height as f32,
            )
        })
        .collect()
}

/// Renders every frame of `script` together with its per-frame boxes.
pub fn render_sequence(script: &SceneScript) -> Result<RenderedSequence> {
    script.validate()?;
    let (w, h) = (script.width, script.height);
    let texture = static_texture(script);
    let glare_at = glare_centers(script);
    let noise = Normal::new(0.0f32, script.noise.max(0.0)).expect("valid sigma");
    let mut frames = Vec::with_capacity(script.num_frames);
    let mut labels = Vec::with_capacity(script.num_frames);

    for t in 0..script.num_frames {
        let mut canvas: Vec<[f32; 3]> = texture
            .iter()
            .map(|&v| {
                let b = script.background;
                [b[0] as f32 + v, b[1] as f32 + v, b[2] as f32 + v]
            })
            .collect();

        let (samples, span) = blur_samples(script, t);
        let nominal: Vec<Placed> = script
            .objects
            .iter()
            .map(|o| Placed {
                spec: o,
                center: position(script, o, t as f32, t),
            })
            .collect();

        // objects, later ones on top; `owner` tracks the topmost nominal silhouette
        let mut owner = vec![usize::MAX; w * h];
        for (oi, obj) in script.objects.iter().enumerate() {
            let centers: Vec<(f32, f32)> = (0..samples)
                .map(|k| {
                    let dt = if samples > 1 {
                        span * k as f32 / (samples - 1) as f32
                    } else {
                        0.0
                    };
                    position(script, obj, t as f32 - dt, t)
                })
                .collect();
            let color = obj.color.map(|c| c as f32);
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                    let hits = centers.iter().filter(|c| obj.covers(c.0, c.1, px, py)).count();
                    if hits > 0 {
                        let alpha = hits as f32 / samples as f32;
                        let p = &mut canvas[y * w + x];
                        for ch in 0..3 {
                            p[ch] = p[ch] * (1.0 - alpha) + color[ch] * alpha;
                        }
                    }
                    let c = nominal[oi].center;
                    if obj.covers(c.0, c.1, px, py) {
                        owner[y * w + x] = oi;
                    }
                }
            }
        }

        for (d, &(gx, gy)) in script.degradations.iter().zip(&glare_at) {
            if d.kind != DegradationKind::Glare || !d.active(t) {
                continue;
            }
            let rx = w as f32 * (0.15 + 0.25 * d.intensity);
            let ry = h as f32 * (0.1 + 0.2 * d.intensity);
            for y in 0..h {
                for x in 0..w {
                    let dx = (x as f32 + 0.5 - gx) / rx;
                    let dy = (y as f32 + 0.5 - gy) / ry;
                    let add = 255.0 * d.intensity * (-2.0 * (dx * dx + dy * dy)).exp();
                    canvas[y * w + x].iter_mut().for_each(|v| *v += add);
                }
            }
        }

        let spans = occluder_span(script, t);
        for &(left, right) in &spans {
            for y in 0..h {
                for x in 0..w {
                    let px = x as f32 + 0.5;
                    if px >= left && px <= right {
                        canvas[y * w + x] = OCCLUDER_COLOR;
                        owner[y * w + x] = usize::MAX;
                    }
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(script.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(t as u64));
        let mut img = Image::new(w, h);
        for (i, p) in canvas.iter().enumerate() {
            for ch in 0..3 {
                let n = if script.noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                img.data[i * 3 + ch] = (p[ch] + n).round().clamp(0.0, 255.0) as u8;
            }
        }
        frames.push(img);

        let mut frame_labels = Vec::new();
        for (oi, placed) in nominal.iter().enumerate() {
            if !placed.spec.labeled {
                continue;
            }
            if !owner.contains(&oi) {
                continue;
            }
            let (hw, hh) = placed.spec.half_extent();
            let (cx, cy) = placed.center;
            let (x1, x2) = (cx - hw, cx + hw);
            let (y1, y2) = (cy - hh, cy + hh);
            let (cx1, cx2) = (x1.max(0.0), x2.min(w as f32));
            let (cy1, cy2) = (y1.max(0.0), y2.min(h as f32));
            let visible = (cx2 - cx1).max(0.0) * (cy2 - cy1).max(0.0);
            if visible < MIN_VISIBLE_AREA * (x2 - x1) * (y2 - y1) {
                continue;
            }
            frame_labels.push(BoxLabel::new(
                placed.spec.class_id,
                (cx1 + cx2) / 2.0 / w as f32,
                (cy1 + cy2) / 2.0 / h as f32,
                (cx2 - cx1) / w as f32,
                (cy2 - cy1) / h as f32,
            ));
        }
        labels.push(frame_labels);
    }
    Ok(RenderedSequence { frames, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(trajectory: Trajectory) -> ObjectSpec {
        ObjectSpec {
            kind: ShapeKind::Disc,
            size: 4.0,
            aspect: 1.0,
            color: [230, 40, 40],
            class_id: 0,
            trajectory,
            labeled: true,
        }
    }

    fn script(objects: Vec<ObjectSpec>, degradations: Vec<Degradation>, frames: usize) -> SceneScript {
        SceneScript {
            seed: 3,
            num_frames: frames,
            width: 32,
            height: 32,
            background: [100, 110, 120],
            texture: 8.0,
            noise: 0.0,
            objects,
            degradations,
        }
    }

    fn still(x: f32, y: f32) -> Trajectory {
        Trajectory::Linear {
            x0: x,
            y0: y,
            vx: 0.0,
            vy: 0.0,
        }
    }

    #[test]
    fn static_disc_is_static() {
        let seq = render_sequence(&script(vec![disc(still(16.0, 16.0))], vec![], 3)).unwrap();
        assert_eq!(seq.frames[0], seq.frames[1]);
        assert_eq!(seq.frames[1], seq.frames[2]);
        assert_eq!(seq.labels[0].len(), 1);
        assert_eq!(seq.labels[0], seq.labels[2]);
        let l = seq.labels[0][0];
        assert!((l.cx - 0.5).abs() < 1e-6 && (l.w - 0.25).abs() < 1e-6);
    }

    #[test]
    fn exiting_object_is_clipped_then_dropped() {
        let traj = Trajectory::Linear {
            x0: 20.0,
            y0: 16.0,
            vx: 4.0,
            vy: 0.0,
        };
        let seq = render_sequence(&script(vec![disc(traj)], vec![], 6)).unwrap();
        // x(t) = 20 + 4t, half extent 4, image width 32:
        // t=0,1: inside; t=2 [24,32] touches edge; t=3 [28,36] half in;
        // t=4 [32,40] gone.
        for t in 0..=2 {
            assert!((seq.labels[t][0].w - 8.0 / 32.0).abs() < 1e-6, "t={t}");
        }
        assert!((seq.labels[3][0].w - 4.0 / 32.0).abs() < 1e-6);
        assert!((seq.labels[3][0].cx - 30.0 / 32.0).abs() < 1e-6);
        assert!(seq.labels[4].is_empty() && seq.labels[5].is_empty());
    }

    #[test]
    fn occluder_hides_disc_mid_sweep() {
        let sweep = Degradation {
            kind: DegradationKind::OccluderSweep,
            start: 0,
            end: 9,
            intensity: 1.0,
        };
        let seq = render_sequence(&script(vec![disc(still(16.0, 16.0))], vec![sweep], 9)).unwrap();
        // bar 12.8 px wide moves from [-12.8, 0] to [32, 44.8] in 8 steps of 5.6 px
        // frame 4: [9.6, 22.4] covers the disc [12, 20] completely
        assert_eq!(seq.labels[0].len(), 1);
        assert!(seq.labels[4].is_empty());
        assert_eq!(seq.labels[8].len(), 1);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut s = script(vec![disc(still(10.0, 12.0))], vec![], 4);
        s.noise = 5.0;
        assert_eq!(render_sequence(&s).unwrap(), render_sequence(&s).unwrap());
        let other = SceneScript { seed: 4, ..s.clone() };
        assert_ne!(
            render_sequence(&s).unwrap().frames,
            render_sequence(&other).unwrap().frames
        );
    }

    #[test]
    fn invalid_scripts_rejected() {
        assert!(render_sequence(&script(vec![], vec![], 0)).is_err());
        let bad = Degradation {
            kind: DegradationKind::Glare,
            start: 2,
            end: 9,
            intensity: 0.5,
        };
        assert!(render_sequence(&script(vec![], vec![bad], 5)).is_err());
        let nan = disc(Trajectory::Linear {
            x0: f32::NAN,
            y0: 0.0,
            vx: 0.0,
            vy: 0.0,
        });
        assert!(render_sequence(&script(vec![nan], vec![], 2)).is_err());
    }

    #[test]
    fn unlabeled_objects_have_no_boxes() {
        let mut d = disc(still(16.0, 16.0));
        d.labeled = false;
        let seq = render_sequence(&script(vec![d], vec![], 1)).unwrap();
        assert!(seq.labels[0].is_empty());
        assert_eq!(seq.frames[0].pixel(16, 16), [230, 40, 40]);
    }
}
