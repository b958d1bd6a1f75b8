//! On-disk dataset layout:
//!
//! ```text
//! root/meta.txt                              key=value lines
//! root/seq_<id>/frames/frame_<%06d>.ppm      binary P6, 8-bit RGB
//! root/seq_<id>/labels/frame_<%06d>.txt      `class cx cy w h` per line
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::image::Image;
use super::sampling::SamplingSpec;
use super::stack::{build_stack, FrameStack};
use crate::detector::BoxLabel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<Image>,
    /// Ground truth for every frame; only the target frame of a stack is ever read.
    pub labels: Vec<Vec<BoxLabel>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn stack(&self, t: usize, spec: &SamplingSpec) -> Result<FrameStack> {
        build_stack(&self.frames, &self.labels, t, spec, &self.id)
    }

    /// Every target frame of the sequence as a stack.
    pub fn stacks(&self, spec: &SamplingSpec) -> Result<Vec<FrameStack>> {
        (0..self.len()).map(|t| self.stack(t, spec)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub fps: f32,
    pub width: usize,
    pub height: usize,
    /// Extra keys beyond the four required ones.
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn stacks(&self, spec: &SamplingSpec) -> Result<Vec<FrameStack>> {
        let mut out = Vec::new();
        for seq in &self.sequences {
            out.extend(seq.stacks(spec)?);
        }
        Ok(out)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut meta = format!(
            "fps={}\nwidth={}\nheight={}\nnum_sequences={}\n",
            self.meta.fps,
            self.meta.width,
            self.meta.height,
            self.sequences.len()
        );
        for (k, v) in &self.meta.extra {
            meta.push_str(&format!("{k}={v}\n"));
        }
        let meta_path = root.join("meta.txt");
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        for seq in &self.sequences {
            let dir = root.join(format!("seq_{}", seq.id));
            let frames_dir = dir.join("frames");
            let labels_dir = dir.join("labels");
            for d in [&frames_dir, &labels_dir] {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            for (i, (frame, labels)) in seq.frames.iter().zip(&seq.labels).enumerate() {
                frame.write_ppm(&frames_dir.join(format!("frame_{i:06}.ppm")))?;
                let path = labels_dir.join(format!("frame_{i:06}.txt"));
                fs::write(&path, format_labels(labels)).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    pub fn read(root: &Path) -> Result<Dataset> {
        let meta_path = root.join("meta.txt");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut kv = parse_key_values(&text).map_err(|reason| Error::Format {
            kind: "meta",
            path: meta_path.clone(),
            reason,
        })?;
        let mut take = |key: &str| {
            kv.remove(key).ok_or_else(|| Error::Format {
                kind: "meta",
                path: meta_path.clone(),
                reason: format!("missing key `{key}`"),
            })
        };
        let fps_s = take("fps")?;
        let width_s = take("width")?;
        let height_s = take("height")?;
        let count_s = take("num_sequences")?;
        let bad = |key: &str, v: &str| Error::Format {
            kind: "meta",
            path: meta_path.clone(),
            reason: format!("`{key}={v}` is not a number"),
        };
        let meta = DatasetMeta {
            fps: fps_s.parse().map_err(|_| bad("fps", &fps_s))?,
            width: width_s.parse().map_err(|_| bad("width", &width_s))?,
            height: height_s.parse().map_err(|_| bad("height", &height_s))?,
            extra: kv,
        };
        let declared: usize = count_s.parse().map_err(|_| bad("num_sequences", &count_s))?;

        let mut seq_dirs: Vec<(String, std::path::PathBuf)> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                name.strip_prefix("seq_").map(|id| (id.to_string(), e.path()))
            })
            .collect();
        seq_dirs.sort();
        if seq_dirs.len() != declared {
            return Err(Error::Format {
                kind: "meta",
                path: meta_path,
                reason: format!("declares {declared} sequences, found {}", seq_dirs.len()),
            });
        }
        let mut sequences = Vec::with_capacity(seq_dirs.len());
        for (id, dir) in seq_dirs {
            sequences.push(read_sequence(&id, &dir, &meta)?);
        }
        Ok(Dataset { meta, sequences })
    }
}

fn read_sequence(id: &str, dir: &Path, meta: &DatasetMeta) -> Result<Sequence> {
    let frames_dir = dir.join("frames");
    let labels_dir = dir.join("labels");
    let mut names: Vec<String> = fs::read_dir(&frames_dir)
        .map_err(|e| Error::io(&frames_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|n| n.starts_with("frame_") && n.ends_with(".ppm"))
        .collect();
    names.sort();
    let mut frames = Vec::with_capacity(names.len());
    let mut labels = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let expected = format!("frame_{i:06}.ppm");
        if *name != expected {
            return Err(Error::Format {
                kind: "sequence",
                path: frames_dir.clone(),
                reason: format!("expected {expected}, found {name}"),
            });
        }
        let img = Image::read_ppm(&frames_dir.join(name))?;
        if img.width != meta.width || img.height != meta.height {
            return Err(Error::Format {
                kind: "PPM",
                path: frames_dir.join(name),
                reason: format!(
                    "{}x{} differs from meta {}x{}",
                    img.width, img.height, meta.width, meta.height
                ),
            });
        }
        frames.push(img);
        let label_path = labels_dir.join(format!("frame_{i:06}.txt"));
        let frame_labels = if label_path.exists() {
            let text = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
            parse_labels(&text).map_err(|reason| Error::Format {
                kind: "label",
                path: label_path.clone(),
                reason,
            })?
        } else {
            Vec::new()
        };
        labels.push(frame_labels);
    }
    Ok(Sequence {
        id: id.to_string(),
        frames,
        labels,
    })
}

pub fn format_labels(labels: &[BoxLabel]) -> String {
    labels
        .iter()
        .map(|l| format!("{} {:.6} {:.6} {:.6} {:.6}\n", l.class_id, l.cx, l.cy, l.w, l.h))
        .collect()
}

pub fn parse_labels(text: &str) -> std::result::Result<Vec<BoxLabel>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(format!("line {}: expected 5 fields, got {}", n + 1, fields.len()));
        }
        let class_id = fields[0]
            .parse()
            .map_err(|_| format!("line {}: bad class `{}`", n + 1, fields[0]))?;
        let mut v = [0.0f32; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.parse().map_err(|_| format!("line {}: bad number `{f}`", n + 1))?;
        }
        out.push(BoxLabel::new(class_id, v[0], v[1], v[2], v[3]));
    }
    Ok(out)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: `{line}` is not key=value", n + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
