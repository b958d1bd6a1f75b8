use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mfdet::checkpoint::Checkpoint;
use mfdet::config::RunConfig;
use mfdet::data::dataset::parse_key_values;
use mfdet::data::{generate, stack_to_tensor, Dataset, FrameStack, GenerateParams, SamplingSpec};
use mfdet::detector::{build_model, FusionMode, LayerStack, ModelConfig};
use mfdet::introspect::{export_heatmap, grad_cam_pp};
use mfdet::metrics::{
    count_flops, count_params, evaluate, evaluate_with, time_inference, EvalReport, ModelDetector, OracleDetector,
};
use mfdet::surgery::{verify_equivalence, SurgeryMode};
use mfdet::train::{anchors_for, split_sequences, train, EpochLog};

use crate::Command;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mfdet::Error),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            preset,
            seed,
            out,
            sequences,
            frames,
            size,
            distractors,
            fps,
        } => cmd_generate(
            &GenerateParams {
                preset: preset.parse()?,
                seed,
                num_sequences: sequences,
                frames_per_sequence: frames,
                width: size,
                height: size,
                fps,
                distractors,
            },
            &out,
        ),
        Command::Train { config, overrides } => {
            let (cfg, _) = load_run_config(config.as_deref(), &overrides)?;
            cmd_train(&cfg)
        }
        Command::Surgery {
            input,
            output,
            mode,
            n,
            trials,
            tolerance,
            seed,
            force,
        } => cmd_surgery(&input, &output, &mode, n, trials, tolerance, seed, force),
        Command::Eval {
            checkpoint,
            config,
            out,
            sweep,
            sweep_mode,
            latency_runs,
            oracle,
            overrides,
        } => {
            let (cfg, explicit) = load_run_config(config.as_deref(), &overrides)?;
            let opts = EvalOptions {
                sweep,
                sweep_mode,
                latency_runs,
                oracle,
            };
            let csv = cmd_eval(&checkpoint, &cfg, explicit.contains("sampling"), &opts)?;
            match out {
                Some(path) => write_file(&path, csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Predict {
            checkpoint,
            config,
            sequence,
            t,
            out,
            overrides,
        } => {
            let (cfg, explicit) = load_run_config(config.as_deref(), &overrides)?;
            cmd_predict(&checkpoint, &cfg, explicit.contains("sampling"), &sequence, t, &out)
        }
        Command::Cam {
            checkpoint,
            config,
            sequence,
            t,
            out,
            overrides,
        } => {
            let (cfg, explicit) = load_run_config(config.as_deref(), &overrides)?;
            cmd_cam(&checkpoint, &cfg, explicit.contains("sampling"), &sequence, t, &out)
        }
        Command::Flops {
            checkpoint,
            modes,
            input_size,
            base_width,
        } => {
            print!("{}", cmd_flops(checkpoint.as_deref(), &modes, input_size, base_width)?);
            Ok(())
        }
        Command::Bench {
            modes,
            input_size,
            warmup,
            runs,
        } => {
            print!("{}", cmd_bench(&modes, input_size, warmup, runs)?);
            Ok(())
        }
    }
}

/// Reads the optional config file, applies overrides and reports which keys
/// were set explicitly.
fn load_run_config(path: Option<&Path>, overrides: &[String]) -> Result<(RunConfig, BTreeSet<String>)> {
    let mut explicit = BTreeSet::new();
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| mfdet::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            explicit.extend(parse_key_values(&text).map_err(usage)?.into_keys());
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    for arg in overrides {
        if let Some(body) = arg.strip_prefix("--") {
            let key = body.split('=').next().unwrap_or_default();
            if key == "config" {
                return Err(usage("--config must come before run-config overrides"));
            }
            explicit.insert(key.replace('-', "_"));
        }
    }
    cfg.apply_overrides(overrides)?;
    Ok((cfg, explicit))
}

fn cmd_generate(params: &GenerateParams, out: &Path) -> Result<()> {
    let ds = generate(params)?;
    ds.write(out)?;
    let frames: usize = ds.sequences.iter().map(|s| s.frames.len()).sum();
    println!(
        "wrote {} sequences ({frames} frames, preset {}) to {}",
        ds.sequences.len(),
        params.preset,
        out.display()
    );
    Ok(())
}

fn dataset_for(cfg: &RunConfig) -> Result<Dataset> {
    let root = cfg
        .dataset_root
        .as_ref()
        .ok_or_else(|| usage("dataset_root is not set (config file or --dataset_root)"))?;
    let ds = Dataset::read(root)?;
    if ds.meta.width != cfg.input_size || ds.meta.height != cfg.input_size {
        return Err(usage(format!(
            "dataset frames are {}x{} but input_size is {}",
            ds.meta.width, ds.meta.height, cfg.input_size
        )));
    }
    Ok(ds)
}

fn stacks_of(ds: &Dataset, indices: &[usize], spec: &SamplingSpec) -> Result<Vec<FrameStack>> {
    let mut out = Vec::new();
    for &i in indices {
        out.extend(ds.sequences[i].stacks(spec)?);
    }
    Ok(out)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let ds = dataset_for(cfg)?;
    let (train_idx, val_idx) = split_sequences(ds.sequences.len(), cfg.val_fraction, cfg.seed)?;
    let train_set = stacks_of(&ds, &train_idx, &cfg.sampling)?;
    let val_set = stacks_of(&ds, &val_idx, &cfg.sampling)?;
    if val_set.is_empty() {
        eprintln!("warning: no validation sequences; the final epoch is kept");
    }

    let model = match &cfg.init_checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.model.mode() != cfg.fusion_mode {
                return Err(usage(format!(
                    "init checkpoint is {} but fusion_mode is {}",
                    ck.model.mode(),
                    cfg.fusion_mode
                )));
            }
            ck.model
        }
        None => build_model(&cfg.model_config(anchors_for(&train_set, cfg.num_anchors)), cfg.seed)?,
    };

    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("run_config.txt"), cfg.to_text())?;
    let log_path = cfg.out_dir.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(|source| CliError::Io {
        path: log_path.clone(),
        source,
    })?;
    let io_err = |source| CliError::Io {
        path: log_path.clone(),
        source,
    };
    writeln!(log, "{}", EpochLog::CSV_HEADER).map_err(io_err)?;

    let best_path = cfg.out_dir.join("best.ckpt");
    let tag = |ck: Checkpoint, epoch: usize, map50: Option<f64>| {
        let ck = ck
            .with_info("epoch", epoch)
            .with_info("sampling", &cfg.sampling)
            .with_info("seed", cfg.seed);
        match map50 {
            Some(m) => ck.with_info("best_val_map50", format!("{m:.6}")),
            None => ck,
        }
    };
    let mut write_error = None;
    let tcfg = cfg.train_config();
    let outcome = train(model, &train_set, &val_set, &tcfg, |entry, improved| {
        println!(
            "epoch {:>4}  lr {:<8} loss {:.4} (obj {:.4} cls {:.4} box {:.4})  val mAP50 {}",
            entry.epoch,
            entry.lr,
            entry.loss,
            entry.loss_obj,
            entry.loss_cls,
            entry.loss_box,
            entry.val_map50.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into())
        );
        if let Err(e) = writeln!(log, "{}", entry.csv_row()) {
            write_error = Some(e);
        }
        if let Some(best) = improved {
            tag(Checkpoint::new(best.clone()), entry.epoch, entry.val_map50).save(&best_path)?;
        }
        Ok(())
    })?;
    if let Some(e) = write_error {
        return Err(io_err(e));
    }
    tag(Checkpoint::new(outcome.last.clone()), tcfg.epochs, None).save(&cfg.out_dir.join("last.ckpt"))?;
    if outcome.best_map50.is_none() {
        tag(Checkpoint::new(outcome.best), outcome.best_epoch, None).save(&best_path)?;
    }
    println!(
        "best epoch {} (val mAP50 {}), checkpoints in {}",
        outcome.best_epoch,
        outcome
            .best_map50
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        cfg.out_dir.display()
    );
    Ok(())
}

fn parse_surgery_mode(mode: &str) -> Result<SurgeryMode> {
    match mode {
        "early_fusion" | "ef" => Ok(SurgeryMode::EarlyFusion),
        "grouped" | "group" => Ok(SurgeryMode::Grouped),
        other => Err(usage(format!(
            "unknown surgery mode {other:?}; expected early_fusion or grouped"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_surgery(
    input: &Path,
    output: &Path,
    mode: &str,
    n: usize,
    trials: usize,
    tolerance: f32,
    seed: u64,
    force: bool,
) -> Result<()> {
    let mode = parse_surgery_mode(mode)?;
    let source = Checkpoint::load(input)?;
    let adapted = source.adapt(mode, n)?;
    let report = verify_equivalence(&adapted.model, &source.model, n, trials, tolerance, seed)?;
    println!(
        "equivalence: {} trials, max abs deviation {:.3e}, tolerance {:.1e}: {}",
        report.trials,
        report.max_abs_deviation,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if !report.passed && !force {
        return Err(usage("verification failed; nothing written (use --force to override)"));
    }
    adapted.save(output)?;
    println!("wrote {} model to {}", adapted.model.mode(), output.display());
    Ok(())
}

pub struct EvalOptions {
    pub sweep: Option<String>,
    pub sweep_mode: String,
    pub latency_runs: usize,
    pub oracle: bool,
}

/// Sampling to use for a model: the explicit one (which must agree with the
/// model), else the one recorded at training time, else adjacent frames.
fn sampling_for(model: &LayerStack, ck: &Checkpoint, cfg: &RunConfig, explicit: bool) -> Result<SamplingSpec> {
    let frames = model.mode().frames();
    let spec = if explicit {
        cfg.sampling.clone()
    } else if let Some(s) = ck.info.get("sampling") {
        s.parse()?
    } else {
        SamplingSpec::Adjacent { n: frames }
    };
    if spec.frames() != frames {
        return Err(usage(format!(
            "sampling {spec} gives {} frames but the checkpoint model is {} ({frames} frames)",
            spec.frames(),
            model.mode()
        )));
    }
    Ok(spec)
}

fn with_n_frames(spec: &SamplingSpec, n: usize) -> SamplingSpec {
    match spec {
        SamplingSpec::Stepped { step, .. } => SamplingSpec::Stepped { n, step: *step },
        _ => SamplingSpec::Adjacent { n },
    }
}

fn eval_row(model: &LayerStack, stacks: &[FrameStack], cfg: &RunConfig, opts: &EvalOptions) -> Result<EvalReport> {
    let mut report = if opts.oracle {
        let mut r = evaluate_with(&OracleDetector, stacks, cfg.conf_threshold)?;
        r.params = count_params(model);
        r.flops = count_flops(model, model.config.input_size);
        r
    } else {
        evaluate(model, stacks, cfg.conf_threshold, cfg.nms_iou)?
    };
    if opts.latency_runs > 0 {
        let s = model.config.input_size;
        let c = model.expected_input_channels();
        report.latency = Some(time_inference(model, [1, c, s, s], 5, opts.latency_runs)?);
    }
    Ok(report)
}

pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig, explicit_sampling: bool, opts: &EvalOptions) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = dataset_for(cfg)?;
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    match &opts.sweep {
        None => {
            let spec = sampling_for(&ck.model, &ck, cfg, explicit_sampling)?;
            let report = eval_row(&ck.model, &ds.stacks(&spec)?, cfg, opts)?;
            csv.push_str(&report.csv_row(&ck.model.mode().to_string()));
            csv.push('\n');
        }
        Some(list) => {
            if !ck.model.mode().is_single() {
                return Err(usage(format!(
                    "--sweep adapts a single-frame checkpoint, but this one is {}",
                    ck.model.mode()
                )));
            }
            let mode = parse_surgery_mode(&opts.sweep_mode)?;
            let base = if explicit_sampling {
                cfg.sampling.clone()
            } else {
                SamplingSpec::Adjacent { n: 1 }
            };
            for item in list.split(',') {
                let n: usize = item
                    .trim()
                    .parse()
                    .map_err(|_| usage(format!("sweep entry {item:?} is not a frame count")))?;
                let adapted = ck.adapt(mode, n)?;
                let spec = with_n_frames(&base, n);
                let report = eval_row(&adapted.model, &ds.stacks(&spec)?, cfg, opts)?;
                let name = if n == 1 {
                    "single".to_string()
                } else {
                    adapted.model.mode().to_string()
                };
                csv.push_str(&report.csv_row(&name));
                csv.push('\n');
            }
        }
    }
    Ok(csv)
}

fn target_frames(ds: &Dataset, sequence: &str, t: Option<usize>) -> Result<(usize, Vec<usize>)> {
    let idx = ds.sequences.iter().position(|s| s.id == sequence).ok_or_else(|| {
        let ids: Vec<&str> = ds.sequences.iter().map(|s| s.id.as_str()).collect();
        usage(format!("no sequence {sequence:?}; available: {}", ids.join(", ")))
    })?;
    let len = ds.sequences[idx].len();
    let frames = match t {
        Some(t) if t >= len => {
            return Err(usage(format!(
                "frame {t} is outside sequence {sequence} ({len} frames)"
            )))
        }
        Some(t) => vec![t],
        None => (0..len).collect(),
    };
    Ok((idx, frames))
}

/// Draws `stack`'s detections on its target frame.
pub fn annotate(ck: &Checkpoint, stack: &FrameStack, cfg: &RunConfig) -> Result<(mfdet::data::Image, String)> {
    let detector = ModelDetector::new(&ck.model, cfg.nms_iou);
    let dets = detector.detect_at(stack, cfg.conf_threshold)?;
    let mut img = stack.frames.last().expect("stacks are non-empty").clone();
    let mut text = String::new();
    for d in &dets {
        img.draw_box(d.cx, d.cy, d.w, d.h, [255, 32, 32]);
        text.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            d.class_id, d.confidence, d.cx, d.cy, d.w, d.h
        ));
    }
    Ok((img, text))
}

fn cmd_predict(
    checkpoint: &Path,
    cfg: &RunConfig,
    explicit: bool,
    sequence: &str,
    t: Option<usize>,
    out: &Path,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = dataset_for(cfg)?;
    let spec = sampling_for(&ck.model, &ck, cfg, explicit)?;
    let (idx, frames) = target_frames(&ds, sequence, t)?;
    create_dir(out)?;
    for t in frames {
        let stack = ds.sequences[idx].stack(t, &spec)?;
        let (img, text) = annotate(&ck, &stack, cfg)?;
        let stem = format!("seq_{sequence}_frame_{t:06}");
        img.write_ppm(&out.join(format!("{stem}.ppm")))?;
        write_file(&out.join(format!("{stem}.txt")), text)?;
    }
    println!("wrote predictions to {}", out.display());
    Ok(())
}

fn cmd_cam(
    checkpoint: &Path,
    cfg: &RunConfig,
    explicit: bool,
    sequence: &str,
    t: Option<usize>,
    out: &Path,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = dataset_for(cfg)?;
    let spec = sampling_for(&ck.model, &ck, cfg, explicit)?;
    let (idx, frames) = target_frames(&ds, sequence, t)?;
    create_dir(out)?;
    for t in frames {
        let stack = ds.sequences[idx].stack(t, &spec)?;
        let map = grad_cam_pp(&ck.model, &stack_to_tensor(&stack)?, cfg.conf_threshold)?;
        let base = stack.frames.last().expect("stacks are non-empty");
        export_heatmap(&map, base, &out.join(format!("seq_{sequence}_cam_{t:06}.ppm")))?;
    }
    println!("wrote attention maps to {}", out.display());
    Ok(())
}

fn parse_modes(list: &str) -> Result<Vec<FusionMode>> {
    list.split(',')
        .map(|m| {
            let m = m.trim();
            // "early_fusion:1" and friends are the single-frame model
            match m.rsplit_once(':') {
                Some((_, "1")) => Ok(FusionMode::Single),
                _ => m.parse().map_err(CliError::from),
            }
        })
        .collect()
}

pub fn cmd_flops(checkpoint: Option<&Path>, modes: &str, input_size: usize, base_width: usize) -> Result<String> {
    let models: Vec<LayerStack> = match checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let single = build_model(&ck.model.config.clone().with_mode(FusionMode::Single), 0)?;
            vec![single, ck.model]
        }
        None => parse_modes(modes)?
            .into_iter()
            .map(|mode| {
                build_model(
                    &ModelConfig {
                        input_size,
                        base_width,
                        fusion_mode: mode,
                        ..ModelConfig::default()
                    },
                    0,
                )
            })
            .collect::<mfdet::Result<_>>()?,
    };
    let mut csv = String::from("config,input_size,params,flops,params_delta,flops_delta\n");
    for m in &models {
        let size = if checkpoint.is_some() {
            m.config.input_size
        } else {
            input_size
        };
        let baseline = build_model(&m.config.clone().with_mode(FusionMode::Single), 0)?;
        let (p, f) = (count_params(m), count_flops(m, size));
        let (bp, bf) = (count_params(&baseline), count_flops(&baseline, size));
        csv.push_str(&format!(
            "{},{size},{p},{f},{},{}\n",
            m.mode(),
            p as i64 - bp as i64,
            f as i64 - bf as i64
        ));
    }
    Ok(csv)
}

fn cmd_bench(modes: &str, input_size: usize, warmup: usize, runs: usize) -> Result<String> {
    let mut csv = String::from("config,input_size,runs,mean_ms,median_ms,p95_ms,median_ratio\n");
    let mut first = None;
    for mode in parse_modes(modes)? {
        let cfg = ModelConfig {
            input_size,
            fusion_mode: mode,
            ..ModelConfig::default()
        };
        let model = build_model(&cfg, 0)?;
        let stats = time_inference(&model, [1, mode.input_channels(), input_size, input_size], warmup, runs)?;
        let base = *first.get_or_insert(stats.median_ms);
        csv.push_str(&format!(
            "{mode},{input_size},{},{:.4},{:.4},{:.4},{:.4}\n",
            stats.runs,
            stats.mean_ms,
            stats.median_ms,
            stats.p95_ms,
            stats.median_ms / base
        ));
    }
    Ok(csv)
}
