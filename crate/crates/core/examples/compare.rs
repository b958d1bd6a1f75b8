//! Trains single-frame and 3-frame early-fusion detectors on generated video
//! and prints test mAP per seed.
//!
//! Usage: `cargo run --release --example compare [key=value ...]` with keys
//! epochs, seeds, distractors, train_sequences, test_sequences, frames,
//! preset, lr, obj_weight, batch_size, pretrain, pretrain_sequences.

use std::time::Instant;

use mfdet::experiment::{run_comparison, ComparisonParams};

fn main() -> mfdet::Result<()> {
    let mut params = ComparisonParams::default();
    for arg in std::env::args().skip(1) {
        let (key, value) = arg.split_once('=').expect("arguments are key=value");
        let num = || {
            value
                .parse::<usize>()
                .unwrap_or_else(|_| panic!("{key} expects an integer"))
        };
        match key {
            "epochs" => params.train.epochs = num(),
            "seeds" => params.seeds = (0..num() as u64).collect(),
            "distractors" => params.distractors = num(),
            "train_sequences" => params.train_sequences = num(),
            "test_sequences" => params.test_sequences = num(),
            "frames" => params.frames_per_sequence = num(),
            "pretrain" => params.pretrain_epochs = num(),
            "pretrain_sequences" => params.pretrain_sequences = num(),
            "batch_size" => params.train.batch_size = num(),
            "preset" => params.preset = value.parse()?,
            "obj_weight" => params.loss_weights.objectness = value.parse().expect("obj_weight expects a number"),
            "lr" => params.train.sgd.learning_rate = value.parse().expect("lr expects a number"),
            other => panic!("unknown key {other}"),
        }
    }
    let start = Instant::now();
    let results = run_comparison(&params, |line| {
        eprintln!("[{:>7.1}s] {line}", start.elapsed().as_secs_f64())
    })?;
    for r in &results {
        println!(
            "{:<16} mAP50 {:.4} (per seed {:?})  mAP50-95 {:.4}  train/test stacks {}/{}",
            r.name,
            r.mean_map50(),
            r.map50,
            r.mean_map5095(),
            r.train_stacks,
            r.test_stacks
        );
    }
    Ok(())
}
