use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::LayerStack;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub runs: usize,
    /// Warm-up passes executed and discarded.
    pub warmup: usize,
}

impl LatencyStats {
    /// Summarizes raw per-run timings in milliseconds.
    pub fn from_samples(samples: &[f64], warmup: usize) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        LatencyStats {
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: sorted[rank - 1],
            runs: n,
            warmup,
        }
    }
}

/// Wall-clock forward latency on a fixed pseudo-random input.
pub fn time_inference(model: &LayerStack, input_shape: [usize; 4], warmup: usize, runs: usize) -> Result<LatencyStats> {
    if runs == 0 {
        return Err(Error::invalid("latency", "runs must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = Tensor::uniform(&input_shape, 0.0, 1.0, &mut rng);
    for _ in 0..warmup {
        std::hint::black_box(model.forward(&input)?);
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        std::hint::black_box(model.forward(&input)?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(&samples, warmup))
}
