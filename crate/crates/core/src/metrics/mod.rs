//! COCO-style detection metrics, analytic cost counters and latency timing.

pub mod ap;
pub mod counters;
pub mod evaluate;
pub mod iou;
pub mod latency;
pub mod matching;

pub use ap::average_precision;
pub use counters::{conv_flops, count_flops, count_params};
pub use evaluate::{
    evaluate, evaluate_with, format_table, score_detections, Detect, EvalReport, ModelDetector, OracleDetector,
    MAP_CONF_FLOOR,
};
pub use iou::{iou, BBox};
pub use latency::{time_inference, LatencyStats};
pub use matching::{coco_thresholds, match_detections, MatchResult};
