/// COCO 101-point interpolated average precision.
///
/// `scored` holds `(confidence, is_true_positive)` for every prediction of
/// one class across the dataset. Ties in confidence keep the input order.
/// With no ground truth the result is 1 when there are also no predictions
/// and 0 otherwise.
pub fn average_precision(scored: &[(f32, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if scored.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| scored[j].0.total_cmp(&scored[i].0).then(i.cmp(&j)));

    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (k, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope: max precision at any later cutoff
    for k in (0..precision.len().saturating_sub(1)).rev() {
        if precision[k + 1] > precision[k] {
            precision[k] = precision[k + 1];
        }
    }
    let mut sum = 0.0f64;
    let mut k = 0usize;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        while k < recall.len() && recall[k] < level {
            k += 1;
        }
        if k < recall.len() {
            sum += precision[k];
        }
    }
    sum / 101.0
}
