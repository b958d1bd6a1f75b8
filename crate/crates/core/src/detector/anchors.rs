//! Anchor priors by k-means over label shapes with a `1 - IoU` distance.

use super::config::DEFAULT_ANCHORS;

fn shape_iou(a: (f32, f32), b: (f32, f32)) -> f32 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

/// Fits `k` anchors to label `(w, h)` pairs, sorted by area.
///
/// Deterministic: centroids start at area quantiles. Falls back to the
/// default priors when there are no shapes.
pub fn fit_anchors(shapes: &[(f32, f32)], k: usize, iterations: usize) -> Vec<(f32, f32)> {
    if shapes.is_empty() || k == 0 {
        return DEFAULT_ANCHORS.iter().copied().cycle().take(k).collect();
    }
    let mut sorted = shapes.to_vec();
    sorted.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    let mut centroids: Vec<(f32, f32)> = (0..k)
        .map(|i| sorted[((2 * i + 1) * sorted.len() / (2 * k)).min(sorted.len() - 1)])
        .collect();
    let mut assignment = vec![0usize; shapes.len()];
    for _ in 0..iterations {
        for (slot, &s) in assignment.iter_mut().zip(shapes) {
            *slot = (0..k)
                .max_by(|&i, &j| {
                    shape_iou(centroids[i], s)
                        .total_cmp(&shape_iou(centroids[j], s))
                        .then(j.cmp(&i))
                })
                .unwrap();
        }
        let mut moved = false;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<(f32, f32)> = assignment
                .iter()
                .zip(shapes)
                .filter(|(&a, _)| a == c)
                .map(|(_, &s)| s)
                .collect();
            if members.is_empty() {
                continue;
            }
            let m = members.len() as f32;
            let next = (
                members.iter().map(|s| s.0).sum::<f32>() / m,
                members.iter().map(|s| s.1).sum::<f32>() / m,
            );
            moved |= next != *centroid;
            *centroid = next;
        }
        if !moved {
            break;
        }
    }
    centroids.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    centroids
}
