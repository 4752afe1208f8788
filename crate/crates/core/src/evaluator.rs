//! IoU-thresholded detection-rate metric with greedy one-to-one matching.

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::integral::Rect;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub boxes: Vec<Rect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub matched: usize,
    pub total_gt: usize,
    pub total_pred: usize,
    pub detection_rate: f64,
    pub false_positives: usize,
}

impl EvalReport {
    fn from_counts(matched: usize, total_gt: usize, total_pred: usize) -> Self {
        EvalReport {
            matched,
            total_gt,
            total_pred,
            detection_rate: if total_gt == 0 {
                0.0
            } else {
                matched as f64 / total_gt as f64
            },
            false_positives: total_pred - matched,
        }
    }

    /// Pools the counts of two reports (e.g. across images).
    pub fn merge(&self, other: &EvalReport) -> EvalReport {
        EvalReport::from_counts(
            self.matched + other.matched,
            self.total_gt + other.total_gt,
            self.total_pred + other.total_pred,
        )
    }
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let ix = a.right().min(b.right()).saturating_sub(a.x.max(b.x)) as f64;
    let iy = a.bottom().min(b.bottom()).saturating_sub(a.y.max(b.y)) as f64;
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

/// Index pairs `(pred, gt)` chosen by the greedy matcher.
pub fn greedy_pairs(preds: &[Detection], gts: &[Rect], iou_thr: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&preds[p].bbox, gt);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            pairs.push((p, g));
        }
    }
    pairs
}

/// Greedy score-ordered matching: each prediction, strongest first, claims
/// the unmatched ground-truth box of highest IoU ≥ `iou_thr` (lowest index on
/// ties).
pub fn match_detections(preds: &[Detection], gts: &[Rect], iou_thr: f64) -> EvalReport {
    let matched = greedy_pairs(preds, gts, iou_thr).len();
    EvalReport::from_counts(matched, gts.len(), preds.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(x: u32, y: u32, w: u32, h: u32, score: f64) -> Detection {
        Detection {
            bbox: Rect::new(x, y, w, h),
            level: 0,
            score,
        }
    }

    #[test]
    fn iou_cases() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Rect::new(10, 0, 10, 10)), 0.0);
        assert!((iou(&a, &Rect::new(5, 0, 10, 10)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_predictions_and_empty_predictions() {
        let gts = vec![Rect::new(0, 0, 10, 10), Rect::new(30, 30, 12, 8)];
        let preds: Vec<_> = gts.iter().map(|g| det(g.x, g.y, g.w, g.h, 1.0)).collect();
        let r = match_detections(&preds, &gts, 0.5);
        assert_eq!((r.detection_rate, r.false_positives), (1.0, 0));
        let r = match_detections(&[], &gts, 0.5);
        assert_eq!(
            (r.detection_rate, r.false_positives, r.matched),
            (0.0, 0, 0)
        );
    }

    #[test]
    fn duplicates_on_one_box_count_once() {
        let gts = vec![Rect::new(0, 0, 10, 10)];
        let preds = vec![det(0, 0, 10, 10, 1.0), det(1, 0, 10, 10, 2.0)];
        let r = match_detections(&preds, &gts, 0.01);
        assert_eq!((r.matched, r.false_positives), (1, 1));
    }

    #[test]
    fn greedy_can_be_suboptimal() {
        // the strong prediction takes A although it is the only one reaching B
        let gts = vec![Rect::new(0, 0, 10, 10), Rect::new(8, 0, 10, 10)];
        let preds = vec![det(2, 0, 10, 10, 2.0), det(0, 0, 3, 10, 1.0)];
        assert_eq!(greedy_pairs(&preds, &gts, 0.2), vec![(0, 0)]);
    }

    fn random_rect(rng: &mut ChaCha8Rng) -> Rect {
        Rect::new(
            rng.random_range(0..40),
            rng.random_range(0..40),
            rng.random_range(1..20),
            rng.random_range(1..20),
        )
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_rect(&mut rng), random_rect(&mut rng));
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn matching_is_one_to_one(seed in any::<u64>(), thr in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gts: Vec<_> = (0..rng.random_range(0..7)).map(|_| random_rect(&mut rng)).collect();
            let preds: Vec<_> = (0..rng.random_range(0..7))
                .map(|_| { let r = random_rect(&mut rng); det(r.x, r.y, r.w, r.h, rng.random()) })
                .collect();
            let pairs = greedy_pairs(&preds, &gts, thr);
            let mut ps: Vec<_> = pairs.iter().map(|p| p.0).collect();
            let mut gs: Vec<_> = pairs.iter().map(|p| p.1).collect();
            ps.sort_unstable(); ps.dedup();
            gs.sort_unstable(); gs.dedup();
            prop_assert_eq!(ps.len(), pairs.len());
            prop_assert_eq!(gs.len(), pairs.len());
            let r = match_detections(&preds, &gts, thr);
            prop_assert!(r.matched <= gts.len().min(preds.len()));
        }
    }
}
