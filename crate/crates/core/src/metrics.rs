//! Detection, topology and mask average precision.
//!
//! All three metrics rank predictions by score (ties by index) and match them
//! greedily to unmatched ground truth. AP uses all-point interpolation. With
//! no ground truth, AP is 1 when nothing is predicted and 0 otherwise.

use serde::{Deserialize, Serialize};

use crate::geometry::{discrete_frechet, Polyline};
use crate::tensor::Matrix;

/// Both polylines are resampled to this many points before the Fréchet
/// distance is taken, so that point density does not bias the distance.
pub const METRIC_POINTS: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub frechet_thresholds: Vec<f64>,
    pub topology_match_threshold: f64,
    pub iou_thresholds: Vec<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            frechet_thresholds: vec![1.0, 2.0, 3.0],
            topology_match_threshold: 1.0,
            iou_thresholds: vec![0.5, 0.75],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub threshold: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub det_l: f64,
    pub top_ll: f64,
    pub ap_l: f64,
    pub det_l_per_threshold: Vec<ThresholdAp>,
    pub ap_l_per_threshold: Vec<ThresholdAp>,
}

/// All-point interpolated AP of a ranked list of hit flags against
/// `num_gt` positives.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope from the right
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in curve {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Prediction indices sorted by descending score, ties by index.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy score-ordered matching. `dist(i, j)` is the distance of
/// prediction `i` to ground truth `j`; a pair matches when it is at most
/// `threshold`. Each prediction takes its nearest admissible unmatched GT.
/// Returns, in rank order, `(prediction, matched gt)`.
pub fn greedy_match(
    scores: &[f64],
    num_gt: usize,
    threshold: f64,
    dist: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, Option<usize>)> {
    let mut taken = vec![false; num_gt];
    rank(scores)
        .into_iter()
        .map(|i| {
            let best = (0..num_gt)
                .filter(|&j| !taken[j])
                .map(|j| (j, dist(i, j)))
                .filter(|&(_, d)| d <= threshold)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            (i, best.map(|b| b.0))
        })
        .collect()
}

fn frechet_table(preds: &[Polyline], gts: &[Polyline]) -> Matrix {
    let p: Vec<Polyline> = preds.iter().map(|l| l.resample(METRIC_POINTS)).collect();
    let g: Vec<Polyline> = gts.iter().map(|l| l.resample(METRIC_POINTS)).collect();
    let mut d = Matrix::zeros(p.len(), g.len());
    for (i, a) in p.iter().enumerate() {
        for (j, b) in g.iter().enumerate() {
            d.set(i, j, discrete_frechet(a, b));
        }
    }
    d
}

fn det_ap_from_table(scores: &[f64], d: &Matrix, threshold: f64) -> f64 {
    let hits: Vec<bool> = greedy_match(scores, d.cols(), threshold, |i, j| d.get(i, j))
        .into_iter()
        .map(|(_, m)| m.is_some())
        .collect();
    average_precision(&hits, d.cols())
}

/// Per-threshold Fréchet AP and their mean.
pub fn det_l(preds: &[Polyline], scores: &[f64], gts: &[Polyline], thresholds: &[f64]) -> (f64, Vec<ThresholdAp>) {
    let d = frechet_table(preds, gts);
    let per: Vec<ThresholdAp> = thresholds
        .iter()
        .map(|&t| ThresholdAp {
            threshold: t,
            ap: det_ap_from_table(scores, &d, t),
        })
        .collect();
    let mean = per.iter().map(|t| t.ap).sum::<f64>() / per.len().max(1) as f64;
    (mean, per)
}

/// Lane-graph AP. Predicted lanes are matched to GT lanes at `tau`; every
/// ordered pair of matched predictions with positive probability becomes a
/// candidate edge in GT index space, ranked by probability. Edges touching
/// unmatched lanes are not candidates and their GT edges count as missed.
pub fn top_ll(
    preds: &[Polyline],
    scores: &[f64],
    pred_adj: &Matrix,
    gts: &[Polyline],
    gt_adj: &[Vec<u8>],
    tau: f64,
) -> f64 {
    let d = frechet_table(preds, gts);
    let mut gt_of = vec![None; preds.len()];
    for (i, m) in greedy_match(scores, gts.len(), tau, |i, j| d.get(i, j)) {
        gt_of[i] = m;
    }
    let num_edges = gt_adj.iter().flatten().filter(|&&e| e == 1).count();
    let mut cands: Vec<(f64, bool)> = Vec::new();
    for i in 0..preds.len() {
        for j in 0..preds.len() {
            if let (Some(a), Some(b)) = (gt_of[i], gt_of[j]) {
                let p = pred_adj.get(i, j);
                if p > 0.0 {
                    cands.push((p, gt_adj[a][b] == 1));
                }
            }
        }
    }
    if num_edges == 0 {
        return if cands.iter().any(|c| c.0 > 0.5) { 0.0 } else { 1.0 };
    }
    let order = rank(&cands.iter().map(|c| c.0).collect::<Vec<_>>());
    let hits: Vec<bool> = order.iter().map(|&k| cands[k].1).collect();
    average_precision(&hits, num_edges)
}

pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mask AP over IoU thresholds. Predicted logits are binarized at
/// probability 0.5. A pair matches when IoU reaches the threshold; each
/// prediction takes the highest-IoU admissible GT.
pub fn mask_ap(
    pred_logits: &[Vec<f64>],
    scores: &[f64],
    gts: &[Vec<bool>],
    thresholds: &[f64],
) -> (f64, Vec<ThresholdAp>) {
    let bins: Vec<Vec<bool>> = pred_logits
        .iter()
        .map(|m| m.iter().map(|&l| l >= 0.0).collect())
        .collect();
    let mut iou = Matrix::zeros(bins.len(), gts.len());
    for (i, p) in bins.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            iou.set(i, j, mask_iou(p, g));
        }
    }
    let per: Vec<ThresholdAp> = thresholds
        .iter()
        .map(|&t| {
            // distance 1 − IoU turns "highest IoU ≥ t" into "nearest within 1 − t"
            let hits: Vec<bool> = greedy_match(scores, gts.len(), 1.0 - t, |i, j| 1.0 - iou.get(i, j))
                .into_iter()
                .map(|(_, m)| m.is_some())
                .collect();
            ThresholdAp {
                threshold: t,
                ap: average_precision(&hits, gts.len()),
            }
        })
        .collect();
    let mean = per.iter().map(|t| t.ap).sum::<f64>() / per.len().max(1) as f64;
    (mean, per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(y: f64) -> Polyline {
        Polyline::from_xy(&[[-10.0, y], [10.0, y]]).unwrap().resample(201)
    }

    #[test]
    fn ap_hand_curve() {
        // TP, FP, TP against 2 GT: envelope 1, 2/3, 2/3 -> 0.5·1 + 0.5·2/3
        assert!((average_precision(&[true, false, true], 2) - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&[true, true], 2), 1.0);
        assert_eq!(average_precision(&[], 2), 0.0);
        assert_eq!(average_precision(&[], 0), 1.0);
        assert_eq!(average_precision(&[false], 0), 0.0);
    }

    #[test]
    fn det_l_examples() {
        let gts = vec![line(0.0), line(5.0)];
        let (m, _) = det_l(&gts, &[1.0, 1.0], &gts, &[1.0, 2.0, 3.0]);
        assert_eq!(m, 1.0);
        let far = vec![line(10.0), line(-10.0)];
        assert_eq!(det_l(&far, &[1.0, 1.0], &gts, &[1.0, 2.0, 3.0]).0, 0.0);

        // 0.9 hits GT0, 0.8 is 2.5 m off everything, 0.7 hits GT1 at 0.5 m
        let preds = vec![line(0.0), line(-2.5), line(5.5)];
        let (m, per) = det_l(&preds, &[0.9, 0.8, 0.7], &gts, &[1.0, 2.0, 3.0]);
        let pr = 0.5 + 0.5 * (2.0 / 3.0);
        assert!((per[0].ap - pr).abs() < 1e-12);
        assert!((per[1].ap - pr).abs() < 1e-12);
        // GT0 is taken by then and GT1 is 7.5 m away, so 0.8 stays a miss at 3 m
        assert!((per[2].ap - pr).abs() < 1e-12);
        assert!((m - pr).abs() < 1e-12);
        // shifting it next to GT1 lets it claim GT1 before the 0.7 prediction
        let preds = vec![line(0.0), line(2.5), line(5.5)];
        let per = det_l(&preds, &[0.9, 0.8, 0.7], &gts, &[1.0, 2.0, 3.0]).1;
        assert!((per[1].ap - pr).abs() < 1e-12);
        assert_eq!(per[2].ap, 1.0);

        assert_eq!(det_l(&[], &[], &[], &[1.0]).0, 1.0);
        assert_eq!(det_l(&gts, &[1.0, 1.0], &[], &[1.0]).0, 0.0);
        assert_eq!(det_l(&[], &[], &gts, &[1.0]).0, 0.0);
    }

    #[test]
    fn top_ll_examples() {
        // Y junction: 0 feeds 1 and 2
        let gts = vec![
            Polyline::from_xy(&[[-20.0, 0.0], [0.0, 0.0]]).unwrap().resample(201),
            Polyline::from_xy(&[[0.0, 0.0], [20.0, 5.0]]).unwrap().resample(201),
            Polyline::from_xy(&[[0.0, 0.0], [20.0, -5.0]]).unwrap().resample(201),
        ];
        let gt_adj = vec![vec![0, 1, 1], vec![0, 0, 0], vec![0, 0, 0]];
        let s = [1.0; 3];
        let exact = Matrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert_eq!(top_ll(&gts, &s, &exact, &gts, &gt_adj, 1.0), 1.0);
        assert_eq!(top_ll(&gts, &s, &Matrix::zeros(3, 3), &gts, &gt_adj, 1.0), 0.0);

        let wrong_last = Matrix::from_rows(&[vec![0.0, 0.9, 0.8], vec![0.0, 0.0, 0.7], vec![0.0; 3]]).unwrap();
        assert_eq!(top_ll(&gts, &s, &wrong_last, &gts, &gt_adj, 1.0), 1.0);
        let wrong_mid = Matrix::from_rows(&[vec![0.0, 0.9, 0.7], vec![0.0, 0.0, 0.8], vec![0.0; 3]]).unwrap();
        assert!((top_ll(&gts, &s, &wrong_mid, &gts, &gt_adj, 1.0) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);

        let none = vec![vec![0u8; 3]; 3];
        assert_eq!(top_ll(&gts, &s, &Matrix::zeros(3, 3), &gts, &none, 1.0), 1.0);
        assert_eq!(top_ll(&gts, &s, &exact, &gts, &none, 1.0), 0.0);
        assert_eq!(top_ll(&[], &[], &Matrix::zeros(0, 0), &gts, &gt_adj, 1.0), 0.0);
    }

    #[test]
    fn mask_ap_examples() {
        let a = vec![true, true, false, false];
        let b = vec![false, false, true, true];
        let logit = |m: &Vec<bool>| m.iter().map(|&v| if v { 3.0 } else { -3.0 }).collect::<Vec<f64>>();
        assert_eq!(
            mask_ap(
                &[logit(&a), logit(&b)],
                &[1.0, 0.5],
                &[a.clone(), b.clone()],
                &[0.5, 0.75]
            )
            .0,
            1.0
        );
        assert_eq!(
            mask_ap(&[logit(&b)], &[1.0], std::slice::from_ref(&a), &[0.5, 0.75]).0,
            0.0
        );

        // pred0 covers GT0 plus one extra cell (IoU 2/3), pred1 equals GT1
        let g0 = vec![true, true, false, false, false, false];
        let g1 = vec![false, false, false, false, true, true];
        let p0 = vec![true, true, true, false, false, false];
        let (m, per) = mask_ap(&[logit(&p0), logit(&g1)], &[0.9, 0.8], &[g0, g1], &[0.5, 0.75]);
        assert_eq!(per[0].ap, 1.0);
        // at 0.75 only pred1 hits: FP then TP -> 0.5 recall at precision 0.5
        assert!((per[1].ap - 0.25).abs() < 1e-12);
        assert!((m - 0.625).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn det_l_depends_on_ranking_only(
            ys in proptest::collection::vec(-8.0f64..8.0, 1..6),
            scores in proptest::collection::vec(0.01f64..1.0, 6),
            scale in 0.1f64..10.0,
        ) {
            let gts: Vec<Polyline> = [-6.0, 0.0, 6.0].iter().map(|&y| line(y)).collect();
            let preds: Vec<Polyline> = ys.iter().map(|&y| line(y)).collect();
            let s = &scores[..preds.len()];
            let scaled: Vec<f64> = s.iter().map(|v| v * scale).collect();
            prop_assert_eq!(det_l(&preds, s, &gts, &[1.0, 2.0, 3.0]).0, det_l(&preds, &scaled, &gts, &[1.0, 2.0, 3.0]).0);
        }

        #[test]
        fn lower_scored_duplicate_never_helps(
            ys in proptest::collection::vec(-8.0f64..8.0, 1..6),
            scores in proptest::collection::vec(0.1f64..1.0, 6),
            pick in 0usize..6,
        ) {
            let gts: Vec<Polyline> = [-6.0, 0.0, 6.0].iter().map(|&y| line(y)).collect();
            let mut preds: Vec<Polyline> = ys.iter().map(|&y| line(y)).collect();
            let mut s = scores[..preds.len()].to_vec();
            let k = pick % preds.len();
            let before = det_l(&preds, &s, &gts, &[1.0, 2.0, 3.0]).1;
            preds.push(preds[k].clone());
            s.push(s[k] * 0.5);
            let after = det_l(&preds, &s, &gts, &[1.0, 2.0, 3.0]).1;
            for (a, b) in before.iter().zip(&after) {
                prop_assert!(b.ap <= a.ap + 1e-12);
            }
        }
    }
}
