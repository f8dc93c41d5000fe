//! Bipartite matching and the training objective.
//!
//! Real and virtual predictions are matched to ground truth of their own
//! category only. All probability inputs are clamped to `[ε, 1 − ε]` with
//! `ε = 1e-7` before a logarithm is taken.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::points_mask::{Axis, InstanceMask, MaskPointReadout};
use crate::raster::footprint;
use crate::scene::Scene;
use crate::tensor::{finite_diff_grad, softmax, GridSpec, Matrix};

pub const PROB_EPS: f64 = 1e-7;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const DICE_SMOOTH: f64 = 1.0;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Coefficients of the five loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub top: f64,
    pub cls: f64,
    pub det: f64,
    pub mask: f64,
    pub mp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            top: 5.0,
            cls: 1.5,
            det: 0.025,
            mask: 1.0,
            mp: 7.0,
        }
    }
}

pub fn focal_loss(p: f64, y: bool, alpha: f64, gamma: f64) -> f64 {
    let p = clamp_prob(p);
    if y {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// `d focal / dp` (zero where the clamp is active).
pub fn focal_grad(p: f64, y: bool, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    if y {
        let q = 1.0 - p;
        alpha * (gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p)
    } else {
        let q = 1.0 - p;
        -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * q.ln() - p.powf(gamma) / q)
    }
}

pub fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// `1 − (2·Σ p·g + s) / (Σ p + Σ g + s)`.
pub fn dice_loss(pred: &[f64], gt: &[f64]) -> f64 {
    let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    let denom = pred.iter().sum::<f64>() + gt.iter().sum::<f64>() + DICE_SMOOTH;
    1.0 - (2.0 * inter + DICE_SMOOTH) / denom
}

pub fn dice_grad(pred: &[f64], gt: &[f64]) -> Vec<f64> {
    let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    let denom = pred.iter().sum::<f64>() + gt.iter().sum::<f64>() + DICE_SMOOTH;
    let num = 2.0 * inter + DICE_SMOOTH;
    gt.iter().map(|g| -(2.0 * g * denom - num) / (denom * denom)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    L1,
    Bce,
}

/// Mean L1 or mean binary cross-entropy.
pub fn elementwise_loss(pred: &[f64], target: &[f64], kind: Elementwise) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let sum: f64 = match kind {
        Elementwise::L1 => pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum(),
        Elementwise::Bce => pred.iter().zip(target).map(|(&p, &t)| bce(p, t)).sum(),
    };
    sum / pred.len() as f64
}

pub fn elementwise_grad(pred: &[f64], target: &[f64], kind: Elementwise) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| match kind {
            Elementwise::L1 => (p - t).signum() / n,
            Elementwise::Bce => bce_grad(p, t) / n,
        })
        .collect()
}

/// Gradient of `Σ_r r·softmax(logits)_r` with respect to the logits:
/// `p_j · (j − c)`.
pub fn softargmax_grad(logits: &[f64]) -> Vec<f64> {
    let p = softmax(logits).expect("finite logits");
    let c: f64 = p.iter().enumerate().map(|(r, w)| r as f64 * w).sum();
    p.iter().enumerate().map(|(j, w)| w * (j as f64 - c)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTerm {
    Focal,
    Bce,
    L1,
    Dice,
    SoftArgmax,
}

impl GradTerm {
    pub const ALL: [GradTerm; 5] = [Self::Focal, Self::Bce, Self::L1, Self::Dice, Self::SoftArgmax];

    pub fn name(self) -> &'static str {
        match self {
            Self::Focal => "focal",
            Self::Bce => "bce",
            Self::L1 => "l1",
            Self::Dice => "dice",
            Self::SoftArgmax => "soft-argmax",
        }
    }

    /// A random evaluation point: probabilities in `[0.05, 0.95]` with binary
    /// labels, L1 targets 0.1 away from the input (no kink within the finite
    /// difference step) and soft-argmax logits in `[-3, 3]`.
    pub fn sample<R: Rng>(self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let n = 9;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        match self {
            Self::Focal | Self::Bce | Self::Dice => {
                let y = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
                (p, y)
            }
            Self::L1 => {
                let t = p
                    .iter()
                    .map(|v| v + if rng.random_bool(0.5) { 0.1 } else { -0.1 })
                    .collect();
                (p, t)
            }
            Self::SoftArgmax => ((0..8).map(|_| rng.random_range(-3.0..3.0)).collect(), Vec::new()),
        }
    }
}

/// Scalar value of `term` at `x`; `target` holds labels (focal, bce, dice),
/// regression targets (l1) and is ignored by the soft-argmax.
pub fn term_value(term: GradTerm, x: &[f64], target: &[f64]) -> f64 {
    match term {
        GradTerm::Focal => {
            x.iter()
                .zip(target)
                .map(|(&p, &t)| focal_loss(p, t >= 0.5, FOCAL_ALPHA, FOCAL_GAMMA))
                .sum::<f64>()
                / x.len() as f64
        }
        GradTerm::Bce => elementwise_loss(x, target, Elementwise::Bce),
        GradTerm::L1 => elementwise_loss(x, target, Elementwise::L1),
        GradTerm::Dice => dice_loss(x, target),
        GradTerm::SoftArgmax => softmax(x)
            .expect("finite logits")
            .iter()
            .enumerate()
            .map(|(r, w)| r as f64 * w)
            .sum(),
    }
}

pub fn term_grad(term: GradTerm, x: &[f64], target: &[f64]) -> Vec<f64> {
    match term {
        GradTerm::Focal => x
            .iter()
            .zip(target)
            .map(|(&p, &t)| focal_grad(p, t >= 0.5, FOCAL_ALPHA, FOCAL_GAMMA) / x.len() as f64)
            .collect(),
        GradTerm::Bce => elementwise_grad(x, target, Elementwise::Bce),
        GradTerm::L1 => elementwise_grad(x, target, Elementwise::L1),
        GradTerm::Dice => dice_grad(x, target),
        GradTerm::SoftArgmax => softargmax_grad(x),
    }
}

/// Largest relative deviation between the analytic gradient and central
/// finite differences, `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn analytic_grad_check(term: GradTerm, x: &[f64], target: &[f64]) -> f64 {
    let analytic = term_grad(term, x, target);
    let numeric = finite_diff_grad(|v| term_value(term, v, target), x, 1e-6);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// One-to-one pairing of predictions (rows) with ground truth (columns).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, ground truth)` sorted by prediction.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

impl Assignment {
    pub fn cost(&self, cost: &Matrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost.get(i, j)).sum()
    }

    pub fn gt_of(&self, pred: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == pred).map(|p| p.1)
    }
}

/// Shortest augmenting path on a square matrix. Returns the row → column
/// matching and feasible duals `u_i + v_j <= a_ij`, tight on the matching.
fn solve_square(a: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Minimum-cost matching of size `min(n, m)`. Among optimal matchings the
/// one whose pair list is lexicographically smallest is returned.
pub fn hungarian(cost: &Matrix) -> Assignment {
    let (n, m) = (cost.rows(), cost.cols());
    if n == 0 || m == 0 {
        return Assignment {
            pairs: Vec::new(),
            unmatched: (0..n).collect(),
        };
    }
    let s = n.max(m);
    let a: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| if i < n && j < m { cost.get(i, j) } else { 0.0 })
                .collect()
        })
        .collect();
    let (mut col_of, u, v) = solve_square(&a);
    let scale = 1.0 + a.iter().flatten().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-9 * scale;
    // every optimal matching is a perfect matching of the tight subgraph
    let tight: Vec<Vec<bool>> = (0..s)
        .map(|i| (0..s).map(|j| a[i][j] - u[i] - v[j] <= tol).collect())
        .collect();
    let mut row_of = vec![0; s];
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }

    let mut fixed = vec![false; s];
    for i in 0..n {
        for j in (0..s).filter(|&j| tight[i][j]) {
            if col_of[i] == j {
                break;
            }
            let r = row_of[j];
            if fixed[r] {
                continue;
            }
            // re-match r along an alternating path ending at i's current column
            let target = col_of[i];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; s];
            let mut seen = vec![false; s];
            seen[j] = true;
            let mut queue = VecDeque::from([r]);
            let mut end = None;
            'bfs: while let Some(row) = queue.pop_front() {
                for c in 0..s {
                    if !tight[row][c] || seen[c] {
                        continue;
                    }
                    seen[c] = true;
                    prev[c] = Some((row, c));
                    if c == target {
                        end = Some(c);
                        break 'bfs;
                    }
                    let next = row_of[c];
                    if !fixed[next] && next != i {
                        queue.push_back(next);
                    }
                }
            }
            let Some(mut c) = end else { continue };
            while let Some((row, col)) = prev[c] {
                let old = col_of[row];
                col_of[row] = col;
                row_of[col] = row;
                if row == r {
                    break;
                }
                c = old;
            }
            col_of[i] = j;
            row_of[j] = i;
            break;
        }
        fixed[i] = true;
    }

    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (i, &j) in col_of.iter().enumerate().take(n) {
        if j < m {
            pairs.push((i, j));
        } else {
            unmatched.push(i);
        }
    }
    Assignment { pairs, unmatched }
}

/// DETR-style classification cost, lower for confident predictions.
pub fn focal_matching_cost(score: f64) -> f64 {
    let p = clamp_prob(score);
    let pos = FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * -p.ln();
    let neg = (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * -(1.0 - p).ln();
    pos - neg
}

/// Mean absolute coordinate difference of two equally sized polylines.
pub fn points_l1(a: &Polyline, b: &Polyline) -> f64 {
    let (fa, fb) = (a.flatten(), b.flatten());
    elementwise_loss(&fa, &fb, Elementwise::L1)
}

pub fn matching_cost_matrix(points: &[&Polyline], scores: &[f64], gts: &[&Polyline], w: &LossWeights) -> Matrix {
    let mut cost = Matrix::zeros(points.len(), gts.len());
    let k = points.first().map_or(2, |p| p.len());
    let gts: Vec<Polyline> = gts.iter().map(|g| g.resample(k)).collect();
    for (i, p) in points.iter().enumerate() {
        let cls = w.cls * focal_matching_cost(scores[i]);
        for (j, g) in gts.iter().enumerate() {
            cost.set(i, j, cls + w.det * points_l1(p, g));
        }
    }
    cost
}

/// Matches one category of predictions to ground truth of the same category.
pub fn match_instances(points: &[&Polyline], scores: &[f64], gts: &[&Polyline], w: &LossWeights) -> Assignment {
    if gts.is_empty() {
        return Assignment {
            pairs: Vec::new(),
            unmatched: (0..points.len()).collect(),
        };
    }
    hungarian(&matching_cost_matrix(points, scores, gts, w))
}

/// Everything the objective reads from one decoder slot.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedInstance {
    /// Refined points for real slots, decoder points for virtual slots.
    pub points: Polyline,
    pub score: f64,
    pub is_real: bool,
    pub mask: Option<InstanceMask>,
    pub columns: Option<MaskPointReadout>,
    pub rows: Option<MaskPointReadout>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub top: f64,
    pub cls: f64,
    pub det: f64,
    pub mask: f64,
    pub mp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.top * self.top + w.cls * self.cls + w.det * self.det + w.mask * self.mask + w.mp * self.mp
    }
}

/// Real and virtual assignments expressed in global indices: prediction slot
/// and scene centerline index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub real: Assignment,
    pub virt: Assignment,
}

impl Matching {
    pub fn gt_of(&self, pred: usize) -> Option<usize> {
        self.real.gt_of(pred).or_else(|| self.virt.gt_of(pred))
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.real.pairs.iter().chain(&self.virt.pairs)
    }
}

/// Matches each category separately and lifts the result to global indices.
pub fn match_scene(preds: &[PredictedInstance], scene: &Scene, w: &LossWeights) -> Matching {
    let category = |real: bool| {
        let pi: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].is_real == real).collect();
        let gi = scene.indices(real);
        let points: Vec<&Polyline> = pi.iter().map(|&i| &preds[i].points).collect();
        let scores: Vec<f64> = pi.iter().map(|&i| preds[i].score).collect();
        let gts: Vec<&Polyline> = gi.iter().map(|&j| &scene.centerlines[j]).collect();
        let a = match_instances(&points, &scores, &gts, w);
        Assignment {
            pairs: a.pairs.iter().map(|&(p, g)| (pi[p], gi[g])).collect(),
            unmatched: a.unmatched.iter().map(|&p| pi[p]).collect(),
        }
    };
    let real = category(true);
    let virt = category(false);
    for &(p, g) in &real.pairs {
        assert!(
            virt.pairs.iter().all(|&(q, h)| q != p && h != g),
            "real and virtual matchings overlap"
        );
    }
    Matching { real, virt }
}

/// Supervision mask of a centerline: supercover cells dilated by one cell.
pub fn gt_mask(spec: &GridSpec, line: &Polyline) -> Vec<f64> {
    footprint(spec, line, 1)
        .into_iter()
        .map(|b| if b { 1.0 } else { 0.0 })
        .collect()
}

/// Per-point targets of a mask readout.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutTargets {
    /// Target coordinate where the centerline crosses the column (row).
    pub coords: Vec<Option<f64>>,
    pub direction: bool,
}

/// Columns axis: for every column whose centre `x` lies within the polyline's
/// `x` extent, the fractional row of the first crossing. Rows axis is the
/// transpose. Direction is `true` when the polyline starts at a smaller
/// column (row) than it ends.
pub fn readout_targets(spec: &GridSpec, line: &Polyline, axis: Axis) -> ReadoutTargets {
    let pts = line.points();
    let (along, across) = match axis {
        Axis::Columns => (0, 1),
        Axis::Rows => (1, 0),
    };
    let n = axis.len(spec.height, spec.width);
    let limit = match axis {
        Axis::Columns => spec.height,
        Axis::Rows => spec.width,
    } as f64
        - 1.0;
    let coords = (0..n)
        .map(|idx| {
            let (cx, cy) = spec.to_metric(idx as f64, idx as f64);
            let t = if along == 0 { cx } else { cy };
            pts.windows(2).find_map(|w| {
                let (a, b) = (w[0][along], w[1][along]);
                if t < a.min(b) || t > a.max(b) {
                    return None;
                }
                let f = if b == a { 0.0 } else { (t - a) / (b - a) };
                let v = w[0][across] + f * (w[1][across] - w[0][across]);
                let (r, c) = if along == 0 {
                    spec.to_cell(t, v)
                } else {
                    spec.to_cell(v, t)
                };
                Some(if along == 0 { r } else { c }.clamp(0.0, limit))
            })
        })
        .collect();
    ReadoutTargets {
        coords,
        direction: pts[0][along] < pts[pts.len() - 1][along],
    }
}

/// L1 on covered coordinates + bce on existence + focal on direction.
pub fn readout_loss(r: &MaskPointReadout, t: &ReadoutTargets) -> f64 {
    let (pred, target): (Vec<f64>, Vec<f64>) = r
        .coords
        .iter()
        .zip(&t.coords)
        .filter_map(|(&c, g)| g.map(|g| (c, g)))
        .unzip();
    let exists: Vec<f64> = t.coords.iter().map(|g| if g.is_some() { 1.0 } else { 0.0 }).collect();
    elementwise_loss(&pred, &target, Elementwise::L1)
        + elementwise_loss(&r.existence, &exists, Elementwise::Bce)
        + focal_loss(r.direction, t.direction, FOCAL_ALPHA, FOCAL_GAMMA)
}

/// Mask bce (mean over cells) + dice.
pub fn mask_loss(m: &InstanceMask, gt: &[f64]) -> f64 {
    let p = m.probabilities();
    elementwise_loss(&p, gt, Elementwise::Bce) + dice_loss(&p, gt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub breakdown: LossBreakdown,
    pub matching: Matching,
}

/// The full objective. Terms with a zero coefficient are skipped and do not
/// require their outputs.
pub fn total_loss(
    preds: &[PredictedInstance],
    adjacency: &Matrix,
    scene: &Scene,
    grid: &GridSpec,
    w: &LossWeights,
) -> Result<LossReport> {
    let n = preds.len();
    if adjacency.rows() != n || adjacency.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: adjacency.rows(),
            context: "predicted adjacency",
        });
    }
    let matching = match_scene(preds, scene, w);
    let mut gt_of = vec![None; n];
    for &(p, g) in matching.pairs() {
        gt_of[p] = Some(g);
    }
    let matched: Vec<(usize, usize)> = matching.pairs().copied().collect();
    let mean = |v: f64, count: usize| if count == 0 { 0.0 } else { v / count as f64 };

    let mut top = 0.0;
    if w.top != 0.0 && n > 0 {
        for i in 0..n {
            for j in 0..n {
                let y = matches!((gt_of[i], gt_of[j]), (Some(a), Some(b)) if scene.edge(a, b));
                top += focal_loss(adjacency.get(i, j), y, FOCAL_ALPHA, FOCAL_GAMMA);
            }
        }
        top /= (n * n) as f64;
    }

    let cls = mean(
        (0..n)
            .map(|i| focal_loss(preds[i].score, gt_of[i].is_some(), FOCAL_ALPHA, FOCAL_GAMMA))
            .sum(),
        n,
    );

    let det = mean(
        matched
            .iter()
            .map(|&(p, g)| points_l1(&preds[p].points, &scene.centerlines[g].resample(preds[p].points.len())))
            .sum(),
        matched.len(),
    );

    let mut mask = 0.0;
    if w.mask != 0.0 {
        for &(p, g) in &matched {
            let m = preds[p].mask.as_ref().ok_or(Error::MissingOutput("instance mask"))?;
            if m.height != grid.height || m.width != grid.width {
                return Err(Error::DimensionMismatch {
                    expected: grid.cells(),
                    actual: m.logits.len(),
                    context: "instance mask size",
                });
            }
            mask += mask_loss(m, &gt_mask(grid, &scene.centerlines[g]));
        }
        mask = mean(mask, matched.len());
    }

    let mut mp = 0.0;
    let real_pairs = &matching.real.pairs;
    if w.mp != 0.0 {
        for &(p, g) in real_pairs {
            let line = &scene.centerlines[g];
            for (axis, r) in [(Axis::Columns, &preds[p].columns), (Axis::Rows, &preds[p].rows)] {
                let r = r.as_ref().ok_or(Error::MissingOutput("mask point readout"))?;
                if r.axis != axis || r.coords.len() != axis.len(grid.height, grid.width) {
                    return Err(Error::DimensionMismatch {
                        expected: axis.len(grid.height, grid.width),
                        actual: r.coords.len(),
                        context: "mask point readout length",
                    });
                }
                mp += readout_loss(r, &readout_targets(grid, line, axis));
            }
        }
        mp = mean(mp, real_pairs.len());
    }

    let mut breakdown = LossBreakdown {
        top,
        cls,
        det,
        mask,
        mp,
        total: 0.0,
    };
    breakdown.total = breakdown.weighted_total(w);
    Ok(LossReport { breakdown, matching })
}

/// Outputs that reproduce ground-truth centerline `line` exactly, with mask
/// logits of magnitude `sharpness`.
pub fn oracle_instance(line: &Polyline, is_real: bool, grid: &GridSpec, k: usize, sharpness: f64) -> PredictedInstance {
    let logits = gt_mask(grid, line)
        .iter()
        .map(|&g| if g > 0.5 { sharpness } else { -sharpness })
        .collect();
    let readout = |axis| {
        let t = readout_targets(grid, line, axis);
        MaskPointReadout {
            axis,
            coords: t.coords.iter().map(|c| c.unwrap_or(0.0)).collect(),
            existence: t.coords.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }).collect(),
            direction: if t.direction { 1.0 } else { 0.0 },
        }
    };
    PredictedInstance {
        points: line.resample(k),
        score: 1.0,
        is_real,
        mask: Some(InstanceMask::new(grid.height, grid.width, logits).expect("grid-sized mask")),
        columns: is_real.then(|| readout(Axis::Columns)),
        rows: is_real.then(|| readout(Axis::Rows)),
    }
}
