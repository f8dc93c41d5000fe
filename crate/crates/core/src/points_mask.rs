//! Points-guided instance masks and their fusion back into the regressed
//! centerline points.
//!
//! A mask query is built from the decoder query plus an encoding of the
//! regressed points; its dot product with the BEV features gives the instance
//! mask. Each mask is read out twice (one soft-argmax point per column and
//! one per row) together with per-point existence and a direction
//! probability. The readout with more valid points is converted to metric
//! space, cleaned of outliers, resampled to `K` points and averaged with the
//! regressed points.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{filter_outliers, resample_points2, Point2, Point3, PointSet2, Polyline};
use crate::tensor::{dot, sigmoid, softmax, BevGrid, GridSpec, MlpWeights};

/// Existence probability above which a mask point counts as valid.
pub const VALIDITY_THRESHOLD: f64 = 0.5;

/// Mask-query encoder: shared per-point MLP, a fusion MLP over the
/// concatenated point encodings, and a query MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskQueryEncoder {
    /// `3 → C`, applied to every point.
    pub point_mlp: MlpWeights,
    /// `K·C → C`.
    pub fuse_mlp: MlpWeights,
    /// `C → C`.
    pub query_mlp: MlpWeights,
}

impl MaskQueryEncoder {
    pub fn random<R: Rng>(channels: usize, k: usize, rng: &mut R) -> Self {
        Self {
            point_mlp: MlpWeights::random(&[3, channels], rng),
            fuse_mlp: MlpWeights::random(&[k * channels, channels], rng),
            query_mlp: MlpWeights::random(&[channels, channels], rng),
        }
    }

    pub fn points(&self) -> usize {
        self.fuse_mlp.input_dim() / self.point_mlp.output_dim().max(1)
    }
}

/// `Q'_i = query_mlp(q) + fuse_mlp(concat(point_mlp(p_k)))`. With
/// `positional` off the point branch is skipped, giving a position-free
/// mask query.
pub fn encode_mask_query(q: &[f64], points: &[Point3], enc: &MaskQueryEncoder, positional: bool) -> Result<Vec<f64>> {
    let mut out = enc.query_mlp.forward(q)?;
    if positional {
        let k = enc.points();
        if points.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: points.len(),
                context: "mask query points",
            });
        }
        let mut concat = Vec::with_capacity(enc.fuse_mlp.input_dim());
        for p in points {
            concat.extend(enc.point_mlp.forward(p)?);
        }
        let f = enc.fuse_mlp.forward(&concat)?;
        if f.len() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                actual: f.len(),
                context: "positional embedding",
            });
        }
        for (o, v) in out.iter_mut().zip(f) {
            *o += v;
        }
    }
    Ok(out)
}

/// Per-instance `H × W` mask logits, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMask {
    pub height: usize,
    pub width: usize,
    pub logits: Vec<f64>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                actual: logits.len(),
                context: "instance mask",
            });
        }
        Ok(Self { height, width, logits })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.logits[row * self.width + col]
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }

    /// Cells with `sigmoid(logit) >= 0.5`.
    pub fn binarize(&self) -> Vec<bool> {
        self.logits.iter().map(|&l| l >= 0.0).collect()
    }
}

/// Dot-product mask head: `M_i(cell) = B(cell) · Q'_i`.
pub fn generate_mask(b: &BevGrid, q_prime: &[f64]) -> Result<InstanceMask> {
    if q_prime.len() != b.channels {
        return Err(Error::DimensionMismatch {
            expected: b.channels,
            actual: q_prime.len(),
            context: "mask query channels",
        });
    }
    let logits = (0..b.spec.cells()).map(|idx| dot(b.flat_cell(idx), q_prime)).collect();
    InstanceMask::new(b.height(), b.width(), logits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// One point per column; coordinates are row indices.
    Columns,
    /// One point per row; coordinates are column indices.
    Rows,
}

impl Axis {
    /// Number of points the readout produces.
    pub fn len(self, height: usize, width: usize) -> usize {
        match self {
            Axis::Columns => width,
            Axis::Rows => height,
        }
    }
}

/// Soft-argmax coordinate along each column (or row) of the mask.
pub fn sample_mask_points(m: &InstanceMask, axis: Axis) -> Vec<f64> {
    let (h, w) = (m.height, m.width);
    match axis {
        Axis::Columns => (0..w)
            .map(|j| {
                let col: Vec<f64> = (0..h).map(|r| m.at(r, j)).collect();
                soft_argmax(&col)
            })
            .collect(),
        Axis::Rows => (0..h).map(|i| soft_argmax(&m.logits[i * w..(i + 1) * w])).collect(),
    }
}

/// `Σ_r r · softmax(logits)_r`.
pub fn soft_argmax(logits: &[f64]) -> f64 {
    softmax(logits)
        .expect("finite logits")
        .iter()
        .enumerate()
        .map(|(r, p)| r as f64 * p)
        .sum()
}

/// `sigmoid(φ1(flatten(M)))`, one probability per column (or row).
pub fn predict_existence(m: &InstanceMask, phi1: &MlpWeights, axis: Axis) -> Result<Vec<f64>> {
    let expected = axis.len(m.height, m.width);
    if phi1.output_dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: phi1.output_dim(),
            context: "existence head output",
        });
    }
    Ok(phi1.forward(&m.logits)?.into_iter().map(sigmoid).collect())
}

/// `sigmoid(φ2(Q'))`. Values `>= 0.5` mean the points run towards
/// increasing column (or row) index.
pub fn predict_direction(q_prime: &[f64], phi2: &MlpWeights) -> Result<f64> {
    let out = phi2.forward(q_prime)?;
    if out.len() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: out.len(),
            context: "direction head output",
        });
    }
    Ok(sigmoid(out[0]))
}

/// Existence and direction heads for one readout axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutHeads {
    /// `H·W → W` (columns) or `H·W → H` (rows).
    pub existence: MlpWeights,
    /// `C → 1`.
    pub direction: MlpWeights,
}

impl ReadoutHeads {
    pub fn random<R: Rng>(cells: usize, points: usize, channels: usize, rng: &mut R) -> Self {
        let mut existence = MlpWeights::random(&[cells, points], rng);
        // the flattened mask is long; keep the initial logits moderate
        let scale = 1.0 / (cells as f64).sqrt();
        for w in existence.layers[0].weight.data_mut() {
            *w *= scale;
        }
        Self {
            existence,
            direction: MlpWeights::random(&[channels, 1], rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPointReadout {
    pub axis: Axis,
    /// Fractional row (columns axis) or column (rows axis) index per point.
    pub coords: Vec<f64>,
    pub existence: Vec<f64>,
    pub direction: f64,
}

impl MaskPointReadout {
    pub fn valid_count(&self, threshold: f64) -> usize {
        self.existence.iter().filter(|&&p| p > threshold).count()
    }
}

pub fn read_mask(m: &InstanceMask, q_prime: &[f64], heads: &ReadoutHeads, axis: Axis) -> Result<MaskPointReadout> {
    Ok(MaskPointReadout {
        axis,
        coords: sample_mask_points(m, axis),
        existence: predict_existence(m, &heads.existence, axis)?,
        direction: predict_direction(q_prime, &heads.direction)?,
    })
}

/// Picks the readout with more points above `validity_threshold`; ties go to
/// the column readout.
pub fn select_point_set<'a>(
    col: &'a MaskPointReadout,
    row: &'a MaskPointReadout,
    validity_threshold: f64,
) -> &'a MaskPointReadout {
    if row.valid_count(validity_threshold) > col.valid_count(validity_threshold) {
        row
    } else {
        col
    }
}

/// Metric polyline traced by the readout: valid points in driving order,
/// outliers removed, resampled to `k`. `None` when fewer than two points
/// survive.
pub fn mask_polyline(
    readout: &MaskPointReadout,
    grid: &GridSpec,
    k: usize,
    outlier_threshold: f64,
) -> Option<Vec<Point2>> {
    let mut pts: Vec<Point2> = readout
        .coords
        .iter()
        .zip(&readout.existence)
        .enumerate()
        .filter(|(_, (_, &p))| p > VALIDITY_THRESHOLD)
        .map(|(idx, (&c, _))| {
            let (x, y) = match readout.axis {
                Axis::Columns => grid.to_metric(c, idx as f64),
                Axis::Rows => grid.to_metric(idx as f64, c),
            };
            [x, y]
        })
        .collect();
    if readout.direction < 0.5 {
        pts.reverse();
    }
    let kept = filter_outliers(&PointSet2::all_valid(pts), outlier_threshold).valid_points();
    if kept.len() < 2 {
        return None;
    }
    Some(resample_points2(&kept, k))
}

/// Refines a regressed centerline with a mask readout. The refined `(x, y)`
/// is the index-wise mean of the resampled mask points and the regressed
/// points; `z` is taken from the regressed points. Degenerate readouts return
/// `detected` unchanged.
pub fn fuse_points(
    detected: &Polyline,
    readout: &MaskPointReadout,
    grid: &GridSpec,
    k: usize,
    outlier_threshold: f64,
) -> Result<Polyline> {
    if detected.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: detected.len(),
            context: "detected points",
        });
    }
    let Some(mask_pts) = mask_polyline(readout, grid, k, outlier_threshold) else {
        return Ok(detected.clone());
    };
    let refined = detected
        .points()
        .iter()
        .zip(&mask_pts)
        .map(|(d, m)| [(d[0] + m[0]) / 2.0, (d[1] + m[1]) / 2.0, d[2]])
        .collect();
    Polyline::new(refined)
}
