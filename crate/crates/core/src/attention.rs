//! Attention kernels shared by the SD-map fusion decoder and the centerline
//! decoder.
//!
//! Every `*_raw` function returns the pre-residual contribution; the plain
//! variants add the residual and layer-normalise each query row.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{bilinear_accumulate, dot, layer_norm_rows, sigmoid, softmax, Activation, BevGrid, Linear, Matrix};

/// Per-query additive attention mask over the `H·W` BEV cells, entries `0`
/// (attend) or `-inf` (blocked).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    values: Matrix,
}

impl AttentionMask {
    /// Mask that lets every query attend everywhere.
    pub fn open(queries: usize, cells: usize) -> Self {
        Self {
            values: Matrix::zeros(queries, cells),
        }
    }

    pub fn from_matrix(values: Matrix) -> Result<Self> {
        if values.data().iter().any(|&v| v != 0.0 && v != f64::NEG_INFINITY) {
            return Err(Error::Config("attention mask entries must be 0 or -inf".into()));
        }
        Ok(Self { values })
    }

    pub fn queries(&self) -> usize {
        self.values.rows()
    }

    pub fn cells(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn is_open(&self, i: usize, cell: usize) -> bool {
        self.values.get(i, cell) == 0.0
    }
}

/// Thresholds per-query mask logits: a cell is open when
/// `sigmoid(logit) >= threshold`. Rows that would be fully blocked fall back
/// to attending everywhere.
pub fn attention_mask_from_instance_masks(masks: &[Vec<f64>], threshold: f64) -> AttentionMask {
    let cells = masks.first().map_or(0, Vec::len);
    let mut values = Matrix::zeros(masks.len(), cells);
    for (i, logits) in masks.iter().enumerate() {
        let row = values.row_mut(i);
        let mut any_open = false;
        for (v, &l) in row.iter_mut().zip(logits) {
            if sigmoid(l) >= threshold {
                any_open = true;
            } else {
                *v = f64::NEG_INFINITY;
            }
        }
        if !any_open {
            row.fill(0.0);
        }
    }
    AttentionMask { values }
}

fn check_channels(q: &Matrix, b: &BevGrid) -> Result<()> {
    if q.cols() != b.channels {
        return Err(Error::DimensionMismatch {
            expected: b.channels,
            actual: q.cols(),
            context: "query channels vs bev channels",
        });
    }
    Ok(())
}

fn weighted_cell_sum(b: &BevGrid, weights: &[f64], out: &mut [f64]) {
    for (idx, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(b.flat_cell(idx)) {
            *o += w * v;
        }
    }
}

/// `softmax(M + Q Bᵀ) B` row by row.
pub fn masked_cross_attention_raw(q: &Matrix, b: &BevGrid, m: &AttentionMask) -> Result<Matrix> {
    check_channels(q, b)?;
    let cells = b.spec.cells();
    if m.queries() != q.rows() || m.cells() != cells {
        return Err(Error::DimensionMismatch {
            expected: q.rows() * cells,
            actual: m.queries() * m.cells(),
            context: "attention mask shape",
        });
    }
    let mut out = Matrix::zeros(q.rows(), q.cols());
    let mut scores = vec![0.0; cells];
    for i in 0..q.rows() {
        let qi = q.row(i);
        let mask = m.row(i);
        for (idx, s) in scores.iter_mut().enumerate() {
            *s = if mask[idx] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                mask[idx] + dot(qi, b.flat_cell(idx))
            };
        }
        let attn = softmax(&scores)?;
        weighted_cell_sum(b, &attn, out.row_mut(i));
    }
    Ok(out)
}

/// Masked cross-attention followed by residual add and layer normalisation.
pub fn masked_cross_attention(q: &Matrix, b: &BevGrid, m: &AttentionMask) -> Result<Matrix> {
    let attn = masked_cross_attention_raw(q, b, m)?;
    residual_norm(q, &attn)
}

/// Unmasked `softmax(Q Bᵀ) B`, the reference the masked form degenerates to.
pub fn cross_attention_raw(q: &Matrix, b: &BevGrid) -> Result<Matrix> {
    check_channels(q, b)?;
    let mut out = Matrix::zeros(q.rows(), q.cols());
    for i in 0..q.rows() {
        let scores: Vec<f64> = (0..b.spec.cells()).map(|idx| dot(q.row(i), b.flat_cell(idx))).collect();
        let attn = softmax(&scores)?;
        weighted_cell_sum(b, &attn, out.row_mut(i));
    }
    Ok(out)
}

/// `LN(x + delta)` per row.
pub fn residual_norm(x: &Matrix, delta: &Matrix) -> Result<Matrix> {
    if x.rows() != delta.rows() || x.cols() != delta.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.rows() * x.cols(),
            actual: delta.rows() * delta.cols(),
            context: "residual",
        });
    }
    let mut out = x.clone();
    for (o, d) in out.data_mut().iter_mut().zip(delta.data()) {
        *o += d;
    }
    layer_norm_rows(&mut out);
    Ok(out)
}

/// Row-stochastic self-attention weights over `[Q_r; Q_v]`, scaled by
/// `1/√C`. With `separate` set, real rows are blocked from virtual columns;
/// otherwise every row attends to every query.
pub fn rvs_attention_weights(qr: &Matrix, qv: &Matrix, separate: bool) -> Result<Matrix> {
    let all = qr.vstack(qv)?;
    let n_real = qr.rows();
    let n = all.rows();
    let scale = 1.0 / (all.cols() as f64).sqrt();
    let mut weights = Matrix::zeros(n, n);
    for i in 0..n {
        let cols = if separate && i < n_real { n_real } else { n };
        let scores: Vec<f64> = (0..n)
            .map(|j| {
                if j < cols {
                    dot(all.row(i), all.row(j)) * scale
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        weights.row_mut(i).copy_from_slice(&softmax(&scores)?);
    }
    Ok(weights)
}

/// Real–virtual separated self-attention. Returns the updated real and
/// virtual queries after residual add and layer normalisation.
pub fn rvs_self_attention(qr: &Matrix, qv: &Matrix, separate: bool) -> Result<(Matrix, Matrix)> {
    let all = qr.vstack(qv)?;
    let weights = rvs_attention_weights(qr, qv, separate)?;
    let mut attended = Matrix::zeros(all.rows(), all.cols());
    for i in 0..all.rows() {
        let out = attended.row_mut(i);
        for (j, &w) in weights.row(i).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(all.row(j)) {
                *o += w * v;
            }
        }
    }
    let updated = residual_norm(&all, &attended)?;
    let n_real = qr.rows();
    Ok((
        updated.slice_rows(0, n_real),
        updated.slice_rows(n_real, updated.rows()),
    ))
}

/// Learned projections of one multi-head deformable attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformableAttnWeights {
    /// `C → C`, applied to every grid cell before sampling.
    pub value: Linear,
    /// `C → heads·points·2` sampling offsets, `(row, col)` in cells.
    pub offsets: Linear,
    /// `C → heads·points` attention logits.
    pub attention: Linear,
    /// `C × C` output projection, bias-free so out-of-grid samples give zero.
    pub output: Matrix,
    pub heads: usize,
    pub points: usize,
}

impl DeformableAttnWeights {
    pub fn zeros(channels: usize, heads: usize, points: usize) -> Self {
        Self {
            value: Linear::zeros(channels, channels, Activation::None),
            offsets: Linear::zeros(channels, heads * points * 2, Activation::None),
            attention: Linear::zeros(channels, heads * points, Activation::None),
            output: Matrix::zeros(channels, channels),
            heads,
            points,
        }
    }

    /// Random projections; offsets start small so samples stay near their
    /// reference points.
    pub fn random<R: Rng>(channels: usize, heads: usize, points: usize, rng: &mut R) -> Self {
        let mut offsets = Linear::random(channels, heads * points * 2, Activation::None, rng);
        for w in offsets.weight.data_mut() {
            *w *= 0.5;
        }
        Self {
            value: Linear::random(channels, channels, Activation::None, rng),
            offsets,
            attention: Linear::random(channels, heads * points, Activation::None, rng),
            output: Matrix::random(channels, channels, rng),
            heads,
            points,
        }
    }

    pub fn channels(&self) -> usize {
        self.output.rows()
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if self.heads == 0 || !channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{channels} channels not divisible into {} heads",
                self.heads
            )));
        }
        let expect = [
            (self.value.input_dim(), channels, "deformable value in"),
            (self.value.output_dim(), channels, "deformable value out"),
            (
                self.offsets.output_dim(),
                self.heads * self.points * 2,
                "deformable offsets",
            ),
            (
                self.attention.output_dim(),
                self.heads * self.points,
                "deformable attention",
            ),
            (self.output.cols(), channels, "deformable output"),
        ];
        for (actual, expected, context) in expect {
            if actual != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual,
                    context,
                });
            }
        }
        Ok(())
    }
}

/// Applies the value projection to every cell of `b`.
pub fn project_grid(b: &BevGrid, value: &Linear) -> Result<BevGrid> {
    let mut data = Vec::with_capacity(b.data().len());
    for idx in 0..b.spec.cells() {
        data.extend(value.forward(b.flat_cell(idx))?);
    }
    BevGrid::from_data(b.spec, value.output_dim(), data)
}

/// Reference point used by sampling point `p` of `points`, spreading the
/// sampling points evenly over the query's reference list.
fn anchor_index(p: usize, points: usize, refs: usize) -> usize {
    if refs <= 1 {
        0
    } else if points <= 1 {
        refs / 2
    } else {
        ((p * (refs - 1)) as f64 / (points - 1) as f64).round() as usize
    }
}

/// Deformable attention contribution (after the output projection, before
/// the residual). `values` must already be value-projected; `refs[i]` lists
/// the fractional `(row, col)` reference points of query `i`.
pub fn deformable_cross_attention_raw(
    q: &Matrix,
    values: &BevGrid,
    refs: &[Vec<(f64, f64)>],
    w: &DeformableAttnWeights,
) -> Result<Matrix> {
    let c = q.cols();
    w.validate(c)?;
    if values.channels != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            actual: values.channels,
            context: "deformable value grid",
        });
    }
    if refs.len() != q.rows() || refs.iter().any(Vec::is_empty) {
        return Err(Error::DimensionMismatch {
            expected: q.rows(),
            actual: refs.len(),
            context: "deformable reference points",
        });
    }
    let head_dim = c / w.heads;
    let mut out = Matrix::zeros(q.rows(), c);
    let mut sampled = vec![0.0; c];
    let mut gathered = vec![0.0; c];
    for i in 0..q.rows() {
        let qi = q.row(i);
        let offsets = w.offsets.forward(qi)?;
        let logits = w.attention.forward(qi)?;
        gathered.fill(0.0);
        for h in 0..w.heads {
            let attn = softmax(&logits[h * w.points..(h + 1) * w.points])?;
            for (p, a) in attn.iter().enumerate() {
                let (r0, c0) = refs[i][anchor_index(p, w.points, refs[i].len())];
                let o = 2 * (h * w.points + p);
                sampled.fill(0.0);
                bilinear_accumulate(values, r0 + offsets[o], c0 + offsets[o + 1], 1.0, &mut sampled);
                for ch in h * head_dim..(h + 1) * head_dim {
                    gathered[ch] += a * sampled[ch];
                }
            }
        }
        out.row_mut(i).copy_from_slice(&w.output.matvec(&gathered)?);
    }
    Ok(out)
}

/// Deformable cross-attention from the queries into `b`, with residual add
/// and layer normalisation.
pub fn deformable_cross_attention(
    q: &Matrix,
    b: &BevGrid,
    refs: &[Vec<(f64, f64)>],
    w: &DeformableAttnWeights,
) -> Result<Matrix> {
    check_channels(q, b)?;
    let values = project_grid(b, &w.value)?;
    let attn = deformable_cross_attention_raw(q, &values, refs, w)?;
    residual_norm(q, &attn)
}

/// Two-layer position-wise feed-forward block.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            up: Linear::zeros(channels, hidden, Activation::Relu),
            down: Linear::zeros(hidden, channels, Activation::None),
        }
    }

    pub fn random<R: Rng>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::random(channels, hidden, Activation::Relu, rng),
            down: Linear::random(hidden, channels, Activation::None, rng),
        }
    }

    pub fn forward_raw(&self, q: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(q.rows(), self.down.output_dim());
        for i in 0..q.rows() {
            let h = self.up.forward(q.row(i))?;
            out.row_mut(i).copy_from_slice(&self.down.forward(&h)?);
        }
        Ok(out)
    }

    pub fn forward(&self, q: &Matrix) -> Result<Matrix> {
        residual_norm(q, &self.forward_raw(q)?)
    }
}
