//! Hybrid-attention centerline decoder.
//!
//! Each layer runs masked cross-attention over the BEV cells, deformable
//! cross-attention around the current reference points, real/virtual
//! separated self-attention and a feed-forward block. A shared points head
//! and score head read the queries out after every layer; only the last
//! layer's readout is exported, the earlier ones seed the next layer's
//! attention mask and reference points.

use rand::Rng;

use crate::attention::{
    attention_mask_from_instance_masks, deformable_cross_attention, masked_cross_attention, rvs_self_attention,
    AttentionMask, DeformableAttnWeights, FeedForward,
};
use crate::error::{Error, Result};
use crate::geometry::{Point3, Polyline};
use crate::points_mask::{encode_mask_query, generate_mask, MaskQueryEncoder};
use crate::tensor::{sigmoid, BevGrid, GridSpec, Matrix, MlpWeights};

/// Metric box that normalised head outputs are scaled into.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRange {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl MetricRange {
    pub fn from_grid(spec: &GridSpec, z: (f64, f64)) -> Self {
        Self {
            x: (spec.x_min, spec.x_max()),
            y: (spec.y_min, spec.y_max()),
            z,
        }
    }

    fn axes(&self) -> [(f64, f64); 3] {
        [self.x, self.y, self.z]
    }

    /// Maps `[0, 1]³` onto the box.
    pub fn denormalize(&self, u: [f64; 3]) -> Point3 {
        let a = self.axes();
        [0, 1, 2].map(|i| a[i].0 + u[i] * (a[i].1 - a[i].0))
    }

    /// Maps a metric point into `[0, 1]³` (unclamped).
    pub fn normalize(&self, p: &Point3) -> [f64; 3] {
        let a = self.axes();
        [0, 1, 2].map(|i| (p[i] - a[i].0) / (a[i].1 - a[i].0))
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let a = self.axes();
        (0..3).all(|i| p[i] >= a[i].0 && p[i] <= a[i].1)
    }
}

/// Learnable instance queries, split into real and virtual pools.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub real: Matrix,
    pub virt: Matrix,
}

impl QuerySet {
    pub fn random<R: Rng>(n_real: usize, n_virtual: usize, channels: usize, rng: &mut R) -> Self {
        let mut draw = |n: usize| {
            Matrix::from_vec(
                n,
                channels,
                (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let real = draw(n_real);
        let virt = draw(n_virtual);
        Self { real, virt }
    }

    pub fn n_real(&self) -> usize {
        self.real.rows()
    }

    pub fn n_virtual(&self) -> usize {
        self.virt.rows()
    }

    pub fn len(&self) -> usize {
        self.n_real() + self.n_virtual()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.real.cols().max(self.virt.cols())
    }

    pub fn stacked(&self) -> Matrix {
        self.real.vstack(&self.virt).expect("real and virtual queries share C")
    }

    pub fn split(all: &Matrix, n_real: usize) -> Self {
        Self {
            real: all.slice_rows(0, n_real),
            virt: all.slice_rows(n_real, all.rows()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerWeights {
    pub deform: DeformableAttnWeights,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights {
    pub queries: QuerySet,
    /// Normalised `(x, y)` initial reference point per query, `N_L × 2`.
    pub init_refs: Matrix,
    pub layers: Vec<DecoderLayerWeights>,
    /// `C → hidden → K·3`, outputs squashed by a sigmoid.
    pub points_head: MlpWeights,
    /// `C → hidden → 1`.
    pub score_head: MlpWeights,
}

/// Shape of a decoder, used to build weights.
#[derive(Clone, Copy, Debug)]
pub struct DecoderDims {
    pub n_real: usize,
    pub n_virtual: usize,
    pub channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub sampling_points: usize,
    pub k: usize,
}

impl DecoderWeights {
    pub fn random<R: Rng>(d: &DecoderDims, rng: &mut R) -> Self {
        let queries = QuerySet::random(d.n_real, d.n_virtual, d.channels, rng);
        let n = d.n_real + d.n_virtual;
        let init_refs = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.random_range(0.1..0.9)).collect()).unwrap();
        let layers = (0..d.layers)
            .map(|_| DecoderLayerWeights {
                deform: DeformableAttnWeights::random(d.channels, d.heads, d.sampling_points, rng),
                ffn: FeedForward::random(d.channels, d.hidden, rng),
            })
            .collect();
        Self {
            queries,
            init_refs,
            layers,
            points_head: MlpWeights::random(&[d.channels, d.hidden, d.k * 3], rng),
            score_head: MlpWeights::random(&[d.channels, d.hidden, 1], rng),
        }
    }

    pub fn points_per_line(&self) -> usize {
        self.points_head.output_dim() / 3
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderOptions {
    /// Masked cross-attention on/off.
    pub hybrid: bool,
    /// Real/virtual block mask in self-attention on/off.
    pub rvs: bool,
    /// Points-guided mask queries on/off.
    pub pgm: bool,
    pub mask_threshold: f64,
    pub range: MetricRange,
}

/// One decoder output slot.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterlinePrediction {
    pub points: Polyline,
    pub score: f64,
    pub is_real: bool,
    pub query: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub queries: QuerySet,
    pub predictions: Vec<CenterlinePrediction>,
}

/// Runs the points head on one query.
pub fn predict_points(head: &MlpWeights, q: &[f64], range: &MetricRange) -> Result<Polyline> {
    let raw = head.forward(q)?;
    if raw.len() % 3 != 0 || raw.len() < 6 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            actual: raw.len(),
            context: "points head output",
        });
    }
    Polyline::new(
        raw.chunks(3)
            .map(|c| range.denormalize([sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])]))
            .collect(),
    )
}

pub fn predict_score(head: &MlpWeights, q: &[f64]) -> Result<f64> {
    let out = head.forward(q)?;
    if out.len() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: out.len(),
            context: "score head output",
        });
    }
    Ok(sigmoid(out[0]))
}

/// Normalised copy of a polyline's points, the input format of the
/// positional encoders.
pub fn normalized_points(line: &Polyline, range: &MetricRange) -> Vec<Point3> {
    line.points().iter().map(|p| range.normalize(p)).collect()
}

/// Instance mask logits for every query, the source of the next layer's
/// attention mask.
pub fn instance_masks(
    b: &BevGrid,
    queries: &Matrix,
    lines: &[Polyline],
    enc: &MaskQueryEncoder,
    positional: bool,
    range: &MetricRange,
) -> Result<Vec<Vec<f64>>> {
    (0..queries.rows())
        .map(|i| {
            let q_prime = encode_mask_query(queries.row(i), &normalized_points(&lines[i], range), enc, positional)?;
            Ok(generate_mask(b, &q_prime)?.logits)
        })
        .collect()
}

/// Full decoder forward pass over `layers = weights.layers.len()` layers.
pub fn decoder_forward(
    qs: &QuerySet,
    b: &BevGrid,
    weights: &DecoderWeights,
    mask_encoder: &MaskQueryEncoder,
    opts: &DecoderOptions,
) -> Result<DecoderOutput> {
    if weights.layers.is_empty() {
        return Err(Error::Config("decoder needs at least one layer".into()));
    }
    if qs.channels() != b.channels {
        return Err(Error::DimensionMismatch {
            expected: b.channels,
            actual: qs.channels(),
            context: "decoder query channels",
        });
    }
    let n = qs.len();
    let n_real = qs.n_real();
    if weights.init_refs.rows() != n || weights.init_refs.cols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: weights.init_refs.rows(),
            context: "initial reference points",
        });
    }
    let spec = b.spec;
    let range = &opts.range;

    let mut refs: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|i| {
            let [x, y, _] = range.denormalize([weights.init_refs.get(i, 0), weights.init_refs.get(i, 1), 0.5]);
            vec![spec.to_cell(x, y)]
        })
        .collect();
    let mut mask = AttentionMask::open(n, spec.cells());
    let mut q = qs.stacked();
    let mut lines = Vec::new();

    for (li, layer) in weights.layers.iter().enumerate() {
        if opts.hybrid {
            q = masked_cross_attention(&q, b, &mask)?;
        }
        q = deformable_cross_attention(&q, b, &refs, &layer.deform)?;
        let split = QuerySet::split(&q, n_real);
        let (r, v) = rvs_self_attention(&split.real, &split.virt, opts.rvs)?;
        q = layer.ffn.forward(&r.vstack(&v)?)?;

        lines = (0..n)
            .map(|i| predict_points(&weights.points_head, q.row(i), range))
            .collect::<Result<Vec<_>>>()?;
        let last = li + 1 == weights.layers.len();
        if !last {
            refs = lines
                .iter()
                .map(|l| l.points().iter().map(|p| spec.to_cell(p[0], p[1])).collect())
                .collect();
            if opts.hybrid {
                let logits = instance_masks(b, &q, &lines, mask_encoder, opts.pgm, range)?;
                mask = attention_mask_from_instance_masks(&logits, opts.mask_threshold);
            }
        }
    }

    let predictions = lines
        .into_iter()
        .enumerate()
        .map(|(i, points)| {
            Ok(CenterlinePrediction {
                points,
                score: predict_score(&weights.score_head, q.row(i))?,
                is_real: i < n_real,
                query: q.row(i).to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecoderOutput {
        queries: QuerySet::split(&q, n_real),
        predictions,
    })
}
