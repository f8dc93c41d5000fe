//! SD map fusion: rasterise road-level polylines into a semantic embedding
//! grid and merge it into the sensor BEV features with a small deformable
//! transformer decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{deformable_cross_attention_raw, project_grid, DeformableAttnWeights, FeedForward};
use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::raster::rasterize_polyline;
use crate::tensor::{layer_norm, BevGrid, GridSpec, Matrix};

/// One SD map element: a road-level polyline and its semantic type id
/// (`1..=N_M`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdMapInstance {
    pub polyline: Polyline,
    pub semantic_type: u32,
}

/// Embedding vocabulary: one vector per semantic type plus a default vector
/// for unoccupied cells.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticEmbeddingTable {
    pub default: Vec<f64>,
    /// `types[t - 1]` is the embedding of semantic type `t`.
    pub types: Vec<Vec<f64>>,
}

impl SemanticEmbeddingTable {
    pub fn random<R: Rng>(num_types: usize, channels: usize, rng: &mut R) -> Self {
        let mut row = || (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>();
        let default = row();
        let types = (0..num_types).map(|_| row()).collect();
        Self { default, types }
    }

    pub fn channels(&self) -> usize {
        self.default.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn embedding(&self, semantic_type: u32) -> Option<&[f64]> {
        let idx = (semantic_type as usize).checked_sub(1)?;
        self.types.get(idx).map(Vec::as_slice)
    }
}

/// Builds the semantic grid. Cells crossed by an instance hold that
/// instance's type embedding (lowest instance index wins on overlap); all
/// other cells hold the default embedding.
pub fn rasterize_sdmap(
    instances: &[SdMapInstance],
    spec: &GridSpec,
    table: &SemanticEmbeddingTable,
) -> Result<BevGrid> {
    let channels = table.channels();
    let mut owner: Vec<Option<usize>> = vec![None; spec.cells()];
    for (i, inst) in instances.iter().enumerate() {
        if table.embedding(inst.semantic_type).is_none() {
            return Err(Error::Config(format!(
                "semantic type {} outside table of {} types",
                inst.semantic_type,
                table.num_types()
            )));
        }
        for (cell, hit) in owner.iter_mut().zip(rasterize_polyline(spec, &inst.polyline)) {
            if hit && cell.is_none() {
                *cell = Some(i);
            }
        }
    }
    let mut grid = BevGrid::zeros(*spec, channels);
    for (idx, o) in owner.iter().enumerate() {
        let emb = match o {
            Some(i) => table.embedding(instances[*i].semantic_type).unwrap(),
            None => &table.default,
        };
        grid.data_mut()[idx * channels..(idx + 1) * channels].copy_from_slice(emb);
    }
    Ok(grid)
}

/// One fusion layer: deformable self-attention over the BEV cells,
/// deformable cross-attention into the SD grid, then a feed-forward block.
#[derive(Clone, Debug, PartialEq)]
pub struct SdLayerWeights {
    pub self_attn: DeformableAttnWeights,
    pub cross_attn: DeformableAttnWeights,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdInteractionWeights {
    pub layers: Vec<SdLayerWeights>,
}

impl SdInteractionWeights {
    pub fn zeros(layers: usize, channels: usize, heads: usize, points: usize, hidden: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|_| SdLayerWeights {
                    self_attn: DeformableAttnWeights::zeros(channels, heads, points),
                    cross_attn: DeformableAttnWeights::zeros(channels, heads, points),
                    ffn: FeedForward::zeros(channels, hidden),
                })
                .collect(),
        }
    }

    pub fn random<R: Rng>(
        layers: usize,
        channels: usize,
        heads: usize,
        points: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            layers: (0..layers)
                .map(|_| SdLayerWeights {
                    self_attn: DeformableAttnWeights::random(channels, heads, points, rng),
                    cross_attn: DeformableAttnWeights::random(channels, heads, points, rng),
                    ffn: FeedForward::random(channels, hidden, rng),
                })
                .collect(),
        }
    }
}

fn grid_to_matrix(g: &BevGrid) -> Matrix {
    Matrix::from_vec(g.spec.cells(), g.channels, g.data().to_vec()).unwrap()
}

fn normalized(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&layer_norm(m.row(i)));
    }
    out
}

fn add_in_place(x: &mut Matrix, delta: &Matrix) {
    for (a, d) in x.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}

/// Augments the sensor features `b` with the SD grid `e_s + e_p`.
///
/// Sub-layers are pre-normalised (`x + f(LN(x))`), so a decoder whose
/// projections are all zero returns `b` unchanged.
pub fn sd_interact(b: &BevGrid, e_s: &BevGrid, e_p: &BevGrid, weights: &SdInteractionWeights) -> Result<BevGrid> {
    if !b.same_shape(e_s) || !b.same_shape(e_p) {
        return Err(Error::DimensionMismatch {
            expected: b.data().len(),
            actual: e_s.data().len().min(e_p.data().len()),
            context: "sd interaction grids",
        });
    }
    let spec = b.spec;
    let sd = e_s.add(e_p)?;
    let refs: Vec<Vec<(f64, f64)>> = (0..spec.height)
        .flat_map(|r| (0..spec.width).map(move |c| vec![(r as f64, c as f64)]))
        .collect();

    let mut x = grid_to_matrix(b);
    for layer in &weights.layers {
        let xn = normalized(&x);
        let self_values = project_grid(
            &BevGrid::from_data(spec, b.channels, xn.data().to_vec())?,
            &layer.self_attn.value,
        )?;
        let delta = deformable_cross_attention_raw(&xn, &self_values, &refs, &layer.self_attn)?;
        add_in_place(&mut x, &delta);

        let xn = normalized(&x);
        let cross_values = project_grid(&sd, &layer.cross_attn.value)?;
        let delta = deformable_cross_attention_raw(&xn, &cross_values, &refs, &layer.cross_attn)?;
        add_in_place(&mut x, &delta);

        let delta = layer.ffn.forward_raw(&normalized(&x))?;
        add_in_place(&mut x, &delta);
    }
    BevGrid::from_data(spec, b.channels, x.into_data())
}
