//! Minimal dense `f64` kernel: row-major matrices, BEV feature grids, MLPs,
//! softmax, layer normalisation, bilinear sampling, sinusoidal encodings and a
//! central-difference gradient harness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
                context: "matrix data",
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                    context: "matrix row",
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Uniform Glorot-style initialisation.
    pub fn random<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
                context: "matvec input",
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// Stacks the rows of `self` on top of the rows of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.cols,
                context: "vstack",
            });
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stabilised softmax. `-inf` entries act as a mask and map to
/// exactly zero; a row with no finite entry is an error.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::FullyMasked);
    }
    let exps: Vec<f64> = v
        .iter()
        .map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - max).exp() })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Parameter-free layer normalisation (zero mean, unit variance).
pub fn layer_norm(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    v.iter().map(|x| (x - mean) * inv).collect()
}

/// Layer-normalises every row of `m` in place.
pub fn layer_norm_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let normed = layer_norm(m.row(i));
        m.row_mut(i).copy_from_slice(&normed);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Affine map `y = W x + b`, `W` shaped `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::DimensionMismatch {
                expected: weight.rows(),
                actual: bias.len(),
                context: "linear bias",
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn random<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: Matrix::random(output, input, rng),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
            if self.activation == Activation::Relu && *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(y)
    }
}

/// A chain of [`Linear`] layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<Linear>,
}

impl MlpWeights {
    pub fn new(layers: Vec<Linear>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].output_dim(),
                    actual: w[1].input_dim(),
                    context: "mlp layer chain",
                });
            }
        }
        Ok(Self { layers })
    }

    /// Hidden layers use ReLU, the final layer is linear.
    pub fn random<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 < n { Activation::Relu } else { Activation::None };
                Linear::random(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 < n { Activation::Relu } else { Activation::None };
                Linear::zeros(dims[i], dims[i + 1], act)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(self, x)
    }
}

pub fn mlp_forward(w: &MlpWeights, x: &[f64]) -> Result<Vec<f64>> {
    let mut h = x.to_vec();
    for layer in &w.layers {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

/// Geometry of a BEV grid: `height` rows along `y`, `width` columns along
/// `x`, square cells of `resolution` meters. Cell `(r, c)` has its centre at
/// `x = x_min + (c + 0.5)·res`, `y = y_min + (r + 0.5)·res`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub resolution: f64,
    pub x_min: f64,
    pub y_min: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            height: 100,
            width: 200,
            resolution: 0.5,
            x_min: -50.0,
            y_min: -25.0,
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.width as f64 * self.resolution
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.height as f64 * self.resolution
    }

    /// Fractional `(row, col)` to metric `(x, y)`.
    pub fn to_metric(&self, row: f64, col: f64) -> (f64, f64) {
        (
            self.x_min + (col + 0.5) * self.resolution,
            self.y_min + (row + 0.5) * self.resolution,
        )
    }

    /// Metric `(x, y)` to fractional `(row, col)`.
    pub fn to_cell(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (y - self.y_min) / self.resolution - 0.5,
            (x - self.x_min) / self.resolution - 0.5,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        Ok(())
    }
}

/// `H × W × C` feature map stored row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    pub channels: usize,
    data: Vec<f64>,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        Self {
            spec,
            channels,
            data: vec![0.0; spec.cells() * channels],
        }
    }

    pub fn from_data(spec: GridSpec, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.cells() * channels {
            return Err(Error::DimensionMismatch {
                expected: spec.cells() * channels,
                actual: data.len(),
                context: "bev grid data",
            });
        }
        Ok(Self { spec, channels, data })
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.spec.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.spec.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Feature vector of flat cell index `row * W + col`.
    pub fn flat_cell(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &BevGrid) -> bool {
        self.spec.height == other.spec.height && self.spec.width == other.spec.width && self.channels == other.channels
    }

    /// Element-wise sum of two grids of identical shape.
    pub fn add(&self, other: &BevGrid) -> Result<BevGrid> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                actual: other.data.len(),
                context: "bev grid add",
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(BevGrid {
            spec: self.spec,
            channels: self.channels,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Bilinear interpolation at fractional `(row, col)`. Locations outside
/// `[0, H−1] × [0, W−1]` yield the zero vector.
pub fn bilinear_sample(g: &BevGrid, row: f64, col: f64) -> Vec<f64> {
    let mut out = vec![0.0; g.channels];
    bilinear_accumulate(g, row, col, 1.0, &mut out);
    out
}

/// Adds `scale · bilinear_sample(g, row, col)` into `out` without allocating.
pub fn bilinear_accumulate(g: &BevGrid, row: f64, col: f64, scale: f64, out: &mut [f64]) {
    let (h, w) = (g.height() as f64, g.width() as f64);
    if !(row >= 0.0 && row <= h - 1.0 && col >= 0.0 && col <= w - 1.0) {
        return;
    }
    let r0 = (row.floor() as usize).min(g.height() - 2);
    let c0 = (col.floor() as usize).min(g.width() - 2);
    let fr = row - r0 as f64;
    let fc = col - c0 as f64;
    let corners = [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ];
    for (r, c, wgt) in corners {
        if wgt == 0.0 {
            continue;
        }
        let f = g.cell(r, c);
        for (o, v) in out.iter_mut().zip(f) {
            *o += scale * wgt * v;
        }
    }
}

/// 2D sinusoidal positional encoding. Channels `[0, C/2)` encode the column
/// position, `[C/2, C)` the row position; inside each half, channel `2i` is
/// `sin(pos·ω_i)` and `2i+1` is `cos(pos·ω_i)` with
/// `ω_i = 10000^(−2i/(C/2))` and `pos = 2π·index/extent`.
pub fn sinusoidal_pe_2d(spec: &GridSpec, channels: usize) -> Result<BevGrid> {
    if channels == 0 || !channels.is_multiple_of(4) {
        return Err(Error::ChannelsNotDivisibleBy4(channels));
    }
    let half = channels / 2;
    let freqs: Vec<f64> = (0..half / 2)
        .map(|i| 10000f64.powf(-(2.0 * i as f64) / half as f64))
        .collect();
    let mut grid = BevGrid::zeros(*spec, channels);
    let tau = 2.0 * std::f64::consts::PI;
    for r in 0..spec.height {
        let py = tau * r as f64 / spec.height as f64;
        for c in 0..spec.width {
            let px = tau * c as f64 / spec.width as f64;
            let cell = grid.cell_mut(r, c);
            for (i, w) in freqs.iter().enumerate() {
                cell[2 * i] = (px * w).sin();
                cell[2 * i + 1] = (px * w).cos();
                cell[half + 2 * i] = (py * w).sin();
                cell[half + 2 * i + 1] = (py * w).cos();
            }
        }
    }
    Ok(grid)
}

/// Central-difference gradient `(f(x+εe_i) − f(x−εe_i)) / 2ε`.
pub fn finite_diff_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[f64::NEG_INFINITY, 0.0]).unwrap(), vec![0.0, 1.0]);
        let v = [1.0, 2.0, 3.0];
        let denom: f64 = v.iter().map(|x: &f64| (x - 3.0).exp()).sum();
        for (s, x) in softmax(&v).unwrap().iter().zip(v) {
            assert!((s - (x - 3.0).exp() / denom).abs() < 1e-12);
        }
        assert!(matches!(softmax(&[f64::NEG_INFINITY; 3]), Err(Error::FullyMasked)));
    }

    #[test]
    fn mlp_examples() {
        let id = MlpWeights::new(vec![
            Linear::new(Matrix::identity(3), vec![0.0; 3], Activation::None).unwrap()
        ])
        .unwrap();
        assert_eq!(id.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);

        let clamp = MlpWeights::new(vec![Linear::new(
            Matrix::from_rows(&[vec![2.0]]).unwrap(),
            vec![1.0],
            Activation::Relu,
        )
        .unwrap()])
        .unwrap();
        assert_eq!(clamp.forward(&[-3.0]).unwrap(), vec![0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpWeights::random(&[4, 5, 3], &mut rng);
        let x = [0.3, -1.2, 0.7, 2.0];
        // independent matmul oracle
        let l0 = &net.layers[0];
        let mut h = [0.0; 5];
        for i in 0..5 {
            let mut s = l0.bias[i];
            for j in 0..4 {
                s += l0.weight.get(i, j) * x[j];
            }
            h[i] = s.max(0.0);
        }
        let l1 = &net.layers[1];
        let got = net.forward(&x).unwrap();
        for i in 0..3 {
            let mut s = l1.bias[i];
            for j in 0..5 {
                s += l1.weight.get(i, j) * h[j];
            }
            assert!((got[i] - s).abs() < 1e-12);
        }
        assert!(net.forward(&[1.0]).is_err());
    }

    fn small_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> BevGrid {
        let spec = GridSpec {
            height: h,
            width: w,
            resolution: 1.0,
            x_min: 0.0,
            y_min: 0.0,
        };
        let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        BevGrid::from_data(spec, c, data).unwrap()
    }

    #[test]
    fn bilinear_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = small_grid(&mut rng, 4, 5, 3);
        assert_eq!(bilinear_sample(&g, 2.0, 3.0), g.cell(2, 3).to_vec());
        let mid = bilinear_sample(&g, 1.0, 2.5);
        for ch in 0..3 {
            let expect = (g.cell(1, 2)[ch] + g.cell(1, 3)[ch]) / 2.0;
            assert!((mid[ch] - expect).abs() < 1e-12);
        }
        for _ in 0..20 {
            let r: f64 = rng.random_range(0.0..3.0);
            let c: f64 = rng.random_range(0.0..4.0);
            let (r0, c0) = (r.floor() as usize, c.floor() as usize);
            let (a, b) = (r - r0 as f64, c - c0 as f64);
            let got = bilinear_sample(&g, r, c);
            for ch in 0..3 {
                let expect = g.cell(r0, c0)[ch] * (1.0 - a) * (1.0 - b)
                    + g.cell(r0, c0 + 1)[ch] * (1.0 - a) * b
                    + g.cell(r0 + 1, c0)[ch] * a * (1.0 - b)
                    + g.cell(r0 + 1, c0 + 1)[ch] * a * b;
                assert!((got[ch] - expect).abs() < 1e-12);
            }
        }
        assert_eq!(bilinear_sample(&g, -0.1, 1.0), vec![0.0; 3]);
        assert_eq!(bilinear_sample(&g, 1.0, 4.01), vec![0.0; 3]);
        assert_eq!(bilinear_sample(&g, 3.0, 4.0), g.cell(3, 4).to_vec());
    }

    #[test]
    fn bilinear_lipschitz_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = small_grid(&mut rng, 6, 6, 4);
        let max_f = g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for _ in 0..200 {
            let r = rng.random_range(0.5..4.5);
            let c = rng.random_range(0.5..4.5);
            let d: f64 = rng.random_range(-0.01..0.01);
            let a = bilinear_sample(&g, r, c);
            let b = bilinear_sample(&g, r + d, c - d);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 2.0 * max_f * 2.0 * d.abs() + 1e-15);
            }
        }
    }

    #[test]
    fn pe_examples() {
        let spec = GridSpec {
            height: 16,
            width: 24,
            resolution: 1.0,
            x_min: 0.0,
            y_min: 0.0,
        };
        let pe = sinusoidal_pe_2d(&spec, 8).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(pe.cell(0, 0)[0], 0.0);
        let cells: Vec<&[f64]> = (0..spec.cells()).map(|i| pe.flat_cell(i)).collect();
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                assert_ne!(cells[i], cells[j], "cells {i} and {j} collide");
            }
        }
        assert_eq!(pe, sinusoidal_pe_2d(&spec, 8).unwrap());
        assert!(matches!(
            sinusoidal_pe_2d(&spec, 6),
            Err(Error::ChannelsNotDivisibleBy4(6))
        ));
    }

    #[test]
    fn pe_injective_at_64() {
        let spec = GridSpec {
            height: 64,
            width: 64,
            resolution: 1.0,
            x_min: 0.0,
            y_min: 0.0,
        };
        let pe = sinusoidal_pe_2d(&spec, 4).unwrap();
        // with 4 channels the (sin, cos) pairs are exactly the column and row angles
        let mut seen = std::collections::HashSet::new();
        for i in 0..spec.cells() {
            let key: Vec<u64> = pe.flat_cell(i).iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key));
        }
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        assert_eq!(finite_diff_grad(|_| 3.0, &[1.0, 2.0, 3.0], 1e-5), vec![0.0; 3]);
    }

    #[test]
    fn grid_transform_round_trip() {
        let spec = GridSpec::default();
        let (x, y) = spec.to_metric(10.25, 33.5);
        let (r, c) = spec.to_cell(x, y);
        assert!((r - 10.25).abs() < 1e-12 && (c - 33.5).abs() < 1e-12);
        let (x0, _) = spec.to_metric(0.0, 0.0);
        let (x1, _) = spec.to_metric(0.0, 1.0);
        assert!(x1 > x0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_shift_invariant(
                v in prop::collection::vec(-20.0..20.0f64, 1..12),
                c in -50.0..50.0f64,
            ) {
                let a = softmax(&v).unwrap();
                let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
                let b = softmax(&shifted).unwrap();
                prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!(*x >= 0.0);
                    prop_assert!((x - y).abs() < 1e-9);
                }
                let mut rev = v.clone();
                rev.reverse();
                let r = softmax(&rev).unwrap();
                for (i, x) in a.iter().enumerate() {
                    prop_assert!((x - r[v.len() - 1 - i]).abs() < 1e-12);
                }
            }
        }
    }
}
