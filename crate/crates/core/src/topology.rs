//! Lane-to-lane topology head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tensor::{sigmoid, Matrix, MlpWeights};

/// `N × N` connection probabilities; entry `(i, j)` is the probability that
/// lane `i` flows into lane `j`.
pub type TopologyMatrix = Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyWeights {
    /// `C → C`, query branch.
    pub psi1: MlpWeights,
    /// `K·3 → C`, geometry branch.
    pub psi2: MlpWeights,
    /// `2C → hidden → 1` pair classifier.
    pub classifier: MlpWeights,
}

impl TopologyWeights {
    pub fn random<R: Rng>(channels: usize, k: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            psi1: MlpWeights::random(&[channels, channels], rng),
            psi2: MlpWeights::random(&[k * 3, channels, channels], rng),
            classifier: MlpWeights::random(&[2 * channels, hidden, 1], rng),
        }
    }
}

/// `E_i = ψ1(Q_i) + ψ2(flatten(l_i))`, points flattened as
/// `[x0, y0, z0, x1, ...]`.
pub fn enhance_queries(q: &Matrix, lines: &[Vec<Point3>], psi1: &MlpWeights, psi2: &MlpWeights) -> Result<Matrix> {
    if lines.len() != q.rows() {
        return Err(Error::DimensionMismatch {
            expected: q.rows(),
            actual: lines.len(),
            context: "one polyline per query",
        });
    }
    let mut rows = Vec::with_capacity(q.rows());
    for (i, line) in lines.iter().enumerate() {
        let flat: Vec<f64> = line.iter().flat_map(|p| p.iter().copied()).collect();
        let a = psi1.forward(q.row(i))?;
        let b = psi2.forward(&flat)?;
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                actual: b.len(),
                context: "psi1 vs psi2 output",
            });
        }
        rows.push(a.iter().zip(&b).map(|(x, y)| x + y).collect());
    }
    Matrix::from_rows(&rows)
}

/// `A(i, j) = sigmoid(classifier([E_i, E_j]))` for every ordered pair.
pub fn predict_topology(e: &Matrix, classifier: &MlpWeights) -> Result<TopologyMatrix> {
    if classifier.input_dim() != 2 * e.cols() {
        return Err(Error::DimensionMismatch {
            expected: 2 * e.cols(),
            actual: classifier.input_dim(),
            context: "topology classifier input",
        });
    }
    let n = e.rows();
    let mut out = Matrix::zeros(n, n);
    let mut pair = vec![0.0; 2 * e.cols()];
    for i in 0..n {
        pair[..e.cols()].copy_from_slice(e.row(i));
        for j in 0..n {
            pair[e.cols()..].copy_from_slice(e.row(j));
            out.set(i, j, sigmoid(classifier.forward(&pair)?[0]));
        }
    }
    Ok(out)
}
