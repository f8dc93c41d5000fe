//! Polyline arithmetic: arc length, arc-length resampling, discrete Fréchet
//! distance and ordered-neighbour outlier filtering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];
pub type Point2 = [f64; 2];

/// An ordered sequence of at least two finite 3D points, in meters.
///
/// Point order is meaningful: the first point is the start of the lane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point3>", into = "Vec<Point3>")]
pub struct Polyline {
    points: Vec<Point3>,
}

impl TryFrom<Vec<Point3>> for Polyline {
    type Error = Error;

    fn try_from(points: Vec<Point3>) -> Result<Self> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Point3> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints(points.len()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { points })
    }

    /// Builds a polyline from planar points with `z = 0`.
    pub fn from_xy(points: &[Point2]) -> Result<Self> {
        Self::new(points.iter().map(|&[x, y]| [x, y, 0.0]).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> Point3 {
        self.points[0]
    }

    pub fn end(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    pub fn translated(&self, offset: Point3) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
        }
    }

    pub fn arc_length(&self) -> f64 {
        arc_length(self)
    }

    pub fn resample(&self, k: usize) -> Self {
        resample_polyline(self, k)
    }

    /// Flattens to `[x0, y0, z0, x1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }
}

pub fn dist3(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn dist2(a: &Point2, b: &Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn arc_length(p: &Polyline) -> f64 {
    p.points.windows(2).map(|w| dist3(&w[0], &w[1])).sum()
}

fn lerp3(a: &Point3, b: &Point3, t: f64) -> Point3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Resamples to `k` points spaced uniformly by arc length. Both endpoints are
/// copied exactly. A zero-length polyline collapses to `k` copies of its
/// first point.
///
/// # Panics
/// If `k < 2`.
pub fn resample_polyline(p: &Polyline, k: usize) -> Polyline {
    assert!(k >= 2, "resample needs k >= 2, got {k}");
    let pts = &p.points;
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + dist3(&w[0], &w[1]));
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return Polyline {
            points: vec![pts[0]; k],
        };
    }

    let mut out = Vec::with_capacity(k);
    out.push(pts[0]);
    let mut seg = 0;
    for i in 1..k - 1 {
        let target = total * i as f64 / (k - 1) as f64;
        while seg + 1 < pts.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let t = if seg_len > 0.0 {
            ((target - cumulative[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(lerp3(&pts[seg], &pts[seg + 1], t));
    }
    out.push(pts[pts.len() - 1]);
    Polyline { points: out }
}

/// Planar counterpart of [`resample_polyline`].
pub fn resample_points2(pts: &[Point2], k: usize) -> Vec<Point2> {
    let lifted: Vec<Point3> = pts.iter().map(|&[x, y]| [x, y, 0.0]).collect();
    let poly = Polyline::new(lifted).expect("resample_points2 needs >= 2 finite points");
    resample_polyline(&poly, k)
        .points
        .into_iter()
        .map(|[x, y, _]| [x, y])
        .collect()
}

/// Discrete Fréchet distance by dynamic programming over the coupling
/// lattice, `O(n·m)` time and `O(m)` memory.
pub fn discrete_frechet(a: &Polyline, b: &Polyline) -> f64 {
    let (p, q) = (&a.points, &b.points);
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            let d = dist3(pi, qj);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// Ordered planar points with a per-point validity flag.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet2 {
    pub points: Vec<Point2>,
    pub valid: Vec<bool>,
}

impl PointSet2 {
    pub fn all_valid(points: Vec<Point2>) -> Self {
        let valid = vec![true; points.len()];
        Self { points, valid }
    }

    pub fn valid_points(&self) -> Vec<Point2> {
        self.points
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Single start-to-end pass: a valid point is invalidated when both its
/// nearest valid predecessor and its nearest valid successor lie farther than
/// `threshold`. A point with no valid neighbour at all is kept.
pub fn filter_outliers(pts: &PointSet2, threshold: f64) -> PointSet2 {
    assert_eq!(pts.points.len(), pts.valid.len());
    let mut valid = pts.valid.clone();
    let n = pts.points.len();
    let mut last_valid: Option<usize> = None;
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        let next = (i + 1..n).find(|&j| valid[j]);
        let nearest = [last_valid, next]
            .into_iter()
            .flatten()
            .map(|j| dist2(&pts.points[i], &pts.points[j]))
            .fold(f64::INFINITY, f64::min);
        if nearest.is_finite() && nearest > threshold {
            valid[i] = false;
        } else {
            last_valid = Some(i);
        }
    }
    PointSet2 {
        points: pts.points.clone(),
        valid,
    }
}
