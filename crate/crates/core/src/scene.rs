//! Ground-truth scenes: the JSON container, its validator, the synthetic
//! generator and the GT-driven BEV feature renderer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist3, Point3, Polyline};
use crate::raster::footprint;
use crate::sdmap::SdMapInstance;
use crate::tensor::{BevGrid, GridSpec};

pub const SCENE_VERSION: u32 = 1;
pub const SCENE_UNITS: &str = "meters";
/// Points per stored ground-truth centerline.
pub const GT_POINTS: usize = 201;
/// Maximum end-to-start gap of a connected lane pair in generated scenes.
pub const CONNECTION_TOLERANCE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            x: [-50.0, 50.0],
            y: [-25.0, 25.0],
        }
    }
}

impl Bounds {
    pub fn contains(&self, p: &Point3) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub version: u32,
    pub units: String,
    pub seed: u64,
    pub bounds: Bounds,
    pub centerlines: Vec<Polyline>,
    pub is_real: Vec<bool>,
    /// `adjacency[i][j] == 1` when lane `i` flows into lane `j`.
    pub adjacency: Vec<Vec<u8>>,
    pub sd_instances: Vec<SdMapInstance>,
}

impl Scene {
    pub fn empty(seed: u64) -> Self {
        Self {
            version: SCENE_VERSION,
            units: SCENE_UNITS.into(),
            seed,
            bounds: Bounds::default(),
            centerlines: Vec::new(),
            is_real: Vec::new(),
            adjacency: Vec::new(),
            sd_instances: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centerlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centerlines.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j] == 1
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.edge(i, j))
            .collect()
    }

    /// Indices of real (`true`) or virtual (`false`) centerlines.
    pub fn indices(&self, real: bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_real[i] == real).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        if self.version != SCENE_VERSION {
            return bad(format!("unsupported scene version {}", self.version));
        }
        if self.units != SCENE_UNITS {
            return bad(format!("units must be \"{SCENE_UNITS}\", got {:?}", self.units));
        }
        let n = self.len();
        if self.is_real.len() != n {
            return bad(format!("{} is_real flags for {n} centerlines", self.is_real.len()));
        }
        if self.adjacency.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            return bad(format!("adjacency must be {n}x{n}"));
        }
        for (i, line) in self.centerlines.iter().enumerate() {
            if line.len() != GT_POINTS {
                return bad(format!(
                    "centerline {i} has {} points, expected {GT_POINTS}",
                    line.len()
                ));
            }
            if let Some(p) = line.points().iter().find(|p| !self.bounds.contains(p)) {
                return bad(format!("centerline {i} leaves the bounds at {p:?}"));
            }
        }
        for i in 0..n {
            for j in 0..n {
                match self.adjacency[i][j] {
                    0 => {}
                    1 => {
                        let gap = dist3(&self.centerlines[i].end(), &self.centerlines[j].start());
                        if gap >= CONNECTION_TOLERANCE {
                            return bad(format!("edge {i}->{j} spans a {gap:.3} m gap"));
                        }
                    }
                    v => return bad(format!("adjacency[{i}][{j}] = {v} is not binary")),
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadKind {
    Straight,
    Arc,
    Clothoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub roads: usize,
    pub min_lanes: usize,
    pub max_lanes: usize,
    pub lane_width: f64,
    pub kinds: Vec<RoadKind>,
    /// Turning radius range for curved roads, meters.
    pub radius: (f64, f64),
    /// Roads interrupted by an intersection; at most `roads`.
    pub intersections: usize,
    pub intersection_gap: f64,
    /// Each real lane run is cut into 1..=max_pieces consecutive pieces.
    pub max_pieces: usize,
    pub sd_types: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            roads: 2,
            min_lanes: 1,
            max_lanes: 3,
            lane_width: 3.5,
            kinds: vec![RoadKind::Straight, RoadKind::Arc, RoadKind::Clothoid],
            radius: (80.0, 200.0),
            intersections: 1,
            intersection_gap: 12.0,
            max_pieces: 2,
            sd_types: 3,
        }
    }
}

impl SynthParams {
    /// A single straight road with `lanes` parallel lanes and nothing else.
    pub fn straight(lanes: usize) -> Self {
        Self {
            roads: 1,
            min_lanes: lanes,
            max_lanes: lanes,
            kinds: vec![RoadKind::Straight],
            intersections: 0,
            max_pieces: 1,
            ..Self::default()
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Infeasible(m.into()));
        if self.roads == 0 {
            return bad("at least one road is required");
        }
        if self.min_lanes == 0 || self.min_lanes > self.max_lanes {
            return bad("lane range must satisfy 1 <= min_lanes <= max_lanes");
        }
        if self.kinds.is_empty() {
            return bad("no road kinds allowed");
        }
        if !(self.lane_width > 0.0) {
            return bad("lane width must be positive");
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return bad("radius range must be positive and ordered");
        }
        if self.intersections > self.roads {
            return bad("more intersections than roads");
        }
        if !(self.intersection_gap > 1.0 && self.intersection_gap < 40.0) {
            return bad("intersection gap must lie in (1, 40) m");
        }
        if self.max_pieces == 0 {
            return bad("max_pieces must be at least 1");
        }
        let band = 50.0 / self.roads as f64;
        if self.max_lanes as f64 * self.lane_width > band - 1.0 {
            return bad("lanes do not fit in the lateral band of each road");
        }
        if self.sd_types == 0 {
            return bad("at least one SD semantic type is required");
        }
        Ok(())
    }
}

const STEP: f64 = 0.25;
const MARGIN: f64 = 0.5;
const MIN_PIECE: f64 = 4.0;

struct RoadSample {
    pos: [f64; 2],
    heading: f64,
}

fn reference_line(start: [f64; 2], heading0: f64, length: f64, curvature: impl Fn(f64) -> f64) -> Vec<RoadSample> {
    let n = (length / STEP).ceil() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let (mut pos, mut heading) = (start, heading0);
    out.push(RoadSample { pos, heading });
    for i in 0..n {
        let s = i as f64 * STEP;
        let mid = heading + 0.5 * STEP * curvature(s);
        pos = [pos[0] + STEP * mid.cos(), pos[1] + STEP * mid.sin()];
        heading += STEP * curvature(s + 0.5 * STEP);
        out.push(RoadSample { pos, heading });
    }
    out
}

fn offset(sample: &RoadSample, d: f64, grade: f64) -> Point3 {
    let x = sample.pos[0] - d * sample.heading.sin();
    let y = sample.pos[1] + d * sample.heading.cos();
    [x, y, grade * x]
}

fn polyline_length(pts: &[Point3]) -> f64 {
    pts.windows(2).map(|w| dist3(&w[0], &w[1])).sum()
}

fn bezier(p0: Point3, h0: f64, p3: Point3, h3: f64, handle: f64) -> Vec<Point3> {
    let p1 = [p0[0] + handle * h0.cos(), p0[1] + handle * h0.sin(), p0[2]];
    let p2 = [p3[0] - handle * h3.cos(), p3[1] - handle * h3.sin(), p3[2]];
    (0..=64)
        .map(|i| {
            let t = i as f64 / 64.0;
            let u = 1.0 - t;
            let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
            [0, 1, 2].map(|a| w[0] * p0[a] + w[1] * p1[a] + w[2] * p2[a] + w[3] * p3[a])
        })
        .collect()
}

/// Splits `pts` into `pieces` runs of equal arc length sharing endpoints.
fn split_pieces(pts: &[Point3], pieces: usize) -> Vec<Vec<Point3>> {
    let total = polyline_length(pts);
    let mut out = Vec::new();
    let mut cur = vec![pts[0]];
    let mut acc = 0.0;
    let mut next_cut = total / pieces as f64;
    for w in pts.windows(2) {
        let seg = dist3(&w[0], &w[1]);
        while out.len() + 1 < pieces && acc + seg >= next_cut && seg > 0.0 {
            let t = (next_cut - acc) / seg;
            let cut = [0, 1, 2].map(|a| w[0][a] + t * (w[1][a] - w[0][a]));
            cur.push(cut);
            out.push(std::mem::replace(&mut cur, vec![cut]));
            next_cut += total / pieces as f64;
        }
        acc += seg;
        cur.push(w[1]);
    }
    out.push(cur);
    out
}

struct Builder {
    lines: Vec<(Vec<Point3>, bool)>,
    edges: Vec<(usize, usize)>,
}

impl Builder {
    fn push(&mut self, pts: Vec<Point3>, real: bool) -> usize {
        self.lines.push((pts, real));
        self.lines.len() - 1
    }

    /// Adds a lane run cut into pieces; returns (first, last) piece ids.
    fn push_run(&mut self, pts: Vec<Point3>, pieces: usize) -> (usize, usize) {
        let ids: Vec<usize> = split_pieces(&pts, pieces)
            .into_iter()
            .map(|p| self.push(p, true))
            .collect();
        for w in ids.windows(2) {
            self.edges.push((w[0], w[1]));
        }
        (ids[0], *ids.last().unwrap())
    }
}

/// Longest run of consecutive indices whose points all satisfy `inside`.
fn longest_run(n: usize, inside: impl Fn(usize) -> bool) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for i in 0..=n {
        let ok = i < n && inside(i);
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| i - s > b - a) {
                    best = Some((s, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

fn try_synth(rng: &mut ChaCha8Rng, params: &SynthParams, seed: u64) -> Result<Scene> {
    let bounds = Bounds::default();
    let inner = |p: &Point3| {
        p[0] >= bounds.x[0] + MARGIN
            && p[0] <= bounds.x[1] - MARGIN
            && p[1] >= bounds.y[0] + MARGIN
            && p[1] <= bounds.y[1] - MARGIN
    };
    let mut b = Builder {
        lines: Vec::new(),
        edges: Vec::new(),
    };
    let mut sd = Vec::new();
    let band = (bounds.y[1] - bounds.y[0]) / params.roads as f64;
    let mut with_gap = vec![false; params.roads];
    for slot in rand::seq::index::sample(rng, params.roads, params.intersections) {
        with_gap[slot] = true;
    }

    for (road, &gap) in with_gap.iter().enumerate() {
        let lanes = rng.random_range(params.min_lanes..=params.max_lanes);
        let kind = params.kinds[rng.random_range(0..params.kinds.len())];
        let width = lanes as f64 * params.lane_width;
        let slack = (band - width - 1.0).max(0.0) / 2.0;
        let y_c = bounds.y[0] + (road as f64 + 0.5) * band + rng.random_range(-slack..=slack) * 0.5;
        let length = bounds.x[1] - bounds.x[0] - 2.0 * MARGIN - 2.0;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let kappa = sign / rng.random_range(params.radius.0..=params.radius.1);
        let grade = rng.random_range(-0.02..0.02);
        let reversed = rng.random_bool(0.5);
        let start = [bounds.x[0] + MARGIN + 1.0, y_c];
        let samples = match kind {
            RoadKind::Straight => reference_line(start, rng.random_range(-0.03..0.03), length, |_| 0.0),
            RoadKind::Arc => reference_line(start, -kappa * length / 2.0, length, |_| kappa),
            RoadKind::Clothoid => reference_line(start, -kappa * length / 6.0, length, |s| kappa * s / length),
        };

        let offsets: Vec<f64> = (0..lanes)
            .map(|j| (j as f64 - (lanes as f64 - 1.0) / 2.0) * params.lane_width)
            .collect();
        let n = samples.len();
        let Some((lo, hi)) = longest_run(n, |i| offsets.iter().all(|&d| inner(&offset(&samples[i], d, grade)))) else {
            return Err(Error::Infeasible(format!("road {road} leaves the bounds")));
        };

        // forward-order runs per lane, split at the intersection when present
        let mut segments: Vec<(usize, usize)> = vec![(lo, hi)];
        if gap {
            let xs: Vec<f64> = samples.iter().map(|s| s.pos[0]).collect();
            let centre = rng.random_range(-15.0..15.0);
            let half = params.intersection_gap / 2.0;
            let a = (lo..hi).find(|&i| xs[i] >= centre - half);
            let z = (lo..hi).find(|&i| xs[i] > centre + half);
            match (a, z) {
                (Some(a), Some(z)) if a > lo + 1 && z + 1 < hi => segments = vec![(lo, a), (z, hi)],
                _ => return Err(Error::Infeasible(format!("road {road} too short for its intersection"))),
            }
        }

        let mut ends: Vec<Vec<(usize, usize)>> = Vec::new();
        for &(s0, s1) in &segments {
            let mut per_lane = Vec::new();
            for &d in &offsets {
                let mut pts: Vec<Point3> = samples[s0..s1].iter().map(|s| offset(s, d, grade)).collect();
                if reversed {
                    pts.reverse();
                }
                let len = polyline_length(&pts);
                if len < 2.0 * MIN_PIECE {
                    return Err(Error::Infeasible(format!("road {road} lane run only {len:.1} m")));
                }
                let max_fit = ((len / MIN_PIECE) as usize).max(1);
                let pieces = rng.random_range(1..=params.max_pieces.min(max_fit));
                per_lane.push(b.push_run(pts, pieces));
            }
            ends.push(per_lane);
        }

        if gap {
            // in flow order the upstream run is the later segment for reversed roads
            let (up, down) = if reversed {
                (&ends[1], &ends[0])
            } else {
                (&ends[0], &ends[1])
            };
            let flow = |t: f64| if reversed { t + std::f64::consts::PI } else { t };
            let (i_up, i_down) = if reversed {
                (segments[1].0, segments[0].1 - 1)
            } else {
                (segments[0].1 - 1, segments[1].0)
            };
            let handle = params.intersection_gap / 3.0;
            let mut connect = |from: usize, to: usize| {
                let p0 = b.lines[up[from].1].0.last().copied().unwrap();
                let p3 = b.lines[down[to].0].0[0];
                let pts = bezier(
                    p0,
                    flow(samples[i_up].heading),
                    p3,
                    flow(samples[i_down].heading),
                    handle,
                );
                let id = b.push(pts, false);
                b.edges.push((up[from].1, id));
                b.edges.push((id, down[to].0));
            };
            for j in 0..lanes {
                connect(j, j);
            }
            if lanes >= 2 {
                connect(0, 1);
            }
        }

        // road-level SD polyline: smoothed, thinned reference line
        let stride = 20;
        let refs: Vec<[f64; 2]> = samples[lo..hi].iter().map(|s| s.pos).collect();
        let smooth: Vec<[f64; 2]> = (0..refs.len())
            .step_by(stride)
            .chain(std::iter::once(refs.len() - 1))
            .map(|i| {
                let (a, z) = (i.saturating_sub(8), (i + 9).min(refs.len()));
                let k = (z - a) as f64;
                let sum = refs[a..z]
                    .iter()
                    .fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
                [sum[0] / k, sum[1] / k]
            })
            .collect();
        let mut sd_pts: Vec<[f64; 2]> = smooth;
        sd_pts.dedup();
        if reversed {
            sd_pts.reverse();
        }
        sd.push(SdMapInstance {
            polyline: Polyline::from_xy(&sd_pts)?,
            semantic_type: rng.random_range(1..=params.sd_types),
        });
    }

    let n = b.lines.len();
    let mut adjacency = vec![vec![0u8; n]; n];
    for &(i, j) in &b.edges {
        adjacency[i][j] = 1;
    }
    let (centerlines, is_real): (Vec<Polyline>, Vec<bool>) = b
        .lines
        .into_iter()
        .map(|(pts, real)| Ok((Polyline::new(pts)?.resample(GT_POINTS), real)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let scene = Scene {
        version: SCENE_VERSION,
        units: SCENE_UNITS.into(),
        seed,
        bounds,
        centerlines,
        is_real,
        adjacency,
        sd_instances: sd,
    };
    scene.validate()?;
    Ok(scene)
}

/// Deterministic synthetic scene for `seed`.
pub fn synth_scene(seed: u64, params: &SynthParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..32 {
        match try_synth(&mut rng, params, seed) {
            Ok(s) => return Ok(s),
            Err(e @ (Error::Infeasible(_) | Error::Scene(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible(format!(
        "no valid scene after 32 attempts: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

pub const CH_OCCUPANCY: usize = 0;
pub const CH_VIRTUAL: usize = 1;
pub const CH_SIN: usize = 2;
pub const CH_COS: usize = 3;
pub const VIRTUAL_INTENSITY: f64 = 0.2;
/// Fixed per-lane identity code written into the channels after `CH_COS`.
fn ordinal_code(ordinal: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ ordinal as u64);
    (0..len)
        .map(|_| if rng.random_bool(0.5) { 0.5 } else { -0.5 })
        .collect()
}

fn nearest_heading(line: &Polyline, x: f64, y: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for w in line.points().windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        let l2 = dx * dx + dy * dy;
        if l2 == 0.0 {
            continue;
        }
        let t = (((x - w[0][0]) * dx + (y - w[0][1]) * dy) / l2).clamp(0.0, 1.0);
        let (px, py) = (w[0][0] + t * dx - x, w[0][1] + t * dy - y);
        let d = px * px + py * py;
        if d < best.0 {
            best = (d, dy.atan2(dx));
        }
    }
    best.1
}

/// Renders `scene` into a `spec` grid with `channels >= 4` channels: real lane
/// occupancy, virtual occupancy at 0.2, tangent sin/cos and a per-lane code,
/// plus i.i.d. Gaussian noise of std `noise_sigma` drawn from `noise_seed`.
/// Where lanes overlap, the lowest index sets tangent and code.
pub fn render_bev_features(
    scene: &Scene,
    spec: &GridSpec,
    channels: usize,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<BevGrid> {
    spec.validate()?;
    if channels < 4 {
        return Err(Error::Config(format!(
            "BEV rendering needs at least 4 channels, got {channels}"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config("noise sigma must be finite and non-negative".into()));
    }
    let mut g = BevGrid::zeros(*spec, channels);
    let mut claimed = vec![false; spec.cells()];
    let (w, code_len) = (spec.width, channels - 4);
    for (i, line) in scene.centerlines.iter().enumerate() {
        let fp = footprint(spec, line, 1);
        if !scene.is_real[i] {
            for (idx, _) in fp.iter().enumerate().filter(|(_, &v)| v) {
                g.cell_mut(idx / w, idx % w)[CH_VIRTUAL] = VIRTUAL_INTENSITY;
            }
            continue;
        }
        let code = ordinal_code(i, code_len);
        for (idx, _) in fp.iter().enumerate().filter(|(_, &v)| v) {
            let (r, c) = (idx / w, idx % w);
            let cell = g.cell_mut(r, c);
            cell[CH_OCCUPANCY] = 1.0;
            if !claimed[idx] {
                claimed[idx] = true;
                let (x, y) = spec.to_metric(r as f64, c as f64);
                let t = nearest_heading(line, x, y);
                cell[CH_SIN] = t.sin();
                cell[CH_COS] = t.cos();
                cell[4..].copy_from_slice(&code);
            }
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for v in g.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(g)
}
