//! End-to-end orchestration: configuration, weights, the forward pipeline,
//! evaluation against a scene and the toggle ablation grid.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{DeformableAttnWeights, FeedForward};
use crate::decoder::{decoder_forward, normalized_points, DecoderDims, DecoderOptions, DecoderWeights, MetricRange};
use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::io::{rle_decode, rle_encode, NamedTensor, WeightsFile};
use crate::loss::{gt_mask, LossWeights, PredictedInstance};
use crate::metrics::{det_l, mask_ap, top_ll, EvalReport, MetricConfig};
use crate::points_mask::{
    encode_mask_query, fuse_points, generate_mask, read_mask, select_point_set, Axis, InstanceMask, MaskPointReadout,
    MaskQueryEncoder, ReadoutHeads,
};
use crate::scene::{render_bev_features, Scene, SCENE_UNITS, SCENE_VERSION};
use crate::sdmap::{rasterize_sdmap, sd_interact, SdInteractionWeights, SemanticEmbeddingTable};
use crate::tensor::{logit, sinusoidal_pe_2d, BevGrid, GridSpec, Linear, Matrix, MlpWeights};
use crate::topology::{enhance_queries, predict_topology, TopologyWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    /// Points-guided mask queries.
    pub pgm: bool,
    /// Points-mask fusion of real centerlines.
    pub pmf: bool,
    /// SD map interaction.
    pub sd: bool,
    /// Masked cross-attention in the decoder.
    pub hybrid: bool,
    /// Real/virtual separated self-attention.
    pub rvs: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            pgm: true,
            pmf: true,
            sd: true,
            hybrid: true,
            rvs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_real: usize,
    pub n_virtual: usize,
    /// Points per predicted centerline.
    pub k: usize,
    pub channels: usize,
    /// Feed-forward and head hidden width.
    pub hidden: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub sampling_points: usize,
    pub sd_layers: usize,
    pub sd_sampling_points: usize,
    pub sd_types: u32,
    pub grid: GridSpec,
    pub z_range: [f64; 2],
    pub loss: LossWeights,
    pub toggles: Toggles,
    pub mask_attention_threshold: f64,
    pub validity_threshold: f64,
    pub outlier_threshold: f64,
    pub metrics: MetricConfig,
    /// Std of the Gaussian noise added to rendered BEV features.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_real: 16,
            n_virtual: 16,
            k: 11,
            channels: 32,
            hidden: 64,
            decoder_layers: 2,
            heads: 4,
            sampling_points: 4,
            sd_layers: 1,
            sd_sampling_points: 4,
            sd_types: 3,
            grid: GridSpec::default(),
            z_range: [-5.0, 5.0],
            loss: LossWeights::default(),
            toggles: Toggles::default(),
            mask_attention_threshold: 0.5,
            validity_threshold: 0.5,
            outlier_threshold: 1.5,
            metrics: MetricConfig::default(),
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Full-size model dimensions.
    pub fn full_size() -> Self {
        Self {
            n_real: 150,
            n_virtual: 150,
            channels: 256,
            hidden: 512,
            decoder_layers: 4,
            heads: 8,
            ..Self::default()
        }
    }

    pub fn range(&self) -> MetricRange {
        MetricRange::from_grid(&self.grid, (self.z_range[0], self.z_range[1]))
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.grid.validate()?;
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if self.n_real == 0 {
            return bad("n_real must be positive".into());
        }
        if self.channels < 4 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad(format!(
                "{} channels must be >= 4 and divisible by {} heads",
                self.channels, self.heads
            ));
        }
        if self.decoder_layers == 0 || self.hidden == 0 || self.sampling_points == 0 || self.sd_sampling_points == 0 {
            return bad("layer, hidden and sampling-point counts must be positive".into());
        }
        if self.sd_types == 0 {
            return bad("sd_types must be positive".into());
        }
        if !(self.z_range[0] < self.z_range[1]) {
            return bad("z_range must be increasing".into());
        }
        for (name, t) in [
            ("mask_attention_threshold", self.mask_attention_threshold),
            ("validity_threshold", self.validity_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("{name} must lie in (0, 1)"));
            }
        }
        if !(self.outlier_threshold > 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("outlier_threshold must be positive and noise_sigma non-negative".into());
        }
        if self.toggles.pmf && !self.toggles.pgm {
            return bad("points-mask fusion requires points-guided masks (enable pgm or disable pmf)".into());
        }
        Ok(())
    }

    fn decoder_dims(&self) -> DecoderDims {
        DecoderDims {
            n_real: self.n_real,
            n_virtual: self.n_virtual,
            channels: self.channels,
            hidden: self.hidden,
            layers: self.decoder_layers,
            heads: self.heads,
            sampling_points: self.sampling_points,
            k: self.k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineWeights {
    pub sd_table: SemanticEmbeddingTable,
    pub sd: SdInteractionWeights,
    pub decoder: DecoderWeights,
    pub mask_encoder: MaskQueryEncoder,
    pub topology: TopologyWeights,
    pub columns: ReadoutHeads,
    pub rows: ReadoutHeads,
}

struct Slot<'a> {
    name: String,
    shape: Vec<usize>,
    data: &'a mut [f64],
}

fn linear_slots<'a>(out: &mut Vec<Slot<'a>>, name: &str, l: &'a mut Linear) {
    let shape = vec![l.weight.rows(), l.weight.cols()];
    out.push(Slot {
        name: format!("{name}.weight"),
        shape,
        data: l.weight.data_mut(),
    });
    out.push(Slot {
        name: format!("{name}.bias"),
        shape: vec![l.bias.len()],
        data: &mut l.bias,
    });
}

fn matrix_slot<'a>(out: &mut Vec<Slot<'a>>, name: String, m: &'a mut Matrix) {
    let shape = vec![m.rows(), m.cols()];
    out.push(Slot {
        name,
        shape,
        data: m.data_mut(),
    });
}

fn mlp_slots<'a>(out: &mut Vec<Slot<'a>>, name: &str, m: &'a mut MlpWeights) {
    for (i, l) in m.layers.iter_mut().enumerate() {
        linear_slots(out, &format!("{name}.{i}"), l);
    }
}

fn deform_slots<'a>(out: &mut Vec<Slot<'a>>, name: &str, d: &'a mut DeformableAttnWeights) {
    linear_slots(out, &format!("{name}.value"), &mut d.value);
    linear_slots(out, &format!("{name}.offsets"), &mut d.offsets);
    linear_slots(out, &format!("{name}.attention"), &mut d.attention);
    matrix_slot(out, format!("{name}.output"), &mut d.output);
}

fn ffn_slots<'a>(out: &mut Vec<Slot<'a>>, name: &str, f: &'a mut FeedForward) {
    linear_slots(out, &format!("{name}.up"), &mut f.up);
    linear_slots(out, &format!("{name}.down"), &mut f.down);
}

impl PipelineWeights {
    /// Random initialisation from `cfg.seed`.
    pub fn init(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let c = cfg.channels;
        let cells = cfg.grid.cells();
        Ok(Self {
            sd_table: SemanticEmbeddingTable::random(cfg.sd_types as usize, c, &mut rng),
            sd: SdInteractionWeights::random(
                cfg.sd_layers,
                c,
                cfg.heads,
                cfg.sd_sampling_points,
                cfg.hidden,
                &mut rng,
            ),
            decoder: DecoderWeights::random(&cfg.decoder_dims(), &mut rng),
            mask_encoder: MaskQueryEncoder::random(c, cfg.k, &mut rng),
            topology: TopologyWeights::random(c, cfg.k, cfg.hidden, &mut rng),
            columns: ReadoutHeads::random(cells, cfg.grid.width, c, &mut rng),
            rows: ReadoutHeads::random(cells, cfg.grid.height, c, &mut rng),
        })
    }

    fn slots(&mut self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        let t = &mut self.sd_table;
        let c = t.default.len();
        out.push(Slot {
            name: "sd_table.default".into(),
            shape: vec![c],
            data: &mut t.default,
        });
        for (i, v) in t.types.iter_mut().enumerate() {
            out.push(Slot {
                name: format!("sd_table.types.{i}"),
                shape: vec![c],
                data: v,
            });
        }
        for (i, l) in self.sd.layers.iter_mut().enumerate() {
            deform_slots(&mut out, &format!("sd.{i}.self_attn"), &mut l.self_attn);
            deform_slots(&mut out, &format!("sd.{i}.cross_attn"), &mut l.cross_attn);
            ffn_slots(&mut out, &format!("sd.{i}.ffn"), &mut l.ffn);
        }
        let d = &mut self.decoder;
        matrix_slot(&mut out, "decoder.queries.real".into(), &mut d.queries.real);
        matrix_slot(&mut out, "decoder.queries.virtual".into(), &mut d.queries.virt);
        matrix_slot(&mut out, "decoder.init_refs".into(), &mut d.init_refs);
        for (i, l) in d.layers.iter_mut().enumerate() {
            deform_slots(&mut out, &format!("decoder.{i}.deform"), &mut l.deform);
            ffn_slots(&mut out, &format!("decoder.{i}.ffn"), &mut l.ffn);
        }
        mlp_slots(&mut out, "decoder.points_head", &mut d.points_head);
        mlp_slots(&mut out, "decoder.score_head", &mut d.score_head);
        let e = &mut self.mask_encoder;
        mlp_slots(&mut out, "mask_encoder.point", &mut e.point_mlp);
        mlp_slots(&mut out, "mask_encoder.fuse", &mut e.fuse_mlp);
        mlp_slots(&mut out, "mask_encoder.query", &mut e.query_mlp);
        let t = &mut self.topology;
        mlp_slots(&mut out, "topology.psi1", &mut t.psi1);
        mlp_slots(&mut out, "topology.psi2", &mut t.psi2);
        mlp_slots(&mut out, "topology.classifier", &mut t.classifier);
        for (name, h) in [("columns", &mut self.columns), ("rows", &mut self.rows)] {
            mlp_slots(&mut out, &format!("{name}.existence"), &mut h.existence);
            mlp_slots(&mut out, &format!("{name}.direction"), &mut h.direction);
        }
        out
    }

    pub fn to_file(&self) -> WeightsFile {
        let mut copy = self.clone();
        WeightsFile::new(
            copy.slots()
                .into_iter()
                .map(|s| NamedTensor::encode(&s.name, &s.shape, s.data))
                .collect(),
        )
    }

    /// Loads every tensor of a weights file into the layout implied by `cfg`.
    /// Missing, extra or mis-shaped tensors are errors.
    pub fn from_file(cfg: &PipelineConfig, file: &WeightsFile) -> Result<Self> {
        file.check_header()?;
        let mut w = Self::init(cfg)?;
        let mut slots = w.slots();
        if slots.len() != file.tensors.len() {
            return Err(Error::Weights(format!(
                "file has {} tensors, config expects {}",
                file.tensors.len(),
                slots.len()
            )));
        }
        for slot in &mut slots {
            let t = file
                .tensors
                .iter()
                .find(|t| t.name == slot.name)
                .ok_or_else(|| Error::Weights(format!("missing tensor {}", slot.name)))?;
            if t.shape != slot.shape {
                return Err(Error::Weights(format!(
                    "{}: shape {:?}, expected {:?}",
                    t.name, t.shape, slot.shape
                )));
            }
            slot.data.copy_from_slice(&t.decode()?);
        }
        drop(slots);
        Ok(w)
    }
}

/// One decoder slot after the whole pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneOutput {
    /// Points regressed by the decoder.
    pub detected: Polyline,
    /// Final points: fused for real slots when fusion is on.
    pub points: Polyline,
    pub score: f64,
    pub is_real: bool,
    pub query: Vec<f64>,
    pub mask: InstanceMask,
    pub columns: Option<MaskPointReadout>,
    pub rows: Option<MaskPointReadout>,
    /// Readout used for fusion; `None` when fusion is off.
    pub selected: Option<Axis>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub lanes: Vec<LaneOutput>,
    pub adjacency: Matrix,
    pub report: EvalReport,
}

impl PipelineOutput {
    pub fn loss_inputs(&self) -> Vec<PredictedInstance> {
        self.lanes
            .iter()
            .map(|l| PredictedInstance {
                points: l.points.clone(),
                score: l.score,
                is_real: l.is_real,
                mask: Some(l.mask.clone()),
                columns: l.columns.clone(),
                rows: l.rows.clone(),
            })
            .collect()
    }

    pub fn to_file(&self, cfg: &PipelineConfig) -> PredictionFile {
        PredictionFile {
            version: SCENE_VERSION,
            units: SCENE_UNITS.into(),
            grid: cfg.grid,
            toggles: cfg.toggles,
            lanes: self
                .lanes
                .iter()
                .map(|l| PredictedLane {
                    points: l.points.clone(),
                    score: l.score,
                    is_real: l.is_real,
                    mask_rle: rle_encode(&l.mask.binarize()),
                })
                .collect(),
            adjacency: (0..self.adjacency.rows())
                .map(|i| self.adjacency.row(i).to_vec())
                .collect(),
            report: self.report.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedLane {
    pub points: Polyline,
    pub score: f64,
    pub is_real: bool,
    /// Binarized instance mask, run lengths starting with empty cells.
    pub mask_rle: Vec<u32>,
}

/// The `run` output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub version: u32,
    pub units: String,
    pub grid: GridSpec,
    pub toggles: Toggles,
    pub lanes: Vec<PredictedLane>,
    /// `adjacency[i][j]`: probability that lane `i` flows into lane `j`.
    pub adjacency: Vec<Vec<f64>>,
    pub report: EvalReport,
}

impl PredictionFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        let n = p.lanes.len();
        if p.version != SCENE_VERSION || p.units != SCENE_UNITS {
            return Err(Error::Format(format!(
                "unsupported prediction file v{} ({})",
                p.version, p.units
            )));
        }
        if p.adjacency.len() != n || p.adjacency.iter().any(|r| r.len() != n) {
            return Err(Error::Format(format!("adjacency must be {n}x{n}")));
        }
        Ok(p)
    }

    /// Recomputes the metrics of the stored predictions against `scene`.
    pub fn evaluate(&self, scene: &Scene, metrics: &MetricConfig) -> Result<EvalReport> {
        let points: Vec<Polyline> = self.lanes.iter().map(|l| l.points.clone()).collect();
        let scores: Vec<f64> = self.lanes.iter().map(|l| l.score).collect();
        let masks = self
            .lanes
            .iter()
            .map(|l| {
                Ok(rle_decode(&l.mask_rle, self.grid.cells())?
                    .into_iter()
                    .map(|b| if b { 1.0 } else { -1.0 })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let n = self.lanes.len();
        let adj = Matrix::from_vec(n, n, self.adjacency.iter().flatten().copied().collect())?;
        Ok(evaluate(&points, &scores, &masks, &adj, scene, &self.grid, metrics))
    }
}

/// DET_l, TOP_ll and AP_l of all prediction slots against every scene
/// centerline.
pub fn evaluate(
    points: &[Polyline],
    scores: &[f64],
    mask_logits: &[Vec<f64>],
    adjacency: &Matrix,
    scene: &Scene,
    grid: &GridSpec,
    m: &MetricConfig,
) -> EvalReport {
    let (det, det_per) = det_l(points, scores, &scene.centerlines, &m.frechet_thresholds);
    let top = top_ll(
        points,
        scores,
        adjacency,
        &scene.centerlines,
        &scene.adjacency,
        m.topology_match_threshold,
    );
    let gt_masks: Vec<Vec<bool>> = scene
        .centerlines
        .iter()
        .map(|l| gt_mask(grid, l).iter().map(|&v| v > 0.5).collect())
        .collect();
    let (ap, ap_per) = mask_ap(mask_logits, scores, &gt_masks, &m.iou_thresholds);
    EvalReport {
        det_l: det,
        top_ll: top,
        ap_l: ap,
        det_l_per_threshold: det_per,
        ap_l_per_threshold: ap_per,
    }
}

/// BEV features the pipeline sees for `scene` when none are supplied.
pub fn render_for(scene: &Scene, cfg: &PipelineConfig) -> Result<BevGrid> {
    render_bev_features(scene, &cfg.grid, cfg.channels, cfg.noise_sigma, cfg.seed ^ scene.seed)
}

/// Runs the full pipeline on `scene`. `bev` replaces the rendered features
/// when given.
pub fn run_pipeline(
    scene: &Scene,
    cfg: &PipelineConfig,
    weights: &PipelineWeights,
    bev: Option<&BevGrid>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let rendered;
    let b = match bev {
        Some(b) => {
            if b.spec != cfg.grid || b.channels != cfg.channels {
                return Err(Error::Config(
                    "BEV features do not match the configured grid and channels".into(),
                ));
            }
            b
        }
        None => {
            rendered = render_for(scene, cfg)?;
            &rendered
        }
    };
    let b_hat = if cfg.toggles.sd {
        let e_s = rasterize_sdmap(&scene.sd_instances, &cfg.grid, &weights.sd_table)?;
        let e_p = sinusoidal_pe_2d(&cfg.grid, cfg.channels)?;
        sd_interact(b, &e_s, &e_p, &weights.sd)?
    } else {
        b.clone()
    };
    let range = cfg.range();
    let opts = DecoderOptions {
        hybrid: cfg.toggles.hybrid,
        rvs: cfg.toggles.rvs,
        pgm: cfg.toggles.pgm,
        mask_threshold: cfg.mask_attention_threshold,
        range,
    };
    let dec = decoder_forward(
        &weights.decoder.queries,
        &b_hat,
        &weights.decoder,
        &weights.mask_encoder,
        &opts,
    )?;

    let q = dec.queries.stacked();
    let norm_pts: Vec<_> = dec
        .predictions
        .iter()
        .map(|p| normalized_points(&p.points, &range))
        .collect();
    let e = enhance_queries(&q, &norm_pts, &weights.topology.psi1, &weights.topology.psi2)?;
    let adjacency = predict_topology(&e, &weights.topology.classifier)?;

    let mut lanes = Vec::with_capacity(dec.predictions.len());
    for (i, p) in dec.predictions.iter().enumerate() {
        let q_prime = encode_mask_query(q.row(i), &norm_pts[i], &weights.mask_encoder, cfg.toggles.pgm)?;
        let mask = generate_mask(&b_hat, &q_prime)?;
        let (mut columns, mut rows, mut selected, mut points) = (None, None, None, p.points.clone());
        if p.is_real {
            let col = read_mask(&mask, &q_prime, &weights.columns, Axis::Columns)?;
            let row = read_mask(&mask, &q_prime, &weights.rows, Axis::Rows)?;
            let chosen = select_point_set(&col, &row, cfg.validity_threshold);
            if cfg.toggles.pmf {
                assert!(p.is_real, "fusion is only defined for real centerlines");
                points = fuse_points(&p.points, chosen, &cfg.grid, cfg.k, cfg.outlier_threshold)?;
                selected = Some(chosen.axis);
            }
            columns = Some(col);
            rows = Some(row);
        }
        lanes.push(LaneOutput {
            detected: p.points.clone(),
            points,
            score: p.score,
            is_real: p.is_real,
            query: p.query.clone(),
            mask,
            columns,
            rows,
            selected,
        });
    }

    let points: Vec<Polyline> = lanes.iter().map(|l| l.points.clone()).collect();
    let scores: Vec<f64> = lanes.iter().map(|l| l.score).collect();
    let masks: Vec<Vec<f64>> = lanes.iter().map(|l| l.mask.logits.clone()).collect();
    let report = evaluate(&points, &scores, &masks, &adjacency, scene, &cfg.grid, &cfg.metrics);
    Ok(PipelineOutput {
        lanes,
        adjacency,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pgm: bool,
    pub pmf: bool,
    pub sd: bool,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Runs every `{PGM, PMF, SD}` combination with the other settings of
/// `cfg`. Invalid combinations are recorded with their error.
pub fn ablation_grid(scene: &Scene, cfg: &PipelineConfig, weights: &PipelineWeights) -> Result<Vec<AblationRow>> {
    let bev = render_for(scene, cfg)?;
    let mut rows = Vec::new();
    for pgm in [false, true] {
        for pmf in [false, true] {
            for sd in [false, true] {
                let mut c = cfg.clone();
                c.toggles = Toggles {
                    pgm,
                    pmf,
                    sd,
                    ..cfg.toggles
                };
                let (report, error) = match run_pipeline(scene, &c, weights, Some(&bev)) {
                    Ok(out) => (Some(out.report), None),
                    Err(e @ Error::Config(_)) => (None, Some(e.to_string())),
                    Err(e) => return Err(e),
                };
                rows.push(AblationRow {
                    pgm,
                    pmf,
                    sd,
                    report,
                    error,
                });
            }
        }
    }
    Ok(rows)
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { " " };
    let mut out = String::from("PGM PMF SD  | DET_l  TOP_ll AP_l\n");
    out.push_str("------------+--------------------\n");
    for r in rows {
        let scores = match (&r.report, &r.error) {
            (Some(rep), _) => format!("{:.4} {:.4} {:.4}", rep.det_l, rep.top_ll, rep.ap_l),
            (None, Some(e)) => format!("invalid: {e}"),
            _ => String::new(),
        };
        out.push_str(&format!(
            " {}   {}   {}  | {scores}\n",
            mark(r.pgm),
            mark(r.pmf),
            mark(r.sd)
        ));
    }
    out
}

fn min_norm_solve(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    x.clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| Error::Infeasible(format!("least-squares fit failed: {e}")))
}

/// Weights whose decoder reproduces the scene's centerlines exactly: real
/// slots `0..` take the real lanes and virtual slots the virtual lanes in
/// scene order; those slots score near 1 and all others near 0, and no
/// connection is predicted.
///
/// The construction zeroes every decoder deformable output projection, so
/// with masked cross-attention off the final queries do not depend on the BEV
/// features; the points and score heads are then fitted to those queries by
/// minimum-norm least squares.
pub fn oracle_weights(cfg: &PipelineConfig, scene: &Scene) -> Result<PipelineWeights> {
    if cfg.toggles.hybrid {
        return Err(Error::Config(
            "oracle weights require masked cross-attention off".into(),
        ));
    }
    let real = scene.indices(true);
    let virt = scene.indices(false);
    if real.len() > cfg.n_real || virt.len() > cfg.n_virtual {
        return Err(Error::Infeasible(format!(
            "scene has {}/{} real/virtual lanes, config has {}/{} slots",
            real.len(),
            virt.len(),
            cfg.n_real,
            cfg.n_virtual
        )));
    }
    let mut w = PipelineWeights::init(cfg)?;
    for l in &mut w.decoder.layers {
        l.deform.output = Matrix::zeros(cfg.channels, cfg.channels);
    }
    let range = cfg.range();
    let opts = DecoderOptions {
        hybrid: false,
        rvs: cfg.toggles.rvs,
        pgm: cfg.toggles.pgm,
        mask_threshold: cfg.mask_attention_threshold,
        range,
    };
    let zero = BevGrid::zeros(cfg.grid, cfg.channels);
    let q = decoder_forward(&w.decoder.queries, &zero, &w.decoder, &w.mask_encoder, &opts)?
        .queries
        .stacked();
    let n = q.rows();
    let assigned: Vec<(usize, usize)> = real
        .iter()
        .enumerate()
        .map(|(s, &g)| (s, g))
        .chain(virt.iter().enumerate().map(|(s, &g)| (cfg.n_real + s, g)))
        .collect();

    let features = |head: &MlpWeights, i: usize| -> Result<Vec<f64>> {
        let mut h = q.row(i).to_vec();
        for l in &head.layers[..head.layers.len() - 1] {
            h = l.forward(&h)?;
        }
        h.push(1.0);
        Ok(h)
    };
    let fit_last = |head: &mut MlpWeights, rows: &[usize], targets: &[Vec<f64>]| -> Result<()> {
        let feats = rows.iter().map(|&i| features(head, i)).collect::<Result<Vec<_>>>()?;
        let d = feats[0].len();
        let out = targets[0].len();
        let x = DMatrix::from_fn(rows.len(), d, |r, c| feats[r][c]);
        let y = DMatrix::from_fn(rows.len(), out, |r, c| targets[r][c]);
        let theta = min_norm_solve(&x, &y)?;
        let residual = (&x * &theta - &y).amax();
        if residual > 1e-6 {
            return Err(Error::Infeasible(format!("head fit residual {residual:.3e}")));
        }
        let last = head.layers.last_mut().unwrap();
        for o in 0..out {
            for c in 0..d - 1 {
                last.weight.set(o, c, theta[(c, o)]);
            }
            last.bias[o] = theta[(d - 1, o)];
        }
        Ok(())
    };

    if !assigned.is_empty() {
        let rows: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let targets: Vec<Vec<f64>> = assigned
            .iter()
            .map(|&(_, g)| {
                scene.centerlines[g]
                    .resample(cfg.k)
                    .points()
                    .iter()
                    .flat_map(|p| range.normalize(p).map(logit))
                    .collect()
            })
            .collect();
        fit_last(&mut w.decoder.points_head, &rows, &targets)?;
    }
    let all: Vec<usize> = (0..n).collect();
    let score_targets: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![if assigned.iter().any(|a| a.0 == i) { 8.0 } else { -8.0 }])
        .collect();
    fit_last(&mut w.decoder.score_head, &all, &score_targets)?;

    let cls = w.topology.classifier.layers.last_mut().unwrap();
    cls.weight = Matrix::zeros(cls.weight.rows(), cls.weight.cols());
    cls.bias.iter_mut().for_each(|b| *b = -8.0);
    Ok(w)
}
