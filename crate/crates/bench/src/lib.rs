//! Fixtures shared by the criterion benches.

use roadpainter::geometry::Polyline;
use roadpainter::loss::oracle_instance;
use roadpainter::pipeline::{render_for, PipelineConfig, PipelineWeights};
use roadpainter::points_mask::MaskPointReadout;
use roadpainter::scene::{synth_scene, Scene, SynthParams};
use roadpainter::tensor::BevGrid;

/// Two scene centerlines with `GT_POINTS` points each.
pub fn gt_pair() -> (Polyline, Polyline) {
    let s = smoke_scene();
    (s.centerlines[0].clone(), s.centerlines[1].clone())
}

pub fn smoke_scene() -> Scene {
    synth_scene(42, &SynthParams::default()).expect("default params are feasible")
}

pub struct PipelineFixture {
    pub scene: Scene,
    pub config: PipelineConfig,
    pub weights: PipelineWeights,
    pub bev: BevGrid,
}

pub fn pipeline_fixture(config: PipelineConfig) -> PipelineFixture {
    let scene = smoke_scene();
    let weights = PipelineWeights::init(&config).expect("valid config");
    let bev = render_for(&scene, &config).expect("valid config");
    PipelineFixture {
        scene,
        config,
        weights,
        bev,
    }
}

/// A regressed centerline shifted 0.8 m off the first real lane, and the
/// oracle column readout of that lane.
pub fn fusion_inputs(config: &PipelineConfig) -> (Polyline, MaskPointReadout) {
    let scene = smoke_scene();
    let i = scene.indices(true)[0];
    let inst = oracle_instance(&scene.centerlines[i], true, &config.grid, config.k, 20.0);
    let detected = inst.points.translated([0.0, 0.8, 0.0]);
    (detected, inst.columns.expect("real instances carry readouts"))
}
