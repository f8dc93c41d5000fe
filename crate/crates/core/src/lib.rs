//! Lane-centerline detection and topology reasoning on a bird's-eye-view
//! grid: SD-map fusion, a hybrid-attention decoder with real/virtual query
//! separation, points-guided masks with points-mask fusion, the matching and
//! loss stack, evaluation metrics and a synthetic scene harness.

pub mod attention;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod points_mask;
pub mod raster;
pub mod scene;
pub mod sdmap;
pub mod svg;
pub mod tensor;
pub mod topology;

pub use decoder::CenterlinePrediction;
pub use error::{Error, Result};
pub use geometry::Polyline;
pub use metrics::EvalReport;
pub use pipeline::{PipelineConfig, PipelineWeights, Toggles};
pub use points_mask::{InstanceMask, MaskPointReadout};
pub use scene::Scene;
pub use sdmap::SdMapInstance;
pub use tensor::{BevGrid, GridSpec};
