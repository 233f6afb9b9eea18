//! Multi-view topologically consistent capture pipeline.
//!
//! The stages mirror a capture session end to end: silhouette masks are
//! carved into a seen-count occupancy grid and a visual hull, the hull's
//! depth maps gate which views each voxel may aggregate 2D features
//! from, fused mean/variance volumes feed per-vertex heatmap predictors
//! whose soft-argmax yields a mesh in a fixed topology, and a
//! dual-estimator schedule trains those predictors with
//! disagreement-filtered vertex and point-to-surface losses so noisy
//! registrations and scan outliers stop polluting the supervision.

pub mod bvh;
pub mod camera;
pub mod carve;
pub mod config;
pub mod error;
pub mod features;
pub mod fit;
pub mod grid;
pub mod io;
pub mod march;
pub mod mask;
pub mod mesh;
pub mod metrics;
pub mod predict;
pub mod raster;
pub mod rng;
pub mod supervision;
pub mod synth;
pub mod visibility;

pub use camera::{Camera, CameraRig};
pub use carve::{carve_occupancy, extract_hull, hull_bounds, OccupancyGrid};
pub use error::{Error, Result};
pub use features::{
    build_global_volume, build_local_volume, extract_features, fuse_mean_variance,
    sample_bilinear, AnalyticExtractor, FeatureExtractor, FeatureMap, FeatureVolume, RgbImage,
};
pub use fit::{
    dual_update_step, run_schedule, FilterMode, FitContext, FitOptions, LossWeights, Stage,
    StepReport,
};
pub use grid::GridSpec;
pub use mask::BinaryMask;
pub use mesh::{HullMesh, Region, Scan, TemplateMesh};
pub use metrics::{compute_metrics, ErrorReport};
pub use predict::{
    build_local_volumes, coarse_predict, local_refine, make_dual_pair, softargmax_vertices,
    CostVolume, LocalStageParams, Predictor, PredictorKind, PredictorSpec,
};
pub use raster::{render_depth, DepthMap};
pub use supervision::{
    p2s_distance, p2s_mask, robust_p2s_loss, robust_v2v_loss, v2v_mask, DisagreementMask,
    MeshDistance,
};
pub use synth::{icosphere, inject_scan_noise, make_scene, Scene, SceneSpec, Shape};
pub use visibility::{grid_visibility, voxel_visibility, VisibilityMask, VisibilityRule};

/// Cap worker parallelism from the HULLCAP_THREADS environment variable.
/// Call once at process start; later calls are no-ops once a pool exists.
pub fn configure_threads() {
    if let Ok(raw) = std::env::var("HULLCAP_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
