//! Per-vertex heatmap prediction over voxel grids with soft-argmax
//! localization, and the dual-estimator predictor pair.
//!
//! The desk-scale predictor kinds keep the prediction-head contract of
//! the full system (feature volume -> per-vertex heatmap -> soft-argmax)
//! without a convolutional backbone: the direct kind stores free logits
//! per vertex, the linear kind probes each voxel's fused features with a
//! per-vertex linear map.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureVolume;
use crate::grid::GridSpec;
use crate::mesh::TemplateMesh;
use crate::rng::Pcg32;

/// Logit bias added at voxels no view observed, so probability mass
/// avoids unobserved space.
pub const INVALID_VOXEL_LOGIT: f64 = -30.0;

/// Feature volume source for a set of vertices: the coarse stage shares
/// one global volume, the local stage gives every vertex its own.
#[derive(Clone, Copy)]
pub enum VolumeRef<'a> {
    Shared(&'a FeatureVolume),
    PerVertex(&'a [FeatureVolume]),
}

impl<'a> VolumeRef<'a> {
    #[inline]
    pub fn of(&self, vertex: usize) -> &'a FeatureVolume {
        match self {
            VolumeRef::Shared(v) => v,
            VolumeRef::PerVertex(vs) => &vs[vertex],
        }
    }
}

/// Per-vertex logits over a voxel grid.
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub n_vertices: usize,
    pub resolution: usize,
    logits: Vec<f64>,
}

impl CostVolume {
    pub fn new(n_vertices: usize, resolution: usize, logits: Vec<f64>) -> Result<Self> {
        let expect = n_vertices * resolution.pow(3);
        if logits.len() != expect {
            return Err(Error::Shape(format!(
                "cost volume has {} logits, expected {expect}",
                logits.len()
            )));
        }
        if !logits.iter().all(|l| l.is_finite()) {
            return Err(Error::Validation("cost volume contains non-finite logits".into()));
        }
        Ok(CostVolume {
            n_vertices,
            resolution,
            logits,
        })
    }

    #[inline]
    pub fn vertex_logits(&self, v: usize) -> &[f64] {
        let n = self.resolution.pow(3);
        &self.logits[v * n..(v + 1) * n]
    }
}

/// Softmax over a logit slice, written into `probs`.
fn softmax_into(logits: &[f64], probs: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        sum += *p;
    }
    let inv = 1.0 / sum;
    for p in probs.iter_mut() {
        *p *= inv;
    }
}

/// Probability-weighted sum of voxel centers.
fn expected_position(probs: &[f64], grid: &GridSpec) -> Point3<f64> {
    let mut acc = Vector3::zeros();
    for (voxel, &p) in probs.iter().enumerate() {
        acc += grid.center_of_index(voxel).coords * p;
    }
    Point3::from(acc)
}

/// Soft-argmax of every vertex heatmap: softmax over the voxel axis, then
/// the probability-weighted sum of voxel centers.
pub fn softargmax_vertices(cost: &CostVolume, grid: &GridSpec) -> Result<Vec<Point3<f64>>> {
    if grid.resolution != cost.resolution {
        return Err(Error::Shape(format!(
            "grid resolution {} does not match cost volume {}",
            grid.resolution, cost.resolution
        )));
    }
    let n_voxels = grid.n_voxels();
    Ok((0..cost.n_vertices)
        .into_par_iter()
        .map(|v| {
            let mut probs = vec![0.0; n_voxels];
            softmax_into(cost.vertex_logits(v), &mut probs);
            expected_position(&probs, grid)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    /// Parameters are the per-vertex logits themselves (input-independent).
    DirectVertex,
    /// Per-vertex linear probe of the fused voxel features plus a bias.
    LinearHeatmap,
}

impl PredictorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" | "direct-vertex" => Some(PredictorKind::DirectVertex),
            "linear" | "linear-heatmap" => Some(PredictorKind::LinearHeatmap),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::DirectVertex => "direct-vertex",
            PredictorKind::LinearHeatmap => "linear-heatmap",
        }
    }
}

/// Initialization style for a fresh predictor.
///
/// A flat uniform draw makes every soft-argmax land near the grid
/// centroid (the top logits of a large uniform sample are dense), so two
/// independently seeded estimators start out agreeing. The peaked draw
/// boosts one random voxel per vertex enough to dominate without
/// saturating the softmax, giving the dual pair genuinely diverse
/// starting predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitKind {
    #[default]
    Uniform,
    Peaked,
}

/// Shape and initialization hyperparameters shared by a dual pair.
#[derive(Debug, Clone, Copy)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub n_vertices: usize,
    /// Resolution of the grid the predictor emits heatmaps over.
    pub resolution: usize,
    /// Fused feature length per voxel (mean + variance); unused by the
    /// direct kind.
    pub feature_len: usize,
    /// Half-range of the uniform initialization draw.
    pub init_scale: f64,
    pub init: InitKind,
}

impl PredictorSpec {
    pub fn new(kind: PredictorKind, n_vertices: usize, resolution: usize, feature_len: usize) -> Self {
        PredictorSpec {
            kind,
            n_vertices,
            resolution,
            feature_len,
            init_scale: 0.01,
            init: InitKind::Uniform,
        }
    }

    pub fn with_init_scale(mut self, scale: f64) -> Self {
        self.init_scale = scale;
        self
    }

    pub fn with_peaked_init(mut self) -> Self {
        self.init = InitKind::Peaked;
        self
    }

    /// Parameters per vertex.
    pub fn stride(&self) -> usize {
        match self.kind {
            PredictorKind::DirectVertex => self.resolution.pow(3),
            PredictorKind::LinearHeatmap => self.feature_len + 1,
        }
    }

    pub fn param_len(&self) -> usize {
        self.n_vertices * self.stride()
    }
}

/// One estimator: kind, flat parameter vector, and the seed it was drawn
/// from.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub spec: PredictorSpec,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl Predictor {
    /// Fresh predictor with parameters uniform in
    /// [-init_scale, init_scale]; the peaked variant then boosts one
    /// random voxel per vertex to `ln(n_voxels) + 2`, which puts roughly
    /// 0.9 of the softmax mass there while staying trainable.
    pub fn init(spec: PredictorSpec, seed: u64) -> Self {
        let mut rng = Pcg32::new(seed);
        let mut params: Vec<f64> = (0..spec.param_len())
            .map(|_| rng.range_f64(-spec.init_scale, spec.init_scale))
            .collect();
        if spec.init == InitKind::Peaked && spec.kind == PredictorKind::DirectVertex {
            let n_voxels = spec.resolution.pow(3);
            let peak = (n_voxels as f64).ln() + 2.0;
            for v in 0..spec.n_vertices {
                let j = rng.below(n_voxels as u32) as usize;
                params[v * n_voxels + j] += peak;
            }
        }
        Predictor { spec, seed, params }
    }

    pub fn from_params(spec: PredictorSpec, seed: u64, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_len() {
            return Err(Error::Configuration(format!(
                "predictor expects {} parameters, got {}",
                spec.param_len(),
                params.len()
            )));
        }
        Ok(Predictor { spec, seed, params })
    }

    #[inline]
    pub fn vertex_params(&self, v: usize) -> &[f64] {
        let s = self.spec.stride();
        &self.params[v * s..(v + 1) * s]
    }

    /// Heatmap logits of one vertex over `volume`'s grid.
    pub fn vertex_logits_into(&self, v: usize, volume: &FeatureVolume, out: &mut [f64]) {
        let n_voxels = volume.spec.n_voxels();
        debug_assert_eq!(out.len(), n_voxels);
        match self.spec.kind {
            PredictorKind::DirectVertex => {
                out.copy_from_slice(self.vertex_params(v));
            }
            PredictorKind::LinearHeatmap => {
                let p = self.vertex_params(v);
                let (w, b) = p.split_at(self.spec.feature_len);
                let mut fused = vec![0.0; volume.fused_len()];
                for (voxel, slot) in out.iter_mut().enumerate() {
                    volume.fused_into(voxel, &mut fused);
                    let mut logit = b[0];
                    for (wi, fi) in w.iter().zip(&fused) {
                        logit += wi * fi;
                    }
                    if !volume.is_valid(voxel) {
                        logit += INVALID_VOXEL_LOGIT;
                    }
                    *slot = logit;
                }
            }
        }
    }

    fn check_volume(&self, volume: &FeatureVolume) -> Result<()> {
        if volume.spec.resolution != self.spec.resolution {
            return Err(Error::Configuration(format!(
                "predictor emits {}^3 heatmaps but the volume grid is {}^3",
                self.spec.resolution, volume.spec.resolution
            )));
        }
        if self.spec.kind == PredictorKind::LinearHeatmap
            && volume.fused_len() != self.spec.feature_len
        {
            return Err(Error::Configuration(format!(
                "predictor probes {} feature channels but the volume provides {}",
                self.spec.feature_len,
                volume.fused_len()
            )));
        }
        Ok(())
    }

    /// Full cost volume over every vertex.
    pub fn cost_volume(&self, volume: &FeatureVolume) -> Result<CostVolume> {
        self.check_volume(volume)?;
        let n_voxels = volume.spec.n_voxels();
        let mut logits = vec![0.0; self.spec.n_vertices * n_voxels];
        logits
            .par_chunks_mut(n_voxels)
            .enumerate()
            .for_each(|(v, out)| self.vertex_logits_into(v, volume, out));
        CostVolume::new(self.spec.n_vertices, self.spec.resolution, logits)
    }

    /// Soft-argmax positions for every vertex; all vertices share `volume`.
    pub fn predict_positions(&self, volume: &FeatureVolume) -> Result<Vec<Point3<f64>>> {
        self.check_volume(volume)?;
        let n_voxels = volume.spec.n_voxels();
        Ok((0..self.spec.n_vertices)
            .into_par_iter()
            .map(|v| {
                let mut logits = vec![0.0; n_voxels];
                let mut probs = vec![0.0; n_voxels];
                self.vertex_logits_into(v, volume, &mut logits);
                softmax_into(&logits, &mut probs);
                expected_position(&probs, &volume.spec)
            })
            .collect())
    }

    /// Soft-argmax positions where vertex `i` has its own local volume.
    pub fn predict_positions_local(&self, volumes: &[FeatureVolume]) -> Result<Vec<Point3<f64>>> {
        if volumes.len() != self.spec.n_vertices {
            return Err(Error::Shape(format!(
                "{} local volumes for {} vertices",
                volumes.len(),
                self.spec.n_vertices
            )));
        }
        for vol in volumes {
            self.check_volume(vol)?;
        }
        Ok(volumes
            .par_iter()
            .enumerate()
            .map(|(v, vol)| {
                let n_voxels = vol.spec.n_voxels();
                let mut logits = vec![0.0; n_voxels];
                let mut probs = vec![0.0; n_voxels];
                self.vertex_logits_into(v, vol, &mut logits);
                softmax_into(&logits, &mut probs);
                expected_position(&probs, &vol.spec)
            })
            .collect())
    }

    /// Accumulate d(loss)/d(params) given d(loss)/d(position) per vertex.
    ///
    /// The soft-argmax Jacobian gives, per voxel j of vertex v,
    /// `s_j = p_j * (c_j - pos_v) . g_v`; the direct kind stores `s_j`
    /// directly, the linear kind chains it through the feature probe.
    /// The bias gradient is identically zero (softmax shift invariance)
    /// and is skipped.
    pub fn accumulate_param_grads(
        &self,
        volumes: VolumeRef<'_>,
        positions: &[Point3<f64>],
        pos_grads: &[Vector3<f64>],
        grads: &mut [f64],
    ) {
        assert_eq!(grads.len(), self.params.len());
        let stride = self.spec.stride();
        grads
            .par_chunks_mut(stride)
            .enumerate()
            .for_each(|(v, gslice)| {
                let g = pos_grads[v];
                if g == Vector3::zeros() {
                    return;
                }
                let volume = volumes.of(v);
                let n_voxels = volume.spec.n_voxels();
                let mut logits = vec![0.0; n_voxels];
                let mut probs = vec![0.0; n_voxels];
                self.vertex_logits_into(v, volume, &mut logits);
                softmax_into(&logits, &mut probs);
                let pos = positions[v];
                match self.spec.kind {
                    PredictorKind::DirectVertex => {
                        for (j, out) in gslice.iter_mut().enumerate() {
                            let c = volume.spec.center_of_index(j);
                            *out += probs[j] * (c - pos).dot(&g);
                        }
                    }
                    PredictorKind::LinearHeatmap => {
                        let mut fused = vec![0.0; volume.fused_len()];
                        for (j, &prob) in probs.iter().enumerate() {
                            let c = volume.spec.center_of_index(j);
                            let s = prob * (c - pos).dot(&g);
                            if s == 0.0 {
                                continue;
                            }
                            volume.fused_into(j, &mut fused);
                            for (gw, f) in gslice[..self.spec.feature_len].iter_mut().zip(&fused)
                            {
                                *gw += s * f;
                            }
                        }
                    }
                }
            });
    }

    pub fn apply_step(&mut self, grads: &[f64], step_size: f64) {
        assert_eq!(grads.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= step_size * g;
        }
    }
}

/// Two estimators with identical shape and hyperparameters but
/// independent initialization seeds.
pub fn make_dual_pair(
    spec: PredictorSpec,
    seed_a: u64,
    seed_b: u64,
) -> Result<(Predictor, Predictor)> {
    if seed_a == seed_b {
        return Err(Error::Configuration(format!(
            "dual estimators need distinct seeds (both {seed_a})"
        )));
    }
    Ok((Predictor::init(spec, seed_a), Predictor::init(spec, seed_b)))
}

/// Coarse-stage prediction: per-vertex heatmaps over the global volume,
/// soft-argmaxed into a mesh in the template topology.
pub fn coarse_predict(
    volume: &FeatureVolume,
    predictor: &Predictor,
    template: &TemplateMesh,
) -> Result<TemplateMesh> {
    if template.n_vertices() != predictor.spec.n_vertices {
        return Err(Error::Configuration(format!(
            "predictor covers {} vertices but the template has {}",
            predictor.spec.n_vertices,
            template.n_vertices()
        )));
    }
    let positions = predictor.predict_positions(volume)?;
    template.with_vertices(positions)
}

/// Local-stage grid and visibility settings.
#[derive(Debug, Clone, Copy)]
pub struct LocalStageParams {
    pub resolution: usize,
    pub voxel_edge: f64,
    pub rho: f64,
    pub rule: crate::visibility::VisibilityRule,
}

impl Default for LocalStageParams {
    fn default() -> Self {
        LocalStageParams {
            resolution: 8,
            voxel_edge: 0.002,
            rho: 0.1,
            rule: crate::visibility::VisibilityRule::FrontWithMargin,
        }
    }
}

/// Per-vertex local feature volumes around the coarse mesh, with cosine
/// view weighting against the coarse vertex normals.
pub fn build_local_volumes(
    coarse: &TemplateMesh,
    fmaps: &[crate::features::FeatureMap],
    rig: &crate::camera::CameraRig,
    hull_depths: &[crate::raster::DepthMap],
    norm_grid: &GridSpec,
    params: &LocalStageParams,
) -> Result<Vec<FeatureVolume>> {
    let normals = coarse.vertex_normals();
    coarse
        .vertices
        .par_iter()
        .zip(normals.par_iter())
        .map(|(vertex, normal)| {
            crate::features::build_local_volume(
                vertex,
                normal,
                fmaps,
                rig,
                hull_depths,
                norm_grid,
                params.rho,
                params.rule,
                params.resolution,
                params.voxel_edge,
            )
            .map(|(volume, _)| volume)
        })
        .collect()
}

/// Local refinement: per vertex, predict a heatmap over the small grid
/// centered at the coarse position and soft-argmax inside it. The
/// displacement is bounded by the local grid's half-diagonal by
/// construction.
pub fn local_refine(
    coarse: &TemplateMesh,
    predictor: &Predictor,
    fmaps: &[crate::features::FeatureMap],
    rig: &crate::camera::CameraRig,
    hull_depths: &[crate::raster::DepthMap],
    norm_grid: &GridSpec,
    params: &LocalStageParams,
) -> Result<TemplateMesh> {
    if coarse.n_vertices() != predictor.spec.n_vertices {
        return Err(Error::Configuration(format!(
            "predictor covers {} vertices but the coarse mesh has {}",
            predictor.spec.n_vertices,
            coarse.n_vertices()
        )));
    }
    let volumes = build_local_volumes(coarse, fmaps, rig, hull_depths, norm_grid, params)?;
    let refined = predictor.predict_positions_local(&volumes)?;
    coarse.with_vertices(refined)
}
