//! Dual-estimator update schedule: each step computes both predictions,
//! filters each estimator's supervision with the masks derived from its
//! peer, and applies independent gradient steps.

use nalgebra::{Point3, Vector3};

use crate::bvh::{MeshHit, TriangleBvh};
use crate::error::{Error, Result};
use crate::features::FeatureVolume;
use crate::mesh::{Scan, TemplateMesh};
use crate::predict::{Predictor, VolumeRef};
use crate::supervision::{p2s_mask, v2v_mask, DisagreementMask, MeshDistance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Coarse,
    Local,
}

/// Disagreement filtering on, or plain unmasked losses (the baseline the
/// robust losses are measured against).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    #[default]
    Disagreement,
    None,
}

impl FilterMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "disagreement" | "robust" => Some(FilterMode::Disagreement),
            "none" | "plain" => Some(FilterMode::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub v2v: f64,
    pub p2s: f64,
    /// Optional smoothness coupling for the direct-vertex kind; not part
    /// of the disagreement method itself.
    pub laplacian: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            v2v: 1.0,
            p2s: 1.0,
            laplacian: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub stage: Stage,
    pub weights: LossWeights,
    pub step_size: f64,
    pub filter: FilterMode,
    pub optimizer: Optimizer,
    /// Steps at the start of a schedule that run with the filter off, so
    /// every vertex first acquires a correspondence before the
    /// disagreement rule starts discarding supervision (mirrors the
    /// early phase where both estimators still disagree everywhere).
    pub warmup_steps: usize,
}

/// Parameter update rule. Soft-argmax logits see gradients whose scale
/// swings with how concentrated each heatmap is, so Adam is the usable
/// default; plain descent stays available for the convex sanity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

/// First/second-moment state for one estimator's parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Optimizer state for the dual pair, owned across steps by the caller.
#[derive(Debug, Clone)]
pub struct DualOptimizer {
    pub a: AdamState,
    pub b: AdamState,
}

impl DualOptimizer {
    pub fn new(pair: &(Predictor, Predictor)) -> Self {
        DualOptimizer {
            a: AdamState::new(pair.0.params.len()),
            b: AdamState::new(pair.1.params.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub starved_delta_a: bool,
    pub starved_delta_b: bool,
    pub starved_omega_a: bool,
    pub starved_omega_b: bool,
    pub skipped_a: bool,
    pub skipped_b: bool,
}

impl StepFlags {
    pub fn any(&self) -> bool {
        self.starved_delta_a
            || self.starved_delta_b
            || self.starved_omega_a
            || self.starved_omega_b
            || self.skipped_a
            || self.skipped_b
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.starved_delta_a, "starved_delta_a"),
            (self.starved_delta_b, "starved_delta_b"),
            (self.starved_omega_a, "starved_omega_a"),
            (self.starved_omega_b, "starved_omega_b"),
            (self.skipped_a, "skipped_a"),
            (self.skipped_b, "skipped_b"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join(",")
        }
    }
}

/// Outcome of one dual update step. `sum_delta` / `sum_omega` count the
/// A-side filters; both sides' масks are kept for inspection.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: usize,
    pub loss_a: f64,
    pub loss_b: f64,
    pub sum_delta: Option<usize>,
    pub sum_omega: Option<usize>,
    pub flags: StepFlags,
    pub mask_a: DisagreementMask,
    pub mask_b: DisagreementMask,
}

impl StepReport {
    pub fn log_line(&self) -> String {
        format!(
            "step={} loss_a={} loss_b={} sum_delta={} sum_omega={} flags={}",
            self.step,
            self.loss_a,
            self.loss_b,
            self.sum_delta.map_or("-".into(), |v| v.to_string()),
            self.sum_omega.map_or("-".into(), |v| v.to_string()),
            self.flags.render()
        )
    }
}

/// Everything one stage of fitting reads: prediction inputs, the fixed
/// template topology, the (possibly noisy) registration, and the scan.
pub struct FitContext<'a> {
    inputs: StageInputs<'a>,
    pub template: &'a TemplateMesh,
    pub reg: &'a TemplateMesh,
    pub scan: Option<&'a Scan>,
    reg_distances: Option<Vec<f64>>,
    neighbors: Vec<Vec<u32>>,
}

enum StageInputs<'a> {
    Coarse(&'a FeatureVolume),
    Local(&'a [FeatureVolume]),
}

impl<'a> FitContext<'a> {
    pub fn coarse(
        volume: &'a FeatureVolume,
        template: &'a TemplateMesh,
        reg: &'a TemplateMesh,
        scan: Option<&'a Scan>,
    ) -> Result<Self> {
        Self::build(StageInputs::Coarse(volume), template, reg, scan)
    }

    pub fn local(
        volumes: &'a [FeatureVolume],
        template: &'a TemplateMesh,
        reg: &'a TemplateMesh,
        scan: Option<&'a Scan>,
    ) -> Result<Self> {
        Self::build(StageInputs::Local(volumes), template, reg, scan)
    }

    fn build(
        inputs: StageInputs<'a>,
        template: &'a TemplateMesh,
        reg: &'a TemplateMesh,
        scan: Option<&'a Scan>,
    ) -> Result<Self> {
        if reg.n_vertices() != template.n_vertices() {
            return Err(Error::Shape(format!(
                "registration has {} vertices, template {}",
                reg.n_vertices(),
                template.n_vertices()
            )));
        }
        let reg_distances = match scan {
            Some(scan) => Some(MeshDistance::new(reg)?.distances(&scan.points)),
            None => None,
        };
        Ok(FitContext {
            inputs,
            template,
            reg,
            scan,
            reg_distances,
            neighbors: template.vertex_neighbors(),
        })
    }

    fn predict(&self, predictor: &Predictor) -> Result<Vec<Point3<f64>>> {
        match self.inputs {
            StageInputs::Coarse(volume) => predictor.predict_positions(volume),
            StageInputs::Local(volumes) => predictor.predict_positions_local(volumes),
        }
    }

    fn volume_ref(&self) -> VolumeRef<'a> {
        match self.inputs {
            StageInputs::Coarse(volume) => VolumeRef::Shared(volume),
            StageInputs::Local(volumes) => VolumeRef::PerVertex(volumes),
        }
    }
}

struct EstimatorSide {
    loss: f64,
    pos_grads: Vec<Vector3<f64>>,
    delta: Vec<bool>,
    omega: Vec<bool>,
    starved_delta: bool,
    starved_omega: bool,
    skipped: bool,
}

/// One estimator's filtered loss and position gradients. `positions` are
/// this estimator's predictions; `peer` the other's. Masks follow the
/// printed filter rules with this estimator in the A role.
#[allow(clippy::too_many_arguments)]
fn estimator_losses(
    ctx: &FitContext,
    positions: &[Point3<f64>],
    peer: &[Point3<f64>],
    hits: Option<&[MeshHit]>,
    own_dist: Option<&[f64]>,
    peer_dist: Option<&[f64]>,
    weights: &LossWeights,
    filter: FilterMode,
    use_v2v: bool,
) -> Result<EstimatorSide> {
    let n = positions.len();
    let mut side = EstimatorSide {
        loss: 0.0,
        pos_grads: vec![Vector3::zeros(); n],
        delta: Vec::new(),
        omega: Vec::new(),
        starved_delta: false,
        starved_omega: false,
        skipped: false,
    };
    let mut active_terms = 0usize;
    let mut starved_terms = 0usize;

    if use_v2v && weights.v2v > 0.0 {
        active_terms += 1;
        let delta = match filter {
            FilterMode::Disagreement => v2v_mask(positions, peer, &ctx.reg.vertices)?,
            FilterMode::None => vec![true; n],
        };
        let kept = delta.iter().filter(|&&d| d).count();
        if kept == 0 {
            side.starved_delta = true;
            starved_terms += 1;
        } else {
            let scale = weights.v2v / kept as f64;
            let mut sum = 0.0;
            for i in 0..n {
                if !delta[i] {
                    continue;
                }
                let diff = positions[i] - ctx.reg.vertices[i];
                let dist = diff.norm();
                sum += dist;
                if dist > 1e-12 {
                    side.pos_grads[i] += diff * (scale / dist);
                }
            }
            side.loss += weights.v2v * sum / kept as f64;
        }
        side.delta = delta;
    }

    if weights.p2s > 0.0 {
        if let (Some(scan), Some(hits), Some(own), Some(peer_d), Some(reg_d)) = (
            ctx.scan,
            hits,
            own_dist,
            peer_dist,
            ctx.reg_distances.as_deref(),
        ) {
            active_terms += 1;
            let omega = match filter {
                FilterMode::Disagreement => p2s_mask(own, peer_d, reg_d)?,
                FilterMode::None => vec![true; scan.n_points()],
            };
            let kept = omega.iter().filter(|&&o| o).count();
            if kept == 0 {
                side.starved_omega = true;
                starved_terms += 1;
            } else {
                let scale = weights.p2s / kept as f64;
                let mut sum = 0.0;
                for (k, point) in scan.points.iter().enumerate() {
                    if !omega[k] {
                        continue;
                    }
                    let hit = &hits[k];
                    sum += hit.distance;
                    if hit.distance > 1e-12 {
                        let dir = (hit.point - point) * (scale / hit.distance);
                        let tri = ctx.template.triangles[hit.triangle];
                        for (slot, &vi) in tri.iter().enumerate() {
                            side.pos_grads[vi as usize] += dir * hit.barycentric[slot];
                        }
                    }
                }
                side.loss += weights.p2s * sum / kept as f64;
            }
            side.omega = omega;
        }
    }

    // The step is skipped when every active masked term starved.
    if active_terms > 0 && starved_terms == active_terms {
        side.skipped = true;
        side.pos_grads.iter_mut().for_each(|g| *g = Vector3::zeros());
        return Ok(side);
    }

    if weights.laplacian > 0.0 {
        let scale = 2.0 * weights.laplacian / n as f64;
        let mut lap = 0.0;
        for i in 0..n {
            let nb = &ctx.neighbors[i];
            if nb.is_empty() {
                continue;
            }
            let mut avg = Vector3::zeros();
            for &j in nb {
                avg += positions[j as usize].coords;
            }
            avg /= nb.len() as f64;
            let r = positions[i].coords - avg;
            lap += r.norm_squared();
            side.pos_grads[i] += r * scale;
            let back = r * (scale / nb.len() as f64);
            for &j in nb {
                side.pos_grads[j as usize] -= back;
            }
        }
        side.loss += weights.laplacian * lap / n as f64;
    }

    Ok(side)
}

/// One simultaneous update of both estimators. Predictions are computed
/// once; each estimator's masks come from its peer's prediction, and each
/// applies a gradient step on its own filtered loss.
pub fn dual_update_step(
    pair: &mut (Predictor, Predictor),
    opt: &mut DualOptimizer,
    ctx: &FitContext,
    opts: &FitOptions,
) -> Result<StepReport> {
    if pair.0.spec.kind != pair.1.spec.kind {
        return Err(Error::Configuration(
            "dual estimators must share a predictor kind".into(),
        ));
    }
    let use_v2v = opts.stage == Stage::Coarse;

    let pos_a = ctx.predict(&pair.0)?;
    let pos_b = ctx.predict(&pair.1)?;

    // Shared per-point distance work for the p2s term.
    let (hits_a, hits_b, dist_a, dist_b) = match ctx.scan {
        Some(scan) if opts.weights.p2s > 0.0 && !ctx.template.triangles.is_empty() => {
            let bvh_a = TriangleBvh::build(&pos_a, &ctx.template.triangles);
            let bvh_b = TriangleBvh::build(&pos_b, &ctx.template.triangles);
            let ha: Vec<MeshHit> = {
                use rayon::prelude::*;
                scan.points.par_iter().map(|p| bvh_a.closest(p)).collect()
            };
            let hb: Vec<MeshHit> = {
                use rayon::prelude::*;
                scan.points.par_iter().map(|p| bvh_b.closest(p)).collect()
            };
            let da: Vec<f64> = ha.iter().map(|h| h.distance).collect();
            let db: Vec<f64> = hb.iter().map(|h| h.distance).collect();
            (Some(ha), Some(hb), Some(da), Some(db))
        }
        _ => (None, None, None, None),
    };

    let side_a = estimator_losses(
        ctx,
        &pos_a,
        &pos_b,
        hits_a.as_deref(),
        dist_a.as_deref(),
        dist_b.as_deref(),
        &opts.weights,
        opts.filter,
        use_v2v,
    )?;
    let side_b = estimator_losses(
        ctx,
        &pos_b,
        &pos_a,
        hits_b.as_deref(),
        dist_b.as_deref(),
        dist_a.as_deref(),
        &opts.weights,
        opts.filter,
        use_v2v,
    )?;

    let volumes = ctx.volume_ref();
    if !side_a.skipped && opts.step_size != 0.0 {
        let mut grads = vec![0.0; pair.0.params.len()];
        pair.0
            .accumulate_param_grads(volumes, &pos_a, &side_a.pos_grads, &mut grads);
        match opts.optimizer {
            Optimizer::Adam => opt.a.step(&mut pair.0.params, &grads, opts.step_size),
            Optimizer::Sgd => pair.0.apply_step(&grads, opts.step_size),
        }
    }
    if !side_b.skipped && opts.step_size != 0.0 {
        let mut grads = vec![0.0; pair.1.params.len()];
        pair.1
            .accumulate_param_grads(volumes, &pos_b, &side_b.pos_grads, &mut grads);
        match opts.optimizer {
            Optimizer::Adam => opt.b.step(&mut pair.1.params, &grads, opts.step_size),
            Optimizer::Sgd => pair.1.apply_step(&grads, opts.step_size),
        }
    }

    let flags = StepFlags {
        starved_delta_a: side_a.starved_delta,
        starved_delta_b: side_b.starved_delta,
        starved_omega_a: side_a.starved_omega,
        starved_omega_b: side_b.starved_omega,
        skipped_a: side_a.skipped,
        skipped_b: side_b.skipped,
    };
    Ok(StepReport {
        step: 0,
        loss_a: side_a.loss,
        loss_b: side_b.loss,
        sum_delta: (!side_a.delta.is_empty())
            .then(|| side_a.delta.iter().filter(|&&d| d).count()),
        sum_omega: (!side_a.omega.is_empty())
            .then(|| side_a.omega.iter().filter(|&&o| o).count()),
        flags,
        mask_a: DisagreementMask {
            delta: side_a.delta,
            omega: side_a.omega,
        },
        mask_b: DisagreementMask {
            delta: side_b.delta,
            omega: side_b.omega,
        },
    })
}

/// Run `steps` dual updates with fresh optimizer state, numbering the
/// reports. The first `opts.warmup_steps` run unfiltered.
pub fn run_schedule(
    pair: &mut (Predictor, Predictor),
    ctx: &FitContext,
    opts: &FitOptions,
    steps: usize,
) -> Result<Vec<StepReport>> {
    let mut opt = DualOptimizer::new(pair);
    let mut reports = Vec::with_capacity(steps);
    for step in 0..steps {
        let step_opts = if step < opts.warmup_steps {
            FitOptions {
                filter: FilterMode::None,
                ..*opts
            }
        } else {
            *opts
        };
        let mut report = dual_update_step(pair, &mut opt, ctx, &step_opts)?;
        report.step = step;
        reports.push(report);
    }
    Ok(reports)
}

/// Loss of one estimator under frozen masks; the differentiable function
/// the analytic gradients are checked against (masks are stop-gradient
/// selectors).
pub fn loss_with_frozen_masks(
    predictor: &Predictor,
    ctx: &FitContext,
    opts: &FitOptions,
    delta: &[bool],
    omega: &[bool],
) -> Result<f64> {
    let positions = ctx.predict(predictor)?;
    let mut loss = 0.0;
    if opts.stage == Stage::Coarse && opts.weights.v2v > 0.0 {
        let kept = delta.iter().filter(|&&d| d).count();
        if kept > 0 {
            let sum: f64 = (0..positions.len())
                .filter(|&i| delta[i])
                .map(|i| (positions[i] - ctx.reg.vertices[i]).norm())
                .sum();
            loss += opts.weights.v2v * sum / kept as f64;
        }
    }
    if opts.weights.p2s > 0.0 {
        if let Some(scan) = ctx.scan {
            let kept = omega.iter().filter(|&&o| o).count();
            if kept > 0 {
                let bvh = TriangleBvh::build(&positions, &ctx.template.triangles);
                let sum: f64 = scan
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| omega[*k])
                    .map(|(_, p)| bvh.distance(p))
                    .sum();
                loss += opts.weights.p2s * sum / kept as f64;
            }
        }
    }
    if opts.weights.laplacian > 0.0 {
        let n = positions.len();
        let mut lap = 0.0;
        for i in 0..n {
            let nb = &ctx.neighbors[i];
            if nb.is_empty() {
                continue;
            }
            let mut avg = Vector3::zeros();
            for &j in nb {
                avg += positions[j as usize].coords;
            }
            avg /= nb.len() as f64;
            lap += (positions[i].coords - avg).norm_squared();
        }
        loss += opts.weights.laplacian * lap / n as f64;
    }
    Ok(loss)
}
