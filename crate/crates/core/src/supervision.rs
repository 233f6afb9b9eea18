//! Point-to-surface distance and the disagreement-filtered robust losses.
//!
//! The vertex filter keeps a vertex's supervision when the two estimators
//! disagree at least as much as the peer disagrees with the label
//! (ties keep). The point filter drops a scan point when the peer's mesh
//! is strictly closer to it than the registered mesh and the two
//! predictions sit strictly closer to each other than to the
//! registration.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::bvh::{MeshHit, TriangleBvh};
use crate::error::{Error, Result};
use crate::mesh::{Scan, TemplateMesh};

/// Per-vertex and per-point keep/discard filters from one dual-estimator
/// comparison.
#[derive(Debug, Clone)]
pub struct DisagreementMask {
    pub delta: Vec<bool>,
    pub omega: Vec<bool>,
}

impl DisagreementMask {
    pub fn sum_delta(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn sum_omega(&self) -> usize {
        self.omega.iter().filter(|&&o| o).count()
    }
}

/// Distance queries against one mesh snapshot.
pub struct MeshDistance {
    bvh: TriangleBvh,
}

impl MeshDistance {
    pub fn new(mesh: &TemplateMesh) -> Result<Self> {
        if mesh.triangles.is_empty() {
            return Err(Error::Validation(
                "cannot measure distance to an empty mesh".into(),
            ));
        }
        Ok(MeshDistance {
            bvh: TriangleBvh::build(&mesh.vertices, &mesh.triangles),
        })
    }

    #[inline]
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.bvh.distance(p)
    }

    #[inline]
    pub fn closest(&self, p: &Point3<f64>) -> MeshHit {
        self.bvh.closest(p)
    }

    pub fn distances(&self, points: &[Point3<f64>]) -> Vec<f64> {
        points.par_iter().map(|p| self.distance(p)).collect()
    }

    pub fn closest_many(&self, points: &[Point3<f64>]) -> Vec<MeshHit> {
        points.par_iter().map(|p| self.closest(p)).collect()
    }
}

/// Minimum Euclidean distance from `point` to the surface of `mesh`.
/// Builds an acceleration structure per call; batch users should hold a
/// [`MeshDistance`].
pub fn p2s_distance(point: &Point3<f64>, mesh: &TemplateMesh) -> Result<f64> {
    Ok(MeshDistance::new(mesh)?.distance(point))
}

/// Vertex consensus filter: keep vertex i when
/// `‖v_B[i] - v_A[i]‖ >= ‖v_B[i] - v_reg[i]‖` (ties keep).
pub fn v2v_mask(
    v_a: &[Point3<f64>],
    v_b: &[Point3<f64>],
    v_reg: &[Point3<f64>],
) -> Result<Vec<bool>> {
    if v_a.len() != v_b.len() || v_a.len() != v_reg.len() {
        return Err(Error::Shape(format!(
            "vertex counts differ: {} / {} / {}",
            v_a.len(),
            v_b.len(),
            v_reg.len()
        )));
    }
    Ok(v_a
        .iter()
        .zip(v_b)
        .zip(v_reg)
        .map(|((a, b), r)| (b - a).norm_squared() >= (b - r).norm_squared())
        .collect())
}

/// Masked mean of `‖v_A[i] - v_reg[i]‖` over kept vertices. Returns
/// (loss, mask, starved); a fully-discarded mask yields loss 0 with the
/// starvation flag raised.
pub fn robust_v2v_loss(
    v_a: &[Point3<f64>],
    v_b: &[Point3<f64>],
    v_reg: &[Point3<f64>],
) -> Result<(f64, Vec<bool>, bool)> {
    let mask = v2v_mask(v_a, v_b, v_reg)?;
    let kept = mask.iter().filter(|&&m| m).count();
    if kept == 0 {
        return Ok((0.0, mask, true));
    }
    let sum: f64 = mask
        .iter()
        .zip(v_a)
        .zip(v_reg)
        .filter(|((m, _), _)| **m)
        .map(|((_, a), r)| (a - r).norm())
        .sum();
    Ok((sum / kept as f64, mask, false))
}

/// Point outlier filter: discard point i when the peer mesh beats the
/// registration (`d_B < d_reg`) and the two predictions agree more with
/// each other than with the registration (`|d_B - d_A| < |d_B - d_reg|`).
pub fn p2s_mask(d_a: &[f64], d_b: &[f64], d_reg: &[f64]) -> Result<Vec<bool>> {
    if d_a.len() != d_b.len() || d_a.len() != d_reg.len() {
        return Err(Error::Shape(format!(
            "distance counts differ: {} / {} / {}",
            d_a.len(),
            d_b.len(),
            d_reg.len()
        )));
    }
    Ok(d_a
        .iter()
        .zip(d_b)
        .zip(d_reg)
        .map(|((&da, &db), &dr)| !(db < dr && (db - da).abs() < (db - dr).abs()))
        .collect())
}

/// Masked mean of the A-side point-to-surface distances. Returns
/// (loss, mask, starved).
pub fn robust_p2s_loss(
    scan: &Scan,
    mesh_a: &TemplateMesh,
    mesh_b: &TemplateMesh,
    mesh_reg: &TemplateMesh,
) -> Result<(f64, Vec<bool>, bool)> {
    let da = MeshDistance::new(mesh_a)?.distances(&scan.points);
    let db = MeshDistance::new(mesh_b)?.distances(&scan.points);
    let dreg = MeshDistance::new(mesh_reg)?.distances(&scan.points);
    robust_p2s_from_distances(&da, &db, &dreg)
}

/// Same as [`robust_p2s_loss`] on precomputed per-point distances.
pub fn robust_p2s_from_distances(
    d_a: &[f64],
    d_b: &[f64],
    d_reg: &[f64],
) -> Result<(f64, Vec<bool>, bool)> {
    let mask = p2s_mask(d_a, d_b, d_reg)?;
    let kept = mask.iter().filter(|&&m| m).count();
    if kept == 0 {
        return Ok((0.0, mask, true));
    }
    let sum: f64 = mask
        .iter()
        .zip(d_a)
        .filter(|(m, _)| **m)
        .map(|(_, d)| d)
        .sum();
    Ok((sum / kept as f64, mask, false))
}
