//! Silhouette space carving: seen-count occupancy, visual hull extraction,
//! and head localization bounds.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::march::marching_cubes;
use crate::mask::BinaryMask;
use crate::mesh::HullMesh;

/// Per-voxel count of how many views saw the voxel.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub counts: Vec<u32>,
}

impl OccupancyGrid {
    /// Number of voxels seen by at least `threshold` views.
    pub fn count_at_least(&self, threshold: u32) -> usize {
        self.counts.iter().filter(|&&c| c >= threshold).count()
    }
}

/// Count, for every voxel center, the views in which it projects in front
/// of the camera onto a foreground mask pixel (nearest-pixel lookup).
/// Voxels projecting outside a view's image bounds are not seen by that
/// view.
pub fn carve_occupancy(
    masks: &[BinaryMask],
    rig: &CameraRig,
    spec: &GridSpec,
) -> Result<OccupancyGrid> {
    if masks.len() != rig.n_views() {
        return Err(Error::Shape(format!(
            "{} masks for {} cameras",
            masks.len(),
            rig.n_views()
        )));
    }
    for (mask, cam) in masks.iter().zip(rig.iter()) {
        if mask.width != cam.width || mask.height != cam.height {
            return Err(Error::Shape(format!(
                "mask {}x{} does not match camera {} ({}x{})",
                mask.width, mask.height, cam.id, cam.width, cam.height
            )));
        }
    }

    let counts: Vec<u32> = (0..spec.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let center = spec.center_of_index(idx);
            let mut seen = 0u32;
            for (mask, cam) in masks.iter().zip(rig.iter()) {
                let Ok((pixel, _)) = cam.project(&center) else {
                    continue;
                };
                let u = pixel.x.round();
                let v = pixel.y.round();
                if u < 0.0 || v < 0.0 || u >= mask.width as f64 || v >= mask.height as f64 {
                    continue;
                }
                if mask.get(u as u32, v as u32) {
                    seen += 1;
                }
            }
            seen
        })
        .collect();

    Ok(OccupancyGrid {
        spec: *spec,
        counts,
    })
}

/// Marching-cubes isosurface of the seen counts at `threshold - 0.5`,
/// in world coordinates.
pub fn extract_hull(occ: &OccupancyGrid, threshold: u32) -> Result<HullMesh> {
    if threshold == 0 {
        return Err(Error::Validation("carve threshold must be >= 1".into()));
    }
    if !occ.counts.iter().any(|&c| c >= threshold) {
        return Err(Error::EmptyHull { threshold });
    }
    let field: Vec<f64> = occ.counts.iter().map(|&c| c as f64).collect();
    Ok(marching_cubes(&occ.spec, &field, threshold as f64 - 0.5))
}

/// Cubic grid for the global feature stage: centered at the hull's
/// bounding-box center, sized to the largest bounding-box axis plus
/// padding on both sides.
pub fn hull_bounds(hull: &HullMesh, padding: f64, resolution: usize) -> Result<GridSpec> {
    let (lo, hi) = hull
        .bounds()
        .ok_or_else(|| Error::Validation("hull has no vertices".into()))?;
    let center = Point3::new(
        0.5 * (lo.x + hi.x),
        0.5 * (lo.y + hi.y),
        0.5 * (lo.z + hi.z),
    );
    let max_extent = (hi.x - lo.x).max(hi.y - lo.y).max(hi.z - lo.z);
    GridSpec::centered(center, resolution, max_extent + 2.0 * padding)
}
