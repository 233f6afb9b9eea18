//! Cubic voxel grids.
//!
//! A grid is `resolution`^3 voxels of edge `voxel_edge` starting at
//! `origin` (minimum corner). The center of voxel (j, k, l) is
//! `origin + (j+0.5, k+0.5, l+0.5) * voxel_edge`. Linear indexing is
//! row-major with l fastest: `idx = (j * d + k) * d + l`.

use nalgebra::Point3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Point3<f64>,
    pub resolution: usize,
    pub voxel_edge: f64,
}

impl GridSpec {
    pub fn new(origin: Point3<f64>, resolution: usize, voxel_edge: f64) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Validation(format!(
                "grid resolution must be >= 2, got {resolution}"
            )));
        }
        if voxel_edge <= 0.0 || !voxel_edge.is_finite() {
            return Err(Error::Validation(format!(
                "voxel edge must be positive and finite, got {voxel_edge}"
            )));
        }
        Ok(GridSpec {
            origin,
            resolution,
            voxel_edge,
        })
    }

    /// Cubic grid centered at `center` with the given total extent.
    pub fn centered(center: Point3<f64>, resolution: usize, extent: f64) -> Result<Self> {
        let half = 0.5 * extent;
        let origin = Point3::new(center.x - half, center.y - half, center.z - half);
        GridSpec::new(origin, resolution, extent / resolution as f64)
    }

    #[inline]
    pub fn n_voxels(&self) -> usize {
        self.resolution * self.resolution * self.resolution
    }

    /// Total edge length of the grid cube.
    #[inline]
    pub fn extent(&self) -> f64 {
        self.resolution as f64 * self.voxel_edge
    }

    pub fn center(&self) -> Point3<f64> {
        let half = 0.5 * self.extent();
        Point3::new(
            self.origin.x + half,
            self.origin.y + half,
            self.origin.z + half,
        )
    }

    #[inline]
    pub fn voxel_center(&self, j: usize, k: usize, l: usize) -> Point3<f64> {
        Point3::new(
            self.origin.x + (j as f64 + 0.5) * self.voxel_edge,
            self.origin.y + (k as f64 + 0.5) * self.voxel_edge,
            self.origin.z + (l as f64 + 0.5) * self.voxel_edge,
        )
    }

    #[inline]
    pub fn linear_index(&self, j: usize, k: usize, l: usize) -> usize {
        (j * self.resolution + k) * self.resolution + l
    }

    #[inline]
    pub fn coords_of(&self, idx: usize) -> (usize, usize, usize) {
        let d = self.resolution;
        (idx / (d * d), (idx / d) % d, idx % d)
    }

    #[inline]
    pub fn center_of_index(&self, idx: usize) -> Point3<f64> {
        let (j, k, l) = self.coords_of(idx);
        self.voxel_center(j, k, l)
    }

    /// The 8 corner points of the grid cube.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let e = self.extent();
        let o = self.origin;
        let mut out = [o; 8];
        for (i, c) in out.iter_mut().enumerate() {
            c.x = o.x + if i & 1 != 0 { e } else { 0.0 };
            c.y = o.y + if i & 2 != 0 { e } else { 0.0 };
            c.z = o.z + if i & 4 != 0 { e } else { 0.0 };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_centers_offset_by_half_edge() {
        let g = GridSpec::new(Point3::new(1.0, 2.0, 3.0), 4, 0.5).unwrap();
        let c = g.voxel_center(0, 0, 0);
        assert_eq!(c, Point3::new(1.25, 2.25, 3.25));
        let c = g.voxel_center(3, 2, 1);
        assert_eq!(c, Point3::new(1.0 + 3.5 * 0.5, 2.0 + 2.5 * 0.5, 3.0 + 1.5 * 0.5));
    }

    #[test]
    fn linear_index_round_trip() {
        let g = GridSpec::new(Point3::origin(), 5, 1.0).unwrap();
        for j in 0..5 {
            for k in 0..5 {
                for l in 0..5 {
                    let idx = g.linear_index(j, k, l);
                    assert_eq!(g.coords_of(idx), (j, k, l));
                }
            }
        }
    }

    #[test]
    fn centered_grid_recovers_center_and_extent() {
        let g = GridSpec::centered(Point3::new(0.5, -1.0, 2.0), 32, 0.24).unwrap();
        assert!((g.center() - Point3::new(0.5, -1.0, 2.0)).norm() < 1e-12);
        assert!((g.extent() - 0.24).abs() < 1e-12);
        assert!((g.voxel_edge - 0.24 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GridSpec::new(Point3::origin(), 1, 1.0).is_err());
        assert!(GridSpec::new(Point3::origin(), 4, 0.0).is_err());
        assert!(GridSpec::new(Point3::origin(), 4, -1.0).is_err());
    }

    #[test]
    fn corners_span_the_cube() {
        let g = GridSpec::new(Point3::new(-1.0, -1.0, -1.0), 4, 0.5).unwrap();
        let cs = g.corners();
        assert!(cs.contains(&Point3::new(-1.0, -1.0, -1.0)));
        assert!(cs.contains(&Point3::new(1.0, 1.0, 1.0)));
        assert_eq!(cs.len(), 8);
    }
}
