//! Pinhole camera model and calibrated multi-view rigs.
//!
//! Convention: world-to-camera as `x_cam = R x + t`, right-handed, the
//! camera looks down +z, so a point's depth is the z-coordinate of its
//! camera-frame position (not the Euclidean distance to the optical
//! center). Pixel coordinates are continuous with integer coordinates at
//! pixel centers. No lens distortion model.

use nalgebra::{Matrix3, Point3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Calibrated pinhole camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    /// Intrinsics in pixels; bottom row must be [0, 0, 1].
    pub intrinsics: Matrix3<f64>,
    /// World-to-camera rotation (orthonormal, det +1).
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation in meters.
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        id: impl Into<String>,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Camera {
            id: id.into(),
            intrinsics,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate(1e-6)?;
        Ok(cam)
    }

    pub fn validate(&self, rot_tol: f64) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "camera {}: zero image dimension {}x{}",
                self.id, self.width, self.height
            )));
        }
        let r = &self.rotation;
        let ortho_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho_err > rot_tol {
            return Err(Error::Validation(format!(
                "camera {}: rotation not orthonormal (|R'R - I| = {ortho_err:.3e})",
                self.id
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > rot_tol.max(1e-6) {
            return Err(Error::Validation(format!(
                "camera {}: rotation determinant {det:.6} (reflection rejected)",
                self.id
            )));
        }
        let k = &self.intrinsics;
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::Validation(format!(
                "camera {}: non-positive focal length",
                self.id
            )));
        }
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::Validation(format!(
                "camera {}: intrinsics bottom row must be [0, 0, 1]",
                self.id
            )));
        }
        Ok(())
    }

    /// Camera-frame coordinates of a world point.
    #[inline]
    pub fn to_camera(&self, point: &Point3<f64>) -> Vector3<f64> {
        self.rotation * point.coords + self.translation
    }

    /// Optical center in world coordinates (`-R' t`).
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Project a world point; returns (pixel, depth along the optical axis).
    pub fn project(&self, point: &Point3<f64>) -> Result<(Vector2<f64>, f64)> {
        let pc = self.to_camera(point);
        let depth = pc.z;
        if depth <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth });
        }
        let h = self.intrinsics * pc;
        Ok((Vector2::new(h.x / depth, h.y / depth), depth))
    }

    /// World point on the ray through `pixel` at the given depth.
    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64) -> Point3<f64> {
        let k = &self.intrinsics;
        // Invert the upper-triangular K analytically.
        let x = (pixel.x - k[(0, 2)] - k[(0, 1)] * (pixel.y - k[(1, 2)]) / k[(1, 1)]) / k[(0, 0)];
        let y = (pixel.y - k[(1, 2)]) / k[(1, 1)];
        let pc = Vector3::new(x * depth, y * depth, depth);
        Point3::from(self.rotation.transpose() * (pc - self.translation))
    }

    /// Min/max depth of the grid's 8 corners in this camera.
    pub fn depth_range(&self, grid: &GridSpec) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for corner in grid.corners() {
            let d = self.to_camera(&corner).z;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }

    /// Per-view normalized depth: (depth - d_min) / (d_max - d_min) over the
    /// grid-corner depth range, clamped to [0, 1].
    pub fn normalized_depth(&self, depth: f64, grid: &GridSpec) -> Result<f64> {
        let (lo, hi) = self.depth_range(grid);
        normalize_depth_in_range(depth, lo, hi)
    }
}

#[inline]
pub(crate) fn normalize_depth_in_range(depth: f64, lo: f64, hi: f64) -> Result<f64> {
    let range = hi - lo;
    if range < 1e-9 {
        return Err(Error::DegenerateGrid { range });
    }
    Ok(((depth - lo) / range).clamp(0.0, 1.0))
}

/// Ordered set of calibrated cameras observing the same scene.
#[derive(Debug, Clone)]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::Validation(format!(
                "a rig needs at least 2 cameras, got {}",
                cameras.len()
            )));
        }
        for i in 0..cameras.len() {
            for j in (i + 1)..cameras.len() {
                if cameras[i].id == cameras[j].id {
                    return Err(Error::Validation(format!(
                        "duplicate camera id `{}`",
                        cameras[i].id
                    )));
                }
            }
        }
        Ok(CameraRig { cameras })
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn camera(&self, view: usize) -> &Camera {
        &self.cameras[view]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Camera> {
        self.cameras.iter()
    }
}
