//! Per-voxel visibility against rendered hull depth maps.
//!
//! A voxel is visible in a view when it projects in front of the camera,
//! inside the image, onto a foreground (finite-depth) pixel, and its
//! normalized depth does not exceed the hull's normalized depth at that
//! pixel by more than the margin `rho`. Depths are normalized per view
//! against the global grid's corner depth range.

use rayon::prelude::*;

use nalgebra::Point3;

use crate::camera::{Camera, CameraRig};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::raster::DepthMap;

pub use crate::raster::render_depth;

/// Which comparison decides visibility.
///
/// The margin rule treats anything at or in front of the hull surface
/// (plus `rho` of slack behind it) as visible. The band rule is the
/// literal absolute-difference comparison, which also hides voxels far in
/// front of the surface; it is kept for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisibilityRule {
    #[default]
    FrontWithMargin,
    Band,
}

impl VisibilityRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "margin" | "front" => Some(VisibilityRule::FrontWithMargin),
            "band" => Some(VisibilityRule::Band),
            _ => None,
        }
    }
}

/// Binary indicators for every (view, voxel) pair, view-major layout.
#[derive(Debug, Clone)]
pub struct VisibilityMask {
    pub n_views: usize,
    pub n_voxels: usize,
    indicators: Vec<u8>,
}

impl VisibilityMask {
    #[inline]
    pub fn get(&self, view: usize, voxel: usize) -> bool {
        self.indicators[view * self.n_voxels + voxel] != 0
    }

    /// Indicator row for one view.
    pub fn view(&self, view: usize) -> &[u8] {
        &self.indicators[view * self.n_voxels..(view + 1) * self.n_voxels]
    }

    pub fn count_visible(&self, view: usize) -> usize {
        self.view(view).iter().filter(|&&b| b != 0).count()
    }
}

/// Visibility of a single voxel center in one view. All failure modes
/// (behind camera, outside image, background pixel, degenerate
/// normalization) yield 0.
pub fn voxel_visibility(
    voxel_center: &Point3<f64>,
    camera: &Camera,
    depth_map: &DepthMap,
    norm_grid: &GridSpec,
    rho: f64,
    rule: VisibilityRule,
) -> bool {
    let (lo, hi) = camera.depth_range(norm_grid);
    voxel_visibility_in_range(voxel_center, camera, depth_map, lo, hi, rho, rule)
}

fn voxel_visibility_in_range(
    voxel_center: &Point3<f64>,
    camera: &Camera,
    depth_map: &DepthMap,
    range_lo: f64,
    range_hi: f64,
    rho: f64,
    rule: VisibilityRule,
) -> bool {
    let Ok((pixel, voxel_depth)) = camera.project(voxel_center) else {
        return false;
    };
    let Some(hull_depth) = depth_map.sample_nearest(&pixel) else {
        return false;
    };
    if !hull_depth.is_finite() {
        return false;
    }
    let Ok(nd_vox) = crate::camera::normalize_depth_in_range(voxel_depth, range_lo, range_hi)
    else {
        return false;
    };
    let Ok(nd_hull) =
        crate::camera::normalize_depth_in_range(hull_depth as f64, range_lo, range_hi)
    else {
        return false;
    };
    match rule {
        VisibilityRule::FrontWithMargin => nd_vox <= nd_hull + rho,
        VisibilityRule::Band => (nd_vox - nd_hull).abs() <= rho,
    }
}

/// Evaluate every (view, voxel) pair of `grid` against the per-view hull
/// depth maps.
pub fn grid_visibility(
    grid: &GridSpec,
    rig: &CameraRig,
    depths: &[DepthMap],
    rho: f64,
    rule: VisibilityRule,
) -> Result<VisibilityMask> {
    if depths.len() != rig.n_views() {
        return Err(Error::Shape(format!(
            "{} depth maps for {} cameras",
            depths.len(),
            rig.n_views()
        )));
    }
    for (dm, cam) in depths.iter().zip(rig.iter()) {
        if dm.width != cam.width || dm.height != cam.height {
            return Err(Error::Shape(format!(
                "depth map {}x{} does not match camera {} ({}x{})",
                dm.width, dm.height, cam.id, cam.width, cam.height
            )));
        }
    }

    let n_voxels = grid.n_voxels();
    let mut indicators = vec![0u8; rig.n_views() * n_voxels];
    indicators
        .par_chunks_mut(n_voxels)
        .enumerate()
        .for_each(|(view, row)| {
            let cam = rig.camera(view);
            let dm = &depths[view];
            let (lo, hi) = cam.depth_range(grid);
            for (voxel, slot) in row.iter_mut().enumerate() {
                let center = grid.center_of_index(voxel);
                *slot =
                    voxel_visibility_in_range(&center, cam, dm, lo, hi, rho, rule) as u8;
            }
        });

    Ok(VisibilityMask {
        n_views: rig.n_views(),
        n_voxels,
        indicators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::raster::{rasterize, BACKGROUND};
    use nalgebra::{Matrix3, Vector3};

    fn axis_camera(dist: f64) -> Camera {
        // Looks down +z from z = -dist.
        Camera::new(
            format!("axis-{dist}"),
            Matrix3::new(600.0, 0.0, 300.0, 0.0, 600.0, 300.0, 0.0, 0.0, 1.0),
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, dist),
            600,
            600,
        )
        .unwrap()
    }

    fn icosphere_hull(radius: f64) -> crate::mesh::HullMesh {
        let m = crate::synth::icosphere(3);
        crate::mesh::HullMesh {
            vertices: m.vertices.iter().map(|p| Point3::from(p.coords * radius)).collect(),
            triangles: m.triangles,
        }
    }

    #[test]
    fn fronto_parallel_and_zbuffer_cases() {
        let cam = axis_camera(0.0);
        let v = vec![
            Point3::new(-4.0, -4.0, 3.0),
            Point3::new(4.0, -4.0, 3.0),
            Point3::new(0.0, 6.0, 3.0),
        ];
        let dm = rasterize(&v, &[[0, 1, 2]], &cam).depth;
        assert!((dm.get(300, 300) - 3.0).abs() < 1e-5);
    }

    #[test]
    fn sphere_depth_matches_ray_oracle() {
        let radius = 1.0;
        let dist = 5.0;
        let cam = axis_camera(dist); // sphere at origin is at camera-z = dist
        let hull = icosphere_hull(radius);
        let dm = render_depth(&hull, &cam);
        // Compare against analytic first ray-sphere intersection on a pixel
        // subgrid, skipping the silhouette rim where faceting dominates.
        let eye = cam.center();
        let mut checked = 0;
        for y in (0..600).step_by(7) {
            for x in (0..600).step_by(7) {
                let p = cam.back_project(&nalgebra::Vector2::new(x as f64, y as f64), 1.0);
                let dir = (p - eye).normalize();
                let oc = eye - Point3::origin();
                let b = oc.dot(&dir);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.2 {
                    continue; // outside or near the rim, where faceting dominates
                }
                let t = -b - disc.sqrt();
                let hit = Point3::from(eye.coords + dir * t);
                let analytic_depth = cam.to_camera(&hit).z;
                let got = dm.get(x, y);
                assert!(got.is_finite(), "pixel ({x},{y}) unexpectedly background");
                // 2 voxel edges at the default 5 mm hull grid.
                assert!(
                    (got as f64 - analytic_depth).abs() < 0.01,
                    "depth {got} vs {analytic_depth} at ({x},{y})"
                );
                checked += 1;
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn front_pole_visible_back_pole_hidden() {
        let radius = 0.3;
        let cam = axis_camera(2.0); // camera at z = -2 looking toward +z
        let hull = icosphere_hull(radius);
        let dm = render_depth(&hull, &cam);
        let grid = GridSpec::centered(Point3::origin(), 16, 1.0).unwrap();
        let front = Point3::new(0.0, 0.0, -radius * 0.98);
        let back = Point3::new(0.0, 0.0, radius * 0.98);
        let rho = 0.05; // below the front/back normalized gap
        assert!(voxel_visibility(
            &front,
            &cam,
            &dm,
            &grid,
            rho,
            VisibilityRule::FrontWithMargin
        ));
        assert!(!voxel_visibility(
            &back,
            &cam,
            &dm,
            &grid,
            rho,
            VisibilityRule::FrontWithMargin
        ));
    }

    #[test]
    fn band_rule_hides_far_in_front() {
        let radius = 0.3;
        let cam = axis_camera(2.0);
        let hull = icosphere_hull(radius);
        let dm = render_depth(&hull, &cam);
        let grid = GridSpec::centered(Point3::origin(), 16, 1.6).unwrap();
        let far_front = Point3::new(0.0, 0.0, -0.7);
        assert!(voxel_visibility(
            &far_front,
            &cam,
            &dm,
            &grid,
            0.05,
            VisibilityRule::FrontWithMargin
        ));
        assert!(!voxel_visibility(
            &far_front,
            &cam,
            &dm,
            &grid,
            0.05,
            VisibilityRule::Band
        ));
    }

    #[test]
    fn empty_depth_map_sees_nothing() {
        let cam = axis_camera(2.0);
        let dm = DepthMap::new(600, 600);
        assert_eq!(dm.get(10, 10), BACKGROUND);
        let grid = GridSpec::centered(Point3::origin(), 8, 0.8).unwrap();
        let rig = CameraRig::new(vec![cam.clone(), axis_camera(3.0)]).unwrap();
        let vis = grid_visibility(
            &grid,
            &rig,
            &[dm.clone(), dm],
            0.1,
            VisibilityRule::FrontWithMargin,
        )
        .unwrap();
        assert_eq!(vis.count_visible(0), 0);
        assert_eq!(vis.count_visible(1), 0);
    }

    #[test]
    fn saturating_margin_sees_all_foreground_voxels() {
        let radius = 0.3;
        let cam = axis_camera(2.0);
        let hull = icosphere_hull(radius);
        let dm = render_depth(&hull, &cam);
        let grid = GridSpec::centered(Point3::origin(), 12, 0.7).unwrap();
        let rig = CameraRig::new(vec![cam.clone(), axis_camera(2.5)]).unwrap();
        let hull_dms = vec![dm, render_depth(&hull, rig.camera(1))];
        let vis = grid_visibility(&grid, &rig, &hull_dms, 1.0, VisibilityRule::FrontWithMargin)
            .unwrap();
        // rho = 1 saturates the normalized range: every voxel projecting
        // onto the silhouette must be visible.
        for (view, dm) in hull_dms.iter().enumerate() {
            let cam = rig.camera(view);
            for voxel in 0..grid.n_voxels() {
                let c = grid.center_of_index(voxel);
                let expected = cam
                    .project(&c)
                    .ok()
                    .and_then(|(px, _)| dm.sample_nearest(&px))
                    .map(|d| d.is_finite())
                    .unwrap_or(false);
                assert_eq!(vis.get(view, voxel), expected);
            }
        }
    }

    #[test]
    fn monotone_in_rho() {
        let radius = 0.3;
        let cam = axis_camera(2.0);
        let hull = icosphere_hull(radius);
        let dm = render_depth(&hull, &cam);
        let grid = GridSpec::centered(Point3::origin(), 10, 0.8).unwrap();
        let rig = CameraRig::new(vec![cam.clone(), axis_camera(2.2)]).unwrap();
        let dms = vec![dm, render_depth(&hull, rig.camera(1))];
        let mut prev: Option<VisibilityMask> = None;
        for rho in [0.0, 0.05, 0.1, 0.3, 1.0] {
            let vis =
                grid_visibility(&grid, &rig, &dms, rho, VisibilityRule::FrontWithMargin).unwrap();
            if let Some(p) = &prev {
                for view in 0..2 {
                    for voxel in 0..grid.n_voxels() {
                        assert!(
                            !p.get(view, voxel) || vis.get(view, voxel),
                            "visible set shrank when rho grew"
                        );
                    }
                }
            }
            prev = Some(vis);
        }
    }

    #[test]
    fn visibility_independent_of_other_views() {
        let radius = 0.3;
        let cam0 = axis_camera(2.0);
        let cam1 = axis_camera(2.7);
        let hull = icosphere_hull(radius);
        let grid = GridSpec::centered(Point3::origin(), 8, 0.8).unwrap();
        let dm0 = render_depth(&hull, &cam0);
        let dm1 = render_depth(&hull, &cam1);

        let rig2 = CameraRig::new(vec![cam0.clone(), cam1.clone()]).unwrap();
        let vis2 = grid_visibility(
            &grid,
            &rig2,
            &[dm0.clone(), dm1.clone()],
            0.1,
            VisibilityRule::FrontWithMargin,
        )
        .unwrap();
        for voxel in 0..grid.n_voxels() {
            let single = voxel_visibility(
                &grid.center_of_index(voxel),
                &cam0,
                &dm0,
                &grid,
                0.1,
                VisibilityRule::FrontWithMargin,
            );
            assert_eq!(vis2.get(0, voxel), single);
        }
    }
}
