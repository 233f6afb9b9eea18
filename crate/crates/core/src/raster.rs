//! Software z-buffer rasterization of triangle meshes into depth maps.

use nalgebra::{Point3, Vector2};

use crate::camera::Camera;
use crate::mesh::HullMesh;

/// Sentinel stored at background pixels.
pub const BACKGROUND: f32 = f32::INFINITY;

/// Per-pixel depth in meters along the camera optical axis; background
/// pixels hold `BACKGROUND`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![BACKGROUND; (width * height) as usize],
        }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), (width * height) as usize);
        DepthMap {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn is_foreground(&self, x: u32, y: u32) -> bool {
        self.get(x, y).is_finite()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Nearest-pixel lookup of a continuous pixel coordinate; `None` when
    /// the coordinate rounds outside the image.
    pub fn sample_nearest(&self, pixel: &Vector2<f64>) -> Option<f32> {
        let u = pixel.x.round();
        let v = pixel.y.round();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some(self.get(u as u32, v as u32))
    }
}

/// Depth plus the triangle that produced each pixel (u32::MAX = background).
#[derive(Debug, Clone)]
pub struct RenderBuffers {
    pub depth: DepthMap,
    pub triangle_ids: Vec<u32>,
}

/// Rasterize triangles with a minimum z-buffer. Pixels are sampled at
/// integer coordinates (pixel centers). Triangles with any vertex at or
/// behind the camera plane are skipped; hulls and synthetic heads sit
/// well inside every view frustum so near-plane clipping is not needed.
pub fn rasterize(
    vertices: &[Point3<f64>],
    triangles: &[[u32; 3]],
    camera: &Camera,
) -> RenderBuffers {
    let w = camera.width;
    let h = camera.height;
    let mut depth = DepthMap::new(w, h);
    let mut ids = vec![u32::MAX; (w * h) as usize];

    // Project every vertex once.
    let projected: Vec<Option<(Vector2<f64>, f64)>> = vertices
        .iter()
        .map(|p| camera.project(p).ok())
        .collect();

    for (ti, tri) in triangles.iter().enumerate() {
        let (Some((p0, z0)), Some((p1, z1)), Some((p2, z2))) = (
            projected[tri[0] as usize],
            projected[tri[1] as usize],
            projected[tri[2] as usize],
        ) else {
            continue;
        };

        // Signed doubled area of the screen triangle.
        let area = edge(&p0, &p1, &p2);
        if area.abs() < 1e-12 {
            continue;
        }

        let min_x = p0.x.min(p1.x).min(p2.x).floor().max(0.0) as u32;
        let max_x = p0.x.max(p1.x).max(p2.x).ceil().min((w - 1) as f64) as u32;
        let min_y = p0.y.min(p1.y).min(p2.y).floor().max(0.0) as u32;
        let max_y = p0.y.max(p1.y).max(p2.y).ceil().min((h - 1) as f64) as u32;
        if min_x > max_x || min_y > max_y {
            continue;
        }

        let inv_area = 1.0 / area;
        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let q = Vector2::new(x as f64, y as f64);
                let w0 = edge(&p1, &p2, &q) * inv_area;
                let w1 = edge(&p2, &p0, &q) * inv_area;
                let w2 = edge(&p0, &p1, &q) * inv_area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Perspective-correct depth: interpolate 1/z linearly in
                // screen space.
                let inv_z = w0 / z0 + w1 / z1 + w2 / z2;
                if inv_z <= 0.0 {
                    continue;
                }
                let z = (1.0 / inv_z) as f32;
                let idx = (y * w + x) as usize;
                if z < depth.values[idx] {
                    depth.values[idx] = z;
                    ids[idx] = ti as u32;
                }
            }
        }
    }

    RenderBuffers {
        depth,
        triangle_ids: ids,
    }
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Z-buffer depth map of a hull mesh in one view.
pub fn render_depth(hull: &HullMesh, camera: &Camera) -> DepthMap {
    rasterize(&hull.vertices, &hull.triangles, camera).depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn camera() -> Camera {
        Camera::new(
            "c",
            Matrix3::new(600.0, 0.0, 300.0, 0.0, 600.0, 300.0, 0.0, 0.0, 1.0),
            Matrix3::identity(),
            Vector3::zeros(),
            600,
            600,
        )
        .unwrap()
    }

    fn big_triangle(z: f64) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
        // Spans far beyond the image when projected.
        (
            vec![
                Point3::new(-4.0, -4.0, z),
                Point3::new(4.0, -4.0, z),
                Point3::new(0.0, 6.0, z),
            ],
            vec![[0, 1, 2]],
        )
    }

    #[test]
    fn fronto_parallel_triangle_constant_depth() {
        let cam = camera();
        let (v, t) = big_triangle(3.0);
        let buf = rasterize(&v, &t, &cam);
        let covered: Vec<f32> = buf
            .depth
            .values()
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .collect();
        assert!(!covered.is_empty());
        for d in covered {
            assert!((d - 3.0).abs() < 1e-5, "depth {d}");
        }
        // The pixel straight down the axis is covered.
        assert!((buf.depth.get(300, 300) - 3.0).abs() < 1e-5);
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let cam = camera();
        let (mut v, mut t) = big_triangle(4.0);
        let (v2, _) = big_triangle(2.0);
        let base = v.len() as u32;
        v.extend(v2);
        t.push([base, base + 1, base + 2]);
        let buf = rasterize(&v, &t, &cam);
        assert!((buf.depth.get(300, 300) - 2.0).abs() < 1e-5);
        assert_eq!(buf.triangle_ids[(300 * 600 + 300) as usize], 1);
    }

    #[test]
    fn background_is_infinite() {
        let cam = camera();
        let v = vec![
            Point3::new(-0.01, -0.01, 2.0),
            Point3::new(0.01, -0.01, 2.0),
            Point3::new(0.0, 0.01, 2.0),
        ];
        let buf = rasterize(&v, &[[0, 1, 2]], &cam);
        assert_eq!(buf.depth.get(0, 0), BACKGROUND);
        assert!(!buf.depth.is_foreground(0, 0));
    }

    #[test]
    fn winding_order_does_not_matter() {
        let cam = camera();
        let (v, _) = big_triangle(3.0);
        let ccw = rasterize(&v, &[[0, 1, 2]], &cam);
        let cw = rasterize(&v, &[[0, 2, 1]], &cam);
        assert_eq!(ccw.depth.values(), cw.depth.values());
    }

    #[test]
    fn behind_camera_triangle_skipped() {
        let cam = camera();
        let v = vec![
            Point3::new(-1.0, -1.0, -2.0),
            Point3::new(1.0, -1.0, -2.0),
            Point3::new(0.0, 1.0, -2.0),
        ];
        let buf = rasterize(&v, &[[0, 1, 2]], &cam);
        assert!(buf.depth.values().iter().all(|d| !d.is_finite()));
    }

    #[test]
    fn nearest_sampling_bounds() {
        let mut dm = DepthMap::new(4, 4);
        dm.values[5] = 1.5; // (1, 1)
        assert_eq!(dm.sample_nearest(&Vector2::new(1.2, 0.8)), Some(1.5));
        assert_eq!(dm.sample_nearest(&Vector2::new(-0.6, 0.0)), None);
        assert_eq!(dm.sample_nearest(&Vector2::new(3.6, 0.0)), None);
    }
}
