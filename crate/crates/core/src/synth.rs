//! Synthetic capture scenes with fully known ground truth: parametric
//! head shapes, noisy registrations, noisy scans, a camera ring, and
//! exact rendered masks/depths/images.
//!
//! Everything is driven by the fixed-algorithm PCG streams, so a spec and
//! seed reproduce a scene bitwise on any platform.

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use crate::camera::{Camera, CameraRig};
use crate::error::{Error, Result};
use crate::features::RgbImage;
use crate::mask::BinaryMask;
use crate::mesh::{Region, Scan, TemplateMesh};
use crate::raster::{rasterize, DepthMap};
use crate::rng::Pcg32;

/// RNG stream selectors; one independent stream per noise source keeps
/// draws from interfering when counts change.
const STREAM_SHAPE: u64 = 1;
const STREAM_REG: u64 = 2;
const STREAM_SCAN: u64 = 3;
const STREAM_OUTLIER: u64 = 4;

const ELLIPSOID_AXES: [f64; 3] = [0.85, 1.0, 1.15];
const LIGHT_DIR: [f64; 3] = [0.4, -0.3, 0.85];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Ellipsoid,
    BumpyHead,
}

impl Shape {
    pub fn parse(s: &str) -> Option<Shape> {
        match s {
            "sphere" => Some(Shape::Sphere),
            "ellipsoid" => Some(Shape::Ellipsoid),
            "bumpy-head" | "bumpy_head" | "bumpy" => Some(Shape::BumpyHead),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Ellipsoid => "ellipsoid",
            Shape::BumpyHead => "bumpy-head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRegion {
    Back,
    Uniform,
}

impl NoiseRegion {
    pub fn parse(s: &str) -> Option<NoiseRegion> {
        match s {
            "back" => Some(NoiseRegion::Back),
            "uniform" => Some(NoiseRegion::Uniform),
            _ => None,
        }
    }
}

/// Registration corruption: `fraction` of vertices displaced by vectors
/// of norm `magnitude`.
#[derive(Debug, Clone, Copy)]
pub struct RegNoise {
    pub fraction: f64,
    pub magnitude: f64,
}

/// Scan outliers: `fraction` of points (restricted to `region`) pushed
/// off the surface by up to `magnitude`.
#[derive(Debug, Clone, Copy)]
pub struct ScanNoise {
    pub region: NoiseRegion,
    pub fraction: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub shape: Shape,
    pub n_views: usize,
    pub ring_radius: f64,
    pub image_size: u32,
    pub seed: u64,
    /// Nominal head radius in meters.
    pub scale: f64,
    /// Scan points per mesh vertex.
    pub scan_per_vertex: usize,
    /// Icosphere refinement level of the ground-truth mesh.
    pub subdivisions: u32,
    pub reg_noise: RegNoise,
    pub scan_noise: ScanNoise,
}

impl SceneSpec {
    pub fn new(shape: Shape, seed: u64) -> Self {
        SceneSpec {
            shape,
            n_views: 8,
            ring_radius: 1.0,
            image_size: 600,
            seed,
            scale: 0.1,
            scan_per_vertex: 20,
            subdivisions: 3,
            reg_noise: RegNoise {
                fraction: 0.0,
                magnitude: 0.0,
            },
            scan_noise: ScanNoise {
                region: NoiseRegion::Back,
                fraction: 0.0,
                magnitude: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::Validation(format!(
                "scene needs >= 2 views, got {}",
                self.n_views
            )));
        }
        for (name, f) in [
            ("reg_noise.fraction", self.reg_noise.fraction),
            ("scan_noise.fraction", self.scan_noise.fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Validation(format!("{name} = {f} outside [0, 1]")));
            }
        }
        if self.reg_noise.magnitude < 0.0 || self.scan_noise.magnitude < 0.0 {
            return Err(Error::Validation("noise magnitudes must be >= 0".into()));
        }
        if self.scale <= 0.0 || self.ring_radius <= self.scale {
            return Err(Error::Validation(
                "ring radius must exceed the head scale".into(),
            ));
        }
        Ok(())
    }
}

/// A fully known capture scene plus the ground-truth noise bookkeeping
/// the tests verify filters against.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub gt_mesh: TemplateMesh,
    pub reg_mesh: TemplateMesh,
    pub scan: Scan,
    pub rig: CameraRig,
    pub corrupted_vertex_ids: Vec<usize>,
    pub outlier_point_ids: Vec<usize>,
    /// Source-triangle normal of every scan point (before outliers moved).
    pub scan_normals: Vec<Vector3<f64>>,
}

/// Per-view render products: exact silhouette, z-buffer depth, shaded image.
#[derive(Debug, Clone)]
pub struct ViewRender {
    pub mask: BinaryMask,
    pub depth: DepthMap,
    pub image: RgbImage,
}

/// Unit icosphere with the given subdivision level (level 3 = 642
/// vertices, 1280 triangles).
pub fn icosphere(subdivisions: u32) -> TemplateMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Point3::from(Vector3::new(v[0], v[1], v[2]).normalize()))
    .collect();

    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: std::collections::HashMap<(u32, u32), u32> =
            std::collections::HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for t in &triangles {
            let mut mids = [0u32; 3];
            for (i, (a, b)) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])].iter().enumerate() {
                let key = (*a.min(b), *a.max(b));
                mids[i] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[*a as usize].coords + vertices[*b as usize].coords)
                        .normalize();
                    vertices.push(Point3::from(m));
                    (vertices.len() - 1) as u32
                });
            }
            next.push([t[0], mids[0], mids[2]]);
            next.push([t[1], mids[1], mids[0]]);
            next.push([t[2], mids[2], mids[1]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        triangles = next;
    }

    TemplateMesh::new(vertices, triangles).expect("icosphere topology is valid")
}

/// Deterministic camera looking from `eye` toward `target`, world z up.
pub fn look_at_camera(
    id: &str,
    eye: Point3<f64>,
    target: Point3<f64>,
    focal: f64,
    width: u32,
    height: u32,
) -> Result<Camera> {
    let fwd = (target - eye).normalize();
    let up = Vector3::z();
    let right = fwd.cross(&up);
    if right.norm() < 1e-9 {
        return Err(Error::Validation(
            "camera forward axis parallel to world up".into(),
        ));
    }
    let right = right.normalize();
    let down = fwd.cross(&right).normalize();
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let t = -rot * eye.coords;
    let cx = 0.5 * (width as f64 - 1.0);
    let cy = 0.5 * (height as f64 - 1.0);
    Camera::new(
        id,
        Matrix3::new(focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0),
        rot,
        t,
        width,
        height,
    )
}

/// Cameras evenly spaced on a horizontal ring, all looking at the center.
pub fn ring_rig(
    n_views: usize,
    ring_radius: f64,
    center: Point3<f64>,
    focal: f64,
    image_size: u32,
) -> Result<CameraRig> {
    let cams: Result<Vec<Camera>> = (0..n_views)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / n_views as f64;
            let eye = Point3::new(
                center.x + ring_radius * angle.cos(),
                center.y + ring_radius * angle.sin(),
                center.z,
            );
            look_at_camera(
                &format!("cam{i:02}"),
                eye,
                center,
                focal,
                image_size,
                image_size,
            )
        })
        .collect();
    CameraRig::new(cams?)
}

/// Mean unit direction from `center` toward the cameras; symmetric rigs
/// (a full ring) degenerate to zero, in which case the first camera's
/// direction stands in.
pub fn mean_view_direction(rig: &CameraRig, center: &Point3<f64>) -> Vector3<f64> {
    let mut sum = Vector3::zeros();
    for cam in rig.iter() {
        sum += (cam.center() - center).normalize();
    }
    if sum.norm() > 1e-9 {
        sum.normalize()
    } else {
        (rig.camera(0).center() - center).normalize()
    }
}

fn shape_vertex(shape: Shape, dir: &Vector3<f64>, scale: f64, bumps: &[(Vector3<f64>, f64, f64)]) -> Point3<f64> {
    let radial = match shape {
        Shape::Sphere | Shape::Ellipsoid => 1.0,
        Shape::BumpyHead => {
            let mut r = 1.0;
            for (center, amplitude, sigma) in bumps {
                let angle = dir.dot(center).clamp(-1.0, 1.0).acos();
                r += amplitude * (-0.5 * (angle / sigma).powi(2)).exp();
            }
            r
        }
    };
    let axes = match shape {
        Shape::Sphere => [1.0, 1.0, 1.0],
        Shape::Ellipsoid | Shape::BumpyHead => ELLIPSOID_AXES,
    };
    Point3::new(
        scale * radial * axes[0] * dir.x,
        scale * radial * axes[1] * dir.y,
        scale * radial * axes[2] * dir.z,
    )
}

/// Region partition used for synthetic labels: neck below, face toward
/// the mean camera direction, scalp elsewhere.
fn label_direction(dir: &Vector3<f64>, view_dir: &Vector3<f64>) -> Region {
    if dir.z <= -0.45 {
        Region::Neck
    } else if dir.dot(view_dir) >= 0.2 {
        Region::Face
    } else {
        Region::Scalp
    }
}

/// Area-uniform surface samples; returns points, their source-triangle
/// normals, and the source triangle index.
fn sample_surface(
    mesh: &TemplateMesh,
    n_points: usize,
    rng: &mut Pcg32,
) -> (Vec<Point3<f64>>, Vec<Vector3<f64>>) {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    let mut normals = Vec::with_capacity(mesh.triangles.len());
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
        let n = (b - a).cross(&(c - a));
        total += 0.5 * n.norm();
        cumulative.push(total);
        normals.push(n.normalize());
    }

    let mut points = Vec::with_capacity(n_points);
    let mut point_normals = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let target = rng.range_f64(0.0, total);
        let ti = cumulative.partition_point(|&c| c < target).min(mesh.triangles.len() - 1);
        let t = mesh.triangles[ti];
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
        let r1 = rng.next_f64().sqrt();
        let r2 = rng.next_f64();
        let w = [1.0 - r1, r1 * (1.0 - r2), r1 * r2];
        points.push(Point3::from(
            a.coords * w[0] + b.coords * w[1] + c.coords * w[2],
        ));
        point_normals.push(normals[ti]);
    }
    (points, point_normals)
}

/// Displace `fraction` of the scan (restricted to the noise region)
/// outward along random directions with a positive normal component.
/// Returns the noisy scan and the sorted outlier ids.
pub fn inject_scan_noise(
    scan: &Scan,
    normals: &[Vector3<f64>],
    view_dir: &Vector3<f64>,
    noise: &ScanNoise,
    rng: &mut Pcg32,
) -> (Scan, Vec<usize>) {
    let n_points = scan.n_points();
    let want = (noise.fraction * n_points as f64).floor() as usize;
    if want == 0 || noise.magnitude <= 0.0 {
        return (scan.clone(), Vec::new());
    }

    let candidates: Vec<usize> = match noise.region {
        NoiseRegion::Uniform => (0..n_points).collect(),
        NoiseRegion::Back => (0..n_points)
            .filter(|&i| normals[i].dot(view_dir) < 0.0)
            .collect(),
    };
    let count = want.min(candidates.len());
    let picked = rng.choose_indices(candidates.len(), count);
    let ids: Vec<usize> = picked.iter().map(|&i| candidates[i]).collect();

    let mut points = scan.points.clone();
    for &i in &ids {
        let n = normals[i];
        let dir = loop {
            let u = rng.unit_vector();
            let mut u = Vector3::new(u[0], u[1], u[2]);
            let d = u.dot(&n);
            if d < 0.0 {
                u = -u;
            }
            if d.abs() > 1e-3 {
                break u;
            }
        };
        points[i] += dir * noise.magnitude;
    }
    let mut noisy = Scan::new(points).expect("scan stays non-empty");
    noisy.labels = scan.labels.clone();
    (noisy, ids)
}

/// Build the whole scene deterministically from its spec.
pub fn make_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;

    // Ground-truth surface.
    let mut shape_rng = Pcg32::with_stream(spec.seed, STREAM_SHAPE);
    let bumps: Vec<(Vector3<f64>, f64, f64)> = if spec.shape == Shape::BumpyHead {
        (0..6)
            .map(|_| {
                let c = shape_rng.unit_vector();
                (
                    Vector3::new(c[0], c[1], c[2]),
                    shape_rng.range_f64(0.05, 0.12),
                    shape_rng.range_f64(0.25, 0.5),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let base = icosphere(spec.subdivisions);
    let gt_vertices: Vec<Point3<f64>> = base
        .vertices
        .iter()
        .map(|p| shape_vertex(spec.shape, &p.coords, spec.scale, &bumps))
        .collect();
    let mut gt_mesh = base.with_vertices(gt_vertices)?;

    // Camera ring around the origin; focal length frames the head at
    // roughly a third of the image.
    let focal = 0.27 * spec.image_size as f64 * spec.ring_radius / spec.scale;
    let rig = ring_rig(
        spec.n_views,
        spec.ring_radius,
        Point3::origin(),
        focal,
        spec.image_size,
    )?;
    let view_dir = mean_view_direction(&rig, &Point3::origin());

    // Region labels from the surface direction.
    gt_mesh.regions = Some(
        gt_mesh
            .vertices
            .iter()
            .map(|p| label_direction(&p.coords.normalize(), &view_dir))
            .collect(),
    );

    // Corrupted registration.
    let mut reg_rng = Pcg32::with_stream(spec.seed, STREAM_REG);
    let n_corrupt = (spec.reg_noise.fraction * gt_mesh.n_vertices() as f64).floor() as usize;
    let corrupted_vertex_ids = if n_corrupt > 0 && spec.reg_noise.magnitude > 0.0 {
        reg_rng.choose_indices(gt_mesh.n_vertices(), n_corrupt)
    } else {
        Vec::new()
    };
    let mut reg_vertices = gt_mesh.vertices.clone();
    for &i in &corrupted_vertex_ids {
        let u = reg_rng.unit_vector();
        reg_vertices[i] += Vector3::new(u[0], u[1], u[2]) * spec.reg_noise.magnitude;
    }
    let reg_mesh = gt_mesh.with_vertices(reg_vertices)?;

    // Scan: area-uniform samples plus injected outliers.
    let mut scan_rng = Pcg32::with_stream(spec.seed, STREAM_SCAN);
    let n_points = spec.scan_per_vertex * gt_mesh.n_vertices();
    let (points, scan_normals) = sample_surface(&gt_mesh, n_points, &mut scan_rng);
    let labels: Vec<Region> = points
        .iter()
        .map(|p| label_direction(&p.coords.normalize(), &view_dir))
        .collect();
    let mut scan = Scan::new(points)?;
    scan.labels = Some(labels);

    let mut outlier_rng = Pcg32::with_stream(spec.seed, STREAM_OUTLIER);
    let (scan, outlier_point_ids) = inject_scan_noise(
        &scan,
        &scan_normals,
        &view_dir,
        &spec.scan_noise,
        &mut outlier_rng,
    );

    Ok(Scene {
        spec: spec.clone(),
        gt_mesh,
        reg_mesh,
        scan,
        rig,
        corrupted_vertex_ids,
        outlier_point_ids,
        scan_normals,
    })
}

impl Scene {
    pub fn mean_view_direction(&self) -> Vector3<f64> {
        mean_view_direction(&self.rig, &Point3::origin())
    }

    /// Exact silhouettes, z-buffer depths, and flat-shaded Lambertian
    /// images of the ground-truth mesh, one per view.
    pub fn rasterize_views(&self) -> Vec<ViewRender> {
        let light = Vector3::new(LIGHT_DIR[0], LIGHT_DIR[1], LIGHT_DIR[2]).normalize();
        let tri_normals: Vec<Vector3<f64>> = self
            .gt_mesh
            .triangles
            .iter()
            .map(|t| {
                let a = self.gt_mesh.vertices[t[0] as usize];
                let b = self.gt_mesh.vertices[t[1] as usize];
                let c = self.gt_mesh.vertices[t[2] as usize];
                (b - a).cross(&(c - a)).normalize()
            })
            .collect();

        self.rig
            .cameras()
            .par_iter()
            .map(|cam| {
                let buf = rasterize(&self.gt_mesh.vertices, &self.gt_mesh.triangles, cam);
                let (w, h) = (cam.width, cam.height);
                let mut mask = BinaryMask::new(w, h, false);
                let mut image = RgbImage::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let idx = (y * w + x) as usize;
                        let tid = buf.triangle_ids[idx];
                        if tid == u32::MAX {
                            continue;
                        }
                        mask.set(x, y, true);
                        // Two-sided flat Lambert with a fixed ambient term.
                        let n = tri_normals[tid as usize];
                        let shade = 0.2 + 0.8 * n.dot(&light).abs();
                        let v = (shade.clamp(0.0, 1.0) * 255.0).round() as u8;
                        image.set(x, y, [v, v, v]);
                    }
                }
                ViewRender {
                    mask,
                    depth: buf.depth,
                    image,
                }
            })
            .collect()
    }
}
