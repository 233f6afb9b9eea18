//! Triangle meshes, fixed-topology templates, and point-cloud scans.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Scan/vertex region label for per-region metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Face,
    Scalp,
    Neck,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Face => "face",
            Region::Scalp => "scalp",
            Region::Neck => "neck",
        }
    }

    pub fn parse(s: &str) -> Option<Region> {
        match s {
            "face" => Some(Region::Face),
            "scalp" => Some(Region::Scalp),
            "neck" => Some(Region::Neck),
            _ => None,
        }
    }
}

/// Triangle surface extracted from the occupancy grid (the visual hull).
#[derive(Debug, Clone)]
pub struct HullMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl HullMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Axis-aligned bounding box over the vertices.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        bounding_box(&self.vertices)
    }
}

/// Fixed-topology mesh: instances share triangles, only vertices move.
#[derive(Debug, Clone)]
pub struct TemplateMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub regions: Option<Vec<Region>>,
}

impl TemplateMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::Validation(format!(
                    "triangle {i} references vertex out of range (n_vertices = {n})"
                )));
            }
        }
        Ok(TemplateMesh {
            vertices,
            triangles,
            regions: None,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "vertex count {} does not match template topology ({})",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(TemplateMesh {
            vertices,
            triangles: self.triangles.clone(),
            regions: self.regions.clone(),
        })
    }

    /// Per-vertex normals: area-weighted average of incident triangle
    /// normals (the cross product already carries the area weight).
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = [
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            ];
            let n = (b - a).cross(&(c - a));
            for &vi in t {
                acc[vi as usize] += n;
            }
        }
        for n in &mut acc {
            let len = n.norm();
            if len > 1e-15 {
                *n /= len;
            } else {
                *n = Vector3::z();
            }
        }
        acc
    }

    /// For every vertex, the indices of its one-ring neighbors (sorted).
    pub fn vertex_neighbors(&self) -> Vec<Vec<u32>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                nb[a as usize].push(b);
                nb[b as usize].push(a);
            }
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }

    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        bounding_box(&self.vertices)
    }
}

/// Unstructured surface point cloud used for point-to-surface supervision.
#[derive(Debug, Clone)]
pub struct Scan {
    pub points: Vec<Point3<f64>>,
    pub labels: Option<Vec<Region>>,
}

impl Scan {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("a scan needs at least one point".into()));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation("scan contains non-finite coordinates".into()));
        }
        Ok(Scan {
            points,
            labels: None,
        })
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }
}

pub fn bounding_box(points: &[Point3<f64>]) -> Option<(Point3<f64>, Point3<f64>)> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    Some((lo, hi))
}

pub fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}
