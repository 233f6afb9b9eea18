//! Exact point-to-mesh distance queries over a bounding-volume hierarchy.
//!
//! Median-split AABB tree with leaf size 4. Pruning only skips nodes that
//! are provably farther than the current best, so the returned distance is
//! the same value brute force would compute (identical per-triangle
//! arithmetic, exact minimum).

use nalgebra::Point3;

/// Closest point on one triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriangleHit {
    pub sq_distance: f64,
    pub point: Point3<f64>,
    /// Barycentric coordinates of the closest point.
    pub barycentric: [f64; 3],
}

/// Closest point on a triangle to `p` (Ericson's region classification;
/// the closest point may be a vertex, on an edge, or interior).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> TriangleHit {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return hit(p, *a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return hit(p, *b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return hit(p, a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return hit(p, *c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return hit(p, a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return hit(p, b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    // Interior.
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    hit(p, a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[inline]
fn hit(p: &Point3<f64>, q: Point3<f64>, barycentric: [f64; 3]) -> TriangleHit {
    TriangleHit {
        sq_distance: (p - q).norm_squared(),
        point: q,
        barycentric,
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for i in 0..3 {
            self.lo[i] = self.lo[i].min(p[i]);
            self.hi[i] = self.hi[i].max(p[i]);
        }
    }

    fn sq_distance(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.lo[i] {
                self.lo[i] - p[i]
            } else if p[i] > self.hi[i] {
                p[i] - self.hi[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug)]
enum Node {
    Leaf {
        bounds: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } => bounds,
            Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Result of a closest-point query against a whole mesh.
#[derive(Debug, Clone, Copy)]
pub struct MeshHit {
    pub distance: f64,
    pub triangle: usize,
    pub point: Point3<f64>,
    pub barycentric: [f64; 3],
}

/// Acceleration structure over one mesh snapshot; rebuild after vertices
/// move.
#[derive(Debug)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    triangles: Vec<[Point3<f64>; 3]>,
    /// Original triangle index for every entry in `triangles`.
    source: Vec<usize>,
    root: usize,
}

const LEAF_SIZE: usize = 4;

impl TriangleBvh {
    pub fn build(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Self {
        assert!(!triangles.is_empty(), "BVH over an empty mesh");
        let tris: Vec<[Point3<f64>; 3]> = triangles
            .iter()
            .map(|t| {
                [
                    vertices[t[0] as usize],
                    vertices[t[1] as usize],
                    vertices[t[2] as usize],
                ]
            })
            .collect();
        let centroids: Vec<Point3<f64>> = tris
            .iter()
            .map(|t| {
                Point3::new(
                    (t[0].x + t[1].x + t[2].x) / 3.0,
                    (t[0].y + t[1].y + t[2].y) / 3.0,
                    (t[0].z + t[1].z + t[2].z) / 3.0,
                )
            })
            .collect();

        let mut bvh = TriangleBvh {
            nodes: Vec::new(),
            order: (0..tris.len()).collect(),
            source: (0..tris.len()).collect(),
            triangles: tris,
            root: 0,
        };
        let n = bvh.order.len();
        bvh.root = bvh.split(0, n, &centroids);
        bvh
    }

    fn split(&mut self, start: usize, count: usize, centroids: &[Point3<f64>]) -> usize {
        let mut bounds = Aabb::empty();
        for &t in &self.order[start..start + count] {
            for p in &self.triangles[t] {
                bounds.grow(p);
            }
        }
        if count <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                bounds,
                start,
                count,
            });
            return self.nodes.len() - 1;
        }

        // Median split along the widest centroid axis.
        let mut cb = Aabb::empty();
        for &t in &self.order[start..start + count] {
            cb.grow(&centroids[t]);
        }
        let extent = cb.hi - cb.lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = start + count / 2;
        self.order[start..start + count].select_nth_unstable_by(count / 2, |&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        let left = self.split(start, mid - start, centroids);
        let right = self.split(mid, start + count - mid, centroids);
        self.nodes.push(Node::Inner {
            bounds,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// Closest point on the mesh to `p`.
    pub fn closest(&self, p: &Point3<f64>) -> MeshHit {
        let mut best = MeshHit {
            distance: f64::INFINITY,
            triangle: usize::MAX,
            point: *p,
            barycentric: [0.0; 3],
        };
        let mut best_sq = f64::INFINITY;
        let mut stack = Vec::with_capacity(64);
        stack.push(self.root);
        while let Some(node) = stack.pop() {
            match &self.nodes[node] {
                Node::Leaf { bounds, start, count } => {
                    if bounds.sq_distance(p) > best_sq {
                        continue;
                    }
                    for &t in &self.order[*start..*start + *count] {
                        let tri = &self.triangles[t];
                        let h = closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2]);
                        if h.sq_distance < best_sq {
                            best_sq = h.sq_distance;
                            best = MeshHit {
                                distance: h.sq_distance.sqrt(),
                                triangle: self.source[t],
                                point: h.point,
                                barycentric: h.barycentric,
                            };
                        }
                    }
                }
                Node::Inner { bounds, left, right } => {
                    if bounds.sq_distance(p) > best_sq {
                        continue;
                    }
                    // Visit the nearer child first.
                    let dl = self.nodes[*left].bounds().sq_distance(p);
                    let dr = self.nodes[*right].bounds().sq_distance(p);
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.closest(p).distance
    }
}

/// Brute-force reference: minimum over all triangles with the same
/// per-triangle arithmetic the BVH uses.
pub fn brute_force_distance(
    p: &Point3<f64>,
    vertices: &[Point3<f64>],
    triangles: &[[u32; 3]],
) -> f64 {
    let mut best = f64::INFINITY;
    for t in triangles {
        let h = closest_point_on_triangle(
            p,
            &vertices[t[0] as usize],
            &vertices[t[1] as usize],
            &vertices[t[2] as usize],
        );
        best = best.min(h.sq_distance);
    }
    best.sqrt()
}
