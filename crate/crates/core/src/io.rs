//! File formats: camera rigs, meshes, scans, masks, depth maps, images,
//! feature volumes, predictor checkpoints, and scene directories.
//!
//! ASCII formats print floats with Rust's shortest round-trip formatting,
//! so write-then-read reproduces values exactly; binary formats are
//! little-endian and bit-exact by construction.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::camera::{Camera, CameraRig};
use crate::config::parse_kv;
use crate::error::{Error, Result};
use crate::features::{FeatureVolume, RgbImage};
use crate::grid::GridSpec;
use crate::mask::BinaryMask;
use crate::mesh::{HullMesh, Region, Scan, TemplateMesh};
use crate::predict::{Predictor, PredictorKind, PredictorSpec};
use crate::raster::DepthMap;
use crate::synth::Scene;

/// +inf sentinel encoding in depth-map files.
const DEPTH_BACKGROUND_ENCODED: f32 = 3.4e38;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------- rig ---

pub fn write_rig(rig: &CameraRig, path: &Path) -> Result<()> {
    let mut out = String::from("# camera rig\n");
    out.push_str(&format!("n_views = {}\n", rig.n_views()));
    for (i, cam) in rig.iter().enumerate() {
        out.push('\n');
        out.push_str(&format!("camera.{i}.id = {}\n", cam.id));
        out.push_str(&format!("camera.{i}.width = {}\n", cam.width));
        out.push_str(&format!("camera.{i}.height = {}\n", cam.height));
        let fmt9 = |m: &Matrix3<f64>| {
            let mut parts = Vec::with_capacity(9);
            for r in 0..3 {
                for c in 0..3 {
                    parts.push(format!("{}", m[(r, c)]));
                }
            }
            parts.join(" ")
        };
        out.push_str(&format!("camera.{i}.K = {}\n", fmt9(&cam.intrinsics)));
        out.push_str(&format!("camera.{i}.R = {}\n", fmt9(&cam.rotation)));
        out.push_str(&format!(
            "camera.{i}.t = {} {} {}\n",
            cam.translation.x, cam.translation.y, cam.translation.z
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a rig file; cameras are ordered by their index keys and validated
/// (orthonormal rotation within 1e-6, det +1, positive focals).
pub fn load_rig(path: &Path) -> Result<CameraRig> {
    let text = fs::read_to_string(path)?;
    let name = path_str(path);
    let kv = parse_kv(&text, &name)?;

    let mut count = 0usize;
    while kv.contains_key(&format!("camera.{count}.id")) {
        count += 1;
    }
    if count == 0 {
        return Err(Error::parse(&name, "no camera.<i>.id entries"));
    }
    if let Some(n) = kv.get("n_views") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::parse(&name, format!("bad n_views `{n}`")))?;
        if n != count {
            return Err(Error::parse(
                &name,
                format!("n_views = {n} but {count} cameras defined"),
            ));
        }
    }

    let mut cameras = Vec::with_capacity(count);
    for i in 0..count {
        let get = |field: &str| -> Result<&String> {
            kv.get(&format!("camera.{i}.{field}")).ok_or_else(|| {
                Error::parse(&name, format!("camera.{i}: missing field `{field}`"))
            })
        };
        let floats = |field: &str, n: usize| -> Result<Vec<f64>> {
            let raw = get(field)?;
            let vals: std::result::Result<Vec<f64>, _> =
                raw.split_whitespace().map(str::parse).collect();
            let vals = vals.map_err(|_| {
                Error::parse(&name, format!("camera.{i}: bad float in `{field}`"))
            })?;
            if vals.len() != n {
                return Err(Error::parse(
                    &name,
                    format!("camera.{i}: `{field}` needs {n} values, got {}", vals.len()),
                ));
            }
            Ok(vals)
        };
        let k = floats("K", 9)?;
        let r = floats("R", 9)?;
        let t = floats("t", 3)?;
        let width: u32 = get("width")?
            .parse()
            .map_err(|_| Error::parse(&name, format!("camera.{i}: bad width")))?;
        let height: u32 = get("height")?
            .parse()
            .map_err(|_| Error::parse(&name, format!("camera.{i}: bad height")))?;
        let cam = Camera::new(
            get("id")?.clone(),
            Matrix3::from_row_slice(&k),
            Matrix3::from_row_slice(&r),
            Vector3::new(t[0], t[1], t[2]),
            width,
            height,
        )
        .map_err(|e| Error::parse(&name, format!("camera.{i}: {e}")))?;
        cameras.push(cam);
    }
    CameraRig::new(cameras)
}

// --------------------------------------------------------------- mesh ---

fn write_obj(vertices: &[Point3<f64>], triangles: &[[u32; 3]], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(vertices.len() * 32);
    for v in vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    fs::write(path, out)?;
    Ok(())
}

type ObjData = (Vec<Point3<f64>>, Vec<[u32; 3]>);

fn read_obj(path: &Path) -> Result<ObjData> {
    let name = path_str(path);
    let text = fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    *c = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::parse(&name, format!("line {}: bad vertex", ln + 1)))?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for v in idx.iter_mut() {
                    // Accept `f 1 2 3` and `f 1/1 2/2 3/3`.
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::parse(&name, format!("line {}: bad face", ln + 1)))?;
                    let first = tok.split('/').next().unwrap_or(tok);
                    let one_based: u32 = first.parse().map_err(|_| {
                        Error::parse(&name, format!("line {}: bad face index `{tok}`", ln + 1))
                    })?;
                    if one_based == 0 {
                        return Err(Error::parse(&name, format!("line {}: zero face index", ln + 1)));
                    }
                    *v = one_based - 1;
                }
                triangles.push(idx);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

pub fn write_mesh(mesh: &TemplateMesh, path: &Path) -> Result<()> {
    write_obj(&mesh.vertices, &mesh.triangles, path)
}

pub fn read_mesh(path: &Path) -> Result<TemplateMesh> {
    let (vertices, triangles) = read_obj(path)?;
    TemplateMesh::new(vertices, triangles)
        .map_err(|e| Error::parse(path_str(path), e.to_string()))
}

pub fn write_hull(hull: &HullMesh, path: &Path) -> Result<()> {
    write_obj(&hull.vertices, &hull.triangles, path)
}

pub fn read_hull(path: &Path) -> Result<HullMesh> {
    let (vertices, triangles) = read_obj(path)?;
    Ok(HullMesh {
        vertices,
        triangles,
    })
}

// --------------------------------------------------------------- scan ---

pub fn write_scan(scan: &Scan, path: &Path) -> Result<()> {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", scan.n_points()));
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in &scan.points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_scan(path: &Path) -> Result<Scan> {
    let name = path_str(path);
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse(&name, "missing `ply` magic"));
    }
    let mut n_points: Option<usize> = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            n_points = Some(rest.trim().parse().map_err(|_| {
                Error::parse(&name, format!("bad vertex count `{rest}`"))
            })?);
        }
    }
    let n = n_points.ok_or_else(|| Error::parse(&name, "missing element vertex count"))?;
    let mut points = Vec::with_capacity(n);
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().take(3).map(str::parse).collect();
        let vals = vals.map_err(|_| Error::parse(&name, format!("bad point line `{line}`")))?;
        if vals.len() != 3 {
            return Err(Error::parse(&name, format!("bad point line `{line}`")));
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if points.len() == n {
            break;
        }
    }
    if points.len() != n {
        return Err(Error::parse(
            &name,
            format!("expected {n} points, file has {}", points.len()),
        ));
    }
    Scan::new(points)
}

// -------------------------------------------------- pgm / ppm / pfm ---

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(mask.data().len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", mask.width, mask.height).as_bytes());
    out.extend(mask.data().iter().map(|&b| if b { 255u8 } else { 0u8 }));
    fs::write(path, out)?;
    Ok(())
}

/// Binary header token reader: skips whitespace and `#` comments,
/// returning (token, offset past it).
fn next_token(bytes: &[u8], mut pos: usize, name: &str) -> Result<(String, usize)> {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        break;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos {
        return Err(Error::parse_at(name, "unexpected end of header", start));
    }
    Ok((
        String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        pos,
    ))
}

fn parse_netpbm_header(
    bytes: &[u8],
    magic: &str,
    name: &str,
) -> Result<(u32, u32, usize)> {
    let (got, mut pos) = next_token(bytes, 0, name)?;
    if got != magic {
        return Err(Error::parse_at(
            name,
            format!("expected `{magic}` magic, found `{got}`"),
            0,
        ));
    }
    let (w, p) = next_token(bytes, pos, name)?;
    pos = p;
    let (h, p) = next_token(bytes, pos, name)?;
    pos = p;
    let (maxv, p) = next_token(bytes, pos, name)?;
    pos = p;
    if maxv != "255" {
        return Err(Error::parse_at(name, format!("unsupported maxval {maxv}"), pos));
    }
    let w: u32 = w
        .parse()
        .map_err(|_| Error::parse_at(name, format!("bad width `{w}`"), pos))?;
    let h: u32 = h
        .parse()
        .map_err(|_| Error::parse_at(name, format!("bad height `{h}`"), pos))?;
    // Exactly one whitespace byte separates header and payload.
    Ok((w, h, pos + 1))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let name = path_str(path);
    let bytes = fs::read(path)?;
    let (w, h, data_at) = parse_netpbm_header(&bytes, "P5", &name)?;
    let need = (w * h) as usize;
    let payload = bytes
        .get(data_at..data_at + need)
        .ok_or_else(|| Error::parse_at(&name, format!("payload needs {need} bytes"), data_at))?;
    Ok(BinaryMask::from_data(
        w,
        h,
        payload.iter().map(|&b| b >= 128).collect(),
    ))
}

pub fn write_image(image: &RgbImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(image.data().len() + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", image.width, image.height).as_bytes());
    out.extend_from_slice(image.data());
    fs::write(path, out)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let name = path_str(path);
    let bytes = fs::read(path)?;
    let (w, h, data_at) = parse_netpbm_header(&bytes, "P6", &name)?;
    let need = (w * h * 3) as usize;
    let payload = bytes
        .get(data_at..data_at + need)
        .ok_or_else(|| Error::parse_at(&name, format!("payload needs {need} bytes"), data_at))?;
    Ok(RgbImage::from_data(w, h, payload.to_vec()))
}

/// Portable float map, 32-bit little-endian, rows top-down; background
/// (+inf) encodes as 3.4e38.
pub fn write_depth(depth: &DepthMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(depth.values().len() * 4 + 32);
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).as_bytes());
    for &v in depth.values() {
        let enc = if v.is_finite() { v } else { DEPTH_BACKGROUND_ENCODED };
        out.extend_from_slice(&enc.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let name = path_str(path);
    let bytes = fs::read(path)?;
    let (magic, mut pos) = next_token(&bytes, 0, &name)?;
    if magic != "Pf" {
        return Err(Error::parse_at(&name, format!("expected `Pf`, found `{magic}`"), 0));
    }
    let (w, p) = next_token(&bytes, pos, &name)?;
    pos = p;
    let (h, p) = next_token(&bytes, pos, &name)?;
    pos = p;
    let (scale, p) = next_token(&bytes, pos, &name)?;
    pos = p;
    let scale: f64 = scale
        .parse()
        .map_err(|_| Error::parse_at(&name, format!("bad scale `{scale}`"), pos))?;
    if scale >= 0.0 {
        return Err(Error::parse_at(&name, "big-endian depth maps unsupported", pos));
    }
    let w: u32 = w
        .parse()
        .map_err(|_| Error::parse_at(&name, format!("bad width `{w}`"), pos))?;
    let h: u32 = h
        .parse()
        .map_err(|_| Error::parse_at(&name, format!("bad height `{h}`"), pos))?;
    let data_at = pos + 1;
    let need = (w * h) as usize * 4;
    let payload = bytes
        .get(data_at..data_at + need)
        .ok_or_else(|| Error::parse_at(&name, format!("payload needs {need} bytes"), data_at))?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if v >= 3.39e38 {
                f32::INFINITY
            } else {
                v
            }
        })
        .collect();
    Ok(DepthMap::from_values(w, h, values))
}

// ------------------------------------------------------ grid / text ---

pub fn write_grid(grid: &GridSpec, path: &Path) -> Result<()> {
    let text = format!(
        "grid.origin = {} {} {}\ngrid.resolution = {}\ngrid.voxel_edge = {}\n",
        grid.origin.x, grid.origin.y, grid.origin.z, grid.resolution, grid.voxel_edge
    );
    fs::write(path, text)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<GridSpec> {
    let name = path_str(path);
    let kv = parse_kv(&fs::read_to_string(path)?, &name)?;
    let origin_raw = kv
        .get("grid.origin")
        .ok_or_else(|| Error::parse(&name, "missing grid.origin"))?;
    let vals: std::result::Result<Vec<f64>, _> =
        origin_raw.split_whitespace().map(str::parse).collect();
    let vals = vals.map_err(|_| Error::parse(&name, "bad grid.origin"))?;
    if vals.len() != 3 {
        return Err(Error::parse(&name, "grid.origin needs 3 values"));
    }
    let resolution: usize = kv
        .get("grid.resolution")
        .ok_or_else(|| Error::parse(&name, "missing grid.resolution"))?
        .parse()
        .map_err(|_| Error::parse(&name, "bad grid.resolution"))?;
    let voxel_edge: f64 = kv
        .get("grid.voxel_edge")
        .ok_or_else(|| Error::parse(&name, "missing grid.voxel_edge"))?
        .parse()
        .map_err(|_| Error::parse(&name, "bad grid.voxel_edge"))?;
    GridSpec::new(Point3::new(vals[0], vals[1], vals[2]), resolution, voxel_edge)
}

pub fn write_indices(ids: &[usize], path: &Path) -> Result<()> {
    let mut out = String::new();
    for &i in ids {
        out.push_str(&format!("{i}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let name = path_str(path);
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::parse(&name, format!("bad index `{l}`")))
        })
        .collect()
}

pub fn write_regions(regions: &[Region], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in regions {
        out.push_str(r.name());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_regions(path: &Path) -> Result<Vec<Region>> {
    let name = path_str(path);
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            Region::parse(l.trim())
                .ok_or_else(|| Error::parse(&name, format!("unknown region `{l}`")))
        })
        .collect()
}

// ------------------------------------------------------- binary dumps ---

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], name: &str) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            name: name.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::parse_at(&self.name, "truncated file", self.pos))?;
        self.pos += n;
        Ok(slice)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(Error::parse_at(
                &self.name,
                format!("bad magic {:?}", String::from_utf8_lossy(got)),
                0,
            ));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Feature volume dump: header (resolution, channels, origin, edge) then
/// mean and variance as row-major 32-bit floats plus the validity bytes.
pub fn write_volume(volume: &FeatureVolume, path: &Path) -> Result<()> {
    let n = volume.spec.n_voxels();
    let c = volume.channels;
    let mut out = Vec::with_capacity(24 + n * c * 8 + n);
    out.extend_from_slice(b"HCFV");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(volume.spec.resolution as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for i in 0..3 {
        out.extend_from_slice(&volume.spec.origin[i].to_le_bytes());
    }
    out.extend_from_slice(&volume.spec.voxel_edge.to_le_bytes());
    for voxel in 0..n {
        for &m in volume.mean_at(voxel) {
            out.extend_from_slice(&(m as f32).to_le_bytes());
        }
    }
    for voxel in 0..n {
        for &v in volume.variance_at(voxel) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for voxel in 0..n {
        out.push(volume.is_valid(voxel) as u8);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read back a feature volume dump (32-bit floats widen to f64).
pub fn read_volume(path: &Path) -> Result<FeatureVolume> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes, &path_str(path));
    r.magic(b"HCFV")?;
    let version = r.u32()?;
    if version != 1 {
        return Err(Error::parse(&r.name, format!("unsupported volume version {version}")));
    }
    let resolution = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let origin = Point3::new(r.f64()?, r.f64()?, r.f64()?);
    let edge = r.f64()?;
    let spec = GridSpec::new(origin, resolution, edge)?;
    let n = spec.n_voxels();
    let mean: Vec<f64> = r.f32_vec(n * channels)?.into_iter().map(f64::from).collect();
    let variance: Vec<f64> = r.f32_vec(n * channels)?.into_iter().map(f64::from).collect();
    let valid: Vec<bool> = r.take(n)?.iter().map(|&b| b != 0).collect();
    Ok(FeatureVolume::from_parts(spec, channels, mean, variance, valid))
}

/// Predictor checkpoint: header (kind, dims, seed) + parameter floats,
/// little-endian.
pub fn write_predictor(predictor: &Predictor, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(64 + predictor.params.len() * 8);
    out.extend_from_slice(b"HCPK");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.push(match predictor.spec.kind {
        PredictorKind::DirectVertex => 0,
        PredictorKind::LinearHeatmap => 1,
    });
    out.extend_from_slice(&(predictor.spec.n_vertices as u32).to_le_bytes());
    out.extend_from_slice(&(predictor.spec.resolution as u32).to_le_bytes());
    out.extend_from_slice(&(predictor.spec.feature_len as u32).to_le_bytes());
    out.extend_from_slice(&predictor.spec.init_scale.to_le_bytes());
    out.extend_from_slice(&predictor.seed.to_le_bytes());
    out.extend_from_slice(&(predictor.params.len() as u64).to_le_bytes());
    for p in &predictor.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_predictor(path: &Path) -> Result<Predictor> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes, &path_str(path));
    r.magic(b"HCPK")?;
    let version = r.u32()?;
    if version != 1 {
        return Err(Error::parse(&r.name, format!("unsupported checkpoint version {version}")));
    }
    let kind = match r.u8()? {
        0 => PredictorKind::DirectVertex,
        1 => PredictorKind::LinearHeatmap,
        other => {
            return Err(Error::parse(&r.name, format!("unknown predictor kind {other}")))
        }
    };
    let n_vertices = r.u32()? as usize;
    let resolution = r.u32()? as usize;
    let feature_len = r.u32()? as usize;
    let init_scale = r.f64()?;
    let seed = r.u64()?;
    let n_params = r.u64()? as usize;
    let spec = PredictorSpec::new(kind, n_vertices, resolution, feature_len)
        .with_init_scale(init_scale);
    if n_params != spec.param_len() {
        return Err(Error::parse(
            &r.name,
            format!("checkpoint has {n_params} params, spec wants {}", spec.param_len()),
        ));
    }
    let params = r.f64_vec(n_params)?;
    Predictor::from_params(spec, seed, params)
}

// ------------------------------------------------------------- scene ---

/// Appends one record per line to the structured step log.
pub struct StepLog {
    file: fs::File,
}

impl StepLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(StepLog {
            file: fs::File::create(path)?,
        })
    }

    pub fn append(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}

/// Write a complete scene directory: rig, meshes, scan, ground-truth
/// noise ids, and the per-view masks/depths/images.
pub fn export_scene(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rig(&scene.rig, &dir.join("rig.txt"))?;
    write_mesh(&scene.gt_mesh, &dir.join("gt_mesh.obj"))?;
    write_mesh(&scene.reg_mesh, &dir.join("reg_mesh.obj"))?;
    write_scan(&scene.scan, &dir.join("scan.ply"))?;
    if let Some(labels) = &scene.scan.labels {
        write_regions(labels, &dir.join("scan_labels.txt"))?;
    }
    if let Some(regions) = &scene.gt_mesh.regions {
        write_regions(regions, &dir.join("vertex_labels.txt"))?;
    }
    write_indices(&scene.corrupted_vertex_ids, &dir.join("corrupted_vertices.txt"))?;
    write_indices(&scene.outlier_point_ids, &dir.join("outlier_points.txt"))?;
    for (i, view) in scene.rasterize_views().iter().enumerate() {
        write_mask(&view.mask, &dir.join(format!("mask_{i:03}.pgm")))?;
        write_depth(&view.depth, &dir.join(format!("depth_{i:03}.pfm")))?;
        write_image(&view.image, &dir.join(format!("image_{i:03}.ppm")))?;
    }
    Ok(())
}

/// Load the per-view masks of a scene directory, in view order.
pub fn load_scene_masks(dir: &Path, n_views: usize) -> Result<Vec<BinaryMask>> {
    (0..n_views)
        .map(|i| read_mask(&dir.join(format!("mask_{i:03}.pgm"))))
        .collect()
}

pub fn load_scene_images(dir: &Path, n_views: usize) -> Result<Vec<RgbImage>> {
    (0..n_views)
        .map(|i| read_image(&dir.join(format!("image_{i:03}.ppm"))))
        .collect()
}
