//! 2D feature extraction, bilinear sampling, and visibility-weighted
//! mean/variance fusion into 3D feature volumes.

use nalgebra::{Point3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::raster::DepthMap;
use crate::visibility::{voxel_visibility, VisibilityMask, VisibilityRule};

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; (width * height * 3) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), (width * height * 3) as usize);
        RgbImage {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Luma in [0, 1].
    #[inline]
    pub fn gray(&self, x: u32, y: u32) -> f64 {
        let [r, g, b] = self.get(x, y);
        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
    }
}

/// Per-pixel feature vectors, pixel-major layout.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: u32, height: u32, channels: usize) -> Self {
        FeatureMap {
            width,
            height,
            channels,
            values: vec![0.0; width as usize * height as usize * channels],
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> &[f64] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels;
        &self.values[i..i + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, x: u32, y: u32) -> &mut [f64] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels;
        &mut self.values[i..i + self.channels]
    }
}

/// Pluggable 2D backbone. The default analytic extractor keeps the whole
/// pipeline deterministic; a learned extractor can be substituted behind
/// this trait.
pub trait FeatureExtractor: Sync {
    fn channels(&self) -> usize;
    fn extract(&self, image: &RgbImage) -> FeatureMap;
}

/// Deterministic 5-channel features: grayscale, central-difference x/y
/// gradients, and 3x3 local mean and population std. Borders replicate.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticExtractor;

impl FeatureExtractor for AnalyticExtractor {
    fn channels(&self) -> usize {
        5
    }

    fn extract(&self, image: &RgbImage) -> FeatureMap {
        extract_features(image)
    }
}

pub fn extract_features(image: &RgbImage) -> FeatureMap {
    let (w, h) = (image.width, image.height);
    let mut fmap = FeatureMap::new(w, h, 5);
    let clamp_x = |x: i64| x.clamp(0, w as i64 - 1) as u32;
    let clamp_y = |y: i64| y.clamp(0, h as i64 - 1) as u32;
    for y in 0..h {
        for x in 0..w {
            let g = image.gray(x, y);
            let gx = 0.5
                * (image.gray(clamp_x(x as i64 + 1), y) - image.gray(clamp_x(x as i64 - 1), y));
            let gy = 0.5
                * (image.gray(x, clamp_y(y as i64 + 1)) - image.gray(x, clamp_y(y as i64 - 1)));
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let v = image.gray(clamp_x(x as i64 + dx), clamp_y(y as i64 + dy));
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / 9.0;
            let var = (sum_sq / 9.0 - mean * mean).max(0.0);
            let out = fmap.at_mut(x, y);
            out[0] = g;
            out[1] = gx;
            out[2] = gy;
            out[3] = mean;
            out[4] = var.sqrt();
        }
    }
    fmap
}

/// Bilinear interpolation of the four neighboring pixels; coordinates
/// clamp to the border.
pub fn sample_bilinear(fmap: &FeatureMap, pixel: &Vector2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; fmap.channels];
    sample_bilinear_into(fmap, pixel, &mut out);
    out
}

pub fn sample_bilinear_into(fmap: &FeatureMap, pixel: &Vector2<f64>, out: &mut [f64]) {
    let x = pixel.x.clamp(0.0, fmap.width as f64 - 1.0);
    let y = pixel.y.clamp(0.0, fmap.height as f64 - 1.0);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(fmap.width - 1);
    let y1 = (y0 + 1).min(fmap.height - 1);
    let v00 = fmap.at(x0, y0);
    let v10 = fmap.at(x1, y0);
    let v01 = fmap.at(x0, y1);
    let v11 = fmap.at(x1, y1);
    for c in 0..fmap.channels {
        out[c] = (1.0 - fx) * (1.0 - fy) * v00[c]
            + fx * (1.0 - fy) * v10[c]
            + (1.0 - fx) * fy * v01[c]
            + fx * fy * v11[c];
    }
}

/// Weighted mean and biased variance over views; a view contributes with
/// effective weight `indicator * weight`. Returns zeros and `valid =
/// false` when no view contributes.
pub fn fuse_mean_variance(
    features: &[Vec<f64>],
    indicators: &[bool],
    weights: &[f64],
) -> (Vec<f64>, Vec<f64>, bool) {
    assert_eq!(features.len(), indicators.len());
    assert_eq!(features.len(), weights.len());
    let channels = features.first().map_or(0, |f| f.len());
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    let mut total = 0.0;
    for ((f, &ind), &w) in features.iter().zip(indicators).zip(weights) {
        let w = if ind { w } else { 0.0 };
        if w <= 0.0 {
            continue;
        }
        total += w;
        for c in 0..channels {
            mean[c] += w * f[c];
            var[c] += w * f[c] * f[c];
        }
    }
    if total <= 0.0 {
        return (vec![0.0; channels], vec![0.0; channels], false);
    }
    for c in 0..channels {
        mean[c] /= total;
        var[c] = (var[c] / total - mean[c] * mean[c]).max(0.0);
    }
    (mean, var, true)
}

/// Fused (mean, variance) feature volume over a voxel grid.
#[derive(Debug, Clone)]
pub struct FeatureVolume {
    pub spec: GridSpec,
    pub channels: usize,
    mean: Vec<f64>,
    variance: Vec<f64>,
    valid: Vec<bool>,
}

impl FeatureVolume {
    /// All-valid volume with zeroed features; lets grid-only consumers
    /// (the direct-vertex predictor) run without images.
    pub fn uniform_valid(spec: GridSpec, channels: usize) -> Self {
        let n = spec.n_voxels();
        FeatureVolume {
            spec,
            channels,
            mean: vec![0.0; n * channels],
            variance: vec![0.0; n * channels],
            valid: vec![true; n],
        }
    }

    /// Reassemble a volume from raw arrays (used by the file reader).
    pub fn from_parts(
        spec: GridSpec,
        channels: usize,
        mean: Vec<f64>,
        variance: Vec<f64>,
        valid: Vec<bool>,
    ) -> Self {
        let n = spec.n_voxels();
        assert_eq!(mean.len(), n * channels);
        assert_eq!(variance.len(), n * channels);
        assert_eq!(valid.len(), n);
        FeatureVolume {
            spec,
            channels,
            mean,
            variance,
            valid,
        }
    }

    #[inline]
    pub fn mean_at(&self, voxel: usize) -> &[f64] {
        &self.mean[voxel * self.channels..(voxel + 1) * self.channels]
    }

    #[inline]
    pub fn variance_at(&self, voxel: usize) -> &[f64] {
        &self.variance[voxel * self.channels..(voxel + 1) * self.channels]
    }

    #[inline]
    pub fn is_valid(&self, voxel: usize) -> bool {
        self.valid[voxel]
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Concatenated [mean, variance] feature of one voxel (2 * channels).
    pub fn fused_into(&self, voxel: usize, out: &mut [f64]) {
        out[..self.channels].copy_from_slice(self.mean_at(voxel));
        out[self.channels..2 * self.channels].copy_from_slice(self.variance_at(voxel));
    }

    pub fn fused_len(&self) -> usize {
        2 * self.channels
    }
}

/// Build the global-stage volume: per voxel, sample every visible view at
/// the voxel's projection and fuse with unit weights.
pub fn build_global_volume(
    images: &[RgbImage],
    rig: &CameraRig,
    grid: &GridSpec,
    vis: &VisibilityMask,
    extractor: &dyn FeatureExtractor,
) -> Result<FeatureVolume> {
    if images.len() != rig.n_views() {
        return Err(Error::Shape(format!(
            "{} images for {} cameras",
            images.len(),
            rig.n_views()
        )));
    }
    if vis.n_voxels != grid.n_voxels() || vis.n_views != rig.n_views() {
        return Err(Error::Shape(
            "visibility mask does not match grid/rig dimensions".into(),
        ));
    }
    for (img, cam) in images.iter().zip(rig.iter()) {
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::Shape(format!(
                "image {}x{} does not match camera {} ({}x{})",
                img.width, img.height, cam.id, cam.width, cam.height
            )));
        }
    }
    let fmaps: Vec<FeatureMap> = images.par_iter().map(|im| extractor.extract(im)).collect();
    Ok(build_volume_from_maps(&fmaps, rig, grid, |view, voxel| {
        if vis.get(view, voxel) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Shared volume builder: `weight_of(view, voxel)` returns the effective
/// (indicator x weight) contribution; <= 0 means invisible.
fn build_volume_from_maps(
    fmaps: &[FeatureMap],
    rig: &CameraRig,
    grid: &GridSpec,
    weight_of: impl Fn(usize, usize) -> f64 + Sync,
) -> FeatureVolume {
    let channels = fmaps.first().map_or(0, |f| f.channels);
    let n = grid.n_voxels();
    let mut mean = vec![0.0; n * channels];
    let mut variance = vec![0.0; n * channels];
    let mut valid = vec![false; n];

    mean.par_chunks_mut(channels)
        .zip(variance.par_chunks_mut(channels))
        .zip(valid.par_iter_mut())
        .enumerate()
        .for_each(|(voxel, ((m_out, v_out), ok))| {
            let center = grid.center_of_index(voxel);
            let mut sample = vec![0.0; channels];
            let mut total = 0.0;
            for (view, cam) in rig.iter().enumerate() {
                let w = weight_of(view, voxel);
                if w <= 0.0 {
                    continue;
                }
                let Ok((pixel, _)) = cam.project(&center) else {
                    continue;
                };
                sample_bilinear_into(&fmaps[view], &pixel, &mut sample);
                total += w;
                for c in 0..channels {
                    m_out[c] += w * sample[c];
                    v_out[c] += w * sample[c] * sample[c];
                }
            }
            if total > 0.0 {
                *ok = true;
                for c in 0..channels {
                    m_out[c] /= total;
                    v_out[c] = (v_out[c] / total - m_out[c] * m_out[c]).max(0.0);
                }
            } else {
                m_out.fill(0.0);
                v_out.fill(0.0);
            }
        });

    FeatureVolume {
        spec: *grid,
        channels,
        mean,
        variance,
        valid,
    }
}

/// Local-stage volume around one vertex: a small grid centered at the
/// vertex; visibility is tested once per view at the vertex and applied
/// to all local voxels, and each visible view is weighted by the clamped
/// cosine between the vertex normal and the direction toward the camera.
/// Returns the volume and the per-view weights actually used.
#[allow(clippy::too_many_arguments)]
pub fn build_local_volume(
    vertex: &Point3<f64>,
    normal: &Vector3<f64>,
    fmaps: &[FeatureMap],
    rig: &CameraRig,
    hull_depths: &[DepthMap],
    norm_grid: &GridSpec,
    rho: f64,
    rule: VisibilityRule,
    local_resolution: usize,
    local_edge: f64,
) -> Result<(FeatureVolume, Vec<f64>)> {
    debug_assert!((normal.norm() - 1.0).abs() < 1e-6);
    if fmaps.len() != rig.n_views() || hull_depths.len() != rig.n_views() {
        return Err(Error::Shape(
            "feature maps / hull depths do not match the rig".into(),
        ));
    }
    let local = GridSpec::centered(*vertex, local_resolution, local_resolution as f64 * local_edge)?;

    let weights: Vec<f64> = rig
        .iter()
        .enumerate()
        .map(|(view, cam)| {
            let visible = voxel_visibility(vertex, cam, &hull_depths[view], norm_grid, rho, rule);
            if !visible {
                return 0.0;
            }
            let dir = cam.center() - vertex;
            let len = dir.norm();
            if len < 1e-12 {
                return 0.0;
            }
            (normal.dot(&dir) / len).max(0.0)
        })
        .collect();

    let volume = build_volume_from_maps(fmaps, rig, &local, |view, _| weights[view]);
    Ok((volume, weights))
}
