//! Flat `key = value` configuration with section-prefixed keys
//! (`grid.resolution = 32`). Defaults follow the pipeline's standard
//! setup: 160^3 hull grid at 5 mm, 32^3 global stage, 8^3 local stage at
//! 2 mm, visibility margin 0.1, 600x600 images.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::fit::FilterMode;
use crate::grid::GridSpec;
use crate::predict::PredictorKind;
use crate::synth::{NoiseRegion, RegNoise, ScanNoise, SceneSpec, Shape};
use crate::visibility::VisibilityRule;

/// Parse flat `key = value` text; `#` starts a comment, blank lines are
/// skipped, later keys override earlier ones.
pub fn parse_kv(text: &str, name: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(
                name,
                format!("line {}: expected `key = value`, got `{line}`", ln + 1),
            ));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
    pub source: String,
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        Ok(Config {
            values: parse_kv(text, source)?,
            source: source.to_string(),
        })
    }

    pub fn empty() -> Self {
        Config {
            values: BTreeMap::new(),
            source: "<empty>".into(),
        }
    }

    /// Override a key (CLI flags beat the file).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::MissingKey(key.into()))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require(key)?))
    }

    fn parse_with<T, F>(&self, key: &str, default: T, f: F) -> Result<T>
    where
        F: FnOnce(&str) -> Option<T>,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => f(raw).ok_or_else(|| Error::BadKey {
                key: key.into(),
                message: format!("cannot parse `{raw}`"),
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.parse_with(key, default, |s| s.parse().ok())
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.parse_with(key, default, |s| s.parse().ok())
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.parse_with(key, default, |s| s.parse().ok())
    }

    pub fn u32_or(&self, key: &str, default: u32) -> Result<u32> {
        self.parse_with(key, default, |s| s.parse().ok())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    // ---- pipeline-level composite getters -------------------------------

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let shape_raw = self.str_or("scene.shape", "sphere");
        let shape = Shape::parse(shape_raw).ok_or_else(|| Error::BadKey {
            key: "scene.shape".into(),
            message: format!("unknown shape `{shape_raw}`"),
        })?;
        let region_raw = self.str_or("scene.scan_noise_region", "back");
        let region = NoiseRegion::parse(region_raw).ok_or_else(|| Error::BadKey {
            key: "scene.scan_noise_region".into(),
            message: format!("unknown region `{region_raw}`"),
        })?;
        let mut spec = SceneSpec::new(shape, self.u64_or("scene.seed", 0)?);
        spec.n_views = self.usize_or("scene.n_views", 8)?;
        spec.ring_radius = self.f64_or("scene.ring_radius", 1.0)?;
        spec.image_size = self.u32_or("scene.image_size", 600)?;
        spec.scale = self.f64_or("scene.scale", 0.1)?;
        spec.scan_per_vertex = self.usize_or("scene.scan_per_vertex", 20)?;
        spec.subdivisions = self.u32_or("scene.subdivisions", 3)?;
        spec.reg_noise = RegNoise {
            fraction: self.f64_or("scene.reg_noise_fraction", 0.0)?,
            magnitude: self.f64_or("scene.reg_noise_magnitude", 0.0)?,
        };
        spec.scan_noise = ScanNoise {
            region,
            fraction: self.f64_or("scene.scan_noise_fraction", 0.0)?,
            magnitude: self.f64_or("scene.scan_noise_magnitude", 0.0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Hull-carving grid: centered cube, 160^3 at 5 mm by default.
    pub fn hull_grid(&self) -> Result<GridSpec> {
        let resolution = self.usize_or("grid.hull_resolution", 160)?;
        let edge = self.f64_or("grid.hull_edge", 0.005)?;
        let center = Point3::new(
            self.f64_or("grid.hull_center_x", 0.0)?,
            self.f64_or("grid.hull_center_y", 0.0)?,
            self.f64_or("grid.hull_center_z", 0.0)?,
        );
        GridSpec::centered(center, resolution, resolution as f64 * edge)
    }

    pub fn global_resolution(&self) -> Result<usize> {
        self.usize_or("grid.global_resolution", 32)
    }

    pub fn grid_padding(&self) -> Result<f64> {
        self.f64_or("grid.padding", 0.02)
    }

    pub fn local_resolution(&self) -> Result<usize> {
        self.usize_or("grid.local_resolution", 8)
    }

    pub fn local_edge(&self) -> Result<f64> {
        self.f64_or("grid.local_edge", 0.002)
    }

    pub fn rho(&self) -> Result<f64> {
        self.f64_or("visibility.rho", 0.1)
    }

    pub fn visibility_rule(&self) -> Result<VisibilityRule> {
        let raw = self.str_or("visibility.rule", "margin");
        VisibilityRule::parse(raw).ok_or_else(|| Error::BadKey {
            key: "visibility.rule".into(),
            message: format!("unknown rule `{raw}` (margin|band)"),
        })
    }

    /// Carving threshold: `all` means every view must see the voxel.
    pub fn carve_threshold(&self, n_views: usize) -> Result<u32> {
        let raw = self.str_or("carve.threshold", "all");
        if raw == "all" {
            return Ok(n_views as u32);
        }
        raw.parse().map_err(|_| Error::BadKey {
            key: "carve.threshold".into(),
            message: format!("expected `all` or a count, got `{raw}`"),
        })
    }

    pub fn predictor_kind(&self, key: &str, default: PredictorKind) -> Result<PredictorKind> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => PredictorKind::parse(raw).ok_or_else(|| Error::BadKey {
                key: key.into(),
                message: format!("unknown predictor kind `{raw}`"),
            }),
        }
    }

    pub fn filter_mode(&self, key: &str) -> Result<FilterMode> {
        let raw = self.str_or(key, "disagreement");
        FilterMode::parse(raw).ok_or_else(|| Error::BadKey {
            key: key.into(),
            message: format!("unknown filter `{raw}` (disagreement|none)"),
        })
    }
}
