//! Point-to-surface error statistics, per region and overall, reported in
//! millimeters.

use crate::error::{Error, Result};
use crate::mesh::{Region, Scan, TemplateMesh};
use crate::supervision::MeshDistance;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub region: String,
    pub median_mm: f64,
    pub avg_mm: f64,
    pub std_mm: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub regions: Vec<RegionStats>,
    /// Regions requested but empty, omitted from the stats blocks.
    pub omitted: Vec<String>,
}

impl ErrorReport {
    pub fn complete(&self) -> &RegionStats {
        self.regions
            .iter()
            .find(|r| r.region == "complete")
            .expect("report always carries the complete block")
    }

    pub fn region(&self, name: &str) -> Option<&RegionStats> {
        self.regions.iter().find(|r| r.region == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for note in &self.omitted {
            out.push_str(&format!("# region {note} omitted: no points\n"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("region {}\n", r.region));
            out.push_str(&format!("median_mm = {}\n", r.median_mm));
            out.push_str(&format!("avg_mm = {}\n", r.avg_mm));
            out.push_str(&format!("std_mm = {}\n", r.std_mm));
            out.push_str(&format!("n_points = {}\n", r.n_points));
        }
        out
    }

    pub fn parse(text: &str, path: &str) -> Result<ErrorReport> {
        let mut regions = Vec::new();
        let mut current: Option<RegionStats> = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix("region ") {
                if let Some(r) = current.take() {
                    regions.push(r);
                }
                current = Some(RegionStats {
                    region: name.trim().to_string(),
                    median_mm: 0.0,
                    avg_mm: 0.0,
                    std_mm: 0.0,
                    n_points: 0,
                });
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(path, format!("expected key = value, got `{line}`")));
            };
            let r = current
                .as_mut()
                .ok_or_else(|| Error::parse(path, "stat line before any region header"))?;
            let value = value.trim();
            match key.trim() {
                "median_mm" => r.median_mm = parse_f64(value, path)?,
                "avg_mm" => r.avg_mm = parse_f64(value, path)?,
                "std_mm" => r.std_mm = parse_f64(value, path)?,
                "n_points" => {
                    r.n_points = value
                        .parse()
                        .map_err(|_| Error::parse(path, format!("bad n_points `{value}`")))?
                }
                other => return Err(Error::parse(path, format!("unknown report key `{other}`"))),
            }
        }
        if let Some(r) = current.take() {
            regions.push(r);
        }
        if regions.is_empty() {
            return Err(Error::parse(path, "report has no region blocks"));
        }
        Ok(ErrorReport {
            regions,
            omitted: Vec::new(),
        })
    }
}

fn parse_f64(s: &str, path: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::parse(path, format!("bad float `{s}`")))
}

/// Median (even counts average the two central order statistics),
/// mean, and population std of a distance sample.
fn stats(mut values: Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (median, mean, var.sqrt())
}

/// Point-to-surface statistics of `scan` against `mesh`. Labels (from the
/// scan itself or the override argument) add per-region blocks after the
/// complete-head block; empty regions are noted and omitted.
pub fn compute_metrics(
    scan: &Scan,
    mesh: &TemplateMesh,
    labels: Option<&[Region]>,
) -> Result<ErrorReport> {
    let labels = labels.or(scan.labels.as_deref());
    if let Some(l) = labels {
        if l.len() != scan.n_points() {
            return Err(Error::Shape(format!(
                "{} labels for {} scan points",
                l.len(),
                scan.n_points()
            )));
        }
    }
    let md = MeshDistance::new(mesh)?;
    let mm: Vec<f64> = md
        .distances(&scan.points)
        .into_iter()
        .map(|d| d * 1000.0)
        .collect();

    let mut regions = Vec::new();
    let (median, avg, std) = stats(mm.clone());
    regions.push(RegionStats {
        region: "complete".into(),
        median_mm: median,
        avg_mm: avg,
        std_mm: std,
        n_points: mm.len(),
    });

    let mut omitted = Vec::new();
    if let Some(labels) = labels {
        for region in [Region::Face, Region::Scalp, Region::Neck] {
            let subset: Vec<f64> = mm
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == region)
                .map(|(&d, _)| d)
                .collect();
            if subset.is_empty() {
                omitted.push(region.name().to_string());
                continue;
            }
            let n = subset.len();
            let (median, avg, std) = stats(subset);
            regions.push(RegionStats {
                region: region.name().into(),
                median_mm: median,
                avg_mm: avg,
                std_mm: std,
                n_points: n,
            });
        }
    }

    Ok(ErrorReport { regions, omitted })
}
