//! Image-quality assessment: PSNR, SSIM, and ACDM.
//!
//! All metrics treat pixel range as `[0, 1]`. Windowed metrics share an
//! 11-tap Gaussian window with sigma 1.5 and reflect padding. PSNR of
//! identical images is reported as the `+INF` sentinel rather than a capped
//! value; aggregates count such pairs separately.

use std::collections::BTreeMap;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_filter_raw;
use crate::image::ImageGrid;

/// SSIM/ACDM window width.
pub const DEFAULT_KERNEL_SIZE: usize = 11;
/// Gaussian window standard deviation for the 11-tap window.
pub const WINDOW_SIGMA: f64 = 1.5;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same_shape(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "image shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB at unit range: `10 log10(1 / MSE)`.
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.pixels().len() as f64;
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Mean structural similarity with Gaussian-weighted local windows.
///
/// Per-channel SSIM maps are averaged; stabilizers are the conventional
/// `C1 = 0.01^2`, `C2 = 0.03^2` at unit range.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, kernel_size: usize) -> Result<f64> {
    check_same_shape(a, b)?;
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(Error::validation(format!(
            "ssim kernel size must be odd, got {kernel_size}"
        )));
    }
    let x = a.pixels();
    let y = b.pixels();
    let mu_x = gaussian_filter_raw(x, kernel_size, WINDOW_SIGMA);
    let mu_y = gaussian_filter_raw(y, kernel_size, WINDOW_SIGMA);
    let xx = gaussian_filter_raw(&(x * x), kernel_size, WINDOW_SIGMA);
    let yy = gaussian_filter_raw(&(y * y), kernel_size, WINDOW_SIGMA);
    let xy = gaussian_filter_raw(&(x * y), kernel_size, WINDOW_SIGMA);

    let mut total = 0.0;
    let n = x.len() as f64;
    for i in 0..x.len() {
        let (mx, my) = (mu_x.as_slice().unwrap()[i], mu_y.as_slice().unwrap()[i]);
        let var_x = xx.as_slice().unwrap()[i] - mx * mx;
        let var_y = yy.as_slice().unwrap()[i] - my * my;
        let cov = xy.as_slice().unwrap()[i] - mx * my;
        let num = (2.0 * mx * my + C1) * (2.0 * cov + C2);
        let den = (mx * mx + my * my + C1) * (var_x + var_y + C2);
        total += num / den;
    }
    Ok(total / n)
}

/// Color-consistency distance: Gaussian-smooth both RGB images, project each
/// pixel onto the orthonormal opponent-color basis, and return the mean
/// Euclidean distance between the opponent vectors. Zero exactly when the
/// smoothed images agree; RGB-only.
pub fn acdm(a: &ImageGrid, b: &ImageGrid, kernel_size: usize) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.channels() != 3 {
        return Err(Error::validation("acdm requires 3-channel images"));
    }
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(Error::validation(format!(
            "acdm kernel size must be odd, got {kernel_size}"
        )));
    }
    let sa = gaussian_filter_raw(a.pixels(), kernel_size, WINDOW_SIGMA);
    let sb = gaussian_filter_raw(b.pixels(), kernel_size, WINDOW_SIGMA);
    let (h, w, _) = sa.dim();
    let mut total = 0.0;
    for yv in 0..h {
        for xv in 0..w {
            let oa = opponent(&sa, yv, xv);
            let ob = opponent(&sb, yv, xv);
            let mut dist_sq = 0.0;
            for k in 0..3 {
                let d = oa[k] - ob[k];
                dist_sq += d * d;
            }
            total += dist_sq.sqrt();
        }
    }
    Ok(total / (h * w) as f64)
}

fn opponent(arr: &Array3<f64>, y: usize, x: usize) -> [f64; 3] {
    let (r, g, b) = (arr[[y, x, 0]], arr[[y, x, 1]], arr[[y, x, 2]]);
    [
        (r - g) / 2.0f64.sqrt(),
        (r + g - 2.0 * b) / 6.0f64.sqrt(),
        (r + g + b) / 3.0f64.sqrt(),
    ]
}

/// Metric identifier accepted by [`metric_report`] and the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Psnr,
    Ssim,
    Acdm,
}

impl MetricId {
    pub fn id(&self) -> &'static str {
        match self {
            MetricId::Psnr => "psnr",
            MetricId::Ssim => "ssim",
            MetricId::Acdm => "acdm",
        }
    }

    /// Parse an id. `fid` and `lpips` are recognized but reserved for
    /// externally-backed implementations, so they are rejected with a
    /// dedicated message instead of "unknown".
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "psnr" => Ok(MetricId::Psnr),
            "ssim" => Ok(MetricId::Ssim),
            "acdm" => Ok(MetricId::Acdm),
            "fid" | "lpips" => Err(Error::validation(format!(
                "metric {id:?} is reserved for an external backend and has no built-in implementation"
            ))),
            other => Err(Error::validation(format!("unknown metric id {other:?}"))),
        }
    }

    pub fn compute(&self, a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
        match self {
            MetricId::Psnr => psnr(a, b),
            MetricId::Ssim => ssim(a, b, DEFAULT_KERNEL_SIZE),
            MetricId::Acdm => acdm(a, b, DEFAULT_KERNEL_SIZE),
        }
    }
}

/// Aggregate over the finite per-pair values of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    /// Mean of finite values; absent when every value was infinite.
    pub mean: Option<f64>,
    /// Population standard deviation of finite values.
    pub std_dev: Option<f64>,
    /// Number of pairs evaluated.
    pub count: usize,
    /// Pairs whose value was the `+INF` sentinel (identical images in PSNR).
    pub infinite_count: usize,
}

/// Named metric values for a batch of image pairs, plus aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    /// Requested metric ids in evaluation order.
    pub metric_ids: Vec<String>,
    /// One map per pair, in input order.
    pub per_pair: Vec<BTreeMap<String, f64>>,
    pub aggregates: BTreeMap<String, MetricAggregate>,
}

impl MetricReport {
    /// CSV with one row per pair; infinite values print as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair");
        for id in &self.metric_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, row) in self.per_pair.iter().enumerate() {
            out.push_str(&i.to_string());
            for id in &self.metric_ids {
                out.push(',');
                out.push_str(&row[id].to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn aggregate(values: &[f64]) -> MetricAggregate {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let infinite_count = values.len() - finite.len();
    if finite.is_empty() {
        return MetricAggregate { mean: None, std_dev: None, count: values.len(), infinite_count };
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / finite.len() as f64;
    MetricAggregate {
        mean: Some(mean),
        std_dev: Some(var.sqrt()),
        count: values.len(),
        infinite_count,
    }
}

/// Evaluate the requested metrics over `(original, candidate)` pairs.
pub fn metric_report(pairs: &[(ImageGrid, ImageGrid)], metric_ids: &[MetricId]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::validation("metric_report requires at least one pair"));
    }
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (a, b) in pairs {
        let mut row = BTreeMap::new();
        for id in metric_ids {
            let value = id.compute(a, b)?;
            row.insert(id.id().to_string(), value);
            columns.entry(id.id().to_string()).or_default().push(value);
        }
        per_pair.push(row);
    }
    let aggregates = columns
        .into_iter()
        .map(|(name, values)| (name, aggregate(&values)))
        .collect();
    Ok(MetricReport {
        metric_ids: metric_ids.iter().map(|m| m.id().to_string()).collect(),
        per_pair,
        aggregates,
    })
}
