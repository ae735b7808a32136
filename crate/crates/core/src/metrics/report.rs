use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::quality::{psnr, ssim};
use super::sharpness::{luma, s3_sharpness};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// CSV header of a [`MetricsReport`].
pub const CSV_HEADER: &str = "id,method,scale,noise,psnr_db,ssim,s3";

/// Which pixels PSNR and SSIM compare. S3 always uses luma.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColorMode {
    /// Every channel, equally weighted.
    #[default]
    PerChannel,
    /// Rec. 601 luma of color images.
    Luma,
}

/// Provenance attached to every row of one evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    pub method: String,
    pub scale: usize,
    /// Noise condition, e.g. `none` or `gaussian:0.005`.
    pub noise: String,
}

impl Labels {
    pub fn new(method: impl Into<String>, scale: usize, noise: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            scale,
            noise: noise.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub method: String,
    pub scale: usize,
    pub noise: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub s3: f64,
}

/// Mean and sample standard deviation of one metric over a group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stddev: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, stddev }
    }
}

/// Per-(method, scale, noise) aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub method: String,
    pub scale: usize,
    pub noise: String,
    pub count: usize,
    pub psnr_db: Summary,
    pub ssim: Summary,
    pub s3: Summary,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn extend(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
    }

    /// Groups in `(method, scale, noise)` order.
    pub fn aggregates(&self) -> Vec<GroupSummary> {
        let mut groups: BTreeMap<(&str, usize, &str), Vec<&MetricRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((&r.method, r.scale, &r.noise)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((method, scale, noise), rows)| {
                let pick = |f: fn(&MetricRow) -> f64| Summary::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                GroupSummary {
                    method: method.into(),
                    scale,
                    noise: noise.into(),
                    count: rows.len(),
                    psnr_db: pick(|r| r.psnr_db),
                    ssim: pick(|r| r.ssim),
                    s3: pick(|r| r.s3),
                }
            })
            .collect()
    }

    /// Rows sorted by `(method, id)`, ties broken by scale then noise, with
    /// six decimals. Identical reports give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&MetricRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            (&a.method, &a.id, a.scale, &a.noise).cmp(&(&b.method, &b.id, b.scale, &b.noise))
        });
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                csv_field(&r.id),
                csv_field(&r.method),
                r.scale,
                csv_field(&r.noise),
                r.psnr_db,
                r.ssim,
                r.s3
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row scoring `sr` against `hr`.
pub fn score(id: &str, sr: &Tensor, hr: &Tensor, labels: &Labels, color: ColorMode) -> Result<MetricRow> {
    let (a, b) = match color {
        ColorMode::PerChannel => (sr.clone(), hr.clone()),
        ColorMode::Luma => (luma(sr)?, luma(hr)?),
    };
    Ok(MetricRow {
        id: id.to_string(),
        method: labels.method.clone(),
        scale: labels.scale,
        noise: labels.noise.clone(),
        psnr_db: psnr(&a, &b, 1.0)?,
        ssim: ssim(&a, &b)?,
        s3: s3_sharpness(sr)?,
    })
}

/// Score every SR image against the HR image with the same id. Both sets
/// must hold exactly the same ids.
pub fn evaluate(
    sr_set: &[(String, Tensor)],
    hr_set: &[(String, Tensor)],
    labels: &Labels,
    color: ColorMode,
) -> Result<MetricsReport> {
    let hr: BTreeMap<&str, &Tensor> = hr_set.iter().map(|(id, t)| (id.as_str(), t)).collect();
    if hr.len() != hr_set.len() {
        return Err(Error::Data("duplicate ids in the reference set".into()));
    }
    if sr_set.len() != hr_set.len() {
        return Err(Error::Data(format!(
            "{} images to score against {} references",
            sr_set.len(),
            hr_set.len()
        )));
    }
    let rows = sr_set
        .iter()
        .map(|(id, sr)| {
            let reference = hr.get(id.as_str()).ok_or_else(|| Error::Data(format!("{id}: no reference image")))?;
            score(id, sr, reference, labels, color)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport { rows })
}
