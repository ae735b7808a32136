use super::pipeline::PipelineSpec;
use crate::data::{bicubic_resize, bilinear_resize, Dataset};
use crate::metrics::{evaluate, ColorMode, Labels, MetricsReport};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Method label of pipeline outputs in [`holdout_report`].
pub const METHOD_PIPELINE: &str = "psrgan";
pub const METHOD_BILINEAR: &str = "bilinear";
pub const METHOD_BICUBIC: &str = "bicubic";

/// Every patch of `data` at its LR level `k`, upscaled by `2^k` through the
/// pipeline and through both interpolation baselines, scored against the HR
/// patch. `k` defaults to all stages.
pub fn holdout_report(pipeline: &PipelineSpec, data: &Dataset, k: Option<usize>, color: ColorMode) -> Result<MetricsReport> {
    let k = k.unwrap_or(pipeline.num_stages());
    if k == 0 || k > data.max_level() {
        return Err(Error::Config(format!("level {k} is outside 1..={}", data.max_level())));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch(&indices)?;
    let (lr, hr) = (&batch.levels[k], &batch.levels[0]);
    let scale = 1 << k;
    let size = data.patch_size();
    let split = |t: &Tensor| -> Result<Vec<(String, Tensor)>> {
        batch.ids.iter().enumerate().map(|(i, id)| Ok((id.clone(), t.index_outer(i)?))).collect()
    };
    let reference = split(hr)?;
    let mut report = MetricsReport::default();
    for (method, out) in [
        (METHOD_PIPELINE, pipeline.super_resolve(lr, scale)?),
        (METHOD_BILINEAR, bilinear_resize(lr, size, size)?),
        (METHOD_BICUBIC, bicubic_resize(lr, size, size)?),
    ] {
        report.extend(evaluate(&split(&out)?, &reference, &Labels::new(method, scale, "none"), color)?);
    }
    Ok(report)
}

/// Mean PSNR of `method` in `report`.
pub fn mean_psnr(report: &MetricsReport, method: &str) -> Option<f64> {
    let rows: Vec<f64> = report.rows.iter().filter(|r| r.method == method).map(|r| r.psnr_db).collect();
    (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
}
