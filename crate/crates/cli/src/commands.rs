use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use psrgan::checkpoint::Checkpoint;
use psrgan::config::RunConfig;
use psrgan::data::{add_noise, is_supported, load_dir, load_image, save_image, write_synthetic, BitDepth, NoiseSpec};
use psrgan::gradcheck::{broken_gradient_case, registry, run_suite, GradCheckConfig};
use psrgan::metrics::{evaluate, Labels, MetricsReport};
use psrgan::progressive::{derive_seed, holdout_report, Trainer, LOG_HEADER};
use psrgan::{Error, Result};

use crate::{Common, Preset};

/// Name of the configuration echo written into output directories.
pub const CONFIG_ECHO: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.psrg";
pub const TRAIN_LOG: &str = "train.log";
pub const HOLDOUT_CSV: &str = "holdout.csv";
pub const METRICS_CSV: &str = "metrics.csv";

/// Worker count: 1 when deterministic, else `PSRG_THREADS` if set.
pub fn init_threads(deterministic: bool) -> Result<()> {
    let threads = match std::env::var("PSRG_THREADS") {
        _ if deterministic => Some(1),
        Ok(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("PSRG_THREADS={v:?} is not a positive integer")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = threads {
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

/// Layer preset, config file, `--set` pairs and flags over `base`.
fn resolve(common: &Common, base: Option<RunConfig>, scale_is_config: bool) -> Result<RunConfig> {
    let mut c = match (base, common.preset) {
        (Some(b), None) => b,
        (_, Some(Preset::Toy)) => RunConfig::toy(),
        (_, _) => RunConfig::default(),
    };
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(io(path))?;
        c.apply_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {pair:?}: expected KEY=VALUE")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        c.set("seed", &seed.to_string())?;
    }
    if let (Some(scale), true) = (common.scale, scale_is_config) {
        c.scale = scale;
    }
    if let Some(n) = common.iters {
        c.schedule.pretrain_iters = n;
        c.schedule.gan_iters_phase1 = n;
        c.schedule.gan_iters_phase2 = n;
    }
    if let Some(noise) = &common.noise {
        c.set("noise", noise)?;
    }
    if common.deterministic {
        c.deterministic = true;
    }
    Ok(c)
}

pub fn degrade(common: &Common, input: &Path, output: &Path) -> Result<()> {
    let config = resolve(common, None, false)?;
    let r = common.scale.unwrap_or(config.scale);
    config.validate()?;
    let images = load_dir(input)?;
    create_dir(output)?;
    for (i, (id, hr)) in images.iter().enumerate() {
        let mut lr = config.degradation.apply(hr, r).map_err(|e| Error::Data(format!("{id}: {e}")))?;
        if let Some(noise) = &config.noise {
            lr = add_noise(&lr, &noise.with_seed(derive_seed(config.seed, i as u64)))?;
        }
        save_image(&lr, &output.join(format!("{id}.png")), BitDepth::Sixteen)?;
    }
    write_text(&output.join(CONFIG_ECHO), &format!("# degrade x{r}\n{}", config.to_text()))?;
    log::info!("degraded {} images by x{r} into {}", images.len(), output.display());
    Ok(())
}

pub fn train(common: &Common, output: Option<PathBuf>, resume: Option<&Path>, max_steps: Option<u64>) -> Result<()> {
    let checkpoint = resume.map(Checkpoint::load).transpose()?;
    let base = match &checkpoint {
        Some(ck) if common.config.is_none() && common.preset.is_none() => Some(RunConfig::parse(&ck.config)?),
        _ => None,
    };
    let mut config = resolve(common, base, true)?;
    if let Some(out) = output {
        config.output_dir = out;
    }
    config.validate()?;
    let out = config.output_dir.clone();
    let (train_set, held_out) = config.datasets()?;
    let pipeline = config.pipeline()?;
    let schedule = config.train_schedule();
    let mut trainer = match &checkpoint {
        Some(ck) => Trainer::resume(pipeline, schedule, &train_set, ck)?,
        None => Trainer::new(pipeline, schedule, &train_set)?,
    };
    create_dir(&out)?;
    let text = config.to_text();
    write_text(&out.join(CONFIG_ECHO), &text)?;

    let log_path = out.join(TRAIN_LOG);
    let mut log_file = if checkpoint.is_some() && log_path.exists() {
        BufWriter::new(OpenOptions::new().append(true).open(&log_path).map_err(io(&log_path))?)
    } else {
        let mut f = BufWriter::new(File::create(&log_path).map_err(io(&log_path))?);
        writeln!(f, "{LOG_HEADER}").map_err(io(&log_path))?;
        f
    };
    let ck_path = out.join(CHECKPOINT_FILE);
    let every = config.schedule.checkpoint_every as u64;
    let total = trainer.total_iterations();
    trainer.run(max_steps, |t, r| {
        writeln!(log_file, "{}", r.log_line()).map_err(io(&log_path))?;
        let done = r.iteration + 1;
        if every > 0 && done % every == 0 {
            log_file.flush().map_err(io(&log_path))?;
            t.checkpoint(&text).save(&ck_path)?;
            log::info!("iteration {done}/{total}: total loss {:.6}", r.loss.total);
        }
        Ok(())
    })?;
    log_file.flush().map_err(io(&log_path))?;
    trainer.checkpoint(&text).save(&ck_path)?;
    log::info!("checkpoint at iteration {} written to {}", trainer.iteration(), ck_path.display());

    if trainer.is_finished() && total > 0 {
        let report = holdout_report(trainer.pipeline(), &held_out, None, config.color_mode)?;
        report.write_csv(&out.join(HOLDOUT_CSV))?;
        for g in report.aggregates() {
            println!(
                "held-out x{} {:<8} psnr {:.3} dB  ssim {:.4}  s3 {:.4}  ({} patches)",
                g.scale, g.method, g.psnr_db.mean, g.ssim.mean, g.s3.mean, g.count
            );
        }
    }
    Ok(())
}

fn checkpoint_pipeline(path: &Path) -> Result<(RunConfig, psrgan::progressive::PipelineSpec)> {
    let ck = Checkpoint::load(path)?;
    let mut config = RunConfig::parse(&ck.config)?;
    // Inference needs only the generators.
    config.feature_weights = None;
    let mut pipeline = config.pipeline()?;
    pipeline.read_generators(&ck)?;
    Ok((config, pipeline))
}

pub fn superres(common: &Common, checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let (config, pipeline) = checkpoint_pipeline(checkpoint)?;
    let scale = common.scale.unwrap_or(config.scale);
    if input.is_dir() {
        let images = load_dir(input)?;
        create_dir(output)?;
        for (id, lr) in &images {
            let sr = pipeline.super_resolve(lr, scale)?;
            save_image(&sr, &output.join(format!("{id}.png")), BitDepth::Sixteen)?;
        }
        write_text(&output.join(CONFIG_ECHO), &format!("# superres x{scale}\n{}", config.to_text()))?;
        log::info!("upscaled {} images by x{scale} into {}", images.len(), output.display());
    } else {
        if !is_supported(output) {
            return Err(Error::Config(format!("{}: output must be .png, .pgm or .ppm", output.display())));
        }
        let sr = pipeline.super_resolve(&load_image(input)?, scale)?;
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        save_image(&sr, output, BitDepth::Sixteen)?;
        let mut echo = output.as_os_str().to_owned();
        echo.push(".config.txt");
        write_text(Path::new(&echo), &format!("# superres x{scale}\n{}", config.to_text()))?;
    }
    Ok(())
}

pub fn eval(common: &Common, sr: &Path, hr: &Path, label: &str, output: &Path) -> Result<()> {
    let config = resolve(common, None, true)?;
    let noise = config.noise.as_ref().map_or_else(|| "none".to_string(), NoiseSpec::to_string);
    let labels = Labels::new(label, config.scale, noise);
    let report: MetricsReport = evaluate(&load_dir(sr)?, &load_dir(hr)?, &labels, config.color_mode)?;
    create_dir(output)?;
    report.write_csv(&output.join(METRICS_CSV))?;
    write_text(&output.join(CONFIG_ECHO), &config.to_text())?;
    for g in report.aggregates() {
        println!(
            "{} x{} noise {}: psnr {:.3} dB  ssim {:.4}  s3 {:.4}  ({} images)",
            g.method, g.scale, g.noise, g.psnr_db.mean, g.ssim.mean, g.s3.mean, g.count
        );
    }
    Ok(())
}

pub fn gradcheck(common: &Common, inject_broken: bool) -> Result<()> {
    let config = resolve(common, None, true)?;
    let mut cases = registry(config.seed);
    if inject_broken {
        cases.push(broken_gradient_case());
    }
    let reports = run_suite(&cases, &GradCheckConfig::default())?;
    println!("{:<28} {:>14} {:>8} {:>8}  result", "op", "max_rel_error", "checked", "kinks");
    for r in &reports {
        println!(
            "{:<28} {:>14.3e} {:>8} {:>8}  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped_kinks,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Domain {
            op: "gradcheck",
            detail: format!("gradient mismatch in {}", failed.join(", ")),
        })
    }
}

pub fn synth(common: &Common, output: &Path, count: Option<usize>, size: Option<usize>) -> Result<()> {
    let config = resolve(common, None, true)?;
    let (count, size) = (count.unwrap_or(config.synthetic_count), size.unwrap_or(config.synthetic_size));
    let paths = write_synthetic(output, count, size, config.seed)?;
    write_text(&output.join(CONFIG_ECHO), &config.to_text())?;
    log::info!("wrote {} synthetic images to {}", paths.len(), output.display());
    Ok(())
}
