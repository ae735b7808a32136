//! Central finite-difference verification of every differentiable op and
//! of both networks, run in f64.
//!
//! Each case maps a list of named input tensors to a value. Non-scalar
//! outputs are contracted with fixed random weights so one backward sweep
//! covers every output element. Coordinates whose `±h` evaluations change
//! the activation pattern of a non-smooth op (see
//! [`Tape::kink_signature`]) are skipped and counted.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{
    adversarial_gen_loss, discriminator_loss, feature_loss, mse_loss, stage_loss, triplet_loss, FeatureExtractor,
    LossWeights, StageLossInput, TripletEmbedding, TripletMode,
};
use crate::models::{
    build_discriminator, build_generator, discriminator_forward, generator_forward, DiscriminatorConfig,
    GeneratorConfig, Pass,
};
use crate::tensor::{Activation, Bound, NormStats, ParamSet, Tape, Tensor, Var};
use crate::Result;

type Forward = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One function under test.
pub struct GradCase {
    pub name: String,
    inputs: Vec<(String, Tensor<f64>)>,
    forward: Forward,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<(String, Tensor<f64>)>,
        forward: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            forward: Box::new(forward),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Coordinates probed per input tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Input whose coordinate produced the maximum.
    pub worst_input: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Eval {
    value: f64,
    kinks: u64,
}

fn evaluate(case: &GradCase, inputs: &[Tensor<f64>], proj: &mut Option<Tensor<f64>>, seed: u64) -> Result<Eval> {
    let mut tape = Tape::<f64>::new();
    tape.track_kinks(true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (case.forward)(&mut tape, &vars)?;
    let value = contract(&mut tape, out, proj, seed)?;
    Ok(Eval {
        value: tape.value(value).item()?,
        kinks: tape.kink_signature(),
    })
}

/// Reduce `out` to a scalar with fixed random weights, drawn on first use.
fn contract(tape: &mut Tape<f64>, out: Var, proj: &mut Option<Tensor<f64>>, seed: u64) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let w = proj.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    });
    let w = tape.constant(w.clone());
    let y = tape.mul(out, w)?;
    tape.sum(y)
}

pub fn check_case(case: &GradCase, cfg: &GradCheckConfig) -> Result<CaseReport> {
    let mut proj = None;
    let mut tape = Tape::<f64>::new();
    tape.track_kinks(true);
    let vars: Vec<Var> = case.inputs.iter().map(|(_, t)| tape.leaf(t.clone(), true)).collect();
    let out = (case.forward)(&mut tape, &vars)?;
    let loss = contract(&mut tape, out, &mut proj, cfg.seed)?;
    let base_kinks = tape.kink_signature();
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut inputs: Vec<Tensor<f64>> = case.inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = CaseReport {
        name: case.name.clone(),
        max_rel_error: 0.0,
        worst_input: String::new(),
        checked: 0,
        skipped_kinks: 0,
        passed: true,
    };
    for (k, (name, tensor)) in case.inputs.iter().enumerate() {
        let n = tensor.numel();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let zero = Tensor::zeros(tensor.shape().to_vec());
        let analytic = grads.get(vars[k]).unwrap_or(&zero);
        for i in coords {
            let x0 = tensor.data()[i];
            inputs[k].data_mut()[i] = x0 + cfg.step;
            let plus = evaluate(case, &inputs, &mut proj, cfg.seed)?;
            inputs[k].data_mut()[i] = x0 - cfg.step;
            let minus = evaluate(case, &inputs, &mut proj, cfg.seed)?;
            inputs[k].data_mut()[i] = x0;
            if plus.kinks != base_kinks || minus.kinks != base_kinks {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * cfg.step);
            let err = relative_error(analytic.data()[i], numeric, cfg.floor);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst_input = name.clone();
            }
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance && report.checked > 0;
    Ok(report)
}

pub fn run_suite(cases: &[GradCase], cfg: &GradCheckConfig) -> Result<Vec<CaseReport>> {
    cases.iter().map(|c| check_case(c, cfg)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn named(items: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    items.into_iter().map(|(n, t)| (n.to_owned(), t)).collect()
}

/// Inputs of a network case: the image first, then every trainable tensor.
fn network_inputs(x: Tensor<f64>, params: &ParamSet) -> Vec<(String, Tensor<f64>)> {
    std::iter::once(("input".to_owned(), x))
        .chain(params.trainable().map(|(n, t)| (n.to_owned(), t.cast())))
        .collect()
}

/// Every registered op and both networks, on small random inputs.
pub fn registry(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = Vec::new();

    for (name, stride, pad, k) in [("conv2d", 1, 1, 3), ("conv2d_stride2", 2, 1, 3), ("conv2d_1x1", 1, 0, 1)] {
        let inputs = named(vec![
            ("input", uniform(r, &[2, 3, 6, 6], -1.0, 1.0)),
            ("kernel", uniform(r, &[4, 3, k, k], -0.5, 0.5)),
            ("bias", uniform(r, &[4], -0.5, 0.5)),
        ]);
        cases.push(GradCase::new(name, inputs, move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad)));
    }
    let acts = [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::leaky()),
        ("sigmoid", Activation::Sigmoid),
    ];
    for (name, kind) in acts {
        let inputs = named(vec![("input", uniform(r, &[2, 3, 4, 4], -2.0, 2.0))]);
        cases.push(GradCase::new(name, inputs, move |t, v| t.activation(v[0], kind)));
    }
    let inputs = named(vec![
        ("input", uniform(r, &[3, 2, 3, 3], -1.0, 2.0)),
        ("scale", uniform(r, &[2], 0.5, 1.5)),
        ("shift", uniform(r, &[2], -0.5, 0.5)),
    ]);
    cases.push(GradCase::new("batch_norm_train", inputs, |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], NormStats::Batch)?.0)
    }));
    let inputs = named(vec![
        ("input", uniform(r, &[2, 2, 3, 3], -1.0, 2.0)),
        ("scale", uniform(r, &[2], 0.5, 1.5)),
        ("shift", uniform(r, &[2], -0.5, 0.5)),
    ]);
    cases.push(GradCase::new("batch_norm_eval", inputs, |t, v| {
        let stats = NormStats::Running { mean: &[0.2, -0.1], var: &[0.8, 1.7] };
        Ok(t.batch_norm(v[0], v[1], v[2], stats)?.0)
    }));
    let inputs = named(vec![("input", uniform(r, &[2, 8, 3, 3], -1.0, 1.0))]);
    cases.push(GradCase::new("pixel_shuffle", inputs, |t, v| t.pixel_shuffle(v[0], 2)));
    let inputs = named(vec![
        ("input", uniform(r, &[3, 5], -1.0, 1.0)),
        ("weight", uniform(r, &[5, 4], -1.0, 1.0)),
        ("bias", uniform(r, &[4], -1.0, 1.0)),
    ]);
    cases.push(GradCase::new("dense", inputs, |t, v| t.dense(v[0], v[1], v[2])));

    let pair = |r: &mut ChaCha8Rng| named(vec![("a", uniform(r, &[2, 3, 2], -1.0, 1.0)), ("b", uniform(r, &[2, 3, 2], -1.0, 1.0))]);
    cases.push(GradCase::new("add", pair(r), |t, v| t.add(v[0], v[1])));
    cases.push(GradCase::new("sub", pair(r), |t, v| t.sub(v[0], v[1])));
    cases.push(GradCase::new("mul", pair(r), |t, v| t.mul(v[0], v[1])));
    let single = |r: &mut ChaCha8Rng, lo, hi| named(vec![("input", uniform(r, &[2, 3, 2], lo, hi))]);
    cases.push(GradCase::new("affine", single(r, -1.0, 1.0), |t, v| t.affine(v[0], -1.7, 0.3)));
    cases.push(GradCase::new("square", single(r, -1.0, 1.0), |t, v| t.square(v[0])));
    cases.push(GradCase::new("sum", single(r, -1.0, 1.0), |t, v| t.sum(v[0])));
    cases.push(GradCase::new("mean", single(r, -1.0, 1.0), |t, v| t.mean(v[0])));
    cases.push(GradCase::new("sum_per_sample", single(r, -1.0, 1.0), |t, v| t.sum_per_sample(v[0])));
    cases.push(GradCase::new("reshape", single(r, -1.0, 1.0), |t, v| t.reshape(v[0], &[3, 4])));
    cases.push(GradCase::new("flatten", single(r, -1.0, 1.0), |t, v| t.flatten(v[0])));
    cases.push(GradCase::new("ln_clamped", single(r, 0.1, 1.0), |t, v| t.ln_clamped(v[0], 1e-12)));
    cases.push(GradCase::new("clamp", single(r, -0.5, 1.5), |t, v| t.clamp(v[0], 0.0, 1.0)));

    let weights = LossWeights::default();
    let images = |r: &mut ChaCha8Rng| {
        named(vec![("sr", uniform(r, &[2, 1, 6, 6], 0.0, 1.0)), ("hr", uniform(r, &[2, 1, 6, 6], 0.0, 1.0))])
    };
    cases.push(GradCase::new("mse_loss", images(r), |t, v| mse_loss(t, v[0], v[1])));
    let fx = FeatureExtractor::seeded(1, FeatureExtractor::standard_layers(&[4, 6]), seed).unwrap();
    {
        let fx = fx.clone();
        cases.push(GradCase::new("feature_loss", images(r), move |t, v| {
            let net = fx.bind(t);
            feature_loss(t, &fx, &net, v[0], v[1], &weights)
        }));
    }
    let probs = named(vec![("d_fake", uniform(r, &[3, 1], 0.05, 0.95))]);
    cases.push(GradCase::new("adversarial_gen_loss", probs, |t, v| adversarial_gen_loss(t, v[0])));
    let probs = named(vec![("d_real", uniform(r, &[3, 1], 0.05, 0.95)), ("d_fake", uniform(r, &[3, 1], 0.05, 0.95))]);
    cases.push(GradCase::new("discriminator_loss", probs, |t, v| discriminator_loss(t, v[0], v[1])));
    for (name, mode) in [("triplet_literal", TripletMode::Literal), ("triplet_hinged", TripletMode::Hinged)] {
        let w = LossWeights { triplet_mode: mode, triplet_margin: 2.0, ..weights };
        let inputs = named(vec![
            ("anchor", uniform(r, &[2, 5], -1.0, 1.0)),
            ("positive", uniform(r, &[2, 5], -1.0, 1.0)),
            ("negative", uniform(r, &[2, 5], -1.0, 1.0)),
        ]);
        cases.push(GradCase::new(name, inputs, move |t, v| triplet_loss(t, v[0], v[1], v[2], &w)));
    }
    {
        let prev = uniform(r, &[2, 1, 4, 4], 0.0, 1.0);
        let inputs = named(vec![
            ("sr", uniform(r, &[2, 1, 8, 8], 0.0, 1.0)),
            ("hr", uniform(r, &[2, 1, 8, 8], 0.0, 1.0)),
            ("d_fake", uniform(r, &[2, 1], 0.05, 0.95)),
        ]);
        let w = LossWeights { triplet_embedding: TripletEmbedding::Features, triplet_margin: 50.0, ..weights };
        cases.push(GradCase::new("stage_loss", inputs, move |t, v| {
            let net = fx.bind(t);
            let input = StageLossInput { stage: 2, sr: v[0], sr_prev: Some(&prev), hr: v[1], d_fake: v[2] };
            Ok(stage_loss(t, input, &fx, &net, &w)?.0)
        }));
    }

    // conv -> batch_norm (eval) -> relu -> dense -> sum
    let inputs = named(vec![
        ("input", uniform(r, &[2, 2, 4, 4], -1.0, 1.0)),
        ("kernel", uniform(r, &[3, 2, 3, 3], -0.5, 0.5)),
        ("bias", uniform(r, &[3], -0.2, 0.2)),
        ("scale", uniform(r, &[3], 0.5, 1.5)),
        ("shift", uniform(r, &[3], -0.2, 0.2)),
        ("weight", uniform(r, &[12, 2], -0.5, 0.5)),
        ("dense_bias", uniform(r, &[2], -0.5, 0.5)),
    ]);
    cases.push(GradCase::new("composite", inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
        let stats = NormStats::Running { mean: &[0.1, 0.0, -0.1], var: &[0.5, 1.0, 2.0] };
        let (y, _) = t.batch_norm(y, v[3], v[4], stats)?;
        let y = t.relu(y)?;
        let y = t.flatten(y)?;
        let y = t.dense(y, v[5], v[6])?;
        t.sum(y)
    }));

    let g_cfg = GeneratorConfig { base_channels: 8, num_residual_blocks: 1, head_kernel: 3, ..GeneratorConfig::default() };
    let g_params = build_generator(&g_cfg, seed).unwrap();
    let inputs = network_inputs(uniform(r, &[2, 1, 8, 8], 0.0, 1.0), &g_params);
    cases.push(GradCase::new("generator", inputs, move |t, v| {
        let net = Bound::from_vars(&g_params, &v[1..])?;
        generator_forward(t, &net, &g_cfg, v[0], &mut Pass::train())
    }));

    let d_cfg = DiscriminatorConfig {
        channel_ladder: DiscriminatorConfig::ladder(8, 2),
        dense_width: 8,
        input_size: 8,
        output_gain: 1.0,
        ..DiscriminatorConfig::default()
    };
    let d_params = build_discriminator(&d_cfg, seed).unwrap();
    let inputs = network_inputs(uniform(r, &[3, 1, 8, 8], 0.0, 1.0), &d_params);
    cases.push(GradCase::new("discriminator", inputs, move |t, v| {
        let net = Bound::from_vars(&d_params, &v[1..])?;
        discriminator_forward(t, &net, &d_cfg, v[0], &mut Pass::train())
    }));
    cases
}

/// Negative control: squares its input but reports the gradient of the
/// identity.
pub fn broken_gradient_case() -> GradCase {
    let x = Tensor::from_fn([2, 3], |i| 0.3 + 0.2 * i as f64);
    GradCase::new("broken_square", vec![("input".to_owned(), x)], |t, v| {
        let value = t.value(v[0]).map(|x| x * x);
        t.custom("broken_square", &[v[0]], value, |ctx| vec![Some(ctx.grad.clone())])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9, 1e-6) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn broken_gradient_is_caught() {
        let r = check_case(&broken_gradient_case(), &GradCheckConfig::default()).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn square_case_passes() {
        let case = GradCase::new("x2", vec![("x".into(), Tensor::from_fn([4], |i| i as f64 - 1.5))], |t, v| {
            t.square(v[0])
        });
        let r = check_case(&case, &GradCheckConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn relu_kinks_are_skipped_not_failed() {
        let x = Tensor::new([3], vec![-1.0, 0.0005, 1.0]).unwrap();
        let case = GradCase::new("relu", vec![("x".into(), x)], |t, v| t.relu(v[0]));
        let r = check_case(&case, &GradCheckConfig::default()).unwrap();
        assert_eq!(r.skipped_kinks, 1);
        assert_eq!(r.checked, 2);
        assert!(r.passed);
    }

    #[test]
    fn registry_names_are_unique() {
        let cases = registry(0);
        let mut names: Vec<_> = cases.iter().map(|c| c.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), cases.len());
    }
}
