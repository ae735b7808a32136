use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Pass};
use crate::tensor::{Bound, ParamSet, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Smallest spatial size accepted by [`generator_forward`].
pub const MIN_INPUT_SIZE: usize = 8;

/// How the tail convolution is mapped into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMapping {
    Sigmoid,
    /// Linear output clamped to `[0, 1]`; zero gradient outside the range.
    Clamp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub num_residual_blocks: usize,
    /// Upsampling blocks per stage; always 1.
    pub upsample_blocks: usize,
    /// 1 for grayscale, 3 for color.
    pub input_channels: usize,
    pub head_kernel: usize,
    pub output: OutputMapping,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            num_residual_blocks: 4,
            upsample_blocks: 1,
            input_channels: 1,
            head_kernel: 9,
            output: OutputMapping::Sigmoid,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 8 {
            return Err(Error::Config(format!("generator base_channels {} < 8", self.base_channels)));
        }
        if self.num_residual_blocks < 1 {
            return Err(Error::Config("generator needs at least one residual block".into()));
        }
        if self.upsample_blocks != 1 {
            return Err(Error::Config(format!(
                "each stage upsamples exactly once, got upsample_blocks = {}",
                self.upsample_blocks
            )));
        }
        if !matches!(self.input_channels, 1 | 3) {
            return Err(Error::Config(format!("input_channels must be 1 or 3, got {}", self.input_channels)));
        }
        if self.head_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("head_kernel must be odd, got {}", self.head_kernel)));
        }
        Ok(())
    }

    /// Trainable scalar count, summed layer by layer.
    pub fn num_trainable(&self) -> usize {
        let (c, i, k) = (self.base_channels, self.input_channels, self.head_kernel);
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let bn = |c: usize| 2 * c;
        conv(i, c, k)
            + self.num_residual_blocks * 2 * (conv(c, c, 3) + bn(c))
            + conv(c, c, 3)
            + bn(c)
            + conv(c, 4 * c, 3)
            + conv(c, i, 3)
    }
}

pub fn build_generator(config: &GeneratorConfig, seed: u64) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let (c, i) = (config.base_channels, config.input_channels);
    layers::add_conv(&mut p, &mut rng, "head", i, c, config.head_kernel)?;
    for b in 0..config.num_residual_blocks {
        for j in 1..=2 {
            layers::add_conv(&mut p, &mut rng, &format!("res{b}.conv{j}"), c, c, 3)?;
            layers::add_batch_norm(&mut p, &format!("res{b}.bn{j}"), c)?;
        }
    }
    layers::add_conv(&mut p, &mut rng, "post.conv", c, c, 3)?;
    layers::add_batch_norm(&mut p, "post.bn", c)?;
    layers::add_conv(&mut p, &mut rng, "up.conv", c, 4 * c, 3)?;
    layers::add_conv(&mut p, &mut rng, "tail", c, i, 3)?;
    Ok(p)
}

/// `x + bn2(conv2(relu(bn1(conv1(x)))))`.
pub(crate) fn residual_block<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    index: usize,
    x: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let p = format!("res{index}");
    let y = layers::conv(tape, net, &format!("{p}.conv1"), x, 1)?;
    let y = layers::batch_norm(tape, net, &format!("{p}.bn1"), y, pass)?;
    let y = tape.relu(y)?;
    let y = layers::conv(tape, net, &format!("{p}.conv2"), y, 1)?;
    let y = layers::batch_norm(tape, net, &format!("{p}.bn2"), y, pass)?;
    tape.add(x, y)
}

/// `[N, C, h, w]` to `[N, C, 2h, 2w]`.
pub fn generator_forward<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    config: &GeneratorConfig,
    input: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let [_, c, h, w] = tape.value(input).dims4("generator")?;
    if c != config.input_channels {
        return Err(Error::shape(
            "generator",
            format!("{c} input channels, configured for {}", config.input_channels),
        ));
    }
    if h < MIN_INPUT_SIZE || w < MIN_INPUT_SIZE {
        return Err(Error::shape(
            "generator",
            format!("input {h}x{w} is below the {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE} minimum"),
        ));
    }
    let head = layers::conv(tape, net, "head", input, 1)?;
    let head = tape.relu(head)?;
    let mut x = head;
    for b in 0..config.num_residual_blocks {
        x = residual_block(tape, net, b, x, pass)?;
    }
    let x = layers::conv(tape, net, "post.conv", x, 1)?;
    let x = layers::batch_norm(tape, net, "post.bn", x, pass)?;
    let x = tape.add(head, x)?;
    let x = layers::conv(tape, net, "up.conv", x, 1)?;
    let x = tape.pixel_shuffle(x, 2)?;
    let x = tape.relu(x)?;
    let x = layers::conv(tape, net, "tail", x, 1)?;
    match config.output {
        OutputMapping::Sigmoid => tape.sigmoid(x),
        OutputMapping::Clamp => tape.clamp(x, 0.0, 1.0),
    }
}

/// A generator's configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let params = build_generator(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Eval-mode forward pass without recording a graph.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::<f32>::inference();
        let net = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = generator_forward(&mut tape, &net, &self.config, x, &mut Pass::eval())?;
        Ok(tape.value(y).clone())
    }

    /// Training-mode pass over `input` that commits batch-norm running
    /// statistics and nothing else; returns the training-mode output.
    pub fn calibrate(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::<f32>::inference();
        let net = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let mut pass = Pass::train();
        let y = generator_forward(&mut tape, &net, &self.config, x, &mut pass)?;
        let out = tape.value(y).clone();
        drop(net);
        self.params.commit_batch_stats(&pass.into_updates())?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Mode;

    fn small(b: usize, ch: usize) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: 8,
            num_residual_blocks: b,
            input_channels: ch,
            ..GeneratorConfig::default()
        }
    }

    fn forward_train(g: &Generator, x: Tensor) -> Result<(Tensor, Pass)> {
        let mut tape = Tape::<f32>::new();
        let net = g.params.bind(&mut tape, true);
        let x = tape.constant(x);
        let mut pass = Pass::train();
        let y = generator_forward(&mut tape, &net, &g.config, x, &mut pass)?;
        Ok((tape.value(y).clone(), pass))
    }

    #[test]
    fn parameter_count_matches_layer_sum() {
        // head 3*64*81+64, 4 blocks of 2*(64*64*9+64+128), post 64*64*9+64+128,
        // up 64*256*9+256, tail 64*3*9+3.
        let cfg = GeneratorConfig { input_channels: 3, ..GeneratorConfig::default() };
        let expected = 15_616 + 4 * 74_112 + 37_056 + 147_712 + 1_731;
        assert_eq!(cfg.num_trainable(), expected);
        assert_eq!(build_generator(&cfg, 0).unwrap().num_trainable(), expected);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_generator(&small(2, 1), 11).unwrap();
        let b = build_generator(&small(2, 1), 11).unwrap();
        let c = build_generator(&small(2, 1), 12).unwrap();
        assert!(a.bit_identical(&b));
        assert!(!a.bit_identical(&c));
    }

    #[test]
    fn output_doubles_and_stays_in_unit_range() {
        let g = Generator::new(small(1, 3), 0).unwrap();
        let x = Tensor::from_fn([1, 3, 16, 16], |i| ((i * 37) % 101) as f32 / 100.0);
        let (y, pass) = forward_train(&g, x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 32, 32]);
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(pass.mode(), Mode::Train);
        assert_eq!(pass.into_updates().len(), 2 + 1);
    }

    #[test]
    fn too_small_input_is_a_shape_error() {
        let g = Generator::new(small(1, 1), 0).unwrap();
        let err = forward_train(&g, Tensor::zeros([1, 1, 7, 16])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn eval_before_training_is_a_config_error() {
        let g = Generator::new(small(1, 1), 0).unwrap();
        assert!(matches!(g.infer(&Tensor::zeros([1, 1, 8, 8])), Err(Error::Config(_))));
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let mut g = Generator::new(small(1, 1), 0).unwrap();
        let x = Tensor::from_fn([2, 1, 8, 8], |i| (i as f32 * 0.37).sin().abs());
        let (_, pass) = forward_train(&g, x.clone()).unwrap();
        g.params.commit_batch_stats(&pass.into_updates()).unwrap();
        assert_eq!(g.infer(&x).unwrap(), g.infer(&x).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            GeneratorConfig { base_channels: 4, ..small(1, 1) },
            GeneratorConfig { num_residual_blocks: 0, ..small(1, 1) },
            GeneratorConfig { upsample_blocks: 2, ..small(1, 1) },
            GeneratorConfig { input_channels: 2, ..small(1, 1) },
        ] {
            assert!(matches!(build_generator(&cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zeroed_residual_branch_is_identity() {
        let mut params = build_generator(&small(2, 1), 5).unwrap();
        for b in 0..2 {
            for j in 1..=2 {
                let w = params.get_mut(&format!("res{b}.conv{j}.weight")).unwrap();
                w.data_mut().fill(0.0);
            }
        }
        let x = Tensor::from_fn([2, 8, 8, 8], |i| (i as f32 * 0.11).cos());
        for b in 0..2 {
            let mut tape = Tape::<f32>::new();
            let net = params.bind(&mut tape, false);
            let xv = tape.constant(x.clone());
            let y = residual_block(&mut tape, &net, b, xv, &mut Pass::train()).unwrap();
            for (a, e) in tape.value(y).data().iter().zip(x.data()) {
                assert!((a - e).abs() <= 1e-6);
            }
        }
    }
}
