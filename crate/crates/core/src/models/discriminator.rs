use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Pass};
use crate::tensor::{Activation, Bound, ParamSet, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// One conv layer of the discriminator ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LadderStep {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
    pub channel_ladder: Vec<LadderStep>,
    pub dense_width: usize,
    /// Square spatial size the dense head is sized for.
    pub input_size: usize,
    /// Multiplier on the He bound of the final dense layer.
    pub output_gain: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            channel_ladder: Self::ladder(64, 4),
            dense_width: 1024,
            input_size: 32,
            output_gain: 0.25,
        }
    }
}

impl DiscriminatorConfig {
    /// `levels` channel levels starting at `base`, each a stride-1 layer
    /// followed by a stride-2 layer: `base s1, base s2, 2*base s1, ...`.
    pub fn ladder(base: usize, levels: usize) -> Vec<LadderStep> {
        (0..levels)
            .flat_map(|l| {
                let channels = base << l;
                [LadderStep { channels, stride: 1 }, LadderStep { channels, stride: 2 }]
            })
            .collect()
    }

    /// Channels start at 8 or more and double from level to level; every
    /// level holds exactly one stride-2 layer.
    pub fn validate(&self) -> Result<()> {
        let ladder = &self.channel_ladder;
        let Some(first) = ladder.first() else {
            return Err(Error::Config("discriminator ladder is empty".into()));
        };
        if first.channels < 8 {
            return Err(Error::Config(format!("ladder starts at {} channels, minimum 8", first.channels)));
        }
        if !matches!(self.input_channels, 1 | 3) {
            return Err(Error::Config(format!("input_channels must be 1 or 3, got {}", self.input_channels)));
        }
        if self.dense_width == 0 {
            return Err(Error::Config("dense_width must be positive".into()));
        }
        let mut level_strides = 0;
        for (i, step) in ladder.iter().enumerate() {
            if !matches!(step.stride, 1 | 2) {
                return Err(Error::Config(format!("ladder layer {i}: stride {} is not 1 or 2", step.stride)));
            }
            if i > 0 {
                let prev = ladder[i - 1].channels;
                if step.channels == 2 * prev {
                    if level_strides != 1 {
                        return Err(Error::Config(format!(
                            "ladder layer {i}: channels double from {prev} without exactly one stride-2 layer at that width"
                        )));
                    }
                    level_strides = 0;
                } else if step.channels != prev {
                    return Err(Error::Config(format!(
                        "ladder layer {i}: {prev} -> {} channels is not a x2 step",
                        step.channels
                    )));
                }
            }
            level_strides += usize::from(step.stride == 2);
        }
        if level_strides != 1 {
            return Err(Error::Config("last ladder level needs exactly one stride-2 layer".into()));
        }
        self.head_features().map(|_| ())
    }

    /// Flattened feature count entering the dense head.
    pub fn head_features(&self) -> Result<usize> {
        let mut size = self.input_size;
        for step in &self.channel_ladder {
            size = crate::tensor::conv_output_size(size, 3, step.stride, 1).ok_or_else(|| {
                Error::Config(format!("input_size {} collapses inside the ladder", self.input_size))
            })?;
        }
        let last = self.channel_ladder.last().map_or(0, |s| s.channels);
        Ok(last * size * size)
    }
}

pub fn build_discriminator(config: &DiscriminatorConfig, seed: u64) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let mut cin = config.input_channels;
    for (i, step) in config.channel_ladder.iter().enumerate() {
        layers::add_conv(&mut p, &mut rng, &format!("conv{i}"), cin, step.channels, 3)?;
        if i > 0 {
            layers::add_batch_norm(&mut p, &format!("bn{i}"), step.channels)?;
        }
        cin = step.channels;
    }
    layers::add_dense(&mut p, &mut rng, "fc1", config.head_features()?, config.dense_width, 1.0)?;
    layers::add_dense(&mut p, &mut rng, "fc2", config.dense_width, 1, config.output_gain)?;
    Ok(p)
}

/// Pre-sigmoid score `[N, 1]`.
pub fn discriminator_logits<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    config: &DiscriminatorConfig,
    input: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let [_, c, h, w] = tape.value(input).dims4("discriminator")?;
    if c != config.input_channels || h != config.input_size || w != config.input_size {
        return Err(Error::shape(
            "discriminator",
            format!(
                "input [{c}, {h}, {w}], configured for [{}, {s}, {s}]",
                config.input_channels,
                s = config.input_size
            ),
        ));
    }
    let mut x = input;
    for (i, step) in config.channel_ladder.iter().enumerate() {
        x = layers::conv(tape, net, &format!("conv{i}"), x, step.stride)?;
        if i > 0 {
            x = layers::batch_norm(tape, net, &format!("bn{i}"), x, pass)?;
        }
        x = tape.activation(x, Activation::leaky())?;
    }
    let x = tape.flatten(x)?;
    let x = layers::dense(tape, net, "fc1", x)?;
    let x = tape.activation(x, Activation::leaky())?;
    layers::dense(tape, net, "fc2", x)
}

/// Real-vs-fake probabilities `[N, 1]`.
pub fn discriminator_forward<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    config: &DiscriminatorConfig,
    input: Var,
    pass: &mut Pass,
) -> Result<Var> {
    let logits = discriminator_logits(tape, net, config, input, pass)?;
    tape.sigmoid(logits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let params = build_discriminator(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Forward pass without recording a graph. Train mode uses batch
    /// statistics and leaves the running estimates untouched.
    pub fn infer(&self, input: &Tensor, mut pass: Pass) -> Result<Tensor> {
        let mut tape = Tape::<f32>::inference();
        let net = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = discriminator_forward(&mut tape, &net, &self.config, x, &mut pass)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig {
            channel_ladder: DiscriminatorConfig::ladder(8, 3),
            dense_width: 16,
            input_size: 16,
            ..DiscriminatorConfig::default()
        }
    }

    #[test]
    fn default_ladder_on_32_gives_512_by_2_by_2() {
        let cfg = DiscriminatorConfig::default();
        let steps: Vec<_> = cfg.channel_ladder.iter().map(|s| (s.channels, s.stride)).collect();
        assert_eq!(
            steps,
            [(64, 1), (64, 2), (128, 1), (128, 2), (256, 1), (256, 2), (512, 1), (512, 2)]
        );
        assert_eq!(cfg.head_features().unwrap(), 512 * 2 * 2);
    }

    #[test]
    fn ladder_rule_violations_are_rejected() {
        let step = |channels, stride| LadderStep { channels, stride };
        let bad = [
            vec![step(64, 1), step(128, 2)],
            vec![step(64, 2), step(192, 2)],
            vec![step(64, 2), step(64, 2)],
            vec![step(64, 1), step(64, 1)],
            vec![step(4, 2)],
            vec![step(64, 3)],
            vec![],
        ];
        for ladder in bad {
            let cfg = DiscriminatorConfig { channel_ladder: ladder.clone(), ..DiscriminatorConfig::default() };
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{ladder:?}");
        }
    }

    #[test]
    fn input_size_that_collapses_is_rejected() {
        let cfg = DiscriminatorConfig { input_size: 0, ..small() };
        assert!(build_discriminator(&cfg, 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_discriminator(&small(), 4).unwrap();
        assert!(a.bit_identical(&build_discriminator(&small(), 4).unwrap()));
    }

    #[test]
    fn outputs_are_probabilities_per_sample() {
        let d = Discriminator::new(small(), 1).unwrap();
        let x = Tensor::from_fn([3, 1, 16, 16], |i| (i as f32 * 0.7).sin() * 0.5 + 0.5);
        let y = d.infer(&x, Pass::train()).unwrap();
        assert_eq!(y.shape(), &[3, 1]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_input_size_is_a_shape_error() {
        let d = Discriminator::new(small(), 1).unwrap();
        let err = d.infer(&Tensor::zeros([1, 1, 32, 32]), Pass::train()).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let mut d = Discriminator::new(small(), 1).unwrap();
        let x = Tensor::from_fn([2, 1, 16, 16], |i| (i as f32 * 0.3).cos().abs());
        let mut tape = Tape::<f32>::new();
        let net = d.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let mut pass = Pass::train();
        discriminator_forward(&mut tape, &net, &d.config, xv, &mut pass).unwrap();
        d.params.commit_batch_stats(&pass.into_updates()).unwrap();
        assert_eq!(d.infer(&x, Pass::eval()).unwrap(), d.infer(&x, Pass::eval()).unwrap());
    }
}
