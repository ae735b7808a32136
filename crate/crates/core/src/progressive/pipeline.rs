use crate::checkpoint::Checkpoint;
use crate::losses::{FeatureExtractor, LossWeights};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, MIN_INPUT_SIZE};
use crate::tensor::{AdamConfig, AdamState, Tensor};
use crate::{Error, Result};

/// Largest supported number of chained x2 stages.
pub const MAX_STAGES: usize = 5;

/// One x2 stage: its generator, the discriminator it trains against and
/// both optimizer states.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    /// 1-based position in the chain.
    pub index: usize,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_adam: AdamState,
    pub d_adam: AdamState,
    /// Frozen stages never receive optimizer updates.
    pub frozen: bool,
}

/// `K` chained x2 stages sharing one feature extractor and loss weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSpec {
    pub stages: Vec<StageSpec>,
    pub extractor: FeatureExtractor,
    pub weights: LossWeights,
    /// Side of the square HR patches the discriminators are sized for.
    pub hr_size: usize,
}

/// SplitMix64 finalizer; decorrelates seeds derived from one run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PipelineSpec {
    /// Fresh stages seeded from `seed`. Stage `n` of `K` trains on outputs
    /// of size `hr_size / 2^(K - n)`; `discriminator.input_size` is
    /// overridden accordingly.
    pub fn new(
        num_stages: usize,
        generator: &GeneratorConfig,
        discriminator: &DiscriminatorConfig,
        extractor: FeatureExtractor,
        weights: LossWeights,
        hr_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(1..=MAX_STAGES).contains(&num_stages) {
            return Err(Error::Config(format!(
                "{num_stages} stages requested; supported 1..={MAX_STAGES} (x2 to x{})",
                1 << MAX_STAGES
            )));
        }
        if !hr_size.is_multiple_of(1 << num_stages) || (hr_size >> num_stages) < MIN_INPUT_SIZE {
            return Err(Error::Config(format!(
                "HR size {hr_size} must be divisible by {} and leave an input of at least {MIN_INPUT_SIZE}",
                1 << num_stages
            )));
        }
        let channels = generator.input_channels;
        if discriminator.input_channels != channels || extractor.in_channels() != channels {
            return Err(Error::Config(format!(
                "channel mismatch: generator {channels}, discriminator {}, extractor {}",
                discriminator.input_channels,
                extractor.in_channels()
            )));
        }
        weights.validate()?;
        let stages = (1..=num_stages)
            .map(|n| {
                let g = Generator::new(generator.clone(), derive_seed(seed, 2 * n as u64))?;
                let d_config = DiscriminatorConfig {
                    input_size: hr_size >> (num_stages - n),
                    ..discriminator.clone()
                };
                let d = Discriminator::new(d_config, derive_seed(seed, 2 * n as u64 + 1))?;
                Ok(StageSpec {
                    index: n,
                    g_adam: AdamState::new(&g.params, AdamConfig::default()),
                    d_adam: AdamState::new(&d.params, AdamConfig::default()),
                    generator: g,
                    discriminator: d,
                    frozen: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stages,
            extractor,
            weights,
            hr_size,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// `2^K`.
    pub fn total_scale(&self) -> usize {
        1 << self.stages.len()
    }

    /// Side of the LR inputs the pipeline was built for.
    pub fn lr_size(&self) -> usize {
        self.hr_size >> self.stages.len()
    }

    /// Stage `n` (1-based).
    pub fn stage(&self, n: usize) -> Result<&StageSpec> {
        n.checked_sub(1)
            .and_then(|i| self.stages.get(i))
            .ok_or_else(|| Error::Config(format!("no stage {n} in a {}-stage pipeline", self.stages.len())))
    }

    pub fn supported_scales(&self) -> Vec<usize> {
        (1..=self.stages.len()).map(|k| 1 << k).collect()
    }

    /// Output of stages `1..=k` applied in eval mode to `lr` (`[N, C, H, W]`).
    pub fn chain(&self, lr: &Tensor, k: usize) -> Result<Tensor> {
        let mut x = lr.clone();
        for stage in &self.stages[..k.min(self.stages.len())] {
            x = stage.generator.infer(&x)?;
        }
        Ok(x)
    }

    /// Upscale `lr` (`[C, H, W]` or `[N, C, H, W]`) by `target_scale = 2^k`
    /// through the first `k` generators in eval mode.
    pub fn super_resolve(&self, lr: &Tensor, target_scale: usize) -> Result<Tensor> {
        let supported = self.supported_scales();
        if !supported.contains(&target_scale) {
            let list: Vec<String> = supported.iter().map(|s| s.to_string()).collect();
            return Err(Error::Config(format!(
                "scale {target_scale} is not supported by this pipeline; supported: {}",
                list.join(", ")
            )));
        }
        let k = target_scale.trailing_zeros() as usize;
        match lr.rank() {
            3 => {
                let [c, h, w] = lr.dims3("super_resolve")?;
                let out = self.chain(&lr.clone().reshape([1, c, h, w])?, k)?;
                out.index_outer(0)
            }
            4 => self.chain(lr, k),
            _ => Err(Error::shape("super_resolve", format!("expected [C, H, W] or [N, C, H, W], got {:?}", lr.shape()))),
        }
    }

    /// Store every stage's parameters and optimizers plus the extractor.
    pub fn write_to(&self, ck: &mut Checkpoint) {
        for s in &self.stages {
            ck.insert_params(&format!("stage{}.g", s.index), &s.generator.params);
            ck.insert_params(&format!("stage{}.d", s.index), &s.discriminator.params);
            ck.optimizers.insert(format!("stage{}.g", s.index), s.g_adam.clone());
            ck.optimizers.insert(format!("stage{}.d", s.index), s.d_adam.clone());
        }
        ck.insert_params("extractor", self.extractor.params());
    }

    /// Load everything [`write_to`](Self::write_to) stored into a pipeline
    /// of identical architecture.
    pub fn read_from(&mut self, ck: &Checkpoint) -> Result<()> {
        let mut next = self.clone();
        for s in &mut next.stages {
            let (g, d) = (format!("stage{}.g", s.index), format!("stage{}.d", s.index));
            ck.load_params(&g, &mut s.generator.params)?;
            ck.load_params(&d, &mut s.discriminator.params)?;
            s.g_adam = ck.optimizer_for(&g, &s.generator.params)?;
            s.d_adam = ck.optimizer_for(&d, &s.discriminator.params)?;
        }
        let mut extractor_params = next.extractor.params().clone();
        ck.load_params("extractor", &mut extractor_params)?;
        next.extractor = FeatureExtractor::from_params(
            next.extractor.in_channels(),
            next.extractor.layers().to_vec(),
            extractor_params,
        )?;
        *self = next;
        Ok(())
    }

    /// Generators only, for inference from a checkpoint without optimizer
    /// or discriminator state.
    pub fn read_generators(&mut self, ck: &Checkpoint) -> Result<()> {
        for s in &mut self.stages {
            ck.load_params(&format!("stage{}.g", s.index), &mut s.generator.params)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::FeatureLayer;

    pub(crate) fn tiny(k: usize, hr: usize) -> PipelineSpec {
        let g = GeneratorConfig { base_channels: 8, num_residual_blocks: 1, head_kernel: 3, ..GeneratorConfig::default() };
        let d = DiscriminatorConfig {
            channel_ladder: DiscriminatorConfig::ladder(8, 2),
            dense_width: 8,
            ..DiscriminatorConfig::default()
        };
        let fx = FeatureExtractor::seeded(1, vec![FeatureLayer::conv3(4, 1)], 0).unwrap();
        PipelineSpec::new(k, &g, &d, fx, LossWeights::default(), hr, 1).unwrap()
    }

    #[test]
    fn stages_are_sized_per_resolution() {
        let p = tiny(3, 64);
        let sizes: Vec<_> = p.stages.iter().map(|s| s.discriminator.config.input_size).collect();
        assert_eq!(sizes, vec![16, 32, 64]);
        assert_eq!((p.total_scale(), p.lr_size()), (8, 8));
        assert!(!p.stages[0].generator.params.bit_identical(&p.stages[1].generator.params));
    }

    #[test]
    fn unsupported_scale_lists_the_supported_set() {
        let p = tiny(2, 32);
        let err = p.super_resolve(&Tensor::zeros([1, 8, 8]), 8).unwrap_err().to_string();
        assert!(err.contains("supported: 2, 4"), "{err}");
        assert!(p.super_resolve(&Tensor::zeros([1, 8, 8]), 3).is_err());
    }

    #[test]
    fn bad_geometry_is_rejected() {
        let g = GeneratorConfig { base_channels: 8, ..GeneratorConfig::default() };
        let d = DiscriminatorConfig { channel_ladder: DiscriminatorConfig::ladder(8, 1), ..DiscriminatorConfig::default() };
        let fx = || FeatureExtractor::identity(1);
        assert!(PipelineSpec::new(0, &g, &d, fx(), LossWeights::default(), 32, 0).is_err());
        assert!(PipelineSpec::new(6, &g, &d, fx(), LossWeights::default(), 512, 0).is_err());
        assert!(PipelineSpec::new(2, &g, &d, fx(), LossWeights::default(), 16, 0).is_err());
        assert!(PipelineSpec::new(1, &g, &d, FeatureExtractor::identity(3), LossWeights::default(), 32, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_everything() {
        let p = tiny(2, 32);
        let mut ck = Checkpoint::default();
        p.write_to(&mut ck);
        let mut q = tiny(2, 32);
        for s in &mut q.stages {
            s.generator.params.get_mut("tail.bias").unwrap().data_mut()[0] = 9.0;
        }
        q.read_from(&ck).unwrap();
        assert_eq!(q, p);
    }
}
