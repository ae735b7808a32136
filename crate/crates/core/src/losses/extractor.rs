use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{he_uniform, Bound, ParamKind, ParamSet, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// One convolution of a [`FeatureExtractor`]; padding is `kernel / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub relu: bool,
}

impl FeatureLayer {
    pub fn conv3(out_channels: usize, stride: usize) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride,
            relu: true,
        }
    }
}

/// Default layer widths of the fixed perceptual network.
pub const DEFAULT_FEATURE_WIDTHS: [usize; 5] = [32, 64, 128, 256, 512];

/// A fixed convolutional network whose output is the embedding used by the
/// feature and triplet losses. Its parameters are never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    in_channels: usize,
    layers: Vec<FeatureLayer>,
    params: ParamSet,
}

impl FeatureExtractor {
    /// 3x3 ReLU convolutions with stride 2 on the second and fourth layer.
    pub fn standard_layers(widths: &[usize]) -> Vec<FeatureLayer> {
        widths
            .iter()
            .enumerate()
            .map(|(i, &c)| FeatureLayer::conv3(c, if i % 2 == 1 { 2 } else { 1 }))
            .collect()
    }

    /// He-uniform weights drawn from `seed`, zero biases.
    pub fn seeded(in_channels: usize, layers: Vec<FeatureLayer>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = in_channels;
        for (i, l) in layers.iter().enumerate() {
            let fan_in = cin * l.kernel * l.kernel;
            let w = he_uniform(&mut rng, [l.out_channels, cin, l.kernel, l.kernel], fan_in.max(1), 1.0);
            params.insert(format!("feat{i}.weight"), ParamKind::Trainable, w)?;
            params.insert(format!("feat{i}.bias"), ParamKind::Trainable, Tensor::zeros([l.out_channels]))?;
            cin = l.out_channels;
        }
        Self::from_params(in_channels, layers, params)
    }

    /// Wrap existing weights, checking every tensor against the topology.
    pub fn from_params(in_channels: usize, layers: Vec<FeatureLayer>, params: ParamSet) -> Result<Self> {
        if in_channels == 0 || layers.is_empty() {
            return Err(Error::Config("feature extractor needs input channels and at least one layer".into()));
        }
        let mut cin = in_channels;
        for (i, l) in layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.stride == 0 || l.out_channels == 0 {
                return Err(Error::Config(format!("feature layer {i}: invalid {l:?}")));
            }
            params
                .get(&format!("feat{i}.weight"))?
                .expect_shape("feature_extractor", &[l.out_channels, cin, l.kernel, l.kernel])?;
            params
                .get(&format!("feat{i}.bias"))?
                .expect_shape("feature_extractor", &[l.out_channels])?;
            cin = l.out_channels;
        }
        if params.len() != 2 * layers.len() {
            return Err(Error::Config(format!(
                "feature extractor weights hold {} tensors, topology needs {}",
                params.len(),
                2 * layers.len()
            )));
        }
        Ok(Self {
            in_channels,
            layers,
            params,
        })
    }

    /// A single 1x1 convolution with identity weights and no activation.
    pub fn identity(channels: usize) -> Self {
        let mut params = ParamSet::new();
        let w = Tensor::from_fn([channels, channels, 1, 1], |i| if i / channels == i % channels { 1.0 } else { 0.0 });
        params.insert("feat0.weight", ParamKind::Trainable, w).unwrap();
        params.insert("feat0.bias", ParamKind::Trainable, Tensor::zeros([channels])).unwrap();
        let layer = FeatureLayer {
            out_channels: channels,
            kernel: 1,
            stride: 1,
            relu: false,
        };
        Self::from_params(channels, vec![layer], params).unwrap()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn layers(&self) -> &[FeatureLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Place the weights on `tape` as constants.
    pub fn bind<'a, T: Scalar>(&'a self, tape: &mut Tape<T>) -> Bound<'a> {
        self.params.bind(tape, false)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, net: &Bound<'_>, x: Var) -> Result<Var> {
        let [_, c, _, _] = tape.value(x).dims4("feature_extractor")?;
        if c != self.in_channels {
            return Err(Error::shape(
                "feature_extractor",
                format!("{c} input channels, extractor expects {}", self.in_channels),
            ));
        }
        let mut x = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = net.var(&format!("feat{i}.weight"))?;
            let b = net.var(&format!("feat{i}.bias"))?;
            x = tape.conv2d(x, w, b, l.stride, l.kernel / 2)?;
            if l.relu {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Feature maps of `x` without recording a graph.
    pub fn features<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::<T>::inference();
        let net = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &net, xv)?;
        Ok(tape.value(y).clone())
    }
}
