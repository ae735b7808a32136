use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Pointwise nonlinearities used by the networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn leaky() -> Self {
        Activation::LeakyRelu(Self::DEFAULT_LEAKY_SLOPE)
    }
}

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.custom("add", &[a, b], value, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.custom("sub", &[a, b], value, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.custom("mul", &[a, b], value, |ctx| {
            let ga = ctx
                .needs(0)
                .then(|| ctx.grad.zip_map(ctx.input(1), |g, y| g * y).unwrap());
            let gb = ctx
                .needs(1)
                .then(|| ctx.grad.zip_map(ctx.input(0), |g, x| g * x).unwrap());
            vec![ga, gb]
        })
    }

    /// `mul * a + add`, elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Result<Var> {
        let (m, c) = (T::from_f64_lossy(mul), T::from_f64_lossy(add));
        let value = self.value(a).map(|x| m * x + c);
        self.custom("affine", &[a], value, move |ctx| {
            vec![Some(ctx.grad.map(|g| g * m))]
        })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.custom("square", &[a], value, |ctx| {
            let two = T::from_f64_lossy(2.0);
            vec![Some(ctx.grad.zip_map(ctx.input(0), |g, x| two * g * x).unwrap())]
        })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.custom("sum", &[a], value, |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(Tensor::full(ctx.input(0).shape().to_vec(), g))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let inv = T::one() / T::from_usize(n).unwrap();
        let value = Tensor::scalar(self.value(a).sum() * inv);
        self.custom("mean", &[a], value, move |ctx| {
            let g = ctx.grad.data()[0] * inv;
            vec![Some(Tensor::full(ctx.input(0).shape().to_vec(), g))]
        })
    }

    /// Reduce `[N, ...]` to `[N]` by summing everything but the leading axis.
    pub fn sum_per_sample(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .first()
            .ok_or_else(|| Error::shape("sum_per_sample", "rank-0 tensor"))?;
        let len = t.numel() / n.max(1);
        let sums: Vec<T> = t.data().chunks(len.max(1)).map(|c| c.iter().copied().sum()).collect();
        let value = Tensor::new([n], sums)?;
        self.custom("sum_per_sample", &[a], value, move |ctx| {
            let g = ctx.grad.data();
            let shape = ctx.input(0).shape().to_vec();
            vec![Some(Tensor::from_fn(shape, |i| g[i / len]))]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        self.custom("reshape", &[a], value, |ctx| {
            let back = ctx.grad.clone().reshape(ctx.input(0).shape().to_vec());
            vec![Some(back.unwrap())]
        })
    }

    /// Flatten `[N, ...]` into `[N, F]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = *shape
            .first()
            .ok_or_else(|| Error::shape("flatten", "rank-0 tensor"))?;
        let f = shape[1..].iter().product();
        self.reshape(a, &[n, f])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::LeakyRelu(slope) => self.leaky_relu(a, slope),
            Activation::Sigmoid => self.sigmoid(a),
        }
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.leaky_relu_inner("relu", a, T::zero())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky relu slope must lie in (0, 1), got {slope}"
            )));
        }
        self.leaky_relu_inner("leaky_relu", a, T::from_f64_lossy(slope))
    }

    fn leaky_relu_inner(&mut self, op: &'static str, a: Var, slope: T) -> Result<Var> {
        let x = self.value(a);
        let value = x.map(|v| if v > T::zero() { v } else { slope * v });
        let pattern: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        self.record_kinks(pattern.into_iter());
        self.custom(op, &[a], value, move |ctx| {
            let g = ctx
                .grad
                .zip_map(ctx.input(0), |g, x| if x > T::zero() { g } else { g * slope })
                .unwrap();
            vec![Some(g)]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| {
            // Branching keeps exp() from overflowing for large |x|.
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.custom("sigmoid", &[a], value, |ctx| {
            let g = ctx
                .grad
                .zip_map(ctx.output, |g, y| g * y * (T::one() - y))
                .unwrap();
            vec![Some(g)]
        })
    }

    /// `ln(max(x, eps))`; the gradient vanishes where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var, eps: f64) -> Result<Var> {
        let eps = T::from_f64_lossy(eps);
        let x = self.value(a);
        let value = x.map(|v| v.max(eps).ln());
        let pattern: Vec<bool> = x.data().iter().map(|&v| v > eps).collect();
        self.record_kinks(pattern.into_iter());
        self.custom("ln_clamped", &[a], value, move |ctx| {
            let g = ctx
                .grad
                .zip_map(ctx.input(0), |g, x| if x > eps { g / x } else { T::zero() })
                .unwrap();
            vec![Some(g)]
        })
    }

    /// Clamp into `[lo, hi]`, passing gradient only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        let x = self.value(a);
        let value = x.map(|v| v.max(lo).min(hi));
        let pattern: Vec<bool> = x.data().iter().map(|&v| v > lo && v < hi).collect();
        self.record_kinks(pattern.into_iter());
        self.custom("clamp", &[a], value, move |ctx| {
            let g = ctx
                .grad
                .zip_map(ctx.input(0), |g, x| if x > lo && x < hi { g } else { T::zero() })
                .unwrap();
            vec![Some(g)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(kind: Activation, x: f32) -> f32 {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::scalar(x));
        let y = tape.activation(v, kind).unwrap();
        tape.value(y).data()[0]
    }

    #[test]
    fn activation_values() {
        assert_eq!(apply(Activation::Relu, -1.0), 0.0);
        assert_eq!(apply(Activation::Relu, 2.5), 2.5);
        assert!((apply(Activation::leaky(), -1.0) + 0.2).abs() < 1e-7);
        assert_eq!(apply(Activation::Sigmoid, 0.0), 0.5);
    }

    #[test]
    fn sigmoid_stays_in_open_interval_for_moderate_inputs() {
        for x in [-30.0f64, -5.0, 0.0, 5.0, 30.0] {
            let mut tape = Tape::<f64>::new();
            let v = tape.constant(Tensor::scalar(x));
            let y = tape.sigmoid(v).unwrap();
            let s = tape.value(y).data()[0];
            assert!(s > 0.0 && s < 1.0, "sigmoid({x}) = {s}");
        }
    }

    #[test]
    fn leaky_slope_must_be_in_unit_interval() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::scalar(1.0));
        assert!(tape.leaky_relu(v, 1.5).is_err());
        assert!(tape.leaky_relu(v, 0.0).is_err());
    }

    #[test]
    fn ln_clamped_never_produces_infinity() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::new([2], vec![0.0, 1.0]).unwrap());
        let y = tape.ln_clamped(v, 1e-12).unwrap();
        assert!(tape.value(y).is_finite());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2]));
        let b = tape.constant(Tensor::zeros([3]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
    }
}
