use super::{FeatureExtractor, LossWeights, TripletMode, LOG_EPS};
use crate::tensor::{Bound, Scalar, Tape, Var};
use crate::{Error, Result};

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, vars: &[Var]) -> Result<()> {
    let first = tape.shape(vars[0]);
    for &v in &vars[1..] {
        if tape.shape(v) != first {
            return Err(Error::shape(op, format!("{:?} vs {:?}", first, tape.shape(v))));
        }
    }
    Ok(())
}

fn probabilities<T: Scalar>(tape: &Tape<T>, op: &'static str, d: Var) -> Result<()> {
    let t = tape.value(d);
    if t.rank() != 2 || t.shape()[1] != 1 {
        return Err(Error::shape(op, format!("expected [N, 1], got {:?}", t.shape())));
    }
    if let Some(v) = t.data().iter().find(|v| !(T::zero()..=T::one()).contains(*v)) {
        return Err(Error::Domain {
            op,
            detail: format!("discriminator output {v:?} is outside [0, 1]"),
        });
    }
    Ok(())
}

/// Mean of `(hr - sr)^2` over every element.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, sr: Var, hr: Var) -> Result<Var> {
    same_shape(tape, "mse_loss", &[sr, hr])?;
    let d = tape.sub(hr, sr)?;
    let d2 = tape.square(d)?;
    tape.mean(d2)
}

/// Squared feature-map difference summed over channels, averaged over
/// `N * H * W`, times [`LossWeights::feature_factor`].
pub fn feature_distance<T: Scalar>(tape: &mut Tape<T>, f_sr: Var, f_hr: Var, weights: &LossWeights) -> Result<Var> {
    same_shape(tape, "feature_loss", &[f_sr, f_hr])?;
    let [n, _, h, w] = tape.value(f_sr).dims4("feature_loss")?;
    let d = tape.sub(f_hr, f_sr)?;
    let d2 = tape.square(d)?;
    let s = tape.sum(d2)?;
    tape.scale(s, weights.feature_factor() / (n * h * w) as f64)
}

/// [`feature_distance`] between the extractor outputs of `sr` and `hr`.
pub fn feature_loss<T: Scalar>(
    tape: &mut Tape<T>,
    extractor: &FeatureExtractor,
    net: &Bound<'_>,
    sr: Var,
    hr: Var,
    weights: &LossWeights,
) -> Result<Var> {
    same_shape(tape, "feature_loss", &[sr, hr])?;
    let f_sr = extractor.forward(tape, net, sr)?;
    let f_hr = extractor.forward(tape, net, hr)?;
    feature_distance(tape, f_sr, f_hr, weights)
}

/// `sum_n -ln d_n` for discriminator outputs `[N, 1]` on generated images.
pub fn adversarial_gen_loss<T: Scalar>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    probabilities(tape, "adversarial_gen_loss", d_fake)?;
    let l = tape.ln_clamped(d_fake, LOG_EPS)?;
    let s = tape.sum(l)?;
    tape.scale(s, -1.0)
}

/// `-sum_n [ln d_real + ln(1 - d_fake)]`.
pub fn discriminator_loss<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    probabilities(tape, "discriminator_loss", d_real)?;
    probabilities(tape, "discriminator_loss", d_fake)?;
    same_shape(tape, "discriminator_loss", &[d_real, d_fake])?;
    let lr = tape.ln_clamped(d_real, LOG_EPS)?;
    let one_minus = tape.affine(d_fake, -1.0, 1.0)?;
    let lf = tape.ln_clamped(one_minus, LOG_EPS)?;
    let both = tape.add(lr, lf)?;
    let s = tape.sum(both)?;
    tape.scale(s, -1.0)
}

/// Per-sample squared distances `||a - p||^2 - ||a - n||^2`, combined
/// according to `weights.triplet_mode`. Embeddings are `[N, ...]`.
pub fn triplet_loss<T: Scalar>(
    tape: &mut Tape<T>,
    anchor: Var,
    positive: Var,
    negative: Var,
    weights: &LossWeights,
) -> Result<Var> {
    same_shape(tape, "triplet_loss", &[anchor, positive, negative])?;
    let dist = |tape: &mut Tape<T>, other: Var| -> Result<Var> {
        let d = tape.sub(anchor, other)?;
        let d2 = tape.square(d)?;
        tape.sum_per_sample(d2)
    };
    let dp = dist(tape, positive)?;
    let dn = dist(tape, negative)?;
    let diff = tape.sub(dp, dn)?;
    match weights.triplet_mode {
        TripletMode::Literal => tape.sum(diff),
        TripletMode::Hinged => {
            let shifted = tape.affine(diff, 1.0, weights.triplet_margin)?;
            let hinge = tape.relu(shifted)?;
            tape.sum(hinge)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn eval1(f: impl FnOnce(&mut Tape<f64>) -> Result<Var>) -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let v = f(&mut tape)?;
        tape.value(v).item()
    }

    fn probs(vals: &[f64]) -> Tensor<f64> {
        Tensor::new([vals.len(), 1], vals.to_vec()).unwrap()
    }

    #[test]
    fn mse_of_constant_offset() {
        let v = eval1(|t| {
            let a = t.constant(Tensor::full([2, 1, 3, 3], 0.4));
            let b = t.constant(Tensor::full([2, 1, 3, 3], 0.5));
            mse_loss(t, a, b)
        })
        .unwrap();
        assert!((v - 0.01).abs() < 1e-15);
    }

    #[test]
    fn adversarial_known_values() {
        let e = eval1(|t| {
            let d = t.constant(probs(&[(-1.0f64).exp()]));
            adversarial_gen_loss(t, d)
        })
        .unwrap();
        assert_eq!(e, 1.0);
        let v = eval1(|t| {
            let d = t.constant(probs(&[0.5, 0.25, 0.125]));
            adversarial_gen_loss(t, d)
        })
        .unwrap();
        // ln 2 + 2 ln 2 + 3 ln 2.
        assert!((v - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 4.1589).abs() < 1e-4);
        let one = eval1(|t| {
            let d = t.constant(probs(&[1.0]));
            adversarial_gen_loss(t, d)
        })
        .unwrap();
        assert_eq!(one, 0.0);
    }

    #[test]
    fn out_of_range_probability_is_a_domain_error() {
        let err = eval1(|t| {
            let d = t.constant(probs(&[1.5]));
            adversarial_gen_loss(t, d)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn discriminator_known_values() {
        let half = eval1(|t| {
            let r = t.constant(probs(&[0.5]));
            let f = t.constant(probs(&[0.5]));
            discriminator_loss(t, r, f)
        })
        .unwrap();
        assert!((half - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = eval1(|t| {
            let r = t.constant(probs(&[1.0]));
            let f = t.constant(probs(&[0.0]));
            discriminator_loss(t, r, f)
        })
        .unwrap();
        assert_eq!(perfect, 0.0);
    }

    #[test]
    fn triplet_scalar_cases() {
        let run = |mode, a: f64, p: f64, n: f64| {
            let w = LossWeights { triplet_mode: mode, ..LossWeights::default() };
            eval1(|t| {
                let a = t.constant(Tensor::full([1, 1], a));
                let p = t.constant(Tensor::full([1, 1], p));
                let n = t.constant(Tensor::full([1, 1], n));
                triplet_loss(t, a, p, n, &w)
            })
            .unwrap()
        };
        assert_eq!(run(TripletMode::Literal, 0.0, 0.0, 1.0), -1.0);
        assert_eq!(run(TripletMode::Hinged, 0.0, 0.0, 1.0), 0.0);
        assert_eq!(run(TripletMode::Literal, 0.3, 0.3, 0.3), 0.0);
        assert_eq!(run(TripletMode::Hinged, 0.3, 0.3, 0.3), 1.0);
    }

    #[test]
    fn hinged_equal_embeddings_give_margin_per_sample() {
        let w = LossWeights { triplet_margin: 0.7, ..LossWeights::default() };
        let v = eval1(|t| {
            let x = Tensor::from_fn([4, 2, 3, 3], |i| i as f64 * 0.1);
            let a = t.constant(x.clone());
            let p = t.constant(x.clone());
            let n = t.constant(x);
            triplet_loss(t, a, p, n, &w)
        })
        .unwrap();
        assert!((v - 4.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn identity_extractor_feature_loss_is_scaled_mse() {
        let fx = FeatureExtractor::identity(3);
        let w = LossWeights::default();
        let sr = Tensor::<f64>::from_fn([2, 3, 5, 5], |i| (i as f64 * 0.37).sin() * 0.5 + 0.5);
        let hr = Tensor::<f64>::from_fn([2, 3, 5, 5], |i| (i as f64 * 0.11).cos() * 0.5 + 0.5);
        let mut tape = Tape::<f64>::new();
        let net = fx.bind(&mut tape);
        let (s, h) = (tape.constant(sr), tape.constant(hr));
        let f = feature_loss(&mut tape, &fx, &net, s, h, &w).unwrap();
        let m = mse_loss(&mut tape, s, h).unwrap();
        let (f, m) = (tape.value(f).item().unwrap(), tape.value(m).item().unwrap());
        // Channel sum against a full mean: the ratio is C * s^2.
        let expected = m * w.feature_scale * w.feature_scale * 3.0;
        assert!((f - expected).abs() < 1e-12);
    }
}
