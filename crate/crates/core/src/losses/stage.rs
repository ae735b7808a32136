use super::terms::{adversarial_gen_loss, feature_distance, mse_loss, triplet_loss};
use super::{FeatureExtractor, LossWeights, TripletEmbedding};
use crate::data::bicubic_resize;
use crate::tensor::{Bound, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Generator-side tensors of one stage-`stage` training step.
#[derive(Clone, Copy, Debug)]
pub struct StageLossInput<'a, T> {
    /// 1-based stage index.
    pub stage: usize,
    /// Stage output `[N, C, H, W]`.
    pub sr: Var,
    /// Previous stage output `[N, C, H/2, W/2]`; required iff `stage >= 2`.
    pub sr_prev: Option<&'a Tensor<T>>,
    /// Ground truth at the stage's output resolution.
    pub hr: Var,
    /// Discriminator probabilities on `sr`, `[N, 1]`.
    pub d_fake: Var,
}

/// Weighted loss components of one step; they sum to `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub feature: f64,
    pub adversarial: f64,
    pub triplet: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.mse + self.feature + self.adversarial + self.triplet
    }
}

/// `mse + feature + alpha * adversarial`, plus `triplet_weight * triplet`
/// from stage 2 on. The triplet negative is the previous stage output
/// upsampled x2 bicubically; no gradient flows into it.
pub fn stage_loss<T: Scalar>(
    tape: &mut Tape<T>,
    input: StageLossInput<'_, T>,
    extractor: &FeatureExtractor,
    net: &Bound<'_>,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let StageLossInput {
        stage,
        sr,
        sr_prev,
        hr,
        d_fake,
    } = input;
    if stage == 0 {
        return Err(Error::Contract("stage indices start at 1".into()));
    }
    if (stage >= 2) != sr_prev.is_some() {
        return Err(Error::Contract(format!(
            "stage {stage}: previous-stage output must be given exactly when stage >= 2"
        )));
    }
    let value = |tape: &Tape<T>, v: Var| tape.value(v).data()[0].to_f64_lossy();

    let mse = mse_loss(tape, sr, hr)?;
    let f_sr = extractor.forward(tape, net, sr)?;
    let f_hr = extractor.forward(tape, net, hr)?;
    let feature = feature_distance(tape, f_sr, f_hr, weights)?;
    let adv = adversarial_gen_loss(tape, d_fake)?;
    let adv = tape.scale(adv, weights.alpha)?;
    let mut total = tape.add(mse, feature)?;
    total = tape.add(total, adv)?;
    let mut breakdown = LossBreakdown {
        mse: value(tape, mse),
        feature: value(tape, feature),
        adversarial: value(tape, adv),
        ..LossBreakdown::default()
    };

    if let Some(prev) = sr_prev {
        let [n, c, h, w] = tape.value(sr).dims4("stage_loss")?;
        let expected = [n, c, h / 2, w / 2];
        if prev.shape() != expected || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "stage_loss",
                format!("previous-stage output {:?}, expected {expected:?}", prev.shape()),
            ));
        }
        let negative = tape.constant(bicubic_resize(prev, h, w)?);
        let (a, p, neg) = match weights.triplet_embedding {
            TripletEmbedding::Pixels => (sr, hr, negative),
            TripletEmbedding::Features => {
                let f_neg = extractor.forward(tape, net, negative)?;
                let s = weights.feature_scale;
                (tape.scale(f_sr, s)?, tape.scale(f_hr, s)?, tape.scale(f_neg, s)?)
            }
        };
        let triplet = triplet_loss(tape, a, p, neg, weights)?;
        let triplet = tape.scale(triplet, weights.triplet_weight)?;
        total = tape.add(total, triplet)?;
        breakdown.triplet = value(tape, triplet);
    }
    breakdown.total = value(tape, total);
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::TripletMode;

    struct Case {
        stage: usize,
        sr: Tensor<f64>,
        prev: Option<Tensor<f64>>,
        hr: Tensor<f64>,
        d: Vec<f64>,
    }

    fn run(case: &Case, weights: &LossWeights) -> Result<LossBreakdown> {
        let fx = FeatureExtractor::seeded(1, FeatureExtractor::standard_layers(&[8, 8]), 3).unwrap();
        let mut tape = Tape::<f64>::new();
        let net = fx.bind(&mut tape);
        let sr = tape.leaf(case.sr.clone(), true);
        let hr = tape.constant(case.hr.clone());
        let d_fake = tape.constant(Tensor::new([case.d.len(), 1], case.d.clone()).unwrap());
        let input = StageLossInput {
            stage: case.stage,
            sr,
            sr_prev: case.prev.as_ref(),
            hr,
            d_fake,
        };
        let (total, b) = stage_loss(&mut tape, input, &fx, &net, weights)?;
        assert_eq!(tape.value(total).item()?, b.total);
        Ok(b)
    }

    fn image(seed: usize, size: usize) -> Tensor<f64> {
        Tensor::from_fn([2, 1, size, size], |i| ((i * 7919 + seed * 104_729) % 1000) as f64 / 1000.0)
    }

    #[test]
    fn perfect_first_stage_costs_nothing() {
        let hr = image(1, 8);
        let case = Case { stage: 1, sr: hr.clone(), prev: None, hr, d: vec![1.0, 1.0] };
        let b = run(&case, &LossWeights::default()).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn components_sum_to_total() {
        for (stage, prev) in [(1, None), (2, Some(image(3, 4)))] {
            let case = Case { stage, sr: image(1, 8), prev, hr: image(2, 8), d: vec![0.3, 0.6] };
            let b = run(&case, &LossWeights::default()).unwrap();
            assert!((b.component_sum() - b.total).abs() < 1e-12);
            assert!(b.mse > 0.0 && b.feature > 0.0 && b.adversarial > 0.0);
            assert_eq!(b.triplet != 0.0, stage == 2);
        }
    }

    #[test]
    fn triplet_vanishes_when_everything_matches() {
        // A constant image survives the bicubic x2 upsample exactly.
        let hr = Tensor::full([2, 1, 8, 8], 0.4);
        let prev = Some(Tensor::full([2, 1, 4, 4], 0.4));
        let case = Case { stage: 2, sr: hr.clone(), prev, hr, d: vec![0.5, 0.5] };
        for embedding in [TripletEmbedding::Features, TripletEmbedding::Pixels] {
            let literal = LossWeights { triplet_mode: TripletMode::Literal, triplet_embedding: embedding, ..LossWeights::default() };
            assert!(run(&case, &literal).unwrap().triplet.abs() < 1e-12);
            let hinged = LossWeights { triplet_embedding: embedding, ..LossWeights::default() };
            let b = run(&case, &hinged).unwrap();
            assert!((b.triplet - 0.1 * 1.0 * 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn previous_output_must_match_the_stage() {
        let w = LossWeights::default();
        let missing = Case { stage: 2, sr: image(1, 8), prev: None, hr: image(2, 8), d: vec![0.5, 0.5] };
        assert!(matches!(run(&missing, &w), Err(Error::Contract(_))));
        let extra = Case { stage: 1, prev: Some(image(3, 4)), ..missing };
        assert!(matches!(run(&extra, &w), Err(Error::Contract(_))));
        let wrong = Case { stage: 2, sr: image(1, 8), prev: Some(image(3, 8)), hr: image(2, 8), d: vec![0.5, 0.5] };
        assert!(matches!(run(&wrong, &w), Err(Error::Shape { .. })));
    }
}
