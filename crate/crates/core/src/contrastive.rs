//! Unified contrastive (InfoNCE) loss against the feature bank.
//!
//! For a query embedding `q` with positive key `k⁺` (its own bank entry) and
//! negative keys `k⁻`:
//!
//! ```text
//! L = -log( exp(q·k⁺/τ) / (exp(q·k⁺/τ) + Σ exp(q·k⁻/τ)) )
//! ```
//!
//! Bank entries are constants for backpropagation; only the query path
//! (encoder and projector) receives gradient.

use crate::bank::FeatureBank;
use crate::error::{Error, Result};
use crate::model::{Batch, ModelParams, SampleId};
use crate::numerics::{axpy, dot_unchecked, log_sum_exp, softmax};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub negatives: usize,
    /// Use every other bank entry as a negative instead of sampling.
    #[serde(default)]
    pub full_bank: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            negatives: 64,
            full_bank: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn scaled_logits(q: &[f64], k_pos: &[f64], k_negs: &[&[f64]], tau: f64) -> Vec<f64> {
    std::iter::once(k_pos)
        .chain(k_negs.iter().copied())
        .map(|k| dot_unchecked(q, k) / tau)
        .collect()
}

fn check_keys(q: &[f64], k_pos: &[f64], k_negs: &[&[f64]]) -> Result<()> {
    if k_pos.len() != q.len() {
        return Err(Error::dim(q.len(), k_pos.len()));
    }
    if let Some(bad) = k_negs.iter().find(|k| k.len() != q.len()) {
        return Err(Error::dim(q.len(), bad.len()));
    }
    Ok(())
}

/// InfoNCE loss of one query.
pub fn nce_loss(q: &[f64], k_pos: &[f64], k_negs: &[&[f64]], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {tau}")));
    }
    check_keys(q, k_pos, k_negs)?;
    let logits = scaled_logits(q, k_pos, k_negs, tau);
    Ok(log_sum_exp(&logits) - logits[0])
}

/// Loss and `∂L/∂q` for one query.
fn nce_loss_and_query_grad(q: &[f64], k_pos: &[f64], k_negs: &[&[f64]], tau: f64) -> (f64, Vec<f64>) {
    let logits = scaled_logits(q, k_pos, k_negs, tau);
    let loss = log_sum_exp(&logits) - logits[0];
    let probs = softmax(&logits);
    // ∂L/∂q = (Σ_j p_j k_j − k⁺) / τ
    let mut g: Vec<f64> = k_pos.iter().map(|k| (probs[0] - 1.0) * k).collect();
    for (p, k) in probs[1..].iter().zip(k_negs) {
        axpy(*p, k, &mut g);
    }
    for v in &mut g {
        *v /= tau;
    }
    (loss, g)
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    /// Mean loss over the batch.
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// Gradient over the full parameter vector.
    pub grad: Vec<f64>,
    /// Query embeddings computed in the forward pass, for the bank update.
    pub embeddings: Vec<(SampleId, Vec<f64>)>,
}

/// Mean contrastive loss over `batch` and its gradient, drawing negatives
/// per query from `bank`.
pub fn contrastive_grad<R: Rng>(
    params: &ModelParams,
    batch: &Batch,
    bank: &FeatureBank,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<ContrastiveOutput> {
    cfg.validate()?;
    let mut grad = vec![0.0; params.len()];
    let mut per_sample = Vec::with_capacity(batch.len());
    let mut embeddings = Vec::with_capacity(batch.len());
    if batch.is_empty() {
        return Ok(ContrastiveOutput {
            loss: 0.0,
            per_sample,
            grad,
            embeddings,
        });
    }
    let inv_n = 1.0 / batch.len() as f64;
    let embed_dim = params.config().embed_dim;
    if bank.dim() != embed_dim {
        return Err(Error::dim(embed_dim, bank.dim()));
    }
    for sample in batch.samples() {
        let k_pos = bank.get(sample.id).ok_or(Error::MissingEntry(sample.id.0))?;
        let negatives = if cfg.full_bank {
            bank.all_negatives(sample.id)
        } else {
            bank.draw_negatives(sample.id, cfg.negatives, rng)?
        };
        let input = &sample.input;
        if input.len() != params.config().input_dim {
            return Err(Error::dim(params.config().input_dim, input.len()));
        }
        let trace = params.encode_trace(input);
        let proj = params.project_trace(&trace.features)?;
        let (loss, d_q) = nce_loss_and_query_grad(&proj.embedding, k_pos, &negatives, cfg.temperature);
        if !loss.is_finite() {
            return Err(Error::NonFinite("contrastive loss"));
        }
        let d_q: Vec<f64> = d_q.into_iter().map(|v| v * inv_n).collect();
        let d_features = params.backprop_projector(&trace.features, &proj, &d_q, &mut grad);
        params.backprop_encoder(input, &trace, &d_features, &mut grad);
        per_sample.push(loss);
        embeddings.push((sample.id, proj.embedding));
    }
    let loss = per_sample.iter().sum::<f64>() * inv_n;
    Ok(ContrastiveOutput {
        loss,
        per_sample,
        grad,
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Origin, Part, Sample};
    use crate::numerics::l2_normalize;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).unwrap()
    }

    #[test]
    fn empty_negatives_give_zero() {
        let q = [0.6, 0.8];
        assert_eq!(nce_loss(&q, &[1.0, 0.0], &[], 0.07).unwrap(), 0.0);
    }

    #[test]
    fn tied_negative_gives_ln2() {
        let q = [1.0, 0.0];
        let neg = [1.0, 0.0];
        let loss = nce_loss(&q, &q, &[&neg], 0.07).unwrap();
        assert_abs_diff_eq!(loss, 2.0_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn invalid_arguments() {
        assert!(nce_loss(&[1.0], &[1.0], &[], 0.0).is_err());
        assert!(nce_loss(&[1.0], &[1.0], &[], -1.0).is_err());
        assert!(matches!(
            nce_loss(&[1.0, 0.0], &[1.0], &[], 0.1),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            nce_loss(&[1.0, 0.0], &[1.0, 0.0], &[&[1.0]], 0.1),
            Err(Error::Dimension { .. })
        ));
    }

    /// Direct evaluation of the ratio with compensated sums, shifted by the
    /// positive logit so the exponentials stay in range.
    fn nce_oracle(q: &[f64], k_pos: &[f64], k_negs: &[Vec<f64>], tau: f64) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let pos = d(q, k_pos) / tau;
        let mut denom = 1.0_f64;
        let mut comp = 0.0_f64;
        for k in k_negs {
            let term = (d(q, k) / tau - pos).exp();
            let y = term - comp;
            let t = denom + y;
            comp = (t - denom) - y;
            denom = t;
        }
        denom.ln()
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let q = unit(&mut rng, 16);
            let kp = unit(&mut rng, 16);
            let negs: Vec<Vec<f64>> = (0..50).map(|_| unit(&mut rng, 16)).collect();
            let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let loss = nce_loss(&q, &kp, &refs, 0.07).unwrap();
            assert_abs_diff_eq!(loss, nce_oracle(&q, &kp, &negs, 0.07), epsilon = 1e-10);
        }
    }

    fn setup(n: usize, seed: u64) -> (ModelParams, Batch, FeatureBank) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(ModelConfig::new(2, 3), &mut rng).unwrap();
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                Sample::new(
                    SampleId(i as u64),
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    None,
                    Origin::Target,
                )
            })
            .collect();
        let bank = FeatureBank::init(&params, &samples, 0.5).unwrap();
        (params, Batch::new(samples).unwrap(), bank)
    }

    #[test]
    fn single_sample_no_negatives_is_flat() {
        let (params, batch, bank) = setup(1, 2);
        let cfg = ContrastiveConfig {
            negatives: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = contrastive_grad(&params, &batch, &bank, &cfg, &mut rng).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn classifier_gradient_is_zero() {
        let (params, batch, bank) = setup(12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ContrastiveConfig {
            negatives: 8,
            ..Default::default()
        };
        let out = contrastive_grad(&params, &batch, &bank, &cfg, &mut rng).unwrap();
        assert!(out.loss > 0.0);
        assert!(out.grad[params.part_range(Part::Classifier)].iter().all(|g| *g == 0.0));
        assert!(out.grad[params.part_range(Part::Encoder)].iter().any(|g| *g != 0.0));
        assert_eq!(out.embeddings.len(), 12);
    }

    #[test]
    fn identical_samples_have_equal_losses() {
        let (params, _, _) = setup(1, 4);
        let x = vec![0.3, -0.7];
        let mut bank = FeatureBank::new(params.config().embed_dim, 0.5).unwrap();
        let key = params.encode_project(&x).unwrap();
        bank.insert(SampleId(0), Origin::Target, &key).unwrap();
        bank.insert(SampleId(1), Origin::Target, &key).unwrap();
        let batch = Batch::new(vec![
            Sample::new(SampleId(0), x.clone(), None, Origin::Target),
            Sample::new(SampleId(1), x, None, Origin::Target),
        ])
        .unwrap();
        let cfg = ContrastiveConfig {
            negatives: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = contrastive_grad(&params, &batch, &bank, &cfg, &mut rng).unwrap();
        assert_eq!(out.per_sample[0], out.per_sample[1]);
    }

    #[test]
    fn missing_bank_entry() {
        let (params, batch, _) = setup(3, 5);
        let bank = FeatureBank::new(params.config().embed_dim, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = contrastive_grad(&params, &batch, &bank, &ContrastiveConfig::default(), &mut rng);
        assert!(matches!(err, Err(Error::MissingEntry(0))));
    }

    #[test]
    fn full_bank_uses_every_other_entry() {
        let (params, batch, bank) = setup(6, 6);
        let cfg = ContrastiveConfig {
            full_bank: true,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = contrastive_grad(&params, &batch, &bank, &cfg, &mut rng).unwrap();
        let s = &batch.samples()[0];
        let q = params.encode_project(&s.input).unwrap();
        let expected = nce_loss(&q, bank.get(s.id).unwrap(), &bank.all_negatives(s.id), 0.07).unwrap();
        assert_abs_diff_eq!(out.per_sample[0], expected, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn loss_decreases_with_positive_similarity(
            angles in prop::collection::vec(0.0..std::f64::consts::PI, 1..6),
            tau in 0.05..1.0f64,
            a in 0.0..3.0f64,
            b in 0.0..3.0f64,
        ) {
            // q = [1, 0]; k⁺ at angle a or b, so q·k⁺ = cos(angle)
            let negs: Vec<Vec<f64>> = angles.iter().map(|t| vec![t.cos(), t.sin()]).collect();
            let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let q = [1.0, 0.0];
            let la = nce_loss(&q, &[a.cos(), a.sin()], &refs, tau).unwrap();
            let lb = nce_loss(&q, &[b.cos(), b.sin()], &refs, tau).unwrap();
            // smaller angle → larger similarity → no larger loss
            if a < b {
                prop_assert!(la <= lb + 1e-12);
            } else {
                prop_assert!(lb <= la + 1e-12);
            }
            prop_assert!(la >= 0.0);
        }

        #[test]
        fn adding_a_negative_never_decreases_loss(
            angles in prop::collection::vec(0.0..std::f64::consts::TAU, 0..6),
            extra in 0.0..std::f64::consts::TAU,
            tau in 0.05..1.0f64,
        ) {
            let negs: Vec<Vec<f64>> = angles.iter().map(|t| vec![t.cos(), t.sin()]).collect();
            let mut refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let q = [0.0, 1.0];
            let before = nce_loss(&q, &q, &refs, tau).unwrap();
            let e = [extra.cos(), extra.sin()];
            refs.push(&e);
            let after = nce_loss(&q, &q, &refs, tau).unwrap();
            prop_assert!(after >= before);
        }
    }
}
