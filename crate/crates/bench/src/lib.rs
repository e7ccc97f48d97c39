//! Fixtures shared by the criterion benches.

use grcl_core::{Batch, FeatureBank, GradientSet, ModelConfig, ModelParams, Origin, Sample, SampleId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A projection instance with both constraints violated by `g_t`.
pub fn conflicting_gradients(len: usize, seed: u64) -> GradientSet {
    let mut r = rng(seed);
    let g_s = random_vec(&mut r, len);
    let g_dm = random_vec(&mut r, len);
    let g_t: Vec<f64> = g_s.iter().zip(&g_dm).map(|(a, b)| -a - b).collect();
    GradientSet::new(g_t, g_s, g_dm).expect("finite gradients")
}

pub struct ModelFixture {
    pub params: ModelParams,
    pub batch: Batch,
    pub labeled: Batch,
    pub bank: FeatureBank,
}

/// Default-sized model with a `batch_size` target batch and a bank of
/// `bank_size` entries.
pub fn model_fixture(batch_size: usize, bank_size: usize, seed: u64) -> ModelFixture {
    let mut r = rng(seed);
    let params = ModelParams::init(ModelConfig::new(2, 4), &mut r).expect("valid config");
    let samples: Vec<Sample> = (0..bank_size)
        .map(|i| Sample::new(SampleId(i as u64), random_vec(&mut r, 2), None, Origin::Target))
        .collect();
    let bank = FeatureBank::init(&params, &samples, 0.5).expect("non-empty bank");
    let batch = Batch::new(samples[..batch_size].to_vec()).expect("consistent batch");
    let labeled = Batch::new(
        samples[..batch_size]
            .iter()
            .enumerate()
            .map(|(i, s)| Sample::new(s.id, s.input.clone(), Some(i % 4), Origin::Source))
            .collect(),
    )
    .expect("consistent batch");
    ModelFixture {
        params,
        batch,
        labeled,
        bank,
    }
}
