mod common;

use common::{central_difference, probe_coordinates, random_config, random_samples, relative_error, Reference};
use grcl_core::{contrastive_grad, Batch, ContrastiveConfig, FeatureBank, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
const INSTANCES: u64 = 24;

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(&mut rng);
        let params = ModelParams::init(cfg, &mut rng).unwrap();
        let samples = random_samples(&mut rng, &cfg, 6, 0, true);
        let batch = Batch::new(samples.clone()).unwrap();
        let (loss, grad) = params.ce_loss_and_grad(&batch).unwrap();

        let loss_of = |theta: &[f64]| Reference { cfg, theta }.ce_loss(&samples);
        assert!((loss - loss_of(params.as_flat())).abs() < 1e-12);
        for i in probe_coordinates(&mut rng, &cfg, 6, 8) {
            let fd = central_difference(&loss_of, params.as_flat(), i, H);
            let err = relative_error(grad[i], fd, FLOOR);
            assert!(err < TOL, "seed {seed} coord {i}: analytic {} numeric {fd}", grad[i]);
            worst = worst.max(err);
            probes += 1;
        }
    }
    assert!(probes >= 64);
    eprintln!("cross-entropy: {probes} coordinates, worst relative error {worst:.2e}");
}

#[test]
fn contrastive_gradient_matches_finite_differences() {
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let cfg = random_config(&mut rng);
        let params = ModelParams::init(cfg, &mut rng).unwrap();
        let previous = ModelParams::init(cfg, &mut rng).unwrap();
        let samples = random_samples(&mut rng, &cfg, 10, 0, false);
        let bank = FeatureBank::init(&previous, &samples, 0.5).unwrap();
        let batch_samples = samples[..4].to_vec();
        let batch = Batch::new(batch_samples.clone()).unwrap();
        let tau = [0.07, 0.2, 0.5][seed as usize % 3];
        let cc = ContrastiveConfig {
            temperature: tau,
            negatives: 0,
            full_bank: true,
        };
        let out = contrastive_grad(&params, &batch, &bank, &cc, &mut rng).unwrap();

        let loss_of = |theta: &[f64]| Reference { cfg, theta }.nce_full_bank(&batch_samples, &bank, tau);
        assert!((out.loss - loss_of(params.as_flat())).abs() < 1e-10);
        for i in probe_coordinates(&mut rng, &cfg, 6, 8) {
            let fd = central_difference(&loss_of, params.as_flat(), i, H);
            let err = relative_error(out.grad[i], fd, FLOOR);
            assert!(err < TOL, "seed {seed} coord {i}: analytic {} numeric {fd}", out.grad[i]);
            worst = worst.max(err);
            probes += 1;
        }
    }
    assert!(probes >= 64);
    eprintln!("contrastive: {probes} coordinates, worst relative error {worst:.2e}");
}
