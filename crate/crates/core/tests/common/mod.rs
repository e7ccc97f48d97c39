//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use grcl_core::{FeatureBank, ModelConfig, Origin, Sample, SampleId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Forward pass straight from the flat parameter layout: layers encoder 1,
/// encoder 2, projector 1, projector 2, classifier, each a row-major weight
/// matrix followed by its bias.
pub struct Reference<'a> {
    pub cfg: ModelConfig,
    pub theta: &'a [f64],
}

impl Reference<'_> {
    fn shapes(&self) -> [(usize, usize); 5] {
        let c = &self.cfg;
        [
            (c.encoder_hidden, c.input_dim),
            (c.encoder_hidden, c.encoder_hidden),
            (c.projector_hidden, c.encoder_hidden),
            (c.embed_dim, c.projector_hidden),
            (c.num_classes, c.encoder_hidden),
        ]
    }

    fn dense(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let shapes = self.shapes();
        let mut offset = 0;
        for (r, c) in &shapes[..layer] {
            offset += r * c + r;
        }
        let (rows, cols) = shapes[layer];
        let mut out = vec![0.0; rows];
        for i in 0..rows {
            let mut acc = self.theta[offset + rows * cols + i];
            for j in 0..cols {
                acc += self.theta[offset + i * cols + j] * x[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.dense(0, x).iter().map(|v| v.tanh()).collect();
        self.dense(1, &h).iter().map(|v| v.tanh()).collect()
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let f = self.features(x);
        let h: Vec<f64> = self.dense(2, &f).iter().map(|v| v.tanh()).collect();
        let z = self.dense(3, &h);
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        z.iter().map(|v| v / n).collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.dense(4, &self.features(x))
    }

    /// Mean cross-entropy over labeled samples.
    pub fn ce_loss(&self, samples: &[Sample]) -> f64 {
        let mut total = 0.0;
        for s in samples {
            let z = self.logits(&s.input);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[s.label.unwrap()];
        }
        total / samples.len() as f64
    }

    /// Mean InfoNCE loss with every other bank entry as a negative.
    pub fn nce_full_bank(&self, samples: &[Sample], bank: &FeatureBank, tau: f64) -> f64 {
        let mut total = 0.0;
        for s in samples {
            let q = self.embed(&s.input);
            let dot = |k: &[f64]| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / tau;
            let pos = dot(bank.get(s.id).unwrap());
            let mut terms = vec![pos];
            for (id, _, key) in bank.iter() {
                if id != s.id {
                    terms.push(dot(key));
                }
            }
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - pos;
        }
        total / samples.len() as f64
    }
}

pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        input_dim: rng.random_range(2..5),
        encoder_hidden: rng.random_range(3..10),
        projector_hidden: rng.random_range(3..10),
        embed_dim: rng.random_range(2..7),
        num_classes: rng.random_range(2..5),
    }
}

pub fn random_samples(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize, first_id: u64, labeled: bool) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let x = (0..cfg.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (label, origin) = if labeled {
                (Some(rng.random_range(0..cfg.num_classes)), Origin::Source)
            } else {
                (None, Origin::Target)
            };
            Sample::new(SampleId(first_id + i as u64), x, label, origin)
        })
        .collect()
}

/// Central difference of `f` at coordinate `i`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: &F, theta: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Coordinates to probe: `per_layer` from every weight block and bias
/// block, plus `extra` uniformly over the whole vector.
pub fn probe_coordinates(rng: &mut ChaCha8Rng, cfg: &ModelConfig, per_block: usize, extra: usize) -> Vec<usize> {
    let r = Reference { cfg: *cfg, theta: &[] };
    let mut coords = Vec::new();
    let mut offset = 0;
    for (rows, cols) in r.shapes() {
        for _ in 0..per_block {
            coords.push(offset + rng.random_range(0..rows * cols));
            coords.push(offset + rows * cols + rng.random_range(0..rows));
        }
        offset += rows * cols + rows;
    }
    for _ in 0..extra {
        coords.push(rng.random_range(0..offset));
    }
    coords
}

/// Random projection instance of dimension `p`. `kind` selects which of the
/// two constraints `g_t` violates: 0 none, 1 source, 2 memory, 3 both;
/// 4 leaves everything random.
pub fn projection_instance(rng: &mut ChaCha8Rng, p: usize, kind: u8) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rv = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..p).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    loop {
        let g_s = rv(rng);
        let g_dm = rv(rng);
        let mut g_t = rv(rng);
        let want_s = matches!(kind, 1 | 3);
        let want_m = matches!(kind, 2 | 3);
        if kind == 4 {
            return (g_t, g_s, g_dm);
        }
        // push g_t towards the requested signs
        let scale = rng.random_range(0.5..3.0);
        for i in 0..p {
            let ds = if want_s { -scale } else { scale };
            let dm = if want_m { -scale } else { scale };
            g_t[i] += ds * g_s[i] + dm * g_dm[i];
        }
        let ok_s = (dot(&g_t, &g_s) < 0.0) == want_s;
        let ok_m = (dot(&g_t, &g_dm) < 0.0) == want_m;
        if ok_s && ok_m {
            return (g_t, g_s, g_dm);
        }
    }
}
