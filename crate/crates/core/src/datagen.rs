//! Synthetic continual domain-adaptation benchmarks.
//!
//! Every domain draws points from a base 2-D class-conditional distribution
//! and applies its own similarity transform `x ↦ scale · R(θ) x + t`. Labels
//! are carried through the transform unchanged, so a sequence of growing
//! rotations is a sequence of growing covariate shifts over a shared label
//! space.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

pub const INPUT_DIM: usize = 2;
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Isotropic Gaussian blobs evenly spaced on a circle.
    GaussianBlobs,
    /// The classic interleaved half circles; two classes only.
    TwoMoons,
    /// Classes occupy the cells of a square grid.
    RotatedGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: GeneratorKind,
    pub num_classes: usize,
    pub per_class: usize,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default = "zero_translation")]
    pub translation: Vec<f64>,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    /// Standard deviation of the Gaussian jitter.
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn zero_translation() -> Vec<f64> {
    vec![0.0; INPUT_DIM]
}

fn unit_scale() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.5
}

impl DomainSpec {
    pub fn blobs(num_classes: usize, per_class: usize, rotation_deg: f64, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::GaussianBlobs,
            num_classes,
            per_class,
            rotation_deg,
            translation: zero_translation(),
            scale: 1.0,
            noise: default_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(Error::InvalidParameter("per_class must be at least 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidParameter("num_classes must be at least 1".into()));
        }
        if self.kind == GeneratorKind::TwoMoons && self.num_classes != 2 {
            return Err(Error::InvalidParameter("two-moons has exactly 2 classes".into()));
        }
        if self.translation.len() != INPUT_DIM {
            return Err(Error::dim(INPUT_DIM, self.translation.len()));
        }
        let finite = self.rotation_deg.is_finite()
            && self.scale.is_finite()
            && self.noise.is_finite()
            && self.translation.iter().all(|t| t.is_finite());
        if !finite || self.noise < 0.0 {
            return Err(Error::InvalidParameter("shift parameters must be finite".into()));
        }
        Ok(())
    }

    /// Applies this domain's similarity transform to a base-space point.
    pub fn transform(&self, p: [f64; 2]) -> Vec<f64> {
        let (s, c) = (self.rotation_deg * PI / 180.0).sin_cos();
        vec![
            self.scale * (c * p[0] - s * p[1]) + self.translation[0],
            self.scale * (s * p[0] + c * p[1]) + self.translation[1],
        ]
    }

    fn base_point<R: Rng>(&self, class: usize, rng: &mut R, noise: &Normal<f64>) -> [f64; 2] {
        let k = self.num_classes as f64;
        let jitter = [noise.sample(rng), noise.sample(rng)];
        match self.kind {
            GeneratorKind::GaussianBlobs => {
                let angle = 2.0 * PI * class as f64 / k;
                let radius = 3.0;
                [radius * angle.cos() + jitter[0], radius * angle.sin() + jitter[1]]
            }
            GeneratorKind::TwoMoons => {
                let t = rng.random_range(0.0..PI);
                let (x, y) = if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                // centre the pair of moons on the origin
                [2.0 * (x - 0.5) + jitter[0], 2.0 * (y - 0.25) + jitter[1]]
            }
            GeneratorKind::RotatedGrid => {
                let side = (self.num_classes as f64).sqrt().ceil() as usize;
                let (row, col) = (class / side, class % side);
                let cell = 2.0;
                let half = side as f64 * cell / 2.0;
                let margin = 0.15 * cell;
                let u = rng.random_range(margin..cell - margin);
                let v = rng.random_range(margin..cell - margin);
                [
                    col as f64 * cell + u - half + jitter[0],
                    row as f64 * cell + v - half + jitter[1],
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DomainData {
    pub train: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
}

/// Domain 0 is the source; domains 1..=N are the targets in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub num_classes: usize,
    pub domains: Vec<DomainData>,
}

impl Benchmark {
    pub fn num_targets(&self) -> usize {
        self.domains.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.domains
            .first()
            .and_then(|d| d.train.first().or(d.test.first()))
            .map_or(INPUT_DIM, |p| p.x.len())
    }
}

/// Generates one domain: `per_class` points per class, split 80/20 per class.
pub fn generate_domain(spec: &DomainSpec) -> Result<DomainData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let n_train = ((spec.per_class as f64) * TRAIN_FRACTION).round() as usize;
    let mut data = DomainData::default();
    for class in 0..spec.num_classes {
        let mut points: Vec<LabeledPoint> = (0..spec.per_class)
            .map(|_| LabeledPoint {
                x: spec.transform(spec.base_point(class, &mut rng, &noise)),
                label: class,
            })
            .collect();
        let test = points.split_off(n_train.min(points.len()));
        data.train.extend(points);
        data.test.extend(test);
    }
    data.train.shuffle(&mut rng);
    data.test.shuffle(&mut rng);
    Ok(data)
}

pub fn generate_sequence(specs: &[DomainSpec]) -> Result<Benchmark> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Contract("a sequence needs at least a source domain".into()))?;
    if let Some(bad) = specs.iter().find(|s| s.num_classes != first.num_classes) {
        return Err(Error::Contract(format!(
            "inconsistent class counts: {} vs {}",
            first.num_classes, bad.num_classes
        )));
    }
    let domains = specs.iter().map(generate_domain).collect::<Result<Vec<_>>>()?;
    Ok(Benchmark {
        num_classes: first.num_classes,
        domains,
    })
}

/// Named benchmark presets.
pub const PRESETS: &[&str] = &["rot-blobs-5", "moons-4", "grid-4"];

/// Domain specs for a named preset, source first.
pub fn preset(name: &str) -> Option<Vec<DomainSpec>> {
    let specs = match name {
        // source + 4 targets, |Y| = 4, 2000 samples per domain
        "rot-blobs-5" => [0.0, 10.0, 20.0, 30.0, 40.0]
            .iter()
            .enumerate()
            .map(|(i, rot)| DomainSpec {
                noise: 0.7,
                ..DomainSpec::blobs(4, 500, *rot, 1000 + i as u64)
            })
            .collect(),
        "moons-4" => [0.0, 20.0, 40.0, 60.0]
            .iter()
            .enumerate()
            .map(|(i, rot)| DomainSpec {
                kind: GeneratorKind::TwoMoons,
                num_classes: 2,
                per_class: 500,
                rotation_deg: *rot,
                translation: zero_translation(),
                scale: 1.0,
                noise: 0.15,
                seed: 2000 + i as u64,
            })
            .collect(),
        "grid-4" => [0.0, 10.0, 20.0, 30.0]
            .iter()
            .enumerate()
            .map(|(i, rot)| DomainSpec {
                kind: GeneratorKind::RotatedGrid,
                num_classes: 4,
                per_class: 400,
                rotation_deg: *rot,
                translation: vec![0.2 * i as f64, 0.0],
                scale: 1.0,
                noise: 0.1,
                seed: 3000 + i as u64,
            })
            .collect(),
        _ => return None,
    };
    Some(specs)
}

/// Writes `domain,split,label,x_1..x_d` rows.
pub fn export_csv<W: Write>(bench: &Benchmark, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = bench.input_dim();
    let mut header = vec!["domain".to_string(), "split".into(), "label".into()];
    header.extend((1..=dim).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for (d, domain) in bench.domains.iter().enumerate() {
        for (split, points) in [("train", &domain.train), ("test", &domain.test)] {
            for p in points {
                let mut row = vec![d.to_string(), split.to_string(), p.label.to_string()];
                row.extend(p.x.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn import_csv<R: Read>(input: R) -> Result<Benchmark> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "domain" || &headers[1] != "split" || &headers[2] != "label" {
        return Err(Error::Format("expected columns domain,split,label,x_1..x_d".into()));
    }
    let dim = headers.len() - 3;
    let mut domains: Vec<DomainData> = Vec::new();
    let mut num_classes = 0;
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Format(format!("row {}: bad {what}", line + 2));
        let d: usize = record[0].parse().map_err(|_| bad("domain"))?;
        let label: usize = record[2].parse().map_err(|_| bad("label"))?;
        let x = (0..dim)
            .map(|i| record[3 + i].parse::<f64>().map_err(|_| bad("coordinate")))
            .collect::<Result<Vec<_>>>()?;
        if domains.len() <= d {
            domains.resize_with(d + 1, DomainData::default);
        }
        let point = LabeledPoint { x, label };
        match &record[1] {
            "train" => domains[d].train.push(point),
            "test" => domains[d].test.push(point),
            _ => return Err(bad("split")),
        }
        num_classes = num_classes.max(label + 1);
    }
    if domains.is_empty() {
        return Err(Error::Format("dataset has no rows".into()));
    }
    Ok(Benchmark {
        num_classes,
        domains,
    })
}
