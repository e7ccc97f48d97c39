//! Domain-episodic memories built from pseudo-labeled target samples.
//!
//! After adapting to a target domain, its training samples are embedded,
//! clustered with k-means into `|Y|` clusters, clusters are mapped onto
//! classes through the nearest source class-mean, and the most confident
//! assignments are kept, balanced over classes.

use crate::error::{Error, Result};
use crate::model::{ModelParams, Origin, Sample, SampleId};
use crate::numerics::axpy;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

const CONFIDENCE_DELTA: f64 = 1e-12;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid (lowest index on ties).
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    /// Assigns every point to its nearest centroid.
    pub fn assign(&self, points: &[Vec<f64>]) -> Vec<usize> {
        points.iter().map(|p| nearest(p, &self.centroids).0).collect()
    }
}

fn kmeans_pp_seed<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops at an assignment fixpoint
/// or after `max_iter` iterations. An empty cluster is re-seeded at the point
/// farthest from its current centroid.
pub fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R, max_iter: usize) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::Degenerate(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::dim(dim, p.len()));
    }

    let mut centroids = kmeans_pp_seed(points, k, rng);
    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut dists = Vec::with_capacity(points.len());
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
            dists.push(d);
        }
        history.push(dists.iter().sum());
        if !changed {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            axpy(1.0, p, &mut sums[a]);
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centroids[assignments[i]])
                            .total_cmp(&sq_dist(&points[j], &centroids[assignments[j]]))
                    })
                    .expect("non-empty point set");
                centroids[c] = points[far].clone();
                assignments[far] = c;
            }
        }
    }
    // final assignment against the final centroids
    let mut inertia = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *a = c;
        inertia += d;
    }
    if history.last().is_none_or(|last| inertia < *last) {
        history.push(inertia);
    }
    Ok(ClusterModel {
        centroids,
        assignments,
        inertia_history: history,
    })
}

/// Where cluster-to-class alignment compares clusters with source classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentSpace {
    /// Cluster centroids against source class-means of `encode_project`.
    Embedding,
    /// Per-cluster member means against source class-means of the encoder
    /// features read by the classifier.
    Features,
}

/// Per-class means of `embed(x)` over labeled source samples; classes with
/// no samples are skipped.
fn source_class_means<F>(params: &ModelParams, source: &[Sample], dim: usize, embed: F) -> Result<Vec<(usize, Vec<f64>)>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let num_classes = params.config().num_classes;
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for s in source {
        let label = s
            .label
            .ok_or_else(|| Error::Contract(format!("source sample {} has no label", s.id)))?;
        if label >= num_classes {
            return Err(Error::Contract(format!("label {label} out of range")));
        }
        axpy(1.0, &embed(&s.input)?, &mut sums[label]);
        counts[label] += 1;
    }
    let means: Vec<(usize, Vec<f64>)> = (0..num_classes)
        .filter(|&c| counts[c] > 0)
        .map(|c| (c, sums[c].iter().map(|v| v / counts[c] as f64).collect()))
        .collect();
    if means.is_empty() {
        return Err(Error::Degenerate("no labeled source samples to align against".into()));
    }
    Ok(means)
}

fn nearest_class(point: &[f64], means: &[(usize, Vec<f64>)]) -> Result<usize> {
    let mut best = (means[0].0, f64::INFINITY);
    for (class, mean) in means {
        if mean.len() != point.len() {
            return Err(Error::dim(mean.len(), point.len()));
        }
        let d = sq_dist(point, mean);
        if d < best.1 {
            best = (*class, d);
        }
    }
    Ok(best.0)
}

/// Maps each cluster to the class whose source class-mean embedding is
/// nearest to the cluster centroid. Not necessarily a bijection.
pub fn align_clusters(cluster: &ClusterModel, params: &ModelParams, source: &[Sample]) -> Result<Vec<usize>> {
    let means = source_class_means(params, source, params.config().embed_dim, |x| params.encode_project(x))?;
    cluster.centroids.iter().map(|c| nearest_class(c, &means)).collect()
}

/// Like [`align_clusters`], but compares the mean encoder features of each
/// cluster's members (`members[i]` assigned to `cluster.assignments[i]`)
/// with the source class-means of the same features. A cluster without
/// members falls back to its centroid alignment.
pub fn align_clusters_by_features(
    cluster: &ClusterModel,
    params: &ModelParams,
    members: &[Sample],
    source: &[Sample],
) -> Result<Vec<usize>> {
    if members.len() != cluster.assignments.len() {
        return Err(Error::dim(cluster.assignments.len(), members.len()));
    }
    let dim = params.config().encoder_hidden;
    let means = source_class_means(params, source, dim, |x| params.features(x))?;
    let mut sums = vec![vec![0.0; dim]; cluster.k()];
    let mut counts = vec![0usize; cluster.k()];
    for (s, &a) in members.iter().zip(&cluster.assignments) {
        axpy(1.0, &params.features(&s.input)?, &mut sums[a]);
        counts[a] += 1;
    }
    let fallback = align_clusters(cluster, params, source)?;
    (0..cluster.k())
        .map(|a| {
            if counts[a] == 0 {
                return Ok(fallback[a]);
            }
            let centre: Vec<f64> = sums[a].iter().map(|v| v / counts[a] as f64).collect();
            nearest_class(&centre, &means)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeled {
    pub sample: Sample,
    pub class: usize,
    pub confidence: f64,
}

/// Labels each sample with the aligned class of its nearest centroid.
///
/// Confidence is the relative margin `(d₂ − d₁)/(d₂ + δ)` between the
/// distances to the nearest and second-nearest centroids.
pub fn pseudo_label(
    params: &ModelParams,
    samples: &[Sample],
    cluster: &ClusterModel,
    alignment: &[usize],
) -> Result<Vec<PseudoLabeled>> {
    let num_classes = params.config().num_classes;
    if alignment.len() != cluster.k() {
        return Err(Error::Contract(format!(
            "alignment covers {} clusters but the model has {}",
            alignment.len(),
            cluster.k()
        )));
    }
    if let Some(bad) = alignment.iter().find(|c| **c >= num_classes) {
        return Err(Error::Contract(format!("cluster aligned to unknown class {bad}")));
    }
    samples
        .iter()
        .map(|s| {
            let e = params.encode_project(&s.input)?;
            let mut d1 = (0usize, f64::INFINITY);
            let mut d2 = f64::INFINITY;
            for (i, c) in cluster.centroids.iter().enumerate() {
                let d = sq_dist(&e, c).sqrt();
                if d < d1.1 {
                    d2 = d1.1;
                    d1 = (i, d);
                } else if d < d2 {
                    d2 = d;
                }
            }
            let confidence = if d2.is_infinite() {
                1.0
            } else {
                ((d2 - d1.1) / (d2 + CONFIDENCE_DELTA)).clamp(0.0, 1.0)
            };
            Ok(PseudoLabeled {
                sample: s.clone(),
                class: alignment[d1.0],
                confidence,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: SampleId,
    pub input: Vec<f64>,
    pub label: usize,
    pub confidence: f64,
}

/// Episodic memory of one target domain; entries sorted by non-increasing
/// confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMemory {
    pub domain: usize,
    pub capacity: usize,
    entries: Vec<MemoryEntry>,
}

impl EpisodicMemory {
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries as labeled samples tagged with this memory's domain.
    pub fn samples(&self) -> Vec<Sample> {
        self.entries
            .iter()
            .map(|e| Sample::new(e.id, e.input.clone(), Some(e.label), Origin::Memory(self.domain)))
            .collect()
    }

    /// Writes `domain,class,confidence,e_1..e_d` using `params` for embeddings.
    pub fn export_csv<W: Write>(&self, params: &ModelParams, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["domain".to_string(), "class".into(), "confidence".into()];
        header.extend((1..=params.config().embed_dim).map(|i| format!("e_{i}")));
        w.write_record(&header)?;
        for e in &self.entries {
            let emb = params.encode_project(&e.input)?;
            let mut row = vec![self.domain.to_string(), e.label.to_string(), e.confidence.to_string()];
            row.extend(emb.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Keeps up to `capacity` samples, visiting classes round-robin and taking
/// each class's most confident remaining sample.
pub fn build_memory(domain: usize, labeled: &[PseudoLabeled], capacity: usize) -> Result<EpisodicMemory> {
    if labeled.is_empty() {
        return Err(Error::Degenerate("no pseudo-labeled samples to memorize".into()));
    }
    let num_classes = labeled.iter().map(|l| l.class).max().unwrap_or(0) + 1;
    let mut per_class: Vec<Vec<&PseudoLabeled>> = vec![Vec::new(); num_classes];
    for l in labeled {
        per_class[l.class].push(l);
    }
    for bucket in &mut per_class {
        bucket.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    }
    let mut chosen: Vec<&PseudoLabeled> = Vec::with_capacity(capacity.min(labeled.len()));
    let mut rank = 0;
    while chosen.len() < capacity && chosen.len() < labeled.len() {
        for bucket in &per_class {
            if chosen.len() == capacity {
                break;
            }
            if let Some(l) = bucket.get(rank) {
                chosen.push(l);
            }
        }
        rank += 1;
    }
    chosen.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(EpisodicMemory {
        domain,
        capacity,
        entries: chosen
            .into_iter()
            .map(|l| MemoryEntry {
                id: l.sample.id,
                input: l.sample.input.clone(),
                label: l.class,
                confidence: l.confidence,
            })
            .collect(),
    })
}
