//! The continual adaptation protocol.
//!
//! A run pre-trains on the labeled source domain, then adapts through the
//! target domains in order. Every adaptation iteration composes a batch of
//! source, memory and target samples, computes the contrastive gradient
//! `g_t` over the whole batch and the classification gradients `g_s` (source
//! part) and `g_dm` (memory part), turns them into an update `w` according to
//! the strategy, and steps `θ ← θ − lr·w`. After each domain the model is
//! evaluated on the test split of every domain seen so far and, for
//! contrastive strategies, an episodic memory of the new domain is built.

use crate::bank::{FeatureBank, DEFAULT_MOMENTUM};
use crate::contrastive::{contrastive_grad, ContrastiveConfig};
use crate::datagen::{Benchmark, LabeledPoint};
use crate::error::{Error, Result};
use crate::gradproject::{self, project_n, project_two, GradientSet, ProjectionCase};
use crate::memory::{
    align_clusters, align_clusters_by_features, build_memory, kmeans, pseudo_label, AlignmentSpace, EpisodicMemory,
};
use crate::metrics::{compute_metrics, evaluate, AccuracyMatrix, Metrics};
use crate::model::{Batch, ModelConfig, ModelParams, Origin, Part, Sample, SampleId};
use crate::numerics::{axpy, dot_unchecked};
use crate::seeds::{rng_for, Stream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    /// Train on the source once; never adapt.
    SrcOnly,
    /// Plain contrastive SGD, `w = g_t`.
    CrtOnly,
    /// `w = g_t + λ₁·g_s + λ₂·g_dm`.
    Multitask { lambda_src: f64, lambda_mem: f64 },
    /// Multitask without the memory term.
    CrtSrc { lambda_src: f64 },
    /// Multitask with source and memory terms.
    CrtSrcMem { lambda_src: f64, lambda_mem: f64 },
    /// Contrastive gradient projected onto the source constraint only.
    CrtSdc,
    /// Contrastive gradient projected onto the source and memory constraints.
    Grcl,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::SrcOnly => "SRC_ONLY",
            Strategy::CrtOnly => "CRT_ONLY",
            Strategy::Multitask { .. } => "MULTITASK",
            Strategy::CrtSrc { .. } => "CRT_SRC",
            Strategy::CrtSrcMem { .. } => "CRT_SRC_MEM",
            Strategy::CrtSdc => "CRT_SDC",
            Strategy::Grcl => "GRCL",
        }
    }

    pub fn adapts(&self) -> bool {
        !matches!(self, Strategy::SrcOnly)
    }

    fn lambdas(&self) -> Option<(f64, f64)> {
        match *self {
            Strategy::CrtOnly => Some((0.0, 0.0)),
            Strategy::Multitask { lambda_src, lambda_mem } => Some((lambda_src, lambda_mem)),
            Strategy::CrtSrc { lambda_src } => Some((lambda_src, 0.0)),
            Strategy::CrtSrcMem { lambda_src, lambda_mem } => Some((lambda_src, lambda_mem)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some((a, b)) = self.lambdas() {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "trade-off weights must be finite and non-negative, got ({a}, {b})"
                )));
            }
        }
        Ok(())
    }
}

/// Fractions of each mini-batch drawn from source, memory and target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchRatio {
    pub source: f64,
    pub memory: f64,
    pub target: f64,
}

impl Default for BatchRatio {
    fn default() -> Self {
        Self {
            source: 0.25,
            memory: 0.25,
            target: 0.5,
        }
    }
}

impl BatchRatio {
    fn validate(&self) -> Result<()> {
        let parts = [self.source, self.memory, self.target];
        if parts.iter().any(|p| !(*p >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "batch ratios must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        if self.target <= 0.0 {
            return Err(Error::InvalidParameter("target share must be positive".into()));
        }
        Ok(())
    }

    /// `(source, memory, target)` counts for a batch of `size`. With no
    /// memory available the memory share goes to the target.
    pub fn counts(&self, size: usize, memory_available: bool) -> (usize, usize, usize) {
        let source = (size as f64 * self.source).round() as usize;
        let memory = ((size as f64 * self.memory).round() as usize).min(size - source.min(size));
        let target = size - source.min(size) - memory;
        if memory_available {
            (source, memory, target)
        } else {
            (source, 0, target + memory)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPlan {
    pub strategy: Strategy,
    pub seed: u64,
    pub source_epochs: usize,
    pub epochs_per_domain: usize,
    pub batch_size: usize,
    pub ratio: BatchRatio,
    /// Peak learning rate; decays with a cosine schedule within each phase.
    pub lr: f64,
    pub model: ModelConfig,
    pub contrastive: ContrastiveConfig,
    pub momentum: f64,
    pub memory_capacity: usize,
    pub kmeans_max_iter: usize,
    pub alignment: AlignmentSpace,
    /// Use one constraint per episodic memory instead of the pooled one.
    pub per_memory_constraints: bool,
    /// Zero the classifier coordinates of every gradient during adaptation.
    pub exclude_classifier: bool,
}

impl AdaptationPlan {
    pub fn new(strategy: Strategy, model: ModelConfig, seed: u64) -> Self {
        Self {
            strategy,
            seed,
            source_epochs: 30,
            epochs_per_domain: 10,
            batch_size: 64,
            ratio: BatchRatio::default(),
            lr: 0.05,
            model,
            contrastive: ContrastiveConfig::default(),
            momentum: DEFAULT_MOMENTUM,
            memory_capacity: 128,
            kmeans_max_iter: 100,
            alignment: AlignmentSpace::Features,
            per_memory_constraints: false,
            exclude_classifier: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.ratio.validate()?;
        self.model.validate()?;
        self.contrastive.validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter("batch_size must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        if self.memory_capacity == 0 {
            return Err(Error::InvalidParameter("memory_capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub domain: usize,
    pub iteration: usize,
    pub lr: f64,
    pub contrastive_loss: f64,
    pub source_loss: f64,
    pub memory_loss: f64,
    pub case: String,
    pub u_source: f64,
    pub u_memory: f64,
    /// `⟨w, g_s⟩`
    pub slack_source: f64,
    /// `⟨w, g_dm⟩` with the pooled memory gradient.
    pub slack_memory: f64,
    /// `‖w − g_t‖`
    pub correction_norm: f64,
    pub tolerance: f64,
}

impl IterationRecord {
    pub fn constraints_hold(&self) -> bool {
        self.slack_source >= -self.tolerance && self.slack_memory >= -self.tolerance
    }
}

pub fn write_diagnostics_csv<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Multitask update `g_t + λ₁·g_s + λ₂·g_dm`.
pub fn multitask_step_grad(g_t: &[f64], g_s: &[f64], g_dm: &[f64], lambda_src: f64, lambda_mem: f64) -> Result<Vec<f64>> {
    if g_s.len() != g_t.len() {
        return Err(Error::dim(g_t.len(), g_s.len()));
    }
    if g_dm.len() != g_t.len() {
        return Err(Error::dim(g_t.len(), g_dm.len()));
    }
    let mut w = g_t.to_vec();
    if lambda_src != 0.0 {
        axpy(lambda_src, g_s, &mut w);
    }
    if lambda_mem != 0.0 {
        axpy(lambda_mem, g_dm, &mut w);
    }
    Ok(w)
}

/// Sample id of the `index`-th training point of `domain`.
pub fn sample_id(domain: usize, index: usize) -> SampleId {
    SampleId(((domain as u64) << 32) | index as u64)
}

fn domain_samples(points: &[LabeledPoint], domain: usize, labeled: bool) -> Vec<Sample> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (label, origin) = if labeled {
                (Some(p.label), Origin::Source)
            } else {
                (None, Origin::Target)
            };
            Sample::new(sample_id(domain, i), p.x.clone(), label, origin)
        })
        .collect()
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (PI * step as f64 / total as f64).cos())
}

fn sample_subset<R: Rng>(pool: &[Sample], count: usize, rng: &mut R) -> Vec<Sample> {
    if pool.is_empty() || count == 0 {
        return Vec::new();
    }
    if count >= pool.len() {
        return pool.to_vec();
    }
    rand::seq::index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect()
}

/// Model and memories carried from one domain to the next.
#[derive(Debug, Clone)]
pub struct AdaptationState {
    pub params: ModelParams,
    pub memories: Vec<EpisodicMemory>,
}

impl AdaptationState {
    fn memory_samples(&self) -> Vec<Sample> {
        self.memories.iter().flat_map(|m| m.samples()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub matrix: AccuracyMatrix,
    pub metrics: Metrics,
    pub diagnostics: Vec<IterationRecord>,
    pub state: AdaptationState,
}

/// Supervised cross-entropy training on the source domain.
pub fn pretrain_source(params: ModelParams, source: &[Sample], plan: &AdaptationPlan) -> Result<ModelParams> {
    let mut params = params;
    if plan.source_epochs == 0 || source.is_empty() {
        return Ok(params);
    }
    let mut rng = rng_for(plan.seed, Stream::SourceBatches, 0);
    let per_epoch = source.len().div_ceil(plan.batch_size);
    let total = per_epoch * plan.source_epochs;
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut step = 0;
    for _ in 0..plan.source_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(plan.batch_size) {
            let batch = Batch::new(chunk.iter().map(|&i| source[i].clone()).collect())?;
            let (_, grad) = params.ce_loss_and_grad(&batch)?;
            params = params.sgd_step(&grad, cosine_lr(plan.lr, step, total))?;
            step += 1;
        }
    }
    Ok(params)
}

/// Adapts the model to target domain `t` (1-based) and, for adapting
/// strategies, appends the memory of domain `t`.
pub fn adapt_domain(
    state: AdaptationState,
    t: usize,
    plan: &AdaptationPlan,
    bench: &Benchmark,
    diagnostics: &mut Vec<IterationRecord>,
) -> Result<AdaptationState> {
    if !plan.strategy.adapts() {
        return Ok(state);
    }
    let domain = bench
        .domains
        .get(t)
        .ok_or_else(|| Error::Contract(format!("benchmark has no domain {t}")))?;
    let source = domain_samples(&bench.domains[0].train, 0, true);
    let target = domain_samples(&domain.train, t, false);
    if target.is_empty() {
        return Err(Error::Degenerate(format!("target domain {t} has no training samples")));
    }
    let memory = state.memory_samples();

    let mut bank_samples = source.clone();
    bank_samples.extend(memory.iter().cloned());
    bank_samples.extend(target.iter().cloned());
    let mut bank = FeatureBank::init(&state.params, &bank_samples, plan.momentum)?;
    drop(bank_samples);

    let (n_src, n_mem, n_tgt) = plan.ratio.counts(plan.batch_size, !memory.is_empty());
    let per_epoch = target.len().div_ceil(n_tgt);
    let total = per_epoch * plan.epochs_per_domain;

    let mut batch_rng = rng_for(plan.seed, Stream::TargetBatches, t);
    let mut neg_rng = rng_for(plan.seed, Stream::Negatives, t);
    let mut params = state.params;
    let mut order: Vec<usize> = (0..target.len()).collect();
    let mut step = 0;
    for _ in 0..plan.epochs_per_domain {
        order.shuffle(&mut batch_rng);
        for chunk in order.chunks(n_tgt) {
            let src = sample_subset(&source, n_src, &mut batch_rng);
            let mem = sample_subset(&memory, n_mem, &mut batch_rng);
            let mut items = Vec::with_capacity(src.len() + mem.len() + chunk.len());
            items.extend(src.iter().cloned());
            items.extend(mem.iter().cloned());
            items.extend(chunk.iter().map(|&i| target[i].clone()));
            let batch = Batch::new(items)?;

            let lr = cosine_lr(plan.lr, step, total);
            let record;
            (params, record) = adaptation_step(&params, &batch, &src, &mem, &mut bank, plan, &mut neg_rng, lr)?;
            diagnostics.push(IterationRecord {
                domain: t,
                iteration: step,
                ..record
            });
            step += 1;
        }
    }

    let mut memories = state.memories;
    memories.push(memorize_domain(&params, t, &target, &source, plan)?);
    Ok(AdaptationState { params, memories })
}

#[allow(clippy::too_many_arguments)]
fn adaptation_step<R: Rng>(
    params: &ModelParams,
    batch: &Batch,
    src: &[Sample],
    mem: &[Sample],
    bank: &mut FeatureBank,
    plan: &AdaptationPlan,
    neg_rng: &mut R,
    lr: f64,
) -> Result<(ModelParams, IterationRecord)> {
    let contrastive = contrastive_grad(params, batch, bank, &plan.contrastive, neg_rng)?;
    let mut g_t = contrastive.grad;
    let (source_loss, mut g_s) = params.ce_loss_and_grad(&Batch::new(src.to_vec())?)?;
    let (memory_loss, mut g_dm) = params.ce_loss_and_grad(&Batch::new(mem.to_vec())?)?;
    if plan.exclude_classifier {
        for g in [&mut g_t, &mut g_s, &mut g_dm] {
            params.mask_part(g, Part::Classifier);
        }
    }

    let mut case = String::from("none");
    let (mut u_source, mut u_memory) = (0.0, 0.0);
    let w = match plan.strategy {
        Strategy::SrcOnly => unreachable!("source-only runs never adapt"),
        Strategy::CrtSdc => {
            let zero = vec![0.0; g_t.len()];
            let r = project_two(&GradientSet::new(g_t.clone(), g_s.clone(), zero)?)?;
            case = r.case.to_string();
            u_source = r.u_star[0];
            r.w
        }
        Strategy::Grcl if plan.per_memory_constraints => {
            let mut constraints = vec![g_s.clone()];
            let mut domains: Vec<usize> = mem
                .iter()
                .filter_map(|s| match s.origin {
                    Origin::Memory(i) => Some(i),
                    _ => None,
                })
                .collect();
            domains.sort_unstable();
            domains.dedup();
            for d in domains {
                let part: Vec<Sample> = mem.iter().filter(|s| s.origin == Origin::Memory(d)).cloned().collect();
                let (_, mut g) = params.ce_loss_and_grad(&Batch::new(part)?)?;
                if plan.exclude_classifier {
                    params.mask_part(&mut g, Part::Classifier);
                }
                constraints.push(g);
            }
            let refs: Vec<&[f64]> = constraints.iter().map(|c| c.as_slice()).collect();
            let r = project_n(&g_t, &refs)?;
            case = match &r.case {
                ProjectionCase::Interior => "interior".to_string(),
                other => other.to_string(),
            };
            u_source = r.u_star[0];
            u_memory = r.u_star[1..].iter().sum();
            r.w
        }
        Strategy::Grcl => {
            let r = project_two(&GradientSet::new(g_t.clone(), g_s.clone(), g_dm.clone())?)?;
            case = r.case.to_string();
            u_source = r.u_star[0];
            u_memory = r.u_star[1];
            r.w
        }
        other => {
            let (l1, l2) = other.lambdas().expect("multitask-family strategy");
            multitask_step_grad(&g_t, &g_s, &g_dm, l1, l2)?
        }
    };

    let tolerance = gradproject::tolerance(&g_t, &[&g_s, &g_dm]);
    let correction: f64 = w.iter().zip(&g_t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let record = IterationRecord {
        domain: 0,
        iteration: 0,
        lr,
        contrastive_loss: contrastive.loss,
        source_loss,
        memory_loss,
        case,
        u_source,
        u_memory,
        slack_source: dot_unchecked(&w, &g_s),
        slack_memory: dot_unchecked(&w, &g_dm),
        correction_norm: correction,
        tolerance,
    };

    let next = params.sgd_step(&w, lr)?;
    for (id, q) in &contrastive.embeddings {
        bank.momentum_update(*id, q)?;
    }
    Ok((next, record))
}

/// Clusters the adapted embeddings of domain `t`, aligns clusters with the
/// source classes and keeps the most confident pseudo-labeled samples.
pub fn memorize_domain(
    params: &ModelParams,
    t: usize,
    target: &[Sample],
    source: &[Sample],
    plan: &AdaptationPlan,
) -> Result<EpisodicMemory> {
    let embeddings = target
        .iter()
        .map(|s| params.encode_project(&s.input))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng_for(plan.seed, Stream::Clustering, t);
    let cluster = kmeans(&embeddings, params.config().num_classes, &mut rng, plan.kmeans_max_iter)?;
    let alignment = match plan.alignment {
        AlignmentSpace::Embedding => align_clusters(&cluster, params, source)?,
        AlignmentSpace::Features => align_clusters_by_features(&cluster, params, target, source)?,
    };
    let labeled = pseudo_label(params, target, &cluster, &alignment)?;
    build_memory(t, &labeled, plan.memory_capacity)
}

fn test_sets(bench: &Benchmark, upto: usize) -> Vec<&[LabeledPoint]> {
    bench.domains[..=upto].iter().map(|d| d.test.as_slice()).collect()
}

/// Runs the whole protocol: source pre-training, then every target domain.
pub fn run(plan: &AdaptationPlan, bench: &Benchmark) -> Result<RunOutput> {
    plan.validate()?;
    let n = bench.num_targets();
    if n == 0 {
        return Err(Error::Contract("benchmark needs at least one target domain".into()));
    }
    if bench.num_classes != plan.model.num_classes {
        return Err(Error::Contract(format!(
            "model has {} classes but the benchmark has {}",
            plan.model.num_classes, bench.num_classes
        )));
    }
    if bench.input_dim() != plan.model.input_dim {
        return Err(Error::dim(plan.model.input_dim, bench.input_dim()));
    }

    let mut rng = rng_for(plan.seed, Stream::Init, 0);
    let params = ModelParams::init(plan.model, &mut rng)?;
    let source = domain_samples(&bench.domains[0].train, 0, true);
    let params = pretrain_source(params, &source, plan)?;

    let mut matrix = AccuracyMatrix::new(n);
    matrix.set_row(0, &evaluate(&params, &test_sets(bench, 0))?)?;

    let mut state = AdaptationState {
        params,
        memories: Vec::new(),
    };
    let mut diagnostics = Vec::new();
    for t in 1..=n {
        state = adapt_domain(state, t, plan, bench, &mut diagnostics)?;
        matrix.set_row(t, &evaluate(&state.params, &test_sets(bench, t))?)?;
    }
    let metrics = compute_metrics(&matrix)?;
    Ok(RunOutput {
        matrix,
        metrics,
        diagnostics,
        state,
    })
}
