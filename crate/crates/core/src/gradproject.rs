//! Projection of the contrastive gradient onto the cone of updates that do
//! not increase the constrained classification losses (first order).
//!
//! Primal problem for constraint gradients `c_1..c_n`:
//!
//! ```text
//! min_w ½‖w − g_t‖²   s.t.  ⟨w, c_i⟩ ≥ 0  for all i
//! ```
//!
//! With `C` the matrix whose rows are the `c_i`, the dual is the
//! n-variable problem
//!
//! ```text
//! min_{u ≥ 0} ½ uᵀ(C Cᵀ)u + (C g_t)ᵀu,      w = g_t + Cᵀu
//! ```
//!
//! For the two-constraint case (source and pooled memory) the dual is
//! solved exactly by enumerating its four active sets. [`project_n`]
//! handles any number of constraints and [`brute_force_project`] is an
//! independent primal oracle used for verification.

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot_unchecked, ensure_finite, norm};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Relative tolerance factor; see [`tolerance`].
const TOL_FACTOR: f64 = 1e-9;
const SMALL_N_LIMIT: usize = 8;
const DUAL_STEP_TOL: f64 = 1e-10;
const DUAL_MAX_ITERS: usize = 500_000;

/// Feasibility tolerance `ε = 1e-9 · max(1, ‖g‖)` where `‖g‖` is the largest
/// norm among the objective and constraint gradients.
pub fn tolerance(g_t: &[f64], constraints: &[&[f64]]) -> f64 {
    let largest = constraints.iter().map(|c| norm(c)).fold(norm(g_t), f64::max);
    TOL_FACTOR * largest.max(1.0)
}

/// Contrastive gradient plus the two constraint gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub g_t: Vec<f64>,
    pub g_s: Vec<f64>,
    /// Pooled episodic-memory gradient; all zeros when no memory exists yet.
    pub g_dm: Vec<f64>,
}

impl GradientSet {
    pub fn new(g_t: Vec<f64>, g_s: Vec<f64>, g_dm: Vec<f64>) -> Result<Self> {
        if g_s.len() != g_t.len() {
            return Err(Error::dim(g_t.len(), g_s.len()));
        }
        if g_dm.len() != g_t.len() {
            return Err(Error::dim(g_t.len(), g_dm.len()));
        }
        Ok(Self { g_t, g_s, g_dm })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionCase {
    Interior,
    SourceActive,
    MemoryActive,
    BothActive,
    /// Active constraint indices for the general solver.
    Active(Vec<usize>),
}

impl fmt::Display for ProjectionCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectionCase::Interior => write!(f, "interior"),
            ProjectionCase::SourceActive => write!(f, "source-active"),
            ProjectionCase::MemoryActive => write!(f, "memory-active"),
            ProjectionCase::BothActive => write!(f, "both-active"),
            ProjectionCase::Active(idx) => {
                let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                write!(f, "active[{}]", parts.join(" "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub w: Vec<f64>,
    /// Dual multipliers, one per constraint (zero when inactive).
    pub u_star: Vec<f64>,
    /// `½‖w − g_t‖²`
    pub objective: f64,
    /// `⟨w, c_i⟩` per constraint.
    pub slacks: Vec<f64>,
    pub case: ProjectionCase,
    pub tolerance: f64,
}

impl ProjectionResult {
    pub fn correction_norm(&self) -> f64 {
        (2.0 * self.objective).sqrt()
    }
}

/// KKT residuals of a projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub min_slack: f64,
    pub min_dual: f64,
    pub max_complementarity: f64,
    /// `‖w − g_t − Σ u_i c_i‖`
    pub stationarity: f64,
    pub tolerance: f64,
}

impl KktReport {
    pub fn satisfied(&self) -> bool {
        self.min_slack >= -self.tolerance
            && self.min_dual >= 0.0
            && self.max_complementarity <= self.tolerance
            && self.stationarity <= self.tolerance
    }
}

pub fn kkt_report(g_t: &[f64], constraints: &[&[f64]], result: &ProjectionResult) -> KktReport {
    let mut residual: Vec<f64> = result.w.iter().zip(g_t).map(|(w, g)| w - g).collect();
    let mut min_slack = f64::INFINITY;
    let mut min_dual = f64::INFINITY;
    let mut max_comp = 0.0_f64;
    for (c, u) in constraints.iter().zip(&result.u_star) {
        axpy(-u, c, &mut residual);
        let slack = dot_unchecked(&result.w, c);
        min_slack = min_slack.min(slack);
        min_dual = min_dual.min(*u);
        max_comp = max_comp.max((u * slack).abs());
    }
    KktReport {
        min_slack,
        min_dual,
        max_complementarity: max_comp,
        stationarity: norm(&residual),
        tolerance: result.tolerance,
    }
}

fn check_inputs(g_t: &[f64], constraints: &[&[f64]]) -> Result<()> {
    ensure_finite(g_t, "g_t")?;
    for c in constraints {
        if c.len() != g_t.len() {
            return Err(Error::dim(g_t.len(), c.len()));
        }
        ensure_finite(c, "constraint gradient")?;
    }
    Ok(())
}

fn finish(
    g_t: &[f64],
    constraints: &[&[f64]],
    u: Vec<f64>,
    case: ProjectionCase,
    tol: f64,
) -> ProjectionResult {
    let mut w = g_t.to_vec();
    for (c, ui) in constraints.iter().zip(&u) {
        if *ui != 0.0 {
            axpy(*ui, c, &mut w);
        }
    }
    let slacks = constraints.iter().map(|c| dot_unchecked(&w, c)).collect();
    let objective = 0.5
        * w.iter()
            .zip(g_t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    ProjectionResult {
        w,
        u_star: u,
        objective,
        slacks,
        case,
        tolerance: tol,
    }
}

/// Candidate dual point: slack of every constraint and dual objective value.
fn evaluate_dual(gram: &[[f64; 2]; 2], b: &[f64; 2], u: [f64; 2]) -> ([f64; 2], f64) {
    let au = [
        gram[0][0] * u[0] + gram[0][1] * u[1],
        gram[1][0] * u[0] + gram[1][1] * u[1],
    ];
    let slacks = [b[0] + au[0], b[1] + au[1]];
    let objective = 0.5 * (u[0] * au[0] + u[1] * au[1]);
    (slacks, objective)
}

/// Exact projection for the source and pooled-memory constraints.
///
/// A zero constraint gradient imposes nothing, so with `g_dm = 0` (no
/// memories yet) this reduces to a single half-space projection.
pub fn project_two(g: &GradientSet) -> Result<ProjectionResult> {
    let constraints: [&[f64]; 2] = [&g.g_s, &g.g_dm];
    check_inputs(&g.g_t, &constraints)?;
    let tol = tolerance(&g.g_t, &constraints);
    let g_t = &g.g_t;

    let b = [dot_unchecked(g_t, &g.g_s), dot_unchecked(g_t, &g.g_dm)];
    if b[0] >= -tol && b[1] >= -tol {
        return Ok(finish(g_t, &constraints, vec![0.0, 0.0], ProjectionCase::Interior, tol));
    }

    let a01 = dot_unchecked(&g.g_s, &g.g_dm);
    let gram = [
        [dot_unchecked(&g.g_s, &g.g_s), a01],
        [a01, dot_unchecked(&g.g_dm, &g.g_dm)],
    ];

    let mut candidates: Vec<([f64; 2], ProjectionCase)> = Vec::with_capacity(3);
    if gram[0][0] > 0.0 {
        candidates.push(([(-b[0] / gram[0][0]).max(0.0), 0.0], ProjectionCase::SourceActive));
    }
    if gram[1][1] > 0.0 {
        candidates.push(([0.0, (-b[1] / gram[1][1]).max(0.0)], ProjectionCase::MemoryActive));
    }
    if gram[0][0] > 0.0 && gram[1][1] > 0.0 {
        let trace = gram[0][0] + gram[1][1];
        let mut m = gram;
        let mut det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det < 1e-14 * trace * trace {
            let ridge = 1e-12 * trace;
            m[0][0] += ridge;
            m[1][1] += ridge;
            det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        }
        let u0 = (-b[0] * m[1][1] + b[1] * m[0][1]) / det;
        let u1 = (-b[1] * m[0][0] + b[0] * m[1][0]) / det;
        if u0 >= 0.0 && u1 >= 0.0 {
            candidates.push(([u0, u1], ProjectionCase::BothActive));
        }
    }

    let mut best: Option<([f64; 2], ProjectionCase, f64)> = None;
    for (u, case) in candidates {
        let (slacks, objective) = evaluate_dual(&gram, &b, u);
        if slacks.iter().all(|s| *s >= -tol) && best.as_ref().map_or(true, |(_, _, o)| objective < *o) {
            best = Some((u, case, objective));
        }
    }
    match best {
        Some((u, case, _)) => Ok(finish(g_t, &constraints, u.to_vec(), case, tol)),
        // Only reachable through severe cancellation; the iterative solver
        // tolerates it.
        None => project_n(g_t, &constraints).map(|mut r| {
            r.case = two_case(&r.u_star);
            r
        }),
    }
}

fn two_case(u: &[f64]) -> ProjectionCase {
    match (u[0] > 0.0, u[1] > 0.0) {
        (false, false) => ProjectionCase::Interior,
        (true, false) => ProjectionCase::SourceActive,
        (false, true) => ProjectionCase::MemoryActive,
        (true, true) => ProjectionCase::BothActive,
    }
}

/// Solves the symmetric system `m x = rhs` by Gaussian elimination with
/// partial pivoting, adding a small ridge when the system is singular.
fn solve_symmetric(m: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let trace: f64 = (0..n).map(|i| m[i][i]).sum();
    let attempt = |ridge: f64| -> Option<Vec<f64>> {
        let mut a: Vec<Vec<f64>> = m.to_vec();
        let mut x = rhs.to_vec();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += ridge;
        }
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[pivot][col].abs() <= 1e-14 * trace.max(f64::MIN_POSITIVE) {
                return None;
            }
            a.swap(col, pivot);
            x.swap(col, pivot);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    x[r] -= f * x[col];
                }
            }
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..n {
                s -= a[r][c] * x[c];
            }
            x[r] = s / a[r][r];
        }
        Some(x)
    };
    attempt(0.0).or_else(|| attempt(1e-12 * trace))
}

/// Projection onto `{w : ⟨w, c_i⟩ ≥ 0 ∀i}` for any number of constraints.
///
/// Uses active-set enumeration of the dual for up to eight constraints and
/// projected gradient on the dual beyond that.
pub fn project_n(g_t: &[f64], constraints: &[&[f64]]) -> Result<ProjectionResult> {
    check_inputs(g_t, constraints)?;
    let n = constraints.len();
    let tol = tolerance(g_t, constraints);
    let b: Vec<f64> = constraints.iter().map(|c| dot_unchecked(g_t, c)).collect();
    if b.iter().all(|v| *v >= -tol) {
        return Ok(finish(g_t, constraints, vec![0.0; n], ProjectionCase::Interior, tol));
    }
    let gram: Vec<Vec<f64>> = constraints
        .iter()
        .map(|ci| constraints.iter().map(|cj| dot_unchecked(ci, cj)).collect())
        .collect();

    let u = if n <= SMALL_N_LIMIT {
        enumerate_dual(&gram, &b, tol)
    } else {
        None
    };
    let u = match u {
        Some(u) => u,
        None => dual_projected_gradient(&gram, &b)?,
    };
    let active: Vec<usize> = (0..n).filter(|&i| u[i] > 0.0).collect();
    let case = if active.is_empty() {
        ProjectionCase::Interior
    } else {
        ProjectionCase::Active(active)
    };
    Ok(finish(g_t, constraints, u, case, tol))
}

fn enumerate_dual(gram: &[Vec<f64>], b: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = b.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if idx.iter().any(|&i| gram[i][i] == 0.0) {
            continue;
        }
        let sub: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| gram[i][j]).collect()).collect();
        let rhs: Vec<f64> = idx.iter().map(|&i| -b[i]).collect();
        let Some(sol) = solve_symmetric(&sub, &rhs) else {
            continue;
        };
        if sol.iter().any(|v| *v < 0.0) {
            continue;
        }
        let mut u = vec![0.0; n];
        for (k, &i) in idx.iter().enumerate() {
            u[i] = sol[k];
        }
        let au: Vec<f64> = gram.iter().map(|row| dot_unchecked(row, &u)).collect();
        if (0..n).any(|j| b[j] + au[j] < -tol) {
            continue;
        }
        let objective = 0.5 * dot_unchecked(&u, &au);
        if best.as_ref().map_or(true, |(_, o)| objective < *o) {
            best = Some((u, objective));
        }
    }
    best.map(|(u, _)| u)
}

/// Projected gradient on `½uᵀAu + bᵀu`, `u ≥ 0`, with step `1/L` where `L`
/// bounds the largest eigenvalue of `A`.
fn dual_projected_gradient(gram: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let lipschitz = gram
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if lipschitz == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let step = 1.0 / lipschitz;
    let mut u = vec![0.0; n];
    for _ in 0..DUAL_MAX_ITERS {
        let mut change = 0.0_f64;
        let grad: Vec<f64> = (0..n).map(|i| dot_unchecked(&gram[i], &u) + b[i]).collect();
        for i in 0..n {
            let next = (u[i] - step * grad[i]).max(0.0);
            change = change.max((next - u[i]).abs());
            u[i] = next;
        }
        if change < DUAL_STEP_TOL {
            return Ok(u);
        }
    }
    Err(Error::NoConvergence(DUAL_MAX_ITERS))
}

/// Primal oracle: tries every subset of constraints as the active set,
/// projects `g_t` onto the orthogonal complement of their span, and keeps
/// the closest feasible point.
///
/// Cost is `2ⁿ` subspace projections, so this is meant for small `n`.
pub fn brute_force_project(g_t: &[f64], constraints: &[&[f64]]) -> Result<Vec<f64>> {
    check_inputs(g_t, constraints)?;
    let n = constraints.len();
    if n > 16 {
        return Err(Error::InvalidParameter(format!(
            "brute-force projection supports at most 16 constraints, got {n}"
        )));
    }
    let tol = tolerance(g_t, constraints);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 0u32..(1 << n) {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for (i, c) in constraints.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            let scale = norm(c);
            if scale == 0.0 {
                continue;
            }
            let mut v: Vec<f64> = c.iter().map(|x| x / scale).collect();
            // two Gram-Schmidt passes
            for _ in 0..2 {
                for e in &basis {
                    let proj = dot_unchecked(&v, e);
                    axpy(-proj, e, &mut v);
                }
            }
            let residual = norm(&v);
            if residual > 1e-10 {
                basis.push(v.into_iter().map(|x| x / residual).collect());
            }
        }
        let mut w = g_t.to_vec();
        let mut removed = 0.0;
        for e in &basis {
            let coef = dot_unchecked(&w, e);
            axpy(-coef, e, &mut w);
            removed += coef * coef;
        }
        if constraints.iter().any(|c| dot_unchecked(&w, c) < -tol) {
            continue;
        }
        let objective = 0.5 * removed;
        if best.as_ref().map_or(true, |(_, o)| objective < *o) {
            best = Some((w, objective));
        }
    }
    best.map(|(w, _)| w)
        .ok_or_else(|| Error::Degenerate("no feasible active set".into()))
}
