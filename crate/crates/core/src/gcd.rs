//! Weighted group-Lasso solver by group coordinate descent.
//!
//! Minimizes
//!
//! ```text
//! (1/2n) ||Y - Σ_b X_b β_b||² + Σ_b w_b ||β_b||
//! ```
//!
//! over (gene, subtype) blocks `b`. Each block visit applies majorize-minimize
//! steps with the block Lipschitz constant `L_b ≥ λ_max(X_bᵀX_b / n)`:
//! `z = β_b + X_bᵀr / (n L_b)`, then group soft-thresholding at `w_b / L_b`.
//! Every step decreases the objective. Blocks with `w_b = +∞` are held at zero.

use serde::{Deserialize, Serialize};

use crate::bridge::{FitDiagnostics, FitMethod, FitResult};
use crate::cohort::{GeneStructure, MultiStudy};
use crate::error::{Error, Result};
use crate::kmw::{build_stacked, DesignBlock, PcaMode, StackedDesign};
use crate::linalg::norm2;
use crate::tune::{self, TuningPoint, TuningReport};

/// A (gene, subtype) pair, by name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub gene: String,
    pub subtype: String,
}

impl Pair {
    pub fn new(gene: impl Into<String>, subtype: impl Into<String>) -> Self {
        Self {
            gene: gene.into(),
            subtype: subtype.into(),
        }
    }
}

/// Coefficients nested gene → subtype → SNP, stored flat in block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl CoefficientSet {
    pub fn filled(structure: &GeneStructure, v: f64) -> Self {
        let mut offsets = Vec::with_capacity(structure.n_blocks() + 1);
        offsets.push(0);
        for b in structure.blocks() {
            offsets.push(b.coef.end);
        }
        Self {
            values: vec![v; structure.dim()],
            offsets,
        }
    }

    pub fn zeros(structure: &GeneStructure) -> Self {
        Self::filled(structure, 0.0)
    }

    pub fn from_values(structure: &GeneStructure, values: Vec<f64>) -> Result<Self> {
        if values.len() != structure.dim() {
            return Err(Error::Dimension(format!(
                "{} coefficients for dimension {}",
                values.len(),
                structure.dim()
            )));
        }
        let mut c = Self::zeros(structure);
        c.values = values;
        Ok(c)
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn block(&self, b: usize) -> &[f64] {
        &self.values[self.offsets[b]..self.offsets[b + 1]]
    }

    pub fn block_mut(&mut self, b: usize) -> &mut [f64] {
        &mut self.values[self.offsets[b]..self.offsets[b + 1]]
    }

    pub fn block_norm(&self, b: usize) -> f64 {
        norm2(self.block(b))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Euclidean distance to another coefficient set of the same layout.
    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Blocks with nonzero norm.
    pub fn active_blocks(&self) -> Vec<usize> {
        (0..self.n_blocks()).filter(|&b| self.block_norm(b) > 0.0).collect()
    }

    pub fn selected_pairs(&self, structure: &GeneStructure) -> Vec<Pair> {
        let mut out: Vec<Pair> = self
            .active_blocks()
            .into_iter()
            .map(|b| {
                let spec = &structure.blocks()[b];
                Pair::new(&structure.genes()[spec.gene], &structure.subtypes()[spec.subtype])
            })
            .collect();
        out.sort();
        out
    }
}

/// Per-block penalty weights; `+∞` locks a block at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights(pub Vec<f64>);

impl GroupWeights {
    pub fn is_locked(&self, b: usize) -> bool {
        self.0[b].is_infinite()
    }
}

/// Group soft-thresholding: `(1 - t/||z||)₊ z`.
pub fn group_soft_threshold(z: &[f64], t: f64) -> Vec<f64> {
    let nz = norm2(z);
    if !t.is_finite() || nz <= t {
        return vec![0.0; z.len()];
    }
    let s = 1.0 - t / nz;
    z.iter().map(|v| v * s).collect()
}

/// One majorize-minimize step for block `beta_jk` given the current full
/// residual rows of its subtype.
pub fn block_update(
    residual: &[f64],
    block: &DesignBlock,
    n: usize,
    beta_jk: &[f64],
    w_jk: f64,
    lipschitz: f64,
) -> Vec<f64> {
    if !w_jk.is_finite() || lipschitz <= 0.0 {
        return vec![0.0; beta_jk.len()];
    }
    let z: Vec<f64> = (0..block.d)
        .map(|c| {
            let g: f64 = block.column(c).iter().zip(residual).map(|(x, r)| x * r).sum();
            beta_jk[c] + g / (n as f64 * lipschitz)
        })
        .collect();
    group_soft_threshold(&z, w_jk / lipschitz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the largest block change (L2) in a full sweep is below `tol`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Residual is recomputed from scratch this often.
    pub refresh_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 10_000,
            refresh_every: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub sweeps: usize,
    pub converged: bool,
    pub objective: f64,
    pub kkt_max_violation: f64,
    pub kkt_passed: bool,
    pub monotone_violations: usize,
}

#[derive(Debug, Clone)]
pub struct GlassoSolution {
    pub beta: CoefficientSet,
    pub stats: SolveStats,
}

pub fn weighted_penalty(beta: &CoefficientSet, weights: &GroupWeights) -> f64 {
    (0..beta.n_blocks())
        .map(|b| {
            let nb = beta.block_norm(b);
            if nb == 0.0 {
                0.0
            } else {
                weights.0[b] * nb
            }
        })
        .sum()
}

pub fn weighted_objective(design: &StackedDesign, weights: &GroupWeights, beta: &CoefficientSet) -> f64 {
    design.loss(beta) + weighted_penalty(beta, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub max_violation: f64,
    pub passed: bool,
}

/// Stationarity check: `||(1/n)X_bᵀr - w_b β_b/||β_b|| || ≤ slack` on active
/// blocks and `||(1/n)X_bᵀr|| ≤ w_b + slack` on zero blocks.
pub fn kkt_check(design: &StackedDesign, weights: &GroupWeights, beta: &CoefficientSet, slack: f64) -> KktReport {
    let r = design.residual(beta);
    let mut worst: f64 = 0.0;
    for b in 0..beta.n_blocks() {
        let w = weights.0[b];
        let nb = beta.block_norm(b);
        if w.is_infinite() {
            if nb > 0.0 {
                worst = f64::INFINITY;
            }
            continue;
        }
        let g = design.block_gradient(b, &r);
        let v = if nb > 0.0 {
            let beta_b = beta.block(b);
            g.iter()
                .zip(beta_b)
                .map(|(gi, bi)| {
                    let d = gi - w * bi / nb;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        } else {
            (norm2(&g) - w).max(0.0)
        };
        worst = worst.max(v);
    }
    KktReport {
        max_violation: worst,
        passed: worst <= slack,
    }
}

struct Workspace<'a> {
    design: &'a StackedDesign,
    weights: &'a GroupWeights,
    beta: CoefficientSet,
    r: Vec<f64>,
    tol: f64,
}

impl Workspace<'_> {
    /// Visit block `b`: repeated MM steps using the block Gram matrix, then a
    /// single residual update. Returns the L2 change of the block.
    fn visit(&mut self, b: usize) -> f64 {
        let design = self.design;
        let blk = &design.blocks[b];
        let w = self.weights.0[b];
        let d = blk.d;
        let old: Vec<f64> = self.beta.block(b).to_vec();
        if !w.is_finite() || blk.lipschitz <= 0.0 {
            if old.iter().all(|&v| v == 0.0) {
                return 0.0;
            }
            let zero = vec![0.0; d];
            self.apply(b, &old, &zero);
            return norm2(&old);
        }
        let n = design.n as f64;
        let rows = &self.r[blk.rows.clone()];
        let mut grad: Vec<f64> = (0..d)
            .map(|c| blk.column(c).iter().zip(rows).map(|(x, r)| x * r).sum::<f64>() / n)
            .collect();
        let l = blk.lipschitz;
        let mut cur = old.clone();
        let mut z = vec![0.0; d];
        for _ in 0..100 {
            for c in 0..d {
                z[c] = cur[c] + grad[c] / l;
            }
            let next = group_soft_threshold(&z, w / l);
            let mut step = 0.0;
            for a in 0..d {
                let delta = next[a] - cur[a];
                step += delta * delta;
                if delta != 0.0 {
                    for (c, g) in grad.iter_mut().enumerate() {
                        *g -= blk.gram[c * d + a] * delta;
                    }
                }
            }
            cur = next;
            if step.sqrt() < 0.1 * self.tol {
                break;
            }
        }
        let change = old
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if change > 0.0 {
            self.apply(b, &old, &cur);
        }
        change
    }

    fn apply(&mut self, b: usize, old: &[f64], new: &[f64]) {
        let design = self.design;
        let blk = &design.blocks[b];
        for c in 0..blk.d {
            let delta = new[c] - old[c];
            if delta != 0.0 {
                for (ri, x) in self.r[blk.rows.clone()].iter_mut().zip(blk.column(c)) {
                    *ri -= delta * x;
                }
            }
        }
        self.beta.block_mut(b).copy_from_slice(new);
    }

    fn objective(&self) -> f64 {
        self.r.iter().map(|x| x * x).sum::<f64>() / (2.0 * self.design.n as f64)
            + weighted_penalty(&self.beta, self.weights)
    }
}

/// Cyclic group coordinate descent from `beta0` (warm start).
///
/// Alternates full sweeps with sweeps over the currently nonzero blocks. A
/// solve is reported converged only after a full sweep moves no block by more
/// than `tol` and the KKT conditions hold within `10 tol`. On hitting
/// `max_sweeps` the last iterate is returned with `converged = false`.
pub fn solve_weighted_glasso(
    design: &StackedDesign,
    weights: &GroupWeights,
    beta0: &CoefficientSet,
    opts: &SolverOptions,
) -> Result<GlassoSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
    }
    if weights.0.len() != design.blocks.len() || beta0.n_blocks() != design.blocks.len() {
        return Err(Error::Dimension("weights/coefficients do not match design blocks".into()));
    }
    if weights.0.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(Error::InvalidArgument("group weights must be nonnegative".into()));
    }
    let mut beta = beta0.clone();
    for b in 0..beta.n_blocks() {
        if weights.is_locked(b) {
            beta.block_mut(b).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let r = design.residual(&beta);
    let mut ws = Workspace {
        design,
        weights,
        beta,
        r,
        tol: opts.tol,
    };
    let free: Vec<usize> = (0..design.blocks.len()).filter(|&b| !weights.is_locked(b)).collect();
    let mut stats = SolveStats::default();
    let mut prev = ws.objective();
    let mut full = true;
    let slack = 10.0 * opts.tol;
    while stats.sweeps < opts.max_sweeps {
        stats.sweeps += 1;
        let mut max_change: f64 = 0.0;
        if full {
            for &b in &free {
                max_change = max_change.max(ws.visit(b));
            }
        } else {
            for b in ws.beta.active_blocks() {
                if !weights.is_locked(b) {
                    max_change = max_change.max(ws.visit(b));
                }
            }
        }
        if stats.sweeps % opts.refresh_every.max(1) == 0 {
            ws.r = design.residual(&ws.beta);
        }
        let obj = ws.objective();
        if obj > prev + 1e-10 * prev.abs() + 1e-15 {
            stats.monotone_violations += 1;
        }
        prev = obj;
        if max_change < opts.tol {
            if full {
                let kkt = kkt_check(design, weights, &ws.beta, slack);
                stats.kkt_max_violation = kkt.max_violation;
                stats.kkt_passed = kkt.passed;
                if kkt.passed {
                    stats.converged = true;
                    break;
                }
                ws.r = design.residual(&ws.beta);
            }
            full = true;
        } else if full {
            full = false;
        }
    }
    if !stats.converged {
        let kkt = kkt_check(design, weights, &ws.beta, slack);
        stats.kkt_max_violation = kkt.max_violation;
        stats.kkt_passed = kkt.passed;
        log::debug!(
            "group coordinate descent stopped after {} sweeps without converging",
            stats.sweeps
        );
    }
    stats.objective = weighted_objective(design, weights, &ws.beta);
    Ok(GlassoSolution { beta: ws.beta, stats })
}

// ---------------------------------------------------------------------------
// Per-subtype group Lasso comparator

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlassoOptions {
    pub grid_size: usize,
    /// Smallest λ on the grid is `λ_max / ratio`.
    pub ratio: f64,
    pub df_cap: tune::DfCap,
    pub solver: SolverOptions,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self {
            grid_size: 50,
            ratio: 100.0,
            df_cap: tune::DfCap::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Smallest λ for which the group Lasso with weights `λ√d_b` is empty:
/// `max_b ||(1/n)X_bᵀY|| / √d_b`.
pub fn glasso_lambda_max(design: &StackedDesign) -> f64 {
    (0..design.blocks.len())
        .map(|b| norm2(&design.block_gradient(b, &design.y)) / (design.blocks[b].d as f64).sqrt())
        .fold(0.0, f64::max)
}

pub fn glasso_weights(design: &StackedDesign, lambda: f64) -> GroupWeights {
    GroupWeights(design.blocks.iter().map(|b| lambda * (b.d as f64).sqrt()).collect())
}

/// Log-spaced grid from `top` down to `top / ratio`.
pub fn log_grid(top: f64, ratio: f64, size: usize) -> Vec<f64> {
    if size <= 1 {
        return vec![top];
    }
    (0..size)
        .map(|k| top * ratio.powf(-(k as f64) / (size - 1) as f64))
        .collect()
}

/// Group Lasso over a λ grid with BIC selection on one design (normally a
/// single subtype). The path is solved from the largest λ down with warm
/// starts and stops after the first fit beyond the degrees-of-freedom cap.
pub fn fit_glasso_bic(design: &StackedDesign, lambda_grid: Option<&[f64]>, opts: &GlassoOptions) -> Result<TuningReport> {
    let grid: Vec<f64> = match lambda_grid {
        Some([]) => return Err(Error::InvalidArgument("empty lambda grid".into())),
        Some(g) => {
            let mut g = g.to_vec();
            g.sort_by(|a, b| b.total_cmp(a));
            g
        }
        None => log_grid(glasso_lambda_max(design), opts.ratio, opts.grid_size),
    };
    let ls = tune::ls_block_norms(design);
    let cap = opts.df_cap.limit(design.n);
    let mut beta = CoefficientSet::zeros(&design.structure);
    let mut points = Vec::with_capacity(grid.len());
    let mut fits = Vec::with_capacity(grid.len());
    let mut diag = FitDiagnostics::default();
    for &lambda in &grid {
        let w = glasso_weights(design, lambda);
        let sol = solve_weighted_glasso(design, &w, &beta, &opts.solver)?;
        diag.record_inner(&sol.stats);
        beta = sol.beta;
        let rss = design.rss(&beta);
        let df = tune::df_approx(&beta, &ls.norms, &design.structure);
        let selected = beta.selected_pairs(&design.structure);
        points.push(TuningPoint {
            gamma: None,
            lambda,
            bic: tune::bic(rss, design.n, df),
            df,
            rss,
            n_selected: selected.len(),
            converged: sol.stats.converged,
            eligible: df <= cap,
        });
        fits.push(FitResult {
            method: FitMethod::GroupLasso { lambda },
            block_norms: crate::bridge::block_norms(&beta, &design.structure),
            selected,
            objective_trace: vec![sol.stats.objective],
            converged: sol.stats.converged,
            outer_iterations: 1,
            diagnostics: FitDiagnostics::default(),
            beta: beta.clone(),
        });
        if df > cap {
            break;
        }
    }
    let best = tune::argmin_bic(&points);
    let mut best_fit = fits.swap_remove(best);
    best_fit.diagnostics = diag.clone();
    Ok(TuningReport {
        points,
        best,
        per_gamma: Vec::new(),
        fits: vec![best_fit],
        diagnostics: diag,
        ls_ridge_blocks: ls.ridge.iter().filter(|&&r| r).count(),
    })
}

/// The meta-analysis comparator: group Lasso with BIC on each subtype
/// separately, selected genes combined across subtypes.
pub fn fit_glasso_per_subtype(
    ms: &MultiStudy,
    pca: PcaMode,
    variance_fraction: f64,
    opts: &GlassoOptions,
) -> Result<Vec<TuningReport>> {
    (0..ms.n_subtypes())
        .map(|m| {
            let single = ms.single_subtype(m)?;
            let design = build_stacked(&single, pca, variance_fraction)?;
            fit_glasso_bic(&design, None, opts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_examples() {
        // ||z|| = 5, threshold 2.5 → half of z.
        assert_eq!(group_soft_threshold(&[3.0, 4.0], 2.5), vec![1.5, 2.0]);
        assert_eq!(group_soft_threshold(&[3.0, 4.0], 0.0), vec![3.0, 4.0]);
        // ||z|| = 2L with w = 3L → zero.
        let l = 0.7;
        let z = [2.0 * l, 0.0];
        assert_eq!(group_soft_threshold(&z, 3.0 * l / l), vec![0.0, 0.0]);
        assert_eq!(group_soft_threshold(&[1.0, 1.0], f64::INFINITY), vec![0.0, 0.0]);
    }

    /// Grid search of `L/2 ||β - z||² + w ||β||` over a 2-d lattice.
    #[test]
    fn soft_threshold_matches_grid_search() {
        let (z, w, l) = ([3.0, 4.0], 2.5, 1.0);
        let closed = group_soft_threshold(&z, w / l);
        let f = |b0: f64, b1: f64| 0.5 * l * ((b0 - z[0]).powi(2) + (b1 - z[1]).powi(2)) + w * (b0 * b0 + b1 * b1).sqrt();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let h = 0.005;
        for i in 0..=800 {
            for j in 0..=800 {
                let (b0, b1) = (i as f64 * h, j as f64 * h);
                let v = f(b0, b1);
                if v < best.0 {
                    best = (v, b0, b1);
                }
            }
        }
        assert!((best.1 - closed[0]).abs() <= h && (best.2 - closed[1]).abs() <= h);
        assert!(f(closed[0], closed[1]) <= best.0 + 1e-12);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 100.0, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 2.0);
        assert!((g[4] - 0.02).abs() < 1e-15);
        assert_eq!(log_grid(3.0, 100.0, 1), vec![3.0]);
    }
}
