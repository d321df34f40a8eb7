//! Composite bridge / group-Lasso penalization.
//!
//! The objective is
//!
//! ```text
//! (1/2n) ||Y - Xβ||² + λ Σ_j c_j (Σ_k √d_jk ||β_jk||)^γ,    0 < γ < 1.
//! ```
//!
//! It equals the partial minimum over `θ ≥ 0` of the surrogate
//!
//! ```text
//! S(β, θ) = (1/2n) ||Y - Xβ||² + Σ_j θ_j^{1-1/γ} c_j^{1/γ} Σ_k √d_jk ||β_jk|| + τ Σ_j θ_j
//! ```
//!
//! when `λ = τ^{1-γ} γ^{-γ} (1-γ)^{γ-1}`. [`fit_bridge`] alternates the
//! closed-form θ-minimization with a weighted group-Lasso solve in β, so the
//! objective never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::GeneStructure;
use crate::error::{Error, Result};
use crate::gcd::{solve_weighted_glasso, CoefficientSet, GroupWeights, Pair, SolveStats, SolverOptions};
use crate::kmw::StackedDesign;

/// `τ` from `λ`: inverse of `λ = τ^{1-γ} γ^{-γ} (1-γ)^{γ-1}`.
pub fn lambda_to_tau(lambda: f64, gamma: f64) -> f64 {
    (lambda * gamma.powf(gamma) * (1.0 - gamma).powf(1.0 - gamma)).powf(1.0 / (1.0 - gamma))
}

pub fn tau_to_lambda(tau: f64, gamma: f64) -> f64 {
    tau.powf(1.0 - gamma) * gamma.powf(-gamma) * (1.0 - gamma).powf(gamma - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Per-gene constants `c_j = M_j^{1-γ}`.
    pub c: Vec<f64>,
    pub tol_outer: f64,
    pub max_outer: usize,
    pub solver: SolverOptions,
    /// Extra random starts besides the all-ones start; the lowest objective wins.
    pub multi_start: usize,
    pub seed: u64,
}

/// Settings shared by every fit of a tuning run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeOptions {
    pub tol_outer: f64,
    pub max_outer: usize,
    pub solver: SolverOptions,
    pub multi_start: usize,
    pub seed: u64,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            tol_outer: 1e-3,
            max_outer: 500,
            solver: SolverOptions::default(),
            multi_start: 0,
            seed: 0,
        }
    }
}

impl BridgeConfig {
    pub fn new(gamma: f64, lambda: f64, structure: &GeneStructure) -> Result<Self> {
        Self::with_options(gamma, lambda, structure, &BridgeOptions::default())
    }

    pub fn with_options(gamma: f64, lambda: f64, structure: &GeneStructure, opts: &BridgeOptions) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} not in (0,1)")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda {lambda} must be positive")));
        }
        let c = (0..structure.n_genes())
            .map(|j| (structure.subtypes_measuring(j) as f64).powf(1.0 - gamma))
            .collect();
        Ok(Self {
            gamma,
            lambda,
            tau: lambda_to_tau(lambda, gamma),
            c,
            tol_outer: opts.tol_outer,
            max_outer: opts.max_outer,
            solver: opts.solver,
            multi_start: opts.multi_start,
            seed: opts.seed,
        })
    }
}

/// `A_j = Σ_k √d_jk ||β_jk||` per gene.
pub fn gene_norm_sums(beta: &CoefficientSet, structure: &GeneStructure) -> Vec<f64> {
    (0..structure.n_genes())
        .map(|j| {
            structure
                .gene_block_range(j)
                .map(|b| (structure.blocks()[b].size() as f64).sqrt() * beta.block_norm(b))
                .sum()
        })
        .collect()
}

/// Closed-form minimizer of `S(β, ·)`:
/// `θ_j = c_j ((1-γ)/(γτ))^γ A_j^γ`.
pub fn theta_update(beta: &CoefficientSet, config: &BridgeConfig, structure: &GeneStructure) -> Vec<f64> {
    let g = config.gamma;
    let scale = ((1.0 - g) / (g * config.tau)).powf(g);
    gene_norm_sums(beta, structure)
        .into_iter()
        .zip(&config.c)
        .map(|(a, c)| if a == 0.0 { 0.0 } else { c * scale * a.powf(g) })
        .collect()
}

/// `w_jk = θ_j^{1-1/γ} c_j^{1/γ} √d_jk`, with `θ_j = 0` mapped to `+∞`.
pub fn theta_to_group_weights(theta: &[f64], config: &BridgeConfig, structure: &GeneStructure) -> GroupWeights {
    let g = config.gamma;
    let w = structure
        .blocks()
        .iter()
        .map(|blk| {
            let t = theta[blk.gene];
            if t <= 0.0 {
                f64::INFINITY
            } else {
                t.powf(1.0 - 1.0 / g) * config.c[blk.gene].powf(1.0 / g) * (blk.size() as f64).sqrt()
            }
        })
        .collect();
    GroupWeights(w)
}

/// The weights of [`theta_to_group_weights`] at `θ = θ̂(β)`, simplified to
/// `w_jk = γ λ c_j A_j^{γ-1} √d_jk`. Unlike the two-step route through τ this
/// stays finite as γ approaches 1.
pub fn group_weights(beta: &CoefficientSet, config: &BridgeConfig, structure: &GeneStructure) -> GroupWeights {
    let g = config.gamma;
    let a = gene_norm_sums(beta, structure);
    let w = structure
        .blocks()
        .iter()
        .map(|blk| {
            let aj = a[blk.gene];
            if aj <= 0.0 {
                f64::INFINITY
            } else {
                g * config.lambda * config.c[blk.gene] * aj.powf(g - 1.0) * (blk.size() as f64).sqrt()
            }
        })
        .collect();
    GroupWeights(w)
}

/// `λ Σ_j c_j A_j^γ`.
pub fn bridge_penalty(beta: &CoefficientSet, config: &BridgeConfig, structure: &GeneStructure) -> f64 {
    config.lambda
        * gene_norm_sums(beta, structure)
            .into_iter()
            .zip(&config.c)
            .map(|(a, c)| if a == 0.0 { 0.0 } else { c * a.powf(config.gamma) })
            .sum::<f64>()
}

pub fn composite_objective(beta: &CoefficientSet, design: &StackedDesign, config: &BridgeConfig) -> f64 {
    design.loss(beta) + bridge_penalty(beta, config, &design.structure)
}

/// `S(β, θ)`. A gene with `A_j = 0` contributes `τ θ_j`; `θ_j = 0` with
/// `A_j > 0` is infinite.
pub fn surrogate_objective(beta: &CoefficientSet, theta: &[f64], design: &StackedDesign, config: &BridgeConfig) -> f64 {
    let g = config.gamma;
    let mut pen = 0.0;
    for (j, a) in gene_norm_sums(beta, &design.structure).into_iter().enumerate() {
        let t = theta[j];
        if a > 0.0 {
            if t <= 0.0 {
                return f64::INFINITY;
            }
            pen += t.powf(1.0 - 1.0 / g) * config.c[j].powf(1.0 / g) * a;
        }
        pen += config.tau * t;
    }
    design.loss(beta) + pen
}

/// Counters collected while fitting; summed over every fit of a tuning run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub inner_solves: usize,
    pub inner_sweeps: usize,
    pub inner_nonconverged: usize,
    /// Converged inner solves that failed the KKT check.
    pub kkt_failures: usize,
    pub max_kkt_violation: f64,
    pub inner_monotone_violations: usize,
    pub outer_monotone_violations: usize,
    pub outer_nonconverged: usize,
    /// Fits where the empty model had a lower objective than the alternation's
    /// limit and was returned instead.
    pub empty_preferred: usize,
}

impl FitDiagnostics {
    pub fn record_inner(&mut self, s: &SolveStats) {
        self.inner_solves += 1;
        self.inner_sweeps += s.sweeps;
        if !s.converged {
            self.inner_nonconverged += 1;
        } else {
            if !s.kkt_passed {
                self.kkt_failures += 1;
            }
            self.max_kkt_violation = self.max_kkt_violation.max(s.kkt_max_violation);
        }
        self.inner_monotone_violations += s.monotone_violations;
    }

    pub fn merge(&mut self, o: &FitDiagnostics) {
        self.inner_solves += o.inner_solves;
        self.inner_sweeps += o.inner_sweeps;
        self.inner_nonconverged += o.inner_nonconverged;
        self.kkt_failures += o.kkt_failures;
        self.max_kkt_violation = self.max_kkt_violation.max(o.max_kkt_violation);
        self.inner_monotone_violations += o.inner_monotone_violations;
        self.outer_monotone_violations += o.outer_monotone_violations;
        self.outer_nonconverged += o.outer_nonconverged;
        self.empty_preferred += o.empty_preferred;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitMethod {
    Bridge(BridgeConfig),
    GroupLasso { lambda: f64 },
}

/// L2 norm of one (gene, subtype) block estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockNorm {
    pub gene: String,
    pub subtype: String,
    pub norm: f64,
}

pub fn block_norms(beta: &CoefficientSet, structure: &GeneStructure) -> Vec<BlockNorm> {
    structure
        .blocks()
        .iter()
        .enumerate()
        .filter(|(b, _)| beta.block_norm(*b) > 0.0)
        .map(|(b, spec)| BlockNorm {
            gene: structure.genes()[spec.gene].clone(),
            subtype: structure.subtypes()[spec.subtype].clone(),
            norm: beta.block_norm(b),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: FitMethod,
    pub beta: CoefficientSet,
    pub selected: Vec<Pair>,
    pub block_norms: Vec<BlockNorm>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn gamma(&self) -> Option<f64> {
        match &self.method {
            FitMethod::Bridge(c) => Some(c.gamma),
            FitMethod::GroupLasso { .. } => None,
        }
    }

    pub fn lambda(&self) -> f64 {
        match &self.method {
            FitMethod::Bridge(c) => c.lambda,
            FitMethod::GroupLasso { lambda } => *lambda,
        }
    }
}

/// Alternate from `start`. The first β-step is a convex group-Lasso problem
/// solved from `first_guess` (its solution does not depend on the inner
/// starting point); later steps warm-start from the previous iterate, which
/// keeps the outer objective monotone. Also returns the first-step solution.
fn run_from(
    design: &StackedDesign,
    config: &BridgeConfig,
    start: CoefficientSet,
    first_guess: &CoefficientSet,
) -> Result<(FitResult, CoefficientSet)> {
    let structure = &design.structure;
    let mut beta = start;
    let mut first_step = None;
    let mut trace = vec![composite_objective(&beta, design, config)];
    let mut diag = FitDiagnostics::default();
    let mut converged = false;
    let mut iters = 0;
    while iters < config.max_outer {
        iters += 1;
        let weights = group_weights(&beta, config, structure);
        let inner_start = if iters == 1 { first_guess } else { &beta };
        let sol = solve_weighted_glasso(design, &weights, inner_start, &config.solver)?;
        diag.record_inner(&sol.stats);
        if iters == 1 {
            first_step = Some(sol.beta.clone());
        }
        let obj = composite_objective(&sol.beta, design, config);
        let prev = *trace.last().unwrap();
        if obj > prev + 1e-10 * prev.abs() + 1e-15 {
            diag.outer_monotone_violations += 1;
            log::warn!("bridge objective increased: {prev} -> {obj}");
        }
        trace.push(obj);
        let step = sol.beta.distance(&beta);
        beta = sol.beta;
        if step < config.tol_outer {
            converged = true;
            break;
        }
    }
    if !converged {
        diag.outer_nonconverged += 1;
    }
    let fit = FitResult {
        method: FitMethod::Bridge(config.clone()),
        selected: beta.selected_pairs(structure),
        block_norms: block_norms(&beta, structure),
        beta,
        objective_trace: trace,
        converged,
        outer_iterations: iters,
        diagnostics: diag,
    };
    let first = first_step.unwrap_or_else(|| fit.beta.clone());
    Ok((fit, first))
}

/// Alternate θ- and β-updates from the all-ones start until consecutive
/// estimates differ by less than `tol_outer` in L2 norm.
///
/// `β = 0` is a local minimizer for every λ, so the limit of the alternation
/// is compared with it and the empty model is returned when its objective is
/// lower.
pub fn fit_bridge(design: &StackedDesign, config: &BridgeConfig) -> Result<FitResult> {
    let zeros = CoefficientSet::zeros(&design.structure);
    fit_bridge_guided(design, config, &zeros).map(|(fit, _)| fit)
}

/// [`fit_bridge`] with a starting guess for the inner solver of the first
/// β-step, e.g. the first-step solution at a neighbouring λ. The estimate is
/// the same up to solver tolerance; only the work changes. Returns the fit and
/// the first-step solution from the all-ones start.
pub fn fit_bridge_guided(
    design: &StackedDesign,
    config: &BridgeConfig,
    first_guess: &CoefficientSet,
) -> Result<(FitResult, CoefficientSet)> {
    if config.c.len() != design.structure.n_genes() {
        return Err(Error::Dimension("config constants do not match genes".into()));
    }
    if first_guess.n_blocks() != design.blocks.len() {
        return Err(Error::Dimension("first-step guess does not match design blocks".into()));
    }
    let (mut best, first) = run_from(design, config, CoefficientSet::filled(&design.structure, 1.0), first_guess)?;
    if config.multi_start > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..config.multi_start {
            let vals = (0..design.structure.dim()).map(|_| rng.gen_range(0.0..2.0)).collect();
            let start = CoefficientSet::from_values(&design.structure, vals)?;
            let (fit, _) = run_from(design, config, start.clone(), &start)?;
            let mut diag = best.diagnostics.clone();
            diag.merge(&fit.diagnostics);
            if fit.objective_trace.last() < best.objective_trace.last() {
                best = fit;
            }
            best.diagnostics = diag;
        }
    }
    if !best.beta.is_zero() {
        let zeros = CoefficientSet::zeros(&design.structure);
        let empty = design.loss(&zeros);
        if empty < *best.objective_trace.last().unwrap() {
            best.objective_trace.push(empty);
            best.selected.clear();
            best.block_norms = block_norms(&zeros, &design.structure);
            best.beta = zeros;
            best.diagnostics.empty_preferred += 1;
        }
    }
    Ok((best, first))
}

/// Smallest λ for which the first β-step from the all-ones start is already
/// empty. At that start the block weights are `γ λ c_j A_j^{γ-1} √d_jk`.
pub fn first_step_lambda_bound(design: &StackedDesign, gamma: f64) -> f64 {
    let s = &design.structure;
    let ones = CoefficientSet::filled(s, 1.0);
    let a = gene_norm_sums(&ones, s);
    let mut top: f64 = 0.0;
    for (b, spec) in s.blocks().iter().enumerate() {
        let m = s.subtypes_measuring(spec.gene) as f64;
        let c = m.powf(1.0 - gamma);
        let g = crate::linalg::norm2(&design.block_gradient(b, &design.y));
        let denom = gamma * c * a[spec.gene].powf(gamma - 1.0) * (spec.size() as f64).sqrt();
        top = top.max(g / denom);
    }
    top
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_tau_examples() {
        assert!((lambda_to_tau(2.0, 0.5) - 1.0).abs() < 1e-14);
        assert!((lambda_to_tau(4.0, 0.5) - 4.0).abs() < 1e-14);
        assert!((tau_to_lambda(1.0, 0.5) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lambda_tau_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let g: f64 = rng.gen_range(0.05..0.95);
            let tau: f64 = rng.gen_range(1e-3..10.0);
            let back = lambda_to_tau(tau_to_lambda(tau, g), g);
            assert!(((back - tau) / tau).abs() < 1e-14 * 10.0, "{g} {tau} {back}");
        }
    }

    fn one_gene(d: usize, m: usize) -> GeneStructure {
        let snps: Vec<String> = (0..d).map(|i| format!("s{i}")).collect();
        GeneStructure::uniform(vec![("g".into(), snps)], (0..m).map(|k| k.to_string()).collect()).unwrap()
    }

    #[test]
    fn theta_examples() {
        let s = one_gene(1, 1);
        let mut cfg = BridgeConfig::new(0.5, tau_to_lambda(1.0, 0.5), &s).unwrap();
        assert!((cfg.tau - 1.0).abs() < 1e-14);
        let beta = CoefficientSet::filled(&s, 1.0);
        assert!((theta_update(&beta, &cfg, &s)[0] - 1.0).abs() < 1e-14);
        assert_eq!(theta_update(&CoefficientSet::zeros(&s), &cfg, &s), vec![0.0]);
        let two = CoefficientSet::filled(&s, 2.0);
        assert!((theta_update(&two, &cfg, &s)[0] - 2f64.sqrt()).abs() < 1e-14);
        cfg.gamma = 0.3;
        let t1 = theta_update(&beta, &cfg, &s)[0];
        let t2 = theta_update(&two, &cfg, &s)[0];
        assert!((t2 / t1 - 2f64.powf(0.3)).abs() < 1e-13);
    }

    #[test]
    fn weight_examples() {
        let s = one_gene(4, 1);
        let cfg = BridgeConfig::new(0.5, 1.0, &s).unwrap();
        assert_eq!(cfg.c, vec![1.0]);
        assert_eq!(theta_to_group_weights(&[1.0], &cfg, &s).0, vec![2.0]);
        assert_eq!(theta_to_group_weights(&[0.0], &cfg, &s).0, vec![f64::INFINITY]);
        // γ = 0.5: w = θ^{-1} c² √d.
        let s3 = one_gene(4, 3);
        let cfg3 = BridgeConfig::new(0.5, 1.0, &s3).unwrap();
        let c = 3f64.sqrt();
        assert!((cfg3.c[0] - c).abs() < 1e-15);
        let w = theta_to_group_weights(&[0.25], &cfg3, &s3);
        for x in w.0 {
            assert!((x - c * c * 2.0 / 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn config_rejects_out_of_range() {
        let s = one_gene(1, 1);
        assert!(BridgeConfig::new(1.0, 1.0, &s).is_err());
        assert!(BridgeConfig::new(0.0, 1.0, &s).is_err());
        assert!(BridgeConfig::new(0.5, 0.0, &s).is_err());
    }
}
