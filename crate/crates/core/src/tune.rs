//! BIC tuning over (γ, λ) grids.
//!
//! `BIC(λ) = log(||Y - Xβ̂||² / n) + log(n) df / n`, with the degrees of freedom
//! approximated from the estimated block norms relative to per-block least
//! squares norms.
//!
//! With far more SNPs than subjects the residual sum of squares can be driven
//! to zero, so BIC over an unrestricted path keeps falling into saturated
//! models. By default only fits with `df ≤ n / ln n` (a penalty term of at most
//! one log unit) are candidates, and each path is descended only until the
//! first fit beyond that bound.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{fit_bridge, fit_bridge_guided, first_step_lambda_bound, BridgeConfig, BridgeOptions, FitDiagnostics, FitResult};
use crate::cohort::GeneStructure;
use crate::error::{Error, Result};
use crate::gcd::{log_grid, CoefficientSet};
use crate::kmw::StackedDesign;
use crate::linalg::{cholesky_solve, sorted_symmetric_eigen};

/// Floor applied to the residual sum of squares inside the log.
pub const RSS_FLOOR: f64 = 1e-12;

/// `Σ I(||β̂_jk|| > 0) + Σ (||β̂_jk|| / ||β̂_jk^LS||)(d_jk - 1)`.
///
/// A zero least-squares norm under a nonzero estimate counts with ratio 1.
pub fn df_approx(beta: &CoefficientSet, ls_norms: &[f64], structure: &GeneStructure) -> f64 {
    structure
        .blocks()
        .iter()
        .enumerate()
        .map(|(b, spec)| {
            let nb = beta.block_norm(b);
            if nb == 0.0 {
                return 0.0;
            }
            let ratio = if ls_norms[b] > 0.0 { nb / ls_norms[b] } else { 1.0 };
            1.0 + ratio * (spec.size() as f64 - 1.0)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsNorms {
    pub norms: Vec<f64>,
    /// Blocks whose Gram matrix was rank deficient and got the ridge fallback.
    pub ridge: Vec<bool>,
}

/// Per-block least-squares norms: each (gene, subtype) block regressed alone on
/// its subtype's weighted, centered response. Rank-deficient blocks get a ridge
/// of `1e-6 · trace / d`.
pub fn ls_block_norms(design: &StackedDesign) -> LsNorms {
    let mut norms = Vec::with_capacity(design.blocks.len());
    let mut ridge = Vec::with_capacity(design.blocks.len());
    for (b, blk) in design.blocks.iter().enumerate() {
        let d = blk.d;
        let gram = DMatrix::from_row_slice(d, d, &blk.gram);
        let rhs = DVector::from_vec(design.block_gradient(b, &design.y));
        let trace: f64 = (0..d).map(|i| blk.gram[i * d + i]).sum();
        if trace <= 0.0 {
            norms.push(0.0);
            ridge.push(true);
            continue;
        }
        let (vals, _) = sorted_symmetric_eigen(gram.clone());
        let deficient = vals[d - 1] <= 1e-10 * vals[0];
        let r = if deficient { 1e-6 * trace / d as f64 } else { 0.0 };
        let sol = cholesky_solve(&gram, &rhs, r)
            .or_else(|| cholesky_solve(&gram, &rhs, 1e-6 * trace / d as f64));
        norms.push(sol.map_or(0.0, |x| x.norm()));
        ridge.push(deficient);
    }
    LsNorms { norms, ridge }
}

pub fn bic(rss: f64, n: usize, df: f64) -> f64 {
    let nf = n as f64;
    (rss.max(RSS_FLOOR) / nf).ln() + nf.ln() * df / nf
}

pub fn bic_of_fit(fit: &FitResult, design: &StackedDesign, df: f64) -> f64 {
    bic(design.rss(&fit.beta), design.n, df)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub gamma: Option<f64>,
    pub lambda: f64,
    pub bic: f64,
    pub df: f64,
    pub rss: f64,
    pub n_selected: usize,
    pub converged: bool,
    /// Whether the fit is a BIC candidate under the degrees-of-freedom cap.
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBest {
    pub gamma: f64,
    pub lambda_max: f64,
    /// Index into `TuningReport::points`.
    pub point: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub points: Vec<TuningPoint>,
    /// Index of the overall BIC minimizer in `points`.
    pub best: usize,
    pub per_gamma: Vec<GammaBest>,
    /// Best fit per γ (same order as `per_gamma`); for the group Lasso a
    /// single entry.
    pub fits: Vec<FitResult>,
    /// Summed over every fit of the run, including λ_max search probes.
    pub diagnostics: FitDiagnostics,
    pub ls_ridge_blocks: usize,
}

impl TuningReport {
    pub fn best_fit(&self) -> &FitResult {
        let best = &self.points[self.best];
        match best.gamma {
            None => &self.fits[0],
            Some(g) => {
                let i = self.per_gamma.iter().position(|p| p.gamma == g).unwrap_or(0);
                &self.fits[i]
            }
        }
    }

    pub fn fit_for_gamma(&self, gamma: f64) -> Option<&FitResult> {
        self.per_gamma
            .iter()
            .position(|p| (p.gamma - gamma).abs() < 1e-12)
            .map(|i| &self.fits[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,lambda,bic,df,rss,n_selected,converged,eligible,best\n");
        for (i, p) in self.points.iter().enumerate() {
            let g = p.gamma.map_or("glasso".to_string(), |g| format!("{g}"));
            out.push_str(&format!(
                "{g},{},{},{},{},{},{},{},{}\n",
                p.lambda,
                p.bic,
                p.df,
                p.rss,
                p.n_selected,
                p.converged,
                p.eligible,
                u8::from(i == self.best)
            ));
        }
        out
    }

    /// Gnuplot-friendly λ vs BIC curves, one blank-line separated block per γ.
    pub fn to_bic_tsv(&self) -> String {
        let mut out = String::from("# gamma\tlambda\tbic\n");
        let mut last: Option<Option<f64>> = None;
        for p in &self.points {
            if last.is_some() && last != Some(p.gamma) {
                out.push_str("\n\n");
            }
            last = Some(p.gamma);
            let g = p.gamma.map_or("glasso".to_string(), |g| format!("{g}"));
            out.push_str(&format!("{g}\t{}\t{}\n", p.lambda, p.bic));
        }
        out
    }
}

/// Index of the smallest BIC among eligible points; ties go to the larger λ.
/// Falls back to every point when none is eligible.
pub fn argmin_bic(points: &[TuningPoint]) -> usize {
    let any = points.iter().any(|p| p.eligible);
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if any && !p.eligible {
            continue;
        }
        best = match best {
            Some(b) => {
                let q = &points[b];
                if p.bic < q.bic || (p.bic == q.bic && p.lambda > q.lambda) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
            None => Some(i),
        };
    }
    best.unwrap_or(0)
}

/// Upper bound on the approximate degrees of freedom of BIC candidates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum DfCap {
    /// Every grid point is a candidate and the whole grid is fitted.
    Unbounded,
    /// `df ≤ n / ln n`.
    #[default]
    NOverLogN,
}

impl DfCap {
    pub fn limit(&self, n: usize) -> f64 {
        match self {
            DfCap::Unbounded => f64::INFINITY,
            DfCap::NOverLogN => {
                let nf = n as f64;
                if n > 1 {
                    nf / nf.ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub gammas: Vec<f64>,
    pub grid_size: usize,
    /// The grid spans `[λ_max / ratio, λ_max]`.
    pub ratio: f64,
    /// Relative precision of the λ_max bisection.
    pub lambda_max_precision: f64,
    /// Explicit λ values; replaces the automatic grid for every γ.
    pub lambda_grid: Option<Vec<f64>>,
    pub df_cap: DfCap,
    pub bridge: BridgeOptions,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            gammas: vec![0.5, 0.7, 0.9],
            grid_size: 50,
            ratio: 100.0,
            lambda_max_precision: 0.01,
            lambda_grid: None,
            df_cap: DfCap::default(),
            bridge: BridgeOptions::default(),
        }
    }
}

/// Smallest λ whose bridge fit is empty, located by bisection on a log scale
/// to relative precision `precision`. Returns the value and the diagnostics of
/// every probe.
pub fn bridge_lambda_max(design: &StackedDesign, gamma: f64, opts: &TuneOptions) -> Result<(f64, FitDiagnostics)> {
    let mut diag = FitDiagnostics::default();
    let probe = |lambda: f64, diag: &mut FitDiagnostics| -> Result<bool> {
        let cfg = BridgeConfig::with_options(gamma, lambda, &design.structure, &opts.bridge)?;
        let fit = fit_bridge(design, &cfg)?;
        diag.merge(&fit.diagnostics);
        Ok(fit.selected.is_empty())
    };
    let mut hi = first_step_lambda_bound(design, gamma);
    if !(hi > 0.0) || !hi.is_finite() {
        // The response is orthogonal to every block: any λ gives the empty model.
        return Ok((f64::MIN_POSITIVE, diag));
    }
    // The bound is exact for the first step; nudge up so the probe is empty.
    hi *= 1.0 + 1e-9;
    let mut lo = hi / 2.0;
    let floor = hi * 1e-8;
    while probe(lo, &mut diag)? {
        hi = lo;
        lo /= 2.0;
        if lo < floor {
            return Ok((hi, diag));
        }
    }
    while hi / lo > 1.0 + opts.lambda_max_precision {
        let mid = (hi * lo).sqrt();
        if probe(mid, &mut diag)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, diag))
}

struct GammaPath {
    gamma: f64,
    lambda_max: f64,
    points: Vec<TuningPoint>,
    best: FitResult,
    diagnostics: FitDiagnostics,
}

/// Descend the λ grid of one γ, stopping after the first fit beyond the cap.
fn gamma_path(design: &StackedDesign, gamma: f64, ls: &LsNorms, cap: f64, opts: &TuneOptions) -> Result<GammaPath> {
    let mut diagnostics = FitDiagnostics::default();
    let (lambda_max, grid) = match &opts.lambda_grid {
        Some(g) => {
            let mut g = g.clone();
            g.sort_by(|a, b| b.total_cmp(a));
            (g[0], g)
        }
        None => {
            let (lm, d) = bridge_lambda_max(design, gamma, opts)?;
            diagnostics.merge(&d);
            (lm, log_grid(lm, opts.ratio, opts.grid_size))
        }
    };
    let mut points: Vec<TuningPoint> = Vec::with_capacity(grid.len());
    let mut best: Option<FitResult> = None;
    let mut guess = CoefficientSet::zeros(&design.structure);
    for &lambda in &grid {
        let cfg = BridgeConfig::with_options(gamma, lambda, &design.structure, &opts.bridge)?;
        let (fit, first) = fit_bridge_guided(design, &cfg, &guess)?;
        guess = first;
        diagnostics.merge(&fit.diagnostics);
        let rss = design.rss(&fit.beta);
        let df = df_approx(&fit.beta, &ls.norms, &design.structure);
        let point = TuningPoint {
            gamma: Some(gamma),
            lambda,
            bic: bic(rss, design.n, df),
            df,
            rss,
            n_selected: fit.selected.len(),
            converged: fit.converged,
            eligible: df <= cap,
        };
        let stop = !point.eligible;
        points.push(point);
        if argmin_bic(&points) == points.len() - 1 {
            best = Some(fit);
        }
        if stop {
            break;
        }
    }
    Ok(GammaPath {
        gamma,
        lambda_max,
        points,
        best: best.expect("grid is non-empty"),
        diagnostics,
    })
}

/// Fit the composite-penalty estimator over the λ grid for each γ and pick
/// the BIC minimizer per γ and overall.
pub fn tune_fit(design: &StackedDesign, opts: &TuneOptions) -> Result<TuningReport> {
    if opts.gammas.is_empty() {
        return Err(Error::InvalidArgument("no gamma values".into()));
    }
    if let Some(g) = opts.gammas.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        return Err(Error::InvalidArgument(format!("gamma {g} not in (0,1)")));
    }
    if opts.grid_size == 0 {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let ls = ls_block_norms(design);
    let cap = opts.df_cap.limit(design.n);
    let paths: Vec<Result<GammaPath>> = opts
        .gammas
        .par_iter()
        .map(|&gamma| gamma_path(design, gamma, &ls, cap, opts))
        .collect();
    let mut points = Vec::new();
    let mut per_gamma = Vec::new();
    let mut fits = Vec::new();
    let mut diagnostics = FitDiagnostics::default();
    for path in paths {
        let path = path?;
        diagnostics.merge(&path.diagnostics);
        let offset = points.len();
        let local = argmin_bic(&path.points);
        points.extend(path.points);
        per_gamma.push(GammaBest {
            gamma: path.gamma,
            lambda_max: path.lambda_max,
            point: offset + local,
        });
        fits.push(path.best);
    }
    let best = argmin_bic(&points);
    Ok(TuningReport {
        points,
        best,
        per_gamma,
        fits,
        diagnostics,
        ls_ridge_blocks: ls.ridge.iter().filter(|&&r| r).count(),
    })
}
