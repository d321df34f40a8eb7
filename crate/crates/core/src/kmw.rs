//! Kaplan–Meier (Stute) weighting and assembly of the stacked least-squares
//! problem.
//!
//! For subtype `m` with `n_m` subjects sorted by observed time, the weight of
//! the `i`-th order statistic is the jump of the Kaplan–Meier distribution
//! estimate at that point. Responses and covariates are centered at their
//! weighted means and multiplied by `sqrt(ω_i)`, which absorbs the intercept.
//! Each subtype is then rescaled by `sqrt(n / n_m)` and the subtypes are
//! stacked block-diagonally so that
//!
//! ```text
//! (1/2n) ||Y - Xβ||² = Σ_m (1/2n_m) ||Y_ω^m - X_ω^m β^m||²
//! ```

use std::ops::Range;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cohort::{GeneStructure, MultiStudy, SubtypeCohort};
use crate::error::{Error, Result};
use crate::gcd::CoefficientSet;
use crate::linalg::{power_iteration, sorted_symmetric_eigen};

/// Relative eigenvalue floor below which a gene block is considered unstable
/// and reduced by PCA in [`PcaMode::Auto`].
pub const PCA_EIGEN_TRIGGER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmWeights {
    /// `order[i]` is the input index of the `i`-th smallest observed time.
    pub order: Vec<usize>,
    /// Weight of the `i`-th order statistic.
    pub weights: Vec<f64>,
}

impl KmWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Stute weights. Ties in time put events before censored observations;
/// remaining ties keep input order.
pub fn km_weights(log_time: &[f64], event: &[bool]) -> Result<KmWeights> {
    let n = log_time.len();
    if n == 0 {
        return Err(Error::Empty("km_weights: no observations".into()));
    }
    if event.len() != n {
        return Err(Error::Dimension(format!(
            "km_weights: {} times, {} event flags",
            n,
            event.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        log_time[a]
            .total_cmp(&log_time[b])
            .then(event[b].cmp(&event[a]))
            .then(a.cmp(&b))
    });
    let nf = n as f64;
    let mut weights = Vec::with_capacity(n);
    // Running product of ((n - j) / (n - j + 1))^{δ_(j)} over j < i (1-based).
    let mut survive = 1.0;
    for (i0, &idx) in order.iter().enumerate() {
        let i = (i0 + 1) as f64;
        let w = if event[idx] { survive / (nf - i + 1.0) } else { 0.0 };
        weights.push(w);
        if event[idx] {
            survive *= (nf - i) / (nf - i + 1.0);
        }
    }
    Ok(KmWeights { order, weights })
}

/// A subtype's weighted, centered data in sorted (Kaplan–Meier) order.
#[derive(Debug, Clone)]
pub struct WeightedCohort {
    pub y: Vec<f64>,
    pub x: Array2<f64>,
    pub y_mean: f64,
    pub x_mean: Vec<f64>,
    pub weights: KmWeights,
}

pub fn center_and_weight(cohort: &SubtypeCohort, w: &KmWeights) -> Result<WeightedCohort> {
    let n = cohort.n();
    if w.weights.len() != n {
        return Err(Error::Dimension("weights do not match cohort size".into()));
    }
    let total = w.total();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights(cohort.label.clone()));
    }
    let p = cohort.genotype.ncols();
    let mut y_mean = 0.0;
    let mut x_mean = vec![0.0; p];
    for (&idx, &wi) in w.order.iter().zip(&w.weights) {
        if wi == 0.0 {
            continue;
        }
        y_mean += wi * cohort.log_time[idx];
        for (c, m) in x_mean.iter_mut().enumerate() {
            *m += wi * cohort.genotype[[idx, c]];
        }
    }
    y_mean /= total;
    x_mean.iter_mut().for_each(|m| *m /= total);

    let mut y = vec![0.0; n];
    let mut x = Array2::zeros((n, p));
    for (i, (&idx, &wi)) in w.order.iter().zip(&w.weights).enumerate() {
        if wi == 0.0 {
            continue;
        }
        let s = wi.sqrt();
        y[i] = s * (cohort.log_time[idx] - y_mean);
        for c in 0..p {
            x[[i, c]] = s * (cohort.genotype[[idx, c]] - x_mean[c]);
        }
    }
    Ok(WeightedCohort {
        y,
        x,
        y_mean,
        x_mean,
        weights: w.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct Pca {
    pub scores: Array2<f64>,
    /// `d x k` loadings; scores = block · loadings.
    pub loadings: Array2<f64>,
    /// Eigenvalues of the block cross-product, decreasing.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }
}

/// Minimal number of leading principal components explaining at least
/// `variance_fraction` of the total variation of a column-centered block.
pub fn pca_within_gene(block: ArrayView2<f64>, variance_fraction: f64) -> Result<Pca> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance fraction {variance_fraction} not in (0,1]"
        )));
    }
    let d = block.ncols();
    let cross = cross_product(block);
    let (values, vectors) = sorted_symmetric_eigen(cross);
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let target = variance_fraction * total - 1e-10 * total;
    let mut k = 0;
    let mut cum = 0.0;
    while k < d {
        cum += values[k];
        k += 1;
        if cum >= target {
            break;
        }
    }
    let mut loadings = Array2::zeros((d, k));
    for c in 0..k {
        for r in 0..d {
            loadings[[r, c]] = vectors[(r, c)];
        }
    }
    let scores = block.dot(&loadings);
    Ok(Pca {
        scores,
        loadings,
        eigenvalues: values,
    })
}

fn cross_product(block: ArrayView2<f64>) -> DMatrix<f64> {
    let g = block.t().dot(&block);
    let d = g.nrows();
    DMatrix::from_fn(d, d, |r, c| g[[r, c]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PcaMode {
    Off,
    /// Reduce only blocks whose smallest covariance eigenvalue falls below
    /// [`PCA_EIGEN_TRIGGER`] times the largest.
    #[default]
    Auto,
    Always,
}

/// One (gene, subtype) column group of the stacked design. Only the owning
/// subtype's rows are stored; every other row of the column group is zero.
#[derive(Debug, Clone)]
pub struct DesignBlock {
    pub subtype: usize,
    /// Rows of the stacked response this block touches.
    pub rows: Range<usize>,
    pub d: usize,
    /// Column-major `rows.len() x d`.
    pub data: Vec<f64>,
    /// Row-major `d x d` block Gram matrix divided by `n`.
    pub gram: Vec<f64>,
    /// Upper bound on the largest eigenvalue of `gram`.
    pub lipschitz: f64,
    /// Present when the block holds principal-component scores:
    /// `raw_d x d` loadings mapping component coefficients back to SNPs.
    pub loadings: Option<Array2<f64>>,
}

impl DesignBlock {
    pub fn column(&self, c: usize) -> &[f64] {
        let r = self.rows.len();
        &self.data[c * r..(c + 1) * r]
    }

    fn from_columns(subtype: usize, rows: Range<usize>, cols: Array2<f64>, n: usize, loadings: Option<Array2<f64>>) -> Self {
        let (nr, d) = cols.dim();
        let mut data = Vec::with_capacity(nr * d);
        for c in 0..d {
            data.extend(cols.column(c).iter());
        }
        let mut gram = vec![0.0; d * d];
        for a in 0..d {
            for b in a..d {
                let v: f64 = data[a * nr..(a + 1) * nr]
                    .iter()
                    .zip(&data[b * nr..(b + 1) * nr])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / n as f64;
                gram[a * d + b] = v;
                gram[b * d + a] = v;
            }
        }
        let lipschitz = power_iteration(&gram, d, 1e-10, 1000) * (1.0 + 1e-9);
        Self {
            subtype,
            rows,
            d,
            data,
            gram,
            lipschitz,
            loadings,
        }
    }
}

/// The stacked, weighted, block-diagonal regression problem.
#[derive(Debug, Clone)]
pub struct StackedDesign {
    pub n: usize,
    pub y: Vec<f64>,
    pub blocks: Vec<DesignBlock>,
    /// Block layout of the regression (reduced sizes where PCA applied).
    pub structure: GeneStructure,
    /// Block layout of the original SNP columns.
    pub source: GeneStructure,
    pub subtype_rows: Vec<Range<usize>>,
    pub subtype_n: Vec<usize>,
    /// Weighted means of the raw genotype columns, per subtype.
    pub x_means: Vec<Vec<f64>>,
    pub y_means: Vec<f64>,
    /// Kaplan–Meier sort order per subtype.
    pub orders: Vec<Vec<usize>>,
}

impl StackedDesign {
    /// Full residual `Y - Xβ`.
    pub fn residual(&self, beta: &CoefficientSet) -> Vec<f64> {
        let mut r = self.y.clone();
        for (b, blk) in self.blocks.iter().enumerate() {
            let coef = beta.block(b);
            for (c, &v) in coef.iter().enumerate() {
                if v != 0.0 {
                    for (ri, x) in r[blk.rows.clone()].iter_mut().zip(blk.column(c)) {
                        *ri -= v * x;
                    }
                }
            }
        }
        r
    }

    /// `(1/2n) ||Y - Xβ||²`.
    pub fn loss(&self, beta: &CoefficientSet) -> f64 {
        let r = self.residual(beta);
        r.iter().map(|x| x * x).sum::<f64>() / (2.0 * self.n as f64)
    }

    pub fn rss(&self, beta: &CoefficientSet) -> f64 {
        self.residual(beta).iter().map(|x| x * x).sum()
    }

    /// `(1/n) X_bᵀ r` for block `b`, with `r` a full-length residual.
    pub fn block_gradient(&self, b: usize, r: &[f64]) -> Vec<f64> {
        let blk = &self.blocks[b];
        let rr = &r[blk.rows.clone()];
        (0..blk.d)
            .map(|c| blk.column(c).iter().zip(rr).map(|(x, y)| x * y).sum::<f64>() / self.n as f64)
            .collect()
    }

    /// Coefficients in the space of the original SNP columns.
    pub fn raw_coefficients(&self, beta: &CoefficientSet) -> CoefficientSet {
        let mut raw = CoefficientSet::zeros(&self.source);
        for (b, blk) in self.blocks.iter().enumerate() {
            let coef = beta.block(b);
            let out = raw.block_mut(b);
            match &blk.loadings {
                None => out.copy_from_slice(coef),
                Some(v) => {
                    for (r, o) in out.iter_mut().enumerate() {
                        *o = (0..blk.d).map(|c| v[[r, c]] * coef[c]).sum();
                    }
                }
            }
        }
        raw
    }

    pub fn predictor(&self, beta: &CoefficientSet) -> Predictor {
        let raw = self.raw_coefficients(beta);
        let mut coef: Vec<Vec<f64>> = (0..self.source.n_subtypes())
            .map(|m| vec![0.0; self.source.subtype_width(m)])
            .collect();
        for (b, spec) in self.source.blocks().iter().enumerate() {
            coef[spec.subtype][spec.cols.clone()].copy_from_slice(raw.block(b));
        }
        let intercept = (0..coef.len())
            .map(|m| {
                self.y_means[m]
                    - self.x_means[m]
                        .iter()
                        .zip(&coef[m])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        Predictor {
            coef,
            x_means: self.x_means.clone(),
            intercept,
        }
    }

    pub fn n_pca_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.loadings.is_some()).count()
    }

    /// Dump `y` and every block column (zeros outside the owning subtype) as CSV.
    pub fn write_debug_csv(&self, path: &std::path::Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut out = String::from("y");
        for (b, spec) in self.structure.blocks().iter().enumerate() {
            for snp in &spec.snp_ids {
                out.push_str(&format!(",{}:{}", self.structure.subtypes()[self.blocks[b].subtype], snp));
            }
        }
        out.push('\n');
        for i in 0..self.n {
            out.push_str(&format!("{}", self.y[i]));
            for blk in &self.blocks {
                for c in 0..blk.d {
                    let v = if blk.rows.contains(&i) { blk.column(c)[i - blk.rows.start] } else { 0.0 };
                    out.push_str(&format!(",{v}"));
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(io)
    }
}

/// Linear predictor on raw genotype rows of each subtype.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub coef: Vec<Vec<f64>>,
    pub x_means: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl Predictor {
    /// `(x - x̄_ω)ᵀ β̂` for a subject of subtype `m`.
    pub fn linear_predictor(&self, m: usize, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.x_means[m])
            .zip(&self.coef[m])
            .map(|((x, mu), b)| (x - mu) * b)
            .sum()
    }

    /// Predicted log survival time, intercept included.
    pub fn predict_log_time(&self, m: usize, x: &[f64]) -> f64 {
        self.intercept[m] + x.iter().zip(&self.coef[m]).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Weight, center, optionally reduce, rescale and stack all subtypes.
pub fn build_stacked(ms: &MultiStudy, pca: PcaMode, variance_fraction: f64) -> Result<StackedDesign> {
    let source = ms.structure.clone();
    let n = ms.n();
    let weighted = ms
        .cohorts
        .iter()
        .map(|c| {
            if c.has_missing() {
                return Err(Error::InvalidArgument(format!(
                    "subtype `{}` still has missing genotypes",
                    c.label
                )));
            }
            let w = km_weights(&c.log_time, &c.event)?;
            center_and_weight(c, &w)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut subtype_rows = Vec::with_capacity(weighted.len());
    let mut start = 0;
    let mut y = Vec::with_capacity(n);
    for (m, wc) in weighted.iter().enumerate() {
        let nm = ms.cohorts[m].n();
        let scale = (n as f64 / nm as f64).sqrt();
        y.extend(wc.y.iter().map(|v| v * scale));
        subtype_rows.push(start..start + nm);
        start += nm;
    }

    let mut blocks = Vec::with_capacity(source.n_blocks());
    let mut entries = Vec::with_capacity(source.n_blocks());
    for spec in source.blocks() {
        let m = spec.subtype;
        let nm = ms.cohorts[m].n();
        let scale = (n as f64 / nm as f64).sqrt();
        let raw = weighted[m]
            .x
            .slice(ndarray::s![.., spec.cols.clone()])
            .to_owned();
        let reduce = match pca {
            PcaMode::Off => false,
            PcaMode::Always => true,
            PcaMode::Auto => spec.size() > 1 && is_unstable(raw.view()),
        };
        let (cols, loadings, snp_ids) = if reduce {
            match pca_within_gene(raw.view(), variance_fraction) {
                Ok(p) => {
                    let k = p.n_components();
                    let ids = (1..=k)
                        .map(|i| format!("{}_PC{i}", source.genes()[spec.gene]))
                        .collect();
                    (p.scores, Some(p.loadings), ids)
                }
                // A constant block carries no information; keep it as is.
                Err(Error::ZeroVariance) => (raw, None, spec.snp_ids.clone()),
                Err(e) => return Err(e),
            }
        } else {
            (raw, None, spec.snp_ids.clone())
        };
        let cols = cols * scale;
        blocks.push(DesignBlock::from_columns(
            m,
            subtype_rows[m].clone(),
            cols,
            n,
            loadings,
        ));
        entries.push((spec.gene, m, snp_ids));
    }
    let structure = GeneStructure::new(source.genes().to_vec(), source.subtypes().to_vec(), entries)?;
    Ok(StackedDesign {
        n,
        y,
        blocks,
        structure,
        source,
        subtype_rows,
        subtype_n: ms.cohorts.iter().map(|c| c.n()).collect(),
        x_means: weighted.iter().map(|w| w.x_mean.clone()).collect(),
        y_means: weighted.iter().map(|w| w.y_mean).collect(),
        orders: weighted.into_iter().map(|w| w.weights.order).collect(),
    })
}

fn is_unstable(block: ArrayView2<f64>) -> bool {
    let (values, _) = sorted_symmetric_eigen(cross_product(block));
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    max > 0.0 && min < PCA_EIGEN_TRIGGER * max
}
