//! Seeded synthetic multi-subtype survival/genotype data.
//!
//! Genotypes come from a latent multivariate normal thresholded at `±c`,
//! `c = Φ⁻¹(0.75)`, so each SNP takes 0/1/2 with probabilities 1/4, 1/2, 1/4.
//! SNPs `i ≠ k` in different genes have latent correlation `0.2^{|i-k|}`
//! (global SNP index distance); within a gene the correlation is AR(ρ) or
//! banded. Log event times follow `0.5 + xᵀβ + σε`; log censoring times are
//! uniform on `[0, u]` with `u` calibrated on a pilot sample so that about
//! 30% of subjects are censored.
//!
//! Replicate `r` of seed `s` draws from ChaCha8 seeded with `s` on stream
//! `r`, so each replicate can be regenerated on its own.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{save_csv, GeneStructure, MultiStudy, SubtypeCohort};
use crate::error::{Error, Result};
use crate::gcd::Pair;

const PILOT_SEED: u64 = 0x5EED_CA11_B4A7_E000;

/// Within-gene latent correlation structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Correlation {
    /// `ρ^{|i-k|}`.
    Ar(f64),
    /// Scenario 1: 0.2/0.1, scenario 2: 0.5/0.25, scenario 3: 0.6/0.33 at
    /// lags 1/2, zero beyond.
    Banded(u8),
}

impl Correlation {
    pub fn within(&self, lag: usize) -> f64 {
        if lag == 0 {
            return 1.0;
        }
        match *self {
            Correlation::Ar(rho) => rho.powi(lag as i32),
            Correlation::Banded(s) => {
                let (a, b) = match s {
                    1 => (0.2, 0.1),
                    2 => (0.5, 0.25),
                    _ => (0.6, 0.33),
                };
                match lag {
                    1 => a,
                    2 => b,
                    _ => 0.0,
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Correlation::Ar(rho) => format!("AR rho={rho}"),
            Correlation::Banded(s) => format!("Banded {s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoeffCase {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sharing {
    /// Three common genes plus one subtype-specific gene per subtype.
    Hetero25,
    /// Two common genes plus two subtype-specific genes per subtype.
    Hetero50,
    Homogeneous,
}

/// A nonzero (gene, subtype) coefficient block. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub gene: usize,
    pub subtype: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Effects {
    Paper { case: CoeffCase, sharing: Sharing },
    Custom(Vec<PlantedEffect>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub subtype_sizes: Vec<usize>,
    pub gene_sizes: Vec<usize>,
    pub correlation: Correlation,
    /// Base of the between-gene latent correlation `base^{|i-k|}`.
    pub between_gene_base: f64,
    pub effects: Effects,
    /// Multiplies every planted coefficient.
    pub effect_scale: f64,
    pub intercept: f64,
    /// Standard deviation of the log-time error.
    pub sigma: f64,
    pub target_censoring: f64,
    pub pilot_size: usize,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self::paper(Correlation::Ar(0.5), CoeffCase::One, Sharing::Hetero25, 0)
    }
}

impl SimDesign {
    /// Three subtypes of 100 subjects, 200 genes of 5 SNPs.
    pub fn paper(correlation: Correlation, case: CoeffCase, sharing: Sharing, seed: u64) -> Self {
        Self {
            subtype_sizes: vec![100; 3],
            gene_sizes: vec![5; 200],
            correlation,
            between_gene_base: 0.2,
            effects: Effects::Paper { case, sharing },
            effect_scale: 1.0,
            intercept: 0.5,
            sigma: 0.5,
            target_censoring: 0.30,
            pilot_size: 100_000,
            seed,
        }
    }

    /// Three subtypes of 139/102/50 subjects and 238 genes carrying 1633 SNPs,
    /// with five strongly associated genes: one shared by all subtypes, two
    /// shared by pairs of subtypes and two specific to a single subtype.
    pub fn nhl_shaped(seed: u64) -> Self {
        let mut gene_sizes = vec![7; 205];
        gene_sizes.extend(vec![6; 33]);
        let eff = |gene: usize, subtype: usize, v: f64| PlantedEffect {
            gene,
            subtype,
            coefficients: vec![v; gene_sizes[gene]],
        };
        let effects = vec![
            eff(0, 0, 0.4),
            eff(0, 1, 0.4),
            eff(0, 2, 0.4),
            eff(1, 0, 0.4),
            eff(1, 1, 0.4),
            eff(2, 0, -0.4),
            eff(3, 1, -0.4),
            eff(4, 0, 0.4),
            eff(4, 2, 0.4),
        ];
        Self {
            subtype_sizes: vec![139, 102, 50],
            gene_sizes,
            correlation: Correlation::Ar(0.5),
            between_gene_base: 0.2,
            effects: Effects::Custom(effects),
            effect_scale: 1.0,
            intercept: 0.5,
            sigma: 0.5,
            target_censoring: 0.30,
            pilot_size: 100_000,
            seed,
        }
    }

    pub fn n_subtypes(&self) -> usize {
        self.subtype_sizes.len()
    }

    pub fn n_snps(&self) -> usize {
        self.gene_sizes.iter().sum()
    }

    pub fn gene_name(j: usize) -> String {
        format!("G{}", j + 1)
    }

    pub fn subtype_name(m: usize) -> String {
        format!("{}", m + 1)
    }

    pub fn snp_name(j: usize, i: usize) -> String {
        format!("G{}_S{}", j + 1, i + 1)
    }

    pub fn structure(&self) -> Result<GeneStructure> {
        let genes = self
            .gene_sizes
            .iter()
            .enumerate()
            .map(|(j, &d)| (Self::gene_name(j), (0..d).map(|i| Self::snp_name(j, i)).collect()))
            .collect();
        GeneStructure::uniform(genes, (0..self.n_subtypes()).map(Self::subtype_name).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.subtype_sizes.is_empty() || self.subtype_sizes.contains(&0) {
            return Err(Error::InvalidArgument("every subtype needs subjects".into()));
        }
        if self.gene_sizes.is_empty() || self.gene_sizes.contains(&0) {
            return Err(Error::InvalidArgument("every gene needs SNPs".into()));
        }
        if !(self.target_censoring > 0.0 && self.target_censoring < 1.0) {
            return Err(Error::InvalidArgument("target censoring must be in (0,1)".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

const CASE1_A: [f64; 20] = [
    0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1, 0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1,
];
const CASE1_B: [f64; 20] = [
    0.1, 0.1, 0.1, 0.1, 0.1, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1,
];
const CASE2_A: [f64; 20] = [
    0.15, 0.15, 0.15, 0.15, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1,
];
const CASE2_B: [f64; 20] = [
    0.1, 0.1, 0.1, 0.1, 0.1, 0.15, 0.15, 0.15, 0.15, 0.0, 0.15, 0.15, 0.15, 0.15, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1,
];

/// True coefficients and the set of truly associated (gene, subtype) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSet {
    pub effects: Vec<PlantedEffect>,
    pub pairs: BTreeSet<Pair>,
}

impl TruthSet {
    pub fn nonzero_slots(&self) -> usize {
        self.effects
            .iter()
            .map(|e| e.coefficients.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }

    pub fn genes(&self) -> BTreeSet<String> {
        self.pairs.iter().map(|p| p.gene.clone()).collect()
    }
}

/// Susceptibility genes (0-based) of subtype `m` under a sharing scheme.
pub fn susceptibility_genes(sharing: Sharing, m: usize) -> [usize; 4] {
    match sharing {
        Sharing::Hetero25 => [0, 1, 2, 3 + m],
        Sharing::Hetero50 => [0, 1, 2 + 2 * m, 3 + 2 * m],
        Sharing::Homogeneous => [0, 1, 2, 3],
    }
}

pub fn gen_truth(design: &SimDesign) -> Result<TruthSet> {
    let mut effects = match &design.effects {
        Effects::Custom(e) => e.clone(),
        Effects::Paper { case, sharing } => {
            if design.n_subtypes() != 3 {
                return Err(Error::InvalidArgument("paper effects need three subtypes".into()));
            }
            let mut out = Vec::with_capacity(12);
            for m in 0..3 {
                let vec = match (case, m) {
                    (CoeffCase::One, 2) => &CASE1_B,
                    (CoeffCase::One, _) => &CASE1_A,
                    (CoeffCase::Two, 2) => &CASE2_B,
                    (CoeffCase::Two, _) => &CASE2_A,
                };
                for (slot, &gene) in susceptibility_genes(*sharing, m).iter().enumerate() {
                    if design.gene_sizes.get(gene) != Some(&5) {
                        return Err(Error::InvalidArgument(format!(
                            "paper effects need 5 SNPs in gene {}",
                            gene + 1
                        )));
                    }
                    out.push(PlantedEffect {
                        gene,
                        subtype: m,
                        coefficients: vec[slot * 5..slot * 5 + 5].to_vec(),
                    });
                }
            }
            out
        }
    };
    for e in &mut effects {
        if e.gene >= design.gene_sizes.len() || e.subtype >= design.n_subtypes() {
            return Err(Error::InvalidArgument(format!(
                "planted effect at gene {} subtype {} out of range",
                e.gene, e.subtype
            )));
        }
        if e.coefficients.len() != design.gene_sizes[e.gene] {
            return Err(Error::InvalidArgument(format!(
                "planted effect for gene {} has {} coefficients, gene has {} SNPs",
                e.gene,
                e.coefficients.len(),
                design.gene_sizes[e.gene]
            )));
        }
        e.coefficients.iter_mut().for_each(|v| *v *= design.effect_scale);
    }
    effects.sort_by_key(|e| (e.gene, e.subtype));
    let pairs = effects
        .iter()
        .filter(|e| e.coefficients.iter().any(|&v| v != 0.0))
        .map(|e| Pair::new(SimDesign::gene_name(e.gene), SimDesign::subtype_name(e.subtype)))
        .collect();
    Ok(TruthSet { effects, pairs })
}

/// Full latent correlation over all SNPs.
pub fn latent_correlation(design: &SimDesign) -> Array2<f64> {
    latent_correlation_subset(design, &(0..design.n_snps()).collect::<Vec<_>>())
}

fn snp_genes(design: &SimDesign) -> Vec<usize> {
    design
        .gene_sizes
        .iter()
        .enumerate()
        .flat_map(|(j, &d)| std::iter::repeat_n(j, d))
        .collect()
}

fn latent_correlation_subset(design: &SimDesign, idx: &[usize]) -> Array2<f64> {
    let gene = snp_genes(design);
    let p = idx.len();
    let mut r = Array2::zeros((p, p));
    for a in 0..p {
        for b in a..p {
            let (i, k) = (idx[a], idx[b]);
            let lag = k.abs_diff(i);
            let v = if gene[i] == gene[k] {
                design.correlation.within(lag)
            } else {
                design.between_gene_base.powi(lag as i32)
            };
            r[[a, b]] = v;
            r[[b, a]] = v;
        }
    }
    r
}

/// Lower Cholesky factor, adding diagonal jitter from 1e-8 upward if needed.
/// Returns the factor and the jitter used.
pub fn cholesky_with_jitter(r: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let p = r.nrows();
    let base = nalgebra::DMatrix::from_fn(p, p, |i, k| r[[i, k]]);
    let mut jitter = 0.0;
    loop {
        let mut m = base.clone();
        for i in 0..p {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            let l = c.l();
            if jitter > 0.0 {
                log::warn!("latent correlation needed diagonal jitter {jitter:e}");
            }
            return Ok((Array2::from_shape_fn((p, p), |(i, k)| l[(i, k)]), jitter));
        }
        jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
        if jitter > 1e-2 {
            return Err(Error::NotPositiveDefinite(format!(
                "Cholesky failed with jitter up to {:e}",
                jitter / 10.0
            )));
        }
    }
}

pub fn genotype_threshold() -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.75)
}

fn threshold(z: f64, c: f64) -> f64 {
    if z < -c {
        0.0
    } else if z > c {
        2.0
    } else {
        1.0
    }
}

/// `n x p` latent normals with the factor's correlation, thresholded.
fn draw_genotypes(chol: &Array2<f64>, n: usize, rng: &mut ChaCha8Rng, c: f64) -> Array2<f64> {
    let p = chol.nrows();
    let e = Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal));
    let mut z = e.dot(&chol.t());
    z.mapv_inplace(|v| threshold(v, c));
    z
}

/// Everything about a design that does not change across replicates.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub design: SimDesign,
    pub structure: GeneStructure,
    pub truth: TruthSet,
    /// Per-subtype full coefficient vectors over all SNPs.
    pub beta: Vec<Vec<f64>>,
    chol: Array2<f64>,
    pub jitter: f64,
    /// Upper bound of the uniform log-censoring distribution.
    pub censor_upper: f64,
    /// Censoring rate expected under `censor_upper` on the pilot sample.
    pub pilot_censoring: f64,
}

impl SimContext {
    pub fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        let structure = design.structure()?;
        let truth = gen_truth(design)?;
        let p = design.n_snps();
        let mut offsets = vec![0; design.gene_sizes.len()];
        for j in 1..offsets.len() {
            offsets[j] = offsets[j - 1] + design.gene_sizes[j - 1];
        }
        let mut beta = vec![vec![0.0; p]; design.n_subtypes()];
        for e in &truth.effects {
            let o = offsets[e.gene];
            beta[e.subtype][o..o + e.coefficients.len()].copy_from_slice(&e.coefficients);
        }
        let (chol, jitter) = cholesky_with_jitter(&latent_correlation(design))?;
        let (censor_upper, pilot_censoring) = calibrate_censoring(design, &beta)?;
        Ok(Self {
            design: design.clone(),
            structure,
            truth,
            beta,
            chol,
            jitter,
            censor_upper,
            pilot_censoring,
        })
    }

    fn rng(&self, replicate: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.design.seed);
        rng.set_stream(replicate);
        rng
    }

    /// Per-subtype genotype matrices for one replicate.
    pub fn gen_genotypes(&self, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
        let c = genotype_threshold();
        self.design
            .subtype_sizes
            .iter()
            .map(|&n| draw_genotypes(&self.chol, n, rng, c))
            .collect()
    }

    /// Per-subtype `(log observed time, event)`.
    pub fn gen_survival(&self, genotypes: &[Array2<f64>], rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, Vec<bool>)> {
        let d = &self.design;
        genotypes
            .iter()
            .enumerate()
            .map(|(m, x)| {
                let mut y = Vec::with_capacity(x.nrows());
                let mut ev = Vec::with_capacity(x.nrows());
                for row in x.rows() {
                    let eta = d.intercept + row.iter().zip(&self.beta[m]).map(|(a, b)| a * b).sum::<f64>();
                    let eps: f64 = rng.sample(StandardNormal);
                    let log_t = eta + d.sigma * eps;
                    let log_c = rng.gen_range(0.0..self.censor_upper);
                    y.push(log_t.min(log_c));
                    ev.push(log_t <= log_c);
                }
                (y, ev)
            })
            .collect()
    }

    /// Replicate `r`: a complete study plus its truth.
    pub fn replicate(&self, r: u64) -> Result<(MultiStudy, TruthSet)> {
        let mut rng = self.rng(r);
        let genotypes = self.gen_genotypes(&mut rng);
        let surv = self.gen_survival(&genotypes, &mut rng);
        let mut cohorts = Vec::with_capacity(genotypes.len());
        for (m, (x, (y, ev))) in genotypes.into_iter().zip(surv).enumerate() {
            let n = x.nrows();
            let ids = (0..n).map(|i| format!("r{r}_s{}_{}", m + 1, i + 1)).collect();
            let time = y.iter().map(|v| v.exp()).collect();
            cohorts.push(SubtypeCohort::new(SimDesign::subtype_name(m), ids, time, ev, x)?);
        }
        Ok((MultiStudy::new(cohorts, self.structure.clone())?, self.truth.clone()))
    }
}

/// Choose `u` so that the pooled expected censoring rate on a pilot sample
/// matches the target. Only SNPs of associated genes are simulated for the
/// pilot, from the exact marginal of the latent distribution.
pub fn calibrate_censoring(design: &SimDesign, beta: &[Vec<f64>]) -> Result<(f64, f64)> {
    let p = design.n_snps();
    let idx: Vec<usize> = (0..p).filter(|&i| beta.iter().any(|b| b[i] != 0.0)).collect();
    let c = genotype_threshold();
    let mut rng = ChaCha8Rng::seed_from_u64(PILOT_SEED);
    let total_n: usize = design.subtype_sizes.iter().sum();
    let mut t = Vec::with_capacity(design.pilot_size);
    let chol = if idx.is_empty() {
        None
    } else {
        Some(cholesky_with_jitter(&latent_correlation_subset(design, &idx))?.0)
    };
    for (m, &nm) in design.subtype_sizes.iter().enumerate() {
        let draws = (design.pilot_size * nm).div_ceil(total_n);
        let coef: Vec<f64> = idx.iter().map(|&i| beta[m][i]).collect();
        let x = match &chol {
            Some(l) => draw_genotypes(l, draws, &mut rng, c),
            None => Array2::zeros((draws, 0)),
        };
        for row in x.rows() {
            let eta = design.intercept + row.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
            let eps: f64 = rng.sample(StandardNormal);
            t.push(eta + design.sigma * eps);
        }
    }
    let rate = |u: f64| -> f64 {
        t.iter().map(|&x| if x <= 0.0 { 0.0 } else { (x / u).min(1.0) }).sum::<f64>() / t.len() as f64
    };
    let target = design.target_censoring;
    let (mut lo, mut hi) = (1e-9, 1e6);
    let (r_lo, r_hi) = (rate(lo), rate(hi));
    if !(r_lo >= target && r_hi <= target) {
        return Err(Error::Calibration {
            target,
            lo_rate: r_hi,
            hi_rate: r_lo,
            u_lo: lo,
            u_hi: hi,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    let u = 0.5 * (lo + hi);
    Ok((u, rate(u)))
}

/// Write a replicate as the CSV triple plus `truth.json`.
pub fn save_replicate(ms: &MultiStudy, truth: &TruthSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    save_csv(ms, &dir.join("genotype.csv"), &dir.join("survival.csv"), &dir.join("gene_map.csv"))?;
    let json = serde_json::to_string_pretty(truth)?;
    std::fs::write(dir.join("truth.json"), json).map_err(|source| Error::Io {
        path: dir.join("truth.json"),
        source,
    })
}
