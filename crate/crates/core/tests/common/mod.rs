#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use subtype_bridge::cohort::{GeneStructure, MultiStudy, SubtypeCohort};
use subtype_bridge::kmw::{build_stacked, PcaMode, StackedDesign};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random study with `sizes[j][k]` SNPs for gene `j` in subtype `k` and
/// `n[k]` subjects. The first gene carries signal in every subtype.
pub fn random_study(rng: &mut ChaCha8Rng, sizes: &[Vec<usize>], n: &[usize], censor_p: f64) -> MultiStudy {
    let m = n.len();
    let genes: Vec<String> = (0..sizes.len()).map(|j| format!("g{j}")).collect();
    let subtypes: Vec<String> = (0..m).map(|k| format!("s{k}")).collect();
    let mut entries = Vec::new();
    for (j, row) in sizes.iter().enumerate() {
        for (k, &d) in row.iter().enumerate() {
            if d > 0 {
                entries.push((j, k, (0..d).map(|i| format!("g{j}_{i}")).collect()));
            }
        }
    }
    let structure = GeneStructure::new(genes, subtypes, entries).unwrap();
    let cohorts = (0..m)
        .map(|k| {
            let width = structure.subtype_width(k);
            let x = Array2::from_shape_simple_fn((n[k], width), || rng.gen_range(0..3) as f64);
            let first = structure.find_block(0, k).map(|b| structure.blocks()[b].cols.clone());
            let mut time = Vec::with_capacity(n[k]);
            let mut event = Vec::with_capacity(n[k]);
            for i in 0..n[k] {
                let mut eta = 0.5;
                if let Some(cols) = &first {
                    for c in cols.clone() {
                        eta += 0.4 * x[[i, c]];
                    }
                }
                let eps: f64 = rng.sample(StandardNormal);
                let t = eta + 0.5 * eps;
                let censored = rng.gen_bool(censor_p);
                let t = if censored { t - rng.gen_range(0.0..1.0) } else { t };
                time.push(t.exp());
                event.push(!censored);
            }
            // Keep at least one event so the weights are not all zero.
            if !event.iter().any(|&e| e) {
                event[0] = true;
            }
            let ids = (0..n[k]).map(|i| format!("s{k}_{i}")).collect();
            SubtypeCohort::new(format!("s{k}"), ids, time, event, x).unwrap()
        })
        .collect();
    MultiStudy::new(cohorts, structure).unwrap()
}

pub fn stacked(ms: &MultiStudy) -> StackedDesign {
    build_stacked(ms, PcaMode::Off, 0.9).unwrap()
}

/// The stacked design as a dense `n x dim` matrix in coefficient order.
pub fn dense(design: &StackedDesign) -> (DMatrix<f64>, DVector<f64>) {
    let dim = design.structure.dim();
    let mut x = DMatrix::zeros(design.n, dim);
    for (b, blk) in design.blocks.iter().enumerate() {
        let off = design.structure.blocks()[b].coef.start;
        for c in 0..blk.d {
            for (i, v) in blk.rows.clone().zip(blk.column(c)) {
                x[(i, off + c)] = *v;
            }
        }
    }
    (x, DVector::from_vec(design.y.clone()))
}

/// Kaplan–Meier estimate of the distribution function, as the jump at
/// each distinct event time, via the product-limit formula.
pub fn km_jumps(t: &[f64], e: &[bool]) -> Vec<(f64, f64)> {
    let mut times: Vec<f64> = t.iter().zip(e).filter(|(_, &ev)| ev).map(|(&x, _)| x).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    let mut out = Vec::new();
    for &tt in &times {
        let at_risk = t.iter().filter(|&&x| x >= tt).count() as f64;
        let d = t.iter().zip(e).filter(|(&x, &ev)| ev && x == tt).count() as f64;
        let next = s * (1.0 - d / at_risk);
        out.push((tt, s - next));
        s = next;
    }
    out
}

/// Random `(gene, subtype)` sizes in `1..=max_d` for a small instance.
pub fn random_sizes(rng: &mut ChaCha8Rng, genes: usize, subtypes: usize, max_d: usize) -> Vec<Vec<usize>> {
    (0..genes)
        .map(|_| (0..subtypes).map(|_| rng.gen_range(1..=max_d)).collect())
        .collect()
}

pub fn glasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, groups: &[std::ops::Range<usize>], w: &[f64], beta: &DVector<f64>) -> f64 {
    let r = y - x * beta;
    let pen: f64 = groups
        .iter()
        .zip(w)
        .map(|(g, wi)| wi * beta.rows(g.start, g.len()).norm())
        .sum();
    r.norm_squared() / (2.0 * x.nrows() as f64) + pen
}

/// Accelerated proximal gradient on the dense problem, run to stagnation.
pub fn glasso_fista(x: &DMatrix<f64>, y: &DVector<f64>, groups: &[std::ops::Range<usize>], w: &[f64]) -> DVector<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let gram = x.transpose() * x / n;
    let l = gram.symmetric_eigenvalues().max() * (1.0 + 1e-12);
    let xty = x.transpose() * y / n;
    let mut beta = DVector::zeros(p);
    let mut z = beta.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad = &gram * &z - &xty;
        let mut next = &z - grad / l;
        for (g, wi) in groups.iter().zip(w) {
            let mut blk = next.rows_mut(g.start, g.len());
            let nb = blk.norm();
            let s = if nb <= wi / l { 0.0 } else { 1.0 - wi / (l * nb) };
            blk *= s;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &beta) * ((t - 1.0) / t_next);
        let moved = (&next - &beta).norm();
        beta = next;
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    beta
}

/// Dense composite bridge objective with `c_j = M_j^{1-γ}`.
pub struct BridgeProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Per gene: the coefficient ranges of its blocks.
    pub genes: Vec<Vec<std::ops::Range<usize>>>,
    pub gamma: f64,
    pub lambda: f64,
}

impl BridgeProblem {
    pub fn from_design(design: &StackedDesign, gamma: f64, lambda: f64) -> Self {
        let (x, y) = dense(design);
        let s = &design.structure;
        let genes = (0..s.n_genes())
            .map(|j| s.gene_block_range(j).map(|b| s.blocks()[b].coef.clone()).collect())
            .collect();
        Self { x, y, genes, gamma, lambda }
    }

    fn gene_sum(&self, j: usize, beta: &DVector<f64>) -> f64 {
        self.genes[j]
            .iter()
            .map(|g| (g.len() as f64).sqrt() * beta.rows(g.start, g.len()).norm())
            .sum()
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let r = &self.y - &self.x * beta;
        let mut pen = 0.0;
        for j in 0..self.genes.len() {
            let a = self.gene_sum(j, beta);
            if a > 0.0 {
                let c = (self.genes[j].len() as f64).powf(1.0 - self.gamma);
                pen += c * a.powf(self.gamma);
            }
        }
        r.norm_squared() / (2.0 * self.x.nrows() as f64) + self.lambda * pen
    }

    /// Gradient at a point where every block inside `support` is nonzero and
    /// every block outside is zero; entries outside the support are zero.
    fn gradient(&self, beta: &DVector<f64>, support: &[bool]) -> DVector<f64> {
        let n = self.x.nrows() as f64;
        let mut g = -(self.x.transpose() * (&self.y - &self.x * beta)) / n;
        let mut b = 0;
        for j in 0..self.genes.len() {
            let a = self.gene_sum(j, beta);
            let c = (self.genes[j].len() as f64).powf(1.0 - self.gamma);
            for r in &self.genes[j] {
                if support[b] {
                    let blk = beta.rows(r.start, r.len()).clone_owned();
                    let nb = blk.norm();
                    let coef = self.lambda * c * self.gamma * a.powf(self.gamma - 1.0) * (r.len() as f64).sqrt() / nb;
                    let mut gr = g.rows_mut(r.start, r.len());
                    gr += blk * coef;
                } else {
                    g.rows_mut(r.start, r.len()).fill(0.0);
                }
                b += 1;
            }
        }
        g
    }

    fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.genes.iter().flatten().cloned().collect()
    }

    /// Gradient descent with backtracking inside one support pattern.
    fn descend(&self, mut beta: DVector<f64>, support: &[bool]) -> (DVector<f64>, f64) {
        let ranges = self.ranges();
        let inside = |v: &DVector<f64>| {
            ranges
                .iter()
                .zip(support)
                .all(|(r, &s)| !s || v.rows(r.start, r.len()).norm() > 1e-12)
        };
        let mut f = self.objective(&beta);
        let mut step = 1.0;
        for _ in 0..20_000 {
            let g = self.gradient(&beta, support);
            let gn = g.norm_squared();
            if gn < 1e-24 {
                break;
            }
            let mut accepted = false;
            while step > 1e-14 {
                let cand = &beta - &g * step;
                if inside(&cand) {
                    let fc = self.objective(&cand);
                    if fc <= f - 1e-4 * step * gn {
                        let gain = f - fc;
                        beta = cand;
                        f = fc;
                        accepted = true;
                        step *= 2.0;
                        if gain < 1e-16 {
                            return (beta, f);
                        }
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (beta, f)
    }

    /// Minimum over every support pattern, each searched from several starts.
    /// Minimum objective and the support mask (bit per block) attaining it.
    pub fn enumerate(&self, rng: &mut ChaCha8Rng) -> (f64, u32) {
        let nb = self.ranges().len();
        let mut best = (self.objective(&DVector::zeros(self.x.ncols())), 0u32);
        for mask in 1u32..(1 << nb) {
            let f = self.support_minimum(mask, rng);
            if f < best.0 {
                best = (f, mask);
            }
        }
        best
    }

    /// Smallest objective found with exactly the blocks of `mask` nonzero,
    /// searched from scaled least-squares and random starts.
    pub fn support_minimum(&self, mask: u32, rng: &mut ChaCha8Rng) -> f64 {
        let ranges = self.ranges();
        let p = self.x.ncols();
        let support: Vec<bool> = (0..ranges.len()).map(|b| mask >> b & 1 == 1).collect();
        let cols: Vec<usize> = ranges
            .iter()
            .zip(&support)
            .filter(|(_, &s)| s)
            .flat_map(|(r, _)| r.clone())
            .collect();
        if cols.is_empty() {
            return self.objective(&DVector::zeros(p));
        }
        let xs = self.x.select_columns(&cols);
        let ridge = DMatrix::identity(cols.len(), cols.len()) * 1e-6;
        let ls = (xs.transpose() * &xs + ridge)
            .lu()
            .solve(&(xs.transpose() * &self.y))
            .unwrap_or_else(|| DVector::zeros(cols.len()));
        let mut starts = Vec::new();
        for scale in [1.0, 0.7, 0.4, 0.15, 0.05] {
            let mut v = DVector::zeros(p);
            for (i, &c) in cols.iter().enumerate() {
                v[c] = scale * ls[i];
            }
            starts.push(v);
        }
        for _ in 0..6 {
            let mut v = DVector::zeros(p);
            for &c in &cols {
                v[c] = 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
            starts.push(v);
        }
        let mut best = f64::INFINITY;
        for s in starts {
            let ok = ranges
                .iter()
                .zip(&support)
                .all(|(r, &on)| !on || s.rows(r.start, r.len()).norm() > 1e-12);
            if ok {
                best = best.min(self.descend(s, &support).1);
            }
        }
        best
    }
}

/// Largest |Stute weight - KM jump| over `samples` random censored samples of
/// size `2..=50` with distinct times, and whether every weight vector was
/// nonnegative with total at most one.
pub fn km_oracle(seed: u64, samples: usize) -> (f64, bool) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut valid = true;
    for _ in 0..samples {
        let n = rng.gen_range(2..=50);
        let t: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        let w = subtype_bridge::kmw::km_weights(&t, &e).unwrap();
        valid &= w.weights.iter().all(|&x| x >= 0.0) && w.total() <= 1.0 + 1e-12;
        let jumps = km_jumps(&t, &e);
        for (&idx, &wi) in w.order.iter().zip(&w.weights) {
            let expect = if e[idx] {
                jumps.iter().find(|(tt, _)| *tt == t[idx]).map(|j| j.1).unwrap()
            } else {
                0.0
            };
            worst = worst.max((wi - expect).abs());
        }
    }
    (worst, valid)
}

/// Largest relative gap between the surrogate at the closed-form θ and the
/// composite objective over `cases` random (β, γ, λ).
pub fn surrogate_equivalence(seed: u64, cases: usize) -> f64 {
    use subtype_bridge::bridge::{composite_objective, surrogate_objective, theta_update, BridgeConfig};
    use subtype_bridge::gcd::CoefficientSet;
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let sizes = random_sizes(&mut rng, 4, 3, 3);
        let ms = random_study(&mut rng, &sizes, &[15, 12, 10], 0.3);
        let design = stacked(&ms);
        let s = &design.structure;
        let gamma = [0.3, 0.5, 0.7, 0.9][rng.gen_range(0..4)];
        let lambda = 10f64.powf(rng.gen_range(-3.0..0.0));
        let mut vals: Vec<f64> = (0..s.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for spec in s.blocks() {
            if rng.gen_bool(0.3) {
                vals[spec.coef.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let beta = CoefficientSet::from_values(s, vals).unwrap();
        let cfg = BridgeConfig::new(gamma, lambda, s).unwrap();
        let theta = theta_update(&beta, &cfg, s);
        let sur = surrogate_objective(&beta, &theta, &design, &cfg);
        let direct = BridgeProblem::from_design(&design, gamma, lambda).objective(&DVector::from_vec(beta.values().to_vec()));
        let obj = composite_objective(&beta, &design, &cfg);
        worst = worst.max((sur - direct).abs() / direct.abs()).max((obj - direct).abs() / direct.abs());
    }
    worst
}

pub struct SolverOracleReport {
    /// Largest excess of the bridge fit over the enumeration minimum.
    pub bridge_excess: f64,
    /// Instances where that excess is above `1e-4`.
    pub bridge_misses: usize,
    /// Largest excess over the best point with the fit's own support.
    pub bridge_support_excess: f64,
    /// Largest |objective gap| between group coordinate descent and the
    /// accelerated proximal gradient oracle.
    pub glasso_gap: f64,
    pub instances: usize,
}

/// Solver oracle run on `instances` random 2-gene × 2-subtype problems with
/// 20 subjects per subtype, λ drawn below the empty-model threshold.
pub fn solver_oracle(seed: u64, instances: usize) -> SolverOracleReport {
    use subtype_bridge::bridge::{composite_objective, fit_bridge, BridgeConfig};
    use subtype_bridge::tune::{bridge_lambda_max, TuneOptions};
    use subtype_bridge::gcd::{solve_weighted_glasso, weighted_objective, CoefficientSet, GroupWeights, SolverOptions};
    let mut rng = rng(seed);
    let mut bridge_excess = f64::NEG_INFINITY;
    let mut bridge_misses = 0;
    let mut bridge_support_excess = f64::NEG_INFINITY;
    let mut glasso_gap: f64 = 0.0;
    for _ in 0..instances {
        let sizes = random_sizes(&mut rng, 2, 2, 3);
        let ms = random_study(&mut rng, &sizes, &[20, 20], 0.2);
        let design = stacked(&ms);
        let s = &design.structure;

        let gamma = [0.5, 0.7, 0.9][rng.gen_range(0..3)];
        let (top, _) = bridge_lambda_max(&design, gamma, &TuneOptions::default()).unwrap();
        let lambda = top * rng.gen_range(0.1..0.9);
        let cfg = BridgeConfig::new(gamma, lambda, s).unwrap();
        let fit = fit_bridge(&design, &cfg).unwrap();
        let problem = BridgeProblem::from_design(&design, gamma, lambda);
        let ours = problem.objective(&DVector::from_vec(fit.beta.values().to_vec()));
        assert!((ours - composite_objective(&fit.beta, &design, &cfg)).abs() < 1e-12 * ours.abs().max(1.0));
        let (oracle, _) = problem.enumerate(&mut rng);
        let mask: u32 = (0..fit.beta.n_blocks())
            .filter(|&b| fit.beta.block_norm(b) > 0.0)
            .map(|b| 1 << b)
            .sum();
        let own = problem.support_minimum(mask, &mut rng);
        bridge_excess = bridge_excess.max(ours - oracle);
        bridge_support_excess = bridge_support_excess.max(ours - own);
        if ours > oracle + 1e-4 {
            bridge_misses += 1;
        }

        let top = subtype_bridge::gcd::glasso_lambda_max(&design);
        let w: Vec<f64> = s
            .blocks()
            .iter()
            .map(|b| top * rng.gen_range(0.05..0.8) * (b.size() as f64).sqrt())
            .collect();
        let groups: Vec<_> = s.blocks().iter().map(|b| b.coef.clone()).collect();
        let opts = SolverOptions { tol: 1e-10, ..Default::default() };
        let sol = solve_weighted_glasso(&design, &GroupWeights(w.clone()), &CoefficientSet::zeros(s), &opts).unwrap();
        let (x, y) = dense(&design);
        let fista = glasso_fista(&x, &y, &groups, &w);
        let reference = glasso_objective(&x, &y, &groups, &w, &fista);
        let ours = weighted_objective(&design, &GroupWeights(w), &sol.beta);
        glasso_gap = glasso_gap.max((ours - reference).abs());
    }
    SolverOracleReport {
        bridge_excess,
        bridge_misses,
        bridge_support_excess,
        glasso_gap,
        instances,
    }
}
