mod common;

use std::collections::BTreeSet;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use subtype_bridge::bridge::{
    fit_bridge, group_weights, theta_to_group_weights, theta_update, BridgeConfig,
};
use subtype_bridge::cohort::{GeneStructure, MultiStudy, SubtypeCohort};
use subtype_bridge::eval::{logrank_two_group, score_selection};
use subtype_bridge::gcd::{
    glasso_lambda_max, kkt_check, solve_weighted_glasso, weighted_objective, CoefficientSet, GroupWeights, Pair,
    SolverOptions,
};
use subtype_bridge::kmw::{center_and_weight, km_weights};
use subtype_bridge::simgen::TruthSet;
use subtype_bridge::tune::{df_approx, ls_block_norms, tune_fit, TuneOptions};

fn random_beta(rng: &mut rand_chacha::ChaCha8Rng, s: &GeneStructure, zero_p: f64) -> CoefficientSet {
    let mut v: Vec<f64> = (0..s.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for spec in s.blocks() {
        if rng.gen_bool(zero_p) {
            v[spec.coef.clone()].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    CoefficientSet::from_values(s, v).unwrap()
}

fn small_study(seed: u64) -> MultiStudy {
    let mut rng = rng(seed);
    let sizes = random_sizes(&mut rng, 4, 3, 3);
    random_study(&mut rng, &sizes, &[25, 18, 12], 0.3)
}

/// The same data with the gene order reversed.
fn reverse_genes(ms: &MultiStudy) -> MultiStudy {
    let s = &ms.structure;
    let j_max = s.n_genes();
    let genes: Vec<String> = s.genes().iter().rev().cloned().collect();
    let entries = s
        .blocks()
        .iter()
        .map(|b| (j_max - 1 - b.gene, b.subtype, b.snp_ids.clone()))
        .collect();
    let rev = GeneStructure::new(genes, s.subtypes().to_vec(), entries).unwrap();
    let cohorts = ms
        .cohorts
        .iter()
        .enumerate()
        .map(|(m, c)| {
            let cols: Vec<usize> = (0..j_max)
                .rev()
                .filter_map(|j| s.find_block(j, m))
                .flat_map(|b| s.blocks()[b].cols.clone())
                .collect();
            let x = c.genotype.select(ndarray::Axis(1), &cols);
            SubtypeCohort::new(c.label.clone(), c.subject_ids.clone(), c.time.clone(), c.event.clone(), x).unwrap()
        })
        .collect();
    MultiStudy::new(cohorts, rev).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn km_weights_are_a_subprobability(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = rng(seed);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let w = km_weights(&t, &e).unwrap();
        prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
        prop_assert!(w.total() <= 1.0 + 1e-12);
        let mut sorted = w.order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        if e.iter().any(|&x| x) && e[*w.order.last().unwrap()] {
            prop_assert!((w.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stacked_loss_is_sum_of_normalized_subtype_losses(seed in any::<u64>()) {
        let ms = small_study(seed);
        let design = stacked(&ms);
        let s = &ms.structure;
        let mut rng = rng(seed ^ 1);
        let beta = random_beta(&mut rng, s, 0.3);
        let mut total = 0.0;
        for (m, c) in ms.cohorts.iter().enumerate() {
            let w = km_weights(&c.log_time, &c.event).unwrap();
            let wc = center_and_weight(c, &w).unwrap();
            let mut coef = vec![0.0; s.subtype_width(m)];
            for b in s.subtype_blocks(m) {
                coef[s.blocks()[b].cols.clone()].copy_from_slice(beta.block(b));
            }
            let rss: f64 = (0..c.n())
                .map(|i| {
                    let fit: f64 = (0..coef.len()).map(|k| wc.x[[i, k]] * coef[k]).sum();
                    (wc.y[i] - fit).powi(2)
                })
                .sum();
            total += rss / (2.0 * c.n() as f64);
        }
        let stacked_loss = design.loss(&beta);
        prop_assert!((stacked_loss - total).abs() <= 1e-12 * total.abs().max(1e-300), "{stacked_loss} vs {total}");
    }

    #[test]
    fn glasso_solve_is_monotone_and_kkt_certified(seed in any::<u64>(), frac in 0.05f64..0.9) {
        let ms = small_study(seed);
        let design = stacked(&ms);
        let s = &design.structure;
        let lam = glasso_lambda_max(&design) * frac;
        let w = GroupWeights(s.blocks().iter().map(|b| lam * (b.size() as f64).sqrt()).collect());
        let opts = SolverOptions::default();
        let sol = solve_weighted_glasso(&design, &w, &CoefficientSet::zeros(s), &opts).unwrap();
        prop_assert!(sol.stats.converged);
        prop_assert_eq!(sol.stats.monotone_violations, 0);
        prop_assert!(kkt_check(&design, &w, &sol.beta, 10.0 * opts.tol).passed);
    }

    #[test]
    fn glasso_solution_does_not_depend_on_block_order(seed in any::<u64>(), frac in 0.05f64..0.9) {
        let ms = small_study(seed);
        let rev = reverse_genes(&ms);
        let solve = |ms: &MultiStudy| {
            let design = stacked(ms);
            let lam = glasso_lambda_max(&design) * frac;
            let w = GroupWeights(design.structure.blocks().iter().map(|b| lam * (b.size() as f64).sqrt()).collect());
            let opts = SolverOptions { tol: 1e-10, ..Default::default() };
            let sol = solve_weighted_glasso(&design, &w, &CoefficientSet::zeros(&design.structure), &opts).unwrap();
            weighted_objective(&design, &w, &sol.beta)
        };
        let (a, b) = (solve(&ms), solve(&rev));
        prop_assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }

    #[test]
    fn bridge_outer_objective_never_increases(seed in any::<u64>(), gi in 0usize..4, frac in 0.01f64..0.5) {
        let ms = small_study(seed);
        let design = stacked(&ms);
        let gamma = [0.3, 0.5, 0.7, 0.9][gi];
        let lam = subtype_bridge::bridge::first_step_lambda_bound(&design, gamma) * frac;
        let cfg = BridgeConfig::new(gamma, lam, &design.structure).unwrap();
        let fit = fit_bridge(&design, &cfg).unwrap();
        prop_assert_eq!(fit.diagnostics.outer_monotone_violations, 0);
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10 * w[0].abs() + 1e-15);
        }
        // Selection is reported exactly for the nonzero blocks.
        let s = &design.structure;
        let nonzero: BTreeSet<Pair> = (0..s.n_blocks())
            .filter(|&b| fit.beta.block_norm(b) > 0.0)
            .map(|b| Pair::new(s.genes()[s.blocks()[b].gene].clone(), s.subtypes()[s.blocks()[b].subtype].clone()))
            .collect();
        prop_assert_eq!(nonzero, fit.selected.iter().cloned().collect::<BTreeSet<_>>());
    }

    #[test]
    fn simplified_weights_match_theta_route(seed in any::<u64>(), gi in 0usize..4, lexp in -3.0f64..0.0) {
        let ms = small_study(seed);
        let s = ms.structure.clone();
        let mut rng = rng(seed ^ 7);
        let beta = random_beta(&mut rng, &s, 0.3);
        let gamma = [0.3, 0.5, 0.7, 0.9][gi];
        let cfg = BridgeConfig::new(gamma, 10f64.powf(lexp), &s).unwrap();
        let direct = group_weights(&beta, &cfg, &s);
        let two_step = theta_to_group_weights(&theta_update(&beta, &cfg, &s), &cfg, &s);
        for (a, b) in direct.0.iter().zip(&two_step.0) {
            if b.is_infinite() {
                prop_assert!(a.is_infinite());
            } else {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn df_never_exceeds_active_coordinates(seed in any::<u64>()) {
        let ms = small_study(seed);
        let design = stacked(&ms);
        let s = &design.structure;
        let ls = ls_block_norms(&design);
        let mut rng = rng(seed ^ 3);
        let beta = random_beta(&mut rng, s, 0.4);
        let active: usize = (0..s.n_blocks()).filter(|&b| beta.block_norm(b) > 0.0).map(|b| s.blocks()[b].size()).sum();
        // Shrink towards zero so the norm ratios stay below one.
        let shrunk: Vec<f64> = beta.values().iter().map(|v| v * 1e-3).collect();
        let shrunk = CoefficientSet::from_values(s, shrunk).unwrap();
        prop_assert!(df_approx(&shrunk, &ls.norms, s) <= active as f64 + 1e-12);
    }

    #[test]
    fn true_positives_bounded(sel in proptest::collection::btree_set((0usize..8, 0usize..3), 0..20),
                              truth in proptest::collection::btree_set((0usize..8, 0usize..3), 0..12)) {
        let to_pairs = |s: &BTreeSet<(usize, usize)>| s.iter().map(|(g, k)| Pair::new(format!("G{g}"), format!("{k}"))).collect::<BTreeSet<_>>();
        let t = TruthSet { effects: vec![], pairs: to_pairs(&truth) };
        let (tp, size) = score_selection(&to_pairs(&sel), &t);
        prop_assert!(tp <= size.min(truth.len()));
        prop_assert_eq!(size, sel.len());
    }

    #[test]
    fn logrank_invariances(seed in any::<u64>(), n in 4usize..40) {
        let mut rng = rng(seed);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(1..15) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        let mut g: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        g[0] = true;
        g[1] = false;
        let (a, _) = logrank_two_group(&t, &e, &g).unwrap();
        let flipped: Vec<bool> = g.iter().map(|x| !x).collect();
        let (b, _) = logrank_two_group(&t, &e, &flipped).unwrap();
        let warped: Vec<f64> = t.iter().map(|x| x.ln() * 3.0 + x.powi(3)).collect();
        let (c, _) = logrank_two_group(&warped, &e, &g).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        prop_assert!((a - c).abs() <= 1e-10 * a.max(1.0));
    }
}

#[test]
fn duplicating_a_subtype_leaves_others_unchanged() {
    let ms = small_study(17);
    let design = stacked(&ms);
    let s = &ms.structure;
    // Subtype 0 appended again as a fourth subtype.
    let mut cohorts = ms.cohorts.clone();
    let mut dup = ms.cohorts[0].clone();
    dup.label = "dup".into();
    cohorts.push(dup);
    let mut subtypes = s.subtypes().to_vec();
    subtypes.push("dup".into());
    let mut entries: Vec<_> = s.blocks().iter().map(|b| (b.gene, b.subtype, b.snp_ids.clone())).collect();
    for b in s.subtype_blocks(0) {
        let spec = &s.blocks()[b];
        entries.push((spec.gene, 3, spec.snp_ids.clone()));
    }
    let s2 = GeneStructure::new(s.genes().to_vec(), subtypes, entries).unwrap();
    let ms2 = MultiStudy::new(cohorts, s2.clone()).unwrap();
    let design2 = stacked(&ms2);

    let mut rng = rng(99);
    let beta = random_beta(&mut rng, s, 0.2);
    let mut v2 = vec![0.0; s2.dim()];
    for (b, spec) in s.blocks().iter().enumerate() {
        let b2 = s2.find_block(spec.gene, spec.subtype).unwrap();
        v2[s2.blocks()[b2].coef.clone()].copy_from_slice(beta.block(b));
    }
    let beta2 = CoefficientSet::from_values(&s2, v2).unwrap();
    let part = |d: &subtype_bridge::StackedDesign, beta: &CoefficientSet, m: usize| {
        let r = d.residual(beta);
        r[d.subtype_rows[m].clone()].iter().map(|x| x * x).sum::<f64>() / (2.0 * d.n as f64)
    };
    let a = part(&design, &beta, 1);
    let b = part(&design2, &beta2, 1);
    assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
}

#[test]
fn constant_block_is_never_selected() {
    let mut rng = rng(23);
    let mut ms = random_study(&mut rng, &[vec![2, 2], vec![3, 3]], &[30, 30], 0.2);
    let s = ms.structure.clone();
    let b = s.find_block(0, 1).unwrap();
    for c in s.blocks()[b].cols.clone() {
        ms.cohorts[1].genotype.column_mut(c).fill(1.0);
    }
    let design = stacked(&ms);
    for frac in [0.01, 0.1, 0.5] {
        let lam = glasso_lambda_max(&design) * frac;
        let w = GroupWeights(s.blocks().iter().map(|x| lam * (x.size() as f64).sqrt()).collect());
        let sol = solve_weighted_glasso(&design, &w, &CoefficientSet::zeros(&s), &SolverOptions::default()).unwrap();
        assert_eq!(sol.beta.block_norm(b), 0.0);
        let cfg = BridgeConfig::new(0.7, subtype_bridge::bridge::first_step_lambda_bound(&design, 0.7) * frac, &s).unwrap();
        assert_eq!(fit_bridge(&design, &cfg).unwrap().beta.block_norm(b), 0.0);
    }
}

#[test]
fn weights_approach_group_lasso_as_gamma_tends_to_one() {
    let ms = small_study(31);
    let s = &ms.structure;
    let gamma = 1.0 - 1e-6;
    let lambda = 0.05;
    let cfg = BridgeConfig::new(gamma, lambda, s).unwrap();
    let mut rng = rng(4);
    let beta = random_beta(&mut rng, s, 0.0);
    let w = group_weights(&beta, &cfg, s);
    for (b, spec) in s.blocks().iter().enumerate() {
        let expect = lambda * (spec.size() as f64).sqrt() * cfg.c[spec.gene].powf(1.0 / gamma);
        assert!((w.0[b] - expect).abs() <= 1e-4 * expect, "{} vs {expect}", w.0[b]);
    }
}

#[test]
fn logrank_hand_tabulated() {
    // Six events at times 1..6, group one holds the three earliest.
    let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let e = [true; 6];
    let g = [true, true, true, false, false, false];
    // Observed minus expected per event time: (1 - 3/6), (1 - 2/5), (1 - 1/4);
    // hypergeometric variances (3/6)(3/6), (2/5)(3/5), (1/4)(3/4).
    let o_e = 0.5 + 0.6 + 0.75;
    let var = 0.25 + 0.24 + 0.1875;
    let (stat, p) = logrank_two_group(&t, &e, &g).unwrap();
    assert!((stat - o_e * o_e / var).abs() < 1e-12);
    assert!(p < 0.05 && p > 0.01);
}

#[test]
fn tuning_is_bit_reproducible() {
    let ms = small_study(77);
    let design = stacked(&ms);
    let opts = TuneOptions { grid_size: 8, ..Default::default() };
    let a = tune_fit(&design, &opts).unwrap();
    let b = tune_fit(&design, &opts).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    for (p, q) in a.points.iter().zip(&b.points) {
        assert_eq!(p.bic.to_bits(), q.bic.to_bits());
    }
}

#[test]
fn zero_weight_rows_drop_out() {
    // A censored largest time gets zero weight, so its row is zero in the design.
    let x = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
    let c = SubtypeCohort::new("a", vec!["x".into(), "y".into(), "z".into()], vec![1.0, 2.0, 3.0], vec![true, true, false], x).unwrap();
    let w = km_weights(&c.log_time, &c.event).unwrap();
    let wc = center_and_weight(&c, &w).unwrap();
    assert_eq!(wc.y[2], 0.0);
    assert_eq!(wc.x[[2, 0]], 0.0);
}
