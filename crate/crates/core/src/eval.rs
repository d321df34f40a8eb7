//! Selection scoring, simulation tables, occurrence-index stability and
//! logrank-scored prediction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bridge::FitDiagnostics;
use crate::cohort::MultiStudy;
use crate::error::{Error, Result};
use crate::gcd::{fit_glasso_per_subtype, GlassoOptions, Pair};
use crate::kmw::{build_stacked, PcaMode, Predictor};
use crate::simgen::{CoeffCase, Correlation, SimContext, SimDesign, Sharing, TruthSet};
use crate::tune::{tune_fit, TuneOptions};

// ---------------------------------------------------------------------------
// Scoring

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateScore {
    pub replicate: u64,
    pub method: String,
    pub true_positives: usize,
    pub model_size: usize,
}

impl ReplicateScore {
    pub fn false_positives(&self) -> usize {
        self.model_size - self.true_positives
    }
}

/// TP = |selected ∩ truth|, size = |selected|.
pub fn score_selection(selected: &BTreeSet<Pair>, truth: &TruthSet) -> (usize, usize) {
    (selected.intersection(&truth.pairs).count(), selected.len())
}

// ---------------------------------------------------------------------------
// Fitting configuration shared by tables, stability and prediction

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Composite bridge penalty; BIC over every γ in the tuning options.
    Proposed,
    /// Group Lasso with BIC on each subtype separately.
    Glasso,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    pub pca: PcaMode,
    pub variance_fraction: f64,
    pub tune: TuneOptions,
    pub glasso: GlassoOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::Proposed,
            pca: PcaMode::Auto,
            variance_fraction: 0.9,
            tune: TuneOptions::default(),
            glasso: GlassoOptions::default(),
        }
    }
}

/// A fitted model able to score raw genotype rows.
pub struct FittedModel {
    pub selected: BTreeSet<Pair>,
    pub diagnostics: FitDiagnostics,
    /// Per subtype: the predictor and the subtype's index inside it.
    predictors: Vec<(Predictor, usize)>,
}

impl FittedModel {
    pub fn linear_predictor(&self, m: usize, x: &[f64]) -> f64 {
        let (p, k) = &self.predictors[m];
        p.linear_predictor(*k, x)
    }
}

pub fn fit_model(ms: &MultiStudy, cfg: &FitConfig) -> Result<FittedModel> {
    match cfg.method {
        Method::Proposed => {
            let design = build_stacked(ms, cfg.pca, cfg.variance_fraction)?;
            let report = tune_fit(&design, &cfg.tune)?;
            let best = report.best_fit();
            let pred = design.predictor(&best.beta);
            Ok(FittedModel {
                selected: best.selected.iter().cloned().collect(),
                diagnostics: report.diagnostics.clone(),
                predictors: (0..ms.n_subtypes()).map(|m| (pred.clone(), m)).collect(),
            })
        }
        Method::Glasso => {
            let mut selected = BTreeSet::new();
            let mut diagnostics = FitDiagnostics::default();
            let mut predictors = Vec::with_capacity(ms.n_subtypes());
            for m in 0..ms.n_subtypes() {
                let single = ms.single_subtype(m)?;
                let design = build_stacked(&single, cfg.pca, cfg.variance_fraction)?;
                let report = crate::gcd::fit_glasso_bic(&design, None, &cfg.glasso)?;
                let best = report.best_fit();
                selected.extend(best.selected.iter().cloned());
                diagnostics.merge(&report.diagnostics);
                predictors.push((design.predictor(&best.beta), 0));
            }
            Ok(FittedModel {
                selected,
                diagnostics,
                predictors,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation tables

/// Mean and sample SD; SD is `None` for fewer than two values.
pub fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    if v.is_empty() {
        return (f64::NAN, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperCell {
    pub tp: f64,
    pub tp_sd: f64,
    pub size: f64,
    pub size_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub tp_mean: f64,
    pub tp_sd: Option<f64>,
    pub size_mean: f64,
    pub size_sd: Option<f64>,
    pub fp_mean: f64,
    pub replicates: usize,
    pub failures: usize,
    pub paper: Option<PaperCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowResult {
    pub label: String,
    pub cells: Vec<CellSummary>,
    pub scores: Vec<ReplicateScore>,
    pub diagnostics: FitDiagnostics,
    pub censoring_rate: f64,
}

impl RowResult {
    pub fn cell(&self, method: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method)
    }
}

/// Method tag of the proposed estimator at one γ.
pub fn gamma_tag(gamma: f64) -> String {
    format!("gamma={gamma}")
}

pub const GLASSO_TAG: &str = "GLasso";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableOptions {
    pub replicates: u64,
    pub fit: FitConfig,
    /// Include the per-subtype group Lasso comparator.
    pub glasso: bool,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            replicates: 30,
            fit: FitConfig::default(),
            glasso: true,
        }
    }
}

struct ReplicateOutcome {
    scores: Vec<ReplicateScore>,
    failed: Vec<String>,
    diagnostics: FitDiagnostics,
    censored: f64,
}

fn run_replicate(ctx: &SimContext, r: u64, opts: &TableOptions) -> Result<ReplicateOutcome> {
    let (ms, truth) = ctx.replicate(r)?;
    let n_events: usize = ms.cohorts.iter().map(|c| c.event.iter().filter(|&&e| e).count()).sum();
    let censored = 1.0 - n_events as f64 / ms.n() as f64;
    let mut out = ReplicateOutcome {
        scores: Vec::new(),
        failed: Vec::new(),
        diagnostics: FitDiagnostics::default(),
        censored,
    };
    let fit = &opts.fit;
    let proposed = build_stacked(&ms, fit.pca, fit.variance_fraction).and_then(|d| tune_fit(&d, &fit.tune));
    match proposed {
        Ok(report) => {
            out.diagnostics.merge(&report.diagnostics);
            for &g in &fit.tune.gammas {
                let tag = gamma_tag(g);
                match report.fit_for_gamma(g) {
                    Some(f) => {
                        let sel: BTreeSet<Pair> = f.selected.iter().cloned().collect();
                        let (tp, size) = score_selection(&sel, &truth);
                        out.scores.push(ReplicateScore {
                            replicate: r,
                            method: tag,
                            true_positives: tp,
                            model_size: size,
                        });
                    }
                    None => out.failed.push(tag),
                }
            }
        }
        Err(e) => {
            log::warn!("replicate {r}: proposed fit failed: {e}");
            out.failed.extend(fit.tune.gammas.iter().map(|&g| gamma_tag(g)));
        }
    }
    if opts.glasso {
        match fit_glasso_per_subtype(&ms, fit.pca, fit.variance_fraction, &fit.glasso) {
            Ok(reports) => {
                let mut sel = BTreeSet::new();
                for rep in &reports {
                    sel.extend(rep.best_fit().selected.iter().cloned());
                    out.diagnostics.merge(&rep.diagnostics);
                }
                let (tp, size) = score_selection(&sel, &truth);
                out.scores.push(ReplicateScore {
                    replicate: r,
                    method: GLASSO_TAG.into(),
                    true_positives: tp,
                    model_size: size,
                });
            }
            Err(e) => {
                log::warn!("replicate {r}: group Lasso fit failed: {e}");
                out.failed.push(GLASSO_TAG.into());
            }
        }
    }
    Ok(out)
}

/// Run every replicate of one design and summarize each method cell.
pub fn run_table(
    design: &SimDesign,
    label: &str,
    opts: &TableOptions,
    paper: Option<&[PaperCell; 4]>,
) -> Result<RowResult> {
    if opts.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    if opts.replicates < 2 {
        log::warn!("a single replicate leaves standard deviations undefined");
    }
    let ctx = SimContext::new(design)?;
    let outcomes: Vec<ReplicateOutcome> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&ctx, r, opts))
        .collect::<Result<_>>()?;

    let mut methods: Vec<String> = Vec::new();
    if opts.glasso {
        methods.push(GLASSO_TAG.into());
    }
    methods.extend(opts.fit.tune.gammas.iter().map(|&g| gamma_tag(g)));

    let mut diagnostics = FitDiagnostics::default();
    let mut scores = Vec::new();
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    let mut censored = 0.0;
    for o in &outcomes {
        diagnostics.merge(&o.diagnostics);
        scores.extend(o.scores.iter().cloned());
        for f in &o.failed {
            *failures.entry(f.clone()).or_default() += 1;
        }
        censored += o.censored;
    }
    let cells = methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let own: Vec<&ReplicateScore> = scores.iter().filter(|s| &s.method == m).collect();
            let tp: Vec<f64> = own.iter().map(|s| s.true_positives as f64).collect();
            let size: Vec<f64> = own.iter().map(|s| s.model_size as f64).collect();
            let (tp_mean, tp_sd) = mean_sd(&tp);
            let (size_mean, size_sd) = mean_sd(&size);
            // Paper columns: GLasso, then γ = 0.5, 0.7, 0.9.
            let paper_cell = paper.and_then(|p| {
                if m == GLASSO_TAG {
                    Some(p[0])
                } else {
                    let g = opts.fit.tune.gammas[i - usize::from(opts.glasso)];
                    [0.5, 0.7, 0.9]
                        .iter()
                        .position(|&x| (x - g).abs() < 1e-12)
                        .map(|k| p[k + 1])
                }
            });
            CellSummary {
                method: m.clone(),
                tp_mean,
                tp_sd,
                size_mean,
                size_sd,
                fp_mean: size_mean - tp_mean,
                replicates: own.len(),
                failures: failures.get(m).copied().unwrap_or(0),
                paper: paper_cell,
            }
        })
        .collect();
    Ok(RowResult {
        label: label.to_string(),
        cells,
        scores,
        diagnostics,
        censoring_rate: censored / outcomes.len() as f64,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Summary CSV, one line per (row, method) with paper values alongside.
pub fn table_csv(rows: &[RowResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "row",
        "method",
        "tp_mean",
        "tp_sd",
        "size_mean",
        "size_sd",
        "fp_mean",
        "replicates",
        "failures",
        "paper_tp",
        "paper_tp_sd",
        "paper_size",
        "paper_size_sd",
    ])
    .expect("in-memory write");
    for row in rows {
        for c in &row.cells {
            let p = c.paper;
            w.write_record([
                row.label.clone(),
                c.method.clone(),
                format!("{:.4}", c.tp_mean),
                fmt_opt(c.tp_sd),
                format!("{:.4}", c.size_mean),
                fmt_opt(c.size_sd),
                format!("{:.4}", c.fp_mean),
                c.replicates.to_string(),
                c.failures.to_string(),
                fmt_opt(p.map(|p| p.tp)),
                fmt_opt(p.map(|p| p.tp_sd)),
                fmt_opt(p.map(|p| p.size)),
                fmt_opt(p.map(|p| p.size_sd)),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Per-replicate scores as CSV.
pub fn scores_csv(rows: &[RowResult]) -> String {
    let mut out = String::from("row,replicate,method,tp,size\n");
    for row in rows {
        for s in &row.scores {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.label, s.replicate, s.method, s.true_positives, s.model_size
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Paper simulation tables

#[derive(Debug, Clone)]
pub struct PaperRow {
    pub label: &'static str,
    pub slug: &'static str,
    pub correlation: Correlation,
    /// GLasso, γ = 0.5, 0.7, 0.9.
    pub cells: [PaperCell; 4],
}

#[derive(Debug, Clone)]
pub struct PaperTable {
    pub id: u8,
    pub case: CoeffCase,
    pub sharing: Sharing,
    pub rows: Vec<PaperRow>,
}

impl PaperTable {
    pub fn design(&self, row: &PaperRow, seed: u64) -> SimDesign {
        SimDesign::paper(row.correlation, self.case, self.sharing, seed)
    }

    pub fn preset_name(&self, row: &PaperRow) -> String {
        let case = match self.case {
            CoeffCase::One => "case1",
            CoeffCase::Two => "case2",
        };
        let sharing = match self.sharing {
            Sharing::Hetero25 => "h25",
            Sharing::Hetero50 => "h50",
            Sharing::Homogeneous => "homo",
        };
        format!("table{}-{}-{}-{}", self.id, row.slug, case, sharing)
    }
}

const ROWS: [(&str, &str, Correlation); 6] = [
    ("AR rho=0.2", "ar02", Correlation::Ar(0.2)),
    ("AR rho=0.5", "ar05", Correlation::Ar(0.5)),
    ("AR rho=0.8", "ar08", Correlation::Ar(0.8)),
    ("Banded 1", "banded1", Correlation::Banded(1)),
    ("Banded 2", "banded2", Correlation::Banded(2)),
    ("Banded 3", "banded3", Correlation::Banded(3)),
];

type RawRow = [[f64; 4]; 4];

const fn c(v: [f64; 4]) -> PaperCell {
    PaperCell {
        tp: v[0],
        tp_sd: v[1],
        size: v[2],
        size_sd: v[3],
    }
}

const T2: [RawRow; 6] = [
    [[5.7, 2.4, 36.4, 16.5], [6.7, 5.2, 9.5, 7.6], [7.4, 4.6, 10.7, 6.6], [8.9, 2.8, 20.1, 6.3]],
    [[6.7, 2.4, 39.7, 19.3], [10.7, 3.0, 14.4, 4.5], [10.8, 2.8, 14.7, 4.0], [11.0, 1.9, 17.1, 4.5]],
    [[9.4, 2.3, 50.2, 19.3], [12.0, 0.2, 14.4, 1.9], [12.0, 0.2, 14.6, 1.9], [11.9, 0.2, 15.6, 2.7]],
    [[5.3, 2.6, 33.8, 16.2], [7.8, 5.0, 11.0, 7.1], [8.6, 4.4, 11.9, 5.9], [8.9, 3.6, 20.5, 7.0]],
    [[7.5, 2.8, 45.5, 21.7], [10.6, 3.3, 14.6, 4.8], [11.2, 2.2, 15.5, 3.7], [11.3, 1.7, 21.1, 7.0]],
    [[7.9, 2.4, 44.2, 17.7], [11.5, 1.9, 15.4, 3.0], [11.5, 1.5, 15.4, 2.7], [11.6, 1.1, 18.8, 5.2]],
];
const T3: [RawRow; 6] = [
    [[4.6, 2.3, 30.7, 16.9], [3.7, 4.1, 5.4, 7.0], [5.8, 3.8, 10.3, 6.9], [8.3, 2.1, 22.2, 6.8]],
    [[6.5, 3.0, 36.1, 20.1], [9.6, 3.5, 16.8, 7.5], [9.7, 3.1, 17.2, 6.9], [10.1, 2.3, 21.1, 6.8]],
    [[9.7, 2.2, 54.5, 17.5], [11.5, 0.9, 19.4, 3.9], [11.5, 0.7, 18.4, 4.1], [11.6, 0.7, 20.2, 5.8]],
    [[4.7, 2.4, 34.5, 17.6], [4.4, 4.1, 6.7, 7.2], [5.9, 3.8, 10.8, 7.7], [7.7, 2.9, 20.8, 9.2]],
    [[7.5, 2.5, 47.1, 19.4], [8.4, 3.9, 14.4, 7.7], [9.1, 3.1, 15.9, 6.1], [10.0, 1.7, 23.5, 7.1]],
    [[7.3, 2.4, 43.2, 19.6], [9.5, 2.9, 16.6, 6.7], [9.9, 2.6, 17.7, 5.9], [10.1, 2.2, 22.9, 7.6]],
];
const T5: [RawRow; 6] = [
    [[3.8, 2.1, 32.7, 17.5], [2.4, 4.2, 3.5, 6.2], [4.5, 4.6, 7.9, 7.7], [5.4, 3.4, 18.0, 9.9]],
    [[6.0, 2.4, 36.7, 16.1], [9.4, 4.1, 13.3, 5.9], [10.2, 3.2, 14.7, 4.7], [10.3, 2.5, 20.0, 7.7]],
    [[8.0, 2.4, 46.9, 18.5], [11.7, 0.9, 15.3, 2.3], [11.8, 0.6, 15.6, 3.0], [11.7, 0.8, 19.4, 6.2]],
    [[3.8, 2.1, 31.8, 17.0], [2.9, 4.5, 4.3, 6.6], [4.4, 4.5, 7.0, 7.0], [5.8, 3.4, 18.1, 9.9]],
    [[5.2, 2.4, 32.7, 18.8], [9.2, 4.5, 13.2, 6.3], [9.8, 3.7, 14.4, 5.3], [9.5, 3.0, 20.8, 7.7]],
    [[5.7, 2.5, 35.1, 17.5], [9.4, 4.1, 13.0, 5.6], [9.7, 3.4, 14.7, 5.2], [10.4, 2.3, 22.8, 8.7]],
];
const T6: [RawRow; 6] = [
    [[3.7, 2.0, 30.3, 16.9], [1.8, 3.3, 2.8, 5.4], [3.8, 3.8, 7.6, 7.8], [6.1, 2.5, 21.4, 8.2]],
    [[5.3, 2.6, 33.5, 20.1], [8.0, 3.8, 13.6, 7.8], [9.4, 2.7, 17.4, 6.3], [9.5, 1.7, 22.9, 6.7]],
    [[8.2, 2.3, 47.8, 19.2], [10.6, 2.2, 18.1, 5.5], [10.9, 1.0, 18.3, 3.7], [11.0, 1.3, 21.8, 6.6]],
    [[3.9, 2.0, 31.2, 18.5], [1.9, 3.0, 3.1, 5.3], [3.4, 3.6, 6.3, 7.0], [5.8, 3.1, 18.5, 9.0]],
    [[5.1, 2.4, 31.6, 15.6], [6.4, 4.0, 10.4, 7.4], [8.6, 3.0, 15.7, 6.8], [8.6, 2.8, 21.7, 8.8]],
    [[5.8, 2.4, 36.2, 18.5], [8.3, 3.5, 13.9, 7.4], [9.0, 2.7, 15.6, 5.4], [9.4, 2.1, 21.7, 7.2]],
];
const T7: [RawRow; 6] = [
    [[5.4, 2.3, 37.6, 17.2], [9.5, 4.0, 9.8, 3.8], [9.5, 4.2, 10.5, 4.3], [9.1, 3.8, 16.9, 8.1]],
    [[7.1, 2.7, 41.8, 21.5], [11.6, 1.9, 11.8, 1.4], [11.6, 1.6, 11.8, 1.3], [11.5, 1.7, 15.2, 4.4]],
    [[9.7, 2.4, 48.3, 17.8], [11.9, 0.4, 12.0, 0.4], [12.0, 0.0, 12.1, 0.6], [12.0, 0.0, 14.0, 2.1]],
    [[5.1, 2.0, 33.8, 16.2], [9.9, 4.1, 10.2, 3.9], [10.1, 3.8, 11.2, 3.6], [9.9, 3.2, 17.9, 6.9]],
    [[7.5, 2.7, 45.5, 19.3], [12.0, 0.0, 12.0, 0.0], [12.0, 0.0, 12.3, 1.1], [11.6, 1.1, 17.1, 5.5]],
    [[8.3, 2.3, 50.5, 18.5], [11.8, 0.9, 11.8, 0.9], [11.9, 0.8, 12.0, 0.9], [11.9, 0.5, 15.9, 3.7]],
];
const T8: [RawRow; 6] = [
    [[4.1, 2.4, 33.0, 18.8], [6.0, 5.1, 6.2, 5.1], [6.9, 4.8, 8.9, 5.8], [7.9, 3.6, 19.9, 7.7]],
    [[6.5, 2.5, 39.2, 18.2], [11.2, 2.3, 11.6, 2.1], [11.4, 1.7, 12.4, 2.0], [11.3, 1.6, 18.3, 6.5]],
    [[8.2, 2.6, 46.9, 21.9], [11.9, 0.4, 12.0, 0.6], [11.9, 0.4, 12.4, 1.5], [11.9, 0.6, 16.4, 5.8]],
    [[4.0, 2.2, 33.5, 16.2], [5.3, 5.3, 5.5, 5.3], [7.0, 4.7, 8.1, 5.3], [7.8, 3.5, 19.6, 7.9]],
    [[6.0, 2.2, 38.1, 16.8], [10.6, 3.6, 10.9, 3.2], [11.1, 2.5, 12.8, 3.6], [11.2, 1.8, 19.1, 6.2]],
    [[6.5, 2.1, 39.9, 16.8], [11.4, 1.9, 11.7, 1.3], [11.2, 2.0, 12.5, 2.1], [11.3, 2.1, 19.3, 5.7]],
];

/// The simulation tables of the reference study: 2, 3, 5, 6, 7, 8.
pub fn paper_table(id: u8) -> Option<PaperTable> {
    let (case, sharing, raw) = match id {
        2 => (CoeffCase::One, Sharing::Hetero25, &T2),
        3 => (CoeffCase::One, Sharing::Hetero50, &T3),
        5 => (CoeffCase::Two, Sharing::Hetero25, &T5),
        6 => (CoeffCase::Two, Sharing::Hetero50, &T6),
        7 => (CoeffCase::One, Sharing::Homogeneous, &T7),
        8 => (CoeffCase::Two, Sharing::Homogeneous, &T8),
        _ => return None,
    };
    let rows = ROWS
        .iter()
        .zip(raw.iter())
        .map(|(&(label, slug, correlation), cells)| PaperRow {
            label,
            slug,
            correlation,
            cells: [c(cells[0]), c(cells[1]), c(cells[2]), c(cells[3])],
        })
        .collect();
    Some(PaperTable {
        id,
        case,
        sharing,
        rows,
    })
}

pub const TABLE_IDS: [u8; 6] = [2, 3, 5, 6, 7, 8];

/// Every named simulation preset, e.g. `table2-ar05-case1-h25`, plus
/// `nhl-shaped`.
pub fn preset_names() -> Vec<String> {
    let mut v: Vec<String> = TABLE_IDS
        .iter()
        .flat_map(|&id| {
            let t = paper_table(id).expect("known table");
            t.rows.iter().map(|r| t.preset_name(r)).collect::<Vec<_>>()
        })
        .collect();
    v.push("nhl-shaped".into());
    v
}

pub fn preset(name: &str, seed: u64) -> Option<SimDesign> {
    if name == "nhl-shaped" {
        return Some(SimDesign::nhl_shaped(seed));
    }
    TABLE_IDS.iter().find_map(|&id| {
        let t = paper_table(id)?;
        t.rows
            .iter()
            .find(|r| t.preset_name(r) == name)
            .map(|r| t.design(r, seed))
    })
}

// ---------------------------------------------------------------------------
// Stability

/// Stratified subsample: `⌊fraction·n_m⌋` subjects of each subtype without
/// replacement, plus the held-out complement.
pub fn stratified_split(ms: &MultiStudy, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut train = Vec::with_capacity(ms.n_subtypes());
    let mut test = Vec::with_capacity(ms.n_subtypes());
    for c in &ms.cohorts {
        let n = c.n();
        let k = (fraction * n as f64).floor() as usize;
        let mut idx = sample(rng, n, k).into_vec();
        idx.sort_unstable();
        let mut keep = vec![false; n];
        idx.iter().for_each(|&i| keep[i] = true);
        test.push((0..n).filter(|&i| !keep[i]).collect());
        train.push(idx);
    }
    (train, test)
}

fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceEntry {
    pub gene: String,
    pub subtype: String,
    pub index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub entries: Vec<OccurrenceEntry>,
    pub rounds_requested: usize,
    pub rounds_used: usize,
    pub fraction: f64,
}

impl StabilityReport {
    pub fn index_of(&self, gene: &str, subtype: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.gene == gene && e.subtype == subtype)
            .map(|e| e.index)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gene,subtype,index\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:.6}\n", e.gene, e.subtype, e.index));
        }
        out
    }
}

/// Selection frequency of every (gene, subtype) pair over `rounds`
/// stratified subsamples, each tuned and fitted from scratch.
pub fn occurrence_index(
    ms: &MultiStudy,
    cfg: &FitConfig,
    rounds: usize,
    fraction: f64,
    seed: u64,
) -> Result<StabilityReport> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0,1)")));
    }
    if rounds == 0 {
        return Err(Error::InvalidArgument("need at least one round".into()));
    }
    let selections: Vec<Option<BTreeSet<Pair>>> = (0..rounds as u64)
        .into_par_iter()
        .map(|b| {
            let (train, _) = stratified_split(ms, fraction, &mut round_rng(seed, b));
            match ms.subsample(&train).and_then(|sub| fit_model(&sub, cfg)) {
                Ok(model) => Some(model.selected),
                Err(e) => {
                    log::warn!("stability round {b} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    let used: Vec<&BTreeSet<Pair>> = selections.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Empty("every stability round failed".into()));
    }
    let s = &ms.structure;
    let entries = s
        .blocks()
        .iter()
        .map(|blk| {
            let pair = Pair::new(s.genes()[blk.gene].clone(), s.subtypes()[blk.subtype].clone());
            let hits = used.iter().filter(|sel| sel.contains(&pair)).count();
            OccurrenceEntry {
                gene: pair.gene,
                subtype: pair.subtype,
                index: hits as f64 / used.len() as f64,
            }
        })
        .collect();
    Ok(StabilityReport {
        entries,
        rounds_requested: rounds,
        rounds_used: used.len(),
        fraction,
    })
}

// ---------------------------------------------------------------------------
// Logrank and prediction

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    ChiSquared::new(1.0).expect("valid dof").sf(x)
}

/// Two-sample logrank chi-square statistic and its p-value. Tied event
/// times share one risk-set table; a censored time tied with an event time
/// stays in the risk set.
pub fn logrank_two_group(times: &[f64], events: &[bool], group: &[bool]) -> Result<(f64, f64)> {
    let n = times.len();
    if events.len() != n || group.len() != n {
        return Err(Error::Dimension("logrank inputs differ in length".into()));
    }
    let n1_total = group.iter().filter(|&&g| g).count();
    if n1_total == 0 || n1_total == n {
        return Err(Error::InvalidArgument("both groups must be non-empty".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let (mut at_risk, mut at_risk1) = (n as f64, n1_total as f64);
    let (mut num, mut var) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut j = i;
        let (mut d, mut d1, mut leave, mut leave1) = (0.0, 0.0, 0.0, 0.0);
        while j < n && times[order[j]] == t {
            let k = order[j];
            if events[k] {
                d += 1.0;
                if group[k] {
                    d1 += 1.0;
                }
            }
            leave += 1.0;
            if group[k] {
                leave1 += 1.0;
            }
            j += 1;
        }
        if d > 0.0 {
            let frac = at_risk1 / at_risk;
            num += d1 - d * frac;
            if at_risk > 1.0 {
                var += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= leave;
        at_risk1 -= leave1;
        i = j;
    }
    if var <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let stat = num * num / var;
    Ok((stat, chi2_1_sf(stat)))
}

/// Median split: `true` for predictors strictly above the median. `None`
/// when one side would be empty.
pub fn median_split(pred: &[f64]) -> Option<Vec<bool>> {
    if pred.is_empty() {
        return None;
    }
    let mut s = pred.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    let med = if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) };
    let g: Vec<bool> = pred.iter().map(|&p| p > med).collect();
    let n1 = g.iter().filter(|&&x| x).count();
    (n1 > 0 && n1 < k).then_some(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRound {
    pub round: u64,
    pub n_test: usize,
    /// `None` when the round was skipped.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Per-subtype statistics on the same split, for diagnostics.
    pub per_subtype: Vec<Option<f64>>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub rounds: Vec<PredictionRound>,
    pub skipped: usize,
    /// Mean pooled statistic over non-skipped rounds.
    pub mean_statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl PredictionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,n_test,statistic,p_value");
        let k = self.rounds.first().map_or(0, |r| r.per_subtype.len());
        for m in 0..k {
            out.push_str(&format!(",statistic_subtype{}", m + 1));
        }
        out.push('\n');
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{}",
                r.round,
                r.n_test,
                fmt_opt(r.statistic),
                fmt_opt(r.p_value)
            ));
            for s in &r.per_subtype {
                out.push_str(&format!(",{}", fmt_opt(*s)));
            }
            out.push('\n');
        }
        out
    }
}

/// Train on a stratified `fraction` of each subtype, score the held-out
/// subjects by `(x - x̄)ᵀβ̂`, split at the pooled median and compare the two
/// groups with the logrank test.
pub fn predict_evaluate(
    ms: &MultiStudy,
    cfg: &FitConfig,
    rounds: usize,
    fraction: f64,
    seed: u64,
) -> Result<PredictionReport> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0,1)")));
    }
    if rounds == 0 {
        return Err(Error::InvalidArgument("need at least one round".into()));
    }
    let results: Vec<PredictionRound> = (0..rounds as u64)
        .into_par_iter()
        .map(|b| predict_round(ms, cfg, fraction, seed, b))
        .collect();
    let stats: Vec<f64> = results.iter().filter_map(|r| r.statistic).collect();
    let skipped = results.len() - stats.len();
    if skipped == results.len() {
        log::warn!("every prediction round was skipped: predictions are non-informative");
    }
    let mean = (!stats.is_empty()).then(|| stats.iter().sum::<f64>() / stats.len() as f64);
    Ok(PredictionReport {
        rounds: results,
        skipped,
        mean_statistic: mean,
        p_value: mean.map(chi2_1_sf),
    })
}

fn predict_round(ms: &MultiStudy, cfg: &FitConfig, fraction: f64, seed: u64, b: u64) -> PredictionRound {
    let (train, test) = stratified_split(ms, fraction, &mut round_rng(seed, b));
    let n_test = test.iter().map(Vec::len).sum();
    let skip = |note: String| {
        log::warn!("prediction round {b} skipped: {note}");
        PredictionRound {
            round: b,
            n_test,
            statistic: None,
            p_value: None,
            per_subtype: vec![None; ms.n_subtypes()],
            note: Some(note),
        }
    };
    let model = match ms.subsample(&train).and_then(|sub| fit_model(&sub, cfg)) {
        Ok(m) => m,
        Err(e) => return skip(e.to_string()),
    };
    let (mut time, mut event, mut pred, mut subtype) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (m, rows) in test.iter().enumerate() {
        let c = &ms.cohorts[m];
        for &i in rows {
            let x: Vec<f64> = c.genotype.row(i).to_vec();
            time.push(c.time[i]);
            event.push(c.event[i]);
            pred.push(model.linear_predictor(m, &x));
            subtype.push(m);
        }
    }
    let Some(group) = median_split(&pred) else {
        return skip("predicted values do not separate the held-out subjects".into());
    };
    let (stat, p) = match logrank_two_group(&time, &event, &group) {
        Ok(v) => v,
        Err(e) => return skip(e.to_string()),
    };
    let per_subtype = (0..ms.n_subtypes())
        .map(|m| {
            let idx: Vec<usize> = (0..pred.len()).filter(|&i| subtype[i] == m).collect();
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let g = median_split(&p)?;
            let t: Vec<f64> = idx.iter().map(|&i| time[i]).collect();
            let e: Vec<bool> = idx.iter().map(|&i| event[i]).collect();
            logrank_two_group(&t, &e, &g).ok().map(|(s, _)| s)
        })
        .collect();
    PredictionRound {
        round: b,
        n_test,
        statistic: Some(stat),
        p_value: Some(p),
        per_subtype,
        note: None,
    }
}
