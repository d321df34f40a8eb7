//! `sbridge`: simulation, fitting, tuning and evaluation runs from the shell.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use subtype_bridge::bridge::FitResult;
use subtype_bridge::cohort::{filter_missing, load_csv, FilterReport};
use subtype_bridge::eval::{self, FitConfig, Method, RowResult, TableOptions};
use subtype_bridge::gcd::fit_glasso_per_subtype;
use subtype_bridge::kmw::{build_stacked, PcaMode};
use subtype_bridge::simgen::{save_replicate, CoeffCase, Correlation, SimContext, SimDesign, Sharing};
use subtype_bridge::tune::{tune_fit, TuningReport};
use subtype_bridge::MultiStudy;

#[derive(Parser, Debug)]
#[command(name = "sbridge", version, about = "Integrative gene selection across cancer subtypes")]
struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true, env = "BRIDGE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate simulated datasets (CSV triple plus truth.json).
    Simulate(SimulateArgs),
    /// Tune over the (γ, λ) grid and report the selected model.
    Fit(FitArgs),
    /// Tune over the (γ, λ) grid and write the full BIC path.
    Tune(FitArgs),
    /// Rerun a simulation table of the reference study.
    Reproduce(ReproduceArgs),
    /// Occurrence index of every (gene, subtype) pair over subsamples.
    Stability(ResampleArgs),
    /// Logrank-scored prediction on held-out subjects.
    Predict(ResampleArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct DesignArgs {
    /// Named design, e.g. `table2-ar05-case1-h25` or `nhl-shaped`.
    #[arg(long)]
    preset: Option<String>,
    /// `ar:<rho>` or `banded:<1|2|3>`.
    #[arg(long, default_value = "ar:0.5")]
    correlation: String,
    #[arg(long, default_value_t = 1)]
    case: u8,
    #[arg(long, value_enum, default_value_t = SharingArg::H25)]
    sharing: SharingArg,
    /// Error standard deviation of the log event times.
    #[arg(long)]
    sigma: Option<f64>,
    /// Multiplies every planted coefficient.
    #[arg(long)]
    effect_scale: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
enum SharingArg {
    H25,
    H50,
    Homo,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of replicates; more than one writes `rep_<r>` subdirectories.
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
enum MethodArg {
    Proposed,
    Glasso,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
enum PcaArg {
    Auto,
    Off,
    Always,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Proposed)]
    method: MethodArg,
    /// Comma-separated γ values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.7, 0.9])]
    gamma: Vec<f64>,
    /// Comma-separated λ values replacing the automatic grid.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    /// Smallest grid λ is λ_max divided by this.
    #[arg(long, default_value_t = 100.0)]
    grid_ratio: f64,
    /// Fit the whole grid and let every point compete in BIC.
    #[arg(long)]
    no_df_cap: bool,
    #[arg(long, value_enum, default_value_t = PcaArg::Auto)]
    pca: PcaArg,
    #[arg(long, default_value_t = 0.9)]
    pca_fraction: f64,
}

impl ModelArgs {
    fn fit_config(&self) -> anyhow::Result<FitConfig> {
        let mut cfg = FitConfig {
            method: match self.method {
                MethodArg::Proposed => Method::Proposed,
                MethodArg::Glasso => Method::Glasso,
            },
            pca: match self.pca {
                PcaArg::Auto => PcaMode::Auto,
                PcaArg::Off => PcaMode::Off,
                PcaArg::Always => PcaMode::Always,
            },
            variance_fraction: self.pca_fraction,
            ..FitConfig::default()
        };
        if self.gamma.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(anyhow!("every --gamma must lie in (0, 1)"));
        }
        if self.grid_size == 0 || !(self.grid_ratio > 1.0) {
            return Err(anyhow!("--grid-size must be positive and --grid-ratio above 1"));
        }
        if let Some(g) = &self.lambda_grid {
            if g.is_empty() || g.iter().any(|l| !(*l > 0.0)) {
                return Err(anyhow!("--lambda-grid values must be positive"));
            }
        }
        let cap = if self.no_df_cap {
            subtype_bridge::tune::DfCap::Unbounded
        } else {
            subtype_bridge::tune::DfCap::NOverLogN
        };
        cfg.tune.gammas = self.gamma.clone();
        cfg.tune.lambda_grid = self.lambda_grid.clone();
        cfg.tune.grid_size = self.grid_size;
        cfg.tune.ratio = self.grid_ratio;
        cfg.tune.df_cap = cap;
        cfg.glasso.grid_size = self.grid_size;
        cfg.glasso.ratio = self.grid_ratio;
        cfg.glasso.df_cap = cap;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct DataArgs {
    /// Directory holding genotype.csv, survival.csv and gene_map.csv.
    #[arg(long)]
    data: PathBuf,
    /// Drop subjects missing more than this fraction of SNPs.
    #[arg(long, default_value_t = 0.2)]
    subject_missing: f64,
    /// Drop SNPs missing in more than this fraction of subjects.
    #[arg(long, default_value_t = 0.2)]
    snp_missing: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ReproduceArgs {
    /// One of 2, 3, 5, 6, 7, 8.
    #[arg(long)]
    table: u8,
    #[arg(long, default_value_t = 30)]
    replicates: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated row slugs (ar02, ar05, ar08, banded1..3); default all.
    #[arg(long, value_delimiter = ',')]
    rows: Option<Vec<String>>,
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ResampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of subsampling rounds.
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    /// Fraction of each subtype used for fitting.
    #[arg(long, default_value_t = 0.75)]
    fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Configuration problems exit with 2, everything else with 1.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let threads = rayon::current_num_threads();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, threads),
        Command::Fit(a) => fit(a, threads, false),
        Command::Tune(a) => fit(a, threads, true),
        Command::Reproduce(a) => reproduce(a, threads),
        Command::Stability(a) => stability(a, threads),
        Command::Predict(a) => predict(a, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

#[derive(Serialize)]
struct Manifest<'a, A: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    threads: usize,
    arguments: &'a A,
    resolved: &'a R,
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_manifest<A: Serialize, R: Serialize>(
    dir: &Path,
    command: &'static str,
    threads: usize,
    arguments: &A,
    resolved: &R,
) -> anyhow::Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        threads,
        arguments,
        resolved,
    };
    write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&m)?)
}

fn parse_correlation(s: &str) -> anyhow::Result<Correlation> {
    let (kind, val) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("correlation `{s}` must look like ar:0.5 or banded:2"))?;
    match kind {
        "ar" => {
            let rho: f64 = val.parse().map_err(|_| anyhow!("bad AR coefficient `{val}`"))?;
            if !(0.0..1.0).contains(&rho) {
                return Err(anyhow!("AR coefficient must be in [0, 1)"));
            }
            Ok(Correlation::Ar(rho))
        }
        "banded" => match val {
            "1" => Ok(Correlation::Banded(1)),
            "2" => Ok(Correlation::Banded(2)),
            "3" => Ok(Correlation::Banded(3)),
            _ => Err(anyhow!("banded scenario must be 1, 2 or 3")),
        },
        _ => Err(anyhow!("unknown correlation kind `{kind}`")),
    }
}

fn resolve_design(a: &DesignArgs, seed: u64) -> anyhow::Result<SimDesign> {
    let mut d = match &a.preset {
        Some(name) => eval::preset(name, seed).ok_or_else(|| {
            anyhow!(
                "unknown preset `{name}`; known presets: {}",
                eval::preset_names().join(", ")
            )
        })?,
        None => {
            let case = match a.case {
                1 => CoeffCase::One,
                2 => CoeffCase::Two,
                c => return Err(anyhow!("coefficient case must be 1 or 2, got {c}")),
            };
            let sharing = match a.sharing {
                SharingArg::H25 => Sharing::Hetero25,
                SharingArg::H50 => Sharing::Hetero50,
                SharingArg::Homo => Sharing::Homogeneous,
            };
            SimDesign::paper(parse_correlation(&a.correlation)?, case, sharing, seed)
        }
    };
    if let Some(s) = a.sigma {
        if !(s >= 0.0) {
            return Err(anyhow!("--sigma must be nonnegative"));
        }
        d.sigma = s;
    }
    if let Some(k) = a.effect_scale {
        d.effect_scale = k;
    }
    Ok(d)
}

fn load_data(a: &DataArgs) -> Result<(MultiStudy, FilterReport), Failure> {
    let files = ["genotype.csv", "survival.csv", "gene_map.csv"].map(|f| a.data.join(f));
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(Failure::Config(anyhow!("missing input file {}", missing.display())));
    }
    let raw = load_csv(&files[0], &files[1], &files[2]).map_err(|e| Failure::Config(e.into()))?;
    let (ms, report) = filter_missing(&raw, a.subject_missing, a.snp_missing).map_err(|e| Failure::Config(e.into()))?;
    Ok((ms, report))
}

// ---------------------------------------------------------------------------
// Commands

fn simulate(a: &SimulateArgs, threads: usize) -> Result<(), Failure> {
    let design = config(resolve_design(&a.design, a.seed))?;
    if a.replicates == 0 {
        return Err(Failure::Config(anyhow!("--replicates must be positive")));
    }
    let ctx = SimContext::new(&design).map_err(|e| Failure::Runtime(e.into()))?;
    prepare_out(&a.out)?;
    for r in 0..a.replicates {
        let (ms, truth) = ctx.replicate(r).map_err(|e| Failure::Runtime(e.into()))?;
        let dir = if a.replicates == 1 {
            a.out.clone()
        } else {
            a.out.join(format!("rep_{r:03}"))
        };
        save_replicate(&ms, &truth, &dir).map_err(|e| Failure::Runtime(e.into()))?;
        let events: usize = ms.cohorts.iter().map(|c| c.event.iter().filter(|&&e| e).count()).sum();
        println!(
            "replicate {r}: {} subjects, {} SNPs, censoring {:.3} -> {}",
            ms.n(),
            design.n_snps(),
            1.0 - events as f64 / ms.n() as f64,
            dir.display()
        );
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        design: &'a SimDesign,
        censor_upper: f64,
        pilot_censoring: f64,
        latent_jitter: f64,
    }
    let resolved = Resolved {
        design: &design,
        censor_upper: ctx.censor_upper,
        pilot_censoring: ctx.pilot_censoring,
        latent_jitter: ctx.jitter,
    };
    write_manifest(&a.out, "simulate", threads, a, &resolved)?;
    Ok(())
}

/// Gene rows by subtype columns of block L2 norms of the selected model.
fn norm_table(fit: &FitResult, subtypes: &[String]) -> String {
    let mut rows: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for b in &fit.block_norms {
        rows.entry(&b.gene).or_default().insert(&b.subtype, b.norm);
    }
    let width = rows.keys().map(|g| g.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}", "Gene");
    for s in subtypes {
        out.push_str(&format!("  {s:>10}"));
    }
    out.push('\n');
    for (gene, cols) in &rows {
        out.push_str(&format!("{gene:<width$}"));
        for s in subtypes {
            match cols.get(s.as_str()) {
                Some(v) => out.push_str(&format!("  {v:>10.4}")),
                None => out.push_str(&format!("  {:>10}", "")),
            }
        }
        out.push('\n');
    }
    out
}

fn selected_csv(fit: &FitResult) -> String {
    let mut out = String::from("gene,subtype,l2_norm\n");
    for b in &fit.block_norms {
        out.push_str(&format!("{},{},{:.8}\n", b.gene, b.subtype, b.norm));
    }
    out
}

fn fit(a: &FitArgs, threads: usize, full_path: bool) -> Result<(), Failure> {
    let cfg = config(a.model.fit_config())?;
    let (ms, filter) = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let subtypes = ms.structure.subtypes().to_vec();
    let reports: Vec<TuningReport> = match cfg.method {
        Method::Proposed => {
            let design = build_stacked(&ms, cfg.pca, cfg.variance_fraction).map_err(|e| Failure::Runtime(e.into()))?;
            vec![tune_fit(&design, &cfg.tune).map_err(|e| Failure::Runtime(e.into()))?]
        }
        Method::Glasso => fit_glasso_per_subtype(&ms, cfg.pca, cfg.variance_fraction, &cfg.glasso)
            .map_err(|e| Failure::Runtime(e.into()))?,
    };
    let mut tuning_csv = String::new();
    let mut bic_tsv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let csv = r.to_csv();
        if i == 0 {
            tuning_csv.push_str(&csv);
        } else {
            tuning_csv.push_str(csv.split_once('\n').map_or("", |x| x.1));
        }
        bic_tsv.push_str(&r.to_bic_tsv());
        bic_tsv.push_str("\n\n");
    }
    write_file(&a.out.join("tuning.csv"), &tuning_csv)?;
    write_file(&a.out.join("bic.tsv"), &bic_tsv)?;
    if full_path {
        write_file(&a.out.join("tuning.json"), &serde_json::to_string_pretty(&reports).map_err(anyhow::Error::from)?)?;
    }

    if let Method::Proposed = cfg.method {
        let report = &reports[0];
        for (pg, f) in report.per_gamma.iter().zip(&report.fits) {
            let p = &report.points[pg.point];
            println!(
                "gamma {:.2}: lambda {:.6e} (lambda_max {:.6e}), BIC {:.4}, df {:.2}, {} pairs selected",
                pg.gamma,
                p.lambda,
                pg.lambda_max,
                p.bic,
                p.df,
                f.selected.len()
            );
        }
        let best = report.best_fit();
        println!(
            "\nselected model: gamma {:.2}, lambda {:.6e}; L2-norm of estimate per gene and subtype\n",
            best.gamma().unwrap_or(f64::NAN),
            best.lambda()
        );
        println!("{}", norm_table(best, &subtypes));
        write_file(&a.out.join("selected.csv"), &selected_csv(best))?;
        if !full_path {
            #[derive(Serialize)]
            struct FitOut<'a> {
                best: &'a FitResult,
                per_gamma: Vec<&'a FitResult>,
                report: &'a TuningReport,
            }
            let out = FitOut {
                best,
                per_gamma: report.fits.iter().collect(),
                report,
            };
            write_file(&a.out.join("fit.json"), &serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?)?;
        }
    } else {
        let mut all = String::from("gene,subtype,l2_norm\n");
        for (m, r) in reports.iter().enumerate() {
            let best = r.best_fit();
            println!("subtype {}: {} genes selected", subtypes[m], best.selected.len());
            all.push_str(selected_csv(best).split_once('\n').map_or("", |x| x.1));
        }
        write_file(&a.out.join("selected.csv"), &all)?;
        if !full_path {
            write_file(&a.out.join("fit.json"), &serde_json::to_string_pretty(&reports).map_err(anyhow::Error::from)?)?;
        }
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        fit: &'a FitConfig,
        filter: &'a FilterReport,
        subjects: usize,
    }
    let resolved = Resolved {
        fit: &cfg,
        filter: &filter,
        subjects: ms.n(),
    };
    write_manifest(&a.out, if full_path { "tune" } else { "fit" }, threads, a, &resolved)?;
    Ok(())
}

fn cell_text(mean: f64, sd: Option<f64>) -> String {
    match sd {
        Some(s) => format!("{mean:.1}({s:.1})"),
        None => format!("{mean:.1}()"),
    }
}

fn print_table(id: u8, rows: &[RowResult]) {
    println!("Table {id}: true positives (SD) / model size (SD); paper values in brackets");
    for row in rows {
        println!("{}  [censoring {:.3}]", row.label, row.censoring_rate);
        for c in &row.cells {
            let paper = c
                .paper
                .map(|p| format!("  [{:.1}({:.1}) / {:.1}({:.1})]", p.tp, p.tp_sd, p.size, p.size_sd))
                .unwrap_or_default();
            let fail = if c.failures > 0 {
                format!("  ({} failed)", c.failures)
            } else {
                String::new()
            };
            println!(
                "  {:<10} {:>10} / {:<10}{paper}{fail}",
                c.method,
                cell_text(c.tp_mean, c.tp_sd),
                cell_text(c.size_mean, c.size_sd)
            );
        }
    }
}

fn reproduce(a: &ReproduceArgs, threads: usize) -> Result<(), Failure> {
    let table = eval::paper_table(a.table)
        .ok_or_else(|| Failure::Config(anyhow!("unknown table {}; choose one of 2, 3, 5, 6, 7, 8", a.table)))?;
    if a.replicates == 0 {
        return Err(Failure::Config(anyhow!("--replicates must be positive")));
    }
    if a.replicates == 1 {
        log::warn!("one replicate: standard deviations are left empty");
    }
    let fit = config(a.model.fit_config())?;
    let rows: Vec<_> = match &a.rows {
        None => table.rows.iter().collect(),
        Some(slugs) => {
            let mut v = Vec::new();
            for s in slugs {
                let r = table
                    .rows
                    .iter()
                    .find(|r| r.slug == s)
                    .ok_or_else(|| Failure::Config(anyhow!("unknown row `{s}`")))?;
                v.push(r);
            }
            v
        }
    };
    let opts = TableOptions {
        replicates: a.replicates,
        fit,
        glasso: true,
    };
    prepare_out(&a.out)?;
    let mut results = Vec::with_capacity(rows.len());
    let mut designs = Vec::with_capacity(rows.len());
    for row in rows {
        let mut design = table.design(row, a.seed);
        if let Some(s) = a.sigma {
            design.sigma = s;
        }
        let res = eval::run_table(&design, row.label, &opts, Some(&row.cells)).map_err(|e| Failure::Runtime(e.into()))?;
        designs.push(design);
        results.push(res);
    }
    print_table(a.table, &results);
    write_file(&a.out.join(format!("table{}.csv", a.table)), &eval::table_csv(&results))?;
    write_file(&a.out.join(format!("table{}_scores.csv", a.table)), &eval::scores_csv(&results))?;
    #[derive(Serialize)]
    struct Diag<'a> {
        row: &'a str,
        censoring_rate: f64,
        diagnostics: &'a subtype_bridge::bridge::FitDiagnostics,
    }
    let diags: Vec<Diag> = results
        .iter()
        .map(|r| Diag {
            row: &r.label,
            censoring_rate: r.censoring_rate,
            diagnostics: &r.diagnostics,
        })
        .collect();
    write_file(
        &a.out.join(format!("table{}_diagnostics.json", a.table)),
        &serde_json::to_string_pretty(&diags).map_err(anyhow::Error::from)?,
    )?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        designs: &'a [SimDesign],
        options: &'a TableOptions,
    }
    write_manifest(
        &a.out,
        "reproduce",
        threads,
        a,
        &Resolved {
            designs: &designs,
            options: &opts,
        },
    )?;
    Ok(())
}

fn stability(a: &ResampleArgs, threads: usize) -> Result<(), Failure> {
    let cfg = config(a.model.fit_config())?;
    if a.rounds == 0 || !(a.fraction > 0.0 && a.fraction < 1.0) {
        return Err(Failure::Config(anyhow!("need --rounds ≥ 1 and --fraction in (0, 1)")));
    }
    let (ms, _) = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let report = eval::occurrence_index(&ms, &cfg, a.rounds, a.fraction, a.seed).map_err(|e| Failure::Runtime(e.into()))?;
    write_file(&a.out.join("stability.csv"), &report.to_csv())?;
    println!(
        "{} of {} rounds used; pairs with occurrence index > 0:",
        report.rounds_used, report.rounds_requested
    );
    let mut hits: Vec<_> = report.entries.iter().filter(|e| e.index > 0.0).collect();
    hits.sort_by(|x, y| y.index.total_cmp(&x.index).then_with(|| x.gene.cmp(&y.gene)));
    for e in hits {
        println!("  {:<12} {:<10} {:.3}", e.gene, e.subtype, e.index);
    }
    write_manifest(&a.out, "stability", threads, a, &cfg)?;
    Ok(())
}

fn predict(a: &ResampleArgs, threads: usize) -> Result<(), Failure> {
    let cfg = config(a.model.fit_config())?;
    if a.rounds == 0 || !(a.fraction > 0.0 && a.fraction < 1.0) {
        return Err(Failure::Config(anyhow!("need --rounds ≥ 1 and --fraction in (0, 1)")));
    }
    let (ms, _) = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let report = eval::predict_evaluate(&ms, &cfg, a.rounds, a.fraction, a.seed).map_err(|e| Failure::Runtime(e.into()))?;
    write_file(&a.out.join("prediction.csv"), &report.to_csv())?;
    write_file(
        &a.out.join("prediction.json"),
        &serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?,
    )?;
    match report.mean_statistic {
        Some(s) => println!(
            "mean logrank statistic {s:.3} (p = {:.4}) over {} rounds, {} skipped",
            report.p_value.unwrap_or(1.0),
            report.rounds.len() - report.skipped,
            report.skipped
        ),
        None => println!("every round was skipped: predictions are non-informative"),
    }
    write_manifest(&a.out, "predict", threads, a, &cfg)?;
    Ok(())
}
