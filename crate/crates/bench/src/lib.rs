//! Fixtures shared by the solver benchmarks.

use subtype_bridge::kmw::{build_stacked, PcaMode};
use subtype_bridge::simgen::{CoeffCase, Correlation, SimContext, SimDesign, Sharing};
use subtype_bridge::StackedDesign;

/// Stacked design of one simulated replicate with `genes` genes of 5 SNPs.
pub fn simulated_design(genes: usize, correlation: Correlation, seed: u64) -> StackedDesign {
    let mut design = SimDesign::paper(correlation, CoeffCase::One, Sharing::Hetero25, seed);
    design.gene_sizes = vec![5; genes.max(6)];
    design.pilot_size = 20_000;
    let ctx = SimContext::new(&design).expect("valid design");
    let (study, _) = ctx.replicate(0).expect("replicate");
    build_stacked(&study, PcaMode::Auto, 0.9).expect("stacked design")
}
