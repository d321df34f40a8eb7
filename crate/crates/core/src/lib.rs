//! Integrative gene selection for censored survival data observed across
//! several cancer subtypes.
//!
//! Each subtype contributes a Kaplan–Meier weighted least-squares loss for an
//! accelerated failure time model. Genes are selected with a composite penalty:
//! a bridge term across subtypes on top of a group-Lasso norm of each
//! (gene, subtype) SNP block, so a gene is either dropped entirely or kept for
//! the subset of subtypes it is associated with.
//!
//! Module map:
//!
//! - [`cohort`]: gene/SNP/subtype data model, CSV ingestion, missing-data filtering
//! - [`kmw`]: Kaplan–Meier weights, weighted centering, within-gene PCA, stacked design
//! - [`gcd`]: weighted group-Lasso solver (group coordinate descent) and the
//!   per-subtype group-Lasso comparator
//! - [`bridge`]: the alternating θ/β algorithm for the composite bridge penalty
//! - [`tune`]: BIC tuning with the approximate degrees of freedom
//! - [`simgen`]: seeded synthetic data generation
//! - [`eval`]: selection scoring, simulation tables, stability and prediction
//!
//! ```no_run
//! use subtype_bridge::{simgen, kmw, tune};
//!
//! let design = simgen::SimDesign::default();
//! let ctx = simgen::SimContext::new(&design).unwrap();
//! let (study, _truth) = ctx.replicate(0).unwrap();
//! let stacked = kmw::build_stacked(&study, kmw::PcaMode::Auto, 0.9).unwrap();
//! let report = tune::tune_fit(&stacked, &tune::TuneOptions::default()).unwrap();
//! println!("{:?}", report.best_fit().selected);
//! ```

pub mod bridge;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod gcd;
pub mod kmw;
pub mod linalg;
pub mod simgen;
pub mod tune;

pub use bridge::{BridgeConfig, FitResult};
pub use cohort::{GeneStructure, MultiStudy, SubtypeCohort};
pub use error::{Error, Result};
pub use gcd::{CoefficientSet, GroupWeights};
pub use kmw::{KmWeights, StackedDesign};
