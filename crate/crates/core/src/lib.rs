//! Capacity and information-rate estimation for run-length-limited
//! constraints in two and three dimensions.
//!
//! The pipeline places window kernels on a grid ([`grid`]), groups them into
//! a cluster-variation region graph ([`region`]), runs parent-to-child
//! generalized belief propagation ([`gbp`]) and turns the beliefs into a
//! region-based free energy and a capacity estimate ([`free_energy`]).
//! [`exact`] holds the exact counting oracles every approximate path is
//! checked against, [`sampler`] and [`info_rate`] estimate mutual
//! information rates over an AWGN channel, and [`experiment`] drives sweeps.

pub mod constraint;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod free_energy;
pub mod gbp;
pub mod grid;
pub mod info_rate;
pub mod region;
pub mod sampler;
pub mod shape;

pub use constraint::{build_kernels, is_admissible, AxisRule, BinaryArray, KernelKind, RllSpec, WindowKernel};
pub use error::{Error, Result};
pub use gbp::{belief_of, run_gbp, BeliefSet, GbpConfig, GbpPlan, Schedule};
pub use grid::{attach_evidence, build_factor_graph, EvidenceTable, FactorGraph};
pub use region::{build_region_graph, plan_basic_regions, validate_region_graph, RegionGraph};
pub use shape::GridShape;
