// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod paths;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod initial_enlargement;
pub mod progressive_enlargement;
pub mod verify;
pub mod apps;
pub mod experiment;

/// Double precision aliases of the generic types.
pub type TimeGrid64 = paths::TimeGrid<f64>;
pub type PathBundle64 = paths::PathBundle<f64>;
pub type LevyModel64 = paths::LevyModel<f64>;
pub type VarianceSchedule64 = progressive_enlargement::VarianceSchedule<f64>;
pub type StructuralModel64 = apps::StructuralModel<f64>;
pub type KyleBackOutput64 = apps::KyleBackOutput<f64>;
