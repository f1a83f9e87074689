//! Necessary and sufficient explanatory factors for individual predictions
//! of a binary classifier.
//!
//! An explanation run is parameterized by a [`lens::Basis`]: a target model,
//! a context distribution over augmented points, a finite factor space and a
//! partial order on it. [`lens::minimal_sufficient_factors`] searches the
//! space in topological order and returns every factor whose probability of
//! sufficiency reaches the threshold while no preferred factor does, together
//! with the cumulative probability of necessity of the result.
//!
//! The [`causation`] module expresses Shapley values, anchor precision,
//! counterfactual recourse and probabilities of causation through the same
//! sufficiency measure.

pub mod causation;
pub mod context;
pub mod data;
pub mod error;
pub mod factor;
pub mod lens;
pub mod model;
pub mod order;
mod rational;

pub use context::{AugmentedPoint, Aux, Context, Materialize, Scm, WeightedPoint};
pub use data::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, Instance};
pub use error::{Error, Result};
pub use factor::{Atom, AtomOp, Factor, FactorSpace};
pub use lens::{Basis, EstimationConfig, ExplanationReport};
pub use model::Model;
pub use order::{CostFn, PartialOrder};
