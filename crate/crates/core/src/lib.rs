//! Counterfactual explanations under a joint Gaussian prior over
//! (reference, counterfactual) pairs.
//!
//! Everything in this crate is pure computation over dense matrices and runs
//! without the standard library; file formats, the CLI and the threaded
//! benchmark runner live in the `cfprior` companion crate.

#![no_std]
// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod actionability;
pub mod codec;
pub mod datasets;
pub mod error;
pub mod gaussian;
pub mod generators;
pub mod laplace;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod optim;
pub mod posterior;
pub mod prior;
pub mod rng;
pub mod scm;

pub use actionability::{FeatureClass, FeaturePolicy, LinearConditional, SplitMap};
pub use codec::{fit_schema, FeatureKind, FeatureSchema, FeatureSpec, RawValue};
pub use error::{Error, Result};
pub use gaussian::{Gaussian, IndexSet};
pub use generators::{Candidate, GenRequest, GenResult, Metric, MetricKind};
pub use laplace::{laplace_class_prior, posterior_laplace, LaplaceClassPrior, LaplaceConfig};
pub use models::{Activation, Layer, SplitClassifier, TrainConfig};
pub use objective::{Fidelity, Objective, ObjectiveConfig, Variant};
pub use optim::{adam_minimize, AdamConfig, AdamOutcome};
pub use posterior::LinearLikelihood;
pub use prior::{DataPrior, JointCfPrior, PriorSource};
pub use scm::{LinearScm, ScmNode};
