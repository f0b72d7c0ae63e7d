//! Stabilized local explanations.
//!
//! The crate fits k-LASSO surrogates to a black-box model around one
//! instance (LIME) and, optionally, gates every LARS entry with a CLT test on
//! the top two correlations, growing the perturbation sample until each entry
//! is significant (S-LIME).

pub mod error;
pub mod explainer;
pub mod lars;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod repro;
pub mod rng;
pub mod sampling;
pub mod stability;

pub use error::{Error, Result};
pub use explainer::{
    lime_explain, run_with_reuse, slime_explain, ExplainerConfig, Explanation, Method, Regeneration,
    SelectedFeature,
};
pub use lars::{
    lars_lasso_path, refit_least_squares, standardize, standardize_with, AlwaysProceed, DesignMatrix,
    EntryContext, EntryDecision, EntryObserver, PathState, Scaling, SolverOptions, StandardizedDesign,
};
pub use metrics::{
    jaccard, lasso_ordering_experiment, positionwise_stability, repeat_explanations, BenchOutcome,
    Repetition, StabilityReport,
};
pub use model::{query_model, BlackBox, ModelFailure, ModelHandle};
pub use normal::{normal_quantile, normal_upper_tail};
pub use sampling::{gaussian_perturb, kernel_weights, InstanceSpec, Neighborhood, PerturbationDataset};
pub use stability::{
    entry_test, product_covariance, required_sample_size, ProductCovariance, TestDecision,
};
