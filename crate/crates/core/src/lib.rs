//! Shapley-value attributions for pipelines of heterogeneous models.
//!
//! A [`Pipeline`] chains linear layers, elementwise activations, tree
//! ensembles, parallel blocks and output transforms. Each stage gets an
//! exact, per-output efficient attribution matrix; [`chain_engine`] pushes
//! those back to the inputs with the generalized rescale rule and averages
//! over a [`BaselineSet`]. [`shapley_oracle`] provides brute-force ground
//! truth for checking all of it.
//!
//! ```
//! use chainshap::{load_pipeline, BaselineSet, Explainer, Explicand};
//!
//! let pipeline = load_pipeline(
//!     r#"{"stages":[{"kind":"linear","weights":[[1.0,1.0]],"bias":[0.0]},
//!                   {"kind":"activation","activation":"relu"}]}"#,
//! )?;
//! let baselines = BaselineSet::from_samples(vec![vec![0.0, 0.0]])?;
//! let report = Explainer::new(&pipeline).explain(&Explicand::new("e", vec![2.0, 1.0]), &baselines)?;
//! assert_eq!(report.attributions, vec![2.0, 1.0]);
//! # Ok::<(), chainshap::Error>(())
//! ```

pub mod ablation;
pub mod baseline_select;
pub mod chain_engine;
pub mod cli;
pub mod data;
pub mod distributed;
pub mod error;
pub mod grouping;
pub mod model_ir;
pub mod numeric;
pub mod shapley_oracle;
pub mod stage_attributors;

pub use ablation::{ablation_curve, AblationCurve, AblationSign};
pub use baseline_select::{
    assign_baseline_cluster, kmeans_fit, uniform_sample, BaselineRegistry, BaselineSet,
    ClusterModel, KMeansConfig, Provenance,
};
pub use chain_engine::{
    chain_single_baseline, chain_with_distribution, ensemble_attr, hadamard_div, AttributionReport,
    ChainTrace, Explainer, Explicand,
};
pub use data::Dataset;
pub use error::{Error, Result};
pub use grouping::{group_attr, GroupAttribution, GroupSpec};
pub use model_ir::{load_pipeline, load_pipeline_file, splice, FeatureVector, Pipeline, Stage};
pub use shapley_oracle::{
    exact_shapley, interventional_shapley, kpartition_attribution, single_baseline_shapley,
    Partition, SetFunction,
};
pub use stage_attributors::{stage_attribution, StageAttribution};
