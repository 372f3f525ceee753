//! Explain a small MLP against a baseline distribution, in log-odds and in
//! probability space, and check both against the brute-force oracle.
//!
//! Run with `cargo run --example explain_mlp`.

use chainshap::baseline_select::BaselineSet;
use chainshap::chain_engine::{chain_with_distribution, Explicand};
use chainshap::model_ir::{load_pipeline, Stage, Transform, TransformStage};
use chainshap::shapley_oracle::interventional_shapley;

const MLP: &str = r#"{
  "stages": [
    {"kind": "linear", "weights": [[0.8, -0.5, 0.3], [-0.2, 0.9, 0.4]], "bias": [0.1, -0.3]},
    {"kind": "activation", "activation": "relu"},
    {"kind": "linear", "weights": [[1.2, -0.7]], "bias": [0.05]}
  ]
}"#;

pub fn run_example() -> chainshap::Result<()> {
    let logodds = load_pipeline(MLP)?;
    let mut probability = logodds.clone();
    probability.push(Stage::Transform(TransformStage::new(
        Transform::Sigmoid,
        1,
    )?))?;

    let baselines = BaselineSet::from_samples(vec![
        vec![0.0, 0.0, 0.0],
        vec![0.5, 1.0, -0.5],
        vec![-1.0, 0.2, 0.3],
        vec![0.3, -0.4, 1.1],
    ])?;
    let x = Explicand::new("patient-7", vec![1.5, -0.5, 0.8]);

    for (scale, pipeline) in [("log-odds", &logodds), ("probability", &probability)] {
        let report = chain_with_distribution(pipeline, &x, &baselines)?;
        let oracle = interventional_shapley(
            |v| pipeline.predict(v, None),
            &x.values,
            baselines.samples(),
        )?;
        println!(
            "{scale}: f(x) = {:.4}, E[f] = {:.4}",
            report.prediction, report.expected_value
        );
        for (i, name) in report.feature_names.iter().enumerate() {
            println!(
                "  {name}: chain {:+.5}  oracle {:+.5}",
                report.attributions[i], oracle[i]
            );
        }
        let total: f64 = report.attributions.iter().sum();
        assert!((total - (report.prediction - report.expected_value)).abs() < 1e-12);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
