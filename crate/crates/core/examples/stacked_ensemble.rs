//! Stacked generalization: two tree-ensemble base models on disjoint feature
//! slices, one raw feature passed through, and a linear meta-model. The
//! parallel block keeps the whole stack a single chain. Also combines two
//! explanations with ensemble weights.
//!
//! Run with `cargo run --example stacked_ensemble`.

use chainshap::baseline_select::BaselineSet;
use chainshap::chain_engine::{chain_with_distribution, ensemble_attr, Explicand};
use chainshap::model_ir::load_pipeline;

const STACK: &str = r#"{
  "stages": [
    {"kind": "parallel_block", "input_width": 5,
     "blocks": [
       {"inputs": [0, 1], "outputs": [0], "pipeline": {"stages": [
         {"kind": "tree_ensemble", "input_width": 2, "base_score": 0.1, "trees": [
           {"root": 0, "nodes": [
             {"feature": 0, "threshold": 0.0, "left": 1, "right": 2},
             {"value": -0.4},
             {"feature": 1, "threshold": 1.0, "left": 3, "right": 4},
             {"value": 0.2}, {"value": 0.9}]},
           {"root": 0, "nodes": [
             {"feature": 1, "threshold": 0.5, "left": 1, "right": 2},
             {"value": 0.3}, {"value": -0.1}]}
         ]}]}},
       {"inputs": [2, 3], "outputs": [1], "pipeline": {"stages": [
         {"kind": "linear", "weights": [[0.7, -1.1]], "bias": [0.0]},
         {"kind": "activation", "activation": "tanh"}]}}
     ],
     "passthrough": [[4, 2]]},
    {"kind": "linear", "weights": [[1.5, 0.8, -0.3]], "bias": [0.2]},
    {"kind": "transform", "transform": "sigmoid"}
  ]
}"#;

pub fn run_example() -> chainshap::Result<()> {
    let stack = load_pipeline(STACK)?;
    let baselines = BaselineSet::from_samples(vec![
        vec![-0.5, 0.0, 0.1, 0.2, 1.0],
        vec![0.5, 2.0, -0.3, 0.4, 0.0],
        vec![1.0, 0.3, 0.0, -1.0, 2.0],
    ])?;
    let x = Explicand::new("applicant", vec![0.8, 1.4, 0.5, -0.2, 1.5]);
    let report = chain_with_distribution(&stack, &x, &baselines)?;
    println!(
        "stack output {:.4} vs expected {:.4}",
        report.prediction, report.expected_value
    );
    for (n, v) in report.feature_names.iter().zip(&report.attributions) {
        println!("  {n}: {v:+.5}");
    }
    let err = report.efficiency_error();
    assert!(err < 1e-12, "efficiency error {err}");

    // Averaging the same explanation with itself changes nothing.
    let same = ensemble_attr(&[(0.5, &report), (0.5, &report)])?;
    assert_eq!(same.attributions, report.attributions);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
