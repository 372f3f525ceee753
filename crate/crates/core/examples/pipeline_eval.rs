//! Load a pipeline document, evaluate it with a per-stage trace, and build
//! spliced samples.
//!
//! Run with `cargo run --example pipeline_eval`.

use chainshap::model_ir::{load_pipeline, splice};

const PIPELINE: &str = r#"{
  "stages": [
    {"kind": "linear", "weights": [[1.0, 1.0]], "bias": [0.0]},
    {"kind": "activation", "activation": "relu"}
  ]
}"#;

const TREE: &str = r#"{
  "stages": [
    {"kind": "tree_ensemble", "input_width": 2, "trees": [
      {"root": 0, "nodes": [
        {"feature": 0, "threshold": 0.5, "left": 1, "right": 2},
        {"value": 0.0},
        {"feature": 1, "threshold": 0.5, "left": 3, "right": 4},
        {"value": 1.0},
        {"value": 3.0}
      ]}
    ]}
  ]
}"#;

pub fn run_example() -> chainshap::Result<()> {
    let relu = load_pipeline(PIPELINE)?;
    for x in [[2.0, 1.0], [-2.0, 1.0]] {
        let trace = relu.evaluate(&x)?;
        println!("relu(x1 + x2) at {x:?}: trace {:?}", trace.entries());
    }
    assert_eq!(relu.evaluate(&[-2.0, 1.0])?.output(), [0.0]);

    let tree = load_pipeline(TREE)?;
    let y = tree.predict(&[1.0, 1.0], None)?;
    println!("tree at (1, 1) = {y}");
    assert_eq!(y, 3.0);

    let explicand = [1.0, 2.0];
    let baseline = [9.0, 9.0];
    let hybrid = splice(&explicand, &baseline, &[0])?;
    println!("splice with S = {{0}}: {:?}", hybrid.values());
    assert_eq!(hybrid.values(), [1.0, 9.0]);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
