//! Positive and negative ablation curves for chain attributions of a small
//! network.
//!
//! Run with `cargo run --example ablation_benchmark`.

use chainshap::ablation::{ablation_curve, AblationSign};
use chainshap::baseline_select::BaselineSet;
use chainshap::chain_engine::{Explainer, Explicand};
use chainshap::model_ir::load_pipeline;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> chainshap::Result<()> {
    let net = load_pipeline(
        r#"{"stages":[
            {"kind":"linear","weights":[[0.9,-0.4,0.2,0.0],[0.1,0.5,-0.8,0.6]],"bias":[0.0,0.1]},
            {"kind":"activation","activation":"sigmoid"},
            {"kind":"linear","weights":[[2.0,-1.5]],"bias":[0.0]}]}"#,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sample = || {
        (0..4)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect::<Vec<f64>>()
    };
    let baselines = BaselineSet::from_samples((0..8).map(|_| sample()).collect())?;
    let explicands: Vec<Vec<f64>> = (0..20).map(|_| sample()).collect();

    let explainer = Explainer::new(&net);
    let phi = explicands
        .iter()
        .enumerate()
        .map(|(i, x)| {
            Ok(explainer
                .explain(&Explicand::new(i.to_string(), x.clone()), &baselines)?
                .attributions)
        })
        .collect::<chainshap::Result<Vec<_>>>()?;
    let impute = baselines.mean()?;
    for sign in [AblationSign::Positive, AblationSign::Negative] {
        let curve = ablation_curve(&net, &explicands, None, &phi, &impute, sign, 4)?;
        print!("{}", curve.to_csv()?);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
