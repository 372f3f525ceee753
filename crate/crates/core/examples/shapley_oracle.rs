//! Brute-force Shapley values and the k-partition family: one block is the
//! Rescale rule, a sign split is RevealCancel, singletons are exact.
//!
//! Run with `cargo run --example shapley_oracle`.

use chainshap::model_ir::Activation;
use chainshap::shapley_oracle::{
    exact_shapley, kpartition_attribution, single_baseline_shapley, Partition, SetFunction,
    SplitVariable,
};

pub fn run_example() -> chainshap::Result<()> {
    // Product game x1 * x2 at (2, 3) against (0, 0).
    let product = SetFunction::from_values(2, vec![0.0, 0.0, 0.0, 6.0])?;
    println!("product game: {:?}", exact_shapley(&product));

    let beta = [1.0, 1.0];
    let (xe, xb) = ([2.0, -1.0], [0.0, 0.0]);
    let relu = |x: &[f64]| Ok((x[0] + x[1]).max(0.0));
    let exact = single_baseline_shapley(relu, &xe, &xb)?;

    let rescale = kpartition_attribution(
        &beta,
        0.0,
        Activation::Relu,
        &Partition::whole(2)?,
        &xe,
        &xb,
    )?;
    let split = Partition::reveal_cancel(&beta, &xe, &xb, SplitVariable::Explicand)?;
    let reveal = kpartition_attribution(&beta, 0.0, Activation::Relu, &split, &xe, &xb)?;

    println!("exact Shapley   {exact:?}");
    println!("Rescale (K=1)   {:?}", rescale.values);
    println!("RevealCancel    {:?}", reveal.values);
    assert_eq!(rescale.values, vec![2.0, -1.0]);
    assert_eq!(reveal.values, exact);
    assert_eq!(
        rescale.values.iter().sum::<f64>(),
        exact.iter().sum::<f64>()
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
