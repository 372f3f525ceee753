//! Group attributions with overlapping groups and a residual group.
//!
//! Run with `cargo run --example group_attribution`.

use chainshap::grouping::{group_attr, GroupSpec};

pub fn run_example() -> chainshap::Result<()> {
    let names: Vec<String> = ["geneA", "geneB", "geneC", "age"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let phi = [1.0, 2.0, 3.0, -0.5];
    let spec = GroupSpec::from_json(
        r#"{"groups": {"pathway1": ["geneA", "geneB"], "pathway2": ["geneB", "geneC"]}}"#,
        &names,
    )?;
    let g = group_attr(&phi, &spec)?;
    for (n, (raw, v)) in g.names.iter().zip(g.raw.iter().zip(&g.values)) {
        println!("{n:>9}: raw {raw:+.3}  rescaled {v:+.4}");
    }
    println!("factor {:.4}", g.factor);
    let total: f64 = phi.iter().sum();
    assert!((g.values.iter().sum::<f64>() - total).abs() < 1e-12);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
