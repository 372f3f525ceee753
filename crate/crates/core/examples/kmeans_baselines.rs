//! Cluster a reference population on a reduced feature set and explain an
//! individual against the members of their nearest cluster.
//!
//! Run with `cargo run --example kmeans_baselines`.

use chainshap::baseline_select::{assign_baseline_cluster, kmeans_fit_dataset, KMeansConfig};
use chainshap::chain_engine::{chain_with_distribution, Explicand};
use chainshap::data::Dataset;
use chainshap::model_ir::load_pipeline;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> chainshap::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..120)
        .map(|_| {
            let age = rng.gen_range(20.0..80.0_f64);
            let sex = f64::from(rng.gen_bool(0.5));
            let bp = 90.0 + 0.6 * age + rng.gen_range(-10.0..10.0);
            vec![age, sex, bp]
        })
        .collect();
    let data = Dataset::from_rows(vec!["age".into(), "sex".into(), "bp".into()], rows)?;

    let config = KMeansConfig {
        k: 4,
        seed: 3,
        ..KMeansConfig::default()
    };
    let model = kmeans_fit_dataset(&data, &["age".into(), "sex".into()], &config)?;
    println!("objective history: {:?}", model.objective_history);

    let risk = load_pipeline(
        r#"{"stages":[{"kind":"linear","weights":[[0.04,0.3,0.02]],"bias":[-5.0]},
                      {"kind":"transform","transform":"sigmoid"}]}"#,
    )?;
    let person = Explicand::new("p", vec![67.0, 1.0, 150.0]);
    let cluster = assign_baseline_cluster(&model, &person.values[..2])?;
    let peers = model.baseline_set(&data, cluster)?;
    println!(
        "cluster {cluster} (centroid {:?}) has {} members",
        model.centroids[cluster],
        peers.len()
    );

    let report = chain_with_distribution(&risk, &person, &peers)?;
    for (n, v) in report.feature_names.iter().zip(&report.attributions) {
        println!("  {n}: {v:+.5}");
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
