//! A bank explains its model over two purchased scores. The fraud and
//! credit bureaus keep their models and features; only attribution scalars
//! and sample ids cross the wire. Runs once in-process and once over TCP,
//! and compares with the centralized chain on the stitched pipeline.
//!
//! Run with `cargo run --example distributed_scores`.

use std::sync::Arc;

use chainshap::baseline_select::{BaselineRegistry, BaselineSet};
use chainshap::chain_engine::{chain_with_distribution, Explicand};
use chainshap::data::Dataset;
use chainshap::distributed::{
    coordinate, stitch_pipeline, CoordinateOptions, LoopbackTransport, MetaModel, NodeServer,
    NodeService, ScoreSource, TcpTransport,
};
use chainshap::model_ir::load_pipeline;
use chainshap::numeric::max_relative_error;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn run_example() -> chainshap::Result<()> {
    let ids = names(&["c1", "c2", "c3", "c4", "c5"]);
    let fraud_model = load_pipeline(
        r#"{"stages":[{"kind":"linear","weights":[[1.2,-0.6]],"bias":[0.0]},
                      {"kind":"transform","transform":"sigmoid"}]}"#,
    )?;
    let credit_model = load_pipeline(
        r#"{"stages":[{"kind":"tree_ensemble","input_width":2,"trees":[
            {"root":0,"nodes":[{"feature":0,"threshold":0.3,"left":1,"right":2},
                               {"value":600},{"feature":1,"threshold":0.5,"left":3,"right":4},
                               {"value":680},{"value":760}]}]}]}"#,
    )?;
    let bank_model = load_pipeline(
        r#"{"stages":[{"kind":"linear","weights":[[-2.0,0.01,0.5]],"bias":[-6.0]},
                      {"kind":"transform","transform":"sigmoid"}]}"#,
    )?;

    let fraud_data = Dataset::new(
        ids.clone(),
        names(&["txn_velocity", "account_age"]),
        vec![
            vec![0.9, 0.1],
            vec![0.1, 2.0],
            vec![0.4, 0.5],
            vec![1.5, 0.2],
            vec![0.2, 1.0],
        ],
    )?;
    let credit_data = Dataset::new(
        ids.clone(),
        names(&["utilization", "history_len"]),
        vec![
            vec![0.2, 0.9],
            vec![0.8, 0.1],
            vec![0.5, 0.7],
            vec![0.1, 0.2],
            vec![0.6, 0.6],
        ],
    )?;

    let baselines_ids = names(&["c2", "c3", "c5"]);
    let mut registry = BaselineRegistry::new();
    registry.register(baselines_ids.clone());

    let fraud = Arc::new(
        NodeService::new("fraud-bureau", fraud_data.clone(), registry.clone())
            .with_full_model("fraud_score", fraud_model.clone())?,
    );
    let credit = Arc::new(
        NodeService::new("credit-bureau", credit_data.clone(), registry)
            .with_full_model("credit_score", credit_model.clone())?,
    );

    // The bank holds the purchased scores plus its own income feature.
    let income = [1.0, 3.5, 2.0, 0.5, 2.5];
    let rows: Vec<Vec<f64>> = ids
        .iter()
        .zip(income)
        .map(|(id, inc)| {
            Ok(vec![
                fraud.score("fraud_score", id)?,
                credit.score("credit_score", id)?,
                inc,
            ])
        })
        .collect::<chainshap::Result<_>>()?;
    let bank_data = Dataset::new(
        ids.clone(),
        names(&["fraud_score", "credit_score", "income"]),
        rows,
    )?;
    let meta = MetaModel {
        pipeline: bank_model,
        input_names: bank_data.feature_names().to_vec(),
    };
    let baselines = BaselineSet::from_dataset(&bank_data, &baselines_ids)?;
    let explicands: Vec<Explicand> = ["c1", "c4"]
        .iter()
        .map(|id| Ok(Explicand::new(*id, bank_data.get(id)?.to_vec())))
        .collect::<chainshap::Result<_>>()?;

    let mut loopback = LoopbackTransport::new();
    loopback.bind("fraud", Arc::clone(&fraud));
    loopback.bind("credit", Arc::clone(&credit));
    let mut nodes = vec![fraud.descriptor("fraud"), credit.descriptor("credit")];
    let local = coordinate(
        &meta,
        &nodes,
        &explicands,
        &baselines,
        &loopback,
        CoordinateOptions::default(),
    )?;
    println!(
        "{} frames exchanged; first: {}",
        loopback.captured().len(),
        loopback.captured()[0].request
    );

    let fraud_server = NodeServer::spawn("127.0.0.1:0", Arc::clone(&fraud))?;
    let credit_server = NodeServer::spawn("127.0.0.1:0", Arc::clone(&credit))?;
    nodes[0].endpoint = fraud_server.endpoint();
    nodes[1].endpoint = credit_server.endpoint();
    let remote = coordinate(
        &meta,
        &nodes,
        &explicands,
        &baselines,
        &TcpTransport::new(),
        CoordinateOptions::default(),
    )?;

    let sources = [
        ScoreSource {
            score: "fraud_score".into(),
            pipeline: fraud_model,
            features: fraud_data.feature_names().to_vec(),
        },
        ScoreSource {
            score: "credit_score".into(),
            pipeline: credit_model,
            features: credit_data.feature_names().to_vec(),
        },
    ];
    let (stitched, raw_names) = stitch_pipeline(&meta, &nodes, &sources)?;
    for ((a, b), e) in local.reports.iter().zip(&remote.reports).zip(&explicands) {
        let raw: Vec<f64> = raw_names
            .iter()
            .map(|n| match n.as_str() {
                "income" => bank_data.get(&e.id).map(|r| r[2]),
                _ if fraud_data.feature_index(n).is_ok() => fraud_data
                    .get(&e.id)
                    .map(|r| r[fraud_data.feature_index(n).unwrap()]),
                _ => credit_data
                    .get(&e.id)
                    .map(|r| r[credit_data.feature_index(n).unwrap()]),
            })
            .collect::<chainshap::Result<_>>()?;
        let raw_baselines = BaselineSet::new(
            baselines_ids
                .iter()
                .map(|id| {
                    let f = fraud_data.get(id)?;
                    let c = credit_data.get(id)?;
                    Ok(vec![f[0], f[1], c[0], c[1], bank_data.get(id)?[2]])
                })
                .collect::<chainshap::Result<_>>()?,
            baselines_ids.clone(),
            chainshap::baseline_select::Provenance::Explicit,
        )?;
        let central = chain_with_distribution(
            &stitched,
            &Explicand::new(e.id.clone(), raw),
            &raw_baselines,
        )?;
        println!("{}:", e.id);
        for (n, v) in a.feature_names.iter().zip(&a.attributions) {
            println!("  {n:>14}: {v:+.6}");
        }
        let err = max_relative_error(&a.attributions, &central.attributions);
        println!(
            "  loopback == tcp: {}, max relative error vs centralized: {err:.2e}",
            a == b
        );
        assert!(err <= 1e-9);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
