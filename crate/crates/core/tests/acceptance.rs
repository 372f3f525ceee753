//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chainshap::ablation::{ablate_row, ablation_curve, AblationSign};
use chainshap::baseline_select::{
    assign_baseline_cluster, kmeans_fit, BaselineRegistry, BaselineSet, KMeansConfig, Provenance,
};
use chainshap::chain_engine::{
    chain_single_baseline, chain_with_distribution, Explainer, Explicand,
};
use chainshap::data::Dataset;
use chainshap::distributed::{
    coordinate, decode_message, encode_message, stitch_pipeline, CoordinateOptions,
    LoopbackTransport, Message, MetaModel, NodeServer, NodeService, ScoreAttributionRequest,
    ScoreSource, TcpTransport, Transport,
};
use chainshap::grouping::{group_attr, GroupSpec};
use chainshap::model_ir::{Activation, LinearStage, Pipeline, PipelineDoc, Stage};
use chainshap::numeric::{affine, max_relative_error, mean, pairwise_mean, sum_relative_error};
use chainshap::shapley_oracle::{
    interventional_shapley, kpartition_attribution, single_baseline_shapley, Partition,
    SplitVariable,
};
use chainshap::stage_attributors::tree_stage_attr;
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: chainshap::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Linear pipelines: chain equals brute-force interventional Shapley.
fn linear_exactness() -> Check {
    let mut rng = rng(101);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let m = rng.gen_range(1..=8);
        let depth = rng.gen_range(1..=4);
        let p = linear_pipeline(&mut rng, m, depth);
        let set = lib(BaselineSet::from_samples(samples(&mut rng, 5, m)))?;
        let xe = vector(&mut rng, m, 2.0);
        let report = lib(chain_with_distribution(
            &p,
            &Explicand::new("e", xe.clone()),
            &set,
        ))?;
        let oracle = lib(interventional_shapley(
            |x| p.predict(x, None),
            &xe,
            set.samples(),
        ))?;
        let err = max_relative_error(&report.attributions, &oracle);
        worst = worst.max(err);
        ensure(err <= 1e-9, || {
            format!("trial {trial}: relative error {err:e}")
        })?;
    }
    Ok(format!("max relative error {worst:.2e}"))
}

/// Mixed pipelines: every intermediate attribution sums to the output delta.
fn layerwise_efficiency() -> Check {
    let mut rng = rng(202);
    let (mut worst, mut pairs, mut stages, mut redraws) = (0.0_f64, 0, 0, 0);
    let mut trees = 0;
    for trial in 0..200 {
        let (p, points, label) = loop {
            let m = rng.gen_range(1..=10);
            let labeled = rng.gen_bool(0.2);
            let p = mixed_pipeline(&mut rng, m, 6, labeled);
            let label = p.requires_label().then(|| f64::from(rng.gen_bool(0.5)));
            let points = samples(&mut rng, 10, m);
            // Draws where a logit or loss sees a saturated probability are
            // outside the model's domain, not chain failures.
            if points.iter().all(|x| p.predict(x, label).is_ok()) {
                break (p, points, label);
            }
            redraws += 1;
        };
        trees += p
            .stages()
            .iter()
            .filter(|s| matches!(s, Stage::TreeEnsemble(_)))
            .count();
        stages += p.len();
        for pair in points.chunks(2) {
            let trace = chain_single_baseline(&p, &pair[0], &pair[1], label)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            for (i, psi) in trace.psi.iter().enumerate() {
                let err = sum_relative_error(psi, trace.final_delta);
                worst = worst.max(err);
                ensure(err <= 1e-8, || {
                    format!(
                        "trial {trial} stage {i}: sum {} vs delta {} ({err:e})",
                        psi.iter().sum::<f64>(),
                        trace.final_delta
                    )
                })?;
            }
            pairs += 1;
        }
    }
    ensure(pairs == 1000, || format!("{pairs} pairs"))?;
    Ok(format!(
        "{pairs} pairs, {stages} stages ({trees} tree ensembles), {redraws} out-of-domain redraws, max error {worst:.2e}"
    ))
}

/// The distributional value is the mean of single-baseline values.
fn baseline_decomposition() -> Check {
    let mut rng = rng(303);
    let mut worst = 0.0_f64;
    for trial in 0..50 {
        let m = rng.gen_range(1..=8);
        let p = loop {
            let p = mixed_pipeline(&mut rng, m, 4, false);
            if p.stages().iter().any(|s| !matches!(s, Stage::Linear(_))) {
                break p;
            }
        };
        let n = rng.gen_range(1..=6);
        let baselines = samples(&mut rng, n, m);
        let xe = vector(&mut rng, m, 2.0);
        let f = |x: &[f64]| p.predict(x, None);

        let oracle = lib(interventional_shapley(f, &xe, &baselines))?;
        let mut manual = vec![0.0; m];
        for xb in &baselines {
            for (acc, v) in manual
                .iter_mut()
                .zip(lib(single_baseline_shapley(f, &xe, xb))?)
            {
                *acc += v;
            }
        }
        manual.iter_mut().for_each(|v| *v /= n as f64);
        let err = max_relative_error(&oracle, &manual);
        worst = worst.max(err);
        ensure(err <= 1e-9, || {
            format!("trial {trial}: oracle decomposition error {err:e}")
        })?;

        let set = lib(BaselineSet::from_samples(baselines.clone()))?;
        let report = lib(Explainer::new(&p)
            .retain_traces(true)
            .explain(&Explicand::new("e", xe.clone()), &set))?;
        let own: Vec<Vec<f64>> = baselines
            .iter()
            .map(|xb| chain_single_baseline(&p, &xe, xb, None).map(|t| t.attribution().to_vec()))
            .collect::<chainshap::Result<_>>()
            .map_err(|e| e.to_string())?;
        ensure(report.attributions == pairwise_mean(&own), || {
            format!("trial {trial}: chain mean differs")
        })?;
        let traces = report.traces.as_ref().ok_or("traces missing")?;
        ensure(
            traces
                .iter()
                .map(|t| t.attribution().to_vec())
                .collect::<Vec<_>>()
                == own,
            || format!("trial {trial}: retained traces differ"),
        )?;
    }
    Ok(format!(
        "max oracle decomposition error {worst:.2e}; chain means bit-identical"
    ))
}

/// Tree attributions against the full subset enumeration.
fn tree_oracle() -> Check {
    let mut rng = rng(404);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let m = rng.gen_range(1..=10);
        let Stage::TreeEnsemble(ensemble) = tree_ensemble(&mut rng, m, 5, 1) else {
            unreachable!()
        };
        let xe = vector(&mut rng, m, 2.0);
        let xb = vector(&mut rng, m, 2.0);
        let fast = lib(tree_stage_attr(&ensemble, &xe, &xb))?.matrix.column(0);
        let full = lib(single_baseline_shapley(
            |x| Ok(ensemble.predict(x)),
            &xe,
            &xb,
        ))?;
        let err = fast
            .iter()
            .zip(&full)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        ensure(err <= 1e-10, || format!("trial {trial}: abs error {err:e}"))?;
    }
    Ok(format!("max abs error {worst:.2e}"))
}

/// One block reproduces the chain, singletons reproduce exact Shapley.
fn kpartition_correspondence() -> Check {
    let mut rng = rng(505);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let m = rng.gen_range(1..=8);
        let beta = vector(&mut rng, m, 1.5);
        let bias = rng.gen_range(-0.5..0.5);
        let f = *[Activation::Relu, Activation::Sigmoid, Activation::Tanh]
            .choose(&mut rng)
            .unwrap();
        let xe = vector(&mut rng, m, 2.0);
        let xb = vector(&mut rng, m, 2.0);

        let whole = lib(kpartition_attribution(
            &beta,
            bias,
            f,
            &lib(Partition::whole(m))?,
            &xe,
            &xb,
        ))?;
        let chain = lib(Pipeline::new(vec![
            Stage::Linear(lib(LinearStage::new(vec![beta.clone()], vec![bias]))?),
            activation(f, 1),
        ]))?;
        let trace = lib(chain_single_baseline(&chain, &xe, &xb, None))?;
        ensure(whole.values == trace.attribution(), || {
            format!(
                "trial {trial}: K=1 {:?} vs chain {:?}",
                whole.values,
                trace.attribution()
            )
        })?;

        let singles = lib(kpartition_attribution(
            &beta,
            bias,
            f,
            &lib(Partition::singletons(m))?,
            &xe,
            &xb,
        ))?;
        let exact = lib(single_baseline_shapley(
            |x| Ok(f.apply(affine(&beta, bias, x))),
            &xe,
            &xb,
        ))?;
        let err = max_relative_error(&singles.values, &exact);
        worst = worst.max(err);
        ensure(err <= 1e-10, || format!("trial {trial}: K=m error {err:e}"))?;
    }

    let (beta, xe, xb) = ([1.0, 1.0], [2.0, -1.0], [0.0, 0.0]);
    let rescale = lib(kpartition_attribution(
        &beta,
        0.0,
        Activation::Relu,
        &lib(Partition::whole(2))?,
        &xe,
        &xb,
    ))?;
    let split = lib(Partition::reveal_cancel(
        &beta,
        &xe,
        &xb,
        SplitVariable::Explicand,
    ))?;
    let reveal = lib(kpartition_attribution(
        &beta,
        0.0,
        Activation::Relu,
        &split,
        &xe,
        &xb,
    ))?;
    let oracle = lib(single_baseline_shapley(
        |x| Ok((x[0] + x[1]).max(0.0)),
        &xe,
        &xb,
    ))?;
    ensure(rescale.values == [2.0, -1.0], || {
        format!("Rescale gave {:?}", rescale.values)
    })?;
    ensure(oracle == [1.5, -0.5], || format!("oracle gave {oracle:?}"))?;
    ensure(reveal.values == [1.5, -0.5], || {
        format!("RevealCancel gave {:?}", reveal.values)
    })?;
    ensure(
        rescale.values.iter().sum::<f64>() == 1.0 && oracle.iter().sum::<f64>() == 1.0,
        || "sums differ from 1".into(),
    )?;
    Ok(format!(
        "K=1 bit-identical to chain; K=m max error {worst:.2e}; (2,-1) vs (1.5,-0.5) reproduced"
    ))
}

fn group_efficiency() -> Check {
    let mut rng = rng(606);
    let mut worst = 0.0_f64;
    for trial in 0..500 {
        let m = rng.gen_range(2..=12);
        let phi = vector(&mut rng, m, 3.0);
        let total: f64 = phi.iter().sum();

        let n = rng.gen_range(1..=4);
        let names: Vec<String> = (0..n).map(|g| format!("g{g}")).collect();
        let sets: Vec<(&str, Vec<usize>)> = names
            .iter()
            .map(|name| {
                let size = rng.gen_range(1..=m);
                let mut members: Vec<usize> = (0..m).collect();
                members.shuffle(&mut rng);
                members.truncate(size);
                (name.as_str(), members)
            })
            .collect();
        let spec = lib(GroupSpec::from_sets(sets, m))?;
        let g = lib(group_attr(&phi, &spec))?;
        ensure(!g.unnormalizable_overlap, || {
            format!("trial {trial}: overlap not normalizable")
        })?;
        let err = sum_relative_error(&g.values, total);
        worst = worst.max(err);
        ensure(err <= 1e-10, || {
            format!("trial {trial}: group sum error {err:e}")
        })?;

        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let cuts = rng.gen_range(1..=m.min(4));
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); cuts];
        for (j, i) in order.into_iter().enumerate() {
            blocks[if j < cuts { j } else { rng.gen_range(0..cuts) }].push(i);
        }
        let names: Vec<String> = (0..cuts).map(|b| format!("b{b}")).collect();
        let spec = lib(GroupSpec::from_sets(
            names
                .iter()
                .map(String::as_str)
                .zip(blocks.clone())
                .collect(),
            m,
        ))?;
        let d = lib(group_attr(&phi, &spec))?;
        ensure(d.factor == 1.0 && d.values == d.raw, || {
            format!("trial {trial}: disjoint cover rescaled")
        })?;
        for (b, members) in blocks.iter().enumerate() {
            let own: f64 = members.iter().map(|&i| phi[i]).sum();
            ensure(d.values[b] == own, || {
                format!("trial {trial}: block {b} {} vs {own}", d.values[b])
            })?;
        }
        ensure(d.values[cuts] == 0.0, || {
            "non-empty residual on a cover".into()
        })?;
    }
    let spec = lib(GroupSpec::from_sets(
        vec![("G1", vec![0, 1]), ("G2", vec![1, 2])],
        3,
    ))?;
    let g = lib(group_attr(&[1.0, 2.0, 3.0], &spec))?;
    ensure(g.raw[..2] == [3.0, 5.0] && g.factor == 0.75, || {
        format!("raw {:?} factor {}", g.raw, g.factor)
    })?;
    ensure(g.values[..2] == [2.25, 3.75], || {
        format!("worked example gave {:?}", g.values)
    })?;
    Ok(format!(
        "max group sum error {worst:.2e}; worked example (2.25, 3.75)"
    ))
}

fn ablation_correctness() -> Check {
    let mut rng = rng(707);
    // Closed form on integer data, where every operation is exact.
    for trial in 0..100 {
        let m = rng.gen_range(1..=8);
        let beta: Vec<f64> = (0..m).map(|_| f64::from(rng.gen_range(-3..=3))).collect();
        let bias = f64::from(rng.gen_range(-3..=3));
        let p = lib(Pipeline::new(vec![Stage::Linear(lib(LinearStage::new(
            vec![beta.clone()],
            vec![bias],
        ))?)]))?;
        let n = rng.gen_range(1..=6);
        let int_vec = |rng: &mut ChaCha8Rng, lo: i32, hi: i32| -> Vec<f64> {
            (0..m).map(|_| f64::from(rng.gen_range(lo..=hi))).collect()
        };
        let rows: Vec<Vec<f64>> = (0..n).map(|_| int_vec(&mut rng, -5, 5)).collect();
        let phi: Vec<Vec<f64>> = (0..n).map(|_| int_vec(&mut rng, -2, 2)).collect();
        let impute = int_vec(&mut rng, -5, 5);
        for sign in [
            AblationSign::Positive,
            AblationSign::Negative,
            AblationSign::All,
        ] {
            let curve = lib(ablation_curve(&p, &rows, None, &phi, &impute, sign, m))?;
            for k in 0..=m {
                let mut total = 0.0;
                for (x, row_phi) in rows.iter().zip(&phi) {
                    let mut eligible: Vec<usize> = (0..m)
                        .filter(|&i| match sign {
                            AblationSign::Positive => row_phi[i] > 0.0,
                            AblationSign::Negative => row_phi[i] < 0.0,
                            AblationSign::All => true,
                        })
                        .collect();
                    // Stable sort keeps lower indices first among ties.
                    match sign {
                        AblationSign::Negative => {
                            eligible.sort_by(|&a, &b| row_phi[a].partial_cmp(&row_phi[b]).unwrap())
                        }
                        _ => {
                            eligible.sort_by(|&a, &b| row_phi[b].partial_cmp(&row_phi[a]).unwrap())
                        }
                    }
                    let mut y = bias + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                    for &i in eligible.iter().take(k) {
                        y -= beta[i] * (x[i] - impute[i]);
                    }
                    total += y;
                }
                let expected = total / n as f64;
                ensure(curve.mean_output[k] == expected, || {
                    format!(
                        "trial {trial} {sign} k={k}: {} vs closed form {expected}",
                        curve.mean_output[k]
                    )
                })?;
            }
        }
    }

    // k = 0, nesting and saturation on non-linear models.
    for trial in 0..100 {
        let m = rng.gen_range(1..=8);
        let p = mixed_pipeline(&mut rng, m, 4, false);
        let n = rng.gen_range(1..=6);
        let rows = samples(&mut rng, n, m);
        let phi: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if rng.gen_bool(0.2) {
                            0.0
                        } else {
                            rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let impute = vector(&mut rng, m, 2.0);
        let unablated: Vec<f64> = rows
            .iter()
            .map(|x| p.predict(x, None))
            .collect::<chainshap::Result<_>>()
            .map_err(|e| e.to_string())?;
        for sign in [
            AblationSign::Positive,
            AblationSign::Negative,
            AblationSign::All,
        ] {
            let curve = lib(ablation_curve(&p, &rows, None, &phi, &impute, sign, m))?;
            ensure(curve.mean_output.len() == m + 1, || "curve length".into())?;
            ensure(curve.mean_output[0] == mean(&unablated), || {
                format!("trial {trial}: k=0 differs")
            })?;
            for (r, (x, row_phi)) in rows.iter().zip(&phi).enumerate() {
                let order = chainshap::ablation::ablation_order(row_phi, sign);
                let eligible = row_phi
                    .iter()
                    .filter(|v| match sign {
                        AblationSign::Positive => **v > 0.0,
                        AblationSign::Negative => **v < 0.0,
                        AblationSign::All => true,
                    })
                    .count();
                let marker: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
                let mut previous: BTreeSet<usize> = BTreeSet::new();
                for k in 0..=m {
                    let ablated: BTreeSet<usize> = ablate_row(x, &order, &marker, k)
                        .iter()
                        .enumerate()
                        .filter(|(i, v)| **v != x[*i])
                        .map(|(i, _)| i)
                        .collect();
                    ensure(previous.is_subset(&ablated), || {
                        format!("trial {trial} row {r}: not nested at k={k}")
                    })?;
                    ensure(ablated.len() == k.min(eligible), || {
                        format!("trial {trial} row {r}: {} ablated at k={k}", ablated.len())
                    })?;
                    ensure(curve.ablated[k][r] == k.min(eligible), || {
                        format!("trial {trial} row {r}: reported count")
                    })?;
                    previous = ablated;
                }
            }
            let saturated: usize = phi
                .iter()
                .map(|row| {
                    row.iter()
                        .filter(|v| match sign {
                            AblationSign::Positive => **v > 0.0,
                            AblationSign::Negative => **v < 0.0,
                            AblationSign::All => true,
                        })
                        .count()
                })
                .max()
                .unwrap_or(0);
            for k in saturated..m {
                ensure(curve.mean_output[k + 1] == curve.mean_output[k], || {
                    format!("trial {trial}: curve moves after saturation")
                })?;
            }
            if sign == AblationSign::All {
                let target = lib(p.predict(&impute, None))?;
                ensure(
                    (curve.mean_output[m] - target).abs() <= 1e-12 * target.abs().max(1.0),
                    || {
                        format!(
                            "trial {trial}: full replacement {} vs f(impute) {target}",
                            curve.mean_output[m]
                        )
                    },
                )?;
            }
        }
    }
    Ok(
        "closed form exact on 100 linear models; k=0, nesting and saturation on 100 random models"
            .into(),
    )
}

struct Stack {
    meta: MetaModel,
    nodes: Vec<Arc<NodeService>>,
    sources: Vec<ScoreSource>,
    node_data: Vec<Dataset>,
    own: Dataset,
    meta_data: Dataset,
    baseline_ids: Vec<String>,
    explicands: Vec<Explicand>,
}

fn random_stack(rng: &mut ChaCha8Rng, tag: usize) -> Result<Stack, String> {
    let n_samples = 14;
    let ids: Vec<String> = (0..n_samples).map(|i| format!("s{i}")).collect();
    let widths = [rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let own_width = rng.gen_range(0..=(12 - widths[0] - widths[1]).min(3));
    let n_baselines = rng.gen_range(1..=8);
    let mut shuffled = ids.clone();
    shuffled.shuffle(rng);
    let baseline_ids: Vec<String> = shuffled[..n_baselines].to_vec();
    let mut registry = BaselineRegistry::new();
    registry.register(baseline_ids.clone());

    let mut nodes = Vec::new();
    let mut sources = Vec::new();
    let mut node_data = Vec::new();
    for (n, &w) in widths.iter().enumerate() {
        let names: Vec<String> = (0..w).map(|j| format!("t{tag}n{n}f{j}")).collect();
        let data = lib(Dataset::new(
            ids.clone(),
            names.clone(),
            samples(rng, n_samples, w),
        ))?;
        let model = loop {
            let p = mixed_pipeline(rng, w, 4, false);
            if data.rows().iter().all(|x| p.predict(x, None).is_ok()) {
                break p;
            }
        };
        let score = format!("score{n}");
        let node = lib(
            NodeService::new(format!("node{n}"), data.clone(), registry.clone())
                .with_full_model(&score, model.clone()),
        )?;
        sources.push(ScoreSource {
            score,
            pipeline: model,
            features: names,
        });
        nodes.push(Arc::new(node));
        node_data.push(data);
    }
    let own_names: Vec<String> = (0..own_width).map(|j| format!("t{tag}own{j}")).collect();
    let own = lib(Dataset::new(
        ids.clone(),
        own_names.clone(),
        samples(rng, n_samples, own_width),
    ))?;

    // Meta inputs: both scores and the own features, in shuffled order.
    let mut input_names: Vec<String> = vec!["score0".into(), "score1".into()];
    input_names.extend(own_names.iter().cloned());
    input_names.shuffle(rng);
    let width = input_names.len();
    let hidden = rng.gen_range(1..=4);
    let f = *[Activation::Relu, Activation::Tanh, Activation::Sigmoid]
        .choose(rng)
        .unwrap();
    let mut stages = vec![
        linear(rng, width, hidden),
        activation(f, hidden),
        linear(rng, hidden, 1),
    ];
    if rng.gen_bool(0.5) {
        stages.push(transform(chainshap::model_ir::Transform::Sigmoid));
    }
    let meta = MetaModel {
        pipeline: lib(Pipeline::new(stages))?,
        input_names: input_names.clone(),
    };

    let meta_rows: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            input_names
                .iter()
                .map(|name| match name.as_str() {
                    "score0" => nodes[0].score("score0", id),
                    "score1" => nodes[1].score("score1", id),
                    other => own.get(id).map(|r| r[own.feature_index(other).unwrap()]),
                })
                .collect::<chainshap::Result<Vec<f64>>>()
        })
        .collect::<chainshap::Result<_>>()
        .map_err(|e| e.to_string())?;
    let meta_data = lib(Dataset::new(ids.clone(), input_names, meta_rows))?;
    let explicands = shuffled[n_baselines..n_baselines + 3]
        .iter()
        .map(|id| Explicand::new(id.clone(), meta_data.get(id).unwrap().to_vec()))
        .collect();
    Ok(Stack {
        meta,
        nodes,
        sources,
        node_data,
        own,
        meta_data,
        baseline_ids,
        explicands,
    })
}

impl Stack {
    fn raw_row(&self, names: &[String], id: &str) -> Vec<f64> {
        names
            .iter()
            .map(|name| {
                for d in self.node_data.iter().chain([&self.own]) {
                    if let Ok(i) = d.feature_index(name) {
                        return d.get(id).unwrap()[i];
                    }
                }
                panic!("feature {name} owned by nobody")
            })
            .collect()
    }
}

const PARAMETER_FIELDS: [&str; 12] = [
    "weights",
    "bias",
    "threshold",
    "trees",
    "nodes",
    "leaf",
    "value\":[",
    "stages",
    "activation",
    "tree_weights",
    "base_score",
    "passthrough",
];

fn scan_frames(
    stack: &Stack,
    captured: &[chainshap::distributed::CapturedFrame],
) -> Result<(), String> {
    let request_keys = [
        "v",
        "type",
        "baseline_set",
        "explicand",
        "baseline",
        "score",
        "value",
    ];
    for frame in captured {
        let node = stack
            .nodes
            .iter()
            .position(|n| frame.endpoint == n.id())
            .ok_or("unknown endpoint")?;
        for text in [&frame.request, &frame.response] {
            for field in PARAMETER_FIELDS {
                ensure(!text.contains(field), || {
                    format!("frame carries `{field}`: {text}")
                })?;
            }
        }
        let req: serde_json::Value =
            serde_json::from_str(&frame.request).map_err(|e| e.to_string())?;
        let keys: Vec<&str> = req
            .as_object()
            .ok_or("request not an object")?
            .keys()
            .map(String::as_str)
            .collect();
        ensure(keys == request_keys, || format!("request keys {keys:?}"))?;
        let Message::Response(resp) = decode_message(&frame.response).map_err(|e| e.to_string())?
        else {
            return Err(format!("non-response frame {}", frame.response));
        };
        let owned = stack.node_data[node].feature_names();
        for (name, _) in &resp.attrs {
            ensure(owned.contains(name), || {
                format!("response names foreign feature {name}")
            })?;
        }
        // The coordinator's own raw values never leave it.
        for id in [&resp.explicand, &resp.baseline] {
            for v in stack.own.get(id).map_err(|e| e.to_string())? {
                let text = format!("{v:.16e}");
                ensure(!frame.request.contains(&text), || {
                    format!("request leaks own feature value {text}")
                })?;
            }
        }
    }
    Ok(())
}

fn distributed_equivalence() -> Check {
    let mut rng = rng(808);
    let mut worst = 0.0_f64;
    let mut frames = 0;
    for trial in 0..12 {
        let stack = random_stack(&mut rng, trial)?;
        let baselines = lib(BaselineSet::from_dataset(
            &stack.meta_data,
            &stack.baseline_ids,
        ))?;
        let mut loopback = LoopbackTransport::new();
        let mut registry = Vec::new();
        for node in &stack.nodes {
            loopback.bind(node.id(), Arc::clone(node));
            registry.push(node.descriptor(node.id()));
        }
        let local = lib(coordinate(
            &stack.meta,
            &registry,
            &stack.explicands,
            &baselines,
            &loopback,
            CoordinateOptions::default(),
        ))?;
        ensure(local.failures.is_empty(), || {
            format!("trial {trial}: {:?}", local.failures)
        })?;

        let servers = stack
            .nodes
            .iter()
            .map(|n| NodeServer::spawn("127.0.0.1:0", Arc::clone(n)))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let tcp_registry: Vec<_> = stack
            .nodes
            .iter()
            .zip(&servers)
            .map(|(n, s)| n.descriptor(s.endpoint()))
            .collect();
        let tcp = TcpTransport::new();
        let remote = lib(coordinate(
            &stack.meta,
            &tcp_registry,
            &stack.explicands,
            &baselines,
            &tcp,
            CoordinateOptions::default(),
        ))?;
        ensure(remote.failures.is_empty(), || {
            format!("trial {trial}: {:?}", remote.failures)
        })?;
        ensure(remote.reports == local.reports, || {
            format!("trial {trial}: TCP and loopback differ")
        })?;

        let (stitched, raw_names) = lib(stitch_pipeline(&stack.meta, &registry, &stack.sources))?;
        ensure(raw_names == local.feature_names, || {
            "raw feature order differs".into()
        })?;
        let raw_baselines = lib(BaselineSet::new(
            stack
                .baseline_ids
                .iter()
                .map(|id| stack.raw_row(&raw_names, id))
                .collect(),
            stack.baseline_ids.clone(),
            Provenance::Explicit,
        ))?;
        for report in &local.reports {
            let e = Explicand::new(
                report.explicand_id.clone(),
                stack.raw_row(&raw_names, &report.explicand_id),
            );
            let central = lib(chain_with_distribution(&stitched, &e, &raw_baselines))?;
            let err = max_relative_error(&report.attributions, &central.attributions);
            worst = worst.max(err);
            ensure(err <= 1e-9, || {
                format!("trial {trial} {}: error {err:e}", report.explicand_id)
            })?;
            ensure(
                (report.prediction - central.prediction).abs()
                    <= 1e-12 * central.prediction.abs().max(1.0),
                || "prediction differs".into(),
            )?;
        }

        let captured = loopback.captured();
        frames += captured.len();
        scan_frames(&stack, &captured)?;

        // A baseline set the nodes never registered is refused.
        let mut stale_ids = stack.baseline_ids.clone();
        stale_ids.push(stack.explicands[0].id.clone());
        let stale = lib(BaselineSet::from_dataset(&stack.meta_data, &stale_ids))?;
        let refused = lib(coordinate(
            &stack.meta,
            &registry,
            &stack.explicands,
            &stale,
            &loopback,
            CoordinateOptions::default(),
        ))?;
        ensure(
            refused.reports.is_empty() && refused.failures.len() == stack.explicands.len(),
            || "stale set accepted".into(),
        )?;
        ensure(
            refused
                .failures
                .iter()
                .all(|f| f.error.contains("baseline set mismatch")),
            || format!("unexpected refusal {:?}", refused.failures[0]),
        )?;
        let frame = encode_message(&Message::Request(ScoreAttributionRequest {
            baseline_set: baselines.id().into(),
            explicand: stack.explicands[0].id.clone(),
            baseline: stack.explicands[1].id.clone(),
            score: "score0".into(),
            value: 1.0,
        }))
        .map_err(|e| e.to_string())?;
        let reply = tcp
            .call(&tcp_registry[0].endpoint, &frame)
            .map_err(|e| e.to_string())?;
        ensure(reply.contains("\"code\":\"baseline_mismatch\""), || {
            format!("non-member baseline answered: {reply}")
        })?;
    }
    Ok(format!(
        "12 stacks over loopback and TCP, max error {worst:.2e}, {frames} frames scanned"
    ))
}

fn kmeans_checks() -> Check {
    let mut rng = rng(909);
    for trial in 0..50 {
        let width = rng.gen_range(1..=4);
        let n_centres = rng.gen_range(1..=5);
        let centres = samples(&mut rng, n_centres, width);
        let n = rng.gen_range(10..=80);
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = centres.choose(&mut rng).unwrap();
                c.iter()
                    .map(|v| 4.0 * v + rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let config = KMeansConfig {
            k: rng.gen_range(1..=6),
            seed: trial,
            ..KMeansConfig::default()
        };
        let model = lib(kmeans_fit(&data, &config))?;
        for w in model.objective_history.windows(2) {
            ensure(w[1] <= w[0], || {
                format!("trial {trial}: objective rose {} -> {}", w[0], w[1])
            })?;
        }
        ensure(
            model.objective_history.last() == Some(&model.objective),
            || "final objective".into(),
        )?;
        for (i, x) in data.iter().enumerate() {
            let d2 = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let mut best = 0;
            for c in 1..model.k() {
                if d2(&model.centroids[c]) < d2(&model.centroids[best]) {
                    best = c;
                }
            }
            ensure(model.assignments[i] == best, || {
                format!("trial {trial}: point {i} not at nearest centroid")
            })?;
            ensure(lib(assign_baseline_cluster(&model, x))? == best, || {
                "assign_baseline_cluster disagrees".into()
            })?;
        }
    }
    let points = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
    for seed in 0..10 {
        let model = lib(kmeans_fit(
            &points,
            &KMeansConfig {
                k: 2,
                seed,
                ..KMeansConfig::default()
            },
        ))?;
        let mut centres: Vec<f64> = model.centroids.iter().map(|c| c[0]).collect();
        centres.sort_by(f64::total_cmp);
        ensure(centres == [0.0, 10.0] && model.objective == 0.0, || {
            format!("seed {seed}: {centres:?}, {}", model.objective)
        })?;
    }
    Ok("50 datasets monotone and consistent; {0,0,10,10} recovers {0,10}".into())
}

fn missingness() -> Check {
    let mut rng = rng(1010);
    let mut checked = 0;
    for trial in 0..200 {
        let m = rng.gen_range(2..=10);
        let p = mixed_pipeline(&mut rng, m, 6, false);
        let xe = vector(&mut rng, m, 2.0);
        let shared: Vec<usize> = (0..m).filter(|_| rng.gen_bool(0.4)).collect();
        let n = rng.gen_range(1..=6);
        let mut baselines = samples(&mut rng, n, m);
        for b in &mut baselines {
            for &i in &shared {
                b[i] = xe[i];
            }
        }
        if std::iter::once(&xe)
            .chain(&baselines)
            .any(|x| p.predict(x, None).is_err())
        {
            continue;
        }
        let ids = (0..baselines.len()).map(|b| format!("b{b}")).collect();
        let set = lib(BaselineSet::new(baselines, ids, Provenance::Explicit))?;
        let report = lib(chain_with_distribution(
            &p,
            &Explicand::new("e", xe.clone()),
            &set,
        ))?;
        for &i in &shared {
            ensure(report.attributions[i] == 0.0, || {
                format!("trial {trial}: feature {i} got {}", report.attributions[i])
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} shared features attributed exactly 0"))
}

fn cli_reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = rng(1111);
    let m = 6;
    let p = loop {
        let p = mixed_pipeline(&mut rng, m, 5, false);
        if p.stages()
            .iter()
            .any(|s| matches!(s, Stage::TreeEnsemble(_)))
        {
            break p;
        }
    };
    std::fs::write(
        dir.path().join("model.json"),
        PipelineDoc::from(&p).to_json(),
    )
    .map_err(|e| e.to_string())?;
    let names: Vec<String> = (0..m).map(|j| format!("f{j}")).collect();
    let data = lib(Dataset::from_rows(names.clone(), samples(&mut rng, 40, m)))?;
    std::fs::write(dir.path().join("data.csv"), lib(data.to_csv())?).map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("groups.json"),
        r#"{"groups": {"a": ["f0", "f1", "f2"], "b": ["f2", "f3"]}}"#,
    )
    .map_err(|e| e.to_string())?;

    let runs: [(&str, Vec<&str>); 4] = [
        (
            "uniform.json",
            vec!["explain", "--uniform", "12", "--seed", "7", "--traces"],
        ),
        (
            "kmeans.csv",
            vec![
                "explain",
                "--kmeans",
                "3",
                "--reduced-features",
                "f0,f3",
                "--seed",
                "5",
                "--format",
                "csv",
            ],
        ),
        (
            "groups.json",
            vec![
                "explain",
                "--uniform",
                "8",
                "--seed",
                "3",
                "--groups",
                "groups.json",
            ],
        ),
        (
            "ablate.csv",
            vec![
                "ablate",
                "--uniform",
                "8",
                "--seed",
                "3",
                "--sign",
                "pos",
                "--format",
                "csv",
            ],
        ),
    ];
    let mut summary = Vec::new();
    for (out, args) in &runs {
        let mut outputs = Vec::new();
        for workers in ["1", "4", "4"] {
            let path = dir.path().join(format!("{workers}-{out}"));
            let status = Command::new(env!("CARGO_BIN_EXE_chainshap"))
                .current_dir(dir.path())
                .args(["--workers", workers])
                .args(args)
                .args(["--pipeline", "model.json", "--data", "data.csv", "--output"])
                .arg(&path)
                .output()
                .map_err(|e| e.to_string())?;
            ensure(status.status.success(), || {
                format!("{out}: {}", String::from_utf8_lossy(&status.stderr))
            })?;
            outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        ensure(!outputs[0].is_empty(), || format!("{out} is empty"))?;
        ensure(outputs.iter().all(|o| *o == outputs[0]), || {
            format!("{out} differs across runs")
        })?;
        summary.push(format!("{out} {}B", outputs[0].len()));
    }
    Ok(format!(
        "byte-identical with 1 and 4 workers: {}",
        summary.join(", ")
    ))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            "1 linear exactness",
            Some(Duration::from_secs(5)),
            linear_exactness,
        ),
        (
            "2 layer-wise efficiency",
            Some(Duration::from_secs(20)),
            layerwise_efficiency,
        ),
        ("3 baseline decomposition", None, baseline_decomposition),
        ("4 tree oracle equivalence", None, tree_oracle),
        (
            "5 k-partition correspondence",
            None,
            kpartition_correspondence,
        ),
        ("6 group efficiency", None, group_efficiency),
        ("7 ablation correctness", None, ablation_correctness),
        (
            "8 distributed equals centralized",
            Some(Duration::from_secs(30)),
            distributed_equivalence,
        ),
        ("9 k-means", None, kmeans_checks),
        ("10 missingness", None, missingness),
        ("11 CLI reproducibility", None, cli_reproducibility),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name:<34} {elapsed:>9.2?}  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<34} {elapsed:>9.2?}  {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
