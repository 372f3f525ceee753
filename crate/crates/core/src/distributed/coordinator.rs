use std::collections::HashMap;

use rayon::prelude::*;

use crate::baseline_select::BaselineSet;
use crate::chain_engine::{chain_matrix, AttributionReport, Explicand, ReportFlags};
use crate::error::{Error, Result};
use crate::model_ir::{ParallelBlock, Pipeline, Stage, SubModel};
use crate::numeric::{mean, pairwise_mean, sum_relative_error};

use super::node::{validate_registry, NodeDescriptor};
use super::transport::Transport;
use super::wire::{
    decode_message, encode_message, Message, ProtocolError, ScoreAttributionRequest,
    ScoreAttributionResponse,
};

/// Relative tolerance for a response's sum against its request value, and
/// for the score-delta audit.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// The coordinator's own model, over purchased scores and its own features.
#[derive(Debug, Clone)]
pub struct MetaModel {
    pub pipeline: Pipeline,
    /// One name per pipeline input: a registered score or an own feature.
    pub input_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordinateOptions {
    /// Also report attributions over the meta-model inputs (scores and own
    /// features) in `AttributionReport::intermediate`.
    pub publish_intermediate: bool,
}

impl Default for CoordinateOptions {
    fn default() -> Self {
        CoordinateOptions {
            publish_intermediate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicandFailure {
    pub explicand_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationOutcome {
    /// Raw feature names: each participating node's features in registry
    /// order, then the coordinator's own features in meta-input order.
    pub feature_names: Vec<String>,
    pub reports: Vec<AttributionReport>,
    pub failures: Vec<ExplicandFailure>,
}

enum Input {
    Own(usize),
    Score { node: usize },
}

struct Plan<'a> {
    inputs: Vec<Input>,
    raw_names: Vec<String>,
    raw_index: HashMap<String, usize>,
    nodes: &'a [NodeDescriptor],
}

fn plan<'a>(meta: &'a MetaModel, registry: &'a [NodeDescriptor]) -> Result<Plan<'a>> {
    validate_registry(registry)?;
    if meta.pipeline.output_width() != 1 {
        return Err(Error::NonScalarOutput(meta.pipeline.output_width()));
    }
    if meta.input_names.len() != meta.pipeline.input_width() {
        return Err(Error::width(
            "meta-model input names",
            meta.pipeline.input_width(),
            meta.input_names.len(),
        ));
    }
    let owner: HashMap<&str, usize> = registry
        .iter()
        .enumerate()
        .flat_map(|(n, d)| d.scores.iter().map(move |s| (s.as_str(), n)))
        .collect();
    let mut used = vec![false; registry.len()];
    for name in &meta.input_names {
        if let Some(&n) = owner.get(name.as_str()) {
            used[n] = true;
        }
    }
    let mut raw_names = Vec::new();
    for (n, d) in registry.iter().enumerate() {
        if used[n] {
            raw_names.extend(d.features.iter().cloned());
        }
    }
    let mut inputs = Vec::with_capacity(meta.input_names.len());
    for name in &meta.input_names {
        match owner.get(name.as_str()) {
            Some(&node) => inputs.push(Input::Score { node }),
            None => {
                if registry.iter().any(|d| d.features.contains(name)) {
                    return Err(Error::Config(format!(
                        "meta input `{name}` is a feature advertised by a node"
                    )));
                }
                inputs.push(Input::Own(raw_names.len()));
                raw_names.push(name.clone());
            }
        }
    }
    let mut raw_index = HashMap::new();
    for (i, name) in raw_names.iter().enumerate() {
        if raw_index.insert(name.clone(), i).is_some() {
            return Err(Error::Config(format!(
                "feature `{name}` appears twice in the raw space"
            )));
        }
    }
    Ok(Plan {
        inputs,
        raw_names,
        raw_index,
        nodes: registry,
    })
}

fn call(
    transport: &dyn Transport,
    node: &NodeDescriptor,
    req: ScoreAttributionRequest,
) -> Result<ScoreAttributionResponse, ProtocolError> {
    let frame = encode_message(&Message::Request(req.clone()))?;
    let reply = transport.call(&node.endpoint, &frame)?;
    match decode_message(&reply)? {
        Message::Response(resp) => {
            if !resp.answers(&req) {
                return Err(ProtocolError::Rejected(format!(
                    "node {} answered a different request",
                    node.id
                )));
            }
            let values: Vec<f64> = resp.attrs.iter().map(|(_, v)| *v).collect();
            let err = sum_relative_error(&values, req.value);
            if err > BOUNDARY_TOLERANCE {
                return Err(ProtocolError::Rejected(format!(
                    "node {} attributions for {} sum to {} instead of {} (relative error {err:e})",
                    node.id,
                    req.score,
                    values.iter().sum::<f64>(),
                    req.value
                )));
            }
            Ok(resp)
        }
        Message::Error { code, message } => Err(ProtocolError::from_code(&code, message)),
        Message::Request(_) => Err(ProtocolError::Rejected(format!(
            "node {} replied with a request",
            node.id
        ))),
    }
}

fn explain_one(
    meta: &MetaModel,
    plan: &Plan<'_>,
    explicand: &Explicand,
    baselines: &BaselineSet,
    transport: &dyn Transport,
    options: CoordinateOptions,
) -> Result<AttributionReport> {
    let xe = &explicand.values;
    let mut per_baseline = Vec::with_capacity(baselines.len());
    let mut per_baseline_meta = Vec::with_capacity(baselines.len());
    let mut final_deltas = Vec::with_capacity(baselines.len());
    let (mut degenerate, mut audit) = (0, 0);
    for (xb, baseline_id) in baselines.samples().iter().zip(baselines.sample_ids()) {
        let chain = chain_matrix(&meta.pipeline, xe, xb, explicand.label)?;
        let psi = chain.input_attribution().column(0);
        let mut raw = vec![0.0; plan.raw_names.len()];
        for (j, input) in plan.inputs.iter().enumerate() {
            match *input {
                Input::Own(r) => raw[r] += psi[j],
                Input::Score { node } => {
                    let descriptor = &plan.nodes[node];
                    let resp = call(
                        transport,
                        descriptor,
                        ScoreAttributionRequest {
                            baseline_set: baselines.id().to_string(),
                            explicand: explicand.id.clone(),
                            baseline: baseline_id.clone(),
                            score: meta.input_names[j].clone(),
                            value: psi[j],
                        },
                    )?;
                    let local_delta = xe[j] - xb[j];
                    if sum_relative_error(&[resp.score_delta], local_delta) > BOUNDARY_TOLERANCE {
                        audit += 1;
                    }
                    for (name, v) in &resp.attrs {
                        if !descriptor.features.contains(name) {
                            return Err(ProtocolError::Rejected(format!(
                                "node {} attributed to feature `{name}` it does not own",
                                descriptor.id
                            ))
                            .into());
                        }
                        raw[plan.raw_index[name]] += v;
                    }
                }
            }
        }
        degenerate += chain.degenerate_divisions;
        final_deltas.push(chain.final_delta[0]);
        per_baseline.push(raw);
        per_baseline_meta.push(psi);
    }
    let prediction = meta.pipeline.predict(xe, explicand.label)?;
    let baseline_values: Vec<f64> = final_deltas.iter().map(|d| prediction - d).collect();
    Ok(AttributionReport {
        explicand_id: explicand.id.clone(),
        feature_names: plan.raw_names.clone(),
        attributions: pairwise_mean(&per_baseline),
        prediction,
        expected_value: mean(&baseline_values),
        baseline_set_id: baselines.id().to_string(),
        flags: ReportFlags {
            degenerate_divisions: degenerate,
            score_audit_mismatches: audit,
        },
        traces: None,
        intermediate: options.publish_intermediate.then(|| {
            meta.input_names
                .iter()
                .cloned()
                .zip(pairwise_mean(&per_baseline_meta))
                .collect()
        }),
    })
}

/// Explains the meta-model in raw feature space, asking score owners to
/// push score attributions onto their own features.
///
/// Explicand and baseline values are over the meta-model inputs. An
/// explicand whose requests fail is reported in `failures`; the others
/// still succeed.
pub fn coordinate(
    meta: &MetaModel,
    registry: &[NodeDescriptor],
    explicands: &[Explicand],
    baselines: &BaselineSet,
    transport: &dyn Transport,
    options: CoordinateOptions,
) -> Result<CoordinationOutcome> {
    if baselines.is_empty() {
        return Err(Error::EmptyBaselineSet);
    }
    let plan = plan(meta, registry)?;
    let width = meta.pipeline.input_width();
    if baselines.width() != Some(width) {
        return Err(Error::width(
            "baseline samples",
            width,
            baselines.width().unwrap_or(0),
        ));
    }
    for e in explicands {
        if e.values.len() != width {
            return Err(Error::width(
                format!("explicand {}", e.id),
                width,
                e.values.len(),
            ));
        }
    }
    let results: Vec<Result<AttributionReport>> = explicands
        .par_iter()
        .map(|e| explain_one(meta, &plan, e, baselines, transport, options))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in explicands.iter().zip(results) {
        match r {
            Ok(report) => reports.push(report),
            Err(err) => failures.push(ExplicandFailure {
                explicand_id: e.id.clone(),
                error: err.to_string(),
            }),
        }
    }
    Ok(CoordinationOutcome {
        feature_names: plan.raw_names,
        reports,
        failures,
    })
}

/// A node model as the centralized reference sees it.
#[derive(Debug, Clone)]
pub struct ScoreSource {
    pub score: String,
    pub pipeline: Pipeline,
    /// Raw feature names the model reads, in input order.
    pub features: Vec<String>,
}

/// The single pipeline equivalent to a distributed stack: a parallel block
/// computing each score from raw features and passing own features
/// through, followed by the meta-model stages. Its input order is the raw
/// order used by [`coordinate`].
pub fn stitch_pipeline(
    meta: &MetaModel,
    registry: &[NodeDescriptor],
    sources: &[ScoreSource],
) -> Result<(Pipeline, Vec<String>)> {
    let plan = plan(meta, registry)?;
    let mut blocks = Vec::new();
    let mut passthrough = Vec::new();
    for (j, input) in plan.inputs.iter().enumerate() {
        match input {
            Input::Own(r) => passthrough.push((*r, j)),
            Input::Score { .. } => {
                let name = &meta.input_names[j];
                let src = sources
                    .iter()
                    .find(|s| &s.score == name)
                    .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
                let inputs = src
                    .features
                    .iter()
                    .map(|f| {
                        plan.raw_index
                            .get(f)
                            .copied()
                            .ok_or_else(|| Error::UnknownFeature(f.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                blocks.push(SubModel {
                    pipeline: src.pipeline.clone(),
                    inputs,
                    outputs: vec![j],
                });
            }
        }
    }
    let block = ParallelBlock::new(blocks, passthrough, plan.raw_names.len())?;
    let mut stages = vec![Stage::ParallelBlock(block)];
    stages.extend(meta.pipeline.stages().iter().cloned());
    Ok((Pipeline::new(stages)?, plan.raw_names))
}
