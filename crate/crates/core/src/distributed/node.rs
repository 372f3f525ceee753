use serde::{Deserialize, Serialize};

use crate::baseline_select::BaselineRegistry;
use crate::chain_engine::{chain_single_baseline, hadamard_div};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model_ir::Pipeline;

use super::wire::{
    decode_message, encode_message, Message, ProtocolError, ScoreAttributionRequest,
    ScoreAttributionResponse,
};

/// Public description of a party: what it scores and which raw features it owns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDescriptor {
    pub id: String,
    pub scores: Vec<String>,
    pub features: Vec<String>,
    pub endpoint: String,
}

pub fn load_registry(text: &str) -> Result<Vec<NodeDescriptor>> {
    let nodes: Vec<NodeDescriptor> = serde_json::from_str(text)?;
    validate_registry(&nodes)?;
    Ok(nodes)
}

pub fn load_registry_file(path: impl AsRef<std::path::Path>) -> Result<Vec<NodeDescriptor>> {
    load_registry(&std::fs::read_to_string(path)?)
}

/// Node ids, score names and feature names must each be unique.
pub fn validate_registry(nodes: &[NodeDescriptor]) -> Result<()> {
    let mut ids = std::collections::HashSet::new();
    let mut scores = std::collections::HashSet::new();
    let mut features = std::collections::HashSet::new();
    for n in nodes {
        if !ids.insert(&n.id) {
            return Err(Error::Config(format!("node `{}` registered twice", n.id)));
        }
        for s in &n.scores {
            if !scores.insert(s) {
                return Err(Error::Config(format!(
                    "score `{s}` owned by more than one node"
                )));
            }
        }
        for f in &n.features {
            if !features.insert(f) {
                return Err(Error::Config(format!(
                    "feature `{f}` advertised by more than one node"
                )));
            }
        }
    }
    Ok(())
}

/// A private model whose output is one advertised score.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    pub name: String,
    pub pipeline: Pipeline,
    /// Columns of the node's data the model reads, in input order.
    pub inputs: Vec<usize>,
}

/// A party answering score-attribution requests from its own model and data.
///
/// Handling is a pure function of the request: no state changes, so a
/// replayed request yields the same bytes.
#[derive(Debug, Clone)]
pub struct NodeService {
    id: String,
    data: Dataset,
    models: Vec<ScoreModel>,
    baselines: BaselineRegistry,
}

impl NodeService {
    pub fn new(id: impl Into<String>, data: Dataset, baselines: BaselineRegistry) -> Self {
        NodeService {
            id: id.into(),
            data,
            models: Vec::new(),
            baselines,
        }
    }

    /// Adds a scalar model reading the named data columns.
    pub fn with_model(
        mut self,
        name: impl Into<String>,
        pipeline: Pipeline,
        columns: &[String],
    ) -> Result<Self> {
        if pipeline.output_width() != 1 {
            return Err(Error::NonScalarOutput(pipeline.output_width()));
        }
        if columns.len() != pipeline.input_width() {
            return Err(Error::width(
                "score model columns",
                pipeline.input_width(),
                columns.len(),
            ));
        }
        let inputs = columns
            .iter()
            .map(|c| self.data.feature_index(c))
            .collect::<Result<Vec<_>>>()?;
        self.models.push(ScoreModel {
            name: name.into(),
            pipeline,
            inputs,
        });
        Ok(self)
    }

    /// A model over every data column, in column order.
    pub fn with_full_model(self, name: impl Into<String>, pipeline: Pipeline) -> Result<Self> {
        let columns = self.data.feature_names().to_vec();
        self.with_model(name, pipeline, &columns)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn descriptor(&self, endpoint: impl Into<String>) -> NodeDescriptor {
        let mut used: Vec<usize> = self
            .models
            .iter()
            .flat_map(|m| m.inputs.iter().copied())
            .collect();
        used.sort_unstable();
        used.dedup();
        NodeDescriptor {
            id: self.id.clone(),
            scores: self.models.iter().map(|m| m.name.clone()).collect(),
            features: used
                .iter()
                .map(|&i| self.data.feature_names()[i].clone())
                .collect(),
            endpoint: endpoint.into(),
        }
    }

    /// The score a model assigns to a sample.
    pub fn score(&self, score: &str, sample: &str) -> Result<f64> {
        let model = self
            .models
            .iter()
            .find(|m| m.name == score)
            .ok_or_else(|| Error::UnknownFeature(score.to_string()))?;
        let row = self.data.get(sample)?;
        let x: Vec<f64> = model.inputs.iter().map(|&i| row[i]).collect();
        model.pipeline.predict(&x, None)
    }

    pub fn handle(
        &self,
        req: &ScoreAttributionRequest,
    ) -> Result<ScoreAttributionResponse, ProtocolError> {
        if self.baselines.get(&req.baseline_set).is_none() {
            return Err(ProtocolError::BaselineMismatch(format!(
                "baseline set {} is not registered at node {}",
                req.baseline_set, self.id
            )));
        }
        if !self.baselines.contains(&req.baseline_set, &req.baseline) {
            return Err(ProtocolError::BaselineMismatch(format!(
                "sample {} is not in baseline set {}",
                req.baseline, req.baseline_set
            )));
        }
        let model = self
            .models
            .iter()
            .find(|m| m.name == req.score)
            .ok_or_else(|| ProtocolError::UnknownScore(req.score.clone()))?;
        let row = |id: &str| -> Result<Vec<f64>, ProtocolError> {
            let row = self
                .data
                .get(id)
                .map_err(|_| ProtocolError::UnknownSample(id.to_string()))?;
            Ok(model.inputs.iter().map(|&i| row[i]).collect())
        };
        let xe = row(&req.explicand)?;
        let xb = row(&req.baseline)?;
        let trace = chain_single_baseline(&model.pipeline, &xe, &xb, None)
            .map_err(|e| ProtocolError::Computation(e.to_string()))?;
        if trace.final_delta == 0.0 && req.value != 0.0 {
            return Err(ProtocolError::Computation(format!(
                "score {} does not change between {} and {} but carries attribution {}",
                req.score, req.explicand, req.baseline, req.value
            )));
        }
        let ratio = hadamard_div(&[req.value], &[trace.final_delta])
            .map_err(|e| ProtocolError::Computation(e.to_string()))?[0];
        let attrs = model
            .inputs
            .iter()
            .zip(trace.attribution())
            .map(|(&i, psi)| (self.data.feature_names()[i].clone(), psi * ratio))
            .collect();
        Ok(ScoreAttributionResponse {
            baseline_set: req.baseline_set.clone(),
            explicand: req.explicand.clone(),
            baseline: req.baseline.clone(),
            score: req.score.clone(),
            attrs,
            score_delta: trace.final_delta,
        })
    }

    /// Answers one wire frame with one wire frame.
    pub fn handle_frame(&self, frame: &str) -> String {
        let reply = match decode_message(frame) {
            Ok(Message::Request(req)) => match self.handle(&req) {
                Ok(resp) => Message::Response(resp),
                Err(e) => Message::from(&e),
            },
            Ok(_) => Message::from(&ProtocolError::Malformed(
                "nodes only accept requests".into(),
            )),
            Err(e) => Message::from(&e),
        };
        encode_message(&reply).unwrap_or_else(|e| {
            encode_message(&Message::from(&ProtocolError::Computation(e.to_string())))
                .expect("error frames always encode")
        })
    }
}
