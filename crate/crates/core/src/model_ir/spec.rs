//! JSON pipeline documents.
//!
//! ```json
//! {"stages": [
//!   {"kind": "linear", "weights": [[1, 1]], "bias": [0]},
//!   {"kind": "activation", "activation": "relu"}
//! ]}
//! ```
//!
//! `input_width` may be given on any stage and is required on a first stage
//! whose width cannot be read from its parameters. Unknown fields, and fields
//! that do not belong to the stage kind, are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stage::{
    Activation, ActivationStage, LinearStage, ParallelBlock, Stage, StageKind, SubModel, Transform,
    TransformStage, TreeEnsemble,
};
use super::tree::{Tree, TreeNode};
use super::Pipeline;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineDoc {
    pub stages: Vec<StageDoc>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<Vec<TreeDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<BlockDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passthrough: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDoc {
    pub nodes: Vec<NodeDoc>,
    pub root: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeDoc {
    Split(SplitDoc),
    Leaf(LeafDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitDoc {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafDoc {
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub pipeline: PipelineDoc,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

pub fn load_pipeline(text: &str) -> Result<Pipeline> {
    let doc: PipelineDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    doc.build()
}

pub fn load_pipeline_file(path: impl AsRef<Path>) -> Result<Pipeline> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    load_pipeline(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

impl PipelineDoc {
    pub fn build(&self) -> Result<Pipeline> {
        self.build_at("stages")
    }

    fn build_at(&self, path: &str) -> Result<Pipeline> {
        let mut stages: Vec<Stage> = Vec::with_capacity(self.stages.len());
        for (i, doc) in self.stages.iter().enumerate() {
            let location = format!("{path}[{i}]");
            let upstream = stages.last().map(Stage::output_width);
            let stage = doc.build(&location, upstream)?;
            if let Some(width) = upstream {
                if stage.input_width() != width {
                    return Err(Error::StageWidthMismatch {
                        upstream: i - 1,
                        downstream: i,
                        output_width: width,
                        input_width: stage.input_width(),
                    });
                }
            }
            stages.push(stage);
        }
        Pipeline::new(stages)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline documents always serialize")
    }
}

impl StageDoc {
    fn present_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut add = |name, present: bool| {
            if present {
                out.push(name)
            }
        };
        add("weights", self.weights.is_some());
        add("bias", self.bias.is_some());
        add("activation", self.activation.is_some());
        add("trees", self.trees.is_some());
        add("tree_weights", self.tree_weights.is_some());
        add("base_score", self.base_score.is_some());
        add("blocks", self.blocks.is_some());
        add("passthrough", self.passthrough.is_some());
        add("transform", self.transform.is_some());
        add("index", self.index.is_some());
        out
    }

    fn build(&self, location: &str, upstream: Option<usize>) -> Result<Stage> {
        let kind = StageKind::from_tag(&self.kind)?;
        let allowed: &[&str] = match kind {
            StageKind::Linear => &["weights", "bias"],
            StageKind::Activation => &["activation"],
            StageKind::TreeEnsemble => &["trees", "tree_weights", "base_score"],
            StageKind::ParallelBlock => &["blocks", "passthrough"],
            StageKind::Transform => &["transform", "index"],
        };
        if let Some(field) = self
            .present_fields()
            .into_iter()
            .find(|f| !allowed.contains(f))
        {
            return Err(Error::invalid_stage(
                location,
                format!("field `{field}` is not valid for a {kind} stage"),
            ));
        }
        let relocate = |e: Error| match e {
            Error::InvalidStage { reason, .. } => Error::invalid_stage(location, reason),
            other => other,
        };
        let missing = |field: &str| Error::invalid_stage(location, format!("missing `{field}`"));
        let width = || {
            self.input_width.or(upstream).ok_or_else(|| {
                Error::invalid_stage(location, "first stage needs an explicit `input_width`")
            })
        };

        let stage = match kind {
            StageKind::Linear => {
                let weights = self.weights.clone().ok_or_else(|| missing("weights"))?;
                let bias = self
                    .bias
                    .clone()
                    .unwrap_or_else(|| vec![0.0; weights.len()]);
                Stage::Linear(LinearStage::new(weights, bias).map_err(relocate)?)
            }
            StageKind::Activation => {
                let tag = self
                    .activation
                    .as_deref()
                    .ok_or_else(|| missing("activation"))?;
                Stage::Activation(ActivationStage {
                    function: Activation::from_tag(tag)?,
                    width: width()?,
                })
            }
            StageKind::TreeEnsemble => {
                let width = width()?;
                let docs = self.trees.as_ref().ok_or_else(|| missing("trees"))?;
                let trees = docs
                    .iter()
                    .enumerate()
                    .map(|(t, doc)| {
                        doc.build(width).map_err(|e| match e {
                            Error::InvalidStage { reason, .. } => {
                                Error::invalid_stage(format!("{location}.trees[{t}]"), reason)
                            }
                            other => other,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Stage::TreeEnsemble(
                    TreeEnsemble::new(
                        trees,
                        self.tree_weights.clone(),
                        self.base_score.unwrap_or(0.0),
                        width,
                    )
                    .map_err(relocate)?,
                )
            }
            StageKind::ParallelBlock => {
                let width = width()?;
                let docs = self.blocks.clone().unwrap_or_default();
                let blocks = docs
                    .iter()
                    .enumerate()
                    .map(|(b, doc)| {
                        Ok(SubModel {
                            pipeline: doc
                                .pipeline
                                .build_at(&format!("{location}.blocks[{b}].pipeline.stages"))?,
                            inputs: doc.inputs.clone(),
                            outputs: doc.outputs.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Stage::ParallelBlock(
                    ParallelBlock::new(blocks, self.passthrough.clone().unwrap_or_default(), width)
                        .map_err(relocate)?,
                )
            }
            StageKind::Transform => {
                let tag = self
                    .transform
                    .as_deref()
                    .ok_or_else(|| missing("transform"))?;
                let transform = match tag {
                    "sigmoid" => Transform::Sigmoid,
                    "logit" => Transform::Logit,
                    "bce_loss" => Transform::BceLoss,
                    "select" => Transform::Select(self.index.ok_or_else(|| missing("index"))?),
                    _ => {
                        return Err(Error::UnknownTag {
                            kind: "transform",
                            tag: tag.to_string(),
                        })
                    }
                };
                if self.index.is_some() && !matches!(transform, Transform::Select(_)) {
                    return Err(Error::invalid_stage(
                        location,
                        "`index` is only valid for the select transform",
                    ));
                }
                let width = match transform {
                    Transform::Select(_) => width()?,
                    _ => self.input_width.or(upstream).unwrap_or(1),
                };
                Stage::Transform(TransformStage::new(transform, width).map_err(relocate)?)
            }
        };

        if let Some(declared) = self.input_width {
            if declared != stage.input_width() {
                return Err(Error::invalid_stage(
                    location,
                    format!(
                        "declared input_width {declared} but parameters imply {}",
                        stage.input_width()
                    ),
                ));
            }
        }
        Ok(stage)
    }
}

impl TreeDoc {
    fn build(&self, input_width: usize) -> Result<Tree> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                NodeDoc::Split(s) => TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: s.left,
                    right: s.right,
                },
                NodeDoc::Leaf(l) => TreeNode::Leaf { value: l.value },
            })
            .collect();
        Tree::new(nodes, self.root, input_width)
    }
}

impl From<&Tree> for TreeDoc {
    fn from(tree: &Tree) -> Self {
        TreeDoc {
            nodes: tree
                .nodes()
                .iter()
                .map(|n| match n {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => NodeDoc::Split(SplitDoc {
                        feature: *feature,
                        threshold: *threshold,
                        left: *left,
                        right: *right,
                    }),
                    TreeNode::Leaf { value } => NodeDoc::Leaf(LeafDoc { value: *value }),
                })
                .collect(),
            root: tree.root(),
        }
    }
}

impl From<&Stage> for StageDoc {
    fn from(stage: &Stage) -> Self {
        let mut doc = StageDoc {
            kind: stage.kind().tag().to_string(),
            ..StageDoc::default()
        };
        match stage {
            Stage::Linear(s) => {
                doc.weights = Some(s.weights().to_vec());
                doc.bias = Some(s.bias().to_vec());
            }
            Stage::Activation(s) => {
                doc.input_width = Some(s.width);
                doc.activation = Some(s.function.tag().to_string());
            }
            Stage::TreeEnsemble(s) => {
                doc.input_width = Some(s.input_width());
                doc.trees = Some(s.trees().iter().map(TreeDoc::from).collect());
                doc.tree_weights = Some(s.tree_weights().to_vec());
                doc.base_score = Some(s.base_score());
            }
            Stage::ParallelBlock(s) => {
                doc.input_width = Some(s.input_width());
                doc.blocks = Some(
                    s.blocks()
                        .iter()
                        .map(|b| BlockDoc {
                            pipeline: PipelineDoc::from(&b.pipeline),
                            inputs: b.inputs.clone(),
                            outputs: b.outputs.clone(),
                        })
                        .collect(),
                );
                doc.passthrough = Some(s.passthrough().to_vec());
            }
            Stage::Transform(s) => {
                doc.input_width = Some(s.input_width);
                doc.transform = Some(s.transform.tag().to_string());
                if let Transform::Select(i) = s.transform {
                    doc.index = Some(i);
                }
            }
        }
        doc
    }
}

impl From<&Pipeline> for PipelineDoc {
    fn from(p: &Pipeline) -> Self {
        PipelineDoc {
            stages: p.stages().iter().map(StageDoc::from).collect(),
        }
    }
}
