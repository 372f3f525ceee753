use std::fmt;

use crate::error::{Error, Result};
use crate::model_ir::{Pipeline, Tree};
use crate::numeric::affine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Linear,
    Activation,
    TreeEnsemble,
    ParallelBlock,
    Transform,
}

impl StageKind {
    pub fn tag(self) -> &'static str {
        match self {
            StageKind::Linear => "linear",
            StageKind::Activation => "activation",
            StageKind::TreeEnsemble => "tree_ensemble",
            StageKind::ParallelBlock => "parallel_block",
            StageKind::Transform => "transform",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "linear" => StageKind::Linear,
            "activation" => StageKind::Activation,
            "tree_ensemble" => StageKind::TreeEnsemble,
            "parallel_block" => StageKind::ParallelBlock,
            "transform" => StageKind::Transform,
            _ => {
                return Err(Error::UnknownTag {
                    kind: "stage",
                    tag: tag.to_string(),
                })
            }
        })
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            _ => {
                return Err(Error::UnknownTag {
                    kind: "activation",
                    tag: tag.to_string(),
                })
            }
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar output maps. `Select` reduces a multi-output stage to one output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Sigmoid,
    Logit,
    BceLoss,
    Select(usize),
}

impl Transform {
    pub fn tag(self) -> &'static str {
        match self {
            Transform::Sigmoid => "sigmoid",
            Transform::Logit => "logit",
            Transform::BceLoss => "bce_loss",
            Transform::Select(_) => "select",
        }
    }

    pub fn requires_label(self) -> bool {
        matches!(self, Transform::BceLoss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearStage {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearStage {
    /// `weights` is row-major with one row per output.
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let bad = |r: String| Error::invalid_stage("linear", r);
        let inputs = weights.first().map(Vec::len).unwrap_or(0);
        if weights.is_empty() || inputs == 0 {
            return Err(bad("weight matrix must be non-empty".into()));
        }
        if let Some(r) = weights.iter().position(|row| row.len() != inputs) {
            return Err(bad(format!(
                "weight row {r} has {} entries, expected {inputs}",
                weights[r].len()
            )));
        }
        if bias.len() != weights.len() {
            return Err(bad(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                weights.len()
            )));
        }
        if weights
            .iter()
            .flatten()
            .chain(&bias)
            .any(|v| !v.is_finite())
        {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(LinearStage { weights, bias })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].len()
    }

    pub fn output_width(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| affine(row, *b, x))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStage {
    pub function: Activation,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    trees: Vec<Tree>,
    tree_weights: Vec<f64>,
    base_score: f64,
    input_width: usize,
}

impl TreeEnsemble {
    /// Trees must already be validated against `input_width`. Missing
    /// weights default to 1 (boosting convention).
    pub fn new(
        trees: Vec<Tree>,
        tree_weights: Option<Vec<f64>>,
        base_score: f64,
        input_width: usize,
    ) -> Result<Self> {
        let bad = |r: String| Error::invalid_stage("tree_ensemble", r);
        if trees.is_empty() {
            return Err(bad("ensemble has no trees".into()));
        }
        let tree_weights = tree_weights.unwrap_or_else(|| vec![1.0; trees.len()]);
        if tree_weights.len() != trees.len() {
            return Err(bad(format!(
                "{} tree weights for {} trees",
                tree_weights.len(),
                trees.len()
            )));
        }
        if !base_score.is_finite() || tree_weights.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite weight or base score".into()));
        }
        Ok(TreeEnsemble {
            trees,
            tree_weights,
            base_score,
            input_width,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn tree_weights(&self) -> &[f64] {
        &self.tree_weights
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = self.base_score;
        for (t, w) in self.trees.iter().zip(&self.tree_weights) {
            acc += w * t.predict(x);
        }
        acc
    }
}

/// A sub-pipeline reading `inputs` of the enclosing stage and writing
/// `outputs` of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    pub pipeline: Pipeline,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

/// Sub-models evaluated side by side on index slices of the input, plus
/// identity passthrough pairs `(input, output)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelBlock {
    blocks: Vec<SubModel>,
    passthrough: Vec<(usize, usize)>,
    input_width: usize,
    output_width: usize,
}

impl ParallelBlock {
    pub fn new(
        blocks: Vec<SubModel>,
        passthrough: Vec<(usize, usize)>,
        input_width: usize,
    ) -> Result<Self> {
        let bad = |r: String| Error::invalid_stage("parallel_block", r);
        let output_width =
            blocks.iter().map(|b| b.outputs.len()).sum::<usize>() + passthrough.len();
        if output_width == 0 {
            return Err(bad("block produces no outputs".into()));
        }
        let mut produced = vec![false; output_width];
        let mut mark = |o: usize| -> Result<()> {
            match produced.get_mut(o) {
                None => Err(bad(format!("output index {o} outside 0..{output_width}"))),
                Some(true) => Err(bad(format!("output index {o} produced twice"))),
                Some(slot) => {
                    *slot = true;
                    Ok(())
                }
            }
        };
        for (b, sub) in blocks.iter().enumerate() {
            if sub.pipeline.input_width() != sub.inputs.len() {
                return Err(bad(format!(
                    "block {b} reads {} inputs but its pipeline expects {}",
                    sub.inputs.len(),
                    sub.pipeline.input_width()
                )));
            }
            if sub.pipeline.output_width() != sub.outputs.len() {
                return Err(bad(format!(
                    "block {b} writes {} outputs but its pipeline produces {}",
                    sub.outputs.len(),
                    sub.pipeline.output_width()
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for &i in &sub.inputs {
                if i >= input_width {
                    return Err(bad(format!("block {b} input {i} outside 0..{input_width}")));
                }
                if !seen.insert(i) {
                    return Err(bad(format!("block {b} reads input {i} twice")));
                }
            }
            for &o in &sub.outputs {
                mark(o)?;
            }
        }
        for &(i, o) in &passthrough {
            if i >= input_width {
                return Err(bad(format!(
                    "passthrough input {i} outside 0..{input_width}"
                )));
            }
            mark(o)?;
        }
        Ok(ParallelBlock {
            blocks,
            passthrough,
            input_width,
            output_width,
        })
    }

    pub fn blocks(&self) -> &[SubModel] {
        &self.blocks
    }

    pub fn passthrough(&self) -> &[(usize, usize)] {
        &self.passthrough
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_width];
        for sub in &self.blocks {
            let slice: Vec<f64> = sub.inputs.iter().map(|&i| x[i]).collect();
            let y = sub.pipeline.evaluate(&slice)?.into_output();
            for (&o, v) in sub.outputs.iter().zip(y) {
                out[o] = v;
            }
        }
        for &(i, o) in &self.passthrough {
            out[o] = x[i];
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformStage {
    pub transform: Transform,
    pub input_width: usize,
}

impl TransformStage {
    pub fn new(transform: Transform, input_width: usize) -> Result<Self> {
        match transform {
            Transform::Select(index) if index >= input_width => Err(Error::IndexOutOfRange {
                index,
                width: input_width,
            }),
            Transform::Select(_) => Ok(TransformStage {
                transform,
                input_width,
            }),
            _ if input_width != 1 => Err(Error::invalid_stage(
                "transform",
                format!(
                    "{} takes a scalar input, got width {input_width}",
                    transform.tag()
                ),
            )),
            _ => Ok(TransformStage {
                transform,
                input_width,
            }),
        }
    }

    /// Scalar map applied to a single value. For `Select` this is the
    /// identity on the selected coordinate.
    pub fn map(&self, p: f64, label: Option<f64>) -> Result<f64> {
        match self.transform {
            Transform::Sigmoid => Ok(sigmoid(p)),
            Transform::Logit => {
                check_probability("logit", p)?;
                Ok((p / (1.0 - p)).ln())
            }
            Transform::BceLoss => {
                let y = label.ok_or(Error::MissingLabel)?;
                check_label(y)?;
                check_probability("bce_loss", p)?;
                Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            }
            Transform::Select(_) => Ok(p),
        }
    }

    pub fn apply(&self, x: &[f64], label: Option<f64>) -> Result<Vec<f64>> {
        let input = match self.transform {
            Transform::Select(i) => x[i],
            _ => x[0],
        };
        Ok(vec![self.map(input, label)?])
    }
}

fn check_probability(transform: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::TransformDomain {
            transform,
            value: p,
        })
    }
}

pub(crate) fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y))
    }
}

/// One model `h_i` of a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Linear(LinearStage),
    Activation(ActivationStage),
    TreeEnsemble(TreeEnsemble),
    ParallelBlock(ParallelBlock),
    Transform(TransformStage),
}

impl Stage {
    pub fn kind(&self) -> StageKind {
        match self {
            Stage::Linear(_) => StageKind::Linear,
            Stage::Activation(_) => StageKind::Activation,
            Stage::TreeEnsemble(_) => StageKind::TreeEnsemble,
            Stage::ParallelBlock(_) => StageKind::ParallelBlock,
            Stage::Transform(_) => StageKind::Transform,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            Stage::Linear(s) => s.input_width(),
            Stage::Activation(s) => s.width,
            Stage::TreeEnsemble(s) => s.input_width,
            Stage::ParallelBlock(s) => s.input_width,
            Stage::Transform(s) => s.input_width,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Stage::Linear(s) => s.output_width(),
            Stage::Activation(s) => s.width,
            Stage::TreeEnsemble(_) => 1,
            Stage::ParallelBlock(s) => s.output_width,
            Stage::Transform(_) => 1,
        }
    }

    /// Applies the stage to an input of width `input_width()`. `label` is
    /// only consulted by label-dependent transforms.
    pub fn apply(&self, x: &[f64], label: Option<f64>) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::width(
                format!("{} stage input", self.kind()),
                self.input_width(),
                x.len(),
            ));
        }
        match self {
            Stage::Linear(s) => Ok(s.apply(x)),
            Stage::Activation(s) => Ok(x.iter().map(|v| s.function.apply(*v)).collect()),
            Stage::TreeEnsemble(s) => Ok(vec![s.predict(x)]),
            Stage::ParallelBlock(s) => s.apply(x),
            Stage::Transform(s) => s.apply(x, label),
        }
    }
}
