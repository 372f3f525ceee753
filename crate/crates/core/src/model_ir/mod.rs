//! Model intermediate representation: stages, pipelines, forward traces and
//! the spliced-sample primitive.

mod spec;
mod stage;
mod tree;

use std::ops::Deref;

pub use spec::{load_pipeline, load_pipeline_file, PipelineDoc};
pub use stage::{
    sigmoid, Activation, ActivationStage, LinearStage, ParallelBlock, Stage, StageKind, SubModel,
    Transform, TransformStage, TreeEnsemble,
};
pub use tree::{Tree, TreeNode};

use crate::error::{Error, Result};

/// A finite real-valued sample, optionally carrying feature names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    names: Option<Vec<String>>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("feature {i}"),
            });
        }
        Ok(FeatureVector {
            values,
            names: None,
        })
    }

    pub fn with_names(values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::width("feature names", values.len(), names.len()));
        }
        let mut v = FeatureVector::new(values)?;
        v.names = Some(names);
        Ok(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Hybrid sample taking the features in `subset` from `explicand` and all
/// others from `baseline`.
pub fn splice(explicand: &[f64], baseline: &[f64], subset: &[usize]) -> Result<FeatureVector> {
    if explicand.len() != baseline.len() {
        return Err(Error::width("splice", explicand.len(), baseline.len()));
    }
    let mut out = baseline.to_vec();
    for &i in subset {
        if i >= explicand.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                width: explicand.len(),
            });
        }
        out[i] = explicand[i];
    }
    Ok(FeatureVector {
        values: out,
        names: None,
    })
}

/// Splice over an explicit player list: bit `b` of `mask` selects
/// `players[b]` from the explicand. Writes into `out`, which must already
/// hold the baseline.
pub(crate) fn splice_mask_into(
    out: &mut [f64],
    explicand: &[f64],
    baseline: &[f64],
    players: &[usize],
    mask: usize,
) {
    for (bit, &i) in players.iter().enumerate() {
        out[i] = if mask >> bit & 1 == 1 {
            explicand[i]
        } else {
            baseline[i]
        };
    }
}

/// Outputs of every prefix `f_i = h_i . ... . h_1` of a pipeline. Entry 0 is
/// the raw input, entry `i` the output of stage `i` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    entries: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn input(&self) -> &[f64] {
        &self.entries[0]
    }

    /// Input to the 0-based stage `i`.
    pub fn stage_input(&self, i: usize) -> &[f64] {
        &self.entries[i]
    }

    /// Output of the 0-based stage `i`.
    pub fn stage_output(&self, i: usize) -> &[f64] {
        &self.entries[i + 1]
    }

    pub fn output(&self) -> &[f64] {
        self.entries.last().expect("trace always holds the input")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.entries.pop().expect("trace always holds the input")
    }
}

/// Composition `h_k . ... . h_1` of stages with matching widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    stages: Vec<Stage>,
}

impl Pipeline {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::invalid_stage("pipeline", "pipeline has no stages"));
        }
        for (i, pair) in stages.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::StageWidthMismatch {
                    upstream: i,
                    downstream: i + 1,
                    output_width: pair[0].output_width(),
                    input_width: pair[1].input_width(),
                });
            }
        }
        Ok(Pipeline { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.stages[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.stages[self.stages.len() - 1].output_width()
    }

    /// True if any stage (including nested blocks) needs a label.
    pub fn requires_label(&self) -> bool {
        self.stages.iter().any(|s| match s {
            Stage::Transform(t) => t.transform.requires_label(),
            Stage::ParallelBlock(b) => b.blocks().iter().any(|sub| sub.pipeline.requires_label()),
            _ => false,
        })
    }

    /// Appends a stage, checking the width against the current output.
    pub fn push(&mut self, stage: Stage) -> Result<()> {
        if stage.input_width() != self.output_width() {
            return Err(Error::StageWidthMismatch {
                upstream: self.stages.len() - 1,
                downstream: self.stages.len(),
                output_width: self.output_width(),
                input_width: stage.input_width(),
            });
        }
        self.stages.push(stage);
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.evaluate_labeled(x, None)
    }

    /// Forward pass recording every intermediate output. `label` feeds
    /// label-dependent transforms and is never treated as a feature.
    pub fn evaluate_labeled(&self, x: &[f64], label: Option<f64>) -> Result<ForwardTrace> {
        if x.len() != self.input_width() {
            return Err(Error::width("pipeline input", self.input_width(), x.len()));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("pipeline input feature {i}"),
            });
        }
        let mut entries = Vec::with_capacity(self.stages.len() + 1);
        entries.push(x.to_vec());
        for (i, stage) in self.stages.iter().enumerate() {
            let y = stage.apply(&entries[i], label)?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("output of stage {i} ({})", stage.kind()),
                });
            }
            entries.push(y);
        }
        Ok(ForwardTrace { entries })
    }

    /// Final scalar output; errors if the pipeline is not scalar.
    pub fn predict(&self, x: &[f64], label: Option<f64>) -> Result<f64> {
        if self.output_width() != 1 {
            return Err(Error::NonScalarOutput(self.output_width()));
        }
        Ok(self.evaluate_labeled(x, label)?.output()[0])
    }
}
