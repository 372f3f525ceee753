//! Per-stage attribution matrices.
//!
//! For a stage `h: R^m -> R^o` and a pair of stage inputs, each attributor
//! returns an `m x o` matrix whose column `c` sums to the change of output
//! `c`. Inputs whose value is identical in both samples always get an
//! all-zero row; the chain engine relies on this when it divides by a zero
//! output delta.

use crate::chain_engine::chain_matrix;
use crate::error::{Error, Result};
use crate::model_ir::{
    splice_mask_into, Activation, LinearStage, ParallelBlock, Stage, Transform, TransformStage,
    TreeEnsemble,
};
use crate::numeric::{sub, Matrix};
use crate::shapley_oracle::{exact_shapley, SetFunction, MAX_PLAYERS};

#[derive(Debug, Clone, PartialEq)]
pub struct StageAttribution {
    /// `inputs x outputs`.
    pub matrix: Matrix,
    pub input_delta: Vec<f64>,
    pub output_delta: Vec<f64>,
    /// Zero-denominator divisions inside nested sub-pipelines.
    pub degenerate_divisions: usize,
}

impl StageAttribution {
    fn new(matrix: Matrix, input_delta: Vec<f64>, output_delta: Vec<f64>) -> Self {
        StageAttribution {
            matrix,
            input_delta,
            output_delta,
            degenerate_divisions: 0,
        }
    }
}

fn check_widths(stage: &Stage, xe: &[f64], xb: &[f64]) -> Result<()> {
    let w = stage.input_width();
    if xe.len() != w {
        return Err(Error::width(
            format!("{} explicand input", stage.kind()),
            w,
            xe.len(),
        ));
    }
    if xb.len() != w {
        return Err(Error::width(
            format!("{} baseline input", stage.kind()),
            w,
            xb.len(),
        ));
    }
    Ok(())
}

/// Dispatches on the stage kind.
pub fn stage_attribution(
    stage: &Stage,
    xe: &[f64],
    xb: &[f64],
    label: Option<f64>,
) -> Result<StageAttribution> {
    check_widths(stage, xe, xb)?;
    match stage {
        Stage::Linear(s) => Ok(linear_stage_attr(s, xe, xb)),
        Stage::Activation(s) => Ok(activation_stage_attr(s.function, xe, xb)),
        Stage::TreeEnsemble(s) => tree_stage_attr(s, xe, xb),
        Stage::Transform(s) => transform_stage_attr(s, xe, xb, label),
        Stage::ParallelBlock(s) => parallel_block_attr(s, xe, xb, label),
    }
}

/// Exact interventional Shapley values of an affine map: `W[o][j] * dx_j`.
/// The bias cancels and is attributed to nothing.
pub fn linear_stage_attr(stage: &LinearStage, xe: &[f64], xb: &[f64]) -> StageAttribution {
    let dx = sub(xe, xb);
    let weights = stage.weights();
    let mut m = Matrix::zeros(dx.len(), weights.len());
    for (o, row) in weights.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            m[(j, o)] = w * dx[j];
        }
    }
    let output_delta = sub(&stage.apply(xe), &stage.apply(xb));
    StageAttribution::new(m, dx, output_delta)
}

/// Elementwise maps: each output depends on one input, so the diagonal of
/// output deltas is exact.
pub fn activation_stage_attr(function: Activation, xe: &[f64], xb: &[f64]) -> StageAttribution {
    let dy: Vec<f64> = xe
        .iter()
        .zip(xb)
        .map(|(e, b)| function.apply(*e) - function.apply(*b))
        .collect();
    StageAttribution::new(Matrix::diagonal(&dy), sub(xe, xb), dy)
}

/// Exact single-baseline Shapley values per tree, enumerated over the
/// features that the tree tests and that differ between the two samples,
/// then combined with the tree weights.
pub fn tree_stage_attr(stage: &TreeEnsemble, xe: &[f64], xb: &[f64]) -> Result<StageAttribution> {
    let mut column = vec![0.0; xe.len()];
    let mut buf = xb.to_vec();
    for (t, (tree, weight)) in stage.trees().iter().zip(stage.tree_weights()).enumerate() {
        let active: Vec<usize> = tree
            .features()
            .into_iter()
            .filter(|&j| xe[j] != xb[j])
            .collect();
        if active.len() > MAX_PLAYERS {
            return Err(Error::TreeGuard {
                tree: t,
                active: active.len(),
                limit: MAX_PLAYERS,
            });
        }
        if active.is_empty() {
            continue;
        }
        buf.copy_from_slice(xb);
        let game = SetFunction::from_fn(active.len(), |mask| {
            splice_mask_into(&mut buf, xe, xb, &active, mask);
            Ok(tree.predict(&buf))
        })?;
        for (phi, &j) in exact_shapley(&game).into_iter().zip(&active) {
            column[j] += weight * phi;
        }
    }
    let output_delta = vec![stage.predict(xe) - stage.predict(xb)];
    Ok(StageAttribution::new(
        Matrix::column_vector(&column),
        sub(xe, xb),
        output_delta,
    ))
}

/// Output transforms (probability, log-odds, loss, output selection).
pub fn transform_stage_attr(
    stage: &TransformStage,
    xe: &[f64],
    xb: &[f64],
    label: Option<f64>,
) -> Result<StageAttribution> {
    let dx = sub(xe, xb);
    let mut m = Matrix::zeros(xe.len(), 1);
    let delta = match stage.transform {
        Transform::Select(i) => {
            m[(i, 0)] = dx[i];
            dx[i]
        }
        _ => {
            let d = stage.map(xe[0], label)? - stage.map(xb[0], label)?;
            m[(0, 0)] = d;
            d
        }
    };
    Ok(StageAttribution::new(m, dx, vec![delta]))
}

/// Each sub-pipeline contributes its own chain attribution on its
/// (input slice x output slice); passthrough pairs carry the input delta.
pub fn parallel_block_attr(
    stage: &ParallelBlock,
    xe: &[f64],
    xb: &[f64],
    label: Option<f64>,
) -> Result<StageAttribution> {
    let dx = sub(xe, xb);
    let mut m = Matrix::zeros(stage.input_width(), stage.output_width());
    let mut output_delta = vec![0.0; stage.output_width()];
    let mut degenerate = 0;
    for sub_model in stage.blocks() {
        let se: Vec<f64> = sub_model.inputs.iter().map(|&i| xe[i]).collect();
        let sb: Vec<f64> = sub_model.inputs.iter().map(|&i| xb[i]).collect();
        let chain = chain_matrix(&sub_model.pipeline, &se, &sb, label)?;
        let attribution = chain.input_attribution();
        for (a, &i) in sub_model.inputs.iter().enumerate() {
            for (c, &o) in sub_model.outputs.iter().enumerate() {
                m[(i, o)] += attribution[(a, c)];
            }
        }
        for (c, &o) in sub_model.outputs.iter().enumerate() {
            output_delta[o] = chain.final_delta[c];
        }
        degenerate += chain.degenerate_divisions;
    }
    for &(i, o) in stage.passthrough() {
        m[(i, o)] += dx[i];
        output_delta[o] = dx[i];
    }
    Ok(StageAttribution {
        matrix: m,
        input_delta: dx,
        output_delta,
        degenerate_divisions: degenerate,
    })
}
