//! Seeded random pipelines, trees and samples shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use chainshap::model_ir::{
    Activation, ActivationStage, LinearStage, ParallelBlock, Pipeline, Stage, SubModel, Transform,
    TransformStage, Tree, TreeEnsemble, TreeNode,
};
use rand::seq::SliceRandom;
use rand::Rng;
pub use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vector(rng: &mut ChaCha8Rng, width: usize, scale: f64) -> Vec<f64> {
    (0..width).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn samples(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| vector(rng, width, 2.0)).collect()
}

/// Weights scaled by fan-in so activations stay moderate through depth.
pub fn linear(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Stage {
    let scale = 1.5 / (input as f64).sqrt();
    let weights = (0..output).map(|_| vector(rng, input, scale)).collect();
    let bias = vector(rng, output, 0.5);
    Stage::Linear(LinearStage::new(weights, bias).unwrap())
}

pub fn activation(function: Activation, width: usize) -> Stage {
    Stage::Activation(ActivationStage { function, width })
}

pub fn transform(t: Transform) -> Stage {
    Stage::Transform(TransformStage::new(t, 1).unwrap())
}

/// Random linear-only pipeline of `depth` stages ending in one output.
pub fn linear_pipeline(rng: &mut ChaCha8Rng, m: usize, depth: usize) -> Pipeline {
    let mut stages = Vec::new();
    let mut width = m;
    for d in 0..depth {
        let out = if d + 1 == depth {
            1
        } else {
            rng.gen_range(1..=6)
        };
        stages.push(linear(rng, width, out));
        width = out;
    }
    Pipeline::new(stages).unwrap()
}

/// A tree of depth at most `max_depth` over `width` features, with
/// thresholds drawn from the sampling range.
pub fn tree(rng: &mut ChaCha8Rng, width: usize, max_depth: usize) -> Tree {
    fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<TreeNode>, width: usize, depth: usize) -> usize {
        let id = nodes.len();
        if depth == 0 || (id > 0 && rng.gen_bool(0.25)) {
            nodes.push(TreeNode::Leaf {
                value: rng.gen_range(-2.0..2.0),
            });
            return id;
        }
        nodes.push(TreeNode::Leaf { value: 0.0 });
        let feature = rng.gen_range(0..width);
        let threshold = rng.gen_range(-1.5..1.5);
        let left = grow(rng, nodes, width, depth - 1);
        let right = grow(rng, nodes, width, depth - 1);
        nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
    let mut nodes = Vec::new();
    let depth = rng.gen_range(1..=max_depth);
    grow(rng, &mut nodes, width, depth);
    Tree::new(nodes, 0, width).unwrap()
}

pub fn tree_ensemble(
    rng: &mut ChaCha8Rng,
    width: usize,
    max_depth: usize,
    max_trees: usize,
) -> Stage {
    let n = rng.gen_range(1..=max_trees);
    let trees: Vec<Tree> = (0..n).map(|_| tree(rng, width, max_depth)).collect();
    let weights = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    Stage::TreeEnsemble(
        TreeEnsemble::new(trees, Some(weights), rng.gen_range(-0.5..0.5), width).unwrap(),
    )
}

/// A mixed pipeline of at most `max_stages` stages over `m` inputs with a
/// scalar output. `labeled` allows a trailing loss transform; the caller
/// then supplies a label.
pub fn mixed_pipeline(
    rng: &mut ChaCha8Rng,
    m: usize,
    max_stages: usize,
    labeled: bool,
) -> Pipeline {
    let k = rng.gen_range(1..=max_stages);
    let mut stages: Vec<Stage> = Vec::new();
    let mut width = m;
    for s in 0..k {
        let last = s + 1 == k;
        let after_sigmoid =
            matches!(stages.last(), Some(Stage::Transform(t)) if t.transform == Transform::Sigmoid);
        let stage = match rng.gen_range(0..10) {
            _ if last && width == 1 && after_sigmoid && labeled => transform(Transform::BceLoss),
            _ if last && width == 1 && after_sigmoid => transform(Transform::Logit),
            _ if last && width == 1 && rng.gen_bool(0.5) => transform(Transform::Sigmoid),
            _ if last && rng.gen_bool(0.3) => tree_ensemble(rng, width, 4, 3),
            _ if last => linear(rng, width, 1),
            0 | 1 => {
                let f = *[Activation::Relu, Activation::Sigmoid, Activation::Tanh]
                    .choose(rng)
                    .unwrap();
                activation(f, width)
            }
            2 => tree_ensemble(rng, width, 4, 3),
            3 if width == 1 => transform(Transform::Sigmoid),
            4 if width >= 2 && m <= 8 => parallel_block(rng, width),
            _ => {
                let out = rng.gen_range(1..=6);
                linear(rng, width, out)
            }
        };
        width = stage.output_width();
        stages.push(stage);
    }
    if width != 1 {
        stages.push(linear(rng, width, 1));
    }
    Pipeline::new(stages).unwrap()
}

/// Two small sub-models on a random split of the input, one passthrough.
fn parallel_block(rng: &mut ChaCha8Rng, width: usize) -> Stage {
    let mut inputs: Vec<usize> = (0..width).collect();
    inputs.shuffle(rng);
    let cut = rng.gen_range(1..width);
    let (a, b) = inputs.split_at(cut);
    let sub = |rng: &mut ChaCha8Rng, ins: &[usize], out: usize| {
        let f = *[Activation::Relu, Activation::Tanh].choose(rng).unwrap();
        let hidden = rng.gen_range(1..=3);
        let pipeline = Pipeline::new(vec![
            linear(rng, ins.len(), hidden),
            activation(f, hidden),
            linear(rng, hidden, 1),
        ])
        .unwrap();
        SubModel {
            pipeline,
            inputs: ins.to_vec(),
            outputs: vec![out],
        }
    };
    let blocks = vec![sub(rng, a, 0), sub(rng, b, 1)];
    let pass = vec![(inputs[0], 2)];
    Stage::ParallelBlock(ParallelBlock::new(blocks, pass, width).unwrap())
}

pub fn requires_label(p: &Pipeline) -> bool {
    p.requires_label()
}
