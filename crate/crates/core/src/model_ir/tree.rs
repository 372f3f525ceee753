use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary decision tree over a fixed-width input. Samples go left when
/// `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl Tree {
    /// Validates structure against the ensemble input width: every node
    /// reachable from the root is visited once (no cycles, no shared
    /// children), children exist, feature indices are in range and all
    /// numbers are finite.
    pub fn new(nodes: Vec<TreeNode>, root: usize, input_width: usize) -> Result<Self> {
        let bad = |reason: String| Error::invalid_stage("tree", reason);
        if root >= nodes.len() {
            return Err(bad(format!("root {root} out of {} nodes", nodes.len())));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if id >= nodes.len() {
                return Err(bad(format!(
                    "child index {id} out of {} nodes",
                    nodes.len()
                )));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(bad(format!(
                    "node {id} reached twice (cycle or shared child)"
                )));
            }
            match &nodes[id] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= input_width {
                        return Err(bad(format!(
                            "node {id} splits on feature {feature}, input width is {input_width}"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(bad(format!("node {id} has a non-finite threshold")));
                    }
                    stack.push(*left);
                    stack.push(*right);
                }
                TreeNode::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(bad(format!("leaf {id} has a non-finite value")));
                    }
                }
            }
        }
        Ok(Tree { nodes, root })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                TreeNode::Leaf { value } => return *value,
            }
        }
    }

    /// Features tested by some reachable split, ascending.
    pub fn features(&self) -> Vec<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if let TreeNode::Split {
                feature,
                left,
                right,
                ..
            } = &self.nodes[id]
            {
                out.insert(*feature);
                stack.push(*left);
                stack.push(*right);
            }
        }
        out.into_iter().collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, self.root)
    }
}
