//! Exact, exponential-cost Shapley values.
//!
//! These are the ground truth for every approximate attributor in the
//! crate. Games are tabulated over all `2^m` coalitions (bit `i` of a mask is
//! player `i`) and reduced with the subset-weight formula
//!
//! ```text
//! phi_i = sum_{S not containing i} |S|! (m - |S| - 1)! / m! * (v(S + i) - v(S))
//! ```
//!
//! in ascending mask order, so results do not depend on thread count. The
//! permutation form is kept as an independent cross-check for small games.
//!
//! The module also hosts the k-partition approximation for stages of the form
//! `nonlin(beta . x + bias)`: exact Shapley over `K` blocks of features, with
//! each block's value spread over its members in proportion to their linear
//! contributions. One block gives the Rescale rule, a sign split gives
//! RevealCancel, singletons give the exact answer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model_ir::{splice_mask_into, Activation};
use crate::numeric::{affine, pairwise_mean};

/// Hard limit on the number of players in any exact computation.
pub const MAX_PLAYERS: usize = 20;

/// Largest game the permutation cross-check will enumerate.
pub const MAX_PERMUTATION_PLAYERS: usize = 8;

fn guard(players: usize) -> Result<()> {
    if players > MAX_PLAYERS {
        Err(Error::ArityGuard {
            players,
            limit: MAX_PLAYERS,
        })
    } else {
        Ok(())
    }
}

/// A cooperative game tabulated over every coalition.
#[derive(Debug, Clone, PartialEq)]
pub struct SetFunction {
    arity: usize,
    values: Vec<f64>,
}

impl SetFunction {
    /// Tabulates `eval(mask)` for every mask in `0..2^arity`.
    pub fn from_fn(arity: usize, mut eval: impl FnMut(usize) -> Result<f64>) -> Result<Self> {
        guard(arity)?;
        let values = (0..1usize << arity)
            .map(&mut eval)
            .collect::<Result<Vec<_>>>()?;
        Ok(SetFunction { arity, values })
    }

    pub fn from_values(arity: usize, values: Vec<f64>) -> Result<Self> {
        guard(arity)?;
        if values.len() != 1 << arity {
            return Err(Error::width("set function table", 1 << arity, values.len()));
        }
        Ok(SetFunction { arity, values })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn value(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    pub fn grand_coalition(&self) -> f64 {
        self.values[(1 << self.arity) - 1]
    }

    pub fn empty_coalition(&self) -> f64 {
        self.values[0]
    }

    /// Pointwise `a * self + other`.
    pub fn combine(&self, a: f64, other: &SetFunction) -> Result<SetFunction> {
        if self.arity != other.arity {
            return Err(Error::width("set function arity", self.arity, other.arity));
        }
        Ok(SetFunction {
            arity: self.arity,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + y)
                .collect(),
        })
    }
}

/// `|S|! (m-|S|-1)! / m!` indexed by `|S|`, as `1 / (m * C(m-1, |S|))`.
fn subset_weights(m: usize) -> Vec<f64> {
    let mut binom = 1.0f64;
    let mut out = Vec::with_capacity(m);
    for s in 0..m {
        if s > 0 {
            binom = binom * (m - s) as f64 / s as f64;
        }
        out.push(1.0 / (m as f64 * binom));
    }
    out
}

pub fn exact_shapley(v: &SetFunction) -> Vec<f64> {
    let m = v.arity;
    if m == 0 {
        return Vec::new();
    }
    let weights = subset_weights(m);
    let player = |i: usize| {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in 0..1usize << m {
            if mask & bit == 0 {
                let gain = v.values[mask | bit] - v.values[mask];
                acc += weights[mask.count_ones() as usize] * gain;
            }
        }
        acc
    };
    if m >= 12 {
        (0..m).into_par_iter().map(player).collect()
    } else {
        (0..m).map(player).collect()
    }
}

/// Average marginal contribution over all `m!` orderings.
pub fn permutation_shapley(v: &SetFunction) -> Result<Vec<f64>> {
    let m = v.arity;
    if m > MAX_PERMUTATION_PLAYERS {
        return Err(Error::ArityGuard {
            players: m,
            limit: MAX_PERMUTATION_PLAYERS,
        });
    }
    fn walk(v: &SetFunction, order: &mut Vec<usize>, used: usize, acc: &mut [f64]) {
        let m = v.arity;
        if order.len() == m {
            let mut mask = 0usize;
            for &i in order.iter() {
                acc[i] += v.values[mask | 1 << i] - v.values[mask];
                mask |= 1 << i;
            }
            return;
        }
        for i in 0..m {
            if used & 1 << i == 0 {
                order.push(i);
                walk(v, order, used | 1 << i, acc);
                order.pop();
            }
        }
    }
    let mut acc = vec![0.0; m];
    walk(v, &mut Vec::with_capacity(m), 0, &mut acc);
    let count: f64 = (1..=m).map(|k| k as f64).product();
    Ok(acc.into_iter().map(|a| a / count).collect())
}

/// Exact Shapley values of the single-baseline game `S -> f(splice(xe, xb, S))`.
pub fn single_baseline_shapley<F>(f: F, explicand: &[f64], baseline: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if explicand.len() != baseline.len() {
        return Err(Error::width("baseline", explicand.len(), baseline.len()));
    }
    let m = explicand.len();
    guard(m)?;
    let players: Vec<usize> = (0..m).collect();
    let mut buf = baseline.to_vec();
    let game = SetFunction::from_fn(m, |mask| {
        splice_mask_into(&mut buf, explicand, baseline, &players, mask);
        f(&buf)
    })?;
    Ok(exact_shapley(&game))
}

/// Interventional Shapley values over a baseline distribution: the mean of
/// the single-baseline values, reduced in baseline order.
pub fn interventional_shapley<F>(
    f: F,
    explicand: &[f64],
    baselines: &[Vec<f64>],
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if baselines.is_empty() {
        return Err(Error::EmptyBaselineSet);
    }
    guard(explicand.len())?;
    let per_baseline = baselines
        .iter()
        .map(|b| single_baseline_shapley(&f, explicand, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_mean(&per_baseline))
}

/// Disjoint, non-empty blocks covering `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    width: usize,
}

impl Partition {
    pub fn new(blocks: Vec<Vec<usize>>, width: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        let mut owner = vec![None; width];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidPartition(format!("block {b} is empty")));
            }
            for &i in block {
                match owner.get_mut(i) {
                    None => {
                        return Err(Error::InvalidPartition(format!(
                            "feature {i} outside 0..{width}"
                        )))
                    }
                    Some(Some(prev)) => {
                        return Err(Error::InvalidPartition(format!(
                            "feature {i} in blocks {prev} and {b}"
                        )))
                    }
                    Some(slot) => *slot = Some(b),
                }
            }
        }
        if let Some(i) = owner.iter().position(Option::is_none) {
            return Err(Error::InvalidPartition(format!("feature {i} not covered")));
        }
        Ok(Partition { blocks, width })
    }

    /// One block holding every feature (the Rescale rule).
    pub fn whole(width: usize) -> Result<Self> {
        Partition::new(vec![(0..width).collect()], width)
    }

    pub fn singletons(width: usize) -> Result<Self> {
        Partition::new((0..width).map(|i| vec![i]).collect(), width)
    }

    /// RevealCancel split: features with `beta_i * x_i > 0` against the
    /// rest, where `x` is chosen by `split`. Empty sides are dropped.
    pub fn reveal_cancel(
        beta: &[f64],
        explicand: &[f64],
        baseline: &[f64],
        split: SplitVariable,
    ) -> Result<Self> {
        let width = beta.len();
        if explicand.len() != width || baseline.len() != width {
            return Err(Error::width("reveal-cancel split", width, explicand.len()));
        }
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..width).partition(|&i| {
            let x = match split {
                SplitVariable::Explicand => explicand[i],
                SplitVariable::Delta => explicand[i] - baseline[i],
            };
            beta[i] * x > 0.0
        });
        Partition::new(
            [pos, neg].into_iter().filter(|b| !b.is_empty()).collect(),
            width,
        )
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Which activations decide the RevealCancel split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitVariable {
    #[default]
    Explicand,
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KPartitionAttribution {
    pub values: Vec<f64>,
    /// Shapley value of each block as a super-player.
    pub block_values: Vec<f64>,
    /// Blocks whose linear delta was exactly zero although some member had a
    /// non-zero contribution; their value was spread uniformly.
    pub degenerate_blocks: Vec<usize>,
}

/// k-partition approximation for `nonlin(beta . x + bias)`.
pub fn kpartition_attribution(
    beta: &[f64],
    bias: f64,
    nonlin: Activation,
    partition: &Partition,
    explicand: &[f64],
    baseline: &[f64],
) -> Result<KPartitionAttribution> {
    let m = beta.len();
    if explicand.len() != m || baseline.len() != m {
        return Err(Error::width("k-partition input", m, explicand.len()));
    }
    if partition.width() != m {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} features, stage has {m}",
            partition.width()
        )));
    }
    let k = partition.len();
    guard(k)?;

    let mut buf = baseline.to_vec();
    let splice_blocks = |mask: usize, buf: &mut Vec<f64>| {
        for (b, block) in partition.blocks().iter().enumerate() {
            let from = if mask >> b & 1 == 1 {
                explicand
            } else {
                baseline
            };
            for &i in block {
                buf[i] = from[i];
            }
        }
    };
    let game = SetFunction::from_fn(k, |mask| {
        splice_blocks(mask, &mut buf);
        Ok(nonlin.apply(affine(beta, bias, &buf)))
    })?;
    let block_values = exact_shapley(&game);

    let g_base = affine(beta, bias, baseline);
    let mut values = vec![0.0; m];
    let mut degenerate_blocks = Vec::new();
    for (b, block) in partition.blocks().iter().enumerate() {
        splice_blocks(1 << b, &mut buf);
        let block_delta = affine(beta, bias, &buf) - g_base;
        let contribution = |i: usize| beta[i] * (explicand[i] - baseline[i]);
        if block_delta != 0.0 {
            let ratio = block_values[b] / block_delta;
            for &i in block {
                values[i] = contribution(i) * ratio;
            }
        } else {
            if block.iter().any(|&i| contribution(i) != 0.0) {
                degenerate_blocks.push(b);
            }
            let share = block_values[b] / block.len() as f64;
            for &i in block {
                values[i] = share;
            }
        }
    }
    Ok(KPartitionAttribution {
        values,
        block_values,
        degenerate_blocks,
    })
}
