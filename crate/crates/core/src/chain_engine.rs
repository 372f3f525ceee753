//! Generalized rescale rule.
//!
//! For one baseline, attributions are pushed backwards through the pipeline:
//!
//! ```text
//! psi_k = A_k                                   (A_i: stage attribution matrix)
//! psi_i = A_i (psi_{i+1} / (f_i(xe) - f_i(xb)))  (elementwise division, x/0 = 0)
//! ```
//!
//! and `psi_1` is the attribution in input space. Every `psi_i` sums to
//! `f_k(xe) - f_k(xb)`; this is checked after each stage. Over a baseline
//! distribution the per-baseline results are averaged in baseline order.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline_select::BaselineSet;
use crate::error::{Error, Result};
use crate::model_ir::Pipeline;
use crate::numeric::{mean, pairwise_mean, sub, sum_relative_error, Matrix};
use crate::stage_attributors::stage_attribution;

/// Relative tolerance of the per-stage efficiency assertion.
pub const EFFICIENCY_TOLERANCE: f64 = 1e-8;

/// In release builds one chain in this many is checked for efficiency.
const RELEASE_CHECK_PERIOD: u64 = 64;

static CHAIN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn efficiency_check_due() -> bool {
    cfg!(debug_assertions)
        || CHAIN_COUNTER
            .fetch_add(1, Ordering::Relaxed)
            .is_multiple_of(RELEASE_CHECK_PERIOD)
}

/// Elementwise `a / b` with `x / 0 = 0` (exact zero test).
pub fn hadamard_div(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::width("hadamard division", a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| if *y != 0.0 { x / y } else { 0.0 })
        .collect())
}

/// Backward pass for a pipeline of any output width. Column `c` of every
/// matrix is the chain for output `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMatrix {
    /// `psi[i]` has one row per input of stage `i` (0-based).
    pub psi: Vec<Matrix>,
    /// `f_i(xe) - f_i(xb)` per stage.
    pub stage_deltas: Vec<Vec<f64>>,
    pub final_delta: Vec<f64>,
    pub degenerate_divisions: usize,
}

impl ChainMatrix {
    pub fn input_attribution(&self) -> &Matrix {
        &self.psi[0]
    }
}

pub fn chain_matrix(
    pipeline: &Pipeline,
    explicand: &[f64],
    baseline: &[f64],
    label: Option<f64>,
) -> Result<ChainMatrix> {
    let te = pipeline.evaluate_labeled(explicand, label)?;
    let tb = pipeline.evaluate_labeled(baseline, label)?;
    let k = pipeline.len();
    let stage_deltas: Vec<Vec<f64>> = (0..k)
        .map(|i| sub(te.stage_output(i), tb.stage_output(i)))
        .collect();
    let final_delta = stage_deltas[k - 1].clone();
    let check = efficiency_check_due();

    let mut psi: Vec<Matrix> = Vec::with_capacity(k);
    let mut degenerate = 0;
    let last = stage_attribution(
        &pipeline.stages()[k - 1],
        te.stage_input(k - 1),
        tb.stage_input(k - 1),
        label,
    )?;
    degenerate += last.degenerate_divisions;
    psi.push(last.matrix);
    if check {
        check_efficiency(k - 1, &psi[0], &final_delta)?;
    }

    for i in (0..k - 1).rev() {
        let upstream = psi.last().expect("at least one stage");
        let delta = &stage_deltas[i];
        let mut scaled = Matrix::zeros(upstream.rows(), upstream.cols());
        for o in 0..upstream.rows() {
            if delta[o] == 0.0 {
                if let Some(&value) = upstream.row(o).iter().find(|v| **v != 0.0) {
                    return Err(Error::LostAttribution {
                        stage: i,
                        output: o,
                        value,
                    });
                }
                degenerate += 1;
                continue;
            }
            let ratios = hadamard_div(upstream.row(o), &vec![delta[o]; upstream.cols()])?;
            for (c, r) in ratios.into_iter().enumerate() {
                scaled[(o, c)] = r;
            }
        }
        let attribution = stage_attribution(
            &pipeline.stages()[i],
            te.stage_input(i),
            tb.stage_input(i),
            label,
        )?;
        degenerate += attribution.degenerate_divisions;
        let next = attribution.matrix.matmul(&scaled);
        if check {
            check_efficiency(i, &next, &final_delta)?;
        }
        psi.push(next);
    }
    psi.reverse();
    Ok(ChainMatrix {
        psi,
        stage_deltas,
        final_delta,
        degenerate_divisions: degenerate,
    })
}

fn check_efficiency(stage: usize, psi: &Matrix, target: &[f64]) -> Result<()> {
    for (c, &expected) in target.iter().enumerate() {
        let column = psi.column(c);
        if sum_relative_error(&column, expected) > EFFICIENCY_TOLERANCE {
            return Err(Error::EfficiencyViolation {
                stage,
                sum: column.iter().sum(),
                expected,
            });
        }
    }
    Ok(())
}

/// Intermediate attributions of a scalar pipeline for one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    /// `psi[i]` attributes the output to the inputs of stage `i` (0-based);
    /// `psi[0]` is the input-space attribution.
    pub psi: Vec<Vec<f64>>,
    pub stage_deltas: Vec<Vec<f64>>,
    pub final_delta: f64,
    pub degenerate_divisions: usize,
}

impl ChainTrace {
    pub fn attribution(&self) -> &[f64] {
        &self.psi[0]
    }
}

pub fn chain_single_baseline(
    pipeline: &Pipeline,
    explicand: &[f64],
    baseline: &[f64],
    label: Option<f64>,
) -> Result<ChainTrace> {
    if pipeline.output_width() != 1 {
        return Err(Error::NonScalarOutput(pipeline.output_width()));
    }
    let chain = chain_matrix(pipeline, explicand, baseline, label)?;
    Ok(ChainTrace {
        psi: chain.psi.iter().map(|m| m.column(0)).collect(),
        stage_deltas: chain.stage_deltas,
        final_delta: chain.final_delta[0],
        degenerate_divisions: chain.degenerate_divisions,
    })
}

/// A sample to explain.
#[derive(Debug, Clone, PartialEq)]
pub struct Explicand {
    pub id: String,
    pub values: Vec<f64>,
    pub label: Option<f64>,
}

impl Explicand {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Self {
        Explicand {
            id: id.into(),
            values,
            label: None,
        }
    }

    pub fn with_label(mut self, label: f64) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFlags {
    /// Divisions by an exactly-zero output delta (numerator verified zero).
    pub degenerate_divisions: usize,
    /// Distributed responses whose reported score delta disagreed with the
    /// coordinator's own score values.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub score_audit_mismatches: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// Attribution of one explicand against a baseline set.
///
/// Serializes as `{explicand_id, prediction, expected_value,
/// baseline_set_id, attributions: [{feature, value}], flags}` plus
/// `intermediate` and `traces` when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ReportDoc", from = "ReportDoc")]
pub struct AttributionReport {
    pub explicand_id: String,
    pub feature_names: Vec<String>,
    pub attributions: Vec<f64>,
    /// `f_k(xe)`.
    pub prediction: f64,
    /// Mean of `f_k` over the baselines.
    pub expected_value: f64,
    pub baseline_set_id: String,
    pub flags: ReportFlags,
    /// Per-baseline chains, when retained.
    pub traces: Option<Vec<ChainTrace>>,
    /// Attributions at an intermediate layer (e.g. score features in a
    /// distributed pipeline), when published.
    pub intermediate: Option<Vec<(String, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureValue {
    feature: String,
    value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportDoc {
    explicand_id: String,
    prediction: f64,
    expected_value: f64,
    baseline_set_id: String,
    attributions: Vec<FeatureValue>,
    flags: ReportFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intermediate: Option<Vec<FeatureValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    traces: Option<Vec<ChainTrace>>,
}

fn pairs(names: &[String], values: &[f64]) -> Vec<FeatureValue> {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| FeatureValue {
            feature: n.clone(),
            value: *v,
        })
        .collect()
}

impl From<AttributionReport> for ReportDoc {
    fn from(r: AttributionReport) -> Self {
        ReportDoc {
            attributions: pairs(&r.feature_names, &r.attributions),
            intermediate: r.intermediate.map(|i| {
                i.into_iter()
                    .map(|(feature, value)| FeatureValue { feature, value })
                    .collect()
            }),
            explicand_id: r.explicand_id,
            prediction: r.prediction,
            expected_value: r.expected_value,
            baseline_set_id: r.baseline_set_id,
            flags: r.flags,
            traces: r.traces,
        }
    }
}

impl From<ReportDoc> for AttributionReport {
    fn from(d: ReportDoc) -> Self {
        let (feature_names, attributions) = d
            .attributions
            .into_iter()
            .map(|fv| (fv.feature, fv.value))
            .unzip();
        AttributionReport {
            explicand_id: d.explicand_id,
            feature_names,
            attributions,
            prediction: d.prediction,
            expected_value: d.expected_value,
            baseline_set_id: d.baseline_set_id,
            flags: d.flags,
            traces: d.traces,
            intermediate: d
                .intermediate
                .map(|i| i.into_iter().map(|fv| (fv.feature, fv.value)).collect()),
        }
    }
}

impl AttributionReport {
    /// `sum(phi) - (prediction - expected_value)`, relative to the larger of
    /// the target and the L1 norm of `phi`.
    pub fn efficiency_error(&self) -> f64 {
        sum_relative_error(&self.attributions, self.prediction - self.expected_value)
    }
}

pub fn reports_to_json(reports: &[AttributionReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

pub fn reports_from_json(text: &str) -> Result<Vec<AttributionReport>> {
    Ok(serde_json::from_str(text)?)
}

/// Wide CSV: one row per explicand, one column per feature.
pub fn reports_to_csv(reports: &[AttributionReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "explicand_id".to_string(),
        "baseline_set_id".into(),
        "expected_value".into(),
        "prediction".into(),
    ];
    if let Some(first) = reports.first() {
        header.extend(first.feature_names.iter().cloned());
    }
    w.write_record(&header)?;
    for r in reports {
        if Some(&r.feature_names) != reports.first().map(|f| &f.feature_names) {
            return Err(Error::ReportMismatch(
                "reports cover different features".into(),
            ));
        }
        let mut row = vec![
            r.explicand_id.clone(),
            r.baseline_set_id.clone(),
            r.expected_value.to_string(),
            r.prediction.to_string(),
        ];
        row.extend(r.attributions.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn default_feature_names(width: usize) -> Vec<String> {
    (0..width).map(|i| format!("x{i}")).collect()
}

/// Chain attribution of `explicand` averaged over `baselines`.
pub fn chain_with_distribution(
    pipeline: &Pipeline,
    explicand: &Explicand,
    baselines: &BaselineSet,
) -> Result<AttributionReport> {
    Explainer::new(pipeline).explain(explicand, baselines)
}

/// Reusable explanation settings for one pipeline.
#[derive(Debug, Clone)]
pub struct Explainer<'a> {
    pipeline: &'a Pipeline,
    feature_names: Vec<String>,
    retain_traces: bool,
}

impl<'a> Explainer<'a> {
    pub fn new(pipeline: &'a Pipeline) -> Self {
        Explainer {
            pipeline,
            feature_names: default_feature_names(pipeline.input_width()),
            retain_traces: false,
        }
    }

    pub fn feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.pipeline.input_width() {
            return Err(Error::width(
                "feature names",
                self.pipeline.input_width(),
                names.len(),
            ));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn retain_traces(mut self, retain: bool) -> Self {
        self.retain_traces = retain;
        self
    }

    pub fn explain(
        &self,
        explicand: &Explicand,
        baselines: &BaselineSet,
    ) -> Result<AttributionReport> {
        if baselines.is_empty() {
            return Err(Error::EmptyBaselineSet);
        }
        if self.pipeline.output_width() != 1 {
            return Err(Error::NonScalarOutput(self.pipeline.output_width()));
        }
        let label = explicand.label;
        let traces = baselines
            .samples()
            .par_iter()
            .map(|xb| chain_single_baseline(self.pipeline, &explicand.values, xb, label))
            .collect::<Result<Vec<_>>>()?;
        let prediction = self.pipeline.predict(&explicand.values, label)?;
        let baseline_values: Vec<f64> = traces.iter().map(|t| prediction - t.final_delta).collect();
        let per_baseline: Vec<Vec<f64>> = traces.iter().map(|t| t.psi[0].clone()).collect();
        Ok(AttributionReport {
            explicand_id: explicand.id.clone(),
            feature_names: self.feature_names.clone(),
            attributions: pairwise_mean(&per_baseline),
            prediction,
            expected_value: mean(&baseline_values),
            baseline_set_id: baselines.id().to_string(),
            flags: ReportFlags {
                degenerate_divisions: traces.iter().map(|t| t.degenerate_divisions).sum(),
                ..ReportFlags::default()
            },
            traces: self.retain_traces.then_some(traces),
            intermediate: None,
        })
    }
}

/// Weighted combination of reports for the same explicand and baseline set.
pub fn ensemble_attr(members: &[(f64, &AttributionReport)]) -> Result<AttributionReport> {
    let (_, first) = members
        .first()
        .ok_or_else(|| Error::ReportMismatch("no ensemble members".into()))?;
    for (_, r) in &members[1..] {
        if r.explicand_id != first.explicand_id {
            return Err(Error::ReportMismatch(format!(
                "explicand `{}` vs `{}`",
                r.explicand_id, first.explicand_id
            )));
        }
        if r.baseline_set_id != first.baseline_set_id {
            return Err(Error::ReportMismatch(format!(
                "baseline set `{}` vs `{}`",
                r.baseline_set_id, first.baseline_set_id
            )));
        }
        if r.feature_names != first.feature_names {
            return Err(Error::ReportMismatch("feature spaces differ".into()));
        }
    }
    let mut attributions = vec![0.0; first.attributions.len()];
    let (mut prediction, mut expected_value, mut degenerate) = (0.0, 0.0, 0);
    for (w, r) in members {
        for (a, v) in attributions.iter_mut().zip(&r.attributions) {
            *a += w * v;
        }
        prediction += w * r.prediction;
        expected_value += w * r.expected_value;
        degenerate += r.flags.degenerate_divisions;
    }
    Ok(AttributionReport {
        explicand_id: first.explicand_id.clone(),
        feature_names: first.feature_names.clone(),
        attributions,
        prediction,
        expected_value,
        baseline_set_id: first.baseline_set_id.clone(),
        flags: ReportFlags {
            degenerate_divisions: degenerate,
            ..ReportFlags::default()
        },
        traces: None,
        intermediate: None,
    })
}
