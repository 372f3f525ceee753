//! Group attributions over named, possibly overlapping feature groups.
//!
//! Raw group values are (optionally weighted) sums of member attributions,
//! plus a residual group of features no group mentions. When groups overlap
//! or weights are non-uniform, the raw values are rescaled by
//! `sum(phi) / sum(raw)` so that group values again sum to `sum(phi)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chain_engine::AttributionReport;
use crate::error::{Error, Result};

pub const RESIDUAL: &str = "residual";

/// Relative size below which the rescaling denominator counts as zero.
pub const NORMALIZATION_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub members: Vec<usize>,
    /// Per-member weights; uniform (all 1) when absent.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    groups: Vec<Group>,
    residual: Vec<usize>,
    width: usize,
}

impl GroupSpec {
    pub fn new(groups: Vec<Group>, width: usize) -> Result<Self> {
        let mut names = BTreeSet::new();
        let mut covered = vec![false; width];
        for g in &groups {
            if g.name == RESIDUAL {
                return Err(Error::InvalidGroup(format!("`{RESIDUAL}` is reserved")));
            }
            if !names.insert(g.name.as_str()) {
                return Err(Error::InvalidGroup(format!("duplicate group `{}`", g.name)));
            }
            let mut seen = BTreeSet::new();
            for &i in &g.members {
                if i >= width {
                    return Err(Error::InvalidGroup(format!(
                        "group `{}`: feature {i} out of range for width {width}",
                        g.name
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::InvalidGroup(format!(
                        "group `{}` lists feature {i} twice",
                        g.name
                    )));
                }
                covered[i] = true;
            }
            if let Some(w) = &g.weights {
                if w.len() != g.members.len() {
                    return Err(Error::InvalidGroup(format!(
                        "group `{}` has {} members but {} weights",
                        g.name,
                        g.members.len(),
                        w.len()
                    )));
                }
                if w.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidGroup(format!(
                        "group `{}` has a non-finite weight",
                        g.name
                    )));
                }
            }
        }
        let residual = (0..width).filter(|&i| !covered[i]).collect();
        Ok(GroupSpec {
            groups,
            residual,
            width,
        })
    }

    /// Unweighted groups from `(name, members)` pairs.
    pub fn from_sets(sets: Vec<(&str, Vec<usize>)>, width: usize) -> Result<Self> {
        let groups = sets
            .into_iter()
            .map(|(name, members)| Group {
                name: name.to_string(),
                members,
                weights: None,
            })
            .collect();
        GroupSpec::new(groups, width)
    }

    /// Parses `{"groups": {"name": [feature names or 0-based indices]},
    /// "weights": {"name": [..]}}`; `weights` is optional.
    pub fn from_json(text: &str, feature_names: &[String]) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            groups: serde_json::Map<String, Value>,
            #[serde(default)]
            weights: serde_json::Map<String, Value>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        let resolve = |group: &str, v: &Value| -> Result<usize> {
            match v {
                Value::String(name) => feature_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::UnknownFeature(name.clone())),
                Value::Number(n) => n.as_u64().map(|i| i as usize).ok_or_else(|| {
                    Error::InvalidGroup(format!("group `{group}`: bad feature index {n}"))
                }),
                other => Err(Error::InvalidGroup(format!(
                    "group `{group}`: bad member {other}"
                ))),
            }
        };
        let mut groups = Vec::with_capacity(doc.groups.len());
        for (name, members) in &doc.groups {
            let list = members
                .as_array()
                .ok_or_else(|| Error::InvalidGroup(format!("group `{name}` must be a list")))?;
            let members = list
                .iter()
                .map(|v| resolve(name, v))
                .collect::<Result<Vec<_>>>()?;
            let weights = match doc.weights.get(name) {
                None => None,
                Some(w) => Some(
                    serde_json::from_value::<Vec<f64>>(w.clone())
                        .map_err(|e| Error::InvalidGroup(format!("weights of `{name}`: {e}")))?,
                ),
            };
            groups.push(Group {
                name: name.clone(),
                members,
                weights,
            });
        }
        if let Some(extra) = doc.weights.keys().find(|k| !doc.groups.contains_key(*k)) {
            return Err(Error::InvalidGroup(format!(
                "weights for unknown group `{extra}`"
            )));
        }
        GroupSpec::new(groups, feature_names.len())
    }

    pub fn from_path(path: impl AsRef<std::path::Path>, feature_names: &[String]) -> Result<Self> {
        GroupSpec::from_json(&std::fs::read_to_string(path)?, feature_names)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn residual(&self) -> &[usize] {
        &self.residual
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Group names in output order, residual last.
    pub fn names(&self) -> Vec<String> {
        self.groups
            .iter()
            .map(|g| g.name.clone())
            .chain(std::iter::once(RESIDUAL.to_string()))
            .collect()
    }

    /// True when no feature belongs to two groups and no weights are set, so
    /// groups plus residual partition the features.
    pub fn is_disjoint_cover(&self) -> bool {
        let mut seen = vec![false; self.width];
        for g in &self.groups {
            if g.weights
                .as_ref()
                .is_some_and(|w| w.iter().any(|x| *x != 1.0))
            {
                return false;
            }
            for &i in &g.members {
                if seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAttribution {
    /// Group names, residual last.
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Sums before rescaling.
    pub raw: Vec<f64>,
    /// Factor applied to `raw`; 1 when no rescaling happened.
    pub factor: f64,
    /// Overlapping groups whose raw sums cancel; raw sums are returned.
    pub unnormalizable_overlap: bool,
}

pub fn group_attr(phi: &[f64], spec: &GroupSpec) -> Result<GroupAttribution> {
    if phi.len() != spec.width {
        return Err(Error::width("group attribution", spec.width, phi.len()));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "group attribution input".into(),
        });
    }
    let mut raw: Vec<f64> = spec
        .groups
        .iter()
        .map(|g| match &g.weights {
            None => g.members.iter().map(|&i| phi[i]).sum(),
            Some(w) => g.members.iter().zip(w).map(|(&i, w)| w * phi[i]).sum(),
        })
        .collect();
    raw.push(spec.residual.iter().map(|&i| phi[i]).sum());

    let mut out = GroupAttribution {
        names: spec.names(),
        values: raw.clone(),
        raw,
        factor: 1.0,
        unnormalizable_overlap: false,
    };
    if spec.is_disjoint_cover() {
        return Ok(out);
    }
    let total: f64 = phi.iter().sum();
    let denominator: f64 = out.raw.iter().sum();
    let scale: f64 = out.raw.iter().map(|v| v.abs()).sum();
    if denominator.abs() > NORMALIZATION_EPSILON * scale {
        out.factor = total / denominator;
        out.values = out.raw.iter().map(|v| v * out.factor).collect();
    } else {
        out.unnormalizable_overlap = true;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFlags {
    pub normalization_factor: f64,
    pub unnormalizable_overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub group: String,
    pub value: f64,
}

/// Group-level counterpart of an attribution report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub explicand_id: String,
    pub groups: Vec<GroupEntry>,
    pub prediction: f64,
    pub expected_value: f64,
    pub baseline_set_id: String,
    pub flags: GroupFlags,
}

pub fn group_report(report: &AttributionReport, spec: &GroupSpec) -> Result<GroupReport> {
    let g = group_attr(&report.attributions, spec)?;
    Ok(GroupReport {
        explicand_id: report.explicand_id.clone(),
        groups: g
            .names
            .iter()
            .zip(&g.values)
            .map(|(n, v)| GroupEntry {
                group: n.clone(),
                value: *v,
            })
            .collect(),
        prediction: report.prediction,
        expected_value: report.expected_value,
        baseline_set_id: report.baseline_set_id.clone(),
        flags: GroupFlags {
            normalization_factor: g.factor,
            unnormalizable_overlap: g.unnormalizable_overlap,
        },
    })
}

/// Wide CSV: one row per report, one column per group.
pub fn group_reports_csv(reports: &[GroupReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "explicand_id".to_string(),
        "baseline_set_id".into(),
        "expected_value".into(),
        "prediction".into(),
    ];
    if let Some(first) = reports.first() {
        header.extend(first.groups.iter().map(|g| g.group.clone()));
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.explicand_id.clone(),
            r.baseline_set_id.clone(),
            r.expected_value.to_string(),
            r.prediction.to_string(),
        ];
        row.extend(r.groups.iter().map(|g| g.value.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
