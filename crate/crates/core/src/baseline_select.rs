//! Baseline distributions: explicit sets, seeded uniform subsamples and
//! k-means clusters over a reduced feature set.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Where a baseline set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Explicit,
    Uniform { n: usize, seed: u64 },
    Cluster { index: usize, centroid: Vec<f64> },
}

/// An ordered set of baseline samples.
///
/// The id is a SHA-256 over the ordered sample ids, so every party holding
/// the same rows (possibly different columns of them) derives the same id.
/// Samples without an external id are named by a hash of their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSet {
    id: String,
    sample_ids: Vec<String>,
    samples: Vec<Vec<f64>>,
    provenance: Provenance,
}

/// Canonical decimal text of a value: 17 significant digits, `-0` folded to `0`.
pub fn canonical_decimal(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

/// Content-derived id of an anonymous sample.
pub fn content_id(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            h.update(b",");
        }
        h.update(canonical_decimal(*v).as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Identifier of an ordered list of sample ids.
pub fn baseline_set_id(sample_ids: &[String]) -> String {
    let mut h = Sha256::new();
    for id in sample_ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

impl BaselineSet {
    /// Validates widths, finiteness and id uniqueness. An empty set is
    /// representable; attribution entry points reject it.
    pub fn new(
        samples: Vec<Vec<f64>>,
        sample_ids: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if samples.len() != sample_ids.len() {
            return Err(Error::width(
                "baseline sample ids",
                samples.len(),
                sample_ids.len(),
            ));
        }
        if let Some(first) = samples.first() {
            for (r, s) in samples.iter().enumerate() {
                if s.len() != first.len() {
                    return Err(Error::width(format!("baseline {r}"), first.len(), s.len()));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("baseline {r}"),
                    });
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = sample_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Config(format!("duplicate baseline id `{dup}`")));
        }
        Ok(BaselineSet {
            id: baseline_set_id(&sample_ids),
            sample_ids,
            samples,
            provenance,
        })
    }

    /// Anonymous samples, named by content.
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Result<Self> {
        let ids = samples.iter().map(|s| content_id(s)).collect();
        BaselineSet::new(samples, ids, Provenance::Explicit)
    }

    /// The rows of `data` with the given ids, in the given order.
    pub fn from_dataset(data: &Dataset, ids: &[String]) -> Result<Self> {
        let samples = ids
            .iter()
            .map(|id| data.get(id).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        BaselineSet::new(samples, ids.to_vec(), Provenance::Explicit)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn width(&self) -> Option<usize> {
        self.samples.first().map(Vec::len)
    }

    /// Coordinatewise mean, in sample order.
    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyBaselineSet);
        }
        Ok(crate::numeric::pairwise_mean(&self.samples))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("baseline sets serialize")
    }

    /// Parses and re-validates a serialized set, including its id.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BaselineSet = serde_json::from_str(text)?;
        let set = BaselineSet::new(raw.samples, raw.sample_ids, raw.provenance)?;
        if set.id != raw.id {
            return Err(Error::Config(format!(
                "baseline set id {} does not match its contents ({})",
                raw.id, set.id
            )));
        }
        Ok(set)
    }
}

/// `n` distinct rows drawn without replacement, in draw order.
pub fn uniform_sample(data: &Dataset, n: usize, seed: u64) -> Result<BaselineSet> {
    if n == 0 || n > data.len() {
        return Err(Error::OutOfRange {
            what: "baseline count",
            value: n,
            range: format!("1..={}", data.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, data.len(), n);
    let ids: Vec<String> = picks.iter().map(|i| data.ids()[i].clone()).collect();
    let samples = picks.iter().map(|i| data.row(i).to_vec()).collect();
    BaselineSet::new(samples, ids, Provenance::Uniform { n, seed })
}

/// Baseline-set ids known to a party, mapped to their ordered sample ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaselineRegistry {
    sets: BTreeMap<String, Vec<String>>,
}

impl BaselineRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, sample_ids: Vec<String>) -> String {
        let id = baseline_set_id(&sample_ids);
        self.sets.insert(id.clone(), sample_ids);
        id
    }

    pub fn register_set(&mut self, set: &BaselineSet) -> String {
        self.register(set.sample_ids().to_vec())
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.sets.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, set_id: &str, sample_id: &str) -> bool {
        self.get(set_id)
            .is_some_and(|ids| ids.iter().any(|s| s == sample_id))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    /// Parses a registry file, rejecting entries whose key is not the id of
    /// the listed samples.
    pub fn from_json(text: &str) -> Result<Self> {
        let reg: BaselineRegistry = serde_json::from_str(text)?;
        for (id, samples) in &reg.sets {
            let actual = baseline_set_id(samples);
            if &actual != id {
                return Err(Error::Config(format!(
                    "registry entry {id} does not match its samples ({actual})"
                )));
            }
        }
        Ok(reg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        BaselineRegistry::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 8,
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Names of the reduced features, when known.
    #[serde(default)]
    pub features: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    /// Objective after each assignment step; non-increasing.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, squared_distance(&centroids[0], x));
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn objective(data: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    data.iter()
        .zip(assignments)
        .map(|(x, &a)| squared_distance(x, &centroids[a]))
        .sum()
}

fn assign_all(data: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    data.iter().map(|x| nearest(centroids, x).0).collect()
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance. If every point already coincides with a centre, the lowest
/// unchosen index is taken.
fn seed_centroids(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|x| squared_distance(x, &data[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > r {
                    break;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(pick);
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(squared_distance(x, &data[pick]));
        }
    }
    chosen.iter().map(|&i| data[i].clone()).collect()
}

/// Means of the current clusters. An empty cluster is moved onto the point
/// farthest from its assigned centre (lowest index on ties); that point is
/// then excluded from further re-seeding in the same step.
fn update_centroids(
    data: &[Vec<f64>],
    centroids: &[Vec<f64>],
    assignments: &[usize],
) -> Vec<Vec<f64>> {
    let k = centroids.len();
    let width = centroids[0].len();
    let mut sums = vec![vec![0.0; width]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x) {
            *s += v;
        }
    }
    let mut next: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(centroids)
        .map(|((s, &c), old)| {
            if c == 0 {
                old.clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect();
    let mut taken = vec![false; data.len()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, (x, &a)) in data.iter().zip(assignments).enumerate() {
            if taken[i] {
                continue;
            }
            let d = squared_distance(x, &next[a]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        if let Some((i, _)) = far {
            taken[i] = true;
            next[c] = data[i].clone();
        }
    }
    next
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Stops when no centroid moves by `tol` or more (Euclidean), after
/// `max_iter` updates, or when an update would not lower the objective
/// for the current assignment (floating-point stagnation).
pub fn kmeans_fit(data: &[Vec<f64>], config: &KMeansConfig) -> Result<ClusterModel> {
    let n = data.len();
    if config.k == 0 || config.k > n {
        return Err(Error::OutOfRange {
            what: "k",
            value: config.k,
            range: format!("1..={n}"),
        });
    }
    let width = data[0].len();
    if width == 0 {
        return Err(Error::Config("k-means needs at least one feature".into()));
    }
    for (r, x) in data.iter().enumerate() {
        if x.len() != width {
            return Err(Error::width(format!("k-means row {r}"), width, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("k-means row {r}"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = seed_centroids(data, config.k, &mut rng);
    let mut assignments = assign_all(data, &centroids);
    let mut current = objective(data, &centroids, &assignments);
    let mut history = vec![current];
    let mut iterations = 0;
    while iterations < config.max_iter {
        let next = update_centroids(data, &centroids, &assignments);
        if objective(data, &next, &assignments) > current {
            break;
        }
        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        assignments = assign_all(data, &centroids);
        let value = objective(data, &centroids, &assignments);
        assert!(
            value <= current,
            "k-means objective increased from {current} to {value}"
        );
        current = value;
        history.push(value);
        iterations += 1;
        if movement < config.tol {
            break;
        }
    }
    Ok(ClusterModel {
        features: Vec::new(),
        centroids,
        assignments,
        objective: current,
        objective_history: history,
        iterations,
    })
}

/// Fits on the named columns of a dataset.
pub fn kmeans_fit_dataset(
    data: &Dataset,
    features: &[String],
    config: &KMeansConfig,
) -> Result<ClusterModel> {
    if features.is_empty() {
        return Err(Error::Config("reduced feature set is empty".into()));
    }
    let reduced = data.select_columns(features)?;
    let mut model = kmeans_fit(reduced.rows(), config)?;
    model.features = features.to_vec();
    Ok(model)
}

/// Nearest centroid to `x`; ties go to the lowest index.
pub fn assign_baseline_cluster(model: &ClusterModel, x: &[f64]) -> Result<usize> {
    let width = model.centroids[0].len();
    if x.len() != width {
        return Err(Error::width("reduced explicand", width, x.len()));
    }
    Ok(nearest(&model.centroids, x).0)
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Training rows assigned to `cluster`, as a baseline set over all
    /// columns of `data` (the dataset the model was fitted on).
    pub fn baseline_set(&self, data: &Dataset, cluster: usize) -> Result<BaselineSet> {
        if cluster >= self.k() {
            return Err(Error::IndexOutOfRange {
                index: cluster,
                width: self.k(),
            });
        }
        if self.assignments.len() != data.len() {
            return Err(Error::width(
                "cluster assignments",
                data.len(),
                self.assignments.len(),
            ));
        }
        let rows: Vec<usize> = (0..data.len())
            .filter(|&r| self.assignments[r] == cluster)
            .collect();
        BaselineSet::new(
            rows.iter().map(|&r| data.row(r).to_vec()).collect(),
            rows.iter().map(|&r| data.ids()[r].clone()).collect(),
            Provenance::Cluster {
                index: cluster,
                centroid: self.centroids[cluster].clone(),
            },
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cluster models serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ClusterModel = serde_json::from_str(text)?;
        if model.centroids.is_empty()
            || model
                .centroids
                .iter()
                .any(|c| c.len() != model.centroids[0].len())
        {
            return Err(Error::Config(
                "cluster model needs equal-width centroids".into(),
            ));
        }
        Ok(model)
    }
}
