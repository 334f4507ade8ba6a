//! Corpus loading, stratified 8:1:1 splits, stratified bootstrap plans and
//! per-CWE paired subsets.

use crate::artifact;
use crate::prob::Label;
use crate::seed::{derive_seed, streams, stream_rng};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;
use thiserror::Error;

/// Split proportions in tenths: train, val, test.
pub const SPLIT_TENTHS: [usize; 3] = [8, 1, 1];
/// Classes smaller than this cannot be split 8:1:1.
pub const MIN_CLASS_SIZE: usize = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate sample id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("unknown label {label} on line {line}")]
    UnknownLabel { line: usize, label: i64 },
    #[error("class {class} has {count} samples; at least {MIN_CLASS_SIZE} are needed")]
    ClassTooSmall { class: usize, count: usize },
    #[error("dataset {0:?} has no samples")]
    EmptyDataset(String),
    #[error("unknown CWE {0:?}")]
    UnknownCwe(String),
    #[error("vulnerable sample {0:?} has no paired fixed version")]
    MissingPair(String),
    #[error("bootstrap needs at least one member")]
    NoMembers,
    #[error("sample {0:?} is not in the dataset")]
    UnknownSample(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Binary,
    Multiclass,
}

impl std::str::FromStr for Schema {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Schema::Binary),
            "multiclass" => Ok(Schema::Multiclass),
            other => Err(format!("unknown schema {other:?} (expected binary|multiclass)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub code: String,
    pub label: Label,
    #[serde(default)]
    pub cwe: Option<String>,
    #[serde(default)]
    pub pair_id: Option<String>,
}

/// Raw line of `dataset.jsonl`.
#[derive(Debug, Deserialize)]
struct Record {
    id: String,
    code: String,
    label: i64,
    #[serde(default)]
    cwe: Option<String>,
    #[serde(default)]
    pair_id: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    class_names: Vec<String>,
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness and label range.
    pub fn new(
        name: impl Into<String>,
        class_names: Vec<String>,
        samples: Vec<Sample>,
    ) -> Result<Self, IngestError> {
        if class_names.len() < 2 {
            return Err(IngestError::Invalid("class count must be at least 2".into()));
        }
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.id.is_empty() {
                return Err(IngestError::Invalid(format!("sample {i} has an empty id")));
            }
            if s.label.0 >= class_names.len() {
                return Err(IngestError::UnknownLabel {
                    line: i + 1,
                    label: s.label.0 as i64,
                });
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(IngestError::DuplicateId {
                    id: s.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            class_names,
            samples,
            index,
        })
    }

    pub fn binary_class_names() -> Vec<String> {
        vec!["non-vulnerable".into(), "vulnerable".into()]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn label_of(&self, id: &str) -> Option<Label> {
        self.get(id).map(|s| s.label)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Sample count per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for s in &self.samples {
            counts[s.label.0] += 1;
        }
        counts
    }

    /// Writes the dataset in the `dataset.jsonl` record format.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), IngestError> {
        artifact::write_jsonl(path, &self.samples).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Loads a `dataset.jsonl` corpus.
///
/// Binary schema: labels must be 0 or 1. Multi-class schema: label 0 is
/// non-vulnerable; any positive label marks a vulnerable sample whose class
/// is taken from its `cwe` field, with CWE classes numbered 1.. in sorted
/// name order.
pub fn load_dataset(path: &Path, schema: Schema) -> Result<Dataset, IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let lines = artifact::read_lines(path).map_err(io_err)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut seen = HashSet::with_capacity(lines.len());
    for (line, text) in &lines {
        let rec: Record =
            serde_json::from_str(text).map_err(|e| IngestError::MalformedRecord {
                line: *line,
                reason: e.to_string(),
            })?;
        if rec.id.is_empty() {
            return Err(IngestError::MalformedRecord {
                line: *line,
                reason: "empty id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(IngestError::DuplicateId { id: rec.id, line: *line });
        }
        let valid = match schema {
            Schema::Binary => rec.label == 0 || rec.label == 1,
            Schema::Multiclass => rec.label >= 0,
        };
        if !valid {
            return Err(IngestError::UnknownLabel {
                line: *line,
                label: rec.label,
            });
        }
        if schema == Schema::Multiclass && rec.label > 0 && rec.cwe.as_deref().map_or(true, str::is_empty) {
            return Err(IngestError::MalformedRecord {
                line: *line,
                reason: "vulnerable multi-class sample without cwe".into(),
            });
        }
        records.push(rec);
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    let (class_names, cwe_class) = match schema {
        Schema::Binary => (Dataset::binary_class_names(), HashMap::new()),
        Schema::Multiclass => {
            let cwes: BTreeSet<&str> = records
                .iter()
                .filter(|r| r.label > 0)
                .filter_map(|r| r.cwe.as_deref())
                .collect();
            let mut names = vec!["non-vulnerable".to_string()];
            let mut map = HashMap::new();
            for (i, cwe) in cwes.into_iter().enumerate() {
                names.push(cwe.to_string());
                map.insert(cwe.to_string(), i + 1);
            }
            if names.len() < 2 {
                // no vulnerable samples: keep a placeholder class so K >= 2
                names.push("vulnerable".into());
            }
            (names, map)
        }
    };

    let samples = records
        .into_iter()
        .map(|r| {
            let label = match schema {
                Schema::Binary => Label(r.label as usize),
                Schema::Multiclass if r.label == 0 => Label(0),
                Schema::Multiclass => Label(cwe_class[r.cwe.as_deref().unwrap_or_default()]),
            };
            Sample {
                id: r.id,
                code: r.code,
                label,
                cwe: r.cwe,
                pair_id: r.pair_id,
            }
        })
        .collect();

    let dataset = Dataset::new(name, class_names, samples)?;
    if dataset.is_empty() {
        log::warn!("{} contains no samples", path.display());
    } else {
        log::info!(
            "loaded {} samples from {} (K={}, counts {:?})",
            dataset.len(),
            path.display(),
            dataset.class_count(),
            dataset.class_counts()
        );
    }
    Ok(dataset)
}

/// Train/val/test id lists. Ids appear grouped by class (ascending), in
/// shuffled order within each class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl SplitIndices {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Per-class counts of one split.
    pub fn class_counts(&self, d: &Dataset, split: Split) -> Vec<usize> {
        let mut counts = vec![0; d.class_count()];
        for id in self.ids(split) {
            if let Some(label) = d.label_of(id) {
                counts[label.0] += 1;
            }
        }
        counts
    }

    /// Checks coverage and disjointness against `d`.
    pub fn check_against(&self, d: &Dataset) -> Result<(), IngestError> {
        let mut seen = HashSet::with_capacity(d.len());
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if d.get(id).is_none() {
                return Err(IngestError::UnknownSample(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(IngestError::Invalid(format!("id {id:?} appears in two splits")));
            }
        }
        if seen.len() != d.len() {
            return Err(IngestError::Invalid(format!(
                "splits cover {} of {} samples",
                seen.len(),
                d.len()
            )));
        }
        Ok(())
    }
}

/// Splits every class 8:1:1 after a seeded shuffle.
///
/// Each class first receives the floors of its ideal shares. The leftover
/// units (at most two per class) are then handed out so the split totals hit
/// `round(0.8 N)` and `round(0.1 N)`, preferring the largest fractional
/// remainders and never giving one class more than one extra unit per split.
pub fn stratified_split(d: &Dataset, seed: u64) -> Result<SplitIndices, IngestError> {
    if d.is_empty() {
        return Err(IngestError::EmptyDataset(d.name().to_string()));
    }
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); d.class_count()];
    for s in d.samples() {
        by_class[s.label.0].push(&s.id);
    }
    for (class, ids) in by_class.iter().enumerate() {
        if !ids.is_empty() && ids.len() < MIN_CLASS_SIZE {
            return Err(IngestError::ClassTooSmall {
                class,
                count: ids.len(),
            });
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let alloc = apportion(&counts, SPLIT_TENTHS);

    let mut rng = stream_rng(seed, streams::SPLIT);
    let mut out = SplitIndices {
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (ids, [n_train, n_val, _]) in by_class.iter_mut().zip(alloc) {
        ids.shuffle(&mut rng);
        let (train, rest) = ids.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        out.train.extend(train.iter().map(|s| s.to_string()));
        out.val.extend(val.iter().map(|s| s.to_string()));
        out.test.extend(test.iter().map(|s| s.to_string()));
    }
    Ok(out)
}

/// Integer allocation of each class count across three parts with the given
/// tenths. See [`stratified_split`] for the rounding rule.
pub fn apportion(counts: &[usize], tenths: [usize; 3]) -> Vec<[usize; 3]> {
    debug_assert_eq!(tenths.iter().sum::<usize>(), 10);
    let total: usize = counts.iter().sum();
    let mut alloc: Vec<[usize; 3]> = counts
        .iter()
        .map(|&n| [n * tenths[0] / 10, n * tenths[1] / 10, n * tenths[2] / 10])
        .collect();
    let t0 = (total * tenths[0] + 5) / 10;
    let t1 = (total * tenths[1] + 5) / 10;
    let targets = [t0, t1, total - t0 - t1];
    let mut need: Vec<usize> = (0..3)
        .map(|s| targets[s] - alloc.iter().map(|a| a[s]).sum::<usize>())
        .collect();
    let mut leftover: Vec<usize> = counts
        .iter()
        .zip(&alloc)
        .map(|(&n, a)| n - a.iter().sum::<usize>())
        .collect();
    let mut extra = vec![[false; 3]; counts.len()];

    // greedy pass over (class, part) pairs by fractional remainder
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for s in 0..3 {
            pairs.push(((n * tenths[s]) % 10, c, s));
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, c, s) in &pairs {
        if leftover[c] > 0 && need[s] > 0 && !extra[c][s] {
            extra[c][s] = true;
            leftover[c] -= 1;
            need[s] -= 1;
        }
    }

    // augmenting paths for anything the greedy pass could not place
    for c in 0..counts.len() {
        while leftover[c] > 0 {
            if !augment(c, &mut extra, &mut need) {
                break;
            }
            leftover[c] -= 1;
        }
    }
    // unreachable for the 8:1:1 ratios; keeps totals consistent regardless
    for c in 0..counts.len() {
        while leftover[c] > 0 {
            let s = (0..3).max_by_key(|&s| need[s]).unwrap_or(2);
            alloc[c][s] += 1;
            need[s] = need[s].saturating_sub(1);
            leftover[c] -= 1;
        }
    }

    for (a, e) in alloc.iter_mut().zip(&extra) {
        for s in 0..3 {
            if e[s] {
                a[s] += 1;
            }
        }
    }
    alloc
}

/// BFS over the class/part bipartite graph from class `start` to any part
/// with unmet need; flips the path when found.
fn augment(start: usize, extra: &mut [[bool; 3]], need: &mut [usize]) -> bool {
    // node ids: classes 0..C, parts C..C+3
    let classes = extra.len();
    let mut prev: Vec<Option<usize>> = vec![None; classes + 3];
    let mut visited = vec![false; classes + 3];
    visited[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node < classes {
            for s in 0..3 {
                let part = classes + s;
                if !extra[node][s] && !visited[part] {
                    visited[part] = true;
                    prev[part] = Some(node);
                    if need[s] > 0 {
                        // flip the path back to start
                        let mut cur = part;
                        while let Some(p) = prev[cur] {
                            if cur >= classes {
                                extra[p][cur - classes] = true;
                            } else {
                                extra[cur][p - classes] = false;
                            }
                            cur = p;
                        }
                        need[s] -= 1;
                        return true;
                    }
                    queue.push_back(part);
                }
            }
        } else {
            let s = node - classes;
            for c in 0..classes {
                if extra[c][s] && !visited[c] {
                    visited[c] = true;
                    prev[c] = Some(node);
                    queue.push_back(c);
                }
            }
        }
    }
    false
}

/// Stratified with-replacement draws over the train split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub member_count: usize,
    pub seed: u64,
    pub draws: Vec<Vec<String>>,
}

impl BootstrapPlan {
    /// Fraction of distinct ids in draw `member`.
    pub fn distinct_fraction(&self, member: usize) -> f64 {
        let draw = &self.draws[member];
        if draw.is_empty() {
            return 0.0;
        }
        let distinct: HashSet<&String> = draw.iter().collect();
        distinct.len() as f64 / draw.len() as f64
    }
}

/// Draws `members` bootstrap replicates of the train split, resampling each
/// class independently so per-class counts match the train split exactly.
/// Member `j` uses its own RNG stream derived from `seed` and `j`.
pub fn bootstrap(
    d: &Dataset,
    split: &SplitIndices,
    members: usize,
    seed: u64,
) -> Result<BootstrapPlan, IngestError> {
    if members == 0 {
        return Err(IngestError::NoMembers);
    }
    let mut by_class: Vec<Vec<&String>> = vec![Vec::new(); d.class_count()];
    for id in &split.train {
        let label = d
            .label_of(id)
            .ok_or_else(|| IngestError::UnknownSample(id.clone()))?;
        by_class[label.0].push(id);
    }
    let base = derive_seed(seed, streams::BOOTSTRAP);
    let draws = (0..members)
        .map(|j| {
            let mut rng = stream_rng(base, j as u64);
            let mut draw = Vec::with_capacity(split.train.len());
            for ids in &by_class {
                for _ in 0..ids.len() {
                    draw.push(ids[rng.gen_range(0..ids.len())].clone());
                }
            }
            draw
        })
        .collect();
    Ok(BootstrapPlan {
        member_count: members,
        seed,
        draws,
    })
}

/// Vulnerable-sample counts per CWE, most frequent first (ties by name).
pub fn cwe_frequencies(d: &Dataset) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in d.samples() {
        if s.label.0 > 0 {
            if let Some(cwe) = &s.cwe {
                *counts.entry(cwe).or_default() += 1;
            }
        }
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// The `n` most frequent CWEs.
pub fn top_cwes(d: &Dataset, n: usize) -> Vec<String> {
    cwe_frequencies(d).into_iter().take(n).map(|(c, _)| c).collect()
}

/// Binary subset holding every vulnerable sample of `cwe` plus the fixed
/// version sharing its `pair_id`. Dataset order is preserved.
pub fn cwe_subset(d: &Dataset, cwe: &str) -> Result<Dataset, IngestError> {
    let vulnerable: Vec<&Sample> = d
        .samples()
        .iter()
        .filter(|s| s.label.0 > 0 && s.cwe.as_deref() == Some(cwe))
        .collect();
    if vulnerable.is_empty() {
        return Err(IngestError::UnknownCwe(cwe.to_string()));
    }
    let mut fixed_by_pair: HashMap<&str, &Sample> = HashMap::new();
    for s in d.samples().iter().filter(|s| s.label.0 == 0) {
        if let Some(pair) = s.pair_id.as_deref() {
            fixed_by_pair.entry(pair).or_insert(s);
        }
    }
    let mut keep: HashSet<&str> = HashSet::new();
    for v in &vulnerable {
        let pair = v
            .pair_id
            .as_deref()
            .ok_or_else(|| IngestError::MissingPair(v.id.clone()))?;
        let fixed = fixed_by_pair
            .get(pair)
            .ok_or_else(|| IngestError::MissingPair(v.id.clone()))?;
        keep.insert(&v.id);
        keep.insert(&fixed.id);
    }
    let samples = d
        .samples()
        .iter()
        .filter(|s| keep.contains(s.id.as_str()))
        .map(|s| Sample {
            label: if s.label.0 > 0 { Label(1) } else { Label(0) },
            ..s.clone()
        })
        .collect();
    Dataset::new(
        format!("{}-{}", d.name(), cwe),
        Dataset::binary_class_names(),
        samples,
    )
}
