//! Synthetic corpora for tests, demos and the bundled example data.
//!
//! [`vuln_corpus`] writes small C functions in which a vulnerable sample
//! carries one weakness pattern (unchecked copy, missing NULL check, ...)
//! and a safe sample carries fixed variants. The other generators build
//! planted-signal fixtures with known answers.

use crate::ingest::{Dataset, IngestError, Sample, Split};
use crate::prob::{Label, PredictionSet, ProbVector};
use crate::seed::{stream_rng, streams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Weakness patterns: (cwe, vulnerable statement, fixed statement).
const PATTERNS: &[(&str, &str, &str)] = &[
    ("CWE-119", "memcpy(buf, src, len);", "if (len > sizeof(buf))\n        return -EINVAL;\n    memcpy(buf, src, len);"),
    ("CWE-120", "strcpy(tmp, src);", "strncpy(tmp, src, sizeof(tmp) - 1);\n    tmp[sizeof(tmp) - 1] = '\\0';"),
    ("CWE-125", "val = table[idx];", "if (idx >= TABLE_SIZE)\n        return -ERANGE;\n    val = table[idx];"),
    ("CWE-416", "free(node);\n    node->next = NULL;", "node->next = NULL;\n    free(node);\n    node = NULL;"),
    ("CWE-476", "entry = lookup(ctx, key);\n    entry->refs++;", "entry = lookup(ctx, key);\n    if (!entry)\n        return -ENOENT;\n    entry->refs++;"),
    ("CWE-190", "size = count * elem_size;\n    out = malloc(size);", "if (elem_size && count > SIZE_MAX / elem_size)\n        return -EOVERFLOW;\n    size = count * elem_size;\n    out = malloc(size);"),
    ("CWE-787", "buf[len] = '\\0';", "buf[len - 1] = '\\0';"),
    ("CWE-264", "chmod(path, 0777);", "chmod(path, 0600);"),
    ("CWE-20", "n = atoi(input);", "n = strtol(input, &end, 10);\n    if (*end || n < 0)\n        return -EINVAL;"),
    ("CWE-134", "printf(msg);", "printf(\"%s\", msg);"),
    ("CWE-399", "fd = open(path, O_RDONLY);\n    if (read(fd, hdr, 16) < 0)\n        return -EIO;", "fd = open(path, O_RDONLY);\n    if (read(fd, hdr, 16) < 0) {\n        close(fd);\n        return -EIO;\n    }"),
];

const NEUTRAL: &[&str] = &[
    "int i = 0;",
    "for (i = 0; i < n; i++)\n        sum += data[i];",
    "if (ctx == NULL)\n        return -EINVAL;",
    "pr_debug(\"state %d\\n\", ctx->state);",
    "ret = parse_header(ctx, &hdr);",
    "if (ret < 0)\n        goto out;",
    "ctx->state = STATE_READY;",
    "memset(&hdr, 0, sizeof(hdr));",
    "flags |= FLAG_DIRTY;",
    "count = list_length(&ctx->items);",
    "/* refresh cached values */\n    update_cache(ctx);",
    "spin_lock(&ctx->lock);\n    ctx->pending--;\n    spin_unlock(&ctx->lock);",
    "while (p && p->next)\n        p = p->next;",
    "switch (mode) {\n    case MODE_A:\n        ret = 1;\n        break;\n    default:\n        ret = 0;\n    }",
    "timeout = jiffies + HZ;",
    "len = strlen(name);",
    "rc = ops->prepare(ctx, len);",
    "total += hdr.size;",
];

const FN_NAMES: &[&str] = &[
    "handle_request", "parse_packet", "load_config", "read_chunk", "update_entry", "decode_frame",
    "process_input", "copy_field", "init_session", "flush_queue", "resolve_name", "apply_patch",
];

/// Knobs for [`vuln_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub name: String,
    pub samples: usize,
    /// Fraction of vulnerable samples (ignored when `paired`).
    pub positive_rate: f64,
    /// How many weakness patterns are in use (at most 11).
    pub cwes: usize,
    /// Probability that a vulnerable sample loses its pattern.
    pub cue_dropout: f64,
    /// Probability that a safe sample carries a vulnerable pattern anyway.
    pub decoy_rate: f64,
    /// Probability that a label is flipped.
    pub label_noise: f64,
    /// Each vulnerable function gets a fixed twin sharing its `pair_id`;
    /// the corpus is then balanced 1:1.
    pub paired: bool,
    /// Label vulnerable samples by CWE class instead of 1.
    pub multiclass: bool,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            samples: 2000,
            positive_rate: 0.45,
            cwes: 8,
            cue_dropout: 0.25,
            decoy_rate: 0.1,
            label_noise: 0.05,
            paired: false,
            multiclass: false,
            seed: 0,
        }
    }
}

/// Zipf-like pick over `n` items, heavier at the front.
fn zipf(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let weights: Vec<f64> = (1..=n).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    n - 1
}

fn function(rng: &mut ChaCha8Rng, middle: &[&str]) -> String {
    let name = FN_NAMES.choose(rng).unwrap();
    let suffix: u32 = rng.gen_range(0..1000);
    let mut body: Vec<&str> = (0..rng.gen_range(3..8))
        .map(|_| *NEUTRAL.choose(rng).unwrap())
        .collect();
    for stmt in middle {
        let at = rng.gen_range(0..=body.len());
        body.insert(at, stmt);
    }
    let mut out = format!("static int {name}_{suffix}(struct ctx *ctx, const char *src, size_t len)\n{{\n");
    for stmt in body {
        out.push_str("    ");
        out.push_str(stmt);
        out.push('\n');
    }
    out.push_str("out:\n    return ret;\n}\n");
    out
}

/// Generates a corpus of small C functions with planted weakness patterns.
pub fn vuln_corpus(cfg: &CorpusConfig) -> Result<Dataset, IngestError> {
    let cwes = cfg.cwes.clamp(1, PATTERNS.len());
    let mut rng = stream_rng(cfg.seed, streams::SYNTH);
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut i = 0;
    while samples.len() < cfg.samples {
        let vulnerable = cfg.paired || rng.gen_bool(cfg.positive_rate.clamp(0.0, 1.0));
        let p = zipf(&mut rng, cwes);
        let (cwe, bad, good) = PATTERNS[p];
        let id = format!("{}-{i:06}", cfg.name);
        i += 1;
        if vulnerable {
            let keep_cue = !rng.gen_bool(cfg.cue_dropout);
            let mut state = rng.clone();
            let bad_stmt = [bad];
            let good_stmt = [good];
            let (cue_bad, cue_good): (&[&str], &[&str]) = if keep_cue { (&bad_stmt, &good_stmt) } else { (&[], &[]) };
            let code = function(&mut rng, cue_bad);
            let flipped = rng.gen_bool(cfg.label_noise);
            samples.push(Sample {
                id: id.clone(),
                code,
                label: Label(usize::from(!flipped)),
                cwe: Some(cwe.to_string()),
                pair_id: cfg.paired.then(|| id.clone()),
            });
            if cfg.paired && samples.len() < cfg.samples {
                // same layout draws, fixed statement in place of the bad one
                let code = function(&mut state, cue_good);
                samples.push(Sample {
                    id: format!("{id}-fix"),
                    code,
                    label: Label(0),
                    cwe: None,
                    pair_id: Some(id),
                });
            }
        } else {
            let mut extra = Vec::new();
            if rng.gen_bool(0.5) {
                extra.push(good);
            }
            if rng.gen_bool(cfg.decoy_rate) {
                extra.push(PATTERNS[zipf(&mut rng, cwes)].1);
            }
            let code = function(&mut rng, &extra);
            let flipped = rng.gen_bool(cfg.label_noise);
            samples.push(Sample {
                id,
                code,
                label: Label(usize::from(flipped)),
                cwe: flipped.then(|| cwe.to_string()),
                pair_id: None,
            });
        }
    }
    if cfg.multiclass {
        let mut names: Vec<String> = samples
            .iter()
            .filter(|s| s.label.0 > 0)
            .filter_map(|s| s.cwe.clone())
            .collect();
        names.sort();
        names.dedup();
        let index: BTreeMap<&String, usize> = names.iter().enumerate().map(|(i, n)| (n, i + 1)).collect();
        let samples = samples
            .iter()
            .map(|s| Sample {
                label: if s.label.0 > 0 {
                    Label(index[s.cwe.as_ref().unwrap()])
                } else {
                    Label(0)
                },
                ..s.clone()
            })
            .collect();
        let mut class_names = vec!["non-vulnerable".to_string()];
        class_names.extend(names.iter().cloned());
        return Dataset::new(cfg.name.clone(), class_names, samples);
    }
    Dataset::new(cfg.name.clone(), Dataset::binary_class_names(), samples)
}

/// The bundled example corpus.
pub fn bundled() -> Dataset {
    vuln_corpus(&CorpusConfig::default()).expect("valid generator config")
}

pub const DEVIGN_COUNTS: [usize; 2] = [14_858, 12_460];
pub const REVEAL_COUNTS: [usize; 2] = [20_494, 2_240];

/// CWE ids used for the BigVul-shaped fixture, most frequent first.
pub const BIGVUL_CWES: [&str; 43] = [
    "CWE-119", "CWE-20", "CWE-399", "CWE-125", "CWE-264", "CWE-200", "CWE-189", "CWE-416", "CWE-190",
    "CWE-362", "CWE-476", "CWE-787", "CWE-284", "CWE-772", "CWE-415", "CWE-120", "CWE-401", "CWE-835",
    "CWE-617", "CWE-400", "CWE-665", "CWE-22", "CWE-704", "CWE-134", "CWE-369", "CWE-59", "CWE-254",
    "CWE-834", "CWE-674", "CWE-611", "CWE-290", "CWE-17", "CWE-388", "CWE-19", "CWE-74", "CWE-93",
    "CWE-269", "CWE-295", "CWE-327", "CWE-358", "CWE-404", "CWE-754", "CWE-732",
];

/// Class counts for the BigVul-shaped fixture: 8,636 non-vulnerable and
/// 8,636 vulnerable spread over 43 CWEs with a 1/rank profile, at least 10
/// per CWE.
pub fn bigvul_counts() -> Vec<usize> {
    let total = 8_636usize;
    let floor = 10usize;
    let weights: Vec<f64> = (1..=43).map(|r| 1.0 / r as f64).collect();
    let wsum: f64 = weights.iter().sum();
    let spare = total - floor * 43;
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| floor + (spare as f64 * w / wsum).floor() as usize)
        .collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut i = 0;
    while left > 0 {
        counts[i] += 1;
        left -= 1;
        i += 1;
    }
    let mut out = vec![total];
    out.extend(counts);
    out
}

/// Dataset with the given class counts and placeholder code. Class 0 is
/// non-vulnerable; multi-class fixtures name the rest after `BIGVUL_CWES`.
pub fn shaped(name: &str, counts: &[usize]) -> Result<Dataset, IngestError> {
    let class_names: Vec<String> = if counts.len() == 2 {
        Dataset::binary_class_names()
    } else {
        let mut v = vec!["non-vulnerable".to_string()];
        v.extend((1..counts.len()).map(|c| {
            BIGVUL_CWES
                .get(c - 1)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("CWE-{}", 1000 + c))
        }));
        v
    };
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (class, &n) in counts.iter().enumerate() {
        for i in 0..n {
            samples.push(Sample {
                id: format!("{name}-{class}-{i}"),
                code: format!("int f{i}(void) {{ return {class}; }}"),
                label: Label(class),
                cwe: (class > 0).then(|| class_names[class].clone()),
                pair_id: None,
            });
        }
    }
    Dataset::new(name, class_names, samples)
}

/// Token-count corpus: tokens `t0..t9` vote for class 0 and `t10..t19` for
/// class 1; the label is the majority side. Ties are never emitted, so the
/// classes are linearly separable on unigram counts.
pub fn separable_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, streams::SYNTH);
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let len = rng.gen_range(5..14);
        let toks: Vec<usize> = (0..len).map(|_| rng.gen_range(0..20)).collect();
        let high = toks.iter().filter(|&&t| t >= 10).count();
        if high * 2 == len {
            continue;
        }
        let code = toks.iter().map(|t| format!("t{t}")).collect::<Vec<_>>().join(" ");
        samples.push(Sample {
            id: format!("sep-{:05}", samples.len()),
            code: format!("{code};"),
            label: Label(usize::from(high * 2 > len)),
            cwe: None,
            pair_id: None,
        });
    }
    Dataset::new("separable", Dataset::binary_class_names(), samples).expect("unique ids")
}

/// Synthetic experts over fixed ids, with per-id ground truth.
#[derive(Debug, Clone)]
pub struct ExpertFixture {
    pub dataset: Dataset,
    pub truth: BTreeMap<String, Label>,
    /// One set per expert, covering every id.
    pub experts: Vec<PredictionSet>,
    /// For sentinel fixtures: the only expert that is right on each id.
    pub owner: BTreeMap<String, usize>,
}

impl ExpertFixture {
    /// Expert outputs restricted to `ids`, tagged with `split`.
    pub fn restrict(&self, ids: &[String], split: Split) -> Vec<PredictionSet> {
        self.experts
            .iter()
            .map(|e| {
                let mut s = PredictionSet::new(e.model_id.clone(), split, e.classes());
                for id in ids {
                    s.insert(id.clone(), e.get(id).expect("fixture covers id").clone())
                        .expect("unique ids");
                }
                s
            })
            .collect()
    }
}

fn binary_vote(label: usize, conf: f64) -> ProbVector {
    let mut v = [1.0 - conf; 2];
    v[label] = conf;
    ProbVector::from_internal(v.to_vec()).expect("valid")
}

/// Expert `j` is right exactly on samples whose code holds the sentinel
/// token `route_tag_j`; it is wrong elsewhere. Confidence is drawn from the
/// same range whether right or wrong, so only the code reveals the owner.
pub fn sentinel_fixture(n: usize, experts: usize, seed: u64) -> ExpertFixture {
    let mut rng = stream_rng(seed, streams::SYNTH);
    let mut samples = Vec::with_capacity(n);
    let mut truth = BTreeMap::new();
    let mut owner = BTreeMap::new();
    let mut sets: Vec<PredictionSet> = (0..experts)
        .map(|j| PredictionSet::new(format!("expert{j}"), Split::Test, 2))
        .collect();
    for i in 0..n {
        let id = format!("sen-{i:05}");
        let j = i % experts;
        let y = rng.gen_range(0..2);
        let tag = format!("route_tag_{j}(ctx);");
        let code = function(&mut rng, &[tag.as_str()]);
        for (e, set) in sets.iter_mut().enumerate() {
            let conf = rng.gen_range(0.55..0.95);
            let label = if e == j { y } else { 1 - y };
            set.insert(id.clone(), binary_vote(label, conf)).unwrap();
        }
        samples.push(Sample {
            id: id.clone(),
            code,
            label: Label(y),
            cwe: None,
            pair_id: None,
        });
        truth.insert(id.clone(), Label(y));
        owner.insert(id, j);
    }
    ExpertFixture {
        dataset: Dataset::new("sentinel", Dataset::binary_class_names(), samples).expect("unique ids"),
        truth,
        experts: sets,
        owner,
    }
}

/// Two experts that split the work: on a hidden half of the samples A is
/// confidently right and B hesitantly wrong; on the other half the roles
/// swap. A small share of samples has both right. The pattern is visible
/// only through the pair of confidences.
pub fn complementary_fixture(n: usize, seed: u64) -> ExpertFixture {
    let mut rng = stream_rng(seed, streams::SYNTH);
    let mut a = PredictionSet::new("expert_a", Split::Test, 2);
    let mut b = PredictionSet::new("expert_b", Split::Test, 2);
    let mut truth = BTreeMap::new();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("cmp-{i:05}");
        let y: usize = rng.gen_range(0..2);
        let sure = rng.gen_range(0.8..0.95);
        let unsure = rng.gen_range(0.55..0.7);
        let (pa, pb) = if rng.gen_bool(0.1) {
            (binary_vote(y, sure), binary_vote(y, rng.gen_range(0.8..0.95)))
        } else if rng.gen_bool(0.5) {
            (binary_vote(y, sure), binary_vote(1 - y, unsure))
        } else {
            (binary_vote(1 - y, unsure), binary_vote(y, sure))
        };
        a.insert(id.clone(), pa).unwrap();
        b.insert(id.clone(), pb).unwrap();
        truth.insert(id.clone(), Label(y));
        samples.push(Sample {
            id,
            code: String::new(),
            label: Label(y),
            cwe: None,
            pair_id: None,
        });
    }
    ExpertFixture {
        dataset: Dataset::new("complementary", Dataset::binary_class_names(), samples).expect("unique ids"),
        truth,
        experts: vec![a, b],
        owner: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codefeat::tokenize;
    use crate::ingest::{cwe_subset, stratified_split, top_cwes};

    #[test]
    fn corpus_is_deterministic_and_shaped() {
        let cfg = CorpusConfig {
            samples: 400,
            ..CorpusConfig::default()
        };
        let a = vuln_corpus(&cfg).unwrap();
        let b = vuln_corpus(&cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.len(), 400);
        let pos = a.class_counts()[1] as f64 / 400.0;
        assert!((0.3..0.6).contains(&pos), "{pos}");
        for s in a.samples().iter().take(20) {
            assert!(!tokenize(&s.code).is_empty());
        }
    }

    #[test]
    fn paired_corpus_supports_cwe_subsets() {
        let cfg = CorpusConfig {
            samples: 600,
            paired: true,
            label_noise: 0.0,
            ..CorpusConfig::default()
        };
        let d = vuln_corpus(&cfg).unwrap();
        assert_eq!(d.class_counts(), vec![300, 300]);
        let top = top_cwes(&d, 3);
        assert_eq!(top.len(), 3);
        let sub = cwe_subset(&d, &top[0]).unwrap();
        assert_eq!(sub.class_counts()[0], sub.class_counts()[1]);
    }

    #[test]
    fn multiclass_corpus_numbers_cwes() {
        let cfg = CorpusConfig {
            samples: 600,
            paired: true,
            multiclass: true,
            label_noise: 0.0,
            cwes: 5,
            ..CorpusConfig::default()
        };
        let d = vuln_corpus(&cfg).unwrap();
        assert_eq!(d.class_count(), 6);
        for s in d.samples() {
            if s.label.0 > 0 {
                assert_eq!(d.class_names()[s.label.0], *s.cwe.as_ref().unwrap());
            }
        }
    }

    #[test]
    fn bigvul_shape() {
        let c = bigvul_counts();
        assert_eq!(c.len(), 44);
        assert_eq!(c[0], 8_636);
        assert_eq!(c[1..].iter().sum::<usize>(), 8_636);
        assert!(c[1..].iter().all(|&n| n >= 10));
        assert!(c[1..].windows(2).all(|w| w[0] >= w[1]));
        let d = shaped("bigvul", &c).unwrap();
        assert_eq!(d.len(), 17_272);
        stratified_split(&d, 0).unwrap();
    }

    #[test]
    fn separable_labels_follow_majority() {
        let d = separable_corpus(200, 1);
        for s in d.samples() {
            let toks = tokenize(&s.code);
            let high = toks.iter().filter(|t| t.text[1..].parse::<usize>().map_or(false, |v| v >= 10)).count();
            let low = toks.iter().filter(|t| t.text[1..].parse::<usize>().map_or(false, |v| v < 10)).count();
            assert_ne!(high, low);
            assert_eq!(s.label.0, usize::from(high > low));
        }
    }

    #[test]
    fn sentinel_owner_is_the_only_correct_expert() {
        let f = sentinel_fixture(50, 5, 2);
        for (id, &j) in &f.owner {
            for (e, set) in f.experts.iter().enumerate() {
                assert_eq!(set.get(id).unwrap().decide() == f.truth[id], e == j);
            }
            assert!(f.dataset.get(id).unwrap().code.contains(&format!("route_tag_{j}")));
        }
    }

    #[test]
    fn complementary_experts_are_mediocre_alone() {
        let f = complementary_fixture(2000, 0);
        for e in &f.experts {
            let hits = e.iter().filter(|(id, p)| p.decide() == f.truth[*id]).count();
            let acc = hits as f64 / 2000.0;
            assert!((0.45..0.65).contains(&acc), "{acc}");
        }
    }
}
