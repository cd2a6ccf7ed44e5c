//! Parallel clean/noisy corpora, whole-corpus statistics and label-quality metrics.
//!
//! TSV layout, one token per line:
//!
//! ```text
//! token<TAB>clean<TAB>noisy_1[<TAB>noisy_2 ...][<TAB>f_1<TAB>f_2 ...]
//! ```
//!
//! A blank line ends a sentence. Labels stay word-level; the sentence index is
//! kept on each instance as metadata only.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{count_matrix, estimate_from_counts, LabelPair, LabelPairSet};
use crate::noise::{ClassPrior, NoiseMatrix};

/// Tag order used for the NER fixtures.
pub const NER_TAGS: [&str; 4] = ["O", "PER", "LOC", "ORG"];

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub token: String,
    pub sentence: usize,
    pub clean: usize,
    /// One label per loaded label set.
    pub noisy: Vec<usize>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    label_names: Vec<String>,
    label_set_names: Vec<String>,
    feature_dim: usize,
    instances: Vec<Instance>,
}

/// How to read the columns after the clean tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TsvSchema {
    /// Names of the noisy label columns, in order. When absent, every column
    /// after the clean tag is a noisy label set named `noisy1`, `noisy2`, ...
    /// and there are no feature columns.
    pub label_sets: Option<Vec<String>>,
    /// Closed tag inventory. When absent, tags get indices in order of first
    /// appearance.
    pub inventory: Option<Vec<String>>,
}

impl TsvSchema {
    pub fn with_label_sets<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            label_sets: Some(names.into_iter().map(Into::into).collect()),
            inventory: None,
        }
    }

    pub fn inventory<S: Into<String>>(mut self, tags: impl IntoIterator<Item = S>) -> Self {
        self.inventory = Some(tags.into_iter().map(Into::into).collect());
        self
    }
}

struct TagTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
    closed: bool,
}

impl TagTable {
    fn new(inventory: Option<&[String]>) -> Self {
        let names = inventory.map(<[String]>::to_vec).unwrap_or_default();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            names,
            index,
            closed: inventory.is_some(),
        }
    }

    fn lookup(&mut self, tag: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(tag) {
            return Some(i);
        }
        if self.closed {
            return None;
        }
        let i = self.names.len();
        self.names.push(tag.to_string());
        self.index.insert(tag.to_string(), i);
        Some(i)
    }
}

impl ParallelCorpus {
    pub fn new(
        label_names: Vec<String>,
        label_set_names: Vec<String>,
        instances: Vec<Instance>,
    ) -> Result<Self> {
        let k = label_names.len();
        let sets = label_set_names.len();
        let feature_dim = instances.first().map_or(0, |i| i.features.len());
        for inst in &instances {
            if inst.clean >= k {
                return Err(Error::LabelOutOfRange { label: inst.clean, k });
            }
            if inst.noisy.len() != sets {
                return Err(Error::DimensionMismatch {
                    expected: sets,
                    actual: inst.noisy.len(),
                });
            }
            if let Some(&label) = inst.noisy.iter().find(|&&l| l >= k) {
                return Err(Error::LabelOutOfRange { label, k });
            }
            if inst.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: inst.features.len(),
                });
            }
        }
        Ok(Self {
            label_names,
            label_set_names,
            feature_dim,
            instances,
        })
    }

    pub fn load_tsv(path: impl AsRef<Path>, schema: &TsvSchema) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, schema, &path.display().to_string())
    }

    pub fn parse_tsv(text: &str, schema: &TsvSchema, origin: &str) -> Result<Self> {
        let mut tags = TagTable::new(schema.inventory.as_deref());
        let mut instances = Vec::new();
        let mut set_names = schema.label_sets.clone();
        let mut feature_dim: Option<usize> = None;
        let mut sentence = 0;
        let mut in_sentence = false;

        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: line_no,
                message,
            };
            if line.trim().is_empty() {
                if in_sentence {
                    sentence += 1;
                    in_sentence = false;
                }
                continue;
            }
            in_sentence = true;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                return Err(err(format!("expected at least 3 columns, found {}", cols.len())));
            }
            let sets = set_names
                .get_or_insert_with(|| (1..cols.len() - 1).map(|i| format!("noisy{i}")).collect())
                .len();
            if cols.len() < 2 + sets {
                return Err(err(format!(
                    "expected {} label columns, found {}",
                    1 + sets,
                    cols.len() - 1
                )));
            }
            let n_features = cols.len() - 2 - sets;
            match feature_dim {
                None => feature_dim = Some(n_features),
                Some(d) if d != n_features => {
                    return Err(err(format!("expected {d} feature columns, found {n_features}")))
                }
                _ => {}
            }
            let mut label = |tag: &str| {
                tags.lookup(tag)
                    .ok_or_else(|| err(format!("unknown tag `{tag}`")))
            };
            let clean = label(cols[1])?;
            let noisy = cols[2..2 + sets]
                .iter()
                .map(|t| label(t))
                .collect::<Result<Vec<_>>>()?;
            let features = cols[2 + sets..]
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("bad feature value `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            instances.push(Instance {
                token: cols[0].to_string(),
                sentence,
                clean,
                noisy,
                features,
            });
        }
        Ok(Self {
            label_names: tags.names,
            label_set_names: set_names.unwrap_or_default(),
            feature_dim: feature_dim.unwrap_or(0),
            instances,
        })
    }

    /// Inverse of [`ParallelCorpus::parse_tsv`] for corpora in normal form
    /// (single blank line between sentences, no trailing blank line).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut prev = None;
        for inst in &self.instances {
            if prev.is_some_and(|s| s != inst.sentence) {
                out.push('\n');
            }
            prev = Some(inst.sentence);
            out.push_str(&inst.token);
            out.push('\t');
            out.push_str(&self.label_names[inst.clean]);
            for &l in &inst.noisy {
                out.push('\t');
                out.push_str(&self.label_names[l]);
            }
            for f in &inst.features {
                let _ = write!(out, "\t{f}");
            }
            out.push('\n');
        }
        out
    }

    pub fn k(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn label_set_names(&self) -> &[String] {
        &self.label_set_names
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn label_set_index(&self, name: &str) -> Result<usize> {
        self.label_set_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLabelSet(name.to_string()))
    }

    pub fn label_index(&self, tag: &str) -> Result<usize> {
        self.label_names
            .iter()
            .position(|n| n == tag)
            .ok_or_else(|| Error::invalid(format!("unknown tag `{tag}`")))
    }

    fn check_set(&self, label_set: usize) -> Result<()> {
        if label_set < self.label_set_names.len() {
            Ok(())
        } else {
            Err(Error::UnknownLabelSet(format!("#{label_set}")))
        }
    }

    pub fn clean_labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.clean).collect()
    }

    pub fn noisy_labels(&self, label_set: usize) -> Result<Vec<usize>> {
        self.check_set(label_set)?;
        Ok(self.instances.iter().map(|i| i.noisy[label_set]).collect())
    }

    /// All `(clean, noisy)` pairs for one label set.
    pub fn pairs(&self, label_set: usize) -> Result<LabelPairSet> {
        self.check_set(label_set)?;
        LabelPairSet::new(
            self.k(),
            self.instances
                .iter()
                .map(|i| LabelPair::new(i.clean, i.noisy[label_set]))
                .collect(),
        )
    }
}

/// Noise matrix over the whole corpus; every class must occur as a clean label.
pub fn empirical_noise_matrix(corpus: &ParallelCorpus, label_set: usize) -> Result<NoiseMatrix> {
    let counts = count_matrix(&corpus.pairs(label_set)?);
    if let Some(i) = counts.per_class.iter().position(|&n| n == 0) {
        return Err(Error::AbsentClass(corpus.label_names[i].clone()));
    }
    NoiseMatrix::from_rows(estimate_from_counts(&counts).to_rows())
}

/// Clean-label frequencies.
pub fn class_prior(corpus: &ParallelCorpus) -> Result<ClassPrior> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot compute a class prior of an empty corpus"));
    }
    let mut counts = vec![0u64; corpus.k()];
    for inst in &corpus.instances {
        counts[inst.clean] += 1;
    }
    ClassPrior::from_counts(&counts)
}

/// Micro-averaged precision/recall/F1 excluding a background class, plus accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Token-level micro metrics of `predicted` against `gold`. Tokens whose gold
/// and predicted label are both `non_entity` count for accuracy only.
pub fn micro_scores(gold: &[usize], predicted: &[usize], non_entity: Option<usize>) -> Result<QualityReport> {
    if gold.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            actual: predicted.len(),
        });
    }
    let is_entity = |l: usize| Some(l) != non_entity;
    let (mut tp, mut predicted_pos, mut actual_pos, mut correct) = (0, 0, 0, 0);
    for (&g, &p) in gold.iter().zip(predicted) {
        if g == p {
            correct += 1;
            if is_entity(g) {
                tp += 1;
            }
        }
        if is_entity(p) {
            predicted_pos += 1;
        }
        if is_entity(g) {
            actual_pos += 1;
        }
    }
    let precision = ratio(tp, predicted_pos);
    let recall = ratio(tp, actual_pos);
    Ok(QualityReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        accuracy: ratio(correct, gold.len()),
    })
}

/// Scores a noisy label set against the clean labels.
pub fn quality_report(corpus: &ParallelCorpus, label_set: usize, non_entity: usize) -> Result<QualityReport> {
    if non_entity >= corpus.k() {
        return Err(Error::LabelOutOfRange {
            label: non_entity,
            k: corpus.k(),
        });
    }
    micro_scores(&corpus.clean_labels(), &corpus.noisy_labels(label_set)?, Some(non_entity))
}

/// Per-class F1 for every class in `0..k`.
pub fn per_class_f1(gold: &[usize], predicted: &[usize], k: usize) -> Vec<f64> {
    let mut tp = vec![0usize; k];
    let mut pred = vec![0usize; k];
    let mut act = vec![0usize; k];
    for (&g, &p) in gold.iter().zip(predicted) {
        if g == p {
            tp[g] += 1;
        }
        pred[p] += 1;
        act[g] += 1;
    }
    (0..k)
        .map(|c| f1_score(ratio(tp[c], pred[c]), ratio(tp[c], act[c])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ner_schema() -> TsvSchema {
        TsvSchema::with_label_sets(["auto"]).inventory(NER_TAGS)
    }

    const FOUR: &str = "Anna\tPER\tPER\nsaw\tO\tPER\nBerlin\tLOC\tO\nUN\tORG\tORG\n";

    #[test]
    fn empty_file_uses_inventory() {
        let c = ParallelCorpus::parse_tsv("", &ner_schema(), "e").unwrap();
        assert_eq!(c.k(), 4);
        assert!(c.is_empty());
    }

    #[test]
    fn four_token_fixture() {
        let c = ParallelCorpus::parse_tsv(FOUR, &TsvSchema::default(), "f").unwrap();
        assert_eq!(c.k(), 4);
        assert_eq!(c.len(), 4);
        assert_eq!(c.label_names(), &["PER", "O", "LOC", "ORG"]);
        assert_eq!(c.label_set_names(), &["noisy1"]);
    }

    #[test]
    fn quality_hand_enumerated() {
        let c = ParallelCorpus::parse_tsv(FOUR, &ner_schema(), "f").unwrap();
        let r = quality_report(&c, 0, 0).unwrap();
        // TP: Anna, UN. Predicted entities: Anna, saw, UN. Gold entities: Anna, Berlin, UN.
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.recall, 2.0 / 3.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn quality_perfect_labels() {
        let text = "a\tPER\tPER\nb\tO\tO\n";
        let c = ParallelCorpus::parse_tsv(text, &ner_schema(), "f").unwrap();
        let r = quality_report(&c, 0, 0).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn quality_without_entities_is_zero() {
        let c = ParallelCorpus::parse_tsv("a\tO\tO\n", &ner_schema(), "f").unwrap();
        let r = quality_report(&c, 0, 0).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ParallelCorpus::parse_tsv("a\tO\tO\nb\tO\n", &ner_schema(), "f.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ParallelCorpus::parse_tsv("a\tO\tO\n\nb\tMISC\tO\n", &ner_schema(), "f.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let schema = TsvSchema::with_label_sets(["a"]);
        let err = ParallelCorpus::parse_tsv("a\tO\tO\t1.0\nb\tO\tO\n", &schema, "f.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ParallelCorpus::parse_tsv("a\tO\tO\tx\n", &schema, "f.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn sentences_and_features() {
        let text = "a\tA\tB\t0.5\t-1\nb\tB\tB\t2\t3\n\n\nc\tA\tA\t1\t1\n";
        let c = ParallelCorpus::parse_tsv(text, &TsvSchema::with_label_sets(["n"]), "f").unwrap();
        assert_eq!(c.feature_dim(), 2);
        let sentences: Vec<usize> = c.instances().iter().map(|i| i.sentence).collect();
        assert_eq!(sentences, vec![0, 0, 1]);
        assert_eq!(c.instances()[0].features, vec![0.5, -1.0]);
    }

    #[test]
    fn tsv_round_trip() {
        let text = "a\tA\tB\t0.5\t-1\nb\tB\tB\t2\t3\n\nc\tA\tA\t1\t0.1\n";
        let c = ParallelCorpus::parse_tsv(text, &TsvSchema::with_label_sets(["n"]), "f").unwrap();
        assert_eq!(c.to_tsv(), text);
    }

    #[test]
    fn whole_corpus_matrix_and_prior() {
        let text = "a\tA\tA\nb\tA\tA\nc\tA\tB\nd\tA\tB\ne\tB\tB\nf\tB\tB\ng\tB\tB\nh\tB\tB\n";
        let c = ParallelCorpus::parse_tsv(text, &TsvSchema::default(), "f").unwrap();
        let m = empirical_noise_matrix(&c, 0).unwrap();
        assert_eq!(m.to_rows(), vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(class_prior(&c).unwrap().probs(), &[0.5, 0.5]);

        let noiseless = "a\tA\tA\nb\tB\tB\nc\tC\tC\n";
        let c = ParallelCorpus::parse_tsv(noiseless, &TsvSchema::default(), "f").unwrap();
        assert_eq!(empirical_noise_matrix(&c, 0).unwrap(), NoiseMatrix::identity(3).unwrap());

        let missing = "a\tO\tO\nb\tO\tPER\n";
        let c = ParallelCorpus::parse_tsv(missing, &ner_schema(), "f").unwrap();
        assert!(matches!(empirical_noise_matrix(&c, 0), Err(Error::AbsentClass(ref n)) if n == "PER"));
        assert!(empirical_noise_matrix(&c, 1).is_err());
    }

    #[test]
    fn prior_edge_cases() {
        let c = ParallelCorpus::parse_tsv("a\tO\tO\nb\tO\tO\n", &ner_schema(), "f").unwrap();
        assert_eq!(class_prior(&c).unwrap().probs(), &[1.0, 0.0, 0.0, 0.0]);
        let e = ParallelCorpus::parse_tsv("", &ner_schema(), "f").unwrap();
        assert!(class_prior(&e).is_err());
    }

    #[test]
    fn f1_matches_harmonic_mean() {
        assert!((f1_score(0.59, 0.49) - 0.535).abs() < 1e-3);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn per_class_scores() {
        let f = per_class_f1(&[0, 1, 2, 3], &[1, 1, 0, 3], 4);
        assert_eq!(f[3], 1.0);
        assert_eq!(f[2], 0.0);
        assert!((f[1] - 2.0 / 3.0).abs() < 1e-15);
    }
}
