//! Clustering evaluation and dataset diagnostics.
//!
//! B-cubed precision and recall are item-based: each word is scored by
//! how much of its predicted cluster and its gold class overlap, and
//! concept scores are word averages. Dataset-level numbers are the
//! arithmetic means across concepts, with F averaged directly rather
//! than recomputed from averaged precision and recall.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::cluster::Partition;
use crate::corpus::Wordlist;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("partitions cover different word sets ({pred} vs {gold})")]
    CoverageMismatch { pred: usize, gold: usize },
    #[error("nothing to average")]
    EmptyInput,
    #[error("wordlist carries no gold cognate classes")]
    MissingGold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcubedResult {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub concept: Option<String>,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Word-averaged B-cubed scores for one concept. `pred` and `gold` are
/// partitions over the same word positions.
pub fn bcubed_concept(pred: &Partition, gold: &Partition) -> Result<BcubedResult, EvalError> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(EvalError::CoverageMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let n = pred.len();
    // overlap[(p, g)] = words predicted into p with gold class g.
    let mut overlap: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut pred_size = vec![0usize; pred.n_clusters()];
    let mut gold_size = vec![0usize; gold.n_clusters()];
    for w in 0..n {
        let (p, g) = (pred.cluster_of(w), gold.cluster_of(w));
        *overlap.entry((p, g)).or_insert(0) += 1;
        pred_size[p] += 1;
        gold_size[g] += 1;
    }
    let mut precision = 0.0;
    let mut recall = 0.0;
    for w in 0..n {
        let (p, g) = (pred.cluster_of(w), gold.cluster_of(w));
        let both = overlap[&(p, g)] as f64;
        precision += both / pred_size[p] as f64;
        recall += both / gold_size[g] as f64;
    }
    precision /= n as f64;
    recall /= n as f64;
    Ok(BcubedResult {
        precision,
        recall,
        f_score: harmonic(precision, recall),
        concept: None,
    })
}

/// Arithmetic mean of per-concept precision, recall and F. F is averaged
/// as-is, so it is generally not the harmonic mean of the averages.
pub fn bcubed_average(per_concept: &[BcubedResult]) -> Result<BcubedResult, EvalError> {
    if per_concept.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = per_concept.len() as f64;
    Ok(BcubedResult {
        precision: per_concept.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: per_concept.iter().map(|r| r.recall).sum::<f64>() / n,
        f_score: per_concept.iter().map(|r| r.f_score).sum::<f64>() / n,
        concept: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_concept: Vec<BcubedResult>,
    pub average: BcubedResult,
    /// Words skipped for lacking a gold class.
    pub excluded_words: usize,
}

/// Score a per-concept clustering against the wordlist's gold classes.
/// Unlabeled words are dropped from their concept (and counted); a
/// concept whose words are all unlabeled drops out entirely.
pub fn evaluate_clustering(
    wl: &Wordlist,
    parts: &BTreeMap<String, Partition>,
) -> Result<EvalReport, EvalError> {
    if !wl.has_gold() {
        return Err(EvalError::MissingGold);
    }
    let mut per_concept = Vec::new();
    let mut excluded = 0;
    for concept in wl.concepts() {
        let words: Vec<_> = wl.words_for_concept(concept).collect();
        let part = match parts.get(concept) {
            Some(p) if p.len() == words.len() => p,
            _ => {
                return Err(EvalError::CoverageMismatch {
                    pred: parts.get(concept).map_or(0, |p| p.len()),
                    gold: words.len(),
                })
            }
        };
        let mut pred_ids = Vec::new();
        let mut gold_ids = Vec::new();
        let mut class_ids: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            match &w.gold_class {
                Some(class) => {
                    let next = class_ids.len();
                    gold_ids.push(*class_ids.entry(class).or_insert(next));
                    pred_ids.push(part.cluster_of(i));
                }
                None => excluded += 1,
            }
        }
        if pred_ids.is_empty() {
            continue;
        }
        let mut result = bcubed_concept(&Partition::new(pred_ids), &Partition::new(gold_ids))?;
        result.concept = Some(concept.clone());
        per_concept.push(result);
    }
    let average = bcubed_average(&per_concept)?;
    Ok(EvalReport {
        per_concept,
        average,
        excluded_words: excluded,
    })
}

/// Per-concept rows plus a final `__AVERAGE__` row; numbers carry full
/// precision so the JSON twin holds identical values.
pub fn report_tsv(report: &EvalReport) -> String {
    let mut out = String::from("concept\tprecision\trecall\tf\n");
    for r in &report.per_concept {
        let name = r.concept.as_deref().unwrap_or("?");
        out.push_str(&format!(
            "{name}\t{}\t{}\t{}\n",
            r.precision, r.recall, r.f_score
        ));
    }
    let a = &report.average;
    out.push_str(&format!(
        "__AVERAGE__\t{}\t{}\t{}\n",
        a.precision, a.recall, a.f_score
    ));
    out
}

pub fn report_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    /// Number of meanings.
    pub nom: usize,
    /// Number of doculects.
    pub nol: usize,
    pub n_words: usize,
    pub n_labeled: usize,
    /// Distinct (concept, class) pairs.
    pub n_classes: usize,
    /// Average cognate classes per meaning.
    pub ave_cc: f64,
    /// Average words per cognate class.
    pub ave_wc: f64,
}

/// Summary counts over the labeled part of the wordlist. Classes are
/// concept-scoped: the same label under two meanings is two classes.
pub fn dataset_stats(wl: &Wordlist) -> Result<DatasetStats, EvalError> {
    if !wl.has_gold() {
        return Err(EvalError::MissingGold);
    }
    let mut classes: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut labeled = 0;
    for w in wl.words() {
        if let Some(class) = &w.gold_class {
            *classes.entry((&w.concept, class)).or_insert(0) += 1;
            labeled += 1;
        }
    }
    let n_classes = classes.len();
    Ok(DatasetStats {
        nom: wl.concepts().len(),
        nol: wl.doculects().len(),
        n_words: wl.len(),
        n_labeled: labeled,
        n_classes,
        ave_cc: n_classes as f64 / wl.concepts().len() as f64,
        ave_wc: labeled as f64 / n_classes as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordlengthProfile {
    /// Mean absolute length difference over cross-doculect pairs, one
    /// entry per concept that has at least one such pair.
    pub per_concept: Vec<(String, f64)>,
    pub mean: f64,
}

/// Fig.-3-style diagnostic: how much word lengths disagree within each
/// meaning, averaged over all cross-doculect pairs.
pub fn wordlength_diff_profile(wl: &Wordlist) -> WordlengthProfile {
    let mut per_concept = Vec::new();
    for concept in wl.concepts() {
        let words: Vec<_> = wl.words_for_concept(concept).collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                if words[i].doculect != words[j].doculect {
                    total += (words[i].form.len() as f64 - words[j].form.len() as f64).abs();
                    pairs += 1;
                }
            }
        }
        if pairs > 0 {
            per_concept.push((concept.clone(), total / pairs as f64));
        }
    }
    let mean = if per_concept.is_empty() {
        0.0
    } else {
        per_concept.iter().map(|(_, v)| v).sum::<f64>() / per_concept.len() as f64
    };
    WordlengthProfile { per_concept, mean }
}
