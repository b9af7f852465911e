//! Pointwise mutual information over aligned segment pairs.
//!
//! Aligned pairs are unordered; their mass is spread over ordered cells
//! (half to each off-diagonal mirror) so that statistically independent
//! segments come out at weight zero exactly. Add-one style smoothing with
//! a configurable pseudocount keeps every weight finite. Training runs
//! either as a batch loop (align, estimate, realign until the mean pair
//! similarity settles) or as stepwise online updates over minibatches
//! with learning rate `(t+2)^-alpha`.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::align::{
    self, extract_aligned_pairs, nw_vanilla, nw_weighted, AlignError, GapPenalties, ScoreMatrix,
};
use crate::corpus::{Segment, TrainingPairSet};

#[derive(Debug, Error)]
pub enum PmiError {
    #[error("no training evidence")]
    EmptyInput,
    #[error("pseudocount {0} must not be negative")]
    NegativePseudocount(f64),
    #[error("training requires a strictly positive pseudocount, got {0}")]
    ZeroPseudocount(f64),
    #[error("minibatch size must be at least 1")]
    ZeroMinibatch,
    #[error("alpha = {0} outside [0.5, 1.0]")]
    AlphaOutOfRange(f64),
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("segment {0} not covered by the alphabet")]
    UnknownSegment(Segment),
    #[error("model file, line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    Batch,
    Online,
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingMode::Batch => "batch",
            TrainingMode::Online => "online",
        })
    }
}

/// What the online learning rate mixes: the derived weight matrices, or
/// the underlying pair/segment distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpolationSpace {
    #[default]
    Scores,
    Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub m: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    pub space: InterpolationSpace,
    pub pseudocount: f64,
    /// Gap cost for the very first minibatch, which is aligned with the
    /// fixed +1/-1 scorer before any weights exist.
    pub vanilla_gap: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            m: 512,
            alpha: 0.55,
            epochs: 5,
            seed: 42,
            space: InterpolationSpace::Scores,
            pseudocount: 1.0,
            vanilla_gap: align::DEFAULT_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub pseudocount: f64,
    pub vanilla_gap: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            max_iter: 20,
            tol: 1e-4,
            pseudocount: 1.0,
            vanilla_gap: align::DEFAULT_GAP,
        }
    }
}

/// How a model was trained, plus its convergence trace: mean pair
/// similarity after each batch iteration, or after each online update.
/// The trace is in-process bookkeeping and is not persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMeta {
    pub mode: TrainingMode,
    pub m: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    pub pseudocount: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmiModel {
    pub scores: ScoreMatrix,
    pub gaps: GapPenalties,
    pub meta: TrainedMeta,
}

/// Estimate weights from a multiset of aligned segment pairs.
///
/// p(i,j) spreads each unordered observation over its ordered cells, then
/// smooths with `pseudocount` over all |A|^2 cells; q(i) smooths segment
/// occurrences over |A|. The weight is ln(p(i,j) / (q(i) q(j))). A zero
/// pseudocount is allowed here (unobserved cells then go to -inf); the
/// training loops insist on a positive one.
pub fn estimate_pmi(
    pairs: &[(Segment, Segment)],
    alphabet: &[Segment],
    pseudocount: f64,
) -> Result<ScoreMatrix, PmiError> {
    if pairs.is_empty() {
        return Err(PmiError::EmptyInput);
    }
    if pseudocount < 0.0 {
        return Err(PmiError::NegativePseudocount(pseudocount));
    }
    let mut alpha: Vec<Segment> = alphabet.to_vec();
    alpha.sort();
    alpha.dedup();
    let (p, q) = smoothed_stats(pairs, &alpha, pseudocount)?;
    let n = alpha.len();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            weights[i * n + j] = (p[i * n + j] / (q[i] * q[j])).ln();
        }
    }
    Ok(ScoreMatrix::from_parts(alpha, weights, q)?)
}

/// Smoothed ordered-pair distribution (n*n, sums to 1) and segment
/// distribution (n, sums to 1).
fn smoothed_stats(
    pairs: &[(Segment, Segment)],
    alphabet: &[Segment],
    pseudocount: f64,
) -> Result<(Vec<f64>, Vec<f64>), PmiError> {
    let n = alphabet.len();
    let mut index = [u16::MAX; 256];
    for (i, s) in alphabet.iter().enumerate() {
        index[s.as_byte() as usize] = i as u16;
    }
    let idx = |s: Segment| -> Result<usize, PmiError> {
        let i = index[s.as_byte() as usize];
        if i == u16::MAX {
            Err(PmiError::UnknownSegment(s))
        } else {
            Ok(i as usize)
        }
    };

    let mut p = vec![0.0f64; n * n];
    let mut q = vec![0.0f64; n];
    for &(a, b) in pairs {
        let (i, j) = (idx(a)?, idx(b)?);
        if i == j {
            p[i * n + i] += 1.0;
        } else {
            p[i * n + j] += 0.5;
            p[j * n + i] += 0.5;
        }
        q[i] += 1.0;
        q[j] += 1.0;
    }
    let total = pairs.len() as f64;
    let denom_p = total + pseudocount * (n * n) as f64;
    let denom_q = 2.0 * total + pseudocount * n as f64;
    for v in &mut p {
        *v = (*v + pseudocount) / denom_p;
    }
    for v in &mut q {
        *v = (*v + pseudocount) / denom_q;
    }
    Ok((p, q))
}

/// Batch training: bootstrap alignments with the +1/-1 scorer, then
/// alternate weight estimation and realignment until the mean pair
/// similarity moves less than `tol`, or `max_iter` rounds.
pub fn train_batch(
    pairs: &TrainingPairSet,
    gaps: GapPenalties,
    cfg: &BatchConfig,
) -> Result<PmiModel, PmiError> {
    if pairs.is_empty() {
        return Err(PmiError::EmptyInput);
    }
    if cfg.pseudocount <= 0.0 {
        return Err(PmiError::ZeroPseudocount(cfg.pseudocount));
    }
    let alphabet = pairs.alphabet();

    let mut evidence = Vec::new();
    for (a, b) in &pairs.pairs {
        evidence.extend(extract_aligned_pairs(&nw_vanilla(a, b, cfg.vanilla_gap)));
    }

    let mut trace = Vec::new();
    let mut scores = None;
    for iter in 0..cfg.max_iter.max(1) {
        let matrix = estimate_pmi(&evidence, &alphabet, cfg.pseudocount)?;
        evidence.clear();
        let mut mean = 0.0;
        for (a, b) in &pairs.pairs {
            let al = nw_weighted(a, b, &matrix, gaps)?;
            mean += al.score;
            evidence.extend(extract_aligned_pairs(&al));
        }
        mean /= pairs.len() as f64;
        log::debug!("batch iteration {iter}: mean alignment score {mean:.6}");
        trace.push(mean);
        scores = Some(matrix);
        if iter >= 1 && (trace[iter] - trace[iter - 1]).abs() < cfg.tol {
            break;
        }
    }

    Ok(PmiModel {
        scores: scores.expect("at least one iteration ran"),
        gaps,
        meta: TrainedMeta {
            mode: TrainingMode::Batch,
            m: 0,
            alpha: 0.0,
            epochs: 0,
            seed: 0,
            pseudocount: cfg.pseudocount,
            trace,
        },
    })
}

fn eta(t: usize, alpha: f64) -> f64 {
    ((t + 2) as f64).powf(-alpha)
}

/// Stepwise online training per the update rule
/// `theta <- (1 - eta_t) * theta + eta_t * s`, `eta_t = (t+2)^-alpha`,
/// with `t` counting updates globally across epochs. Pairs are reshuffled
/// every epoch from one seeded stream; the first minibatch overall is
/// aligned with the +1/-1 scorer, later ones with the current weights.
pub fn train_online(
    pairs: &TrainingPairSet,
    gaps: GapPenalties,
    cfg: &OnlineConfig,
) -> Result<PmiModel, PmiError> {
    if pairs.is_empty() {
        return Err(PmiError::EmptyInput);
    }
    if cfg.m == 0 {
        return Err(PmiError::ZeroMinibatch);
    }
    if !(0.5..=1.0).contains(&cfg.alpha) {
        return Err(PmiError::AlphaOutOfRange(cfg.alpha));
    }
    if cfg.epochs == 0 {
        return Err(PmiError::ZeroEpochs);
    }
    if cfg.pseudocount <= 0.0 {
        return Err(PmiError::ZeroPseudocount(cfg.pseudocount));
    }

    let alphabet = pairs.alphabet();
    let n = alphabet.len();
    let mut theta = ScoreMatrix::zeros(&alphabet);
    // Counts-space state: running ordered-pair and segment distributions,
    // initialized uniform so every derived weight stays finite.
    let mut dist_p = vec![1.0 / (n * n) as f64; n * n];
    let mut dist_q = vec![1.0 / n as f64; n];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut t = 0usize;
    let mut trace = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.m) {
            let mut evidence = Vec::new();
            let mut mean = 0.0;
            for &k in chunk {
                let (a, b) = &pairs.pairs[k];
                let al = if t == 0 {
                    nw_vanilla(a, b, cfg.vanilla_gap)
                } else {
                    nw_weighted(a, b, &theta, gaps)?
                };
                mean += al.score;
                evidence.extend(extract_aligned_pairs(&al));
            }
            let rate = eta(t, cfg.alpha);
            match cfg.space {
                InterpolationSpace::Scores => {
                    let s = estimate_pmi(&evidence, &alphabet, cfg.pseudocount)?;
                    theta = theta.interpolate(&s, rate)?;
                }
                InterpolationSpace::Counts => {
                    let (p, q) = smoothed_stats(&evidence, &alphabet, cfg.pseudocount)?;
                    for (d, s) in dist_p.iter_mut().zip(&p) {
                        *d = (1.0 - rate) * *d + rate * s;
                    }
                    for (d, s) in dist_q.iter_mut().zip(&q) {
                        *d = (1.0 - rate) * *d + rate * s;
                    }
                    let mut weights = vec![0.0; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            weights[i * n + j] = (dist_p[i * n + j] / (dist_q[i] * dist_q[j])).ln();
                        }
                    }
                    theta = ScoreMatrix::from_parts(alphabet.clone(), weights, dist_q.clone())?;
                }
            }
            trace.push(mean / chunk.len() as f64);
            t += 1;
        }
        log::debug!(
            "epoch {epoch}: {t} updates, last minibatch mean {:.6}",
            trace.last().copied().unwrap_or(f64::NAN)
        );
    }

    Ok(PmiModel {
        scores: theta,
        gaps,
        meta: TrainedMeta {
            mode: TrainingMode::Online,
            m: cfg.m,
            alpha: cfg.alpha,
            epochs: cfg.epochs,
            seed: cfg.seed,
            pseudocount: cfg.pseudocount,
            trace,
        },
    })
}

/// Alignment score of two words under a trained model. Segments the model
/// has never seen score like its worst pair, so out-of-family words can
/// still be compared; callers that prefer an explicit alphabet extension
/// can use [`ScoreMatrix::extend_alphabet`] beforehand.
pub fn pmi_similarity(a: &[Segment], b: &[Segment], model: &PmiModel) -> f64 {
    let floor = model.scores.min_weight();
    align::affine_dp(
        a,
        b,
        |x, y| model.scores.weight(x, y).unwrap_or(floor),
        model.gaps,
    )
    .score
}

/// Map a similarity onto (0, 1): `1 - 1/(1 + exp(-x))`. Zero similarity
/// lands on 0.5 and the map is strictly decreasing.
pub fn sigmoid_distance(score: f64) -> f64 {
    1.0 / (1.0 + score.exp())
}

pub fn pmi_distance(a: &[Segment], b: &[Segment], model: &PmiModel) -> f64 {
    sigmoid_distance(pmi_similarity(a, b, model))
}

/// Render a model in the tab-separated text layout: a metadata block,
/// `#MARGINALS`, then the `#SCORES` upper triangle at six decimals.
/// Reading it back reproduces the same text byte for byte.
pub fn write_model(model: &PmiModel) -> String {
    let m = &model.meta;
    let mut out = String::new();
    out.push_str(&format!("mode\t{}\n", m.mode));
    out.push_str(&format!("m\t{}\n", m.m));
    out.push_str(&format!("alpha\t{}\n", m.alpha));
    out.push_str(&format!("epochs\t{}\n", m.epochs));
    out.push_str(&format!("seed\t{}\n", m.seed));
    out.push_str(&format!("gap_open\t{}\n", model.gaps.open));
    out.push_str(&format!("gap_extend\t{}\n", model.gaps.extend));
    out.push_str(&format!("pseudocount\t{}\n", m.pseudocount));
    out.push_str("#MARGINALS\n");
    let alphabet = model.scores.alphabet();
    for &s in alphabet {
        out.push_str(&format!(
            "{s}\t{:.10}\n",
            model.scores.marginal(s).expect("alphabet segment")
        ));
    }
    out.push_str("#SCORES\n");
    for (i, &a) in alphabet.iter().enumerate() {
        for &b in &alphabet[i..] {
            out.push_str(&format!(
                "{a}\t{b}\t{:.6}\n",
                model.scores.weight(a, b).expect("alphabet segment")
            ));
        }
    }
    out
}

pub fn save_model(model: &PmiModel, path: &Path) -> Result<(), PmiError> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}

enum Section {
    Meta,
    Marginals,
    Scores,
}

/// Parse the text layout produced by [`write_model`]. Unknown `#` lines
/// are treated as comments. The convergence trace is not persisted, so a
/// parsed model carries an empty one.
pub fn parse_model(text: &str) -> Result<PmiModel, PmiError> {
    let bad = |line: usize, msg: &str| PmiError::ModelFormat {
        line,
        msg: msg.to_string(),
    };
    let mut section = Section::Meta;
    let mut meta: std::collections::HashMap<&str, (usize, &str)> = Default::default();
    let mut marginals: Vec<(Segment, f64, usize)> = Vec::new();
    let mut scores: Vec<(Segment, Segment, f64, usize)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim_end_matches('\r');
        if l.is_empty() {
            continue;
        }
        match l {
            "#MARGINALS" => {
                section = Section::Marginals;
                continue;
            }
            "#SCORES" => {
                section = Section::Scores;
                continue;
            }
            _ if l.starts_with('#') => continue,
            _ => {}
        }
        let fields: Vec<&str> = l.split('\t').collect();
        match section {
            Section::Meta => {
                if fields.len() != 2 {
                    return Err(bad(line, "expected key\\tvalue"));
                }
                meta.insert(fields[0], (line, fields[1]));
            }
            Section::Marginals => {
                if fields.len() != 2 {
                    return Err(bad(line, "expected segment\\tq"));
                }
                let s = single_segment(fields[0]).ok_or_else(|| bad(line, "bad segment"))?;
                let q: f64 = fields[1].parse().map_err(|_| bad(line, "bad number"))?;
                marginals.push((s, q, line));
            }
            Section::Scores => {
                if fields.len() != 3 {
                    return Err(bad(line, "expected seg1\\tseg2\\tscore"));
                }
                let a = single_segment(fields[0]).ok_or_else(|| bad(line, "bad segment"))?;
                let b = single_segment(fields[1]).ok_or_else(|| bad(line, "bad segment"))?;
                let w: f64 = fields[2].parse().map_err(|_| bad(line, "bad number"))?;
                scores.push((a, b, w, line));
            }
        }
    }

    let mut get = |key: &str| -> Result<(usize, &str), PmiError> {
        meta.remove(key)
            .ok_or_else(|| bad(0, &format!("missing key {key}")))
    };
    let mode = match get("mode")? {
        (_, "batch") => TrainingMode::Batch,
        (_, "online") => TrainingMode::Online,
        (line, _) => return Err(bad(line, "mode must be batch or online")),
    };
    let parse_num = |kv: (usize, &str)| -> Result<f64, PmiError> {
        kv.1.parse().map_err(|_| bad(kv.0, "bad number"))
    };
    let m = parse_num(get("m")?)? as usize;
    let alpha = parse_num(get("alpha")?)?;
    let epochs = parse_num(get("epochs")?)? as usize;
    let seed = parse_num(get("seed")?)? as u64;
    let gap_open = parse_num(get("gap_open")?)?;
    let gap_extend = parse_num(get("gap_extend")?)?;
    let pseudocount = parse_num(get("pseudocount")?)?;
    if let Some(key) = meta.keys().next() {
        return Err(bad(meta[key].0, &format!("unknown key {key}")));
    }

    if marginals.is_empty() {
        return Err(bad(0, "empty #MARGINALS section"));
    }
    let mut alphabet: Vec<Segment> = marginals.iter().map(|&(s, _, _)| s).collect();
    alphabet.sort();
    alphabet.dedup();
    if alphabet.len() != marginals.len() {
        return Err(bad(0, "duplicate segment in #MARGINALS"));
    }
    let n = alphabet.len();
    let pos = |s: Segment| alphabet.binary_search(&s);
    let mut q = vec![0.0; n];
    for &(s, v, _) in &marginals {
        q[pos(s).expect("from the same set")] = v;
    }
    let mut weights = vec![f64::NAN; n * n];
    for &(a, b, w, line) in &scores {
        let (i, j) = (
            pos(a).map_err(|_| bad(line, "segment missing from #MARGINALS"))?,
            pos(b).map_err(|_| bad(line, "segment missing from #MARGINALS"))?,
        );
        if !weights[i * n + j].is_nan() {
            return Err(bad(line, "duplicate score cell"));
        }
        weights[i * n + j] = w;
        weights[j * n + i] = w;
    }
    if weights.iter().any(|w| w.is_nan()) {
        return Err(bad(0, "incomplete #SCORES triangle"));
    }

    Ok(PmiModel {
        scores: ScoreMatrix::from_parts(alphabet, weights, q)?,
        gaps: GapPenalties::new(gap_open, gap_extend)?,
        meta: TrainedMeta {
            mode,
            m,
            alpha,
            epochs,
            seed,
            pseudocount,
            trace: Vec::new(),
        },
    })
}

pub fn load_model(path: &Path) -> Result<PmiModel, PmiError> {
    parse_model(&std::fs::read_to_string(path)?)
}

fn single_segment(field: &str) -> Option<Segment> {
    let mut chars = field.chars();
    let s = Segment::new(chars.next()?)?;
    chars.next().is_none().then_some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_form, Form};
    use proptest::prelude::*;

    fn seg(c: char) -> Segment {
        Segment::new(c).unwrap()
    }

    fn form(s: &str) -> Form {
        parse_form(s).unwrap()
    }

    fn pair_set(specs: &[(&str, &str)]) -> TrainingPairSet {
        TrainingPairSet {
            pairs: specs.iter().map(|&(a, b)| (form(a), form(b))).collect(),
            source: "test".into(),
        }
    }

    #[test]
    fn perfectly_associated_diagonal() {
        // Eight (a,a) and eight (b,b): p(a,a) = 0.5 = q(a), so the diagonal
        // weight is ln 2 when smoothing is off.
        let pairs: Vec<_> = std::iter::repeat_n((seg('a'), seg('a')), 8)
            .chain(std::iter::repeat_n((seg('b'), seg('b')), 8))
            .collect();
        let m = estimate_pmi(&pairs, &[seg('a'), seg('b')], 0.0).unwrap();
        assert!((m.weight(seg('a'), seg('a')).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((m.weight(seg('b'), seg('b')).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(m.weight(seg('a'), seg('b')).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn independent_segments_score_zero() {
        // Counts laid out so p(i,j) = q(i) q(j) exactly: 2 (a,a), 4 (a,b),
        // 2 (b,b) gives q(a) = q(b) = 1/2 and every ordered cell 1/4.
        let mut pairs = vec![(seg('a'), seg('a')), (seg('b'), seg('b'))];
        pairs.extend([(seg('a'), seg('a')), (seg('b'), seg('b'))]);
        pairs.extend(std::iter::repeat_n((seg('a'), seg('b')), 4));
        let m = estimate_pmi(&pairs, &[seg('a'), seg('b')], 0.0).unwrap();
        for &x in &[seg('a'), seg('b')] {
            for &y in &[seg('a'), seg('b')] {
                assert!(m.weight(x, y).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_gives_unseen_pairs_a_finite_negative_weight() {
        // 8 (a,a) + 8 (b,b), pseudocount 1: p(a,b) = 1/20, q = 1/2 each,
        // so the weight is ln(1/5).
        let pairs: Vec<_> = std::iter::repeat_n((seg('a'), seg('a')), 8)
            .chain(std::iter::repeat_n((seg('b'), seg('b')), 8))
            .collect();
        let m = estimate_pmi(&pairs, &[seg('a'), seg('b')], 1.0).unwrap();
        let w = m.weight(seg('a'), seg('b')).unwrap();
        assert!((w - 0.2f64.ln()).abs() < 1e-12);
        assert!(w < 0.0);
        let diag = m.weight(seg('a'), seg('a')).unwrap();
        assert!((diag - 1.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn estimate_rejects_bad_input() {
        assert!(matches!(
            estimate_pmi(&[], &[seg('a')], 1.0),
            Err(PmiError::EmptyInput)
        ));
        assert!(matches!(
            estimate_pmi(&[(seg('a'), seg('a'))], &[seg('a')], -0.5),
            Err(PmiError::NegativePseudocount(_))
        ));
        assert!(matches!(
            estimate_pmi(&[(seg('a'), seg('b'))], &[seg('a')], 1.0),
            Err(PmiError::UnknownSegment(_))
        ));
    }

    #[test]
    fn batch_on_identical_words_converges_fast() {
        let pairs = pair_set(&[("hand", "hand"), ("fot", "fot"), ("blut", "blut")]);
        let model = train_batch(&pairs, GapPenalties::default(), &BatchConfig::default()).unwrap();
        assert!(model.meta.trace.len() <= 2);
        for &s in model.scores.alphabet() {
            assert!(model.scores.weight(s, s).unwrap() > 0.0);
        }
    }

    #[test]
    fn batch_respects_max_iter() {
        let pairs = pair_set(&[("hant", "hand"), ("fot", "fut"), ("hant", "fot")]);
        let cfg = BatchConfig {
            max_iter: 1,
            ..BatchConfig::default()
        };
        let model = train_batch(&pairs, GapPenalties::default(), &cfg).unwrap();
        assert_eq!(model.meta.trace.len(), 1);
    }

    #[test]
    fn batch_convergence_trace_settles() {
        let pairs = pair_set(&[
            ("hant", "hand"),
            ("fot", "fut"),
            ("blut", "blod"),
            ("valt", "wald"),
        ]);
        let cfg = BatchConfig::default();
        let model = train_batch(&pairs, GapPenalties::default(), &cfg).unwrap();
        let trace = &model.meta.trace;
        if trace.len() < cfg.max_iter {
            let last = trace[trace.len() - 1];
            let prev = trace[trace.len() - 2];
            assert!((last - prev).abs() < cfg.tol);
        }
    }

    fn online_fixture() -> TrainingPairSet {
        pair_set(&[
            ("hant", "hand"),
            ("fot", "fut"),
            ("blut", "blod"),
            ("valt", "wald"),
            ("hant", "hond"),
            ("fot", "fot"),
        ])
    }

    #[test]
    fn one_big_minibatch_means_one_update_per_epoch() {
        let pairs = online_fixture();
        let cfg = OnlineConfig {
            m: pairs.len(),
            epochs: 1,
            alpha: 0.5,
            ..OnlineConfig::default()
        };
        let model = train_online(&pairs, GapPenalties::default(), &cfg).unwrap();
        assert_eq!(model.meta.trace.len(), 1);

        // One update from a zero matrix: theta = eta_0 * s, eta_0 = 2^-alpha.
        let alphabet = pairs.alphabet();
        let mut evidence = Vec::new();
        for (a, b) in &pairs.pairs {
            evidence.extend(extract_aligned_pairs(&nw_vanilla(a, b, cfg.vanilla_gap)));
        }
        let s = estimate_pmi(&evidence, &alphabet, cfg.pseudocount).unwrap();
        let eta0 = 2f64.powf(-cfg.alpha);
        for &x in model.scores.alphabet() {
            for &y in model.scores.alphabet() {
                let got = model.scores.weight(x, y).unwrap();
                let want = eta0 * s.weight(x, y).unwrap();
                assert!((got - want).abs() < 1e-12, "({x},{y}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn minibatch_of_one_updates_once_per_pair() {
        let pairs = online_fixture();
        let cfg = OnlineConfig {
            m: 1,
            epochs: 2,
            ..OnlineConfig::default()
        };
        let model = train_online(&pairs, GapPenalties::default(), &cfg).unwrap();
        assert_eq!(model.meta.trace.len(), 2 * pairs.len());
    }

    #[test]
    fn online_training_is_bit_deterministic() {
        let pairs = online_fixture();
        for space in [InterpolationSpace::Scores, InterpolationSpace::Counts] {
            let cfg = OnlineConfig {
                m: 2,
                epochs: 3,
                space,
                ..OnlineConfig::default()
            };
            let a = train_online(&pairs, GapPenalties::default(), &cfg).unwrap();
            let b = train_online(&pairs, GapPenalties::default(), &cfg).unwrap();
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.meta.trace, b.meta.trace);
        }
    }

    #[test]
    fn online_config_validation() {
        let pairs = online_fixture();
        let gaps = GapPenalties::default();
        let bad = |cfg: OnlineConfig| train_online(&pairs, gaps, &cfg);
        assert!(matches!(
            bad(OnlineConfig {
                m: 0,
                ..OnlineConfig::default()
            }),
            Err(PmiError::ZeroMinibatch)
        ));
        assert!(matches!(
            bad(OnlineConfig {
                alpha: 0.3,
                ..OnlineConfig::default()
            }),
            Err(PmiError::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            bad(OnlineConfig {
                epochs: 0,
                ..OnlineConfig::default()
            }),
            Err(PmiError::ZeroEpochs)
        ));
        assert!(matches!(
            bad(OnlineConfig {
                pseudocount: 0.0,
                ..OnlineConfig::default()
            }),
            Err(PmiError::ZeroPseudocount(_))
        ));
        let empty = TrainingPairSet {
            pairs: vec![],
            source: "empty".into(),
        };
        assert!(matches!(
            train_online(&empty, gaps, &OnlineConfig::default()),
            Err(PmiError::EmptyInput)
        ));
    }

    #[test]
    fn learning_rate_schedule() {
        assert!((eta(0, 0.5) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((eta(0, 1.0) - 0.5).abs() < 1e-15);
        // Strictly decreasing in t.
        for t in 0..10 {
            assert!(eta(t + 1, 0.75) < eta(t, 0.75));
        }
    }

    #[test]
    fn sigmoid_distance_anchors() {
        assert_eq!(sigmoid_distance(0.0), 0.5);
        assert!((sigmoid_distance(2.1972) - 0.1).abs() < 1e-4);
        assert!(sigmoid_distance(100.0) < 1e-10);
        assert!(sigmoid_distance(-100.0) > 1.0 - 1e-10);
        for s in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            assert!(sigmoid_distance(s) > sigmoid_distance(s + 0.25));
        }
    }

    #[test]
    fn similarity_of_identical_single_segments_is_their_weight() {
        let pairs = online_fixture();
        let model = train_batch(&pairs, GapPenalties::default(), &BatchConfig::default()).unwrap();
        let h = seg('h');
        assert_eq!(
            pmi_similarity(&[h], &[h], &model),
            model.scores.weight(h, h).unwrap()
        );
    }

    #[test]
    fn unknown_segments_fall_back_to_the_worst_weight() {
        let pairs = online_fixture();
        let model = train_batch(&pairs, GapPenalties::default(), &BatchConfig::default()).unwrap();
        let z = seg('Z');
        assert!(!model.scores.contains(z));
        let got = pmi_similarity(&[z], &[seg('h')], &model);
        let single = model.scores.min_weight().max(model.gaps.open * 2.0);
        assert_eq!(got, single);
    }

    #[test]
    fn model_file_round_trips_byte_for_byte() {
        let pairs = online_fixture();
        let cfg = OnlineConfig {
            m: 2,
            epochs: 2,
            ..OnlineConfig::default()
        };
        let model = train_online(&pairs, GapPenalties::default(), &cfg).unwrap();
        let text = write_model(&model);
        let parsed = parse_model(&text).unwrap();
        assert_eq!(write_model(&parsed), text);
        assert_eq!(parsed.meta.mode, TrainingMode::Online);
        assert_eq!(parsed.meta.m, 2);
        assert_eq!(parsed.gaps, model.gaps);
        // Values survive up to the stated precision.
        for &a in model.scores.alphabet() {
            for &b in model.scores.alphabet() {
                let w0 = model.scores.weight(a, b).unwrap();
                let w1 = parsed.scores.weight(a, b).unwrap();
                assert!((w0 - w1).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn model_parser_rejects_damage() {
        let pairs = online_fixture();
        let model = train_batch(&pairs, GapPenalties::default(), &BatchConfig::default()).unwrap();
        let text = write_model(&model);

        let truncated: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(parse_model(&truncated).is_err());

        let missing_key = text.replacen("mode\tbatch\n", "", 1);
        assert!(matches!(
            parse_model(&missing_key),
            Err(PmiError::ModelFormat { .. })
        ));

        let mangled = text.replacen("pseudocount\t1", "pseudocount\tabc", 1);
        assert!(parse_model(&mangled).is_err());
    }

    proptest! {
        #[test]
        fn estimated_matrices_are_symmetric_and_finite(
            raw in prop::collection::vec((0usize..4, 0usize..4), 1..60)
        ) {
            let alphabet = [seg('a'), seg('b'), seg('c'), seg('d')];
            let pairs: Vec<_> = raw.into_iter()
                .map(|(i, j)| (alphabet[i], alphabet[j]))
                .collect();
            let m = estimate_pmi(&pairs, &alphabet, 1.0).unwrap();
            let total: f64 = alphabet.iter().map(|&s| m.marginal(s).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for &x in &alphabet {
                for &y in &alphabet {
                    let w = m.weight(x, y).unwrap();
                    prop_assert!(w.is_finite());
                    prop_assert_eq!(w, m.weight(y, x).unwrap());
                }
            }
        }

        #[test]
        fn similarity_is_symmetric(
            a in prop::collection::vec(prop::sample::select(vec!['h','a','n','t','f','o']), 1..6),
            b in prop::collection::vec(prop::sample::select(vec!['h','a','n','t','f','o']), 1..6),
        ) {
            let pairs = online_fixture();
            let model = train_batch(&pairs, GapPenalties::default(), &BatchConfig::default()).unwrap();
            let fa: Form = a.iter().map(|&c| seg(c)).collect();
            let fb: Form = b.iter().map(|&c| seg(c)).collect();
            prop_assert_eq!(
                pmi_similarity(&fa, &fb, &model),
                pmi_similarity(&fb, &fa, &model)
            );
        }
    }
}
