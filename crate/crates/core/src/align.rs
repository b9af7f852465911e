//! Pairwise sequence alignment over segment strings.
//!
//! Two scoring regimes share one dynamic program: [`nw_vanilla`] uses
//! match +1 / mismatch -1 with a linear gap cost, [`nw_weighted`] uses a
//! learned symmetric [`ScoreMatrix`] with affine gaps. The affine recursion
//! keeps three lanes (match, gap-in-bottom, gap-in-top); a gap run of
//! length L costs `open + (L-1) * extend` and switching gap direction
//! reopens. Ties prefer match, then a gap in the top string.

use std::fmt;

use thiserror::Error;

use crate::corpus::Segment;

/// Linear gap cost used by [`nw_vanilla`] unless overridden.
pub const DEFAULT_GAP: f64 = -1.0;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("both sequences are empty")]
    BothEmpty,
    #[error("segment {0} missing from the score matrix")]
    UnknownSegment(Segment),
    #[error("gap penalties must satisfy open <= extend <= 0, got open {open}, extend {extend}")]
    BadGapPenalties { open: f64, extend: f64 },
    #[error("weights must be a symmetric n x n matrix with n marginals, n = {n}")]
    BadMatrixShape { n: usize },
    #[error("weights not symmetric at ({a}, {b})")]
    AsymmetricWeights { a: Segment, b: Segment },
    #[error("marginals must be positive and sum to 1, got sum {sum}")]
    BadMarginals { sum: f64 },
    #[error("duplicate segment {0} in alphabet")]
    DuplicateSegment(Segment),
    #[error("score matrices cover different alphabets")]
    AlphabetMismatch,
}

/// Edit distance with unit costs, two-row dynamic program.
pub fn levenshtein(a: &[Segment], b: &[Segment]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &sa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &sb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(sa != sb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Length-normalized edit distance in [0, 1]: distance over the longer
/// length. Errors when both sequences are empty.
pub fn ldn(a: &[Segment], b: &[Segment]) -> Result<f64, AlignError> {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return Err(AlignError::BothEmpty);
    }
    Ok(levenshtein(a, b) as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPenalties {
    pub open: f64,
    pub extend: f64,
}

impl GapPenalties {
    pub fn new(open: f64, extend: f64) -> Result<GapPenalties, AlignError> {
        if open <= extend && extend <= 0.0 {
            Ok(GapPenalties { open, extend })
        } else {
            Err(AlignError::BadGapPenalties { open, extend })
        }
    }

    /// Linear cost: opening and extending are the same.
    pub fn linear(gap: f64) -> GapPenalties {
        GapPenalties {
            open: gap,
            extend: gap,
        }
    }
}

impl Default for GapPenalties {
    fn default() -> Self {
        GapPenalties {
            open: -2.5,
            extend: -1.75,
        }
    }
}

/// One alignment column. "Top" is the first sequence, "bottom" the second;
/// `GapBottom(s)` puts segment `s` of the top sequence over a gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Pair(Segment, Segment),
    GapBottom(Segment),
    GapTop(Segment),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub columns: Vec<Column>,
    pub score: f64,
}

impl Alignment {
    /// Recover the first (top) sequence.
    pub fn top(&self) -> Vec<Segment> {
        self.columns
            .iter()
            .filter_map(|c| match c {
                Column::Pair(a, _) | Column::GapBottom(a) => Some(*a),
                Column::GapTop(_) => None,
            })
            .collect()
    }

    /// Recover the second (bottom) sequence.
    pub fn bottom(&self) -> Vec<Segment> {
        self.columns
            .iter()
            .filter_map(|c| match c {
                Column::Pair(_, b) | Column::GapTop(b) => Some(*b),
                Column::GapBottom(_) => None,
            })
            .collect()
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.columns {
            match c {
                Column::Pair(a, _) | Column::GapBottom(a) => write!(f, "{a}")?,
                Column::GapTop(_) => write!(f, "-")?,
            }
        }
        writeln!(f)?;
        for c in &self.columns {
            match c {
                Column::Pair(_, b) | Column::GapTop(b) => write!(f, "{b}")?,
                Column::GapBottom(_) => write!(f, "-")?,
            }
        }
        Ok(())
    }
}

/// The segment pairs used as evidence by the estimators: every non-gap
/// column, ordered canonically so (a, b) and (b, a) count as one event.
pub fn extract_aligned_pairs(al: &Alignment) -> Vec<(Segment, Segment)> {
    al.columns
        .iter()
        .filter_map(|c| match c {
            Column::Pair(a, b) => Some((*a.min(b), *a.max(b))),
            _ => None,
        })
        .collect()
}

/// Symmetric segment-pair weights plus segment marginal frequencies.
///
/// The alphabet is sorted and duplicate-free; weights are dense over it.
/// Marginals are relative frequencies (positive, summing to one) and ride
/// along so downstream scoring can fall back on them for the null model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    alphabet: Vec<Segment>,
    index: Box<[u16; 256]>,
    weights: Vec<f64>,
    marginals: Vec<f64>,
}

const NO_INDEX: u16 = u16::MAX;
const MARGINAL_SUM_TOL: f64 = 1e-3;

impl ScoreMatrix {
    pub fn from_parts(
        alphabet: Vec<Segment>,
        weights: Vec<f64>,
        marginals: Vec<f64>,
    ) -> Result<ScoreMatrix, AlignError> {
        let n = alphabet.len();
        for w in alphabet.windows(2) {
            if w[1] <= w[0] {
                return Err(if w[1] == w[0] {
                    AlignError::DuplicateSegment(w[0])
                } else {
                    AlignError::BadMatrixShape { n }
                });
            }
        }
        if weights.len() != n * n || marginals.len() != n {
            return Err(AlignError::BadMatrixShape { n });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if weights[i * n + j] != weights[j * n + i] {
                    return Err(AlignError::AsymmetricWeights {
                        a: alphabet[i],
                        b: alphabet[j],
                    });
                }
            }
        }
        let sum: f64 = marginals.iter().sum();
        if marginals.iter().any(|&q| q <= 0.0) || (sum - 1.0).abs() > MARGINAL_SUM_TOL {
            return Err(AlignError::BadMarginals { sum });
        }
        let mut index = Box::new([NO_INDEX; 256]);
        for (i, s) in alphabet.iter().enumerate() {
            index[s.as_byte() as usize] = i as u16;
        }
        Ok(ScoreMatrix {
            alphabet,
            index,
            weights,
            marginals,
        })
    }

    /// All-zero weights and uniform marginals over `alphabet` (deduplicated
    /// and sorted). The usual starting point for online training.
    pub fn zeros(alphabet: &[Segment]) -> ScoreMatrix {
        let mut alpha: Vec<Segment> = alphabet.to_vec();
        alpha.sort();
        alpha.dedup();
        let n = alpha.len();
        ScoreMatrix::from_parts(alpha, vec![0.0; n * n], vec![1.0 / n as f64; n])
            .expect("sorted unique alphabet with uniform marginals is valid")
    }

    pub fn alphabet(&self) -> &[Segment] {
        &self.alphabet
    }

    pub fn n_segments(&self) -> usize {
        self.alphabet.len()
    }

    pub fn contains(&self, s: Segment) -> bool {
        self.index[s.as_byte() as usize] != NO_INDEX
    }

    pub(crate) fn idx(&self, s: Segment) -> Option<usize> {
        let i = self.index[s.as_byte() as usize];
        (i != NO_INDEX).then_some(i as usize)
    }

    pub fn weight(&self, a: Segment, b: Segment) -> Option<f64> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        Some(self.weights[i * self.alphabet.len() + j])
    }

    pub fn marginal(&self, s: Segment) -> Option<f64> {
        Some(self.marginals[self.idx(s)?])
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Convex combination `(1 - eta) * self + eta * newer`, elementwise on
    /// weights and marginals. Both matrices must cover the same alphabet.
    pub fn interpolate(&self, newer: &ScoreMatrix, eta: f64) -> Result<ScoreMatrix, AlignError> {
        if self.alphabet != newer.alphabet {
            return Err(AlignError::AlphabetMismatch);
        }
        let weights = self
            .weights
            .iter()
            .zip(&newer.weights)
            .map(|(a, b)| (1.0 - eta) * a + eta * b)
            .collect();
        let mut out = self.clone();
        out.weights = weights;
        out.marginals = self
            .marginals
            .iter()
            .zip(&newer.marginals)
            .map(|(a, b)| (1.0 - eta) * a + eta * b)
            .collect();
        Ok(out)
    }

    /// Add unseen segments: their pair weights take the current minimum
    /// weight and their marginal the current minimum marginal, after which
    /// marginals are renormalized. Returns how many segments were new.
    pub fn extend_alphabet(&mut self, extra: &[Segment]) -> usize {
        let mut new: Vec<Segment> = extra
            .iter()
            .copied()
            .filter(|&s| !self.contains(s))
            .collect();
        new.sort();
        new.dedup();
        if new.is_empty() {
            return 0;
        }
        let floor_w = if self.alphabet.is_empty() {
            0.0
        } else {
            self.min_weight()
        };
        let floor_q = self
            .marginals
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .min(1.0);

        let mut alphabet: Vec<Segment> = self
            .alphabet
            .iter()
            .copied()
            .chain(new.iter().copied())
            .collect();
        alphabet.sort();
        let n = alphabet.len();
        let mut weights = vec![floor_w; n * n];
        let mut marginals = vec![floor_q; n];
        for (i, &a) in alphabet.iter().enumerate() {
            if let Some(q) = self.marginal(a) {
                marginals[i] = q;
            }
            for (j, &b) in alphabet.iter().enumerate() {
                if let Some(w) = self.weight(a, b) {
                    weights[i * n + j] = w;
                }
            }
        }
        let total: f64 = marginals.iter().sum();
        for q in &mut marginals {
            *q /= total;
        }
        let added = new.len();
        *self = ScoreMatrix::from_parts(alphabet, weights, marginals)
            .expect("extension preserves symmetry and positivity");
        added
    }
}

/// Global alignment with the fixed +1 / -1 scorer and a linear gap cost.
/// Works over any segments; unseen ones simply never match each other
/// unless equal.
pub fn nw_vanilla(a: &[Segment], b: &[Segment], gap: f64) -> Alignment {
    affine_dp(
        a,
        b,
        |x, y| if x == y { 1.0 } else { -1.0 },
        GapPenalties::linear(gap),
    )
}

/// Global alignment under a learned matrix with affine gaps. Every segment
/// of both sequences must be covered by the matrix.
pub fn nw_weighted(
    a: &[Segment],
    b: &[Segment],
    matrix: &ScoreMatrix,
    gaps: GapPenalties,
) -> Result<Alignment, AlignError> {
    for &s in a.iter().chain(b) {
        if !matrix.contains(s) {
            return Err(AlignError::UnknownSegment(s));
        }
    }
    Ok(affine_dp(
        a,
        b,
        |x, y| matrix.weight(x, y).expect("checked above"),
        gaps,
    ))
}

/// Score an explicit column sequence under the same affine rules the
/// dynamic program uses. Lets tests and rescoring agree with [`nw_weighted`]
/// by construction.
pub fn score_columns(
    columns: &[Column],
    matrix: &ScoreMatrix,
    gaps: GapPenalties,
) -> Result<f64, AlignError> {
    let mut total = 0.0;
    let mut prev_gap_bottom = false;
    let mut prev_gap_top = false;
    for c in columns {
        match c {
            Column::Pair(a, b) => {
                total += matrix.weight(*a, *b).ok_or(AlignError::UnknownSegment(
                    if matrix.contains(*a) { *b } else { *a },
                ))?;
                prev_gap_bottom = false;
                prev_gap_top = false;
            }
            Column::GapBottom(_) => {
                total += if prev_gap_bottom {
                    gaps.extend
                } else {
                    gaps.open
                };
                prev_gap_bottom = true;
                prev_gap_top = false;
            }
            Column::GapTop(_) => {
                total += if prev_gap_top { gaps.extend } else { gaps.open };
                prev_gap_bottom = false;
                prev_gap_top = true;
            }
        }
    }
    Ok(total)
}

const LANE_M: u8 = 0;
const LANE_X: u8 = 1;
const LANE_Y: u8 = 2;

/// Pick the best of (m, x, y), preferring match, then the top-gap lane,
/// on exact ties.
fn best3(m: f64, x: f64, y: f64) -> (u8, f64) {
    if m >= x && m >= y {
        (LANE_M, m)
    } else if y >= x {
        (LANE_Y, y)
    } else {
        (LANE_X, x)
    }
}

pub(crate) fn affine_dp(
    a: &[Segment],
    b: &[Segment],
    score: impl Fn(Segment, Segment) -> f64,
    gaps: GapPenalties,
) -> Alignment {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let neg = f64::NEG_INFINITY;
    let mut lm = vec![neg; (n + 1) * w];
    let mut lx = vec![neg; (n + 1) * w];
    let mut ly = vec![neg; (n + 1) * w];
    // From-lane of each cell, one table per lane.
    let mut tm = vec![0u8; (n + 1) * w];
    let mut tx = vec![0u8; (n + 1) * w];
    let mut ty = vec![0u8; (n + 1) * w];
    lm[0] = 0.0;

    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let at = i * w + j;
            if i >= 1 && j >= 1 {
                let prev = (i - 1) * w + (j - 1);
                let (from, best) = best3(lm[prev], lx[prev], ly[prev]);
                lm[at] = best + score(a[i - 1], b[j - 1]);
                tm[at] = from;
            }
            if i >= 1 {
                let prev = (i - 1) * w + j;
                let (from, best) = best3(
                    lm[prev] + gaps.open,
                    lx[prev] + gaps.extend,
                    ly[prev] + gaps.open,
                );
                lx[at] = best;
                tx[at] = from;
            }
            if j >= 1 {
                let prev = i * w + (j - 1);
                let (from, best) = best3(
                    lm[prev] + gaps.open,
                    lx[prev] + gaps.open,
                    ly[prev] + gaps.extend,
                );
                ly[at] = best;
                ty[at] = from;
            }
        }
    }

    let end = n * w + m;
    let (mut lane, score) = best3(lm[end], lx[end], ly[end]);
    let mut columns = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let at = i * w + j;
        match lane {
            LANE_M => {
                columns.push(Column::Pair(a[i - 1], b[j - 1]));
                lane = tm[at];
                i -= 1;
                j -= 1;
            }
            LANE_X => {
                columns.push(Column::GapBottom(a[i - 1]));
                lane = tx[at];
                i -= 1;
            }
            _ => {
                columns.push(Column::GapTop(b[j - 1]));
                lane = ty[at];
                j -= 1;
            }
        }
    }
    columns.reverse();
    Alignment { columns, score }
}
