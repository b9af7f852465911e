//! Five-state pair hidden Markov model over word pairs.
//!
//! States: Begin, Match, X (top segment over a gap), Y (gap over a bottom
//! segment), End. Begin shares the Match row's outgoing probabilities, X
//! and Y may transition into each other, and the transition family is the
//! five-parameter tied set (delta, epsilon, lambda, tau_m, tau_xy).
//! Everything runs in log space with explicit log-sum-exp; no scaling
//! arrays. Words are scored by the log-odds of the model against a
//! length-and-frequency null model.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::align::{extract_aligned_pairs, nw_vanilla, Alignment, Column};
use crate::corpus::{Segment, TrainingPairSet};
use crate::pmi::sigmoid_distance;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PhmmError {
    #[error("no training pairs")]
    EmptyInput,
    #[error("segment {0} not covered by the model alphabet")]
    UnknownSegment(Segment),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("likelihood vanished on pair {pair_index} (log-probability not finite)")]
    NumericalUnderflow { pair_index: usize },
    #[error("invalid online config: {0}")]
    BadConfig(String),
    #[error("parameter file, line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Transition and emission parameters, tied as drawn in the five-state
/// topology: M→X and M→Y share `delta`, the gap states share `epsilon`
/// (self loop), `lambda` (cross) and `tau_xy` (exit), and Begin reuses the
/// M row. Match emissions are one distribution over unordered segment
/// pairs; an ordered observation (a, b) uses that unordered probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PhmmParams {
    alphabet: Vec<Segment>,
    index: Box<[u16; 256]>,
    pub delta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub tau_m: f64,
    pub tau_xy: f64,
    match_emit: Vec<f64>,
    gap_emit: Vec<f64>,
}

impl PhmmParams {
    /// `match_emit` is dense n*n, symmetric, with its upper triangle
    /// summing to one; `gap_emit` is a distribution over the alphabet.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alphabet: Vec<Segment>,
        delta: f64,
        epsilon: f64,
        lambda: f64,
        tau_m: f64,
        tau_xy: f64,
        match_emit: Vec<f64>,
        gap_emit: Vec<f64>,
    ) -> Result<PhmmParams, PhmmError> {
        let n = alphabet.len();
        if n == 0 {
            return Err(PhmmError::InvalidParams("empty alphabet".into()));
        }
        for w in alphabet.windows(2) {
            if w[1] <= w[0] {
                return Err(PhmmError::InvalidParams(
                    "alphabet must be sorted and duplicate-free".into(),
                ));
            }
        }
        if match_emit.len() != n * n || gap_emit.len() != n {
            return Err(PhmmError::InvalidParams(
                "emission table sizes do not fit the alphabet".into(),
            ));
        }
        let mut index = Box::new([u16::MAX; 256]);
        for (i, s) in alphabet.iter().enumerate() {
            index[s.as_byte() as usize] = i as u16;
        }
        let params = PhmmParams {
            alphabet,
            index,
            delta,
            epsilon,
            lambda,
            tau_m,
            tau_xy,
            match_emit,
            gap_emit,
        };
        params.validate()?;
        Ok(params)
    }

    /// Check every structural invariant; used by the trainers after each
    /// update so a broken M-step cannot escape unnoticed.
    pub fn validate(&self) -> Result<(), PhmmError> {
        let bad = |msg: String| Err(PhmmError::InvalidParams(msg));
        let probs = [
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("lambda", self.lambda),
            ("tau_m", self.tau_m),
            ("tau_xy", self.tau_xy),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.m_to_m() < -PROB_TOL {
            return bad(format!("1 - 2 delta - tau_m = {} negative", self.m_to_m()));
        }
        if self.g_to_m() < -PROB_TOL {
            return bad(format!(
                "1 - epsilon - lambda - tau_xy = {} negative",
                self.g_to_m()
            ));
        }
        // Row sums are 1 by construction of the remainder terms; the
        // emission tables carry the real normalization burden.
        let n = self.alphabet.len();
        let mut upper = 0.0;
        for i in 0..n {
            for j in i..n {
                let v = self.match_emit[i * n + j];
                if v < 0.0 {
                    return bad(format!("negative match emission at ({i}, {j})"));
                }
                if self.match_emit[i * n + j] != self.match_emit[j * n + i] {
                    return bad("match emissions not symmetric".into());
                }
                upper += v;
            }
        }
        if (upper - 1.0).abs() > PROB_TOL {
            return bad(format!("match emission upper triangle sums to {upper}"));
        }
        let gap_sum: f64 = self.gap_emit.iter().sum();
        if self.gap_emit.iter().any(|&v| v < 0.0) || (gap_sum - 1.0).abs() > PROB_TOL {
            return bad(format!("gap emissions sum to {gap_sum}"));
        }
        Ok(())
    }

    pub fn alphabet(&self) -> &[Segment] {
        &self.alphabet
    }

    /// M→M (and Begin→M): the row remainder.
    pub fn m_to_m(&self) -> f64 {
        1.0 - 2.0 * self.delta - self.tau_m
    }

    /// X→M and Y→M: the gap-row remainder.
    pub fn g_to_m(&self) -> f64 {
        1.0 - self.epsilon - self.lambda - self.tau_xy
    }

    fn idx(&self, s: Segment) -> Result<usize, PhmmError> {
        let i = self.index[s.as_byte() as usize];
        if i == u16::MAX {
            Err(PhmmError::UnknownSegment(s))
        } else {
            Ok(i as usize)
        }
    }

    pub fn match_prob(&self, a: Segment, b: Segment) -> Result<f64, PhmmError> {
        Ok(self.match_emit[self.idx(a)? * self.alphabet.len() + self.idx(b)?])
    }

    pub fn gap_prob(&self, s: Segment) -> Result<f64, PhmmError> {
        Ok(self.gap_emit[self.idx(s)?])
    }

    fn contains(&self, s: Segment) -> bool {
        self.index[s.as_byte() as usize] != u16::MAX
    }

    fn check_words(&self, x: &[Segment], y: &[Segment]) -> Result<(), PhmmError> {
        for &s in x.iter().chain(y) {
            if !self.contains(s) {
                return Err(PhmmError::UnknownSegment(s));
            }
        }
        Ok(())
    }

    /// Grow the alphabet for out-of-family scoring: new segments take the
    /// smallest existing match / gap masses, then both tables renormalize.
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
        let floor_match = self
            .match_emit
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        let floor_gap = self
            .gap_emit
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
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
        let mut match_emit = vec![floor_match; n * n];
        let mut gap_emit = vec![floor_gap; n];
        for (i, &a) in alphabet.iter().enumerate() {
            if let Ok(q) = self.gap_prob(a) {
                gap_emit[i] = q;
            }
            for (j, &b) in alphabet.iter().enumerate() {
                if let Ok(p) = self.match_prob(a, b) {
                    match_emit[i * n + j] = p;
                }
            }
        }
        let upper: f64 = (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j)))
            .map(|(i, j)| match_emit[i * n + j])
            .sum();
        for v in &mut match_emit {
            *v /= upper;
        }
        let gap_sum: f64 = gap_emit.iter().sum();
        for v in &mut gap_emit {
            *v /= gap_sum;
        }
        let added = new.len();
        *self = PhmmParams::new(
            alphabet,
            self.delta,
            self.epsilon,
            self.lambda,
            self.tau_m,
            self.tau_xy,
            match_emit,
            gap_emit,
        )
        .expect("renormalized extension stays valid");
        added
    }
}

/// Random-word null model: each pair is two independent sequences whose
/// lengths follow a geometric stop rule with `iota = 1/((n+m)/2 + 1)` and
/// whose segments are drawn from the equilibrium frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct NullModel {
    alphabet: Vec<Segment>,
    index: Box<[u16; 256]>,
    freqs: Vec<f64>,
}

impl NullModel {
    pub fn new(alphabet: Vec<Segment>, freqs: Vec<f64>) -> Result<NullModel, PhmmError> {
        if alphabet.len() != freqs.len() || alphabet.is_empty() {
            return Err(PhmmError::InvalidParams(
                "null model needs one frequency per segment".into(),
            ));
        }
        for w in alphabet.windows(2) {
            if w[1] <= w[0] {
                return Err(PhmmError::InvalidParams(
                    "alphabet must be sorted and duplicate-free".into(),
                ));
            }
        }
        let sum: f64 = freqs.iter().sum();
        if freqs.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > PROB_TOL {
            return Err(PhmmError::InvalidParams(format!(
                "equilibrium frequencies must be positive and sum to 1, got {sum}"
            )));
        }
        let mut index = Box::new([u16::MAX; 256]);
        for (i, s) in alphabet.iter().enumerate() {
            index[s.as_byte() as usize] = i as u16;
        }
        Ok(NullModel {
            alphabet,
            index,
            freqs,
        })
    }

    /// Smoothed segment relative frequencies over the training pairs.
    pub fn from_pairs(pairs: &TrainingPairSet, pseudocount: f64) -> Result<NullModel, PhmmError> {
        if pairs.is_empty() {
            return Err(PhmmError::EmptyInput);
        }
        let alphabet = pairs.alphabet();
        let mut counts = vec![0.0f64; alphabet.len()];
        let mut total = 0.0;
        for (a, b) in &pairs.pairs {
            for &s in a.iter().chain(b) {
                let i = alphabet.binary_search(&s).expect("alphabet is the union");
                counts[i] += 1.0;
                total += 1.0;
            }
        }
        let denom = total + pseudocount * alphabet.len() as f64;
        let freqs = counts.iter().map(|c| (c + pseudocount) / denom).collect();
        NullModel::new(alphabet, freqs)
    }

    pub fn alphabet(&self) -> &[Segment] {
        &self.alphabet
    }

    pub fn freq(&self, s: Segment) -> Result<f64, PhmmError> {
        let i = self.index[s.as_byte() as usize];
        if i == u16::MAX {
            Err(PhmmError::UnknownSegment(s))
        } else {
            Ok(self.freqs[i as usize])
        }
    }

    pub fn extend_alphabet(&mut self, extra: &[Segment]) -> usize {
        let mut new: Vec<Segment> = extra
            .iter()
            .copied()
            .filter(|&s| self.index[s.as_byte() as usize] == u16::MAX)
            .collect();
        new.sort();
        new.dedup();
        if new.is_empty() {
            return 0;
        }
        let floor = self.freqs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut alphabet: Vec<Segment> = self
            .alphabet
            .iter()
            .copied()
            .chain(new.iter().copied())
            .collect();
        alphabet.sort();
        let mut freqs = Vec::with_capacity(alphabet.len());
        for &s in &alphabet {
            freqs.push(self.freq(s).unwrap_or(floor));
        }
        let sum: f64 = freqs.iter().sum();
        for f in &mut freqs {
            *f /= sum;
        }
        let added = new.len();
        *self = NullModel::new(alphabet, freqs).expect("renormalized extension stays valid");
        added
    }
}

/// A trained scorer: structural parameters plus the null model they are
/// compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct PhmmModel {
    pub params: PhmmParams,
    pub null: NullModel,
}

impl PhmmModel {
    pub fn extend_alphabet(&mut self, extra: &[Segment]) -> usize {
        let a = self.params.extend_alphabet(extra);
        let b = self.null.extend_alphabet(extra);
        a.max(b)
    }
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

struct LogTrans {
    mm: f64,
    gm: f64,
    delta: f64,
    eps: f64,
    lambda: f64,
    tau_m: f64,
    tau_xy: f64,
}

impl LogTrans {
    fn of(p: &PhmmParams) -> LogTrans {
        LogTrans {
            mm: p.m_to_m().max(0.0).ln(),
            gm: p.g_to_m().max(0.0).ln(),
            delta: p.delta.ln(),
            eps: p.epsilon.ln(),
            lambda: p.lambda.ln(),
            tau_m: p.tau_m.ln(),
            tau_xy: p.tau_xy.ln(),
        }
    }
}

struct Tables {
    n: usize,
    m: usize,
    /// Flattened (n+1) x (m+1) per state.
    am: Vec<f64>,
    ax: Vec<f64>,
    ay: Vec<f64>,
}

fn forward_tables(x: &[usize], y: &[usize], p: &PhmmParams, lt: &LogTrans) -> Tables {
    let (n, m) = (x.len(), y.len());
    let w = m + 1;
    let na = p.alphabet.len();
    let neg = f64::NEG_INFINITY;
    let mut am = vec![neg; (n + 1) * w];
    let mut ax = vec![neg; (n + 1) * w];
    let mut ay = vec![neg; (n + 1) * w];
    am[0] = 0.0;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let at = i * w + j;
            if i >= 1 && j >= 1 {
                let prev = (i - 1) * w + (j - 1);
                let e = p.match_emit[x[i - 1] * na + y[j - 1]].ln();
                am[at] = lse3(am[prev] + lt.mm, ax[prev] + lt.gm, ay[prev] + lt.gm) + e;
            }
            if i >= 1 {
                let prev = (i - 1) * w + j;
                let e = p.gap_emit[x[i - 1]].ln();
                ax[at] = lse3(am[prev] + lt.delta, ax[prev] + lt.eps, ay[prev] + lt.lambda) + e;
            }
            if j >= 1 {
                let prev = i * w + (j - 1);
                let e = p.gap_emit[y[j - 1]].ln();
                ay[at] = lse3(am[prev] + lt.delta, ax[prev] + lt.lambda, ay[prev] + lt.eps) + e;
            }
        }
    }
    Tables { n, m, am, ax, ay }
}

fn backward_tables(x: &[usize], y: &[usize], p: &PhmmParams, lt: &LogTrans) -> Tables {
    let (n, m) = (x.len(), y.len());
    let w = m + 1;
    let na = p.alphabet.len();
    let neg = f64::NEG_INFINITY;
    let mut bm = vec![neg; (n + 1) * w];
    let mut bx = vec![neg; (n + 1) * w];
    let mut by = vec![neg; (n + 1) * w];
    bm[n * w + m] = lt.tau_m;
    bx[n * w + m] = lt.tau_xy;
    by[n * w + m] = lt.tau_xy;
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            if i == n && j == m {
                continue;
            }
            let at = i * w + j;
            let to_m = if i < n && j < m {
                p.match_emit[x[i] * na + y[j]].ln() + bm[(i + 1) * w + (j + 1)]
            } else {
                neg
            };
            let to_x = if i < n {
                p.gap_emit[x[i]].ln() + bx[(i + 1) * w + j]
            } else {
                neg
            };
            let to_y = if j < m {
                p.gap_emit[y[j]].ln() + by[i * w + (j + 1)]
            } else {
                neg
            };
            bm[at] = lse3(lt.mm + to_m, lt.delta + to_x, lt.delta + to_y);
            bx[at] = lse3(lt.gm + to_m, lt.eps + to_x, lt.lambda + to_y);
            by[at] = lse3(lt.gm + to_m, lt.lambda + to_x, lt.eps + to_y);
        }
    }
    Tables {
        n,
        m,
        am: bm,
        ax: bx,
        ay: by,
    }
}

fn to_indices(word: &[Segment], p: &PhmmParams) -> Result<Vec<usize>, PhmmError> {
    word.iter().map(|&s| p.idx(s)).collect()
}

/// Log-probability of the pair under the model, summed over every state
/// path from Begin to End.
pub fn forward(x: &[Segment], y: &[Segment], p: &PhmmParams) -> Result<f64, PhmmError> {
    p.check_words(x, y)?;
    let (xi, yi) = (to_indices(x, p)?, to_indices(y, p)?);
    let lt = LogTrans::of(p);
    let t = forward_tables(&xi, &yi, p, &lt);
    let end = t.n * (t.m + 1) + t.m;
    Ok(lse3(
        t.am[end] + lt.tau_m,
        t.ax[end] + lt.tau_xy,
        t.ay[end] + lt.tau_xy,
    ))
}

/// Highest-probability single state path, decoded as an alignment whose
/// score is the path log-probability. Ties prefer M, then X, then Y.
pub fn viterbi(
    x: &[Segment],
    y: &[Segment],
    p: &PhmmParams,
) -> Result<(Alignment, f64), PhmmError> {
    p.check_words(x, y)?;
    let (xi, yi) = (to_indices(x, p)?, to_indices(y, p)?);
    let lt = LogTrans::of(p);
    let (n, m) = (xi.len(), yi.len());
    let w = m + 1;
    let na = p.alphabet.len();
    let neg = f64::NEG_INFINITY;
    let mut vm = vec![neg; (n + 1) * w];
    let mut vx = vec![neg; (n + 1) * w];
    let mut vy = vec![neg; (n + 1) * w];
    let mut tm = vec![0u8; (n + 1) * w];
    let mut tx = vec![0u8; (n + 1) * w];
    let mut ty = vec![0u8; (n + 1) * w];
    vm[0] = 0.0;

    // Prefers M, then X, then Y on ties.
    let pick = |m: f64, x: f64, y: f64| -> (u8, f64) {
        if m >= x && m >= y {
            (0, m)
        } else if x >= y {
            (1, x)
        } else {
            (2, y)
        }
    };

    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let at = i * w + j;
            if i >= 1 && j >= 1 {
                let prev = (i - 1) * w + (j - 1);
                let (from, best) = pick(vm[prev] + lt.mm, vx[prev] + lt.gm, vy[prev] + lt.gm);
                vm[at] = best + p.match_emit[xi[i - 1] * na + yi[j - 1]].ln();
                tm[at] = from;
            }
            if i >= 1 {
                let prev = (i - 1) * w + j;
                let (from, best) =
                    pick(vm[prev] + lt.delta, vx[prev] + lt.eps, vy[prev] + lt.lambda);
                vx[at] = best + p.gap_emit[xi[i - 1]].ln();
                tx[at] = from;
            }
            if j >= 1 {
                let prev = i * w + (j - 1);
                let (from, best) =
                    pick(vm[prev] + lt.delta, vx[prev] + lt.lambda, vy[prev] + lt.eps);
                vy[at] = best + p.gap_emit[yi[j - 1]].ln();
                ty[at] = from;
            }
        }
    }

    let end = n * w + m;
    let (mut lane, best) = pick(vm[end] + lt.tau_m, vx[end] + lt.tau_xy, vy[end] + lt.tau_xy);
    let mut columns = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let at = i * w + j;
        match lane {
            0 => {
                columns.push(Column::Pair(x[i - 1], y[j - 1]));
                lane = tm[at];
                i -= 1;
                j -= 1;
            }
            1 => {
                columns.push(Column::GapBottom(x[i - 1]));
                lane = tx[at];
                i -= 1;
            }
            _ => {
                columns.push(Column::GapTop(y[j - 1]));
                lane = ty[at];
                j -= 1;
            }
        }
    }
    columns.reverse();
    Ok((
        Alignment {
            columns,
            score: best,
        },
        best,
    ))
}

/// Log-probability of one explicit path, summed in the same order the
/// Viterbi recursion uses, so a decoded path reproduces its reported
/// score exactly.
pub fn score_alignment(al: &Alignment, p: &PhmmParams) -> Result<f64, PhmmError> {
    let lt = LogTrans::of(p);
    // 0 = M (Begin shares its row), 1 = X, 2 = Y.
    let mut state = 0u8;
    let mut acc = 0.0f64;
    for col in &al.columns {
        let (next, emit) = match *col {
            Column::Pair(a, b) => (0u8, p.match_prob(a, b)?),
            Column::GapBottom(s) => (1, p.gap_prob(s)?),
            Column::GapTop(s) => (2, p.gap_prob(s)?),
        };
        let trans = match (state, next) {
            (0, 0) => lt.mm,
            (0, _) => lt.delta,
            (1, 0) | (2, 0) => lt.gm,
            (1, 1) | (2, 2) => lt.eps,
            _ => lt.lambda,
        };
        acc += trans;
        acc += emit.ln();
        state = next;
    }
    acc += if state == 0 { lt.tau_m } else { lt.tau_xy };
    Ok(acc)
}

/// Pure Eq.-2 style null: geometric length mass and independent segment
/// draws, `iota = 1/((n+m)/2 + 1)` with the mean taken as a real number.
pub fn null_logprob(x: &[Segment], y: &[Segment], nm: &NullModel) -> Result<f64, PhmmError> {
    if x.is_empty() && y.is_empty() {
        return Err(PhmmError::InvalidParams(
            "null model needs a nonempty pair".into(),
        ));
    }
    let total = (x.len() + y.len()) as f64;
    let iota = 1.0 / (total / 2.0 + 1.0);
    let mut lp = 2.0 * iota.ln() + total * (1.0 - iota).ln();
    for &s in x.iter().chain(y) {
        lp += nm.freq(s)?.ln();
    }
    Ok(lp)
}

/// Log-odds of the pair: forward log-probability minus the null.
pub fn phmm_score(
    x: &[Segment],
    y: &[Segment],
    p: &PhmmParams,
    nm: &NullModel,
) -> Result<f64, PhmmError> {
    Ok(forward(x, y, p)? - null_logprob(x, y, nm)?)
}

/// Sigmoid transform of the log-odds score onto (0, 1), like the PMI
/// distance: score 0 maps to 0.5, high scores approach 0.
pub fn phmm_distance(
    x: &[Segment],
    y: &[Segment],
    p: &PhmmParams,
    nm: &NullModel,
) -> Result<f64, PhmmError> {
    Ok(sigmoid_distance(phmm_score(x, y, p, nm)?))
}

/// Expected sufficient statistics of one E-step.
#[derive(Clone)]
struct Counts {
    mm: f64,
    mx: f64,
    my: f64,
    me: f64,
    gm: f64,
    gg: f64,
    cross: f64,
    ge: f64,
    match_cells: Vec<f64>,
    gap_cells: Vec<f64>,
}

impl Counts {
    fn zero(n: usize) -> Counts {
        Counts {
            mm: 0.0,
            mx: 0.0,
            my: 0.0,
            me: 0.0,
            gm: 0.0,
            gg: 0.0,
            cross: 0.0,
            ge: 0.0,
            match_cells: vec![0.0; n * n],
            gap_cells: vec![0.0; n],
        }
    }

    /// Unit-mass statistics whose M-step reproduces `p` exactly. Seeding
    /// the online runner with these keeps every event positive through
    /// the blend, so early sparse minibatches cannot zero out cells they
    /// happen not to touch.
    fn from_params(p: &PhmmParams) -> Counts {
        let n = p.alphabet.len();
        let mut c = Counts::zero(n);
        c.mm = p.m_to_m();
        c.mx = p.delta;
        c.my = p.delta;
        c.me = p.tau_m;
        c.gm = p.g_to_m();
        c.gg = p.epsilon;
        c.cross = p.lambda;
        c.ge = p.tau_xy;
        for i in 0..n {
            for j in i..n {
                c.match_cells[i * n + j] = p.match_emit[i * n + j];
            }
        }
        c.gap_cells.copy_from_slice(&p.gap_emit);
        c
    }

    fn scale(&mut self, by: f64) {
        self.mm *= by;
        self.mx *= by;
        self.my *= by;
        self.me *= by;
        self.gm *= by;
        self.gg *= by;
        self.cross *= by;
        self.ge *= by;
        for v in self.match_cells.iter_mut().chain(&mut self.gap_cells) {
            *v *= by;
        }
    }

    fn blend(&mut self, s: &Counts, rate: f64) {
        let keep = 1.0 - rate;
        self.mm = keep * self.mm + rate * s.mm;
        self.mx = keep * self.mx + rate * s.mx;
        self.my = keep * self.my + rate * s.my;
        self.me = keep * self.me + rate * s.me;
        self.gm = keep * self.gm + rate * s.gm;
        self.gg = keep * self.gg + rate * s.gg;
        self.cross = keep * self.cross + rate * s.cross;
        self.ge = keep * self.ge + rate * s.ge;
        for (a, b) in self.match_cells.iter_mut().zip(&s.match_cells) {
            *a = keep * *a + rate * b;
        }
        for (a, b) in self.gap_cells.iter_mut().zip(&s.gap_cells) {
            *a = keep * *a + rate * b;
        }
    }
}

/// Accumulate expected counts for one pair; returns its log-likelihood.
fn accumulate_pair(
    x: &[usize],
    y: &[usize],
    p: &PhmmParams,
    lt: &LogTrans,
    counts: &mut Counts,
) -> Result<f64, PhmmError> {
    let (n, m) = (x.len(), y.len());
    let w = m + 1;
    let na = p.alphabet.len();
    let fwd = forward_tables(x, y, p, lt);
    let bwd = backward_tables(x, y, p, lt);
    let end = n * w + m;
    let lp = lse3(
        fwd.am[end] + lt.tau_m,
        fwd.ax[end] + lt.tau_xy,
        fwd.ay[end] + lt.tau_xy,
    );
    if !lp.is_finite() {
        return Err(PhmmError::NumericalUnderflow { pair_index: 0 });
    }

    for i in 0..=n {
        for j in 0..=m {
            let at = i * w + j;
            // Emissions: state occupancy at (i, j).
            if i >= 1 && j >= 1 {
                let g = (fwd.am[at] + bwd.am[at] - lp).exp();
                counts.match_cells[x[i - 1] * na + y[j - 1]] += g;
            }
            if i >= 1 {
                counts.gap_cells[x[i - 1]] += (fwd.ax[at] + bwd.ax[at] - lp).exp();
            }
            if j >= 1 {
                counts.gap_cells[y[j - 1]] += (fwd.ay[at] + bwd.ay[at] - lp).exp();
            }
            // Transitions out of (i, j).
            if i < n && j < m {
                let e = p.match_emit[x[i] * na + y[j]].ln();
                let to = (i + 1) * w + (j + 1);
                counts.mm += (fwd.am[at] + lt.mm + e + bwd.am[to] - lp).exp();
                counts.gm += (fwd.ax[at] + lt.gm + e + bwd.am[to] - lp).exp();
                counts.gm += (fwd.ay[at] + lt.gm + e + bwd.am[to] - lp).exp();
            }
            if i < n {
                let e = p.gap_emit[x[i]].ln();
                let to = (i + 1) * w + j;
                counts.mx += (fwd.am[at] + lt.delta + e + bwd.ax[to] - lp).exp();
                counts.gg += (fwd.ax[at] + lt.eps + e + bwd.ax[to] - lp).exp();
                counts.cross += (fwd.ay[at] + lt.lambda + e + bwd.ax[to] - lp).exp();
            }
            if j < m {
                let e = p.gap_emit[y[j]].ln();
                let to = i * w + (j + 1);
                counts.my += (fwd.am[at] + lt.delta + e + bwd.ay[to] - lp).exp();
                counts.cross += (fwd.ax[at] + lt.lambda + e + bwd.ay[to] - lp).exp();
                counts.gg += (fwd.ay[at] + lt.eps + e + bwd.ay[to] - lp).exp();
            }
        }
    }
    counts.me += (fwd.am[end] + lt.tau_m - lp).exp();
    counts.ge += (fwd.ax[end] + lt.tau_xy - lp).exp();
    counts.ge += (fwd.ay[end] + lt.tau_xy - lp).exp();
    Ok(lp)
}

/// Tied M-step. Groups with no mass keep their previous parameters.
fn m_step(counts: &Counts, prev: &PhmmParams) -> Result<PhmmParams, PhmmError> {
    let n = prev.alphabet.len();
    let t_m = counts.mm + counts.mx + counts.my + counts.me;
    let (delta, tau_m) = if t_m > 0.0 {
        ((counts.mx + counts.my) / (2.0 * t_m), counts.me / t_m)
    } else {
        (prev.delta, prev.tau_m)
    };
    let t_g = counts.gm + counts.gg + counts.cross + counts.ge;
    let (epsilon, lambda, tau_xy) = if t_g > 0.0 {
        (counts.gg / t_g, counts.cross / t_g, counts.ge / t_g)
    } else {
        (prev.epsilon, prev.lambda, prev.tau_xy)
    };

    let mut match_emit = vec![0.0; n * n];
    let mut upper = 0.0;
    for i in 0..n {
        for j in i..n {
            let u = if i == j {
                counts.match_cells[i * n + i]
            } else {
                counts.match_cells[i * n + j] + counts.match_cells[j * n + i]
            };
            match_emit[i * n + j] = u;
            match_emit[j * n + i] = u;
            upper += u;
        }
    }
    if upper > 0.0 {
        for v in &mut match_emit {
            *v /= upper;
        }
    } else {
        match_emit = prev.match_emit.clone();
    }

    let gap_total: f64 = counts.gap_cells.iter().sum();
    let gap_emit = if gap_total > 0.0 {
        counts.gap_cells.iter().map(|c| c / gap_total).collect()
    } else {
        prev.gap_emit.clone()
    };

    PhmmParams::new(
        prev.alphabet.clone(),
        delta,
        epsilon,
        lambda,
        tau_m,
        tau_xy,
        match_emit,
        gap_emit,
    )
}

/// Training result: final parameters plus the log-likelihood trace, one
/// entry per batch iteration (or per online update), each evaluated under
/// the parameters in force before that update.
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchFit {
    pub params: PhmmParams,
    pub loglik: Vec<f64>,
}

/// Classic Baum-Welch: expected counts over all pairs, renormalize,
/// repeat until total log-likelihood gains less than `tol` or `max_iter`
/// rounds pass. The trace is non-decreasing up to numerical noise.
pub fn baum_welch_batch(
    pairs: &TrainingPairSet,
    init: &PhmmParams,
    max_iter: usize,
    tol: f64,
) -> Result<BaumWelchFit, PhmmError> {
    if pairs.is_empty() {
        return Err(PhmmError::EmptyInput);
    }
    init.validate()?;
    let mut params = init.clone();
    let mut loglik = Vec::new();
    for iter in 0..max_iter.max(1) {
        let lt = LogTrans::of(&params);
        let mut counts = Counts::zero(params.alphabet.len());
        let mut total = 0.0;
        for (k, (a, b)) in pairs.pairs.iter().enumerate() {
            let (xi, yi) = (to_indices(a, &params)?, to_indices(b, &params)?);
            total += accumulate_pair(&xi, &yi, &params, &lt, &mut counts)
                .map_err(|_| PhmmError::NumericalUnderflow { pair_index: k })?;
        }
        log::debug!("batch iteration {iter}: log-likelihood {total:.6}");
        loglik.push(total);
        params = m_step(&counts, &params)?;
        params.validate()?;
        if iter >= 1 && loglik[iter] - loglik[iter - 1] < tol {
            break;
        }
    }
    Ok(BaumWelchFit { params, loglik })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub m: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            m: 512,
            alpha: 0.55,
            epochs: 5,
            seed: 42,
        }
    }
}

/// Stepwise Baum-Welch: per minibatch, expected counts are averaged per
/// pair, blended into the running statistics with rate `(t+2)^-alpha`
/// (t counting updates globally), and the M-step renormalizes. The first
/// minibatch is scored under `init`.
pub fn baum_welch_online(
    pairs: &TrainingPairSet,
    init: &PhmmParams,
    cfg: &OnlineConfig,
) -> Result<BaumWelchFit, PhmmError> {
    if pairs.is_empty() {
        return Err(PhmmError::EmptyInput);
    }
    if cfg.m == 0 {
        return Err(PhmmError::BadConfig(
            "minibatch size must be at least 1".into(),
        ));
    }
    if !(0.5..=1.0).contains(&cfg.alpha) {
        return Err(PhmmError::BadConfig(format!(
            "alpha = {} outside [0.5, 1.0]",
            cfg.alpha
        )));
    }
    if cfg.epochs == 0 {
        return Err(PhmmError::BadConfig("epochs must be at least 1".into()));
    }
    init.validate()?;

    let n = init.alphabet.len();
    let mut params = init.clone();
    let mut running = Counts::from_params(init);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut t = 0usize;
    let mut loglik = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.m) {
            let lt = LogTrans::of(&params);
            let mut batch = Counts::zero(n);
            let mut total = 0.0;
            for &k in chunk {
                let (a, b) = &pairs.pairs[k];
                let (xi, yi) = (to_indices(a, &params)?, to_indices(b, &params)?);
                total += accumulate_pair(&xi, &yi, &params, &lt, &mut batch)
                    .map_err(|_| PhmmError::NumericalUnderflow { pair_index: k })?;
            }
            batch.scale(1.0 / chunk.len() as f64);
            let rate = ((t + 2) as f64).powf(-cfg.alpha);
            running.blend(&batch, rate);
            params = m_step(&running, &params)?;
            params.validate()?;
            loglik.push(total);
            t += 1;
        }
        log::debug!(
            "epoch {epoch}: {t} updates, last minibatch log-likelihood {:.6}",
            loglik.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(BaumWelchFit { params, loglik })
}

/// Default transition starting point plus data-informed emissions: match
/// emissions from smoothed +1/-1 alignment co-occurrences, gap emissions
/// from smoothed unigram frequencies.
pub fn init_params(
    pairs: &TrainingPairSet,
    vanilla_gap: f64,
    pseudocount: f64,
) -> Result<PhmmParams, PhmmError> {
    if pairs.is_empty() {
        return Err(PhmmError::EmptyInput);
    }
    let alphabet = pairs.alphabet();
    let n = alphabet.len();
    let mut match_counts = vec![0.0f64; n * n];
    let mut uni = vec![0.0f64; n];
    let mut uni_total = 0.0;
    let pos = |s: Segment| alphabet.binary_search(&s).expect("alphabet is the union");
    for (a, b) in &pairs.pairs {
        for (pa, pb) in extract_aligned_pairs(&nw_vanilla(a, b, vanilla_gap)) {
            let (i, j) = (pos(pa), pos(pb));
            match_counts[i * n + j] += 1.0;
            if i != j {
                match_counts[j * n + i] += 1.0;
            }
        }
        for &s in a.iter().chain(b) {
            uni[pos(s)] += 1.0;
            uni_total += 1.0;
        }
    }

    let mut upper_total = 0.0;
    for i in 0..n {
        for j in i..n {
            upper_total += match_counts[i * n + j] + pseudocount;
        }
    }
    let mut match_emit = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (match_counts[i * n + j] + pseudocount) / upper_total;
            match_emit[i * n + j] = v;
            match_emit[j * n + i] = v;
        }
    }
    let gap_denom = uni_total + pseudocount * n as f64;
    let gap_emit: Vec<f64> = uni.iter().map(|c| (c + pseudocount) / gap_denom).collect();

    PhmmParams::new(alphabet, 0.1, 0.2, 0.05, 0.05, 0.05, match_emit, gap_emit)
}

/// Round a distribution to ten decimals, folding the rounding residual
/// into its largest entry so the written block still sums to one. The
/// adjustment is below one quantum once a block has been through this
/// once, so rewriting a loaded file reproduces it byte for byte.
fn quantize_block(values: &[f64]) -> Vec<f64> {
    let grid = |v: f64| -> f64 { format!("{v:.10}").parse().expect("own format") };
    let mut q: Vec<f64> = values.iter().map(|&v| grid(v)).collect();
    let sum: f64 = q.iter().sum();
    let top = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty block");
    q[top] = grid(q[top] + (1.0 - sum));
    q
}

/// Render params and null model in the tab-separated text layout at ten
/// decimals: transition block, `#MATCH` upper triangle, `#GAP`, `#FREQ`.
pub fn write_phmm(model: &PhmmModel) -> String {
    let p = &model.params;
    let n = p.alphabet.len();
    let mut out = String::new();
    out.push_str(&format!("delta\t{:.10}\n", p.delta));
    out.push_str(&format!("epsilon\t{:.10}\n", p.epsilon));
    out.push_str(&format!("lambda\t{:.10}\n", p.lambda));
    out.push_str(&format!("tau_m\t{:.10}\n", p.tau_m));
    out.push_str(&format!("tau_xy\t{:.10}\n", p.tau_xy));

    let upper: Vec<f64> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| p.match_emit[i * n + j])
        .collect();
    let upper = quantize_block(&upper);
    out.push_str("#MATCH\n");
    let mut cell = upper.iter();
    for (i, &a) in p.alphabet.iter().enumerate() {
        for &b in &p.alphabet[i..] {
            out.push_str(&format!(
                "{a}\t{b}\t{:.10}\n",
                cell.next().expect("one per cell")
            ));
        }
    }

    out.push_str("#GAP\n");
    for (&a, q) in p.alphabet.iter().zip(quantize_block(&p.gap_emit)) {
        out.push_str(&format!("{a}\t{q:.10}\n"));
    }
    out.push_str("#FREQ\n");
    for (&a, q) in model
        .null
        .alphabet
        .iter()
        .zip(quantize_block(&model.null.freqs))
    {
        out.push_str(&format!("{a}\t{q:.10}\n"));
    }
    out
}

pub fn save_phmm(model: &PhmmModel, path: &Path) -> Result<(), PhmmError> {
    std::fs::write(path, write_phmm(model))?;
    Ok(())
}

/// Parse the layout written by [`write_phmm`]. The writer keeps each
/// block summing to one at file precision, so parsed values are taken
/// as-is and must pass the usual structural validation.
pub fn parse_phmm(text: &str) -> Result<PhmmModel, PhmmError> {
    let bad = |line: usize, msg: &str| PhmmError::ModelFormat {
        line,
        msg: msg.to_string(),
    };
    #[derive(PartialEq)]
    enum Section {
        Trans,
        Match,
        Gap,
        Freq,
    }
    let mut section = Section::Trans;
    let mut trans: std::collections::HashMap<String, f64> = Default::default();
    let mut matches: Vec<(Segment, Segment, f64)> = Vec::new();
    let mut gaps: Vec<(Segment, f64)> = Vec::new();
    let mut freqs: Vec<(Segment, f64)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim_end_matches('\r');
        if l.is_empty() {
            continue;
        }
        match l {
            "#MATCH" => {
                section = Section::Match;
                continue;
            }
            "#GAP" => {
                section = Section::Gap;
                continue;
            }
            "#FREQ" => {
                section = Section::Freq;
                continue;
            }
            _ if l.starts_with('#') => continue,
            _ => {}
        }
        let fields: Vec<&str> = l.split('\t').collect();
        let seg = |f: &str| -> Result<Segment, PhmmError> {
            let mut cs = f.chars();
            let s = cs
                .next()
                .and_then(Segment::new)
                .ok_or_else(|| bad(line, "bad segment"))?;
            if cs.next().is_some() {
                return Err(bad(line, "bad segment"));
            }
            Ok(s)
        };
        let num =
            |f: &str| -> Result<f64, PhmmError> { f.parse().map_err(|_| bad(line, "bad number")) };
        match section {
            Section::Trans => {
                if fields.len() != 2 {
                    return Err(bad(line, "expected key\\tvalue"));
                }
                trans.insert(fields[0].to_string(), num(fields[1])?);
            }
            Section::Match => {
                if fields.len() != 3 {
                    return Err(bad(line, "expected seg1\\tseg2\\tprob"));
                }
                matches.push((seg(fields[0])?, seg(fields[1])?, num(fields[2])?));
            }
            Section::Gap => {
                if fields.len() != 2 {
                    return Err(bad(line, "expected seg\\tprob"));
                }
                gaps.push((seg(fields[0])?, num(fields[1])?));
            }
            Section::Freq => {
                if fields.len() != 2 {
                    return Err(bad(line, "expected seg\\tprob"));
                }
                freqs.push((seg(fields[0])?, num(fields[1])?));
            }
        }
    }

    let mut get = |key: &str| -> Result<f64, PhmmError> {
        trans
            .remove(key)
            .ok_or_else(|| bad(0, &format!("missing key {key}")))
    };
    let delta = get("delta")?;
    let epsilon = get("epsilon")?;
    let lambda = get("lambda")?;
    let tau_m = get("tau_m")?;
    let tau_xy = get("tau_xy")?;
    if let Some(key) = trans.keys().next() {
        return Err(bad(0, &format!("unknown key {key}")));
    }
    if gaps.is_empty() || matches.is_empty() || freqs.is_empty() {
        return Err(bad(0, "missing #MATCH, #GAP or #FREQ section"));
    }

    let mut alphabet: Vec<Segment> = gaps.iter().map(|&(s, _)| s).collect();
    alphabet.sort();
    alphabet.dedup();
    if alphabet.len() != gaps.len() {
        return Err(bad(0, "duplicate segment in #GAP"));
    }
    let n = alphabet.len();
    let pos = |s: Segment| -> Result<usize, PhmmError> {
        alphabet
            .binary_search(&s)
            .map_err(|_| bad(0, &format!("segment {s} missing from #GAP")))
    };
    let mut match_emit = vec![f64::NAN; n * n];
    for &(a, b, v) in &matches {
        let (i, j) = (pos(a)?, pos(b)?);
        if !match_emit[i * n + j].is_nan() && match_emit[i * n + j] != v {
            return Err(bad(0, "conflicting duplicate #MATCH cell"));
        }
        match_emit[i * n + j] = v;
        match_emit[j * n + i] = v;
    }
    if match_emit.iter().any(|v| v.is_nan()) {
        return Err(bad(0, "incomplete #MATCH triangle"));
    }
    let mut gap_emit = vec![0.0; n];
    for &(s, v) in &gaps {
        gap_emit[pos(s)?] = v;
    }

    let params = PhmmParams::new(
        alphabet, delta, epsilon, lambda, tau_m, tau_xy, match_emit, gap_emit,
    )?;

    let mut nalpha: Vec<Segment> = freqs.iter().map(|&(s, _)| s).collect();
    nalpha.sort();
    nalpha.dedup();
    if nalpha.len() != freqs.len() {
        return Err(bad(0, "duplicate segment in #FREQ"));
    }
    let mut f = vec![0.0; nalpha.len()];
    for &(s, v) in &freqs {
        f[nalpha.binary_search(&s).expect("from the same set")] = v;
    }
    let null = NullModel::new(nalpha, f)?;
    Ok(PhmmModel { params, null })
}

pub fn load_phmm(path: &Path) -> Result<PhmmModel, PhmmError> {
    parse_phmm(&std::fs::read_to_string(path)?)
}
