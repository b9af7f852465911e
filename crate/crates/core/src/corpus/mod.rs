//! Word lists and the words inside them.
//!
//! A word list is a flat table of (doculect, concept, form) rows, optionally
//! carrying expert cognate-class labels. Forms are sequences of [`Segment`]s,
//! one printable ASCII byte per sound-class symbol. Two layouts are read:
//! the long tab-separated layout (one word per row) and the wide layout with
//! one column per concept, as found in ASJP-style exports.

mod synth;

pub use synth::{generate_family, SynthConfig, SynthError};

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::align;

/// One sound-class symbol. Only printable ASCII is allowed, minus `,`
/// (synonym separator) and `#` (comment leader).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Segment(u8);

impl Segment {
    pub fn new(c: char) -> Option<Segment> {
        match c {
            '!'..='~' if c != ',' && c != '#' => Some(Segment(c as u8)),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        self.0 as char
    }

    pub fn as_byte(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl fmt::Debug for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Segment({:?})", self.as_char())
    }
}

/// A form: the segment string of a single word.
pub type Form = Vec<Segment>;

/// Parse a bare segment string, e.g. a form cell already split on commas.
pub fn parse_form(s: &str) -> Result<Form, char> {
    s.chars().map(|c| Segment::new(c).ok_or(c)).collect()
}

pub fn form_to_string(form: &[Segment]) -> String {
    form.iter().map(|s| s.as_char()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub doculect: String,
    pub concept: String,
    pub form: Form,
    /// Expert cognate class, when the source list is labeled.
    pub gold_class: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: expected {expected} tab-separated fields, found {found}")]
    MalformedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: empty form for {doculect} / {concept}")]
    EmptyForm {
        line: usize,
        doculect: String,
        concept: String,
    },
    #[error("line {line}: segment {symbol:?} outside the allowed ASCII inventory")]
    IllegalSegment { line: usize, symbol: char },
    #[error("no header line found")]
    MissingHeader,
    #[error("line {line}: bad header, expected doculect/concept/form[/cog_class] columns")]
    BadHeader { line: usize },
}

/// An in-memory word list with stable iteration order.
///
/// Doculects and concepts keep their order of first appearance. Words keep
/// input order. Duplicate (doculect, concept, form) triples are dropped on
/// construction; identity of a word is that triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Wordlist {
    words: Vec<Word>,
    doculects: Vec<String>,
    concepts: Vec<String>,
    by_concept: Vec<Vec<usize>>,
}

impl Wordlist {
    pub fn from_words(words: Vec<Word>) -> Wordlist {
        let mut seen: HashSet<(String, String, Form)> = HashSet::new();
        let mut kept = Vec::with_capacity(words.len());
        let mut dropped = 0usize;
        for w in words {
            let key = (w.doculect.clone(), w.concept.clone(), w.form.clone());
            if seen.insert(key) {
                kept.push(w);
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} duplicate word(s)");
        }

        let mut doculects = Vec::new();
        let mut concepts = Vec::new();
        let mut concept_ids: HashMap<String, usize> = HashMap::new();
        let mut by_concept: Vec<Vec<usize>> = Vec::new();
        for (i, w) in kept.iter().enumerate() {
            if !doculects.contains(&w.doculect) {
                doculects.push(w.doculect.clone());
            }
            let cid = *concept_ids.entry(w.concept.clone()).or_insert_with(|| {
                concepts.push(w.concept.clone());
                by_concept.push(Vec::new());
                concepts.len() - 1
            });
            by_concept[cid].push(i);
        }
        Wordlist {
            words: kept,
            doculects,
            concepts,
            by_concept,
        }
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn doculects(&self) -> &[String] {
        &self.doculects
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn words_for_concept(&self, concept: &str) -> impl Iterator<Item = &Word> {
        let ids = self
            .concepts
            .iter()
            .position(|c| c == concept)
            .map(|cid| self.by_concept[cid].as_slice())
            .unwrap_or(&[]);
        ids.iter().map(|&i| &self.words[i])
    }

    /// Every segment type in the list, sorted ascending.
    pub fn alphabet(&self) -> Vec<Segment> {
        let mut set: Vec<Segment> = self
            .words
            .iter()
            .flat_map(|w| w.form.iter().copied())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort();
        set
    }

    pub fn has_gold(&self) -> bool {
        self.words.iter().any(|w| w.gold_class.is_some())
    }

    /// Serialize back to the long tab-separated layout. The cog_class column
    /// is present exactly when at least one word carries a label.
    pub fn to_tsv(&self) -> String {
        let labeled = self.has_gold();
        let mut out = String::new();
        out.push_str("doculect\tconcept\tform");
        if labeled {
            out.push_str("\tcog_class");
        }
        out.push('\n');
        for w in &self.words {
            out.push_str(&w.doculect);
            out.push('\t');
            out.push_str(&w.concept);
            out.push('\t');
            out.push_str(&form_to_string(&w.form));
            if labeled {
                out.push('\t');
                if let Some(g) = &w.gold_class {
                    out.push_str(g);
                }
            }
            out.push('\n');
        }
        out
    }
}

fn parse_form_cell(
    cell: &str,
    line: usize,
    doculect: &str,
    concept: &str,
    require_nonempty: bool,
) -> Result<Vec<Form>, CorpusError> {
    let mut forms = Vec::new();
    for syn in cell.split(',') {
        let syn = syn.trim();
        if syn.is_empty() {
            if require_nonempty {
                return Err(CorpusError::EmptyForm {
                    line,
                    doculect: doculect.to_string(),
                    concept: concept.to_string(),
                });
            }
            continue;
        }
        if syn == "XXX" {
            log::warn!("line {line}: skipping XXX placeholder for {doculect} / {concept}");
            continue;
        }
        match parse_form(syn) {
            Ok(f) => forms.push(f),
            Err(symbol) => return Err(CorpusError::IllegalSegment { line, symbol }),
        }
    }
    Ok(forms)
}

/// Parse the long layout: a `doculect\tconcept\tform[\tcog_class]` header,
/// then one word per line. `#` lines and blank lines are skipped, comma
/// cells are split into synonym words, `XXX` placeholders are dropped with
/// a warning, and an empty form cell is an error.
pub fn parse_wordlist(text: &str) -> Result<Wordlist, CorpusError> {
    let mut lines = numbered_lines(text);
    let (hline, header) = lines.next().ok_or(CorpusError::MissingHeader)?;
    let cols: Vec<&str> = header.split('\t').collect();
    let labeled = match cols.as_slice() {
        ["doculect", "concept", "form"] => false,
        ["doculect", "concept", "form", "cog_class"] => true,
        _ => return Err(CorpusError::BadHeader { line: hline }),
    };
    let expected = cols.len();

    let mut words = Vec::new();
    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != expected {
            return Err(CorpusError::MalformedRow {
                line,
                expected,
                found: fields.len(),
            });
        }
        let (doculect, concept) = (fields[0], fields[1]);
        let gold = if labeled {
            let g = fields[3].trim();
            (!g.is_empty()).then(|| g.to_string())
        } else {
            None
        };
        for form in parse_form_cell(fields[2], line, doculect, concept, true)? {
            words.push(Word {
                doculect: doculect.to_string(),
                concept: concept.to_string(),
                form,
                gold_class: gold.clone(),
            });
        }
    }
    Ok(Wordlist::from_words(words))
}

/// Parse the wide layout: first column doculect, one column per concept.
/// Empty and `XXX` cells mean the doculect has no attested word for that
/// concept and are skipped.
pub fn parse_wide_wordlist(text: &str) -> Result<Wordlist, CorpusError> {
    let mut lines = numbered_lines(text);
    let (_, header) = lines.next().ok_or(CorpusError::MissingHeader)?;
    let cols: Vec<&str> = header.split('\t').collect();
    let concepts: Vec<&str> = cols[1..].to_vec();
    let expected = cols.len();

    let mut words = Vec::new();
    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != expected {
            return Err(CorpusError::MalformedRow {
                line,
                expected,
                found: fields.len(),
            });
        }
        let doculect = fields[0];
        for (concept, cell) in concepts.iter().zip(&fields[1..]) {
            for form in parse_form_cell(cell, line, doculect, concept, false)? {
                words.push(Word {
                    doculect: doculect.to_string(),
                    concept: concept.to_string(),
                    form,
                    gold_class: None,
                });
            }
        }
    }
    Ok(Wordlist::from_words(words))
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Word pairs used to train a scoring model, with a note on where they
/// came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPairSet {
    pub pairs: Vec<(Form, Form)>,
    pub source: String,
}

impl TrainingPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every segment type across both sides of all pairs, sorted.
    pub fn alphabet(&self) -> Vec<Segment> {
        let mut set: Vec<Segment> = self
            .pairs
            .iter()
            .flat_map(|(a, b)| a.iter().chain(b).copied())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort();
        set
    }
}

/// Collect the probable cognates: cross-doculect word pairs sharing a
/// concept whose length-normalized edit distance is strictly below
/// `threshold`. Pairs come out sorted by (doculect, concept, form) of both
/// members, so downstream training sees a reproducible order.
pub fn extract_probable_cognates(wl: &Wordlist, threshold: f64) -> TrainingPairSet {
    type SortKey<'a> = (&'a str, &'a str, &'a [Segment]);
    let mut keyed: Vec<((&Word, &Word), SortKey, SortKey)> = Vec::new();
    for concept in wl.concepts() {
        let words: Vec<&Word> = wl.words_for_concept(concept).collect();
        for (i, a) in words.iter().enumerate() {
            for b in &words[i + 1..] {
                if a.doculect == b.doculect {
                    continue;
                }
                let d = align::ldn(&a.form, &b.form).expect("forms are nonempty");
                if d < threshold {
                    let ka = (a.doculect.as_str(), a.concept.as_str(), a.form.as_slice());
                    let kb = (b.doculect.as_str(), b.concept.as_str(), b.form.as_slice());
                    if ka <= kb {
                        keyed.push(((a, b), ka, kb));
                    } else {
                        keyed.push(((b, a), kb, ka));
                    }
                }
            }
        }
    }
    keyed.sort_by(|x, y| (x.1, x.2).cmp(&(y.1, y.2)));
    let pairs = keyed
        .into_iter()
        .map(|((a, b), _, _)| (a.form.clone(), b.form.clone()))
        .collect();
    TrainingPairSet {
        pairs,
        source: format!(
            "ldn<{threshold} over {} doculects, {} concepts",
            wl.doculects().len(),
            wl.concepts().len()
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form(s: &str) -> Form {
        parse_form(s).unwrap()
    }

    #[test]
    fn segment_accepts_printable_ascii_only() {
        assert!(Segment::new('a').is_some());
        assert!(Segment::new('!').is_some());
        assert!(Segment::new('~').is_some());
        assert!(Segment::new(',').is_none());
        assert!(Segment::new('#').is_none());
        assert!(Segment::new(' ').is_none());
        assert!(Segment::new('\t').is_none());
        assert!(Segment::new('é').is_none());
    }

    #[test]
    fn parses_long_layout() {
        let text = "doculect\tconcept\tform\n\
                    # a comment\n\
                    de\thand\thant\n\
                    en\thand\thand\n\
                    \n\
                    nl\thand\thant\n";
        let wl = parse_wordlist(text).unwrap();
        assert_eq!(wl.len(), 3);
        assert_eq!(wl.doculects(), ["de", "en", "nl"]);
        assert_eq!(wl.concepts(), ["hand"]);
        assert_eq!(wl.words()[0].form, form("hant"));
        assert!(!wl.has_gold());
    }

    #[test]
    fn splits_synonyms_and_skips_placeholders() {
        let text = "doculect\tconcept\tform\n\
                    de\tstone\tStaIn,fEls\n\
                    en\tstone\tXXX\n";
        let wl = parse_wordlist(text).unwrap();
        assert_eq!(wl.len(), 2);
        assert_eq!(wl.words()[0].form, form("StaIn"));
        assert_eq!(wl.words()[1].form, form("fEls"));
        assert_eq!(wl.doculects(), ["de"]);
    }

    #[test]
    fn reads_gold_classes() {
        let text = "doculect\tconcept\tform\tcog_class\n\
                    de\thand\thant\thand:A\n\
                    en\thand\thand\thand:A\n\
                    fr\thand\tm5\t\n";
        let wl = parse_wordlist(text).unwrap();
        assert_eq!(wl.words()[0].gold_class.as_deref(), Some("hand:A"));
        assert_eq!(wl.words()[2].gold_class, None);
        assert!(wl.has_gold());
    }

    #[test]
    fn empty_form_is_an_error() {
        let text = "doculect\tconcept\tform\nde\thand\t\n";
        let err = parse_wordlist(text).unwrap_err();
        assert_eq!(
            err,
            CorpusError::EmptyForm {
                line: 2,
                doculect: "de".into(),
                concept: "hand".into()
            }
        );
    }

    #[test]
    fn wrong_column_count_is_an_error() {
        let text = "doculect\tconcept\tform\nde\thant\n";
        let err = parse_wordlist(text).unwrap_err();
        assert_eq!(
            err,
            CorpusError::MalformedRow {
                line: 2,
                expected: 3,
                found: 2
            }
        );
    }

    #[test]
    fn rejects_illegal_segments_with_line_numbers() {
        let text = "doculect\tconcept\tform\nde\thand\thã t\n";
        match parse_wordlist(text).unwrap_err() {
            CorpusError::IllegalSegment { line: 2, .. } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_rows_collapse() {
        let text = "doculect\tconcept\tform\n\
                    de\thand\thant\n\
                    de\thand\thant\n";
        let wl = parse_wordlist(text).unwrap();
        assert_eq!(wl.len(), 1);
    }

    #[test]
    fn wide_layout_transposes() {
        let text = "doculect\thand\tstone\n\
                    de\thant\tStaIn,fEls\n\
                    en\thand\tXXX\n\
                    fr\tm5\t\n";
        let wl = parse_wide_wordlist(text).unwrap();
        assert_eq!(wl.concepts(), ["hand", "stone"]);
        assert_eq!(wl.len(), 5);
        let stones: Vec<_> = wl.words_for_concept("stone").collect();
        assert_eq!(stones.len(), 2);
        assert_eq!(stones[0].doculect, "de");
    }

    #[test]
    fn tsv_round_trip_is_identity() {
        let text = "doculect\tconcept\tform\tcog_class\n\
                    de\thand\thant\thand:A\n\
                    en\thand\thand\thand:A\n\
                    fr\thand\tm5\t\n";
        let wl = parse_wordlist(text).unwrap();
        let again = parse_wordlist(&wl.to_tsv()).unwrap();
        assert_eq!(wl, again);
    }

    #[test]
    fn alphabet_is_sorted_and_deduplicated() {
        let text = "doculect\tconcept\tform\nde\thand\tbaab\n";
        let wl = parse_wordlist(text).unwrap();
        assert_eq!(wl.alphabet(), form("ab"));
    }

    #[test]
    fn probable_cognates_respect_threshold_and_order() {
        let text = "doculect\tconcept\tform\n\
                    de\thand\thant\n\
                    en\thand\thand\n\
                    fr\thand\tm5\n\
                    de\tstone\tStaIn\n\
                    en\tstone\tstoUn\n";
        let wl = parse_wordlist(text).unwrap();
        let set = extract_probable_cognates(&wl, 0.5);
        // hant/hand (ldn 0.25) and StaIn/stoUn (ldn 0.6 is out), m5 too far.
        assert_eq!(set.pairs, vec![(form("hant"), form("hand"))]);

        // Sorted by the (doculect, concept, form) keys of both members.
        let all = extract_probable_cognates(&wl, 1.1);
        assert_eq!(
            all.pairs,
            vec![
                (form("hant"), form("hand")),
                (form("hant"), form("m5")),
                (form("StaIn"), form("stoUn")),
                (form("hand"), form("m5")),
            ]
        );
    }

    #[test]
    fn same_doculect_pairs_are_excluded() {
        let text = "doculect\tconcept\tform\n\
                    de\thand\thant\n\
                    de\thand\thand\n";
        let wl = parse_wordlist(text).unwrap();
        let set = extract_probable_cognates(&wl, 1.1);
        assert!(set.is_empty());
    }

    #[test]
    fn threshold_widening_only_adds_pairs() {
        let text = "doculect\tconcept\tform\n\
                    de\thand\thant\n\
                    en\thand\thand\n\
                    fr\thand\tm5\n";
        let wl = parse_wordlist(text).unwrap();
        let narrow = extract_probable_cognates(&wl, 0.3);
        let wide = extract_probable_cognates(&wl, 0.9);
        for p in &narrow.pairs {
            assert!(wide.pairs.contains(p));
        }
    }
}
