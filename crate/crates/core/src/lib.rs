//! Cognate detection in multilingual word lists.
//!
//! The library covers the full pipeline: reading word lists ([`corpus`]),
//! pairwise alignment ([`align`]), segment-weight learning by PMI ([`pmi`])
//! or by a pair hidden Markov model ([`phmm`]), flat clustering of the
//! resulting similarity graphs ([`cluster`]), and B-cubed evaluation against
//! expert cognacy judgements ([`eval`]).
//!
//! Words are sequences of single-byte segments (ASJP-style sound classes).
//! Every training entry point is deterministic for a fixed seed.

pub mod align;
pub mod cluster;
pub mod corpus;
pub mod eval;
pub mod phmm;
pub mod pmi;
