//! Desk-scale toolkit for studying when crosslingual structural priming
//! emerges in a bilingual autoregressive language model.
//!
//! The pipeline: ingest two monolingual corpora ([`corpus`]), train a shared
//! byte-level BPE tokenizer on a language-proportioned sample ([`tokenizer`]),
//! pre-train a small GPT-style model under an L1-then-L1+L2 curriculum
//! ([`lm`]), score prepositional-object vs double-object target sentences
//! after primes in the other language ([`priming`]), and test for a
//! prime-type x training-step interaction with a linear mixed-effects model
//! ([`stats`]).

pub mod corpus;
pub mod lm;
pub mod priming;
pub mod stats;
pub mod tokenizer;
pub mod util;

pub use tokenizer::TokenizerModel;
