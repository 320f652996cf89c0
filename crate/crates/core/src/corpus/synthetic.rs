//! Synthetic bilingual corpora: two miniature languages with disjoint
//! lexica whose sentences realize a dative-like alternation, either in the
//! same abstract word orders (shared structure) or with the second language's
//! templates reversed (control). Drives the desk-scale end-to-end experiment.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusShard, LangTag};
use crate::priming::StimulusItem;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lexicon {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
    pub prepositions: Vec<String>,
}

impl Lexicon {
    /// Words built from the letters {a,b,d,e,g,k,o,p,t}.
    pub fn default_l1() -> Self {
        Lexicon {
            verbs: vec!["dap".into(), "kote".into(), "bag".into()],
            nouns: vec![
                "dok".into(),
                "teb".into(),
                "gap".into(),
                "pado".into(),
                "keta".into(),
                "boge".into(),
            ],
            prepositions: vec!["epo".into()],
        }
    }

    /// Words built from the letters {f,i,l,m,n,r,s,u,y} — no character in
    /// common with [`Lexicon::default_l1`].
    pub fn default_l2() -> Self {
        Lexicon {
            verbs: vec!["mis".into(), "runi".into(), "fyl".into()],
            nouns: vec![
                "mur".into(),
                "sif".into(),
                "lyn".into(),
                "nilu".into(),
                "rysa".into(),
                "fumi".into(),
            ],
            prepositions: vec!["uri".into()],
        }
    }

    fn words(&self) -> impl Iterator<Item = &String> {
        self.verbs.iter().chain(&self.nouns).chain(&self.prepositions)
    }

    fn validate(&self, name: &str) -> Result<(), CorpusError> {
        if self.verbs.is_empty() {
            return Err(CorpusError::InvalidGrammar(format!("{name} has no verbs")));
        }
        if self.nouns.len() < 2 {
            return Err(CorpusError::InvalidGrammar(format!(
                "{name} needs at least two nouns for two-argument sentences"
            )));
        }
        if self.prepositions.is_empty() {
            return Err(CorpusError::InvalidGrammar(format!("{name} has no prepositions")));
        }
        let mut seen = std::collections::HashSet::new();
        for w in self.words() {
            if w.is_empty() || !w.chars().all(|c| c.is_alphabetic()) {
                return Err(CorpusError::InvalidGrammar(format!(
                    "{name} word {w:?} is not purely alphabetic"
                )));
            }
            if !seen.insert(w) {
                return Err(CorpusError::InvalidGrammar(format!(
                    "{name} lists {w:?} more than once"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub l1: Lexicon,
    pub l2: Lexicon,
    /// Stationary probability that a sentence uses the PO construction.
    pub po_rate: f64,
    /// Probability that a sentence repeats the previous sentence's
    /// construction instead of redrawing it. The construction marginal stays
    /// at `po_rate`; higher values make within-document structural repetition
    /// more predictive.
    pub persistence: f64,
    /// Inclusive range of sentences per document.
    pub sentences_per_doc: (u32, u32),
    /// When true both languages realize the same abstract templates
    /// (PO "V N1 p N2", DO "V N2 N1"); when false the second language uses the
    /// reversed orders as a structure-mismatch control.
    pub shared_structure: bool,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            l1: Lexicon::default_l1(),
            l2: Lexicon::default_l2(),
            po_rate: 0.5,
            persistence: 0.9,
            sentences_per_doc: (4, 8),
            shared_structure: true,
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.l1.validate("first lexicon")?;
        self.l2.validate("second lexicon")?;
        for (name, p) in [("po_rate", self.po_rate), ("persistence", self.persistence)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidGrammar(format!("{name} {p} outside [0,1]")));
            }
        }
        let (lo, hi) = self.sentences_per_doc;
        if lo < 1 || lo > hi {
            return Err(CorpusError::InvalidGrammar(format!(
                "sentences_per_doc range ({lo}, {hi}) is empty"
            )));
        }
        if self.shared_structure {
            let l1_words: std::collections::HashSet<&String> = self.l1.words().collect();
            if let Some(shared) = self.l2.words().find(|w| l1_words.contains(w)) {
                return Err(CorpusError::OverlappingLexica(shared.clone()));
            }
        }
        Ok(())
    }

    /// Function words of both grammars, for content-word validation of
    /// generated stimuli.
    pub fn stoplist_words(&self) -> Vec<String> {
        self.l1.prepositions.iter().chain(&self.l2.prepositions).cloned().collect()
    }
}

/// Verb, two distinct nouns, preposition — the lexical material of one
/// sentence pair.
struct Triple<'a> {
    verb: &'a str,
    n1: &'a str,
    n2: &'a str,
    prep: &'a str,
}

impl<'a> Triple<'a> {
    fn sample(lex: &'a Lexicon, rng: &mut ChaCha8Rng) -> Self {
        let verb = lex.verbs.choose(rng).unwrap();
        let i = rng.random_range(0..lex.nouns.len());
        let mut j = rng.random_range(0..lex.nouns.len() - 1);
        if j >= i {
            j += 1;
        }
        let prep = lex.prepositions.choose(rng).unwrap();
        Triple { verb, n1: &lex.nouns[i], n2: &lex.nouns[j], prep }
    }

    fn realize(&self, po: bool, reversed: bool) -> String {
        let Triple { verb, n1, n2, prep } = self;
        match (po, reversed) {
            (true, false) => format!("{verb} {n1} {prep} {n2}"),
            (false, false) => format!("{verb} {n2} {n1}"),
            (true, true) => format!("{n2} {prep} {n1} {verb}"),
            (false, true) => format!("{n1} {n2} {verb}"),
        }
    }
}

fn sample_doc(
    lex: &Lexicon,
    config: &GrammarConfig,
    reversed: bool,
    rng: &mut ChaCha8Rng,
) -> String {
    let (lo, hi) = config.sentences_per_doc;
    let n_sentences = rng.random_range(lo..=hi);
    let mut sentences = Vec::with_capacity(n_sentences as usize);
    let mut po = rng.random_bool(config.po_rate);
    for k in 0..n_sentences {
        if k > 0 && !rng.random_bool(config.persistence) {
            po = rng.random_bool(config.po_rate);
        }
        sentences.push(Triple::sample(lex, rng).realize(po, reversed) + ".");
    }
    sentences.join(" ")
}

/// Generate `n_docs` documents per language. Deterministic in the rng state.
pub fn generate_synthetic_pair(
    config: &GrammarConfig,
    n_docs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(CorpusShard, CorpusShard), CorpusError> {
    config.validate()?;
    let l1_docs = (0..n_docs).map(|_| sample_doc(&config.l1, config, false, rng)).collect();
    let reversed = !config.shared_structure;
    let l2_docs = (0..n_docs).map(|_| sample_doc(&config.l2, config, reversed, rng)).collect();
    Ok((
        CorpusShard::new(LangTag::L1, "synthetic-L1", l1_docs),
        CorpusShard::new(LangTag::L2, "synthetic-L2", l2_docs),
    ))
}

/// All (verb, n1, n2) index combinations, seed-shuffled, so items never repeat
/// lexical material exactly.
fn shuffled_combos(lex: &Lexicon, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let mut combos = Vec::new();
    for v in 0..lex.verbs.len() {
        for i in 0..lex.nouns.len() {
            for j in 0..lex.nouns.len() {
                if i != j {
                    combos.push((v, i, j));
                }
            }
        }
    }
    combos.shuffle(rng);
    combos
}

/// Generate `n_items` stimulus items: L1 primes, L2 targets, both
/// constructions each, realized from the corpus grammars.
pub fn generate_synthetic_stimuli(
    config: &GrammarConfig,
    n_items: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StimulusItem>, CorpusError> {
    config.validate()?;
    let prime_combos = shuffled_combos(&config.l1, rng);
    let target_combos = shuffled_combos(&config.l2, rng);
    let available = prime_combos.len().min(target_combos.len());
    if n_items > available {
        return Err(CorpusError::InvalidGrammar(format!(
            "cannot build {n_items} distinct items from {available} lexical combinations"
        )));
    }
    let reversed = !config.shared_structure;
    let mut items = Vec::with_capacity(n_items);
    for idx in 0..n_items {
        let (pv, pi, pj) = prime_combos[idx];
        let (tv, ti, tj) = target_combos[idx];
        let prime = Triple {
            verb: &config.l1.verbs[pv],
            n1: &config.l1.nouns[pi],
            n2: &config.l1.nouns[pj],
            prep: &config.l1.prepositions[idx % config.l1.prepositions.len()],
        };
        let target = Triple {
            verb: &config.l2.verbs[tv],
            n1: &config.l2.nouns[ti],
            n2: &config.l2.nouns[tj],
            prep: &config.l2.prepositions[idx % config.l2.prepositions.len()],
        };
        items.push(StimulusItem {
            item_id: idx as u64 + 1,
            prime_language: "L1".into(),
            target_language: "L2".into(),
            prime_po: prime.realize(true, false),
            prime_do: prime.realize(false, false),
            target_po: target.realize(true, reversed),
            target_do: target.realize(false, reversed),
        });
    }
    Ok(items)
}
