//! Bilingual corpus handling: ingestion, curriculum batch planning, exact
//! per-language token accounting, sequence packing, language-id based
//! contamination scanning, and synthetic corpus generation.

mod langid;
mod synthetic;

pub use langid::{scan_contamination, train_language_id, ContaminationReport, LangIdModel};
pub use synthetic::{
    generate_synthetic_pair, generate_synthetic_stimuli, GrammarConfig, Lexicon,
};

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenizerModel;
use crate::util::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} is not valid UTF-8 (first invalid byte at offset {offset})")]
    InvalidUtf8 { path: String, offset: usize },
    #[error("{path} contains no non-empty lines")]
    EmptyCorpus { path: String },
    #[error("step {step} out of range (total_steps = {total})")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("shard too small: {tokens} tokens cannot fill one sequence of length {seq_len}")]
    ShardTooSmall { tokens: usize, seq_len: usize },
    #[error("language-id model needs a non-empty shard for {0}")]
    MissingLanguage(String),
    #[error("n-gram order must be >= 1")]
    BadOrder,
    #[error("lexicons must be disjoint when structures are shared; both contain {0:?}")]
    OverlappingLexica(String),
    #[error("invalid grammar config: {0}")]
    InvalidGrammar(String),
}

/// Which of the two configured languages a shard belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LangTag {
    L1,
    L2,
}

impl std::fmt::Display for LangTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LangTag::L1 => write!(f, "L1"),
            LangTag::L2 => write!(f, "L2"),
        }
    }
}

/// One language's half of the corpus: ordered documents, one per input line.
#[derive(Debug, Clone)]
pub struct CorpusShard {
    pub language: LangTag,
    /// Human-readable language name (e.g. "Dutch"); informational only.
    pub language_name: String,
    pub documents: Vec<String>,
    /// Token count after tokenization; filled by [`CorpusShard::count_tokens`].
    pub token_count: Option<u64>,
}

impl CorpusShard {
    pub fn new(language: LangTag, language_name: impl Into<String>, documents: Vec<String>) -> Self {
        CorpusShard { language, language_name: language_name.into(), documents, token_count: None }
    }

    /// Tokenize every document (plus one end-of-document separator each) and
    /// cache the total.
    pub fn count_tokens(&mut self, tokenizer: &TokenizerModel) -> u64 {
        if let Some(n) = self.token_count {
            return n;
        }
        let mut cache = HashMap::new();
        let n: u64 = self
            .documents
            .iter()
            .map(|d| tokenizer.encode_cached(d, &mut cache).len() as u64 + 1)
            .sum();
        self.token_count = Some(n);
        n
    }
}

/// Read a newline-delimited UTF-8 corpus, one document per line.
/// Lines that are empty after whitespace trimming are dropped; the rest are
/// kept verbatim (minus any trailing `\r`) in order.
pub fn ingest(path: &Path, language: LangTag, language_name: &str) -> Result<CorpusShard, CorpusError> {
    let bytes = std::fs::read(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let text = String::from_utf8(bytes).map_err(|e| CorpusError::InvalidUtf8 {
        path: path.display().to_string(),
        offset: e.utf8_error().valid_up_to(),
    })?;
    let documents: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.to_string())
        .collect();
    if documents.is_empty() {
        return Err(CorpusError::EmptyCorpus { path: path.display().to_string() });
    }
    Ok(CorpusShard::new(language, language_name, documents))
}

/// Two-phase curriculum: L1-only (or `phase1_mix`) until `phase_boundary`,
/// then a `phase2_mix` share of L2 from the boundary step onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub total_steps: u64,
    /// First step index at which the phase-2 mix applies.
    pub phase_boundary: u64,
    /// Fraction of each batch drawn from L2 before the boundary.
    pub phase1_mix: f64,
    /// Fraction of each batch drawn from L2 from the boundary onward.
    pub phase2_mix: f64,
    pub batch_size: u32,
    pub seq_len: u32,
}

impl CurriculumSchedule {
    /// Check the schedule invariants; batch composition must be exact.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut problems = Vec::new();
        if self.phase_boundary > self.total_steps {
            problems.push(format!(
                "phase_boundary {} exceeds total_steps {}",
                self.phase_boundary, self.total_steps
            ));
        }
        for (name, mix) in [("phase1_mix", self.phase1_mix), ("phase2_mix", self.phase2_mix)] {
            if !(0.0..=1.0).contains(&mix) {
                problems.push(format!("{name} {mix} outside [0,1]"));
            } else {
                let exact = mix * self.batch_size as f64;
                if (exact - exact.round()).abs() > 1e-9 {
                    problems.push(format!(
                        "batch_size {} x {name} {mix} = {exact} is not an integer",
                        self.batch_size
                    ));
                }
            }
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        if self.seq_len < 2 {
            problems.push("seq_len must be at least 2".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::InvalidSchedule(problems.join("; ")))
        }
    }

    fn l2_per_step(&self, step: u64) -> u32 {
        let mix = if step < self.phase_boundary { self.phase1_mix } else { self.phase2_mix };
        (mix * self.batch_size as f64).round() as u32
    }
}

/// Exact batch composition at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub step: u64,
    pub l1_sequences: u32,
    pub l2_sequences: u32,
}

/// Cumulative per-language token exposure after `step` completed steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokensSeen {
    pub l1: u64,
    pub l2: u64,
}

/// Deterministic batch composition for one step.
pub fn plan_batch(step: u64, schedule: &CurriculumSchedule) -> Result<BatchPlan, CorpusError> {
    schedule.validate()?;
    if step >= schedule.total_steps {
        return Err(CorpusError::StepOutOfRange { step, total: schedule.total_steps });
    }
    let l2 = schedule.l2_per_step(step);
    Ok(BatchPlan { step, l1_sequences: schedule.batch_size - l2, l2_sequences: l2 })
}

/// Cumulative token exposure per language over steps `0..step`, in exact
/// integer arithmetic.
pub fn tokens_seen(step: u64, schedule: &CurriculumSchedule) -> Result<TokensSeen, CorpusError> {
    schedule.validate()?;
    if step > schedule.total_steps {
        return Err(CorpusError::StepOutOfRange { step, total: schedule.total_steps });
    }
    let l2_phase1 = schedule.l2_per_step(0) as u64;
    let l2_phase2 = schedule.l2_per_step(schedule.phase_boundary) as u64;
    let phase1_steps = step.min(schedule.phase_boundary);
    let phase2_steps = step - phase1_steps;
    let seq_len = schedule.seq_len as u64;
    let l2 = (phase1_steps * l2_phase1 + phase2_steps * l2_phase2) * seq_len;
    let total = step * schedule.batch_size as u64 * seq_len;
    Ok(TokensSeen { l1: total - l2, l2 })
}

/// Tokenize a shard's documents in seed-permuted order, join them with the
/// end-of-document token, and chunk into `seq_len` blocks. The final partial
/// block is dropped.
pub fn pack_sequences(
    shard: &CorpusShard,
    tokenizer: &TokenizerModel,
    seq_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u32>>, CorpusError> {
    let mut cache = HashMap::new();
    let doc_tokens: Vec<Vec<u32>> = shard
        .documents
        .iter()
        .map(|d| tokenizer.encode_cached(d, &mut cache))
        .collect();
    pack_tokenized(&doc_tokens, tokenizer.eod_id(), seq_len, rng)
}

/// Packing core shared with the training stream, which keeps documents
/// pre-tokenized across epochs.
fn pack_tokenized(
    doc_tokens: &[Vec<u32>],
    eod_id: u32,
    seq_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u32>>, CorpusError> {
    let mut order: Vec<usize> = (0..doc_tokens.len()).collect();
    order.shuffle(rng);
    let total: usize = doc_tokens.iter().map(|t| t.len() + 1).sum();
    if total < seq_len {
        return Err(CorpusError::ShardTooSmall { tokens: total, seq_len });
    }
    let mut flat = Vec::with_capacity(total);
    for &i in &order {
        flat.extend_from_slice(&doc_tokens[i]);
        flat.push(eod_id);
    }
    Ok(flat.chunks_exact(seq_len).map(|c| c.to_vec()).collect())
}

// ---------------------------------------------------------------------------
// training stream
// ---------------------------------------------------------------------------

/// Position inside one language's epoch-structured sequence stream.
/// Together with the stream seed this pins the stream exactly, so a resumed
/// run replays the identical data order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StreamCursor {
    pub epoch: u64,
    pub next_seq: u64,
}

/// Replayable state of the bilingual training stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub l1: StreamCursor,
    pub l2: StreamCursor,
}

/// One training batch: `count` rows of `seq_len` token ids, L1 rows first.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub tokens: Vec<u32>,
    pub count: usize,
    pub seq_len: usize,
}

struct LangStream {
    lang: LangTag,
    doc_tokens: Vec<Vec<u32>>,
    eod_id: u32,
    seq_len: usize,
    seed: u64,
    cursor: StreamCursor,
    epoch_seqs: Vec<Vec<u32>>,
}

impl LangStream {
    fn new(
        shard: &CorpusShard,
        tokenizer: &TokenizerModel,
        seq_len: usize,
        seed: u64,
        cursor: StreamCursor,
    ) -> Result<Self, CorpusError> {
        let mut cache = HashMap::new();
        let doc_tokens: Vec<Vec<u32>> = shard
            .documents
            .iter()
            .map(|d| tokenizer.encode_cached(d, &mut cache))
            .collect();
        let mut stream = LangStream {
            lang: shard.language,
            doc_tokens,
            eod_id: tokenizer.eod_id(),
            seq_len,
            seed,
            cursor,
            epoch_seqs: Vec::new(),
        };
        stream.load_epoch()?;
        Ok(stream)
    }

    fn load_epoch(&mut self) -> Result<(), CorpusError> {
        let epoch_seed = derive_seed(self.seed, &format!("{}-epoch-{}", self.lang, self.cursor.epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        self.epoch_seqs = pack_tokenized(&self.doc_tokens, self.eod_id, self.seq_len, &mut rng)?;
        Ok(())
    }

    fn next_seq(&mut self) -> Result<&[u32], CorpusError> {
        if self.cursor.next_seq as usize >= self.epoch_seqs.len() {
            self.cursor.epoch += 1;
            self.cursor.next_seq = 0;
            self.load_epoch()?;
        }
        let i = self.cursor.next_seq as usize;
        self.cursor.next_seq += 1;
        Ok(&self.epoch_seqs[i])
    }
}

/// Curriculum-driven bilingual batch source. Deterministic given
/// (shards, tokenizer, schedule, seed); resumable from a [`StreamState`].
pub struct TrainStream {
    schedule: CurriculumSchedule,
    l1: LangStream,
    l2: LangStream,
    seed: u64,
}

impl TrainStream {
    pub fn new(
        l1_shard: &CorpusShard,
        l2_shard: &CorpusShard,
        tokenizer: &TokenizerModel,
        schedule: CurriculumSchedule,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        Self::resume(
            l1_shard,
            l2_shard,
            tokenizer,
            schedule,
            StreamState { seed, l1: StreamCursor::default(), l2: StreamCursor::default() },
        )
    }

    pub fn resume(
        l1_shard: &CorpusShard,
        l2_shard: &CorpusShard,
        tokenizer: &TokenizerModel,
        schedule: CurriculumSchedule,
        state: StreamState,
    ) -> Result<Self, CorpusError> {
        schedule.validate()?;
        let seq_len = schedule.seq_len as usize;
        Ok(TrainStream {
            schedule,
            l1: LangStream::new(l1_shard, tokenizer, seq_len, state.seed, state.l1)?,
            l2: LangStream::new(l2_shard, tokenizer, seq_len, state.seed, state.l2)?,
            seed: state.seed,
        })
    }

    pub fn state(&self) -> StreamState {
        StreamState { seed: self.seed, l1: self.l1.cursor, l2: self.l2.cursor }
    }

    /// Assemble the batch for `step`: the planned number of L1 rows followed
    /// by the planned number of L2 rows.
    pub fn next_batch(&mut self, step: u64) -> Result<TokenBatch, CorpusError> {
        let plan = plan_batch(step, &self.schedule)?;
        let seq_len = self.schedule.seq_len as usize;
        let count = self.schedule.batch_size as usize;
        let mut tokens = Vec::with_capacity(count * seq_len);
        for _ in 0..plan.l1_sequences {
            tokens.extend_from_slice(self.l1.next_seq()?);
        }
        for _ in 0..plan.l2_sequences {
            tokens.extend_from_slice(self.l2.next_seq()?);
        }
        Ok(TokenBatch { tokens, count, seq_len })
    }
}
