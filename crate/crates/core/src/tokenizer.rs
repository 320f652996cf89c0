//! Byte-level BPE tokenizer trained on a language-proportioned text sample.
//!
//! The base alphabet is all 256 bytes, so any UTF-8 input is encodable and
//! `decode(encode(s)) == s` holds for every string. Merges are learned
//! greedily by pair frequency with lexicographic tie-breaking, which makes
//! training fully deterministic. Text is pre-split at whitespace and
//! punctuation boundaries (a single preceding space attaches to the following
//! piece, GPT-2 style) and merges never cross piece boundaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;

/// Serialized format version; loading rejects anything else.
pub const TOKENIZER_FORMAT_VERSION: u32 = 1;

/// Number of base byte tokens.
pub const BYTE_VOCAB: usize = 256;

/// The end-of-document separator inserted between packed documents.
pub const EOD_TOKEN: &str = "<|eod|>";

/// Id of the end-of-document token (fixed, directly after the byte alphabet).
pub const EOD_ID: u32 = BYTE_VOCAB as u32;

/// Smallest legal vocabulary: all bytes, the EOD special, and one merge.
pub const MIN_VOCAB_SIZE: usize = BYTE_VOCAB + 2;

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocab_size {requested} too small; need at least {min} (256 bytes + specials + 1 merge)")]
    VocabTooSmall { requested: usize, min: usize },
    #[error("sample for {language} is empty but has proportion {proportion}")]
    EmptySample { language: String, proportion: f64 },
    #[error("proportions {0} and {1} must be in [0,1] and sum to 1")]
    BadProportions(f64, f64),
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("unsupported tokenizer format version {found} (expected {expected})")]
    BadVersion { found: u32, expected: u32 },
    #[error("malformed tokenizer file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One learned merge: `left` + `right` -> `merged`, applied in `rank` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRule {
    pub rank: u32,
    pub left: u32,
    pub right: u32,
    pub merged: u32,
}

/// A trained BPE model: byte alphabet, ordered merges, and specials.
#[derive(Debug, Clone)]
pub struct TokenizerModel {
    /// Token id -> byte string, for the 256 base tokens and every merge
    /// product. The EOD special occupies id 256 and is not a byte token.
    token_bytes: Vec<Vec<u8>>,
    merges: Vec<MergeRule>,
    /// (left, right) -> rank lookup used by the encoder.
    pair_rank: HashMap<(u32, u32), u32>,
}

impl TokenizerModel {
    /// Total vocabulary size (bytes + specials + merges).
    pub fn vocab_size(&self) -> usize {
        self.token_bytes.len() + 1
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn eod_id(&self) -> u32 {
        EOD_ID
    }

    /// Byte content of a regular token; `None` for specials/unknown ids.
    pub fn token_as_bytes(&self, id: u32) -> Option<&[u8]> {
        let id = id as usize;
        if id < BYTE_VOCAB {
            self.token_bytes.get(id).map(|v| v.as_slice())
        } else if id == EOD_ID as usize {
            None
        } else {
            self.token_bytes.get(id - 1).map(|v| v.as_slice())
        }
    }

    fn id_for_slot(&self, slot: usize) -> u32 {
        // internal storage skips the EOD slot
        if slot < BYTE_VOCAB {
            slot as u32
        } else {
            slot as u32 + 1
        }
    }

    /// SHA-256 fingerprint of the serialized model.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

// ---------------------------------------------------------------------------
// byte <-> printable char mapping (GPT-2 style) for human-readable JSON
// ---------------------------------------------------------------------------

fn byte_to_char_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 0x100u32;
    for b in 0u32..256 {
        let printable = (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
        table[b as usize] = if printable {
            char::from_u32(b).unwrap()
        } else {
            let c = char::from_u32(next).unwrap();
            next += 1;
            c
        };
    }
    table
}

fn bytes_to_printable(bytes: &[u8], table: &[char; 256]) -> String {
    bytes.iter().map(|&b| table[b as usize]).collect()
}

fn printable_to_bytes(s: &str, rev: &HashMap<char, u8>) -> Result<Vec<u8>, TokenizerError> {
    s.chars()
        .map(|c| {
            rev.get(&c)
                .copied()
                .ok_or_else(|| TokenizerError::Malformed(format!("unmapped char {c:?} in token")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// pre-tokenization
// ---------------------------------------------------------------------------

#[derive(PartialEq, Eq, Clone, Copy)]
enum CharClass {
    Space,
    Word,
    Punct,
}

fn class_of(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphanumeric() {
        CharClass::Word
    } else {
        CharClass::Punct
    }
}

/// Split text into pieces whose concatenation is the input.
///
/// Pieces are maximal runs of one character class (word / punctuation /
/// whitespace); a single space immediately before a non-space run is moved
/// onto that run so merges can learn space-prefixed words.
/// Returns byte ranges into `text`.
pub fn pretokenize(text: &str) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize, CharClass)> = Vec::new();
    for (pos, c) in text.char_indices() {
        let class = class_of(c);
        let end = pos + c.len_utf8();
        match runs.last_mut() {
            Some((_, e, k)) if *k == class && *e == pos => *e = end,
            _ => runs.push((pos, end, class)),
        }
    }
    let mut pieces = Vec::with_capacity(runs.len());
    for i in 0..runs.len() {
        let (start, end, class) = runs[i];
        let mut s = start;
        let mut e = end;
        if class == CharClass::Space {
            // donate a trailing ' ' to the next run, if any
            if i + 1 < runs.len() && text[..end].ends_with(' ') {
                e -= 1;
            }
            if s < e {
                pieces.push((s, e));
            }
        } else {
            if s > 0 && text[..s].ends_with(' ') {
                // only if the previous run donated it
                if i > 0 && runs[i - 1].2 == CharClass::Space {
                    s -= 1;
                }
            }
            pieces.push((s, e));
        }
    }
    pieces
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Build the training text by taking a character-proportioned prefix of each
/// sample. The total budget is the length (in chars) of the shorter sample,
/// so both languages can always supply their share. Returns the text and the
/// per-language character counts actually taken.
pub fn build_training_text(
    l1_sample: &str,
    l2_sample: &str,
    proportions: (f64, f64),
) -> Result<(String, usize, usize), TokenizerError> {
    let (p1, p2) = proportions;
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) || (p1 + p2 - 1.0).abs() > 1e-9 {
        return Err(TokenizerError::BadProportions(p1, p2));
    }
    if l1_sample.is_empty() && p1 > 0.0 {
        return Err(TokenizerError::EmptySample { language: "L1".into(), proportion: p1 });
    }
    if l2_sample.is_empty() && p2 > 0.0 {
        return Err(TokenizerError::EmptySample { language: "L2".into(), proportion: p2 });
    }
    let n1 = l1_sample.chars().count();
    let n2 = l2_sample.chars().count();
    let total = match (p1 > 0.0, p2 > 0.0) {
        (true, true) => n1.min(n2),
        (true, false) => n1,
        (false, true) => n2,
        (false, false) => 0,
    };
    let c1 = (p1 * total as f64).round() as usize;
    let c2 = total - c1;
    let take = |s: &str, n: usize| -> String { s.chars().take(n).collect() };
    let mut text = take(l1_sample, c1);
    text.push_str(&take(l2_sample, c2));
    Ok((text, c1, c2))
}

/// Train a byte-level BPE model on a proportioned bilingual sample.
///
/// Merges are selected by highest pair count; ties break lexicographically on
/// the (left, right) byte strings. Training stops at `vocab_size` or when no
/// adjacent pair occurs at least twice (tiny corpora can exhaust their merge
/// supply early, leaving a smaller vocabulary).
///
/// `_seed` is accepted for interface stability; the prefix-based sample
/// construction is deterministic and does not consume randomness.
pub fn train_bpe(
    l1_sample: &str,
    l2_sample: &str,
    proportions: (f64, f64),
    vocab_size: usize,
    _seed: u64,
) -> Result<TokenizerModel, TokenizerError> {
    if vocab_size < MIN_VOCAB_SIZE {
        return Err(TokenizerError::VocabTooSmall { requested: vocab_size, min: MIN_VOCAB_SIZE });
    }
    let (text, _, _) = build_training_text(l1_sample, l2_sample, proportions)?;

    // unique pieces with counts; each piece as a token-id sequence
    let mut piece_counts: HashMap<&str, u64> = HashMap::new();
    for (s, e) in pretokenize(&text) {
        *piece_counts.entry(&text[s..e]).or_insert(0) += 1;
    }
    let mut pieces: Vec<(Vec<u32>, u64)> = piece_counts
        .iter()
        .map(|(piece, &count)| (piece.bytes().map(u32::from).collect(), count))
        .collect();
    // fixed processing order, independent of hash iteration
    pieces.sort_by(|a, b| a.0.cmp(&b.0));

    let mut model = TokenizerModel {
        token_bytes: (0..BYTE_VOCAB).map(|b| vec![b as u8]).collect(),
        merges: Vec::new(),
        pair_rank: HashMap::new(),
    };

    while model.vocab_size() < vocab_size {
        // count adjacent pairs, weighted by piece multiplicity
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (ids, count) in &pieces {
            for w in ids.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += count;
            }
        }
        let bytes_of = |id: u32| -> &[u8] { model.token_as_bytes(id).unwrap() };
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb)
                    .then_with(|| (bytes_of(pb.0), bytes_of(pb.1)).cmp(&(bytes_of(pa.0), bytes_of(pa.1))))
            })
            .map(|(&pair, _)| pair);
        let Some((left, right)) = best else { break };

        let mut merged_bytes = model.token_as_bytes(left).unwrap().to_vec();
        merged_bytes.extend_from_slice(model.token_as_bytes(right).unwrap());
        model.token_bytes.push(merged_bytes);
        let merged = model.id_for_slot(model.token_bytes.len() - 1);
        let rank = model.merges.len() as u32;
        model.merges.push(MergeRule { rank, left, right, merged });
        model.pair_rank.insert((left, right), rank);

        for (ids, _) in pieces.iter_mut() {
            apply_one_merge(ids, left, right, merged);
        }
    }
    Ok(model)
}

/// Replace every non-overlapping (left, right) occurrence, left to right.
fn apply_one_merge(ids: &mut Vec<u32>, left: u32, right: u32, merged: u32) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == left && ids[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}

// ---------------------------------------------------------------------------
// encode / decode
// ---------------------------------------------------------------------------

impl TokenizerModel {
    /// Encode text to token ids. Byte fallback guarantees this never fails.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut cache = HashMap::new();
        self.encode_cached(text, &mut cache)
    }

    /// Encode with a caller-held piece cache (speeds up corpus packing,
    /// where the same words recur constantly).
    pub fn encode_cached(&self, text: &str, cache: &mut HashMap<String, Vec<u32>>) -> Vec<u32> {
        let mut out = Vec::new();
        for (s, e) in pretokenize(text) {
            let piece = &text[s..e];
            if let Some(ids) = cache.get(piece) {
                out.extend_from_slice(ids);
            } else {
                let ids = self.encode_piece(piece.as_bytes());
                out.extend_from_slice(&ids);
                cache.insert(piece.to_string(), ids);
            }
        }
        out
    }

    fn encode_piece(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = bytes.iter().map(|&b| u32::from(b)).collect();
        loop {
            let mut best: Option<(u32, u32, u32, u32)> = None; // (rank, left, right, merged)
            for w in ids.windows(2) {
                if let Some(&rank) = self.pair_rank.get(&(w[0], w[1])) {
                    if best.map_or(true, |(r, ..)| rank < r) {
                        let rule = &self.merges[rank as usize];
                        best = Some((rank, rule.left, rule.right, rule.merged));
                    }
                }
            }
            let Some((_, left, right, merged)) = best else { break };
            apply_one_merge(&mut ids, left, right, merged);
        }
        ids
    }

    /// Decode ids back to text. Regular tokens contribute their bytes;
    /// specials contribute their printable name. Invalid UTF-8 (possible for
    /// arbitrary id sequences, never for encoder output) is replaced lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id == EOD_ID {
                bytes.extend_from_slice(EOD_TOKEN.as_bytes());
            } else {
                let tok = self.token_as_bytes(id).ok_or(TokenizerError::UnknownId(id))?;
                bytes.extend_from_slice(tok);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    version: u32,
    specials: SpecialTokens,
    /// id -> printable token string; index 256 is the EOD special.
    vocab: Vec<String>,
    /// ordered (left, right) printable pairs
    merges: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct SpecialTokens {
    eod: String,
    eod_id: u32,
}

impl TokenizerModel {
    pub fn to_json(&self) -> String {
        let table = byte_to_char_table();
        let mut vocab: Vec<String> = Vec::with_capacity(self.vocab_size());
        for slot in 0..self.token_bytes.len() {
            if slot == BYTE_VOCAB {
                vocab.push(EOD_TOKEN.to_string());
            }
            vocab.push(bytes_to_printable(&self.token_bytes[slot], &table));
        }
        if self.token_bytes.len() == BYTE_VOCAB {
            vocab.push(EOD_TOKEN.to_string());
        }
        let merges = self
            .merges
            .iter()
            .map(|m| {
                (
                    bytes_to_printable(self.token_as_bytes(m.left).unwrap(), &table),
                    bytes_to_printable(self.token_as_bytes(m.right).unwrap(), &table),
                )
            })
            .collect();
        let file = TokenizerFile {
            version: TOKENIZER_FORMAT_VERSION,
            specials: SpecialTokens { eod: EOD_TOKEN.to_string(), eod_id: EOD_ID },
            vocab,
            merges,
        };
        serde_json::to_string_pretty(&file).expect("tokenizer serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self, TokenizerError> {
        let file: TokenizerFile =
            serde_json::from_str(json).map_err(|e| TokenizerError::Malformed(e.to_string()))?;
        if file.version != TOKENIZER_FORMAT_VERSION {
            return Err(TokenizerError::BadVersion {
                found: file.version,
                expected: TOKENIZER_FORMAT_VERSION,
            });
        }
        let table = byte_to_char_table();
        let rev: HashMap<char, u8> =
            table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();

        let mut token_bytes = Vec::with_capacity(file.vocab.len().saturating_sub(1));
        for (id, tok) in file.vocab.iter().enumerate() {
            if id == EOD_ID as usize {
                if tok != EOD_TOKEN {
                    return Err(TokenizerError::Malformed(format!(
                        "expected {EOD_TOKEN} at id {EOD_ID}, found {tok:?}"
                    )));
                }
                continue;
            }
            token_bytes.push(printable_to_bytes(tok, &rev)?);
        }
        let mut bytes_to_id: HashMap<&[u8], u32> = HashMap::new();
        let ids: Vec<u32> = (0..token_bytes.len())
            .map(|slot| if slot < BYTE_VOCAB { slot as u32 } else { slot as u32 + 1 })
            .collect();
        for (slot, tok) in token_bytes.iter().enumerate() {
            bytes_to_id.insert(tok.as_slice(), ids[slot]);
        }
        let mut merges = Vec::with_capacity(file.merges.len());
        let mut pair_rank = HashMap::new();
        for (rank, (l, r)) in file.merges.iter().enumerate() {
            let lb = printable_to_bytes(l, &rev)?;
            let rb = printable_to_bytes(r, &rev)?;
            let mut mb = lb.clone();
            mb.extend_from_slice(&rb);
            let get = |b: &[u8]| -> Result<u32, TokenizerError> {
                bytes_to_id
                    .get(b)
                    .copied()
                    .ok_or_else(|| TokenizerError::Malformed(format!("merge references unknown token {b:?}")))
            };
            let rule = MergeRule { rank: rank as u32, left: get(&lb)?, right: get(&rb)?, merged: get(&mb)? };
            pair_rank.insert((rule.left, rule.right), rule.rank);
            merges.push(rule);
        }
        Ok(TokenizerModel { token_bytes, merges, pair_rank })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TokenizerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
