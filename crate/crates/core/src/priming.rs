//! Structural priming measurement: stimulus data model, normalized target
//! probabilities, per-item priming effects, and the checkpoint sweep that
//! produces the trajectory data for analysis.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lm::{LmError, SequenceScorer};
use crate::tokenizer::TokenizerModel;
use crate::util::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum PrimingError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("stimulus file is missing column {0:?}")]
    MissingColumn(String),
    #[error("stimulus file has unexpected column {0:?}")]
    UnknownColumn(String),
    #[error("duplicate item_id {0}")]
    DuplicateItemId(u64),
    #[error("item {item_id}: {field} is empty")]
    EmptySentence { item_id: u64, field: &'static str },
    #[error("item {item_id}: {a} and {b} are identical")]
    IdenticalSentences { item_id: u64, a: &'static str, b: &'static str },
    #[error("content-word mismatch: {0}")]
    ContentWordMismatch(String),
    #[error("log-probability must be finite")]
    NonFiniteLogProb,
    #[error("prime + joiner + target need {needed} tokens, scorer accepts {max}")]
    ContextOverflow { needed: usize, max: usize },
    #[error("checkpoint at step {step} uses tokenizer {found}, sweep expects {expected}")]
    FingerprintMismatch { step: u64, found: String, expected: String },
    #[error("{path} belongs to a different sweep configuration; remove it or change the output path")]
    ManifestMismatch { path: String },
    #[error("sweep checkpoint steps must be non-empty and strictly ascending")]
    BadCheckpointList,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("checkpoint unavailable: {0}")]
    Checkpoint(String),
}

/// The two constructions of the dative alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PrimeType {
    Po,
    Do,
}

impl std::fmt::Display for PrimeType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrimeType::Po => write!(f, "PO"),
            PrimeType::Do => write!(f, "DO"),
        }
    }
}

impl std::str::FromStr for PrimeType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "PO" => Ok(PrimeType::Po),
            "DO" => Ok(PrimeType::Do),
            other => Err(format!("unknown prime type {other:?} (expected PO or DO)")),
        }
    }
}

/// One experimental item: both prime constructions in the prime language and
/// both target constructions in the target language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusItem {
    pub item_id: u64,
    pub prime_language: String,
    pub target_language: String,
    pub prime_po: String,
    pub prime_do: String,
    pub target_po: String,
    pub target_do: String,
}

impl StimulusItem {
    pub fn prime(&self, prime_type: PrimeType) -> &str {
        match prime_type {
            PrimeType::Po => &self.prime_po,
            PrimeType::Do => &self.prime_do,
        }
    }
}

/// Function words ignored by content-word validation. Entries are matched
/// case-insensitively against alphabetic words.
#[derive(Debug, Clone)]
pub struct Stoplist(HashSet<String>);

impl Stoplist {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Stoplist(words.into_iter().map(|w| w.into().to_lowercase()).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }
}

impl Default for Stoplist {
    fn default() -> Self {
        Stoplist::new(["the", "a", "an", "to", "de", "het", "een", "aan"])
    }
}

/// Multiset of lowercased alphabetic words, stoplist excluded.
fn content_words(sentence: &str, stoplist: &Stoplist) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for word in sentence.split(|c: char| !c.is_alphabetic()) {
        if word.is_empty() || stoplist.contains(word) {
            continue;
        }
        *counts.entry(word.to_lowercase()).or_insert(0) += 1;
    }
    counts
}

/// Check item invariants. Hard violations (empty or duplicated sentences) are
/// errors; content-word mismatches between the PO/DO members of a pair come
/// back as warnings so the caller can decide how strict to be.
pub fn validate_item(item: &StimulusItem, stoplist: &Stoplist) -> Result<Vec<String>, PrimingError> {
    let fields: [(&'static str, &str); 4] = [
        ("prime_po", &item.prime_po),
        ("prime_do", &item.prime_do),
        ("target_po", &item.target_po),
        ("target_do", &item.target_do),
    ];
    for (field, text) in fields {
        if text.trim().is_empty() {
            return Err(PrimingError::EmptySentence { item_id: item.item_id, field });
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if fields[i].1 == fields[j].1 {
                return Err(PrimingError::IdenticalSentences {
                    item_id: item.item_id,
                    a: fields[i].0,
                    b: fields[j].0,
                });
            }
        }
    }
    let mut warnings = Vec::new();
    for (label, po, do_) in [
        ("prime", &item.prime_po, &item.prime_do),
        ("target", &item.target_po, &item.target_do),
    ] {
        let wp = content_words(po, stoplist);
        let wd = content_words(do_, stoplist);
        if wp != wd {
            warnings.push(format!(
                "item {}: {label} PO/DO content words differ ({:?} vs {:?})",
                item.item_id,
                wp.keys().collect::<Vec<_>>(),
                wd.keys().collect::<Vec<_>>()
            ));
        }
    }
    Ok(warnings)
}

pub const STIMULUS_COLUMNS: [&str; 7] = [
    "item_id",
    "prime_language",
    "target_language",
    "prime_po",
    "prime_do",
    "target_po",
    "target_do",
];

/// Validated stimulus file contents.
#[derive(Debug, Clone)]
pub struct StimulusSet {
    pub items: Vec<StimulusItem>,
    pub warnings: Vec<String>,
    /// Hash of the raw file bytes; keys sweep resumability.
    pub file_sha256: String,
}

/// Read and validate a stimulus CSV. With `strict`, content-word warnings
/// become errors.
pub fn load_stimuli(
    path: &Path,
    stoplist: &Stoplist,
    strict: bool,
) -> Result<StimulusSet, PrimingError> {
    let bytes = std::fs::read(path)
        .map_err(|source| PrimingError::Io { path: path.display().to_string(), source })?;
    let file_sha256 = sha256_hex(&bytes);
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let as_csv_err = |source| PrimingError::Csv { path: path.display().to_string(), source };
    let headers: Vec<String> =
        reader.headers().map_err(as_csv_err)?.iter().map(|h| h.to_string()).collect();
    for required in STIMULUS_COLUMNS {
        if !headers.iter().any(|h| h == required) {
            return Err(PrimingError::MissingColumn(required.to_string()));
        }
    }
    for found in &headers {
        if !STIMULUS_COLUMNS.contains(&found.as_str()) {
            return Err(PrimingError::UnknownColumn(found.clone()));
        }
    }
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.deserialize::<StimulusItem>() {
        let item = record.map_err(as_csv_err)?;
        if !seen.insert(item.item_id) {
            return Err(PrimingError::DuplicateItemId(item.item_id));
        }
        warnings.extend(validate_item(&item, stoplist)?);
        items.push(item);
    }
    if strict && !warnings.is_empty() {
        return Err(PrimingError::ContentWordMismatch(warnings.join("; ")));
    }
    Ok(StimulusSet { items, warnings, file_sha256 })
}

/// Normalized probability of the PO target given the two raw conditional
/// log-probabilities: logistic of `lp_po - lp_do`.
///
/// Computed with one logistic evaluation on the larger argument and an exact
/// complement on the smaller, so `normalized_prob(a, b) + normalized_prob(b, a)`
/// is exactly 1.0 (the subtraction `1 - x` is exact for `x` in [0.5, 1]).
/// Saturates to exactly 0 or 1 once the gap exceeds roughly 37 nats.
pub fn normalized_prob(lp_po: f64, lp_do: f64) -> Result<f64, PrimingError> {
    if !lp_po.is_finite() || !lp_do.is_finite() {
        return Err(PrimingError::NonFiniteLogProb);
    }
    if lp_po >= lp_do {
        Ok(1.0 / (1.0 + (lp_do - lp_po).exp()))
    } else {
        Ok(1.0 - 1.0 / (1.0 + (lp_po - lp_do).exp()))
    }
}

/// Tokenize `joiner ⧺ target` and split the token sequence at the joiner
/// boundary: every token ending strictly after the joiner's bytes belongs to
/// the target. Returns (joiner-side ids, target ids).
///
/// The prime never participates, so the target's token split cannot depend on
/// which prime precedes it.
pub fn target_token_split(
    tokenizer: &TokenizerModel,
    joiner: &str,
    target: &str,
) -> (Vec<u32>, Vec<u32>) {
    let joined = format!("{joiner}{target}");
    let ids = tokenizer.encode(&joined);
    let boundary = joiner.len();
    let mut end = 0usize;
    let mut split = ids.len();
    for (i, &id) in ids.iter().enumerate() {
        end += tokenizer.token_as_bytes(id).map_or(0, |b| b.len());
        if end > boundary {
            split = i;
            break;
        }
    }
    let target_ids = ids[split..].to_vec();
    let mut joiner_ids = ids;
    joiner_ids.truncate(split);
    (joiner_ids, target_ids)
}

/// ln P(target | prime ⧺ joiner), summed over the target's tokens only.
/// Joiner-side tokens attach to the conditioning context.
pub fn conditional_logprob<S: SequenceScorer + ?Sized>(
    scorer: &S,
    tokenizer: &TokenizerModel,
    prime: &str,
    target: &str,
    joiner: &str,
) -> Result<f64, PrimingError> {
    let (joiner_ids, target_ids) = target_token_split(tokenizer, joiner, target);
    let mut context = tokenizer.encode(prime);
    context.extend_from_slice(&joiner_ids);
    let needed = context.len() + target_ids.len();
    if needed > scorer.max_seq_len() {
        return Err(PrimingError::ContextOverflow { needed, max: scorer.max_seq_len() });
    }
    Ok(scorer.score_continuation(&context, &target_ids)?)
}

/// One evaluated (checkpoint, item, prime) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimingMeasurement {
    pub step: u64,
    pub item_id: u64,
    pub prime_type: PrimeType,
    pub lp_po_target: f64,
    pub lp_do_target: f64,
    /// Normalized probability of the PO target under this prime.
    pub p_n_po_target: f64,
}

/// Evaluate one item under both primes at one checkpoint.
pub fn measure_item<S: SequenceScorer + ?Sized>(
    scorer: &S,
    tokenizer: &TokenizerModel,
    item: &StimulusItem,
    joiner: &str,
    step: u64,
) -> Result<[PrimingMeasurement; 2], PrimingError> {
    let mut out = Vec::with_capacity(2);
    for prime_type in [PrimeType::Po, PrimeType::Do] {
        let prime = item.prime(prime_type);
        let lp_po = conditional_logprob(scorer, tokenizer, prime, &item.target_po, joiner)?;
        let lp_do = conditional_logprob(scorer, tokenizer, prime, &item.target_do, joiner)?;
        out.push(PrimingMeasurement {
            step,
            item_id: item.item_id,
            prime_type,
            lp_po_target: lp_po,
            lp_do_target: lp_do,
            p_n_po_target: normalized_prob(lp_po, lp_do)?,
        });
    }
    Ok([out.remove(0), out.remove(0)])
}

/// P_N(PO target | PO prime) − P_N(PO target | DO prime); positive means the
/// prime's construction pulled the target distribution toward itself.
pub fn priming_effect<S: SequenceScorer + ?Sized>(
    scorer: &S,
    tokenizer: &TokenizerModel,
    item: &StimulusItem,
    joiner: &str,
) -> Result<f64, PrimingError> {
    let [po, do_] = measure_item(scorer, tokenizer, item, joiner, 0)?;
    Ok(po.p_n_po_target - do_.p_n_po_target)
}

/// Post-boundary fine-grained checkpoint schedule: `boundary`,
/// `boundary + interval`, …, `boundary + interval·intervals`.
pub fn fine_checkpoint_steps(boundary: u64, interval: u64, intervals: u64) -> Vec<u64> {
    (0..=intervals).map(|i| boundary + i * interval).collect()
}

/// Everything that pins a sweep's output. The hash of this manifest keys
/// resumability: an existing CSV is only reused if it was produced under an
/// identical manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub checkpoint_steps: Vec<u64>,
    pub item_ids: Vec<u64>,
    pub stimulus_sha256: String,
    pub joiner: String,
    pub tokenizer_fingerprint: String,
}

impl SweepManifest {
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }
}

#[derive(Debug)]
pub struct SweepOutput {
    pub manifest: SweepManifest,
    pub manifest_hash: String,
    /// Ordered by (step, item_id, prime_type).
    pub measurements: Vec<PrimingMeasurement>,
}

pub const SWEEP_CSV_HEADER: &str = "step,item_id,prime_type,lp_po_target,lp_do_target,p_n_po_target";

type RowKey = (u64, u64, PrimeType);

fn comment_line(hash: &str) -> String {
    format!("# sweep-manifest {hash}")
}

fn write_sweep_csv<'a>(
    path: &Path,
    hash: &str,
    rows: impl Iterator<Item = &'a PrimingMeasurement>,
) -> Result<(), PrimingError> {
    let io_err = |source| PrimingError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("csv.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(io_err)?);
        let inner = |source| PrimingError::Io { path: tmp.display().to_string(), source };
        writeln!(f, "{}", comment_line(hash)).map_err(inner)?;
        writeln!(f, "{SWEEP_CSV_HEADER}").map_err(inner)?;
        for m in rows {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                m.step, m.item_id, m.prime_type, m.lp_po_target, m.lp_do_target, m.p_n_po_target
            )
            .map_err(inner)?;
        }
        f.flush().map_err(inner)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

fn parse_sweep_row(line: &str) -> Option<PrimingMeasurement> {
    let mut parts = line.split(',');
    let step = parts.next()?.parse().ok()?;
    let item_id = parts.next()?.parse().ok()?;
    let prime_type: PrimeType = parts.next()?.parse().ok()?;
    let lp_po_target: f64 = parts.next()?.parse().ok()?;
    let lp_do_target: f64 = parts.next()?.parse().ok()?;
    let p_n_po_target: f64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || !lp_po_target.is_finite() || !p_n_po_target.is_finite() {
        return None;
    }
    Some(PrimingMeasurement { step, item_id, prime_type, lp_po_target, lp_do_target, p_n_po_target })
}

/// Read rows from a partially or fully written sweep CSV. Stops at the first
/// malformed line (an interrupted write can truncate the tail).
fn read_existing_rows(
    path: &Path,
    expected_hash: &str,
) -> Result<BTreeMap<RowKey, PrimingMeasurement>, PrimingError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(source) => return Err(PrimingError::Io { path: path.display().to_string(), source }),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first == comment_line(expected_hash) => {}
        _ => return Err(PrimingError::ManifestMismatch { path: path.display().to_string() }),
    }
    match lines.next() {
        Some(header) if header == SWEEP_CSV_HEADER => {}
        _ => return Err(PrimingError::ManifestMismatch { path: path.display().to_string() }),
    }
    let mut rows = BTreeMap::new();
    for line in lines {
        match parse_sweep_row(line) {
            Some(m) => {
                rows.insert((m.step, m.item_id, m.prime_type), m);
            }
            None => break,
        }
    }
    Ok(rows)
}

/// Strictly parse a completed sweep CSV, returning its manifest hash and rows
/// in file order.
pub fn read_sweep_csv(path: &Path) -> Result<(String, Vec<PrimingMeasurement>), PrimingError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| PrimingError::Io { path: path.display().to_string(), source })?;
    let bad = || PrimingError::ManifestMismatch { path: path.display().to_string() };
    let mut lines = text.lines();
    let hash = lines
        .next()
        .and_then(|l| l.strip_prefix("# sweep-manifest "))
        .ok_or_else(bad)?
        .to_string();
    if lines.next() != Some(SWEEP_CSV_HEADER) {
        return Err(bad());
    }
    let mut rows = Vec::new();
    for line in lines {
        rows.push(parse_sweep_row(line).ok_or_else(bad)?);
    }
    Ok((hash, rows))
}

/// Evaluate every (checkpoint, item, prime) cell, writing `csv_path` and a
/// manifest sidecar. `load_checkpoint` yields a scorer plus the tokenizer
/// fingerprint the checkpoint was trained with.
///
/// Resumable: checkpoints whose rows are already complete in an existing CSV
/// written under the same manifest hash are skipped without loading the
/// checkpoint. The CSV is rewritten after every evaluated checkpoint, rows
/// always in (step, item_id, prime_type) order.
pub fn sweep<S, F>(
    steps: &[u64],
    mut load_checkpoint: F,
    tokenizer: &TokenizerModel,
    stimuli: &[StimulusItem],
    stimulus_sha256: &str,
    joiner: &str,
    csv_path: &Path,
) -> Result<SweepOutput, PrimingError>
where
    S: SequenceScorer + Sync,
    F: FnMut(u64) -> Result<(S, String), PrimingError>,
{
    if steps.is_empty() || steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PrimingError::BadCheckpointList);
    }
    let mut ids: Vec<u64> = stimuli.iter().map(|s| s.item_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(PrimingError::DuplicateItemId(
            ids.windows(2).find(|w| w[0] == w[1]).unwrap()[0],
        ));
    }
    let manifest = SweepManifest {
        checkpoint_steps: steps.to_vec(),
        item_ids: ids.clone(),
        stimulus_sha256: stimulus_sha256.to_string(),
        joiner: joiner.to_string(),
        tokenizer_fingerprint: tokenizer.fingerprint(),
    };
    let hash = manifest.hash();
    let mut rows = read_existing_rows(csv_path, &hash)?;

    for &step in steps {
        let complete = stimuli.iter().all(|item| {
            rows.contains_key(&(step, item.item_id, PrimeType::Po))
                && rows.contains_key(&(step, item.item_id, PrimeType::Do))
        });
        if complete {
            continue;
        }
        let (scorer, fingerprint) = load_checkpoint(step)?;
        if fingerprint != manifest.tokenizer_fingerprint {
            return Err(PrimingError::FingerprintMismatch {
                step,
                found: fingerprint,
                expected: manifest.tokenizer_fingerprint.clone(),
            });
        }
        let measured: Vec<[PrimingMeasurement; 2]> = stimuli
            .par_iter()
            .map(|item| measure_item(&scorer, tokenizer, item, joiner, step))
            .collect::<Result<_, _>>()?;
        for pair in measured {
            for m in pair {
                rows.insert((m.step, m.item_id, m.prime_type), m);
            }
        }
        write_sweep_csv(csv_path, &hash, rows.values())?;
    }

    let measurements: Vec<PrimingMeasurement> = rows.into_values().collect();
    debug_assert_eq!(measurements.len(), steps.len() * stimuli.len() * 2);
    write_sweep_csv(csv_path, &hash, measurements.iter())?;
    let manifest_path = csv_path.with_extension("manifest.json");
    let manifest_json = serde_json::json!({
        "manifest_hash": hash,
        "manifest": &manifest,
    });
    std::fs::write(&manifest_path, format!("{:#}\n", manifest_json)).map_err(|source| {
        PrimingError::Io { path: manifest_path.display().to_string(), source }
    })?;
    Ok(SweepOutput { manifest, manifest_hash: hash, measurements })
}
