pub mod analyze;
pub mod contamination;
pub mod describe;
pub mod plot;
pub mod pretrain;
pub mod sweep;
pub mod train_tokenizer;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use primetrace::corpus::{
    generate_synthetic_pair, generate_synthetic_stimuli, ingest, CorpusShard, LangTag,
};
use primetrace::tokenizer::TokenizerModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Context;
use crate::errors::{io_err, CliError};
use crate::manifest::Manifest;

/// Set by the Ctrl-C handler; long-running loops poll it and wind down with
/// a resumable state on disk.
pub static INTERRUPTED: AtomicBool = AtomicBool::new(false);

pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::Relaxed)
}

pub const L1_FILE: &str = "corpus/l1.txt";
pub const L2_FILE: &str = "corpus/l2.txt";
pub const STIMULI_FILE: &str = "corpus/stimuli.csv";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const COEFFICIENTS_FILE: &str = "analysis/coefficients.csv";
pub const LRT_FILE: &str = "analysis/lrt.csv";
pub const REPORT_FILE: &str = "analysis/report.txt";
pub const PN_PLOT_FILE: &str = "plots/pn_by_prime.svg";
pub const EFFECT_PLOT_FILE: &str = "plots/effect.svg";

pub fn checkpoint_rel(step: u64) -> String {
    format!("checkpoints/step-{step:08}.bin")
}

pub struct CorpusFiles {
    pub l1: PathBuf,
    pub l2: PathBuf,
    pub stimuli: Option<PathBuf>,
}

/// Make the configured corpora available on disk and record their hashes.
/// Synthetic corpora are regenerated in memory (cheap and deterministic) and
/// compared byte-for-byte against whatever is already there, so drifted
/// files are caught without trusting any earlier state.
pub fn ensure_corpora(ctx: &Context, manifest: &mut Manifest) -> Result<CorpusFiles, CliError> {
    let corpus = &ctx.config.corpus;
    if let Some(syn) = &corpus.synthetic {
        let grammar = ctx.config.grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed("synthetic-corpus"));
        let (l1, l2) = generate_synthetic_pair(&grammar, syn.n_docs as usize, &mut rng)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut srng = ChaCha8Rng::seed_from_u64(ctx.seed("synthetic-stimuli"));
        let items = generate_synthetic_stimuli(&grammar, syn.n_stimuli as usize, &mut srng)
            .map_err(|e| CliError::Config(e.to_string()))?;

        let mut stim_csv = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut stim_csv);
            for item in &items {
                w.serialize(item)
                    .map_err(|e| CliError::Data(format!("serializing stimuli: {e}")))?;
            }
            w.flush().map_err(|e| CliError::Data(format!("serializing stimuli: {e}")))?;
        }
        write_expected(ctx, L1_FILE, shard_text(&l1).as_bytes())?;
        write_expected(ctx, L2_FILE, shard_text(&l2).as_bytes())?;
        write_expected(ctx, STIMULI_FILE, &stim_csv)?;
        for rel in [L1_FILE, L2_FILE, STIMULI_FILE] {
            manifest.record(rel)?;
        }
        Ok(CorpusFiles {
            l1: ctx.out_dir.join(L1_FILE),
            l2: ctx.out_dir.join(L2_FILE),
            stimuli: Some(ctx.out_dir.join(STIMULI_FILE)),
        })
    } else {
        let l1 = ctx.resolve_input(corpus.l1_path.as_ref().expect("validated"));
        let l2 = ctx.resolve_input(corpus.l2_path.as_ref().expect("validated"));
        manifest.record_input("l1_corpus", &l1)?;
        manifest.record_input("l2_corpus", &l2)?;
        let stimuli = match &corpus.stimuli_path {
            Some(p) => {
                let p = ctx.resolve_input(p);
                manifest.record_input("stimuli", &p)?;
                Some(p)
            }
            None => None,
        };
        Ok(CorpusFiles { l1, l2, stimuli })
    }
}

fn shard_text(shard: &CorpusShard) -> String {
    let mut text = shard.documents.join("\n");
    text.push('\n');
    text
}

/// Write `expected` to `rel` unless the identical bytes are already there.
/// Different bytes mean the directory holds output from another experiment.
fn write_expected(ctx: &Context, rel: &str, expected: &[u8]) -> Result<(), CliError> {
    let path = ctx.out_dir.join(rel);
    if path.exists() {
        let actual = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        if actual == expected {
            return Ok(());
        }
        if !ctx.force {
            return Err(CliError::Data(format!(
                "{} does not match what this config generates; pass --force to overwrite",
                path.display()
            )));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(&path, expected).map_err(|e| io_err(&path, e))
}

pub fn load_shards(
    ctx: &Context,
    files: &CorpusFiles,
) -> Result<(CorpusShard, CorpusShard), CliError> {
    let l1 = ingest(&files.l1, LangTag::L1, &ctx.config.corpus.l1_name)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let l2 = ingest(&files.l2, LangTag::L2, &ctx.config.corpus.l2_name)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok((l1, l2))
}

/// Load the experiment's tokenizer, verifying it is the one the manifest
/// recorded.
pub fn load_tokenizer(ctx: &Context, manifest: &mut Manifest) -> Result<TokenizerModel, CliError> {
    manifest.require(TOKENIZER_FILE, ctx.force, "primetrace train-tokenizer")?;
    Ok(TokenizerModel::load(&ctx.out_dir.join(TOKENIZER_FILE))?)
}

/// Write a text artifact under the out dir, creating parents.
pub fn write_artifact(ctx: &Context, rel: &str, content: &str) -> Result<(), CliError> {
    let path = ctx.out_dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(&path, content).map_err(|e| io_err(&path, e))
}
