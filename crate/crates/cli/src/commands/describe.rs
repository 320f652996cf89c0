//! Read-only summary of the resolved experiment: the config after overrides,
//! derived seeds and schedules, model size, and the state of artifacts in
//! the output directory. Takes no lock and writes nothing.

use primetrace::corpus::tokens_seen;
use primetrace::tokenizer::TokenizerModel;

use crate::commands::TOKENIZER_FILE;
use crate::config::Context;
use crate::errors::CliError;
use crate::manifest::{hash_file, ManifestData, MANIFEST_FILE};

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    println!("experiment {}", ctx.experiment_id);
    println!("out dir    {}", ctx.out_dir.display());
    println!("seed       {} (master)", cfg.master_seed);
    for label in ["synthetic-corpus", "synthetic-stimuli", "tokenizer-train", "model-init", "train-stream"] {
        println!("  {label:<18} -> {}", ctx.seed(label));
    }

    let schedule = cfg.curriculum();
    let total = schedule.total_steps;
    println!();
    println!(
        "curriculum: {total} steps, boundary {}, batch {} x seq {}",
        schedule.phase_boundary, schedule.batch_size, schedule.seq_len
    );
    let at_boundary = tokens_seen(schedule.phase_boundary, &schedule)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let at_end = tokens_seen(total, &schedule).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "tokens: {} {} then mixed to {} {} + {} {}",
        at_boundary.l1,
        cfg.corpus.l1_name,
        at_end.l1,
        cfg.corpus.l1_name,
        at_end.l2,
        cfg.corpus.l2_name
    );

    let tok_path = ctx.out_dir.join(TOKENIZER_FILE);
    let vocab = if tok_path.exists() {
        let tok = TokenizerModel::load(&tok_path)?;
        println!(
            "tokenizer: trained, {} tokens, fingerprint {}",
            tok.vocab_size(),
            tok.fingerprint()
        );
        tok.vocab_size() as u32
    } else {
        println!(
            "tokenizer: not trained yet (configured vocab_size {})",
            cfg.tokenizer.vocab_size
        );
        cfg.tokenizer.vocab_size as u32
    };
    let model_cfg = cfg.model_config(vocab, cfg.master_seed);
    println!("model: {}", model_cfg.describe());

    let checkpoints = cfg.checkpoint_steps();
    let preview: Vec<u64> = checkpoints.iter().copied().take(4).collect();
    println!();
    println!(
        "checkpoints: {} scheduled (coarse every {}, fine every {} x {} after the boundary)",
        checkpoints.len(),
        cfg.coarse_interval(),
        cfg.fine_interval(),
        cfg.checkpoints.fine_count
    );
    println!("  first {preview:?} ... last {:?}", checkpoints.iter().next_back().unwrap());
    let sweep = cfg.sweep_steps();
    println!(
        "sweep: {} checkpoints from {} to {}, baseline {}",
        sweep.len(),
        sweep.first().unwrap(),
        sweep.last().unwrap(),
        cfg.baseline_step()
    );

    let manifest_path = ctx.out_dir.join(MANIFEST_FILE);
    println!();
    if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| CliError::Data(format!("cannot read manifest: {e}")))?;
        let data: ManifestData = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("manifest is not valid JSON: {e}")))?;
        let marker = if data.experiment_id == ctx.experiment_id {
            "matches this config"
        } else {
            "STALE: different config/seed"
        };
        println!("manifest: {} artifacts, {marker}", data.artifacts.len());
        for (rel, recorded) in &data.artifacts {
            if rel.starts_with("in:") {
                continue;
            }
            let path = ctx.out_dir.join(rel);
            let state = if !path.exists() {
                "missing"
            } else if hash_file(&path)? == *recorded {
                "ok"
            } else {
                "drifted"
            };
            println!("  {state:<8} {rel}");
        }
    } else {
        println!("manifest: none yet (no command has written to this out dir)");
    }
    Ok(())
}
