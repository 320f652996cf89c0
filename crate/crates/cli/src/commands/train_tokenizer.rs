use primetrace::tokenizer::train_bpe;

use crate::commands::{ensure_corpora, load_shards, TOKENIZER_FILE};
use crate::config::Context;
use crate::errors::CliError;
use crate::manifest::{Lock, Manifest};

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let _lock = Lock::acquire(&ctx.out_dir, "train-tokenizer")?;
    let mut manifest = Manifest::open_or_create(ctx)?;
    let files = ensure_corpora(ctx, &mut manifest)?;
    manifest.save()?;

    let (l1, l2) = load_shards(ctx, &files)?;
    let l1_text = l1.documents.join("\n");
    let l2_text = l2.documents.join("\n");
    let tok_cfg = &ctx.config.tokenizer;
    let tokenizer = train_bpe(
        &l1_text,
        &l2_text,
        tok_cfg.proportions,
        tok_cfg.vocab_size,
        ctx.seed("tokenizer-train"),
    )?;
    tokenizer.save(&ctx.out_dir.join(TOKENIZER_FILE))?;
    manifest.record(TOKENIZER_FILE)?;
    manifest.save()?;

    println!(
        "tokenizer: {} tokens ({} merges), fingerprint {}",
        tokenizer.vocab_size(),
        tokenizer.merges().len(),
        tokenizer.fingerprint()
    );
    Ok(())
}
