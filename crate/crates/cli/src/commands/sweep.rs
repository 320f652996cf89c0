//! Measure normalized PO-target probabilities at every scheduled checkpoint.
//! The heavy lifting (and resumability) lives in the library; this command
//! wires checkpoints, tokenizer, and stimuli together and verifies hashes.

use primetrace::lm::GptModel;
use primetrace::priming::{self, load_stimuli, PrimingError, Stoplist};
use primetrace::stats::mean_effect_by_step;

use crate::commands::{checkpoint_rel, ensure_corpora, interrupted, load_tokenizer, SWEEP_FILE};
use crate::config::Context;
use crate::errors::CliError;
use crate::manifest::{Lock, Manifest};

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let _lock = Lock::acquire(&ctx.out_dir, "sweep")?;
    let mut manifest = Manifest::open_or_create(ctx)?;
    let files = ensure_corpora(ctx, &mut manifest)?;
    manifest.save()?;

    let tokenizer = load_tokenizer(ctx, &mut manifest)?;
    let stimuli_path = files.stimuli.ok_or_else(|| {
        CliError::Config("no stimuli: set corpus.stimuli_path or [corpus.synthetic]".into())
    })?;
    let set = load_stimuli(&stimuli_path, &Stoplist::default(), ctx.strict)?;
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }

    let steps = ctx.config.sweep_steps();
    for &step in &steps {
        manifest.require(&checkpoint_rel(step), ctx.force, "primetrace pretrain")?;
    }
    manifest.save()?;

    let out_dir = ctx.out_dir.clone();
    let loader = |step: u64| -> Result<(GptModel, String), PrimingError> {
        if interrupted() {
            return Err(PrimingError::Checkpoint("interrupted".into()));
        }
        eprintln!("scoring checkpoint at step {step}");
        let (model, meta) = GptModel::load_checkpoint(&out_dir.join(checkpoint_rel(step)))?;
        Ok((model, meta.tokenizer_fingerprint))
    };

    let csv_path = ctx.out_dir.join(SWEEP_FILE);
    let result = priming::sweep(
        &steps,
        loader,
        &tokenizer,
        &set.items,
        &set.file_sha256,
        &ctx.config.sweep.joiner,
        &csv_path,
    );
    let output = match result {
        Ok(output) => output,
        // an existing sweep.csv from a different configuration blocks the
        // run; --force discards it
        Err(PrimingError::ManifestMismatch { .. }) if ctx.force => {
            std::fs::remove_file(&csv_path).ok();
            priming::sweep(
                &steps,
                loader,
                &tokenizer,
                &set.items,
                &set.file_sha256,
                &ctx.config.sweep.joiner,
                &csv_path,
            )?
        }
        Err(e) => return Err(e.into()),
    };

    manifest.record(SWEEP_FILE)?;
    manifest.save()?;

    let effects = mean_effect_by_step(&output.measurements);
    if let Some((step, effect)) = effects.last() {
        println!(
            "sweep complete: {} checkpoints x {} items -> {}; mean effect at step {step}: {effect:.5}",
            steps.len(),
            set.items.len(),
            csv_path.display()
        );
    }
    Ok(())
}
