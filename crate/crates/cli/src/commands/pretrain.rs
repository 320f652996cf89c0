//! Curriculum pre-training with scheduled checkpoints. Interruptible and
//! resumable: the newest valid checkpoint (with its embedded data-stream
//! state) is the resume point, and a resumed run reproduces the
//! uninterrupted run bit for bit — including the loss log.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use primetrace::corpus::{tokens_seen, TrainStream};
use primetrace::lm::GptModel;

use crate::commands::{
    checkpoint_rel, ensure_corpora, interrupted, load_shards, load_tokenizer, TRAIN_LOG_FILE,
};
use crate::config::Context;
use crate::errors::{io_err, CliError};
use crate::manifest::{Lock, Manifest};

pub fn run(ctx: &Context, until_step: Option<u64>) -> Result<(), CliError> {
    let _lock = Lock::acquire(&ctx.out_dir, "pretrain")?;
    let mut manifest = Manifest::open_or_create(ctx)?;
    let files = ensure_corpora(ctx, &mut manifest)?;
    manifest.save()?;

    let tokenizer = load_tokenizer(ctx, &mut manifest)?;
    let fingerprint = tokenizer.fingerprint();
    let (l1, l2) = load_shards(ctx, &files)?;
    let schedule = ctx.config.curriculum();
    let total = schedule.total_steps;
    let target = until_step.unwrap_or(total).min(total);
    let tc = ctx.config.train_config();
    let checkpoint_steps: BTreeSet<u64> = ctx.config.checkpoint_steps();

    // resume from the newest recorded checkpoint, if any
    let resume = newest_recorded_checkpoint(ctx, &manifest, total)?;
    let (mut model, mut stream, mut log) = match resume {
        Some(step) => {
            let rel = checkpoint_rel(step);
            manifest.require(&rel, ctx.force, "primetrace pretrain")?;
            let (model, meta) =
                GptModel::load_checkpoint_expecting(&ctx.out_dir.join(rel), &fingerprint)?;
            let state = meta.stream_state.ok_or_else(|| {
                CliError::Data(format!("checkpoint at step {step} carries no stream state"))
            })?;
            let stream = TrainStream::resume(&l1, &l2, &tokenizer, schedule, state)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let log = TrainLog::load_truncated(ctx, step)?;
            eprintln!("resuming from checkpoint at step {step}");
            (model, stream, log)
        }
        None => {
            let vocab = tokenizer.vocab_size() as u32;
            let model = GptModel::new(ctx.config.model_config(vocab, ctx.config.master_seed))?;
            let stream = TrainStream::new(&l1, &l2, &tokenizer, schedule, ctx.seed("train-stream"))
                .map_err(|e| CliError::Config(e.to_string()))?;
            (model, stream, TrainLog::new(ctx))
        }
    };

    let start = model.step();
    if start >= target {
        log.flush(ctx)?;
        manifest.record(TRAIN_LOG_FILE)?;
        manifest.save()?;
        println!("nothing to do: at step {start} of requested {target}");
        return Ok(());
    }

    let progress_every = (total / 50).clamp(1, 500);
    let timer = Instant::now();
    let mut stepped: u64 = 0;
    let cols = (schedule.seq_len - 1) as usize;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();

    for step in start..target {
        if interrupted() {
            save_checkpoint(ctx, &mut manifest, &model, &stream, &fingerprint, step)?;
            log.flush(ctx)?;
            manifest.record(TRAIN_LOG_FILE)?;
            manifest.save()?;
            return Err(CliError::Interrupted(format!(
                "interrupted at step {step}; rerun pretrain to resume"
            )));
        }
        if checkpoint_steps.contains(&step) {
            save_checkpoint(ctx, &mut manifest, &model, &stream, &fingerprint, step)?;
            log.flush(ctx)?;
            manifest.save()?;
        }
        let batch = stream.next_batch(step).map_err(|e| CliError::Data(e.to_string()))?;
        split_rows(&batch.tokens, batch.count, batch.seq_len, &mut inputs, &mut targets);
        let stats = match model.train_step(&inputs, &targets, batch.count, cols, &tc) {
            Ok(stats) => stats,
            Err(e) => {
                log.flush(ctx)?;
                return Err(e.into());
            }
        };
        let seen = tokens_seen(step + 1, &schedule).map_err(|e| CliError::Data(e.to_string()))?;
        log.push(step, stats.loss_nats, stats.lr, seen.l1, seen.l2);
        stepped += 1;
        if step % progress_every == 0 || step + 1 == target {
            let rate = stepped as f64 / timer.elapsed().as_secs_f64().max(1e-9);
            eprintln!(
                "step {step}/{total}  loss {:.4}  lr {:.3e}  ({rate:.2} steps/s)",
                stats.loss_nats, stats.lr
            );
        }
    }

    save_checkpoint(ctx, &mut manifest, &model, &stream, &fingerprint, target)?;
    log.flush(ctx)?;
    manifest.record(TRAIN_LOG_FILE)?;
    manifest.save()?;
    if target < total {
        println!("paused at step {target} of {total}; rerun pretrain to continue");
    } else {
        println!(
            "pretraining complete: {total} steps, {} checkpoints, log at {}",
            ctx.config.checkpoint_steps().len(),
            ctx.out_dir.join(TRAIN_LOG_FILE).display()
        );
    }
    Ok(())
}

fn save_checkpoint(
    ctx: &Context,
    manifest: &mut Manifest,
    model: &GptModel,
    stream: &TrainStream,
    fingerprint: &str,
    step: u64,
) -> Result<(), CliError> {
    let rel = checkpoint_rel(step);
    let path = ctx.out_dir.join(&rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    model.save_checkpoint(&path, fingerprint, Some(stream.state()))?;
    manifest.record(&rel)?;
    Ok(())
}

/// Choose the largest recorded checkpoint step ≤ `total` to resume from.
/// Only manifest-recorded checkpoints qualify; stray files are ignored.
fn newest_recorded_checkpoint(
    ctx: &Context,
    manifest: &Manifest,
    total: u64,
) -> Result<Option<u64>, CliError> {
    let mut best = None;
    for rel in manifest.data.artifacts.keys() {
        if let Some(step) = parse_checkpoint_rel(rel) {
            if step <= total && ctx.out_dir.join(rel).exists() {
                best = best.max(Some(step));
            }
        }
    }
    Ok(best)
}

pub fn parse_checkpoint_rel(rel: &str) -> Option<u64> {
    let name = rel.strip_prefix("checkpoints/step-")?;
    name.strip_suffix(".bin")?.parse().ok()
}

fn split_rows(
    tokens: &[u32],
    rows: usize,
    seq_len: usize,
    inputs: &mut Vec<u32>,
    targets: &mut Vec<u32>,
) {
    inputs.clear();
    targets.clear();
    for r in 0..rows {
        let row = &tokens[r * seq_len..(r + 1) * seq_len];
        inputs.extend_from_slice(&row[..seq_len - 1]);
        targets.extend_from_slice(&row[1..]);
    }
}

/// The loss log, kept as raw lines so a resumed run reproduces the
/// uninterrupted file byte for byte (no float reformatting round trips).
struct TrainLog {
    header: Vec<String>,
    rows: Vec<String>,
}

impl TrainLog {
    fn new(ctx: &Context) -> TrainLog {
        TrainLog {
            header: vec![
                format!("# manifest {}", ctx.experiment_id),
                "step,loss_nats,lr,l1_tokens_seen,l2_tokens_seen".to_string(),
            ],
            rows: Vec::new(),
        }
    }

    /// Read an existing log and keep only rows before the resume step.
    fn load_truncated(ctx: &Context, resume_step: u64) -> Result<TrainLog, CliError> {
        let mut log = TrainLog::new(ctx);
        let path = ctx.out_dir.join(TRAIN_LOG_FILE);
        if !path.exists() {
            return Ok(log);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("step,") {
                continue;
            }
            let step: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Data(format!("malformed log row: {line}")))?;
            if step < resume_step {
                log.rows.push(line.to_string());
            }
        }
        if log.rows.len() as u64 != resume_step {
            return Err(CliError::Data(format!(
                "{} has {} usable rows but the resume checkpoint is at step {resume_step}; \
                 delete the log or the checkpoints and rerun",
                path.display(),
                log.rows.len()
            )));
        }
        Ok(log)
    }

    fn push(&mut self, step: u64, loss: f64, lr: f64, l1_seen: u64, l2_seen: u64) {
        self.rows.push(format!("{step},{loss},{lr},{l1_seen},{l2_seen}"));
    }

    fn flush(&self, ctx: &Context) -> Result<(), CliError> {
        let path = ctx.out_dir.join(TRAIN_LOG_FILE);
        let tmp = path.with_extension("csv.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        for line in self.header.iter().chain(self.rows.iter()) {
            writeln!(f, "{line}").map_err(|e| io_err(&tmp, e))?;
        }
        f.sync_all().ok();
        std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }
}
