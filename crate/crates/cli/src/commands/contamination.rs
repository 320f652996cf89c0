//! Scan the L1 corpus for lines that read like L2. Writes one row per line
//! with its log-odds toward the other language and whether it crossed the
//! configured threshold.

use std::fmt::Write as _;

use primetrace::corpus::{train_language_id, LangTag};

use crate::commands::{ensure_corpora, load_shards, write_artifact};
use crate::config::Context;
use crate::errors::CliError;
use crate::manifest::{Lock, Manifest};

pub const CONTAMINATION_FILE: &str = "contamination.csv";

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let _lock = Lock::acquire(&ctx.out_dir, "contamination")?;
    let mut manifest = Manifest::open_or_create(ctx)?;
    let files = ensure_corpora(ctx, &mut manifest)?;
    manifest.save()?;

    let (l1, l2) = load_shards(ctx, &files)?;
    let c = &ctx.config.contamination;
    let model = train_language_id(&l1, &l2, c.order, c.smoothing)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut csv = format!("# manifest {}\n", ctx.experiment_id);
    csv.push_str("line_index,log_odds,flagged\n");
    let mut flagged = 0usize;
    for (i, line) in l1.documents.iter().enumerate() {
        let log_odds = model.log_odds_other(line, LangTag::L1);
        let hit = log_odds > c.threshold;
        flagged += hit as usize;
        let _ = writeln!(csv, "{i},{log_odds},{hit}");
    }
    write_artifact(ctx, CONTAMINATION_FILE, &csv)?;
    manifest.record(CONTAMINATION_FILE)?;
    manifest.save()?;

    let fraction = if l1.documents.is_empty() {
        0.0
    } else {
        flagged as f64 / l1.documents.len() as f64
    };
    println!(
        "scanned {} lines of {}: {flagged} flagged as {}-like (fraction {fraction:.5})",
        l1.documents.len(),
        ctx.config.corpus.l1_name,
        ctx.config.corpus.l2_name,
    );
    println!("report: {}", ctx.out_dir.join(CONTAMINATION_FILE).display());
    Ok(())
}
