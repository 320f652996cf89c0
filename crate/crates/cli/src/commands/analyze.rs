//! Fit the mixed model to a finished sweep and emit the coefficient table,
//! the likelihood-ratio test, and a plain-text report naming the earliest
//! step whose interaction survives the multiple-comparison correction.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use primetrace::priming::read_sweep_csv;
use primetrace::stats::{analyze_sweep, AnalysisReport};

use crate::commands::{write_artifact, COEFFICIENTS_FILE, LRT_FILE, REPORT_FILE, SWEEP_FILE};
use crate::config::Context;
use crate::errors::CliError;
use crate::manifest::{Lock, Manifest};

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let _lock = Lock::acquire(&ctx.out_dir, "analyze")?;
    let mut manifest = Manifest::open_or_create(ctx)?;
    manifest.require(SWEEP_FILE, ctx.force, "primetrace sweep")?;
    manifest.save()?;

    let (_, measurements) = read_sweep_csv(&ctx.out_dir.join(SWEEP_FILE))?;
    let steps: BTreeSet<u64> = measurements.iter().map(|m| m.step).collect();
    if steps.len() < 2 {
        return Err(CliError::Config(format!(
            "the sweep covers {} checkpoint(s); step contrasts need at least 2 — \
             extend checkpoints.fine_count and rerun pretrain + sweep",
            steps.len()
        )));
    }
    let opts = ctx.config.analysis_options();
    if !steps.contains(&opts.baseline_step) {
        return Err(CliError::Config(format!(
            "baseline step {} was not swept (have: {:?})",
            opts.baseline_step,
            steps.iter().take(8).collect::<Vec<_>>()
        )));
    }

    let report = analyze_sweep(&measurements, &opts)?;
    write_artifact(ctx, COEFFICIENTS_FILE, &coefficients_csv(ctx, &report))?;
    write_artifact(ctx, LRT_FILE, &lrt_csv(ctx, &report))?;
    write_artifact(ctx, REPORT_FILE, &text_report(ctx, &report))?;
    for rel in [COEFFICIENTS_FILE, LRT_FILE, REPORT_FILE] {
        manifest.record(rel)?;
    }
    manifest.save()?;

    println!(
        "LRT (prime x step): statistic {:.4}, df {}, p {:.6}",
        report.lrt.statistic, report.lrt.df, report.lrt.p_value
    );
    match report.earliest_significant_step {
        Some(step) => println!(
            "earliest significant step: {step} ({:?}-adjusted p < {})",
            report.correction, report.alpha
        ),
        None => println!("earliest significant step: none"),
    }
    if let Some((step, effect)) = report.mean_effect_by_step.last() {
        println!("mean priming effect at step {step}: {effect:.5}");
    }
    println!("report: {}", ctx.out_dir.join(REPORT_FILE).display());
    Ok(())
}

fn coefficients_csv(ctx: &Context, report: &AnalysisReport) -> String {
    let mut s = format!("# manifest {}\n", ctx.experiment_id);
    s.push_str("term,estimate,se,t,df,p_raw,p_adjusted\n");
    for row in &report.coefficients {
        let adjusted = row.p_adjusted.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{adjusted}",
            row.term, row.estimate, row.se, row.t, row.df, row.p_raw
        );
    }
    s
}

fn lrt_csv(ctx: &Context, report: &AnalysisReport) -> String {
    format!(
        "# manifest {}\nstatistic,df,p\n{},{},{}\n",
        ctx.experiment_id, report.lrt.statistic, report.lrt.df, report.lrt.p_value
    )
}

fn text_report(ctx: &Context, report: &AnalysisReport) -> String {
    let fit = &report.fit;
    let mut s = String::new();
    let _ = writeln!(s, "mixed-model analysis of the priming sweep");
    let _ = writeln!(s, "manifest {}", ctx.experiment_id);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "rows n = {}, fixed effects p = {}, items g = {}",
        fit.n, fit.p, fit.g,
    );
    let _ = writeln!(
        s,
        "sigma2 = {:.6}  tau2 = {:.6}  loglik = {:.4}",
        fit.sigma2, fit.tau2, fit.loglik
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "likelihood-ratio test, prime x step interaction: chi2({}) = {:.4}, p = {:.6}",
        report.lrt.df, report.lrt.statistic, report.lrt.p_value
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<28} {:>12} {:>10} {:>8} {:>8} {:>10} {:>10}",
        "term", "estimate", "se", "t", "df", "p_raw", "p_adj"
    );
    for row in &report.coefficients {
        let adj = row.p_adjusted.map(|p| format!("{p:.6}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<28} {:>12.6} {:>10.6} {:>8.3} {:>8.0} {:>10.6} {:>10}",
            row.term, row.estimate, row.se, row.t, row.df, row.p_raw, adj
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "correction: {:?} at alpha = {}; the family is the per-step interaction terms",
        report.correction, report.alpha
    );
    match report.earliest_significant_step {
        Some(step) => {
            let _ = writeln!(s, "earliest significant step: {step}");
        }
        None => {
            let _ = writeln!(s, "earliest significant step: none");
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "mean priming effect by step (P_N after PO prime - after DO prime):");
    for (step, effect) in &report.mean_effect_by_step {
        let _ = writeln!(s, "  step {step:>8}  {effect:>9.5}");
    }
    s
}
