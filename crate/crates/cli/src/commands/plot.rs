//! Render the sweep as two standalone SVGs: mean normalized PO-target
//! probability by prime type across checkpoints, and the priming-effect
//! trajectory. Each file embeds its numbers as a comment so the figure can
//! be audited (and regenerated) without the CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use primetrace::priming::{read_sweep_csv, PrimeType};
use primetrace::stats::mean_effect_by_step;

use crate::commands::{write_artifact, EFFECT_PLOT_FILE, PN_PLOT_FILE, SWEEP_FILE};
use crate::config::Context;
use crate::errors::CliError;
use crate::manifest::{Lock, Manifest};
use crate::svg::{self, Chart, Series};

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let _lock = Lock::acquire(&ctx.out_dir, "plot")?;
    let mut manifest = Manifest::open_or_create(ctx)?;
    manifest.require(SWEEP_FILE, ctx.force, "primetrace sweep")?;
    manifest.save()?;

    let (_, measurements) = read_sweep_csv(&ctx.out_dir.join(SWEEP_FILE))?;
    if measurements.is_empty() {
        return Err(CliError::Data("the sweep CSV contains no measurements".into()));
    }

    // mean P_N(T_PO | prime) per (step, prime type)
    let mut cells: BTreeMap<(u64, PrimeType), (f64, usize)> = BTreeMap::new();
    for m in &measurements {
        let cell = cells.entry((m.step, m.prime_type)).or_insert((0.0, 0));
        cell.0 += m.p_n_po_target;
        cell.1 += 1;
    }
    let mean = |step: u64, pt: PrimeType| {
        cells.get(&(step, pt)).map(|(sum, n)| sum / *n as f64).unwrap_or(f64::NAN)
    };
    let steps: Vec<u64> = {
        let mut s: Vec<u64> = cells.keys().map(|(step, _)| *step).collect();
        s.dedup();
        s
    };

    let mut table = String::from("data:\nstep,mean_pn_after_po_prime,mean_pn_after_do_prime\n");
    for &step in &steps {
        let _ = writeln!(table, "{step},{},{}", mean(step, PrimeType::Po), mean(step, PrimeType::Do));
    }
    let comments =
        vec![format!("manifest: {}", ctx.experiment_id), table.trim_end().to_string()];
    let pn_chart = Chart {
        title: "normalized PO-target probability by prime type".into(),
        x_label: "pre-training step".into(),
        y_label: "mean P_N(PO target)".into(),
        series: vec![
            Series {
                label: "after PO prime".into(),
                color: "#1f77b4",
                points: steps.iter().map(|&s| (s as f64, mean(s, PrimeType::Po))).collect(),
            },
            Series {
                label: "after DO prime".into(),
                color: "#d62728",
                points: steps.iter().map(|&s| (s as f64, mean(s, PrimeType::Do))).collect(),
            },
        ],
        zero_line: false,
        comments: &comments,
    };
    write_artifact(ctx, PN_PLOT_FILE, &svg::render(&pn_chart))?;

    let effects = mean_effect_by_step(&measurements);
    let mut table = String::from("data:\nstep,mean_priming_effect\n");
    for (step, effect) in &effects {
        let _ = writeln!(table, "{step},{effect}");
    }
    let comments =
        vec![format!("manifest: {}", ctx.experiment_id), table.trim_end().to_string()];
    let effect_chart = Chart {
        title: "priming effect across pre-training".into(),
        x_label: "pre-training step".into(),
        y_label: "P_N(PO | PO prime) - P_N(PO | DO prime)".into(),
        series: vec![Series {
            label: "priming effect".into(),
            color: "#2ca02c",
            points: effects.iter().map(|&(s, e)| (s as f64, e)).collect(),
        }],
        zero_line: true,
        comments: &comments,
    };
    write_artifact(ctx, EFFECT_PLOT_FILE, &svg::render(&effect_chart))?;

    for rel in [PN_PLOT_FILE, EFFECT_PLOT_FILE] {
        manifest.record(rel)?;
    }
    manifest.save()?;
    println!(
        "plots: {} and {}",
        ctx.out_dir.join(PN_PLOT_FILE).display(),
        ctx.out_dir.join(EFFECT_PLOT_FILE).display()
    );
    Ok(())
}
