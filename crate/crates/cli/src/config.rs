//! Experiment configuration: a single strict TOML file, overridable per key
//! through `PRIMETRACE_`-prefixed environment variables and the global
//! `--seed`/`--out` flags. Unknown keys are rejected everywhere — a silently
//! ignored typo is worse than an error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use primetrace::corpus::{CurriculumSchedule, GrammarConfig};
use primetrace::lm::{LrSchedule, ModelConfig, TrainConfig};
use primetrace::stats::{AnalysisOptions, Correction};
use primetrace::util::{derive_seed, sha256_hex};
use serde::{Deserialize, Serialize};

use crate::errors::CliError;

pub const ENV_PREFIX: &str = "PRIMETRACE_";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Directory all artifacts go to; `--out` overrides.
    pub out_dir: Option<PathBuf>,
    /// Every derived seed (corpus, tokenizer, model init, data order) is a
    /// deterministic function of this one; `--seed` overrides.
    pub master_seed: u64,
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub checkpoints: CheckpointSection,
    pub sweep: SweepSection,
    pub stats: StatsSection,
    pub contamination: ContaminationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: None,
            master_seed: 0,
            corpus: CorpusSection::default(),
            tokenizer: TokenizerSection::default(),
            schedule: ScheduleSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            checkpoints: CheckpointSection::default(),
            sweep: SweepSection::default(),
            stats: StatsSection::default(),
            contamination: ContaminationSection::default(),
        }
    }
}

/// Where the two corpora and the stimulus file come from. Either give file
/// paths (resolved relative to the config file) or a `[corpus.synthetic]`
/// table, in which case the files are generated into `<out>/corpus/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub l1_name: String,
    pub l2_name: String,
    pub l1_path: Option<PathBuf>,
    pub l2_path: Option<PathBuf>,
    pub stimuli_path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            l1_name: "L1".into(),
            l2_name: "L2".into(),
            l1_path: None,
            l2_path: None,
            stimuli_path: None,
            synthetic: None,
        }
    }
}

/// Knobs of the built-in bilingual grammar (shared sentence templates,
/// disjoint vocabularies).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n_docs: u32,
    pub n_stimuli: u32,
    /// Base probability of the prepositional variant.
    pub po_rate: f64,
    /// Probability that a sentence repeats the previous sentence's structure.
    pub persistence: f64,
    pub sentences_per_doc: (u32, u32),
    /// Use the same template shapes in both languages.
    pub shared_structure: bool,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let g = GrammarConfig::default();
        SyntheticSection {
            n_docs: 400,
            n_stimuli: 16,
            po_rate: g.po_rate,
            persistence: g.persistence,
            sentences_per_doc: g.sentences_per_doc,
            shared_structure: g.shared_structure,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub vocab_size: usize,
    /// Character-volume shares of (L1, L2) text in tokenizer training.
    pub proportions: (f64, f64),
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection { vocab_size: 512, proportions: (0.75, 0.25) }
    }
}

/// Mirrors the curriculum: phase 1 is L1-only until `phase_boundary`, then
/// phase 2 mixes in L2 at `phase2_mix`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub total_steps: u64,
    pub phase_boundary: u64,
    pub phase1_mix: f64,
    pub phase2_mix: f64,
    pub batch_size: u32,
    pub seq_len: u32,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            total_steps: 20_000,
            phase_boundary: 10_000,
            phase1_mix: 0.0,
            phase2_mix: 0.5,
            batch_size: 4,
            seq_len: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_multiplier: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub tie_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_layers: 4,
            d_model: 256,
            n_heads: 4,
            ff_multiplier: 4,
            max_seq_len: 64,
            dropout: 0.0,
            init_std: 0.02,
            tie_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub warmup_steps: u64,
    /// "constant" or "cosine"; cosine decays to `min_lr_frac` of the peak
    /// over `schedule.total_steps`.
    pub lr_decay: LrDecay,
    pub min_lr_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 3e-4,
            warmup_steps: 200,
            lr_decay: LrDecay::Cosine,
            min_lr_frac: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    Constant,
    Cosine,
}

/// When to checkpoint. Zero means "derive from the schedule": coarse every
/// `total/10` steps, and a fine window of `fine_count + 1` checkpoints
/// starting at the phase boundary with spacing
/// `(total − boundary) / (2·fine_count)` — the window always covers the
/// first half of phase 2, scaled down from the reference shape of 21
/// closely spaced checkpoints right after the boundary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointSection {
    pub coarse_interval: u64,
    pub fine_interval: u64,
    pub fine_count: u64,
}

impl Default for CheckpointSection {
    fn default() -> Self {
        CheckpointSection { coarse_interval: 0, fine_interval: 0, fine_count: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Inserted between prime and target when scoring.
    pub joiner: String,
    /// Also measure the coarse checkpoints (full-trajectory plots); the
    /// analysis window is always the boundary + fine checkpoints.
    pub include_coarse: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { joiner: ". ".into(), include_coarse: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    /// "holm", "bonferroni", or "bh".
    pub correction: CorrectionName,
    /// Reference step for the step contrasts; 0 means the phase boundary.
    pub baseline_step: u64,
    pub alpha: f64,
    /// Model logit(P_N) instead of P_N.
    pub logit_response: bool,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            correction: CorrectionName::Holm,
            baseline_step: 0,
            alpha: 0.05,
            logit_response: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionName {
    Holm,
    Bonferroni,
    Bh,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContaminationSection {
    /// Character n-gram order of the language classifier.
    pub order: usize,
    pub smoothing: f64,
    /// Log-odds above which a line counts as the other language.
    pub threshold: f64,
}

impl Default for ContaminationSection {
    fn default() -> Self {
        ContaminationSection { order: 2, smoothing: 0.5, threshold: 0.0 }
    }
}

/// A parsed config plus everything resolved around it.
pub struct Context {
    pub config: ExperimentConfig,
    /// Directory of the config file; relative corpus paths resolve here.
    pub config_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Stable identity of (config ⊕ seed ⊕ tool version); every generated
    /// file references it.
    pub experiment_id: String,
    pub force: bool,
    pub strict: bool,
}

impl Context {
    pub fn load(
        config_path: &Path,
        seed: Option<u64>,
        out: Option<PathBuf>,
        force: bool,
        strict: bool,
    ) -> Result<Context, CliError> {
        let text = std::fs::read_to_string(config_path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", config_path.display()))
        })?;
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
        apply_env_overrides(&mut value, std::env::vars())?;
        let mut config: ExperimentConfig = value
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
        if let Some(seed) = seed {
            config.master_seed = seed;
        }
        if let Some(out) = out {
            config.out_dir = Some(out);
        }
        let out_dir = config.out_dir.clone().ok_or_else(|| {
            CliError::Config("no output directory: set out_dir in the config or pass --out".into())
        })?;
        config.validate()?;
        let experiment_id = experiment_id(&config);
        let config_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Context { config, config_dir, out_dir, experiment_id, force, strict })
    }

    /// Resolve a corpus-section path against the config file's directory.
    pub fn resolve_input(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    pub fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.master_seed, label)
    }
}

/// Hash of the resolved config echo plus the tool version. Timestamps and
/// the output location are deliberately excluded: the same experiment run
/// into two directories references the same identity, and reruns are
/// byte-stable.
pub fn experiment_id(config: &ExperimentConfig) -> String {
    let mut echo_cfg = config.clone();
    echo_cfg.out_dir = None;
    let echo = serde_json::to_string(&echo_cfg).expect("config serializes");
    sha256_hex(format!("primetrace {} {echo}", env!("CARGO_PKG_VERSION")).as_bytes())
}

/// `PRIMETRACE_A__B__C=value` sets config key `a.b.c`. Double underscores
/// separate levels so keys like `total_steps` stay addressable. Values are
/// parsed as TOML (so `0.5`, `true`, `[4, 8]` work); anything unparsable is
/// taken as a string. Unknown keys fail later, at deserialization.
fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<(), CliError> {
    let mut overrides: Vec<(String, String)> = vars
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
        .collect();
    overrides.sort(); // deterministic application order
    for (key, raw) in overrides {
        let path: Vec<String> =
            key[ENV_PREFIX.len()..].split("__").map(|s| s.to_lowercase()).collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(CliError::Config(format!("malformed override variable {key}")));
        }
        let mut node = &mut *value;
        for seg in &path[..path.len() - 1] {
            let table = node.as_table_mut().ok_or_else(|| {
                CliError::Config(format!("{key}: {seg} is not a table in the config"))
            })?;
            node = table
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: parent is not a table")))?;
        table.insert(path[path.len() - 1].clone(), parse_env_value(&raw));
    }
    Ok(())
}

fn parse_env_value(raw: &str) -> toml::Value {
    if let Ok(doc) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = doc.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

impl ExperimentConfig {
    /// Structural validation beyond what serde enforces. Core types
    /// re-validate on construction; this catches cross-section problems.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        let c = &self.corpus;
        if c.synthetic.is_none() {
            if c.l1_path.is_none() || c.l2_path.is_none() {
                problems.push(
                    "corpus: give l1_path and l2_path, or a [corpus.synthetic] table".to_string(),
                );
            }
        } else if c.l1_path.is_some() || c.l2_path.is_some() || c.stimuli_path.is_some() {
            problems
                .push("corpus: synthetic generation and explicit paths are exclusive".to_string());
        }
        if let Some(s) = &c.synthetic {
            if s.n_docs == 0 {
                problems.push("corpus.synthetic.n_docs must be positive".into());
            }
            if s.n_stimuli == 0 {
                problems.push("corpus.synthetic.n_stimuli must be positive".into());
            }
        }
        if let Err(e) = self.curriculum().validate() {
            problems.push(e.to_string());
        }
        if self.model.max_seq_len + 1 < self.schedule.seq_len as usize {
            problems.push(format!(
                "model.max_seq_len {} cannot train on sequences of schedule.seq_len {}",
                self.model.max_seq_len, self.schedule.seq_len
            ));
        }
        let ck = &self.checkpoints;
        if ck.fine_count == 0 {
            problems.push("checkpoints.fine_count must be positive".into());
        }
        let fine_end =
            self.schedule.phase_boundary.saturating_add(self.fine_interval() * ck.fine_count);
        if fine_end > self.schedule.total_steps {
            problems.push(format!(
                "fine checkpoint window ends at step {fine_end}, past total_steps {}",
                self.schedule.total_steps
            ));
        }
        if self.stats.baseline_step != 0 && !self.sweep_steps().contains(&self.stats.baseline_step)
        {
            problems.push(format!(
                "stats.baseline_step {} is not one of the swept checkpoints",
                self.stats.baseline_step
            ));
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            problems.push(format!("stats.alpha {} must be in (0, 1)", self.stats.alpha));
        }
        if self.contamination.order == 0 {
            problems.push("contamination.order must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }

    pub fn curriculum(&self) -> CurriculumSchedule {
        let s = &self.schedule;
        CurriculumSchedule {
            total_steps: s.total_steps,
            phase_boundary: s.phase_boundary,
            phase1_mix: s.phase1_mix,
            phase2_mix: s.phase2_mix,
            batch_size: s.batch_size,
            seq_len: s.seq_len,
        }
    }

    pub fn grammar(&self) -> GrammarConfig {
        let s = self.corpus.synthetic.clone().unwrap_or_default();
        GrammarConfig {
            po_rate: s.po_rate,
            persistence: s.persistence,
            sentences_per_doc: s.sentences_per_doc,
            shared_structure: s.shared_structure,
            ..GrammarConfig::default()
        }
    }

    pub fn model_config(&self, vocab_size: u32, master_seed: u64) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            ff_multiplier: m.ff_multiplier,
            max_seq_len: m.max_seq_len,
            vocab_size,
            dropout: m.dropout,
            init_std: m.init_std,
            seed: derive_seed(master_seed, "model-init"),
            tie_embeddings: m.tie_embeddings,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: self.schedule.batch_size as usize,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
            schedule: match t.lr_decay {
                LrDecay::Constant => LrSchedule::Constant,
                LrDecay::Cosine => LrSchedule::Cosine {
                    total_steps: self.schedule.total_steps,
                    min_lr_frac: t.min_lr_frac,
                },
            },
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            grad_clip: if t.grad_clip > 0.0 { Some(t.grad_clip) } else { None },
        }
    }

    pub fn coarse_interval(&self) -> u64 {
        if self.checkpoints.coarse_interval > 0 {
            self.checkpoints.coarse_interval
        } else {
            (self.schedule.total_steps / 10).max(1)
        }
    }

    pub fn fine_interval(&self) -> u64 {
        if self.checkpoints.fine_interval > 0 {
            self.checkpoints.fine_interval
        } else {
            let post = self.schedule.total_steps.saturating_sub(self.schedule.phase_boundary);
            (post / (2 * self.checkpoints.fine_count.max(1))).max(1)
        }
    }

    /// All steps at which pretraining writes a checkpoint: coarse multiples,
    /// the phase boundary, the fine window, and the final step.
    pub fn checkpoint_steps(&self) -> BTreeSet<u64> {
        let total = self.schedule.total_steps;
        let boundary = self.schedule.phase_boundary;
        let mut steps = BTreeSet::new();
        let coarse = self.coarse_interval();
        let mut s = coarse;
        while s <= total {
            steps.insert(s);
            s += coarse;
        }
        steps.insert(boundary);
        let fine = self.fine_interval();
        for i in 0..=self.checkpoints.fine_count {
            let s = boundary + i * fine;
            if s <= total {
                steps.insert(s);
            }
        }
        steps.insert(total);
        steps
    }

    /// The checkpoints a sweep measures: the boundary (the L2-naive
    /// baseline) plus the fine window, and optionally the coarse trajectory.
    pub fn sweep_steps(&self) -> Vec<u64> {
        let boundary = self.schedule.phase_boundary;
        let mut steps = BTreeSet::new();
        steps.insert(boundary);
        let fine = self.fine_interval();
        for i in 0..=self.checkpoints.fine_count {
            let s = boundary + i * fine;
            if s <= self.schedule.total_steps {
                steps.insert(s);
            }
        }
        if self.sweep.include_coarse {
            let coarse = self.coarse_interval();
            let mut s = coarse;
            while s <= self.schedule.total_steps {
                steps.insert(s);
                s += coarse;
            }
            steps.insert(self.schedule.total_steps);
        }
        steps.into_iter().collect()
    }

    pub fn baseline_step(&self) -> u64 {
        if self.stats.baseline_step != 0 {
            self.stats.baseline_step
        } else {
            self.schedule.phase_boundary
        }
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            baseline_step: self.baseline_step(),
            correction: match self.stats.correction {
                CorrectionName::Holm => Correction::Holm,
                CorrectionName::Bonferroni => Correction::Bonferroni,
                CorrectionName::Bh => Correction::Bh,
            },
            alpha: self.stats.alpha,
            logit_response: self.stats.logit_response,
        }
    }
}
