//! Autoregressive transformer language model: configuration, parameter
//! storage, seeded initialization, forward/backward passes, Adam training,
//! continuation scoring, and bit-exact checkpointing.
//!
//! Everything runs in f64 on the CPU. Matrix products go through
//! `matrixmultiply`; layer norm, attention softmax, GELU, and the fused
//! softmax/cross-entropy are hand-written kernels with matching backward
//! passes. Activations at a given position depend only on earlier positions,
//! so scoring a continuation needs a single forward pass.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::StreamState;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: u32 },
    #[error("sequence of {needed} tokens exceeds maximum length {max}")]
    ContextOverflow { needed: usize, max: usize },
    #[error("scoring requires a non-empty {0}")]
    EmptyInput(&'static str),
    #[error("non-finite {quantity} at step {step}")]
    NonFinite { quantity: String, step: u64 },
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    BadVersion { found: u32, expected: u32 },
    #[error("checkpoint payload corrupt: {0}")]
    CorruptPayload(String),
}

/// Anything that can assign a conditional log-probability to a token
/// continuation. The trained transformer implements this; trivial scorers
/// exist for calibration and tests.
pub trait SequenceScorer {
    /// Longest context + continuation the scorer accepts, in tokens.
    fn max_seq_len(&self) -> usize;

    fn vocab_size(&self) -> u32;

    /// Sum over continuation tokens of ln P(token | context, preceding
    /// continuation tokens), in nats. Both slices must be non-empty and
    /// together fit in [`SequenceScorer::max_seq_len`].
    fn score_continuation(&self, context: &[u32], continuation: &[u32]) -> Result<f64, LmError>;
}

/// Context-independent reference scorer: every token gets probability
/// 1/vocab. Useful as a null model — it cannot show priming by construction.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub vocab_size: u32,
    pub max_seq_len: usize,
}

impl SequenceScorer for UniformScorer {
    fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn score_continuation(&self, context: &[u32], continuation: &[u32]) -> Result<f64, LmError> {
        if continuation.is_empty() {
            return Err(LmError::EmptyInput("continuation"));
        }
        let needed = context.len() + continuation.len();
        if needed > self.max_seq_len {
            return Err(LmError::ContextOverflow { needed, max: self.max_seq_len });
        }
        for &id in context.iter().chain(continuation) {
            if id >= self.vocab_size {
                return Err(LmError::TokenOutOfRange { id, vocab: self.vocab_size });
            }
        }
        Ok(-(continuation.len() as f64) * (self.vocab_size as f64).ln())
    }
}

// --------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ff_multiplier: usize,
    pub max_seq_len: usize,
    pub vocab_size: u32,
    /// Probability of zeroing an activation at the embedding output and at
    /// each residual-branch output during training. Evaluation never drops.
    pub dropout: f64,
    /// Standard deviation of the weight initialization; residual projections
    /// are further scaled by 1/√(2·n_layers).
    pub init_std: f64,
    /// Seeds weight initialization and the per-step dropout masks.
    pub seed: u64,
    /// Share the input embedding matrix with the output projection.
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// Small desk-scale model: 4 layers, 256 wide, 4 heads, 128-token
    /// context (~5M parameters at an 8192 vocabulary).
    pub fn desk_default(vocab_size: u32) -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 256,
            n_heads: 4,
            ff_multiplier: 4,
            max_seq_len: 128,
            vocab_size,
            dropout: 0.0,
            init_std: 0.02,
            seed: 0,
            tie_embeddings: true,
        }
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<(), LmError> {
        let mut problems = Vec::new();
        if self.n_layers == 0 {
            problems.push("n_layers must be at least 1".to_string());
        }
        if self.n_heads == 0 {
            problems.push("n_heads must be at least 1".to_string());
        }
        if self.d_model == 0 || (self.n_heads > 0 && self.d_model % self.n_heads != 0) {
            problems.push(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.ff_multiplier == 0 {
            problems.push("ff_multiplier must be at least 1".to_string());
        }
        if self.max_seq_len < 2 {
            problems.push("max_seq_len must be at least 2".to_string());
        }
        if self.vocab_size < 2 {
            problems.push("vocab_size must be at least 2".to_string());
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            problems.push(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !self.init_std.is_finite() || self.init_std < 0.0 {
            problems.push(format!("init_std {} must be finite and non-negative", self.init_std));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LmError::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let ff = self.ff_multiplier;
        let v = self.vocab_size as usize;
        let per_layer = (4 + 2 * ff) * d * d + (9 + ff) * d;
        let head = if self.tie_embeddings { 0 } else { v * d };
        v * d + self.max_seq_len * d + self.n_layers * per_layer + 2 * d + head
    }

    pub fn describe(&self) -> String {
        let params = self.param_count();
        format!(
            "{} layers, d_model {}, {} heads, ff x{}, context {}, vocab {}, dropout {}, \
             {} parameters ({:.1} MiB weights, {:.1} MiB with optimizer state)",
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.ff_multiplier,
            self.max_seq_len,
            self.vocab_size,
            self.dropout,
            params,
            params as f64 * 8.0 / (1024.0 * 1024.0),
            params as f64 * 8.0 * 4.0 / (1024.0 * 1024.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine { total_steps: u64, min_lr_frac: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 3e-4,
            warmup_steps: 100,
            schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    /// Learning rate applied to the update taken at `step` (0-based):
    /// linear warmup over `warmup_steps`, then the configured schedule.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine { total_steps, min_lr_frac } => {
                let floor = self.learning_rate * min_lr_frac;
                if step >= total_steps || total_steps <= self.warmup_steps {
                    return floor;
                }
                let progress = (step - self.warmup_steps) as f64
                    / (total_steps - self.warmup_steps) as f64;
                floor
                    + 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                        * (self.learning_rate - floor)
            }
        }
    }
}

// --------------------------------------------------------------------------
// parameter layout

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offsets of each named tensor inside the flat parameter buffer. The order
/// below is the payload order of checkpoints.
#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<TensorSpec>,
    total: usize,
    wte: usize,
    wpe: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    lm_head: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_attn_proj: usize,
    b_attn_proj: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_fc: usize,
    b_fc: usize,
    w_mlp_proj: usize,
    b_mlp_proj: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let d = cfg.d_model;
        let f = cfg.ff_multiplier * d;
        let v = cfg.vocab_size as usize;
        let mut specs = Vec::new();
        let mut cursor = 0usize;
        let mut push = |specs: &mut Vec<TensorSpec>, name: String, shape: Vec<usize>| {
            let offset = cursor;
            cursor += shape.iter().product::<usize>();
            specs.push(TensorSpec { name, shape, offset });
            offset
        };
        let wte = push(&mut specs, "wte".into(), vec![v, d]);
        let wpe = push(&mut specs, "wpe".into(), vec![cfg.max_seq_len, d]);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            layers.push(LayerOffsets {
                ln1_g: push(&mut specs, format!("l{l}.ln1.g"), vec![d]),
                ln1_b: push(&mut specs, format!("l{l}.ln1.b"), vec![d]),
                w_qkv: push(&mut specs, format!("l{l}.attn.w_qkv"), vec![d, 3 * d]),
                b_qkv: push(&mut specs, format!("l{l}.attn.b_qkv"), vec![3 * d]),
                w_attn_proj: push(&mut specs, format!("l{l}.attn.w_proj"), vec![d, d]),
                b_attn_proj: push(&mut specs, format!("l{l}.attn.b_proj"), vec![d]),
                ln2_g: push(&mut specs, format!("l{l}.ln2.g"), vec![d]),
                ln2_b: push(&mut specs, format!("l{l}.ln2.b"), vec![d]),
                w_fc: push(&mut specs, format!("l{l}.mlp.w_fc"), vec![d, f]),
                b_fc: push(&mut specs, format!("l{l}.mlp.b_fc"), vec![f]),
                w_mlp_proj: push(&mut specs, format!("l{l}.mlp.w_proj"), vec![f, d]),
                b_mlp_proj: push(&mut specs, format!("l{l}.mlp.b_proj"), vec![d]),
            });
        }
        let lnf_g = push(&mut specs, "ln_f.g".into(), vec![d]);
        let lnf_b = push(&mut specs, "ln_f.b".into(), vec![d]);
        let lm_head = if cfg.tie_embeddings {
            None
        } else {
            Some(push(&mut specs, "lm_head".into(), vec![v, d]))
        };
        Layout { specs, total: cursor, wte, wpe, layers, lnf_g, lnf_b, lm_head }
    }
}

// --------------------------------------------------------------------------
// kernels

const LN_EPS: f64 = 1e-5;

/// Strided matrix product C = α·A·B + β·C through `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_off: usize,
    rsa: isize,
    csa: isize,
    b: &[f64],
    b_off: usize,
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    c_off: usize,
    rsc: isize,
    csc: isize,
) {
    debug_assert!(m > 0 && k > 0 && n > 0);
    debug_assert!(a_off + (m - 1) * (rsa as usize) + (k - 1) * (csa as usize) < a.len());
    debug_assert!(b_off + (k - 1) * (rsb as usize) + (n - 1) * (csb as usize) < b.len());
    debug_assert!(c_off + (m - 1) * (rsc as usize) + (n - 1) * (csc as usize) < c.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(a_off),
            rsa,
            csa,
            b.as_ptr().add(b_off),
            rsb,
            csb,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc,
            csc,
        );
    }
}

/// Row-wise layer norm over `rows` rows of width `d`, caching mean and
/// reciprocal standard deviation for the backward pass.
fn layernorm_fwd(
    out: &mut [f64],
    mean: &mut [f64],
    rstd: &mut [f64],
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    rows: usize,
    d: usize,
) {
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mu = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        mean[r] = mu;
        rstd[r] = rs;
        let or = &mut out[r * d..(r + 1) * d];
        for i in 0..d {
            or[i] = (xr[i] - mu) * rs * gamma[i] + beta[i];
        }
    }
}

/// Backward of [`layernorm_fwd`]: writes dx, accumulates dgamma/dbeta.
#[allow(clippy::too_many_arguments)]
fn layernorm_bwd(
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dout: &[f64],
    x: &[f64],
    mean: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    rows: usize,
    d: usize,
) {
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let dor = &dout[r * d..(r + 1) * d];
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            let dy = dor[i] * gamma[i];
            sum_dy += dy;
            sum_dy_xhat += dy * xhat;
            dgamma[i] += dor[i] * xhat;
            dbeta[i] += dor[i];
        }
        let inv_d = 1.0 / d as f64;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            let dy = dor[i] * gamma[i];
            dxr[i] = rs * (dy - inv_d * sum_dy - xhat * inv_d * sum_dy_xhat);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_G: f64 = 0.044715;

fn gelu_fwd(out: &mut [f64], x: &[f64]) {
    for (o, &u) in out.iter_mut().zip(x) {
        let t = (GELU_C * (u + GELU_G * u * u * u)).tanh();
        *o = 0.5 * u * (1.0 + t);
    }
}

/// In-place product of `dout` with the GELU derivative at `x`.
fn gelu_bwd(dout: &mut [f64], x: &[f64]) {
    for (g, &u) in dout.iter_mut().zip(x) {
        let inner = GELU_C * (u + GELU_G * u * u * u);
        let t = inner.tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_G * u * u);
        *g *= 0.5 * (1.0 + t) + 0.5 * u * dt;
    }
}

fn add_bias_rows(out: &mut [f64], bias: &[f64], rows: usize, width: usize) {
    for r in 0..rows {
        for (o, &b) in out[r * width..(r + 1) * width].iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad_rows(dbias: &mut [f64], dout: &[f64], rows: usize, width: usize) {
    for r in 0..rows {
        for (g, &d) in dbias.iter_mut().zip(&dout[r * width..(r + 1) * width]) {
            *g += d;
        }
    }
}

// --------------------------------------------------------------------------
// activations

struct LayerActs {
    ln1_out: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    /// Post-softmax attention, [batch, head, T, T]; rows above the diagonal
    /// are exactly zero.
    p: Vec<f64>,
    z: Vec<f64>,
    res_att: Vec<f64>,
    ln2_out: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fc_u: Vec<f64>,
    fc_h: Vec<f64>,
    res_mlp: Vec<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1−p)) for the two residual
    /// branches; empty when dropout is off.
    mask_att: Vec<f64>,
    mask_mlp: Vec<f64>,
}

struct Acts {
    rows: usize,
    cols: usize,
    emb: Vec<f64>,
    layers: Vec<LayerActs>,
    lnf_out: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
    /// Holds logits after the forward pass; the training path overwrites it
    /// with probabilities and then with logit gradients.
    logits: Vec<f64>,
    mask_emb: Vec<f64>,
    // backward scratch
    d_stream: Vec<f64>,
    buf_d: Vec<f64>,
    buf_d2: Vec<f64>,
    d_qkv: Vec<f64>,
    d_f: Vec<f64>,
    dp: Vec<f64>,
}

impl Acts {
    fn new(cfg: &ModelConfig, rows: usize, cols: usize) -> Acts {
        let d = cfg.d_model;
        let f = cfg.ff_multiplier * d;
        let v = cfg.vocab_size as usize;
        let bt = rows * cols;
        let mask_len = if cfg.dropout > 0.0 { bt * d } else { 0 };
        let layers = (0..cfg.n_layers)
            .map(|_| LayerActs {
                ln1_out: vec![0.0; bt * d],
                ln1_mean: vec![0.0; bt],
                ln1_rstd: vec![0.0; bt],
                qkv: vec![0.0; bt * 3 * d],
                p: vec![0.0; rows * cfg.n_heads * cols * cols],
                z: vec![0.0; bt * d],
                res_att: vec![0.0; bt * d],
                ln2_out: vec![0.0; bt * d],
                ln2_mean: vec![0.0; bt],
                ln2_rstd: vec![0.0; bt],
                fc_u: vec![0.0; bt * f],
                fc_h: vec![0.0; bt * f],
                res_mlp: vec![0.0; bt * d],
                mask_att: vec![0.0; mask_len],
                mask_mlp: vec![0.0; mask_len],
            })
            .collect();
        Acts {
            rows,
            cols,
            emb: vec![0.0; bt * d],
            layers,
            lnf_out: vec![0.0; bt * d],
            lnf_mean: vec![0.0; bt],
            lnf_rstd: vec![0.0; bt],
            logits: vec![0.0; bt * v],
            mask_emb: vec![0.0; mask_len],
            d_stream: vec![0.0; bt * d],
            buf_d: vec![0.0; bt * d],
            buf_d2: vec![0.0; bt * d],
            d_qkv: vec![0.0; bt * 3 * d],
            d_f: vec![0.0; bt * f],
            dp: vec![0.0; cols * cols],
        }
    }
}

// --------------------------------------------------------------------------
// model

pub struct GptModel {
    config: ModelConfig,
    layout: Layout,
    theta: Vec<f64>,
    grad: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
    scratch: Option<Acts>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Index of the step this update corresponds to (0-based).
    pub step: u64,
    /// Mean loss in nats per token, measured before the update.
    pub loss_nats: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl GptModel {
    pub fn new(config: ModelConfig) -> Result<GptModel, LmError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut theta = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let proj_std = config.init_std / (2.0 * config.n_layers as f64).sqrt();
        for spec in &layout.specs {
            let last = spec.name.rsplit('.').next().unwrap_or(&spec.name);
            let dst = &mut theta[spec.offset..spec.offset + spec.len()];
            if last == "g" {
                dst.fill(1.0);
            } else if last.starts_with('b') {
                dst.fill(0.0);
            } else {
                let std = if last == "w_proj" { proj_std } else { config.init_std };
                if std == 0.0 {
                    dst.fill(0.0);
                } else {
                    for v in dst.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = std * z;
                    }
                }
            }
        }
        let n = layout.total;
        Ok(GptModel {
            config,
            layout,
            theta,
            grad: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
            scratch: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn tensor_specs(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn describe(&self) -> String {
        format!("{} — trained for {} steps", self.config.describe(), self.step)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), LmError> {
        for &id in tokens {
            if id >= self.config.vocab_size {
                return Err(LmError::TokenOutOfRange { id, vocab: self.config.vocab_size });
            }
        }
        Ok(())
    }

    /// Fills the dropout-mask buffers for one training step. Masks are a
    /// pure function of (model seed, step), which keeps interrupted and
    /// straight-through runs bit-identical.
    fn fill_dropout_masks(&self, acts: &mut Acts, step: u64) {
        let q = self.config.dropout;
        let keep = 1.0 / (1.0 - q);
        let seed = crate::util::derive_seed(self.config.seed, &format!("dropout-step-{step}"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |mask: &mut [f64]| {
            for m in mask.iter_mut() {
                *m = if rand::Rng::random::<f64>(&mut rng) < q { 0.0 } else { keep };
            }
        };
        fill(&mut acts.mask_emb);
        for la in &mut acts.layers {
            fill(&mut la.mask_att);
            fill(&mut la.mask_mlp);
        }
    }

    /// Forward pass over `rows` sequences of `cols` tokens, filling `acts`
    /// through the logits buffer. `dropout_step` of `Some(step)` applies the
    /// training-mode dropout masks for that step; `None` is evaluation mode.
    fn forward(&self, tokens: &[u32], acts: &mut Acts, dropout_step: Option<u64>) {
        let cfg = &self.config;
        let (rows, cols) = (acts.rows, acts.cols);
        let bt = rows * cols;
        let d = cfg.d_model;
        let f = cfg.ff_multiplier * d;
        let v = cfg.vocab_size as usize;
        let h = cfg.n_heads;
        let hs = d / h;
        let scale = 1.0 / (hs as f64).sqrt();
        let dropping = cfg.dropout > 0.0 && dropout_step.is_some();
        if dropping {
            self.fill_dropout_masks(acts, dropout_step.unwrap());
        }
        let th = &self.theta;
        let lay = &self.layout;

        for r in 0..bt {
            let tok = tokens[r] as usize;
            let pos = r % cols;
            let wte = &th[lay.wte + tok * d..lay.wte + (tok + 1) * d];
            let wpe = &th[lay.wpe + pos * d..lay.wpe + (pos + 1) * d];
            for i in 0..d {
                acts.emb[r * d + i] = wte[i] + wpe[i];
            }
        }
        if dropping {
            for i in 0..bt * d {
                acts.emb[i] *= acts.mask_emb[i];
            }
        }

        for l in 0..cfg.n_layers {
            let lo = lay.layers[l];
            // split-borrow: the layer input lives in the previous layer's
            // activations (or the embedding buffer)
            let (before, rest) = acts.layers.split_at_mut(l);
            let la = &mut rest[0];
            let x_in: &[f64] =
                if l == 0 { &acts.emb } else { &before[l - 1].res_mlp };

            layernorm_fwd(
                &mut la.ln1_out,
                &mut la.ln1_mean,
                &mut la.ln1_rstd,
                x_in,
                &th[lo.ln1_g..lo.ln1_g + d],
                &th[lo.ln1_b..lo.ln1_b + d],
                bt,
                d,
            );
            gemm(
                bt, d, 3 * d, 1.0,
                &la.ln1_out, 0, d as isize, 1,
                th, lo.w_qkv, 3 * d as isize, 1,
                0.0, &mut la.qkv, 0, 3 * d as isize, 1,
            );
            add_bias_rows(&mut la.qkv, &th[lo.b_qkv..lo.b_qkv + 3 * d], bt, 3 * d);

            for b in 0..rows {
                for head in 0..h {
                    let q_off = b * cols * 3 * d + head * hs;
                    let k_off = q_off + d;
                    let v_off = q_off + 2 * d;
                    let p_off = (b * h + head) * cols * cols;
                    // S = Q Kᵀ / √hs, written into the P buffer
                    gemm(
                        cols, hs, cols, scale,
                        &la.qkv, q_off, 3 * d as isize, 1,
                        &la.qkv, k_off, 1, 3 * d as isize,
                        0.0, &mut la.p, p_off, cols as isize, 1,
                    );
                    // causal softmax row by row
                    for i in 0..cols {
                        let row = &mut la.p[p_off + i * cols..p_off + (i + 1) * cols];
                        let mut max = f64::NEG_INFINITY;
                        for &s in &row[..=i] {
                            if s > max {
                                max = s;
                            }
                        }
                        let mut sum = 0.0;
                        for s in &mut row[..=i] {
                            *s = (*s - max).exp();
                            sum += *s;
                        }
                        let inv = 1.0 / sum;
                        for s in &mut row[..=i] {
                            *s *= inv;
                        }
                        row[i + 1..].fill(0.0);
                    }
                    gemm(
                        cols, cols, hs, 1.0,
                        &la.p, p_off, cols as isize, 1,
                        &la.qkv, v_off, 3 * d as isize, 1,
                        0.0, &mut la.z, b * cols * d + head * hs, d as isize, 1,
                    );
                }
            }

            gemm(
                bt, d, d, 1.0,
                &la.z, 0, d as isize, 1,
                th, lo.w_attn_proj, d as isize, 1,
                0.0, &mut la.res_att, 0, d as isize, 1,
            );
            add_bias_rows(&mut la.res_att, &th[lo.b_attn_proj..lo.b_attn_proj + d], bt, d);
            if dropping {
                for i in 0..bt * d {
                    la.res_att[i] *= la.mask_att[i];
                }
            }
            for i in 0..bt * d {
                la.res_att[i] += x_in[i];
            }

            layernorm_fwd(
                &mut la.ln2_out,
                &mut la.ln2_mean,
                &mut la.ln2_rstd,
                &la.res_att,
                &th[lo.ln2_g..lo.ln2_g + d],
                &th[lo.ln2_b..lo.ln2_b + d],
                bt,
                d,
            );
            gemm(
                bt, d, f, 1.0,
                &la.ln2_out, 0, d as isize, 1,
                th, lo.w_fc, f as isize, 1,
                0.0, &mut la.fc_u, 0, f as isize, 1,
            );
            add_bias_rows(&mut la.fc_u, &th[lo.b_fc..lo.b_fc + f], bt, f);
            gelu_fwd(&mut la.fc_h, &la.fc_u);
            gemm(
                bt, f, d, 1.0,
                &la.fc_h, 0, f as isize, 1,
                th, lo.w_mlp_proj, d as isize, 1,
                0.0, &mut la.res_mlp, 0, d as isize, 1,
            );
            add_bias_rows(&mut la.res_mlp, &th[lo.b_mlp_proj..lo.b_mlp_proj + d], bt, d);
            if dropping {
                for i in 0..bt * d {
                    la.res_mlp[i] *= la.mask_mlp[i];
                }
            }
            for i in 0..bt * d {
                la.res_mlp[i] += la.res_att[i];
            }
        }

        let last = &acts.layers[cfg.n_layers - 1].res_mlp;
        layernorm_fwd(
            &mut acts.lnf_out,
            &mut acts.lnf_mean,
            &mut acts.lnf_rstd,
            last,
            &th[lay.lnf_g..lay.lnf_g + d],
            &th[lay.lnf_b..lay.lnf_b + d],
            bt,
            d,
        );
        let head_off = lay.lm_head.unwrap_or(lay.wte);
        gemm(
            bt, d, v, 1.0,
            &acts.lnf_out, 0, d as isize, 1,
            th, head_off, 1, d as isize,
            0.0, &mut acts.logits, 0, v as isize, 1,
        );
    }

    /// Converts logits to probabilities in place and returns the mean
    /// cross-entropy against `targets`, in nats per token.
    fn loss_in_place(&self, acts: &mut Acts, targets: &[u32]) -> f64 {
        let v = self.config.vocab_size as usize;
        let bt = acts.rows * acts.cols;
        let mut loss = 0.0;
        for r in 0..bt {
            let row = &mut acts.logits[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let inv = 1.0 / sum;
            for x in row.iter_mut() {
                *x *= inv;
            }
            loss -= (row[targets[r] as usize]).ln();
        }
        loss / bt as f64
    }

    /// Backward pass; expects `acts.logits` to hold probabilities (as left
    /// by [`GptModel::loss_in_place`]) and, when `dropping`, the mask
    /// buffers as filled by the matching forward pass. Accumulates into
    /// `self.grad`.
    fn backward(&mut self, tokens: &[u32], targets: &[u32], acts: &mut Acts, dropping: bool) {
        let cfg = self.config.clone();
        let (rows, cols) = (acts.rows, acts.cols);
        let bt = rows * cols;
        let d = cfg.d_model;
        let f = cfg.ff_multiplier * d;
        let v = cfg.vocab_size as usize;
        let h = cfg.n_heads;
        let hs = d / h;
        let scale = 1.0 / (hs as f64).sqrt();
        let lay = self.layout.clone();
        let th = &self.theta;
        let gr = &mut self.grad;

        // softmax/cross-entropy gradient, in place over the probabilities
        let inv_bt = 1.0 / bt as f64;
        for r in 0..bt {
            let row = &mut acts.logits[r * v..(r + 1) * v];
            row[targets[r] as usize] -= 1.0;
            for x in row.iter_mut() {
                *x *= inv_bt;
            }
        }

        let head_off = lay.lm_head.unwrap_or(lay.wte);
        // d lnf_out = dlogits @ W_head
        gemm(
            bt, v, d, 1.0,
            &acts.logits, 0, v as isize, 1,
            th, head_off, d as isize, 1,
            0.0, &mut acts.buf_d, 0, d as isize, 1,
        );
        // dW_head += dlogitsᵀ @ lnf_out
        gemm(
            v, bt, d, 1.0,
            &acts.logits, 0, 1, v as isize,
            &acts.lnf_out, 0, d as isize, 1,
            1.0, gr, head_off, d as isize, 1,
        );
        {
            let last = &acts.layers[cfg.n_layers - 1].res_mlp;
            let (dgf, rest) = gr[lay.lnf_g..].split_at_mut(d);
            let dbf = &mut rest[lay.lnf_b - lay.lnf_g - d..lay.lnf_b - lay.lnf_g];
            layernorm_bwd(
                &mut acts.d_stream,
                dgf,
                dbf,
                &acts.buf_d,
                last,
                &acts.lnf_mean,
                &acts.lnf_rstd,
                &th[lay.lnf_g..lay.lnf_g + d],
                bt,
                d,
            );
        }

        for l in (0..cfg.n_layers).rev() {
            let lo = lay.layers[l];
            let (before, rest) = acts.layers.split_at_mut(l);
            let la = &mut rest[0];
            let x_in: &[f64] = if l == 0 { &acts.emb } else { &before[l - 1].res_mlp };

            // ---- MLP sublayer: res_mlp = res_att + proj(gelu(fc(ln2(res_att))))
            // gradient at the projection output, undoing the dropout mask
            if dropping {
                for i in 0..bt * d {
                    acts.buf_d2[i] = acts.d_stream[i] * la.mask_mlp[i];
                }
            }
            let d_proj: &[f64] = if dropping { &acts.buf_d2 } else { &acts.d_stream };
            // dW_mlp_proj += fc_hᵀ @ d_proj
            gemm(
                f, bt, d, 1.0,
                &la.fc_h, 0, 1, f as isize,
                d_proj, 0, d as isize, 1,
                1.0, gr, lo.w_mlp_proj, d as isize, 1,
            );
            bias_grad_rows(&mut gr[lo.b_mlp_proj..lo.b_mlp_proj + d], d_proj, bt, d);
            // d fc_h = d_proj @ W_mlp_projᵀ
            gemm(
                bt, d, f, 1.0,
                d_proj, 0, d as isize, 1,
                th, lo.w_mlp_proj, 1, d as isize,
                0.0, &mut acts.d_f, 0, f as isize, 1,
            );
            gelu_bwd(&mut acts.d_f, &la.fc_u);
            // dW_fc += ln2_outᵀ @ d_u
            gemm(
                d, bt, f, 1.0,
                &la.ln2_out, 0, 1, d as isize,
                &acts.d_f, 0, f as isize, 1,
                1.0, gr, lo.w_fc, f as isize, 1,
            );
            bias_grad_rows(&mut gr[lo.b_fc..lo.b_fc + f], &acts.d_f, bt, f);
            // d ln2_out = d_u @ W_fcᵀ
            gemm(
                bt, f, d, 1.0,
                &acts.d_f, 0, f as isize, 1,
                th, lo.w_fc, 1, f as isize,
                0.0, &mut acts.buf_d, 0, d as isize, 1,
            );
            {
                let (dg, db) = split_two(gr, lo.ln2_g, lo.ln2_b, d);
                layernorm_bwd(
                    &mut acts.buf_d2,
                    dg,
                    db,
                    &acts.buf_d,
                    &la.res_att,
                    &la.ln2_mean,
                    &la.ln2_rstd,
                    &th[lo.ln2_g..lo.ln2_g + d],
                    bt,
                    d,
                );
            }
            for i in 0..bt * d {
                acts.d_stream[i] += acts.buf_d2[i];
            }

            // ---- attention sublayer: res_att = x_in + proj(attention(ln1(x_in)))
            if dropping {
                for i in 0..bt * d {
                    acts.buf_d2[i] = acts.d_stream[i] * la.mask_att[i];
                }
            }
            let d_proj: &[f64] = if dropping { &acts.buf_d2 } else { &acts.d_stream };
            // dW_attn_proj += zᵀ @ d_proj
            gemm(
                d, bt, d, 1.0,
                &la.z, 0, 1, d as isize,
                d_proj, 0, d as isize, 1,
                1.0, gr, lo.w_attn_proj, d as isize, 1,
            );
            bias_grad_rows(&mut gr[lo.b_attn_proj..lo.b_attn_proj + d], d_proj, bt, d);
            // d z = d_proj @ W_attn_projᵀ
            gemm(
                bt, d, d, 1.0,
                d_proj, 0, d as isize, 1,
                th, lo.w_attn_proj, 1, d as isize,
                0.0, &mut acts.buf_d, 0, d as isize, 1,
            );

            acts.d_qkv.fill(0.0);
            for b in 0..rows {
                for head in 0..h {
                    let q_off = b * cols * 3 * d + head * hs;
                    let k_off = q_off + d;
                    let v_off = q_off + 2 * d;
                    let p_off = (b * h + head) * cols * cols;
                    let z_off = b * cols * d + head * hs;
                    // dV += Pᵀ @ dZ
                    gemm(
                        cols, cols, hs, 1.0,
                        &la.p, p_off, 1, cols as isize,
                        &acts.buf_d, z_off, d as isize, 1,
                        1.0, &mut acts.d_qkv, v_off, 3 * d as isize, 1,
                    );
                    // dP = dZ @ Vᵀ
                    gemm(
                        cols, hs, cols, 1.0,
                        &acts.buf_d, z_off, d as isize, 1,
                        &la.qkv, v_off, 1, 3 * d as isize,
                        0.0, &mut acts.dp, 0, cols as isize, 1,
                    );
                    // softmax backward row by row; masked entries have P = 0
                    // and therefore contribute nothing
                    for i in 0..cols {
                        let p_row = &la.p[p_off + i * cols..p_off + (i + 1) * cols];
                        let dp_row = &mut acts.dp[i * cols..(i + 1) * cols];
                        let dot: f64 =
                            p_row.iter().zip(dp_row.iter()).map(|(p, dp)| p * dp).sum();
                        for (dp, &p) in dp_row.iter_mut().zip(p_row) {
                            *dp = p * (*dp - dot);
                        }
                    }
                    // dQ += dS @ K · scale
                    gemm(
                        cols, cols, hs, scale,
                        &acts.dp, 0, cols as isize, 1,
                        &la.qkv, k_off, 3 * d as isize, 1,
                        1.0, &mut acts.d_qkv, q_off, 3 * d as isize, 1,
                    );
                    // dK += dSᵀ @ Q · scale
                    gemm(
                        cols, cols, hs, scale,
                        &acts.dp, 0, 1, cols as isize,
                        &la.qkv, q_off, 3 * d as isize, 1,
                        1.0, &mut acts.d_qkv, k_off, 3 * d as isize, 1,
                    );
                }
            }

            // dW_qkv += ln1_outᵀ @ d_qkv
            gemm(
                d, bt, 3 * d, 1.0,
                &la.ln1_out, 0, 1, d as isize,
                &acts.d_qkv, 0, 3 * d as isize, 1,
                1.0, gr, lo.w_qkv, 3 * d as isize, 1,
            );
            bias_grad_rows(&mut gr[lo.b_qkv..lo.b_qkv + 3 * d], &acts.d_qkv, bt, 3 * d);
            // d ln1_out = d_qkv @ W_qkvᵀ
            gemm(
                bt, 3 * d, d, 1.0,
                &acts.d_qkv, 0, 3 * d as isize, 1,
                th, lo.w_qkv, 1, 3 * d as isize,
                0.0, &mut acts.buf_d, 0, d as isize, 1,
            );
            {
                let (dg, db) = split_two(gr, lo.ln1_g, lo.ln1_b, d);
                layernorm_bwd(
                    &mut acts.buf_d2,
                    dg,
                    db,
                    &acts.buf_d,
                    x_in,
                    &la.ln1_mean,
                    &la.ln1_rstd,
                    &th[lo.ln1_g..lo.ln1_g + d],
                    bt,
                    d,
                );
            }
            for i in 0..bt * d {
                acts.d_stream[i] += acts.buf_d2[i];
            }
        }

        // embedding gradients
        if dropping {
            for i in 0..bt * d {
                acts.d_stream[i] *= acts.mask_emb[i];
            }
        }
        for r in 0..bt {
            let tok = tokens[r] as usize;
            let pos = r % cols;
            let src = &acts.d_stream[r * d..(r + 1) * d];
            let wte_g = &mut gr[lay.wte + tok * d..lay.wte + (tok + 1) * d];
            for i in 0..d {
                wte_g[i] += src[i];
            }
            let wpe_g = &mut gr[lay.wpe + pos * d..lay.wpe + (pos + 1) * d];
            for i in 0..d {
                wpe_g[i] += src[i];
            }
        }
    }

    fn take_scratch(&mut self, rows: usize, cols: usize) -> Acts {
        match self.scratch.take() {
            Some(a) if a.rows == rows && a.cols == cols => a,
            _ => Acts::new(&self.config, rows, cols),
        }
    }

    fn validate_batch(
        &self,
        inputs: &[u32],
        targets: &[u32],
        rows: usize,
        cols: usize,
    ) -> Result<(), LmError> {
        if rows == 0 || cols == 0 {
            return Err(LmError::EmptyInput("batch"));
        }
        if cols > self.config.max_seq_len {
            return Err(LmError::ContextOverflow { needed: cols, max: self.config.max_seq_len });
        }
        if inputs.len() != rows * cols || targets.len() != rows * cols {
            return Err(LmError::InvalidConfig(format!(
                "batch of {rows}x{cols} needs {} inputs and targets, got {} and {}",
                rows * cols,
                inputs.len(),
                targets.len()
            )));
        }
        self.check_tokens(inputs)?;
        self.check_tokens(targets)
    }

    /// Mean loss on a batch without touching the parameters.
    pub fn eval_loss(
        &mut self,
        inputs: &[u32],
        targets: &[u32],
        rows: usize,
        cols: usize,
    ) -> Result<f64, LmError> {
        self.validate_batch(inputs, targets, rows, cols)?;
        let mut acts = self.take_scratch(rows, cols);
        self.forward(inputs, &mut acts, None);
        let loss = self.loss_in_place(&mut acts, targets);
        self.scratch = Some(acts);
        if !loss.is_finite() {
            return Err(LmError::NonFinite { quantity: "loss".into(), step: self.step });
        }
        Ok(loss)
    }

    /// Flat parameter vector; [`GptModel::tensor_specs`] names the slices.
    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    /// Mutable parameter access for custom updates and numerical experiments.
    /// Optimizer state and the step counter are untouched.
    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Mean loss on a batch and its gradient w.r.t. every parameter, in
    /// evaluation mode (no dropout) and without an optimizer update.
    pub fn loss_and_grad(
        &mut self,
        inputs: &[u32],
        targets: &[u32],
        rows: usize,
        cols: usize,
    ) -> Result<(f64, Vec<f64>), LmError> {
        self.validate_batch(inputs, targets, rows, cols)?;
        let mut acts = self.take_scratch(rows, cols);
        self.forward(inputs, &mut acts, None);
        let loss = self.loss_in_place(&mut acts, targets);
        if !loss.is_finite() {
            self.scratch = Some(acts);
            return Err(LmError::NonFinite { quantity: "loss".into(), step: self.step });
        }
        self.grad.fill(0.0);
        self.backward(inputs, targets, &mut acts, false);
        self.scratch = Some(acts);
        Ok((loss, self.grad.clone()))
    }

    /// One optimizer step on a batch of `rows` sequences of `cols` tokens.
    /// Returns the loss measured before the update.
    pub fn train_step(
        &mut self,
        inputs: &[u32],
        targets: &[u32],
        rows: usize,
        cols: usize,
        tc: &TrainConfig,
    ) -> Result<StepStats, LmError> {
        self.validate_batch(inputs, targets, rows, cols)?;
        let mut acts = self.take_scratch(rows, cols);

        self.forward(inputs, &mut acts, Some(self.step));
        let loss = self.loss_in_place(&mut acts, targets);
        if !loss.is_finite() {
            self.scratch = Some(acts);
            return Err(LmError::NonFinite { quantity: "loss".into(), step: self.step });
        }
        self.grad.fill(0.0);
        let dropping = self.config.dropout > 0.0;
        self.backward(inputs, targets, &mut acts, dropping);
        self.scratch = Some(acts);

        let mut norm_sq = 0.0;
        for g in &self.grad {
            norm_sq += g * g;
        }
        let grad_norm = norm_sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(LmError::NonFinite { quantity: "grad_norm".into(), step: self.step });
        }
        if let Some(clip) = tc.grad_clip {
            if grad_norm > clip {
                let s = clip / grad_norm;
                for g in &mut self.grad {
                    *g *= s;
                }
            }
        }

        let lr = tc.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - tc.beta1.powi(t);
        let bc2 = 1.0 - tc.beta2.powi(t);
        for i in 0..self.theta.len() {
            let g = self.grad[i];
            self.adam_m[i] = tc.beta1 * self.adam_m[i] + (1.0 - tc.beta1) * g;
            self.adam_v[i] = tc.beta2 * self.adam_v[i] + (1.0 - tc.beta2) * g * g;
            let m_hat = self.adam_m[i] / bc1;
            let v_hat = self.adam_v[i] / bc2;
            self.theta[i] -= lr * m_hat / (v_hat.sqrt() + tc.adam_eps);
        }

        let stats = StepStats { step: self.step, loss_nats: loss, lr, grad_norm };
        self.step += 1;
        Ok(stats)
    }

    /// ln P(tokens[i+1] | tokens[..=i]) for every position; length is
    /// `tokens.len() - 1`.
    pub fn next_token_logprobs(&self, tokens: &[u32]) -> Result<Vec<f64>, LmError> {
        if tokens.len() < 2 {
            return Err(LmError::EmptyInput("sequence of at least two tokens"));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(LmError::ContextOverflow {
                needed: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let v = self.config.vocab_size as usize;
        let mut acts = Acts::new(&self.config, 1, t);
        self.forward(tokens, &mut acts, None);
        let mut out = Vec::with_capacity(t - 1);
        for i in 0..t - 1 {
            let row = &acts.logits[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.push(row[tokens[i + 1] as usize] - lse);
        }
        Ok(out)
    }

    // ---- checkpointing -----------------------------------------------------

    pub fn save_checkpoint(
        &self,
        path: &Path,
        tokenizer_fingerprint: &str,
        stream_state: Option<StreamState>,
    ) -> Result<(), LmError> {
        let n = self.theta.len();
        let mut payload = Vec::with_capacity(3 * n * 8);
        for buf in [&self.theta, &self.adam_m, &self.adam_v] {
            for &x in buf.iter() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let sha = format!("{:x}", Sha256::digest(&payload));
        let header = CheckpointHeader {
            config: self.config.clone(),
            step: self.step,
            tokenizer_fingerprint: tokenizer_fingerprint.to_string(),
            stream_state,
            tensors: self.layout.specs.clone(),
            payload_sha256: sha,
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| LmError::BadCheckpoint(format!("cannot encode header: {e}")))?;

        let io_err = |source: std::io::Error| LmError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        {
            let mut fh = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(io_err)?);
            fh.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
            fh.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
            fh.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
            fh.write_all(&header_bytes).map_err(io_err)?;
            fh.write_all(&payload).map_err(io_err)?;
            fh.flush().map_err(io_err)?;
        }
        std::fs::rename(&tmp, path).map_err(io_err)
    }

    /// Loads a checkpoint and refuses it when its tokenizer fingerprint does
    /// not match the one the caller is about to use, printing both hashes.
    pub fn load_checkpoint_expecting(
        path: &Path,
        expected_fingerprint: &str,
    ) -> Result<(GptModel, CheckpointMeta), LmError> {
        let (model, meta) = Self::load_checkpoint(path)?;
        if meta.tokenizer_fingerprint != expected_fingerprint {
            return Err(LmError::BadCheckpoint(format!(
                "tokenizer fingerprint mismatch: checkpoint was trained with {}, \
                 current tokenizer is {}",
                meta.tokenizer_fingerprint, expected_fingerprint
            )));
        }
        Ok((model, meta))
    }

    pub fn load_checkpoint(path: &Path) -> Result<(GptModel, CheckpointMeta), LmError> {
        let bytes = std::fs::read(path)
            .map_err(|source| LmError::Io { path: path.display().to_string(), source })?;
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(LmError::BadCheckpoint("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(LmError::BadVersion { found: version, expected: CHECKPOINT_VERSION });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + hlen {
            return Err(LmError::BadCheckpoint("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])
            .map_err(|e| LmError::BadCheckpoint(format!("cannot decode header: {e}")))?;
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        if header.tensors != layout.specs {
            return Err(LmError::BadCheckpoint(
                "tensor manifest does not match the model configuration".into(),
            ));
        }
        let n = layout.total;
        let payload = &bytes[16 + hlen..];
        if payload.len() != 3 * n * 8 {
            return Err(LmError::CorruptPayload(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                3 * n * 8
            )));
        }
        let sha = format!("{:x}", Sha256::digest(payload));
        if sha != header.payload_sha256 {
            return Err(LmError::CorruptPayload("sha256 mismatch".into()));
        }
        let read_buf = |idx: usize| -> Vec<f64> {
            payload[idx * n * 8..(idx + 1) * n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let model = GptModel {
            config: header.config,
            layout,
            theta: read_buf(0),
            adam_m: read_buf(1),
            adam_v: read_buf(2),
            grad: vec![0.0; n],
            step: header.step,
            scratch: None,
        };
        let meta = CheckpointMeta {
            step: header.step,
            tokenizer_fingerprint: header.tokenizer_fingerprint,
            stream_state: header.stream_state,
        };
        Ok((model, meta))
    }
}

/// Two non-overlapping mutable slices of width `d` out of one buffer.
fn split_two(buf: &mut [f64], a: usize, b: usize, d: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a + d <= b, "slices must be ordered and disjoint");
    let (head, tail) = buf.split_at_mut(b);
    (&mut head[a..a + d], &mut tail[..d])
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PTLM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    step: u64,
    tokenizer_fingerprint: String,
    stream_state: Option<StreamState>,
    tensors: Vec<TensorSpec>,
    payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub step: u64,
    pub tokenizer_fingerprint: String,
    pub stream_state: Option<StreamState>,
}

impl SequenceScorer for GptModel {
    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn vocab_size(&self) -> u32 {
        self.config.vocab_size
    }

    fn score_continuation(&self, context: &[u32], continuation: &[u32]) -> Result<f64, LmError> {
        if context.is_empty() {
            return Err(LmError::EmptyInput("context"));
        }
        if continuation.is_empty() {
            return Err(LmError::EmptyInput("continuation"));
        }
        let needed = context.len() + continuation.len();
        if needed > self.config.max_seq_len {
            return Err(LmError::ContextOverflow { needed, max: self.config.max_seq_len });
        }
        let mut seq = Vec::with_capacity(needed);
        seq.extend_from_slice(context);
        seq.extend_from_slice(continuation);
        let lps = self.next_token_logprobs(&seq)?;
        Ok(lps[context.len() - 1..].iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            ff_multiplier: 4,
            max_seq_len: 6,
            vocab_size: 13,
            dropout: 0.0,
            init_std: 0.08,
            seed,
            tie_embeddings: true,
        }
    }

    #[test]
    fn uniform_scorer_is_length_linear() {
        let s = UniformScorer { vocab_size: 100, max_seq_len: 64 };
        let one = s.score_continuation(&[1], &[2]).unwrap();
        let three = s.score_continuation(&[1], &[2, 3, 4]).unwrap();
        assert_eq!(one, -(100f64).ln());
        assert_eq!(three, 3.0 * one);
    }

    #[test]
    fn uniform_scorer_checks_bounds() {
        let s = UniformScorer { vocab_size: 10, max_seq_len: 4 };
        assert!(matches!(
            s.score_continuation(&[1, 2, 3], &[4, 5]),
            Err(LmError::ContextOverflow { needed: 5, max: 4 })
        ));
        assert!(matches!(
            s.score_continuation(&[1], &[10]),
            Err(LmError::TokenOutOfRange { id: 10, vocab: 10 })
        ));
        assert!(matches!(s.score_continuation(&[1], &[]), Err(LmError::EmptyInput(_))));
    }

    #[test]
    fn param_count_matches_layout_for_tied_and_untied() {
        for tie in [true, false] {
            for (l, d, h, ff, t, v) in [
                (1usize, 8usize, 2usize, 4usize, 4usize, 11u32),
                (4, 256, 4, 4, 128, 8192),
                (2, 16, 2, 2, 8, 50),
            ] {
                let cfg = ModelConfig {
                    n_layers: l,
                    d_model: d,
                    n_heads: h,
                    ff_multiplier: ff,
                    max_seq_len: t,
                    vocab_size: v,
                    dropout: 0.0,
                    init_std: 0.02,
                    seed: 1,
                    tie_embeddings: tie,
                };
                let model = GptModel::new(cfg.clone()).unwrap();
                assert_eq!(model.param_count(), cfg.param_count());
                let from_specs: usize = model.tensor_specs().iter().map(|s| s.len()).sum();
                assert_eq!(from_specs, cfg.param_count());
            }
        }
        assert_eq!(ModelConfig::desk_default(8192).param_count(), 5_289_472);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = tiny_config(0);
        cfg.n_heads = 3; // does not divide d_model = 8
        assert!(matches!(GptModel::new(cfg), Err(LmError::InvalidConfig(_))));
        let mut cfg = tiny_config(0);
        cfg.vocab_size = 1;
        assert!(matches!(GptModel::new(cfg), Err(LmError::InvalidConfig(_))));
        let mut cfg = tiny_config(0);
        cfg.init_std = f64::NAN;
        assert!(matches!(GptModel::new(cfg), Err(LmError::InvalidConfig(_))));
        let mut cfg = tiny_config(0);
        cfg.dropout = 1.0;
        assert!(matches!(GptModel::new(cfg), Err(LmError::InvalidConfig(_))));
        // every offending field is named in one message
        let mut cfg = tiny_config(0);
        cfg.n_layers = 0;
        cfg.vocab_size = 0;
        cfg.dropout = -0.5;
        match tiny_err(cfg) {
            LmError::InvalidConfig(msg) => {
                for needle in ["n_layers", "vocab_size", "dropout"] {
                    assert!(msg.contains(needle), "missing {needle} in: {msg}");
                }
            }
            other => panic!("unexpected error {other}"),
        }
    }

    fn tiny_err(cfg: ModelConfig) -> LmError {
        match GptModel::new(cfg) {
            Ok(_) => panic!("expected the config to be rejected"),
            Err(e) => e,
        }
    }

    #[test]
    fn zero_init_scores_like_the_uniform_model() {
        let mut cfg = tiny_config(9);
        cfg.init_std = 0.0;
        let model = GptModel::new(cfg.clone()).unwrap();
        let uniform =
            UniformScorer { vocab_size: cfg.vocab_size, max_seq_len: cfg.max_seq_len };
        let got = model.score_continuation(&[3, 1], &[4, 1, 5]).unwrap();
        let want = uniform.score_continuation(&[3, 1], &[4, 1, 5]).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn log_softmax_rows_are_proper_distributions() {
        let model = GptModel::new(tiny_config(3)).unwrap();
        let tokens = [5u32, 2, 9, 0, 12, 7];
        let v = model.config.vocab_size as usize;
        let mut acts = Acts::new(&model.config, 1, tokens.len());
        model.forward(&tokens, &mut acts, None);
        for i in 0..tokens.len() {
            let row = &acts.logits[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let total: f64 = row.iter().map(|x| (x - lse).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // and next_token_logprobs agrees with the raw rows
        let lps = model.next_token_logprobs(&tokens).unwrap();
        for (i, lp) in lps.iter().enumerate() {
            let row = &acts.logits[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            assert!((lp - (row[tokens[i + 1] as usize] - lse)).abs() < 1e-12);
        }
    }

    #[test]
    fn future_tokens_do_not_change_earlier_logits() {
        let model = GptModel::new(tiny_config(17)).unwrap();
        let a = [5u32, 2, 9, 0, 12, 7];
        let b = [5u32, 2, 9, 0, 3, 11]; // same first four tokens
        let v = model.config.vocab_size as usize;
        let mut acts_a = Acts::new(&model.config, 1, a.len());
        let mut acts_b = Acts::new(&model.config, 1, b.len());
        model.forward(&a, &mut acts_a, None);
        model.forward(&b, &mut acts_b, None);
        // positions 0..4 depend only on the shared prefix
        assert_eq!(acts_a.logits[..4 * v], acts_b.logits[..4 * v]);
        assert_ne!(acts_a.logits[4 * v..], acts_b.logits[4 * v..]);
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            ff_multiplier: 4,
            max_seq_len: 5,
            vocab_size: 11,
            dropout: 0.0,
            init_std: 0.1,
            seed: 23,
            tie_embeddings: true,
        };
        let mut model = GptModel::new(cfg).unwrap();
        let inputs = [1u32, 7, 3, 0, 9, 2, 5, 5, 10, 4];
        let targets = [7u32, 3, 0, 9, 6, 5, 5, 10, 4, 1];
        let (rows, cols) = (2, 5);

        let mut acts = Acts::new(&model.config, rows, cols);
        model.forward(&inputs, &mut acts, None);
        model.loss_in_place(&mut acts, &targets);
        model.grad.fill(0.0);
        model.backward(&inputs, &targets, &mut acts, false);
        let analytic = model.grad.clone();

        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..model.theta.len() {
            let orig = model.theta[i];
            model.theta[i] = orig + h;
            let up = model.eval_loss(&inputs, &targets, rows, cols).unwrap();
            model.theta[i] = orig - h;
            let down = model.eval_loss(&inputs, &targets, rows, cols).unwrap();
            model.theta[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let diff = (analytic[i] - numeric).abs();
            let tol = 1e-7 + 1e-4 * numeric.abs();
            assert!(
                diff <= tol,
                "param {i} ({}): analytic {} vs numeric {}",
                model.layout.specs.iter().rev().find(|s| s.offset <= i).unwrap().name,
                analytic[i],
                numeric
            );
            worst = worst.max(diff / (1e-7 + numeric.abs()));
        }
        assert!(worst < 1e-3, "worst relative gradient error {worst}");
    }

    #[test]
    fn untied_head_gradients_also_match_central_differences() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            ff_multiplier: 4,
            max_seq_len: 4,
            vocab_size: 7,
            dropout: 0.0,
            init_std: 0.1,
            seed: 31,
            tie_embeddings: false,
        };
        let mut model = GptModel::new(cfg).unwrap();
        let inputs = [1u32, 5, 3, 0];
        let targets = [5u32, 3, 0, 6];

        let mut acts = Acts::new(&model.config, 1, 4);
        model.forward(&inputs, &mut acts, None);
        model.loss_in_place(&mut acts, &targets);
        model.grad.fill(0.0);
        model.backward(&inputs, &targets, &mut acts, false);
        let analytic = model.grad.clone();

        let h = 1e-5;
        for i in 0..model.theta.len() {
            let orig = model.theta[i];
            model.theta[i] = orig + h;
            let up = model.eval_loss(&inputs, &targets, 1, 4).unwrap();
            model.theta[i] = orig - h;
            let down = model.eval_loss(&inputs, &targets, 1, 4).unwrap();
            model.theta[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (analytic[i] - numeric).abs() <= 1e-7 + 1e-4 * numeric.abs(),
                "param {i}: analytic {} vs numeric {}",
                analytic[i],
                numeric
            );
        }
    }

    #[test]
    fn dropout_gradients_match_central_differences_under_fixed_masks() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            ff_multiplier: 2,
            max_seq_len: 4,
            vocab_size: 9,
            dropout: 0.3,
            init_std: 0.1,
            seed: 41,
            tie_embeddings: true,
        };
        let mut model = GptModel::new(cfg).unwrap();
        let inputs = [1u32, 5, 3, 0];
        let targets = [5u32, 3, 0, 6];
        let step = 7u64; // masks are a pure function of (seed, step)

        let train_loss = |model: &GptModel, acts: &mut Acts| -> f64 {
            model.forward(&inputs, acts, Some(step));
            model.loss_in_place(acts, &targets)
        };

        let mut acts = Acts::new(&model.config, 1, 4);
        train_loss(&model, &mut acts);
        model.grad.fill(0.0);
        model.backward(&inputs, &targets, &mut acts, true);
        let analytic = model.grad.clone();

        let h = 1e-5;
        for i in 0..model.theta.len() {
            let orig = model.theta[i];
            model.theta[i] = orig + h;
            let up = train_loss(&model, &mut acts);
            model.theta[i] = orig - h;
            let down = train_loss(&model, &mut acts);
            model.theta[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (analytic[i] - numeric).abs() <= 1e-7 + 1e-4 * numeric.abs(),
                "param {i}: analytic {} vs numeric {}",
                analytic[i],
                numeric
            );
        }
    }

    #[test]
    fn memorizes_a_short_sequence() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 32,
            n_heads: 2,
            ff_multiplier: 4,
            max_seq_len: 8,
            vocab_size: 16,
            dropout: 0.0,
            init_std: 0.05,
            seed: 5,
            tie_embeddings: true,
        };
        let mut model = GptModel::new(cfg).unwrap();
        let row = [3u32, 14, 7, 1, 9, 0, 12, 6, 10];
        let inputs = &row[..8];
        let targets = &row[1..9];
        let tc = TrainConfig {
            batch_size: 1,
            learning_rate: 1e-2,
            warmup_steps: 10,
            schedule: LrSchedule::Constant,
            grad_clip: None,
            ..TrainConfig::default()
        };
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            last = model.train_step(inputs, targets, 1, 8, &tc).unwrap().loss_nats;
        }
        assert!(last < 0.1, "final loss {last} nats");
        assert_eq!(model.step(), 400);
    }

    #[test]
    fn scoring_is_additive_over_continuation_splits() {
        let model = GptModel::new(tiny_config(29)).unwrap();
        let whole = model.score_continuation(&[1, 2], &[3, 4, 5]).unwrap();
        let first = model.score_continuation(&[1, 2], &[3]).unwrap();
        let rest = model.score_continuation(&[1, 2, 3], &[4, 5]).unwrap();
        assert!((whole - (first + rest)).abs() < 1e-6, "{whole} vs {}", first + rest);
    }

    #[test]
    fn train_step_validates_batches() {
        let mut model = GptModel::new(tiny_config(2)).unwrap();
        let tc = TrainConfig::default();
        assert!(matches!(
            model.train_step(&[1, 2, 3], &[2, 3], 1, 3, &tc),
            Err(LmError::InvalidConfig(_))
        ));
        assert!(matches!(
            model.train_step(&[1, 2, 99], &[2, 99, 1], 1, 3, &tc),
            Err(LmError::TokenOutOfRange { id: 99, .. })
        ));
        let long = vec![1u32; 7];
        assert!(matches!(
            model.train_step(&long, &long, 1, 7, &tc),
            Err(LmError::ContextOverflow { needed: 7, max: 6 })
        ));
    }

    #[test]
    fn runaway_learning_rate_reports_non_finite() {
        let mut model = GptModel::new(tiny_config(3)).unwrap();
        let tc = TrainConfig {
            learning_rate: 1e18,
            warmup_steps: 0,
            grad_clip: None,
            ..TrainConfig::default()
        };
        let inputs = [1u32, 2, 3, 4];
        let targets = [2u32, 3, 4, 5];
        let mut saw_error = false;
        for _ in 0..6 {
            match model.train_step(&inputs, &targets, 1, 4, &tc) {
                Ok(_) => continue,
                Err(LmError::NonFinite { .. }) => {
                    saw_error = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn warmup_then_cosine_schedule_has_the_right_shape() {
        let tc = TrainConfig {
            learning_rate: 1.0,
            warmup_steps: 10,
            schedule: LrSchedule::Cosine { total_steps: 110, min_lr_frac: 0.1 },
            ..TrainConfig::default()
        };
        assert!((tc.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((tc.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((tc.lr_at(10) - 1.0).abs() < 1e-12);
        let mid = tc.lr_at(60);
        assert!((mid - 0.55).abs() < 1e-12, "midpoint {mid}");
        assert!((tc.lr_at(110) - 0.1).abs() < 1e-12);
        assert!((tc.lr_at(10_000) - 0.1).abs() < 1e-12);

        let constant = TrainConfig { learning_rate: 0.5, warmup_steps: 0, ..TrainConfig::default() };
        assert_eq!(constant.lr_at(0), 0.5);
        assert_eq!(constant.lr_at(1_000_000), 0.5);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_scores_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = GptModel::new(tiny_config(11)).unwrap();
        let tc = TrainConfig { warmup_steps: 0, ..TrainConfig::default() };
        let inputs = [1u32, 2, 3, 4, 5];
        let targets = [2u32, 3, 4, 5, 6];
        for _ in 0..5 {
            model.train_step(&inputs, &targets, 1, 5, &tc).unwrap();
        }
        let state = StreamState {
            seed: 77,
            l1: crate::corpus::StreamCursor { epoch: 1, next_seq: 42 },
            l2: crate::corpus::StreamCursor { epoch: 0, next_seq: 7 },
        };
        model.save_checkpoint(&path, "tok-test", Some(state)).unwrap();

        let (loaded, meta) = GptModel::load_checkpoint(&path).unwrap();
        assert_eq!(meta.step, 5);
        assert_eq!(meta.tokenizer_fingerprint, "tok-test");
        assert_eq!(meta.stream_state, Some(state));
        assert_eq!(loaded.step(), 5);
        let a = model.score_continuation(&[1, 2], &[3, 4]).unwrap();
        let b = loaded.score_continuation(&[1, 2], &[3, 4]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn split_training_resumes_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let tc = TrainConfig { warmup_steps: 4, ..TrainConfig::default() };
        // deterministic rotating batch so both runs see the same data
        let batch = |step: u64| -> (Vec<u32>, Vec<u32>) {
            let row: Vec<u32> = (0..6).map(|i| ((step * 5 + i * 3) % 13) as u32).collect();
            (row[..5].to_vec(), row[1..6].to_vec())
        };

        let mut straight = GptModel::new(tiny_config(13)).unwrap();
        for s in 0..20 {
            let (i, t) = batch(s);
            straight.train_step(&i, &t, 1, 5, &tc).unwrap();
        }
        let final_a = dir.path().join("straight.ckpt");
        straight.save_checkpoint(&final_a, "tok", None).unwrap();

        let mut first = GptModel::new(tiny_config(13)).unwrap();
        for s in 0..10 {
            let (i, t) = batch(s);
            first.train_step(&i, &t, 1, 5, &tc).unwrap();
        }
        let mid = dir.path().join("mid.ckpt");
        first.save_checkpoint(&mid, "tok", None).unwrap();

        let (mut resumed, meta) = GptModel::load_checkpoint(&mid).unwrap();
        assert_eq!(meta.step, 10);
        for s in 10..20 {
            let (i, t) = batch(s);
            resumed.train_step(&i, &t, 1, 5, &tc).unwrap();
        }
        let final_b = dir.path().join("resumed.ckpt");
        resumed.save_checkpoint(&final_b, "tok", None).unwrap();

        let a = std::fs::read(&final_a).unwrap();
        let b = std::fs::read(&final_b).unwrap();
        assert_eq!(a, b, "resumed checkpoint differs from the straight-through run");
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = GptModel::new(tiny_config(1)).unwrap();
        model.save_checkpoint(&path, "tok", None).unwrap();

        let good = std::fs::read(&path).unwrap();

        let mut flipped = good.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0xff;
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(
            GptModel::load_checkpoint(&path),
            Err(LmError::CorruptPayload(_))
        ));

        let mut wrong_version = good.clone();
        wrong_version[4] = 99;
        std::fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(
            GptModel::load_checkpoint(&path),
            Err(LmError::BadVersion { found: 99, expected: 1 })
        ));

        std::fs::write(&path, &good[..40]).unwrap();
        assert!(GptModel::load_checkpoint(&path).is_err());

        let mut bad_magic = good;
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(
            GptModel::load_checkpoint(&path),
            Err(LmError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut model = GptModel::new(tiny_config(19)).unwrap();
        let before = model.theta.clone();
        let tc = TrainConfig { learning_rate: 0.0, warmup_steps: 0, ..TrainConfig::default() };
        let stats = model.train_step(&[1, 2, 3, 4], &[2, 3, 4, 5], 1, 4, &tc).unwrap();
        assert!(stats.loss_nats.is_finite());
        assert_eq!(model.theta, before);
        assert_eq!(model.step(), 1);
    }

    #[test]
    fn dropout_applies_in_training_but_not_in_evaluation() {
        let mut cfg = tiny_config(37);
        cfg.dropout = 0.5;
        let mut model = GptModel::new(cfg.clone()).unwrap();
        let inputs = [1u32, 2, 3, 4];
        let targets = [2u32, 3, 4, 5];

        let eval = model.eval_loss(&inputs, &targets, 1, 4).unwrap();
        let mut acts = Acts::new(&model.config, 1, 4);
        model.forward(&inputs, &mut acts, Some(0));
        let train = model.loss_in_place(&mut acts, &targets);
        assert_ne!(eval, train, "masks should perturb the training loss");

        // evaluation scoring is unaffected by the dropout setting
        let mut plain = cfg.clone();
        plain.dropout = 0.0;
        let twin = GptModel::new(plain).unwrap();
        let a = model.score_continuation(&[1, 2], &[3]).unwrap();
        let b = twin.score_continuation(&[1, 2], &[3]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn dropout_training_still_resumes_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(43);
        cfg.dropout = 0.2;
        let tc = TrainConfig { warmup_steps: 2, ..TrainConfig::default() };
        let batch = |step: u64| -> (Vec<u32>, Vec<u32>) {
            let row: Vec<u32> = (0..6).map(|i| ((step * 7 + i * 5) % 13) as u32).collect();
            (row[..5].to_vec(), row[1..6].to_vec())
        };

        let mut straight = GptModel::new(cfg.clone()).unwrap();
        for s in 0..12 {
            let (i, t) = batch(s);
            straight.train_step(&i, &t, 1, 5, &tc).unwrap();
        }
        let final_a = dir.path().join("straight.ckpt");
        straight.save_checkpoint(&final_a, "tok", None).unwrap();

        let mut first = GptModel::new(cfg).unwrap();
        for s in 0..6 {
            let (i, t) = batch(s);
            first.train_step(&i, &t, 1, 5, &tc).unwrap();
        }
        let mid = dir.path().join("mid.ckpt");
        first.save_checkpoint(&mid, "tok", None).unwrap();
        let (mut resumed, _) = GptModel::load_checkpoint(&mid).unwrap();
        for s in 6..12 {
            let (i, t) = batch(s);
            resumed.train_step(&i, &t, 1, 5, &tc).unwrap();
        }
        let final_b = dir.path().join("resumed.ckpt");
        resumed.save_checkpoint(&final_b, "tok", None).unwrap();

        assert_eq!(std::fs::read(&final_a).unwrap(), std::fs::read(&final_b).unwrap());
    }

    #[test]
    fn loading_with_the_wrong_tokenizer_fingerprint_names_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = GptModel::new(tiny_config(8)).unwrap();
        model.save_checkpoint(&path, "fp-aaaa", None).unwrap();

        assert!(GptModel::load_checkpoint_expecting(&path, "fp-aaaa").is_ok());
        match GptModel::load_checkpoint_expecting(&path, "fp-bbbb") {
            Err(LmError::BadCheckpoint(msg)) => {
                assert!(msg.contains("fp-aaaa") && msg.contains("fp-bbbb"), "{msg}");
            }
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("expected a fingerprint refusal"),
        }
    }

    #[test]
    fn scoring_checks_bounds_like_the_uniform_model() {
        let model = GptModel::new(tiny_config(4)).unwrap();
        assert!(matches!(
            model.score_continuation(&[], &[1]),
            Err(LmError::EmptyInput("context"))
        ));
        assert!(matches!(
            model.score_continuation(&[1], &[]),
            Err(LmError::EmptyInput("continuation"))
        ));
        assert!(matches!(
            model.score_continuation(&[1, 2, 3, 4], &[5, 6, 1]),
            Err(LmError::ContextOverflow { needed: 7, max: 6 })
        ));
        assert!(matches!(
            model.score_continuation(&[1], &[13]),
            Err(LmError::TokenOutOfRange { id: 13, vocab: 13 })
        ));
    }
}
