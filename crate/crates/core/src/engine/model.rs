//! Pre-norm decoder-only transformer with learned positional embeddings and
//! a GELU MLP.
//!
//! Weight matrices are stored `[in, out]` so every projection is `x @ W`.
//! With tied embeddings the output head is `x @ tok_embᵀ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::EngineError;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    #[serde(default = "default_tied")]
    pub tied_embeddings: bool,
}

fn default_tied() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(EngineError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(EngineError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Closed-form number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ff);
        let per_layer = 4 * d * d + d * f + f + f * d + d + 4 * d;
        let head = if self.tied_embeddings { 0 } else { d * v };
        v * d + self.max_seq_len * d + self.n_layers * per_layer + 2 * d + head
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl LayerParams {
    const NAMES: [&'static str; 12] = [
        "ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1",
        "mlp.w2", "mlp.b2",
    ];

    fn refs(&self) -> [&Tensor; 12] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.wk, &self.wv, &self.wo, &self.ln2_gain, &self.ln2_bias,
            &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    fn refs_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// All learnable tensors of the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
    /// Untied output head `[d_model, vocab]`; `None` when tied to `tok_emb`.
    pub head: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// normal(0, 0.02); residual output projections scaled by 1/sqrt(2·n_layers).
    Normal,
    /// Every weight and bias zero, layer-norm gains one. Debug mode.
    Zeros,
}

impl ModelParams {
    /// Stable tensor names in canonical order (the checkpoint field names).
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for i in 0..self.layers.len() {
            names.extend(LayerParams::NAMES.iter().map(|n| format!("layers.{i}.{n}")));
        }
        names.push("ln_f.gain".into());
        names.push("ln_f.bias".into());
        if self.head.is_some() {
            names.push("head".into());
        }
        names
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend(l.refs());
        }
        out.push(&self.lnf_gain);
        out.push(&self.lnf_bias);
        if let Some(h) = &self.head {
            out.push(h);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend(l.refs_mut());
        }
        out.push(&mut self.lnf_gain);
        out.push(&mut self.lnf_bias);
        if let Some(h) = &mut self.head {
            out.push(h);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn to_tape(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        let vars = self.tensors().into_iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect();
        ParamVars { vars, n_layers: self.layers.len(), untied: self.head.is_some() }
    }

    /// Checks tensor shapes against the config.
    pub fn validate(&self) -> Result<(), EngineError> {
        self.config.validate()?;
        let cfg = &self.config;
        if self.layers.len() != cfg.n_layers || self.head.is_some() == cfg.tied_embeddings {
            return Err(EngineError::InvalidConfig("layer count or head tying disagrees with config".into()));
        }
        let expected = expected_shapes(cfg);
        let actual = self.tensors();
        if expected.len() != actual.len() {
            return Err(EngineError::InvalidConfig("tensor count disagrees with config".into()));
        }
        for ((name, shape), t) in self.names().iter().zip(&expected).zip(actual) {
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(EngineError::ShapeMismatch { op: "params", detail: format!("{name}: {:?}", t.shape) });
            }
        }
        Ok(())
    }

    /// Rebuilds params from tensors listed in canonical order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self, EngineError> {
        config.validate()?;
        let per_layer = LayerParams::NAMES.len();
        let expected = 2 + config.n_layers * per_layer + 2 + usize::from(!config.tied_embeddings);
        if tensors.len() != expected {
            return Err(EngineError::Format(format!("expected {expected} tensors, got {}", tensors.len())));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked above");
        let tok_emb = next();
        let pos_emb = next();
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerParams {
                ln1_gain: next(),
                ln1_bias: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            });
        }
        let lnf_gain = next();
        let lnf_bias = next();
        let head = if config.tied_embeddings { None } else { Some(next()) };
        let params = Self { config, tok_emb, pos_emb, layers, lnf_gain, lnf_bias, head };
        params.validate()?;
        Ok(params)
    }
}

/// Canonical tensor shapes implied by a config.
pub(crate) fn expected_shapes(cfg: &ModelConfig) -> Vec<Vec<usize>> {
    let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
    let mut shapes = vec![vec![v, d], vec![cfg.max_seq_len, d]];
    for _ in 0..cfg.n_layers {
        shapes.extend([
            vec![d],
            vec![d],
            vec![d, d],
            vec![d, d],
            vec![d, d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
        ]);
    }
    shapes.push(vec![d]);
    shapes.push(vec![d]);
    if !cfg.tied_embeddings {
        shapes.push(vec![d, v]);
    }
    shapes
}

/// Deterministic initialisation from `cfg.seed`.
pub fn init_params(cfg: &ModelConfig, mode: InitMode) -> Result<ModelParams, EngineError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
    let mut draw = |shape: &[usize], std: f64| -> Tensor {
        match mode {
            InitMode::Zeros => Tensor::zeros(shape),
            InitMode::Normal => {
                let normal = Normal::new(0.0, std).expect("positive std");
                let n = shape.iter().product();
                Tensor { shape: shape.to_vec(), data: (0..n).map(|_| normal.sample(&mut rng)).collect() }
            }
        }
    };
    let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
    let tok_emb = draw(&[v, d], INIT_STD);
    let pos_emb = draw(&[cfg.max_seq_len, d], INIT_STD);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for _ in 0..cfg.n_layers {
        layers.push(LayerParams {
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: draw(&[d, d], INIT_STD),
            wk: draw(&[d, d], INIT_STD),
            wv: draw(&[d, d], INIT_STD),
            wo: draw(&[d, d], resid_std),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            w1: draw(&[d, f], INIT_STD),
            b1: Tensor::zeros(&[f]),
            w2: draw(&[f, d], resid_std),
            b2: Tensor::zeros(&[d]),
        });
    }
    let head = (!cfg.tied_embeddings).then(|| draw(&[d, v], INIT_STD));
    Ok(ModelParams {
        config: cfg.clone(),
        tok_emb,
        pos_emb,
        layers,
        lnf_gain: Tensor::filled(&[d], 1.0),
        lnf_bias: Tensor::zeros(&[d]),
        head,
    })
}

/// Tape handles for every parameter tensor, canonical order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    n_layers: usize,
    untied: bool,
}

impl ParamVars {
    fn layer(&self, i: usize, j: usize) -> Var {
        self.vars[2 + i * LayerParams::NAMES.len() + j]
    }

    fn tail(&self, j: usize) -> Var {
        self.vars[2 + self.n_layers * LayerParams::NAMES.len() + j]
    }

    /// Records the forward pass; returns logits `[T, vocab]` and the attention
    /// node of every layer.
    pub fn forward(&self, tape: &mut Tape, cfg: &ModelConfig, tokens: &[usize]) -> Result<(Var, Vec<Var>), EngineError> {
        check_tokens(cfg, tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = tape.gather(self.vars[0], tokens)?;
        let pos = tape.gather(self.vars[1], &positions)?;
        let mut x = tape.add(tok, pos)?;
        let mut attn_nodes = Vec::with_capacity(self.n_layers);
        for i in 0..self.n_layers {
            let h = tape.layer_norm(x, self.layer(i, 0), self.layer(i, 1))?;
            let q = tape.matmul(h, self.layer(i, 2), false)?;
            let k = tape.matmul(h, self.layer(i, 3), false)?;
            let v = tape.matmul(h, self.layer(i, 4), false)?;
            let a = tape.causal_attention(q, k, v, cfg.n_heads)?;
            attn_nodes.push(a);
            let o = tape.matmul(a, self.layer(i, 5), false)?;
            x = tape.add(x, o)?;
            let h2 = tape.layer_norm(x, self.layer(i, 6), self.layer(i, 7))?;
            let m = tape.matmul(h2, self.layer(i, 8), false)?;
            let m = tape.add_bias(m, self.layer(i, 9))?;
            let m = tape.gelu(m);
            let m = tape.matmul(m, self.layer(i, 10), false)?;
            let m = tape.add_bias(m, self.layer(i, 11))?;
            x = tape.add(x, m)?;
        }
        let xf = tape.layer_norm(x, self.tail(0), self.tail(1))?;
        let logits = if self.untied {
            tape.matmul(xf, self.tail(2), false)?
        } else {
            tape.matmul(xf, self.vars[0], true)?
        };
        Ok((logits, attn_nodes))
    }
}

fn check_tokens(cfg: &ModelConfig, tokens: &[usize]) -> Result<(), EngineError> {
    if tokens.len() > cfg.max_seq_len {
        return Err(EngineError::SequenceTooLong { len: tokens.len(), max: cfg.max_seq_len });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(EngineError::TokenOutOfVocab { id, vocab: cfg.vocab_size });
    }
    Ok(())
}

/// Named column range of a context, used to attribute attention mass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

/// Head-averaged attention matrices of one pass, one `[T, T]` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    pub layers: Vec<Tensor>,
    /// Filled by callers that know the context layout.
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub capture: Option<AttentionCapture>,
}

/// Inference forward pass. Does not mutate `params`.
pub fn forward(params: &ModelParams, tokens: &[usize], capture: bool) -> Result<ForwardOutput, EngineError> {
    let mut tape = Tape::new();
    let pv = params.to_tape(&mut tape, false);
    let (logits, attn) = pv.forward(&mut tape, &params.config, tokens)?;
    let capture = capture.then(|| AttentionCapture {
        layers: attn.iter().map(|&a| tape.attention_probs_mean(a).expect("attention node")).collect(),
        sections: Vec::new(),
    });
    let logits = tape.value(logits).clone();
    if !logits.is_finite() {
        return Err(EngineError::NonFinite { op: "forward" });
    }
    Ok(ForwardOutput { logits, capture })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decode {
    Greedy,
    /// Softmax sampling at temperature `tau`; `tau <= 0` decodes greedily.
    Temperature { tau: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub max_new: usize,
    pub decode: Decode,
    pub stop_token: Option<usize>,
    /// Capture head-averaged attention over prompt and generated tokens.
    pub capture: bool,
}

#[derive(Debug, Clone)]
pub struct Generation {
    /// New tokens, including the stop token when one was produced.
    pub tokens: Vec<usize>,
    pub stopped: bool,
    /// Attention of a forward over `prompt ‖ tokens[..n-1]`; the query row
    /// that produced `tokens[i]` is `prompt.len() - 1 + i`.
    pub capture: Option<AttentionCapture>,
}

impl Generation {
    /// New tokens with the stop token removed.
    pub fn content(&self) -> &[usize] {
        if self.stopped {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Autoregressive decoding from `prompt` (no KV cache: each step re-runs the
/// full forward).
pub fn generate(params: &ModelParams, prompt: &[usize], opts: &GenerateOptions) -> Result<Generation, EngineError> {
    if prompt.is_empty() {
        return Err(EngineError::EmptyPrompt);
    }
    let max = params.config.max_seq_len;
    if prompt.len() + opts.max_new > max {
        return Err(EngineError::ContextOverflow { prompt: prompt.len(), max_new: opts.max_new, max });
    }
    let mut rng = match opts.decode {
        Decode::Temperature { tau, seed } if tau > 0.0 => Some((tau, ChaCha8Rng::seed_from_u64(seed))),
        _ => None,
    };
    let mut seq = prompt.to_vec();
    let mut stopped = false;
    for _ in 0..opts.max_new {
        let out = forward(params, &seq, false)?;
        let last = out.logits.row(seq.len() - 1);
        let next = match rng.as_mut() {
            None => argmax(last),
            Some((tau, rng)) => sample(last, *tau, rng.gen::<f64>()),
        };
        seq.push(next);
        if Some(next) == opts.stop_token {
            stopped = true;
            break;
        }
    }
    let tokens = seq[prompt.len()..].to_vec();
    let capture = if opts.capture && !tokens.is_empty() {
        forward(params, &seq[..seq.len() - 1], true)?.capture
    } else {
        None
    };
    Ok(Generation { tokens, stopped, capture })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn sample(row: &[f64], tau: f64, u: f64) -> usize {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row.iter().map(|x| ((x - max) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let target = u * total;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    row.len() - 1
}
