use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_softmax_into;
use crate::rng;

/// Half-width of the uniform initialisation of embeddings and hidden weights.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LMConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_window: usize,
    pub seed: u32,
}

impl LMConfig {
    pub fn validate(&self) -> Result<()> {
        // <unk>, <pad> and <eos> always occupy the last three ids.
        if self.vocab_size < 3 {
            return Err(Error::InvalidConfig("vocab_size must be at least 3".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.context_window == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim, hidden_dim and context_window must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.context_window * self.embed_dim
    }

    pub fn param_count(&self) -> usize {
        let (v, h) = (self.vocab_size, self.hidden_dim);
        v * self.embed_dim + self.input_dim() * h + h + h * v + v
    }
}

/// Per-sequence likelihood summary under teacher forcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqScore {
    /// Mean per-token log-probability, `(1/m) Σ_t log P(y_t | x, y_<t)`.
    pub avg_logp: f64,
    pub sum_logp: f64,
    pub len: usize,
}

impl SeqScore {
    pub fn from_avg(avg_logp: f64, len: usize) -> Self {
        SeqScore {
            avg_logp,
            sum_logp: avg_logp * len as f64,
            len,
        }
    }

    /// Length-normalised probability: the geometric mean of token probabilities.
    pub fn prob(&self) -> f64 {
        self.avg_logp.exp()
    }

    pub fn odds(&self) -> f64 {
        let p = self.prob();
        p / (1.0 - p)
    }
}

/// Parameters, stored flat and row-major:
/// `embedding[v, k]`, `hidden_weights[i, j]` with `i` over the concatenated
/// window, `output_weights[j, v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyLM {
    pub config: LMConfig,
    pub embedding: Vec<f64>,
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

/// Gradient accumulator shaped like a [`TinyLM`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBlock {
    pub embedding: Vec<f64>,
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

pub(crate) const TENSOR_NAMES: [&str; 5] = [
    "embedding",
    "hidden_weights",
    "hidden_bias",
    "output_weights",
    "output_bias",
];

impl GradBlock {
    pub fn zeros(config: &LMConfig) -> Self {
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        GradBlock {
            embedding: vec![0.0; v * e],
            hidden_weights: vec![0.0; config.input_dim() * h],
            hidden_bias: vec![0.0; h],
            output_weights: vec![0.0; h * v],
            output_bias: vec![0.0; v],
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            (TENSOR_NAMES[0], &self.embedding),
            (TENSOR_NAMES[1], &self.hidden_weights),
            (TENSOR_NAMES[2], &self.hidden_bias),
            (TENSOR_NAMES[3], &self.output_weights),
            (TENSOR_NAMES[4], &self.output_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.embedding,
            &mut self.hidden_weights,
            &mut self.hidden_bias,
            &mut self.output_weights,
            &mut self.output_bias,
        ]
    }

    pub fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn matches(&self, config: &LMConfig) -> bool {
        let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        self.embedding.len() == v * d
            && self.hidden_weights.len() == config.input_dim() * h
            && self.hidden_bias.len() == h
            && self.output_weights.len() == h * v
            && self.output_bias.len() == v
    }

    /// `self += other`, element by element in a fixed order.
    pub fn add_assign(&mut self, other: &GradBlock) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Flat view in declared tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }
}

impl TinyLM {
    /// Embeddings and hidden weights ~ U(-0.08, 0.08) from `config.seed`;
    /// hidden bias and the whole output layer start at zero, so the initial
    /// next-token distribution is exactly uniform.
    pub fn new(config: LMConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed as u64, &[0x1A_u64]);
        let g = GradBlock::zeros(&config);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
                .collect()
        };
        Ok(TinyLM {
            config,
            embedding: uniform(g.embedding.len()),
            hidden_weights: uniform(g.hidden_weights.len()),
            hidden_bias: g.hidden_bias,
            output_weights: g.output_weights,
            output_bias: g.output_bias,
        })
    }

    /// Fill every tensor (output layer included) with U(-scale, scale).
    /// Used to get generic, non-uniform models for gradient checks.
    pub fn randomize_all(&mut self, seed: u64, scale: f64) {
        let mut rng = rng::stream(seed, &[0x2B]);
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            (TENSOR_NAMES[0], &self.embedding),
            (TENSOR_NAMES[1], &self.hidden_weights),
            (TENSOR_NAMES[2], &self.hidden_bias),
            (TENSOR_NAMES[3], &self.output_weights),
            (TENSOR_NAMES[4], &self.output_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.embedding,
            &mut self.hidden_weights,
            &mut self.hidden_bias,
            &mut self.output_weights,
            &mut self.output_bias,
        ]
    }

    pub fn grad_block(&self) -> GradBlock {
        GradBlock::zeros(&self.config)
    }

    pub fn pad_id(&self) -> usize {
        self.config.vocab_size - 2
    }

    pub fn eos_id(&self) -> usize {
        self.config.vocab_size - 1
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let vocab_size = self.config.vocab_size;
        match ids.iter().find(|&&id| id >= vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange { id, vocab_size }),
            None => Ok(()),
        }
    }

    /// Last `context_window` ids of `context`, left-padded with `<pad>`.
    pub(crate) fn window_into(&self, context: &[usize], out: &mut [usize]) {
        let c = self.config.context_window;
        let take = context.len().min(c);
        let pad = c - take;
        out[..pad].fill(self.pad_id());
        out[pad..].copy_from_slice(&context[context.len() - take..]);
    }

    /// Hidden activations `tanh(W1ᵀ [e_1; …; e_C] + b1)` for one window.
    pub(crate) fn hidden_into(&self, window: &[usize], h: &mut [f64]) {
        let (d, hd) = (self.config.embed_dim, self.config.hidden_dim);
        h.copy_from_slice(&self.hidden_bias);
        for (slot, &tok) in window.iter().enumerate() {
            let emb = &self.embedding[tok * d..(tok + 1) * d];
            for (k, &val) in emb.iter().enumerate() {
                let row = (slot * d + k) * hd;
                let w = &self.hidden_weights[row..row + hd];
                for (hj, wj) in h.iter_mut().zip(w) {
                    *hj += val * wj;
                }
            }
        }
        for hj in h.iter_mut() {
            *hj = hj.tanh();
        }
    }

    pub(crate) fn logits_into(&self, h: &[f64], z: &mut [f64]) {
        let v = self.config.vocab_size;
        z.copy_from_slice(&self.output_bias);
        for (j, &hj) in h.iter().enumerate() {
            let w = &self.output_weights[j * v..(j + 1) * v];
            for (zv, wv) in z.iter_mut().zip(w) {
                *zv += hj * wv;
            }
        }
    }

    /// Backpropagate `dh` (gradient w.r.t. the post-tanh hidden activations)
    /// into the hidden layer and the embeddings of `window`.
    pub(crate) fn backward_hidden(
        &self,
        window: &[usize],
        h: &[f64],
        dh: &[f64],
        grads: &mut GradBlock,
        dpre: &mut [f64],
    ) {
        let (d, hd) = (self.config.embed_dim, self.config.hidden_dim);
        for ((p, &g), &hj) in dpre.iter_mut().zip(dh).zip(h) {
            *p = g * (1.0 - hj * hj);
        }
        for (b, p) in grads.hidden_bias.iter_mut().zip(dpre.iter()) {
            *b += p;
        }
        for (slot, &tok) in window.iter().enumerate() {
            for k in 0..d {
                let val = self.embedding[tok * d + k];
                let row = (slot * d + k) * hd;
                let w = &self.hidden_weights[row..row + hd];
                let gw = &mut grads.hidden_weights[row..row + hd];
                let mut de = 0.0;
                for ((gwj, wj), pj) in gw.iter_mut().zip(w).zip(dpre.iter()) {
                    *gwj += val * pj;
                    de += wj * pj;
                }
                grads.embedding[tok * d + k] += de;
            }
        }
    }

    /// Log-probabilities of the next token given `context`.
    pub fn next_token_logprobs(&self, context: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(context)?;
        let cfg = &self.config;
        let mut window = vec![0; cfg.context_window];
        let mut h = vec![0.0; cfg.hidden_dim];
        let mut z = vec![0.0; cfg.vocab_size];
        self.window_into(context, &mut window);
        self.hidden_into(&window, &mut h);
        self.logits_into(&h, &mut z);
        let mut out = vec![0.0; cfg.vocab_size];
        log_softmax_into(&z, &mut out);
        Ok(out)
    }

    /// Teacher-forced forward pass over `y` given prefix `x`, keeping the
    /// activations needed for a later backward pass.
    pub fn trace(&self, x: &[usize], y: &[usize]) -> Result<SeqTrace> {
        if y.is_empty() {
            return Err(Error::EmptyTarget);
        }
        self.check_ids(x)?;
        self.check_ids(y)?;
        let cfg = &self.config;
        let (c, hd, v) = (cfg.context_window, cfg.hidden_dim, cfg.vocab_size);
        let m = y.len();
        let mut seq = Vec::with_capacity(x.len() + m);
        seq.extend_from_slice(x);
        seq.extend_from_slice(y);

        let mut windows = vec![0; m * c];
        let mut hidden = vec![0.0; m * hd];
        let mut probs = vec![0.0; m * v];
        let mut z = vec![0.0; v];
        let mut logp = vec![0.0; v];
        let mut sum_logp = 0.0;
        for t in 0..m {
            let win = &mut windows[t * c..(t + 1) * c];
            self.window_into(&seq[..x.len() + t], win);
            let h = &mut hidden[t * hd..(t + 1) * hd];
            self.hidden_into(win, h);
            self.logits_into(h, &mut z);
            log_softmax_into(&z, &mut logp);
            sum_logp += logp[y[t]];
            for (p, &l) in probs[t * v..(t + 1) * v].iter_mut().zip(&logp) {
                *p = l.exp();
            }
        }
        Ok(SeqTrace {
            score: SeqScore {
                avg_logp: sum_logp / m as f64,
                sum_logp,
                len: m,
            },
            targets: y.to_vec(),
            windows,
            hidden,
            probs,
        })
    }

    pub fn seq_score(&self, x: &[usize], y: &[usize]) -> Result<SeqScore> {
        Ok(self.trace(x, y)?.score)
    }

    /// `grads += upstream_scale · ∂ avg_logp(y | x) / ∂θ`.
    pub fn backward_seq_logp(
        &self,
        x: &[usize],
        y: &[usize],
        upstream_scale: f64,
        grads: &mut GradBlock,
    ) -> Result<()> {
        if !grads.matches(&self.config) {
            return Err(Error::ShapeMismatch(
                "gradient block does not match model".into(),
            ));
        }
        if upstream_scale == 0.0 {
            return Ok(());
        }
        self.trace(x, y)?.backward(self, upstream_scale, grads)
    }

    /// Ancestral sampling from `prompt`. Stops after emitting `<eos>` (which
    /// is included in the output) or after `max_len` tokens.
    pub fn generate(
        &self,
        prompt: &[usize],
        temperature: f64,
        max_len: usize,
        rng_seed: u64,
    ) -> Result<Vec<usize>> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be >= 1".into()));
        }
        self.check_ids(prompt)?;
        let mut rng = rng::stream(rng_seed, &[0x3C]);
        let mut context = prompt.to_vec();
        let mut out = Vec::with_capacity(max_len);
        let mut scaled = vec![0.0; self.config.vocab_size];
        for _ in 0..max_len {
            let logp = self.next_token_logprobs(&context)?;
            for (s, l) in scaled.iter_mut().zip(&logp) {
                *s = l / temperature;
            }
            let mut probs = vec![0.0; scaled.len()];
            log_softmax_into(&scaled, &mut probs);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = probs.len() - 1;
            for (i, lp) in probs.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    tok = i;
                    break;
                }
            }
            out.push(tok);
            context.push(tok);
            if tok == self.eos_id() {
                break;
            }
        }
        Ok(out)
    }
}

/// Cached activations of one teacher-forced pass.
#[derive(Debug, Clone)]
pub struct SeqTrace {
    pub score: SeqScore,
    targets: Vec<usize>,
    windows: Vec<usize>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl SeqTrace {
    /// Accumulate `scale · ∂ avg_logp / ∂θ` using the cached activations.
    pub fn backward(&self, model: &TinyLM, scale: f64, grads: &mut GradBlock) -> Result<()> {
        if !grads.matches(&model.config) {
            return Err(Error::ShapeMismatch(
                "gradient block does not match model".into(),
            ));
        }
        if scale == 0.0 {
            return Ok(());
        }
        let cfg = &model.config;
        let (c, hd, v) = (cfg.context_window, cfg.hidden_dim, cfg.vocab_size);
        let m = self.targets.len();
        let coef = scale / m as f64;
        let mut dz = vec![0.0; v];
        let mut dh = vec![0.0; hd];
        let mut dpre = vec![0.0; hd];
        for t in 0..m {
            // d log softmax(z)[y] / dz = onehot(y) - softmax(z)
            for (g, p) in dz.iter_mut().zip(&self.probs[t * v..(t + 1) * v]) {
                *g = -coef * p;
            }
            dz[self.targets[t]] += coef;

            let h = &self.hidden[t * hd..(t + 1) * hd];
            for (b, g) in grads.output_bias.iter_mut().zip(&dz) {
                *b += g;
            }
            for (j, &hj) in h.iter().enumerate() {
                let w = &model.output_weights[j * v..(j + 1) * v];
                let gw = &mut grads.output_weights[j * v..(j + 1) * v];
                let mut acc = 0.0;
                for ((gwv, wv), g) in gw.iter_mut().zip(w).zip(&dz) {
                    *gwv += hj * g;
                    acc += wv * g;
                }
                dh[j] = acc;
            }
            model.backward_hidden(&self.windows[t * c..(t + 1) * c], h, &dh, grads, &mut dpre);
        }
        Ok(())
    }
}
