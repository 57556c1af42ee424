//! Pairwise reward model and sampling-based model comparison.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, DatasetSplit, PreferenceTriple};
use crate::error::{Error, Result};
use crate::lm::{self, GradBlock, LMConfig, TinyLM};
use crate::math::{mean, quantile_sorted, sigmoid, softplus, std_dev};
use crate::rng::derive_seed;
use crate::trainer::{fmt_sig9, lr_at, OptimizerState, TrainConfig};

/// Scalar scorer: a [`TinyLM`] backbone whose hidden states over the
/// response positions are mean-pooled and fed to a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub backbone: TinyLM,
    pub value_head: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardGrads {
    pub backbone: GradBlock,
    pub value_head: Vec<f64>,
    pub bias: f64,
}

impl RewardGrads {
    fn add_assign(&mut self, other: &RewardGrads) {
        self.backbone.add_assign(&other.backbone);
        for (a, b) in self.value_head.iter_mut().zip(&other.value_head) {
            *a += b;
        }
        self.bias += other.bias;
    }
}

struct Pooled {
    windows: Vec<usize>,
    hidden: Vec<f64>,
    mean: Vec<f64>,
}

impl RewardModel {
    /// Fresh backbone with a zero head, so every reward starts at exactly 0.
    pub fn new(config: LMConfig) -> Result<Self> {
        Ok(Self::from_backbone(TinyLM::new(config)?))
    }

    pub fn from_backbone(backbone: TinyLM) -> Self {
        let hd = backbone.config.hidden_dim;
        RewardModel {
            backbone,
            value_head: vec![0.0; hd],
            bias: 0.0,
        }
    }

    pub fn grads(&self) -> RewardGrads {
        RewardGrads {
            backbone: self.backbone.grad_block(),
            value_head: vec![0.0; self.value_head.len()],
            bias: 0.0,
        }
    }

    /// Hidden states of every window ending at a response token (inclusive).
    fn pool(&self, x: &[usize], y: &[usize]) -> Result<Pooled> {
        if y.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let cfg = &self.backbone.config;
        if let Some(&id) = x.iter().chain(y).find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        let (c, hd, m) = (cfg.context_window, cfg.hidden_dim, y.len());
        let seq: Vec<usize> = x.iter().chain(y).copied().collect();
        let mut windows = vec![0; m * c];
        let mut hidden = vec![0.0; m * hd];
        let mut pooled = vec![0.0; hd];
        for t in 0..m {
            let win = &mut windows[t * c..(t + 1) * c];
            self.backbone.window_into(&seq[..x.len() + t + 1], win);
            let h = &mut hidden[t * hd..(t + 1) * hd];
            self.backbone.hidden_into(win, h);
            for (p, v) in pooled.iter_mut().zip(h.iter()) {
                *p += v;
            }
        }
        for p in pooled.iter_mut() {
            *p /= m as f64;
        }
        Ok(Pooled {
            windows,
            hidden,
            mean: pooled,
        })
    }

    fn backward(&self, pooled: &Pooled, scale: f64, grads: &mut RewardGrads) {
        if scale == 0.0 {
            return;
        }
        let cfg = &self.backbone.config;
        let (c, hd) = (cfg.context_window, cfg.hidden_dim);
        let m = pooled.hidden.len() / hd;
        for (g, p) in grads.value_head.iter_mut().zip(&pooled.mean) {
            *g += scale * p;
        }
        grads.bias += scale;
        let dh: Vec<f64> = self
            .value_head
            .iter()
            .map(|v| scale * v / m as f64)
            .collect();
        let mut dpre = vec![0.0; hd];
        for t in 0..m {
            self.backbone.backward_hidden(
                &pooled.windows[t * c..(t + 1) * c],
                &pooled.hidden[t * hd..(t + 1) * hd],
                &dh,
                &mut grads.backbone,
                &mut dpre,
            );
        }
    }

    /// `grads += scale · ∂r(x, y)/∂θ`; returns r(x, y).
    pub fn accumulate_reward_grad(
        &self,
        x: &[usize],
        y: &[usize],
        scale: f64,
        grads: &mut RewardGrads,
    ) -> Result<f64> {
        let pooled = self.pool(x, y)?;
        self.backward(&pooled, scale, grads);
        Ok(self.head(&pooled.mean))
    }

    fn head(&self, pooled: &[f64]) -> f64 {
        self.value_head
            .iter()
            .zip(pooled)
            .map(|(v, p)| v * p)
            .sum::<f64>()
            + self.bias
    }

    /// Mean-pooled hidden state of `y` given `x` (the head's input).
    pub fn features(&self, x: &[usize], y: &[usize]) -> Result<Vec<f64>> {
        Ok(self.pool(x, y)?.mean)
    }
}

pub fn reward_forward(rm: &RewardModel, x: &[usize], y: &[usize]) -> Result<f64> {
    Ok(rm.head(&rm.pool(x, y)?.mean))
}

/// `-log σ(margin)`.
pub fn pair_loss_from_margin(margin: f64) -> f64 {
    softplus(-margin)
}

/// `-log σ(r(x, y_w) - r(x, y_l))`.
pub fn rm_pair_loss(rm: &RewardModel, triple: &PreferenceTriple) -> Result<f64> {
    let rw = reward_forward(rm, &triple.x, &triple.y_w)?;
    let rl = reward_forward(rm, &triple.x, &triple.y_l)?;
    Ok(pair_loss_from_margin(rw - rl))
}

/// `grads += scale · ∂ rm_pair_loss / ∂θ`; returns the loss.
pub fn rm_pair_loss_grad(
    rm: &RewardModel,
    triple: &PreferenceTriple,
    scale: f64,
    grads: &mut RewardGrads,
) -> Result<f64> {
    let pw = rm.pool(&triple.x, &triple.y_w)?;
    let pl = rm.pool(&triple.x, &triple.y_l)?;
    let margin = rm.head(&pw.mean) - rm.head(&pl.mean);
    let g = -sigmoid(-margin);
    rm.backward(&pw, scale * g, grads);
    rm.backward(&pl, -scale * g, grads);
    Ok(pair_loss_from_margin(margin))
}

/// Fraction of triples with `r_w > r_l`; exact ties count one half.
pub fn pairwise_accuracy(rm: &RewardModel, data: &[PreferenceTriple]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::TooFew { need: 1, got: 0 });
    }
    let scores: Vec<Result<f64>> = data
        .par_iter()
        .map(|t| {
            let rw = reward_forward(rm, &t.x, &t.y_w)?;
            let rl = reward_forward(rm, &t.x, &t.y_l)?;
            Ok(if rw > rl {
                1.0
            } else if rw == rl {
                0.5
            } else {
                0.0
            })
        })
        .collect();
    let mut sum = 0.0;
    for s in scores {
        sum += s?;
    }
    Ok(sum / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTrainConfig {
    pub lr_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub seed: u64,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        RewardTrainConfig {
            lr_max: 1e-2,
            epochs: 1,
            batch_size: 16,
            warmup_frac: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RewardTrainOutcome {
    pub model: RewardModel,
    /// Mean pair loss per step.
    pub losses: Vec<f64>,
    /// Pairwise accuracy on the test split.
    pub heldout_accuracy: f64,
}

const GRAD_CHUNK: usize = 4;

/// Train `init` on `split.train` with AdamW and the trainer's schedule, then
/// score pairwise accuracy on `split.test`.
pub fn train_reward(
    init: RewardModel,
    split: &DatasetSplit,
    cfg: &RewardTrainConfig,
) -> Result<RewardTrainOutcome> {
    let data = &split.train;
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr_max > 0.0) {
        return Err(Error::InvalidConfig(
            "reward training needs epochs, batch_size and lr_max > 0".into(),
        ));
    }
    let sched = TrainConfig {
        lr_max: cfg.lr_max,
        warmup_frac: cfg.warmup_frac,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        ..Default::default()
    };
    let mut rm = init;
    let total = sched.total_steps(data.len());
    let mut shapes: Vec<usize> = rm.backbone.tensors().iter().map(|(_, t)| t.len()).collect();
    shapes.extend([rm.value_head.len(), 1]);
    let mut opt = OptimizerState::new(&shapes, &sched);
    let mut losses = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for batch in make_batches(data.len(), cfg.batch_size, cfg.seed, epoch) {
            let scale = 1.0 / batch.len() as f64;
            let parts: Vec<Result<(RewardGrads, f64)>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut g = rm.grads();
                    let mut loss = 0.0;
                    for &i in chunk {
                        loss += rm_pair_loss_grad(&rm, &data[i], scale, &mut g)?;
                    }
                    Ok((g, loss))
                })
                .collect();
            let mut grads = rm.grads();
            let mut loss = 0.0;
            for p in parts {
                let (g, l) = p?;
                grads.add_assign(&g);
                loss += l;
            }
            losses.push(loss * scale);
            let lr = lr_at(step, total, &sched);
            let mut bias = vec![rm.bias];
            let mut params: Vec<&mut Vec<f64>> = rm.backbone.tensors_mut().into_iter().collect();
            params.push(&mut rm.value_head);
            params.push(&mut bias);
            let gb = [grads.bias];
            let mut named: Vec<(&'static str, &[f64])> = grads.backbone.tensors().to_vec();
            named.push(("value_head", &grads.value_head));
            named.push(("bias", &gb));
            opt.update(params, &named, lr)?;
            rm.bias = bias[0];
            step += 1;
        }
    }
    let heldout_accuracy = pairwise_accuracy(&rm, &split.test)?;
    Ok(RewardTrainOutcome {
        model: rm,
        losses,
        heldout_accuracy,
    })
}

/// Sampling settings shared by the comparison protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub rounds: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            rounds: 3,
            max_len: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub prompt_id: usize,
    pub round: usize,
    pub model: String,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub comparisons: usize,
    /// Percent; ties count half a win for each side.
    pub win_rate_a: f64,
    /// Standard deviation of the per-round rates.
    pub win_rate_std: f64,
    pub per_round_rates: Vec<f64>,
    pub mean_reward_a: f64,
    pub mean_reward_b: f64,
    pub rounds: usize,
    pub temperature: f64,
    #[serde(skip)]
    pub samples: Vec<RewardSample>,
}

/// Each round, both models sample one response per prompt with the same
/// per-(prompt, round) seed and the reward model picks the winner.
pub fn win_rate(
    model_a: &TinyLM,
    model_b: &TinyLM,
    prompts: &[Vec<usize>],
    rm: &RewardModel,
    cfg: &SamplingConfig,
) -> Result<WinRateReport> {
    if cfg.rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be >= 1".into()));
    }
    if prompts.is_empty() {
        return Err(Error::TooFew { need: 1, got: 0 });
    }
    let mut report = WinRateReport {
        wins_a: 0,
        wins_b: 0,
        ties: 0,
        comparisons: 0,
        win_rate_a: 0.0,
        win_rate_std: 0.0,
        per_round_rates: Vec::with_capacity(cfg.rounds),
        mean_reward_a: 0.0,
        mean_reward_b: 0.0,
        rounds: cfg.rounds,
        temperature: cfg.temperature,
        samples: Vec::with_capacity(2 * cfg.rounds * prompts.len()),
    };
    let mut rewards_a = Vec::new();
    let mut rewards_b = Vec::new();
    for round in 0..cfg.rounds {
        let pairs: Vec<Result<(f64, f64)>> = prompts
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let seed = derive_seed(cfg.seed, &[i as u64, round as u64]);
                let ya = model_a.generate(p, cfg.temperature, cfg.max_len, seed)?;
                let yb = model_b.generate(p, cfg.temperature, cfg.max_len, seed)?;
                Ok((reward_forward(rm, p, &ya)?, reward_forward(rm, p, &yb)?))
            })
            .collect();
        let (mut wins, mut ties) = (0usize, 0usize);
        for (i, pair) in pairs.into_iter().enumerate() {
            let (ra, rb) = pair?;
            if ra > rb {
                wins += 1;
                report.wins_a += 1;
            } else if ra < rb {
                report.wins_b += 1;
            } else {
                ties += 1;
                report.ties += 1;
            }
            rewards_a.push(ra);
            rewards_b.push(rb);
            for (model, reward) in [("a", ra), ("b", rb)] {
                report.samples.push(RewardSample {
                    prompt_id: i,
                    round,
                    model: model.into(),
                    reward,
                });
            }
        }
        report
            .per_round_rates
            .push(100.0 * (wins as f64 + 0.5 * ties as f64) / prompts.len() as f64);
    }
    report.comparisons = cfg.rounds * prompts.len();
    report.win_rate_a =
        100.0 * (report.wins_a as f64 + 0.5 * report.ties as f64) / report.comparisons as f64;
    report.win_rate_std = std_dev(&report.per_round_rates);
    report.mean_reward_a = mean(&rewards_a);
    report.mean_reward_b = mean(&rewards_b);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDistribution {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// 10th, 20th, …, 90th percentiles.
    pub deciles: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Reward of one sampled response per prompt.
pub fn reward_distribution(
    model: &TinyLM,
    prompts: &[Vec<usize>],
    rm: &RewardModel,
    cfg: &SamplingConfig,
) -> Result<RewardDistribution> {
    if prompts.is_empty() {
        return Err(Error::TooFew { need: 1, got: 0 });
    }
    let scores: Vec<Result<f64>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let y = model.generate(
                p,
                cfg.temperature,
                cfg.max_len,
                derive_seed(cfg.seed, &[i as u64]),
            )?;
            reward_forward(rm, p, &y)
        })
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(RewardDistribution {
        n: scores.len(),
        mean: mean(&scores),
        std: std_dev(&scores),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        deciles: (1..10)
            .map(|k| quantile_sorted(&sorted, k as f64 / 10.0))
            .collect(),
        scores,
    })
}

pub fn reward_samples_to_csv(samples: &[RewardSample]) -> String {
    let mut s = String::from("prompt_id,round,model,reward\n");
    for r in samples {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.prompt_id,
            r.round,
            r.model,
            fmt_sig9(r.reward)
        );
    }
    s
}

pub const REWARD_MAGIC: &[u8; 4] = b"ORRM";

/// `"ORRM" | u32 version | embedded LM checkpoint | head (f64 × hidden) | bias (f64)`.
pub fn save_reward_model(rm: &RewardModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(REWARD_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    lm::write_checkpoint(&rm.backbone, &mut buf).map_err(|e| Error::io(path, e))?;
    for x in rm.value_head.iter().chain(std::iter::once(&rm.bias)) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_reward_model(path: impl AsRef<Path>) -> Result<RewardModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_reward_model(&bytes)
}

pub fn decode_reward_model(bytes: &[u8]) -> Result<RewardModel> {
    if bytes.get(..4) != Some(REWARD_MAGIC.as_slice())
        || bytes.get(4..8) != Some(1u32.to_le_bytes().as_slice())
    {
        return Err(Error::BadCheckpoint("not a reward model file".into()));
    }
    let (backbone, used) = lm::checkpoint::decode(&bytes[8..])?;
    let hd = backbone.config.hidden_dim;
    let rest = &bytes[8 + used..];
    if rest.len() != 8 * (hd + 1) {
        return Err(Error::BadCheckpoint("reward head size mismatch".into()));
    }
    let vals: Vec<f64> = rest
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(RewardModel {
        backbone,
        value_head: vals[..hd].to_vec(),
        bias: vals[hd],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        corpus_texts, filter_and_tokenize, make_synthetic_corpus, split, TokenizeConfig,
    };
    use crate::lm::build_vocab;

    fn cfg(v: usize) -> LMConfig {
        LMConfig {
            vocab_size: v,
            embed_dim: 3,
            hidden_dim: 5,
            context_window: 3,
            seed: 4,
        }
    }

    fn random_rm() -> RewardModel {
        let mut rm = RewardModel::new(cfg(9)).unwrap();
        rm.backbone.randomize_all(2, 0.5);
        rm.value_head = vec![0.3, -0.7, 0.2, 0.9, -0.1];
        rm.bias = 0.05;
        rm
    }

    #[test]
    fn zero_head_gives_zero_reward() {
        let rm = RewardModel::new(cfg(9)).unwrap();
        assert_eq!(reward_forward(&rm, &[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(reward_forward(&rm, &[], &[0]).unwrap(), 0.0);
    }

    #[test]
    fn reward_is_deterministic_and_rejects_empty() {
        let rm = random_rm();
        let a = reward_forward(&rm, &[1, 2], &[3, 4, 5]).unwrap();
        assert_eq!(a, reward_forward(&rm, &[1, 2], &[3, 4, 5]).unwrap());
        assert!(a.is_finite());
        assert!(matches!(
            reward_forward(&rm, &[1], &[]),
            Err(Error::EmptyTarget)
        ));
        assert!(reward_forward(&rm, &[1], &[9]).is_err());
    }

    #[test]
    fn pair_loss_values() {
        assert!((pair_loss_from_margin(0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((pair_loss_from_margin(4f64.ln()) - 1.25f64.ln()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in -40..=40 {
            let l = pair_loss_from_margin(i as f64 * 0.25);
            assert!(l < prev);
            prev = l;
        }
        for m in [0.0, 0.3, -2.0, 7.5] {
            let s = pair_loss_from_margin(m) + pair_loss_from_margin(-m);
            assert!(s >= 2.0 * std::f64::consts::LN_2 - 1e-15);
        }
        let rm = random_rm();
        let t = PreferenceTriple {
            x: vec![1],
            y_w: vec![2, 3],
            y_l: vec![4],
        };
        let swapped = PreferenceTriple {
            x: vec![1],
            y_w: vec![4],
            y_l: vec![2, 3],
        };
        let m =
            reward_forward(&rm, &[1], &[2, 3]).unwrap() - reward_forward(&rm, &[1], &[4]).unwrap();
        assert!((rm_pair_loss(&rm, &swapped).unwrap() - pair_loss_from_margin(-m)).abs() < 1e-15);
        assert!((rm_pair_loss(&rm, &t).unwrap() - pair_loss_from_margin(m)).abs() < 1e-15);
    }

    #[test]
    fn value_head_gradient_matches_finite_difference() {
        let rm = random_rm();
        let (x, y) = ([1, 2], [3, 4, 5]);
        let mut g = rm.grads();
        rm.accumulate_reward_grad(&x, &y, 1.0, &mut g).unwrap();
        let h = 1e-6;
        for j in 0..rm.value_head.len() {
            let mut p = rm.clone();
            p.value_head[j] += h;
            let mut m = rm.clone();
            m.value_head[j] -= h;
            let fd = (reward_forward(&p, &x, &y).unwrap() - reward_forward(&m, &x, &y).unwrap())
                / (2.0 * h);
            let rel = (fd - g.value_head[j]).abs() / g.value_head[j].abs().max(1e-8);
            assert!(rel < 1e-6, "j={j} rel={rel}");
        }
        assert_eq!(g.bias, 1.0);
    }

    #[test]
    fn save_load_round_trip() {
        let rm = random_rm();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rm.orrm");
        save_reward_model(&rm, &p).unwrap();
        assert_eq!(load_reward_model(&p).unwrap(), rm);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        assert!(decode_reward_model(&bytes).is_err());
    }

    #[test]
    fn untrained_accuracy_is_half() {
        let rm = RewardModel::new(cfg(9)).unwrap();
        let data = vec![
            PreferenceTriple {
                x: vec![1],
                y_w: vec![2],
                y_l: vec![3]
            };
            5
        ];
        assert_eq!(pairwise_accuracy(&rm, &data).unwrap(), 0.5);
    }

    #[test]
    fn self_comparison_is_exactly_half() {
        let mut m = TinyLM::new(cfg(9)).unwrap();
        m.randomize_all(8, 0.5);
        let rm = random_rm();
        let prompts = vec![vec![1, 2], vec![3], vec![4, 5, 6]];
        let r = win_rate(&m, &m, &prompts, &rm, &SamplingConfig::default()).unwrap();
        assert_eq!(r.win_rate_a, 50.0);
        assert_eq!(r.ties, r.comparisons);
        assert_eq!(r.per_round_rates, vec![50.0; 3]);
        assert_eq!(r.win_rate_std, 0.0);
        assert_eq!(r.samples.len(), 2 * 3 * 3);
    }

    #[test]
    fn win_decisions_invariant_to_reward_shift() {
        let mut a = TinyLM::new(cfg(9)).unwrap();
        a.randomize_all(8, 0.8);
        let mut b = a.clone();
        b.randomize_all(9, 0.8);
        let rm = random_rm();
        let prompts: Vec<Vec<usize>> = (0..8).map(|i| vec![i % 7, (i + 3) % 7]).collect();
        let base = win_rate(&a, &b, &prompts, &rm, &SamplingConfig::default()).unwrap();
        let shifted_rm = RewardModel {
            bias: rm.bias + 0.5,
            ..rm.clone()
        };
        let shifted = win_rate(&a, &b, &prompts, &shifted_rm, &SamplingConfig::default()).unwrap();
        assert_eq!(
            (base.wins_a, base.wins_b, base.ties),
            (shifted.wins_a, shifted.wins_b, shifted.ties)
        );
        assert_eq!(base.wins_a + base.wins_b + base.ties, base.comparisons);
        let inv = win_rate(&b, &a, &prompts, &rm, &SamplingConfig::default()).unwrap();
        assert!((base.win_rate_a + inv.win_rate_a - 100.0).abs() < 1e-9);
    }

    #[test]
    fn distribution_summary() {
        let mut m = TinyLM::new(cfg(9)).unwrap();
        m.randomize_all(8, 0.8);
        let prompts: Vec<Vec<usize>> = (0..20).map(|i| vec![i % 7]).collect();
        let zero = RewardModel::new(cfg(9)).unwrap();
        let d = reward_distribution(&m, &prompts, &zero, &SamplingConfig::default()).unwrap();
        assert_eq!(d.std, 0.0);
        let d =
            reward_distribution(&m, &prompts, &random_rm(), &SamplingConfig::default()).unwrap();
        assert_eq!(d.scores.len(), 20);
        assert!(d.deciles.windows(2).all(|w| w[0] <= w[1]));
        assert!(d.min <= d.deciles[0] && d.deciles[8] <= d.max);
    }

    #[test]
    fn training_separates_styles() {
        let rows = make_synthetic_corpus(300, 5);
        let vocab = build_vocab(&corpus_texts(&rows), 1, false).unwrap();
        let (triples, stats) = filter_and_tokenize(&rows, &vocab, &TokenizeConfig::default());
        let sp = split(triples, [0.8, 0.1, 0.1], 5, stats).unwrap();
        let init = RewardModel::new(LMConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            hidden_dim: 16,
            context_window: 4,
            seed: 1,
        })
        .unwrap();
        let out = train_reward(init, &sp, &RewardTrainConfig::default()).unwrap();
        assert!(
            out.heldout_accuracy > 0.8,
            "accuracy {}",
            out.heldout_accuracy
        );
        assert_eq!(out.losses.len(), sp.train.len().div_ceil(16));
    }

    #[test]
    fn samples_csv_header() {
        let csv = reward_samples_to_csv(&[RewardSample {
            prompt_id: 3,
            round: 1,
            model: "a".into(),
            reward: 0.5,
        }]);
        assert_eq!(csv, "prompt_id,round,model,reward\n3,1,a,0.5\n");
    }
}
