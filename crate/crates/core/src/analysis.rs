//! Monte-Carlo study of the two ratio contrasts, and embedding-based
//! response diversity.

use std::fmt::Write as _;

use rand::distributions::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::TinyLM;
use crate::math::{mean, quantile_sorted, std_dev};
use crate::rng::{derive_seed, hash_tokens, stream};
use crate::trainer::fmt_sig9;

pub const HISTOGRAM_BINS: usize = 200;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` uniform edges over `[min, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn uniform(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = if width > 0.0 {
                ((v - lo) / width) as usize
            } else {
                0
            };
            counts[idx.min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q01: f64,
    pub q99: f64,
    pub histogram: Histogram,
}

impl SeriesStats {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        SeriesStats {
            mean: mean(values),
            std: std_dev(values),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            q01: quantile_sorted(&sorted, 0.01),
            q99: quantile_sorted(&sorted, 0.99),
            histogram: Histogram::uniform(values, HISTOGRAM_BINS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStudyReport {
    pub n_samples: usize,
    pub beta: f64,
    pub seed: u64,
    pub log_pr: SeriesStats,
    pub log_or: SeriesStats,
}

/// `n` i.i.d. pairs `(X1, X2)` from the open unit interval, drawn in fixed
/// chunks so the result does not depend on the thread count.
pub fn sample_uniform_pairs(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[0x7A71, c as u64]);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| (rng.sample(Open01), rng.sample(Open01)))
                .collect()
        })
        .collect();
    parts.concat()
}

fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Log probability ratio `β(log X1 − log X2)` and log odds ratio
/// `logit X1 − logit X2`, both from the same draws.
pub fn ratio_series(pairs: &[(f64, f64)], beta: f64) -> (Vec<f64>, Vec<f64>) {
    pairs
        .iter()
        .map(|&(a, b)| (beta * (a.ln() - b.ln()), logit(a) - logit(b)))
        .unzip()
}

pub fn sample_ratio_distributions(n: usize, beta: f64, seed: u64) -> Result<RatioStudyReport> {
    if n < 2 {
        return Err(Error::TooFew { need: 2, got: n });
    }
    let (pr, or) = ratio_series(&sample_uniform_pairs(n, seed), beta);
    Ok(RatioStudyReport {
        n_samples: n,
        beta,
        seed,
        log_pr: SeriesStats::of(&pr),
        log_or: SeriesStats::of(&or),
    })
}

/// Rows `series,bin_left,bin_right,count`.
pub fn histogram_csv(series: &[(&str, &Histogram)]) -> String {
    let mut s = String::from("series,bin_left,bin_right,count\n");
    for (name, h) in series {
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{name},{},{},{c}",
                fmt_sig9(h.edges[i]),
                fmt_sig9(h.edges[i + 1])
            );
        }
    }
    s
}

/// Mean hidden activation over the windows ending at each response token,
/// L2-normalized. Stands in for an external sentence-embedding model.
pub fn embed_response(model: &TinyLM, response: &[usize]) -> Result<Vec<f64>> {
    if response.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let cfg = &model.config;
    if let Some(&id) = response.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    let mut window = vec![0; cfg.context_window];
    let mut h = vec![0.0; cfg.hidden_dim];
    let mut acc = vec![0.0; cfg.hidden_dim];
    for t in 0..response.len() {
        model.window_into(&response[..=t], &mut window);
        model.hidden_into(&window, &mut h);
        for (a, v) in acc.iter_mut().zip(&h) {
            *a += v;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::ZeroEmbedding);
    }
    Ok(acc.into_iter().map(|v| v / norm).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    /// `½ · Σ_{i<j} cos / (N(N−1))`, taken as written; ¼ for identical vectors.
    pub literal: f64,
    /// `Σ_{i<j} cos / (N(N−1)/2)`; 1 for identical vectors.
    pub mean_cosine: f64,
}

/// Pairwise-cosine similarity of a set of embeddings. Cosines are summed in
/// sorted order so the result is exactly invariant to input order.
pub fn diversity_d(embeddings: &[Vec<f64>]) -> Result<Diversity> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::TooFew { need: 2, got: n });
    }
    let mut cos = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            cos.push(cosine(&embeddings[i], &embeddings[j]));
        }
    }
    cos.sort_by(f64::total_cmp);
    let sum: f64 = cos.iter().sum();
    let nn = (n * (n - 1)) as f64;
    Ok(Diversity {
        literal: 0.5 * sum / nn,
        mean_cosine: sum / (nn / 2.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub k: usize,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            k: 5,
            temperature: 1.0,
            max_len: 16,
            seed: 0,
        }
    }
}

/// Embeddings of `k` samples for `prompt`. Streams are keyed by the prompt's
/// content, so a prompt's samples do not depend on its position in a list.
fn sample_embeddings(
    model: &TinyLM,
    prompt: &[usize],
    k: usize,
    cfg: &DiversityConfig,
) -> Result<Vec<Vec<f64>>> {
    let key = hash_tokens(prompt);
    (0..k)
        .map(|j| {
            let y = model.generate(
                prompt,
                cfg.temperature,
                cfg.max_len,
                derive_seed(cfg.seed, &[key, j as u64]),
            )?;
            embed_response(model, &y)
        })
        .collect()
}

fn sorted_mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    mean(&xs)
}

/// Mean over prompts of the diversity of that prompt's `k` samples.
pub fn per_input_diversity(
    model: &TinyLM,
    prompts: &[Vec<usize>],
    cfg: &DiversityConfig,
) -> Result<Diversity> {
    if cfg.k < 2 {
        return Err(Error::TooFew {
            need: 2,
            got: cfg.k,
        });
    }
    if prompts.is_empty() {
        return Err(Error::TooFew { need: 1, got: 0 });
    }
    let per: Vec<Result<Diversity>> = prompts
        .par_iter()
        .map(|p| diversity_d(&sample_embeddings(model, p, cfg.k, cfg)?))
        .collect();
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Diversity {
        literal: sorted_mean(per.iter().map(|d| d.literal).collect()),
        mean_cosine: sorted_mean(per.iter().map(|d| d.mean_cosine).collect()),
    })
}

/// Diversity of the first sample of each prompt.
pub fn across_input_diversity(
    model: &TinyLM,
    prompts: &[Vec<usize>],
    cfg: &DiversityConfig,
) -> Result<Diversity> {
    if prompts.len() < 2 {
        return Err(Error::TooFew {
            need: 2,
            got: prompts.len(),
        });
    }
    let firsts: Vec<Result<Vec<f64>>> = prompts
        .par_iter()
        .map(|p| Ok(sample_embeddings(model, p, 1, cfg)?.remove(0)))
        .collect();
    diversity_d(&firsts.into_iter().collect::<Result<Vec<_>>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub embedding: String,
    pub n_prompts: usize,
    pub config: DiversityConfig,
    pub per_input: Diversity,
    pub across_input: Diversity,
}

pub fn diversity_report(
    model: &TinyLM,
    prompts: &[Vec<usize>],
    cfg: &DiversityConfig,
) -> Result<DiversityReport> {
    Ok(DiversityReport {
        embedding: "policy mean hidden state (local substitute)".into(),
        n_prompts: prompts.len(),
        config: *cfg,
        per_input: per_input_diversity(model, prompts, cfg)?,
        across_input: across_input_diversity(model, prompts, cfg)?,
    })
}
