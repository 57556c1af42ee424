//! Pairwise preference data: JSONL ingestion, filtering, splitting, batching,
//! and a synthetic style corpus for desk-scale experiments.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::Vocab;
use crate::rng;

pub const DEFAULT_PROMPT_CAP: usize = 128;
pub const DEFAULT_MAX_LEN: usize = 64;

/// One untokenized `(prompt, chosen, rejected)` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// Tokenized preference pair. Responses are `<eos>`-terminated (unless
/// truncated), non-empty and distinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceTriple {
    pub x: Vec<usize>,
    pub y_w: Vec<usize>,
    pub y_l: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropStats {
    pub input: usize,
    pub identical: usize,
    pub empty: usize,
    pub too_long: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedRows {
    pub rows: Vec<RawTriple>,
    pub errors: Vec<LineError>,
}

/// Read one JSON object per line. Malformed lines are recorded and skipped;
/// blank lines are ignored.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<LoadedRows> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = LoadedRows::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawTriple>(&line) {
            Ok(row) => out.rows.push(row),
            Err(e) => out.errors.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    if out.rows.is_empty() && out.errors.is_empty() {
        log::warn!("{}: no rows", path.display());
    }
    for e in &out.errors {
        log::warn!("{}:{}: skipped: {}", path.display(), e.line, e.message);
    }
    Ok(out)
}

pub fn write_jsonl(rows: &[RawTriple], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeConfig {
    /// Prompts with more tokens than this are dropped.
    pub prompt_cap: usize,
    /// Responses (including `<eos>`) are truncated from the right to this length.
    pub max_len: usize,
}

impl Default for TokenizeConfig {
    fn default() -> Self {
        TokenizeConfig {
            prompt_cap: DEFAULT_PROMPT_CAP,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

enum Verdict {
    Keep(PreferenceTriple),
    Identical,
    Empty,
    TooLong,
}

fn judge(row: &RawTriple, vocab: &Vocab, cfg: &TokenizeConfig) -> Verdict {
    if row.chosen == row.rejected {
        return Verdict::Identical;
    }
    let w = vocab.tokenize(&row.chosen, false);
    let l = vocab.tokenize(&row.rejected, false);
    if w.is_empty() || l.is_empty() {
        return Verdict::Empty;
    }
    let x = vocab.tokenize(&row.prompt, false);
    if x.len() > cfg.prompt_cap {
        return Verdict::TooLong;
    }
    let finish = |mut y: Vec<usize>| {
        y.push(vocab.eos_id());
        y.truncate(cfg.max_len.max(1));
        y
    };
    let (y_w, y_l) = (finish(w), finish(l));
    // distinct strings can still collide after tokenization (unknown words,
    // whitespace) or truncation
    if y_w == y_l {
        return Verdict::Identical;
    }
    Verdict::Keep(PreferenceTriple { x, y_w, y_l })
}

fn tally(stats: &mut DropStats, v: &Verdict) {
    match v {
        Verdict::Keep(_) => stats.kept += 1,
        Verdict::Identical => stats.identical += 1,
        Verdict::Empty => stats.empty += 1,
        Verdict::TooLong => stats.too_long += 1,
    }
}

/// Raw-row form of [`filter_and_tokenize`]: returns the surviving rows unchanged.
pub fn filter_rows(
    rows: &[RawTriple],
    vocab: &Vocab,
    cfg: &TokenizeConfig,
) -> (Vec<RawTriple>, DropStats) {
    let mut stats = DropStats {
        input: rows.len(),
        ..Default::default()
    };
    let kept = rows
        .iter()
        .filter(|r| {
            let v = judge(r, vocab, cfg);
            tally(&mut stats, &v);
            matches!(v, Verdict::Keep(_))
        })
        .cloned()
        .collect();
    (kept, stats)
}

/// Drop identical pairs, empty responses and over-long prompts; tokenize the rest.
pub fn filter_and_tokenize(
    rows: &[RawTriple],
    vocab: &Vocab,
    cfg: &TokenizeConfig,
) -> (Vec<PreferenceTriple>, DropStats) {
    let mut stats = DropStats {
        input: rows.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let v = judge(r, vocab, cfg);
        tally(&mut stats, &v);
        if let Verdict::Keep(t) = v {
            out.push(t);
        }
    }
    (out, stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PreferenceTriple>,
    pub eval: Vec<PreferenceTriple>,
    pub test: Vec<PreferenceTriple>,
    pub seed: u64,
    pub stats: DropStats,
}

/// Shuffle with `seed`, then cut into train/eval/test by `fractions`.
pub fn split(
    data: Vec<PreferenceTriple>,
    fractions: [f64; 3],
    seed: u64,
    stats: DropStats,
) -> Result<DatasetSplit> {
    if fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::InvalidSplit("fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "fractions sum to {total}, expected 1"
        )));
    }
    let n = data.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_eval = ((fractions[1] * n as f64).round() as usize).min(n.saturating_sub(n_train));
    let n_test = n - n_train.min(n) - n_eval;
    if n_train == 0 || n_eval == 0 || n_test == 0 || n_train > n {
        return Err(Error::InvalidSplit(format!(
            "{n} rows give an empty split ({n_train}/{n_eval}/{n_test})"
        )));
    }
    let mut data = data;
    data.shuffle(&mut rng::stream(seed, &[0x5D]));
    let test = data.split_off(n_train + n_eval);
    let eval = data.split_off(n_train);
    Ok(DatasetSplit {
        train: data,
        eval,
        test,
        seed,
        stats,
    })
}

/// Index batches for one epoch: a fresh permutation keyed by `(seed, epoch)`,
/// cut into chunks of `batch_size` with the final short batch kept.
pub fn make_batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::stream(seed, &[0xBA7C, epoch as u64]));
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Style words. Chosen responses open with a polite word, rejected with a rude one.
pub const POLITE_WORDS: [&str; 4] = ["please", "kindly", "gladly", "thanks"];
pub const RUDE_WORDS: [&str; 4] = ["whatever", "ugh", "obviously", "meh"];

const TOPICS: [(&str, &str, &str); 12] = [
    ("dog", "loyal", "fur"),
    ("sky", "blue", "clouds"),
    ("sea", "deep", "waves"),
    ("forest", "green", "trees"),
    ("desert", "dry", "sand"),
    ("city", "busy", "streets"),
    ("mountain", "tall", "snow"),
    ("river", "long", "fish"),
    ("garden", "quiet", "flowers"),
    ("engine", "loud", "pistons"),
    ("library", "calm", "books"),
    ("market", "crowded", "stalls"),
];

const PROMPT_TEMPLATES: [&str; 3] = [
    "tell me about the {}",
    "what is the {} like",
    "describe the {}",
];

/// Knobs of the synthetic style corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Probability that an inner style slot of a chosen response is rude.
    pub chosen_noise: f64,
    /// Probability that an inner style slot of a rejected response is polite.
    pub rejected_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            chosen_noise: 0.3,
            rejected_noise: 0.0,
        }
    }
}

/// Template corpus with a learnable style contrast.
///
/// Both responses share the same content
/// (`<opener> the <topic> is <adj> <s1> with <noun> all around <s2>`), so
/// fitting the chosen responses also raises the likelihood of the rejected
/// ones. They differ only in style words. The opener is always polite for the
/// chosen response and rude for the rejected one; the inner slots follow the
/// response's style except with the configured noise probability. With the default
/// noise the chosen responses are imperfect and the rejected ones consistently
/// rude.
///
/// The inner slots sit four or more tokens after the previous style word, so a
/// model with a context window of 4 must pick their style from content alone.
pub fn make_synthetic_corpus(n: usize, seed: u64) -> Vec<RawTriple> {
    make_synthetic_corpus_with(n, seed, SyntheticSpec::default())
}

pub fn make_synthetic_corpus_with(n: usize, seed: u64, spec: SyntheticSpec) -> Vec<RawTriple> {
    let mut rng = rng::stream(seed, &[0xC0_4B05]);
    (0..n)
        .map(|_| {
            let (topic, adj, noun) = TOPICS[rng.gen_range(0..TOPICS.len())];
            let prompt =
                PROMPT_TEMPLATES[rng.gen_range(0..PROMPT_TEMPLATES.len())].replace("{}", topic);
            let response = |own: &[&'static str; 4],
                            other: &[&'static str; 4],
                            noise: f64,
                            rng: &mut rand_chacha::ChaCha8Rng| {
                let opener = own[rng.gen_range(0..4)];
                let mut slot = || {
                    let set = if rng.gen::<f64>() < noise { other } else { own };
                    set[rng.gen_range(0..4)]
                };
                let (s1, s2) = (slot(), slot());
                format!("{opener} the {topic} is {adj} {s1} with {noun} all around {s2}")
            };
            let chosen = response(&POLITE_WORDS, &RUDE_WORDS, spec.chosen_noise, &mut rng);
            let rejected = response(&RUDE_WORDS, &POLITE_WORDS, spec.rejected_noise, &mut rng);
            RawTriple {
                prompt,
                chosen,
                rejected,
            }
        })
        .collect()
}

/// All texts of a corpus (prompts, chosen, rejected) for vocabulary building.
pub fn corpus_texts(rows: &[RawTriple]) -> Vec<&str> {
    rows.iter()
        .flat_map(|r| [r.prompt.as_str(), r.chosen.as_str(), r.rejected.as_str()])
        .collect()
}
