//! Flat run configuration. Every key can come from the JSON config file and be
//! overridden by a command-line flag of the same name (`_` → `-`).

use std::path::Path;

use orpo_core::data::{SyntheticSpec, TokenizeConfig, DEFAULT_MAX_LEN, DEFAULT_PROMPT_CAP};
use orpo_core::objectives::DEFAULT_LOGP_CLAMP;
use orpo_core::reward::{RewardTrainConfig, SamplingConfig};
use orpo_core::{HyperParams, LMConfig, LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,

    // data
    /// JSONL preference file; the synthetic corpus is used when absent.
    pub data: Option<String>,
    pub synthetic_n: usize,
    pub synthetic_chosen_noise: f64,
    pub synthetic_rejected_noise: f64,
    pub min_count: usize,
    pub char_level: bool,
    pub prompt_cap: usize,
    pub max_len: usize,
    pub train_frac: f64,
    pub eval_frac: f64,
    pub test_frac: f64,

    // model
    pub vocab: Option<String>,
    pub init: Option<String>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_window: usize,

    // training
    pub loss: LossKind,
    pub lambda: f64,
    pub dpo_beta: f64,
    pub pr_beta: f64,
    pub logp_clamp: f64,
    /// Defaults per loss kind when absent.
    pub epochs: Option<usize>,
    pub lr_max: Option<f64>,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub eval_every: usize,
    pub max_steps: Option<usize>,
    pub weight_decay: f64,
    pub lambdas: Vec<f64>,

    // reward model
    pub rm: Option<String>,
    pub rm_lr: f64,
    pub rm_epochs: usize,
    pub rm_batch_size: usize,

    // sampling and evaluation
    pub model: Option<String>,
    pub model_a: Option<String>,
    pub model_b: Option<String>,
    /// Which split supplies evaluation prompts: train, eval, test or all.
    pub prompts_from: String,
    pub max_prompts: Option<usize>,
    pub temperature: f64,
    pub rounds: usize,
    pub gen_max_len: usize,
    pub k: usize,

    // diagnostics
    pub trials: usize,
    pub net_triples: usize,
    pub n_samples: usize,
    pub betas: Vec<f64>,
    pub telemetry: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let synth = SyntheticSpec::default();
        RunConfig {
            seed: None,
            data: None,
            synthetic_n: 2000,
            synthetic_chosen_noise: synth.chosen_noise,
            synthetic_rejected_noise: synth.rejected_noise,
            min_count: 1,
            char_level: false,
            prompt_cap: DEFAULT_PROMPT_CAP,
            max_len: DEFAULT_MAX_LEN,
            train_frac: 0.8,
            eval_frac: 0.1,
            test_frac: 0.1,
            vocab: None,
            init: None,
            embed_dim: 16,
            hidden_dim: 48,
            context_window: 4,
            loss: LossKind::Orpo,
            lambda: hp.lambda,
            dpo_beta: hp.dpo_beta,
            pr_beta: hp.pr_beta,
            logp_clamp: DEFAULT_LOGP_CLAMP,
            epochs: None,
            lr_max: None,
            batch_size: 32,
            warmup_frac: 0.1,
            eval_every: 0,
            max_steps: None,
            weight_decay: 0.0,
            lambdas: vec![0.1, 0.5, 1.0],
            rm: None,
            rm_lr: RewardTrainConfig::default().lr_max,
            rm_epochs: 1,
            rm_batch_size: RewardTrainConfig::default().batch_size,
            model: None,
            model_a: None,
            model_b: None,
            prompts_from: "test".into(),
            max_prompts: None,
            temperature: 1.0,
            rounds: 3,
            gen_max_len: SamplingConfig::default().max_len,
            k: 5,
            trials: 100,
            net_triples: 3,
            n_samples: 50_000,
            betas: vec![0.2, 1.0],
            telemetry: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            chosen_noise: self.synthetic_chosen_noise,
            rejected_noise: self.synthetic_rejected_noise,
        }
    }

    pub fn tokenize(&self) -> TokenizeConfig {
        TokenizeConfig {
            prompt_cap: self.prompt_cap,
            max_len: self.max_len,
        }
    }

    pub fn hp(&self) -> HyperParams {
        HyperParams {
            lambda: self.lambda,
            dpo_beta: self.dpo_beta,
            pr_beta: self.pr_beta,
            logp_clamp: self.logp_clamp,
        }
    }

    pub fn lm_config(&self, vocab_size: usize) -> LMConfig {
        LMConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            context_window: self.context_window,
            seed: self.seed() as u32,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::defaults_for(self.loss);
        TrainConfig {
            hp: self.hp(),
            lr_max: self.lr_max.unwrap_or(base.lr_max),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size,
            warmup_frac: self.warmup_frac,
            seed: self.seed(),
            eval_every: self.eval_every,
            max_steps: self.max_steps,
            weight_decay: self.weight_decay,
            ..base
        }
    }

    pub fn reward_config(&self) -> RewardTrainConfig {
        RewardTrainConfig {
            lr_max: self.rm_lr,
            epochs: self.rm_epochs,
            batch_size: self.rm_batch_size,
            seed: self.seed(),
            ..Default::default()
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            rounds: self.rounds,
            max_len: self.gen_max_len,
            seed: self.seed(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.to_string()));
        let sum = self.train_frac + self.eval_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return bad("train_frac + eval_frac + test_frac must equal 1");
        }
        if self.data.is_none() && self.synthetic_n == 0 {
            return bad("synthetic_n must be >= 1");
        }
        if !["train", "eval", "test", "all"].contains(&self.prompts_from.as_str()) {
            return bad("prompts_from must be one of train, eval, test, all");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"lambda": 1.0}"#).is_ok());
        assert!(serde_json::from_str::<RunConfig>(r#"{"lamda": 1.0}"#).is_err());
        assert!(
            serde_json::from_str::<RunConfig>(r#"{"loss": "orpo_pr"}"#)
                .unwrap()
                .loss
                == LossKind::OrpoPr
        );
    }

    #[test]
    fn per_loss_defaults() {
        let sft = RunConfig {
            loss: LossKind::Sft,
            ..Default::default()
        };
        assert_eq!(sft.train_config().epochs, 1);
        let orpo = RunConfig {
            epochs: Some(3),
            ..Default::default()
        };
        assert_eq!(orpo.train_config().epochs, 3);
        assert_eq!(orpo.train_config().lr_max, 1e-3);
    }
}
