//! Sequence-level objectives and their analytic derivatives.
//!
//! Everything here works on [`SeqScore`]s, i.e. on length-normalised
//! log-likelihoods `a = (1/m) Σ_t log P(y_t | x, y_<t)`, with `P = exp(a)`.
//!
//! Sign convention: all derivatives are of the *minimised* losses
//! (`-log σ(·)`), so they can be fed to a descent optimizer as-is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::SeqScore;
use crate::math::{log1m_exp, sigmoid, softplus};

/// Default upper clamp on the average log-likelihood before odds are formed.
pub const DEFAULT_LOGP_CLAMP: f64 = -1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Weight of the odds-ratio term.
    pub lambda: f64,
    pub dpo_beta: f64,
    /// Scale applied to the log probability ratio in the ratio variant.
    pub pr_beta: f64,
    pub logp_clamp: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.1,
            dpo_beta: 0.1,
            pr_beta: 1.0,
            logp_clamp: DEFAULT_LOGP_CLAMP,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(
                "lambda must be finite and >= 0".into(),
            ));
        }
        if !(self.dpo_beta > 0.0) || !(self.pr_beta > 0.0) {
            return Err(Error::InvalidConfig(
                "dpo_beta and pr_beta must be > 0".into(),
            ));
        }
        if !(self.logp_clamp < 0.0) {
            return Err(Error::InvalidConfig("logp_clamp must be < 0".into()));
        }
        Ok(())
    }
}

/// Full breakdown of one preference pair's loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean per-token NLL of the chosen response.
    pub l_sft: f64,
    /// Pairwise penalty `-log σ(contrast)`.
    pub l_or: f64,
    pub l_total: f64,
    pub log_odds_w: f64,
    pub log_odds_l: f64,
    /// `log odds_w - log odds_l`.
    pub log_odds_ratio: f64,
    /// The quantity inside the sigmoid. Equals `log_odds_ratio` for ORPO and
    /// `pr_beta · (a_w - a_l)` for the probability-ratio variant.
    pub contrast: f64,
    /// `σ(-contrast)`.
    pub delta: f64,
    pub dl_or_dlogp_w: f64,
    pub dl_or_dlogp_l: f64,
}

impl LossReport {
    /// Arithmetic mean of per-pair reports (the batch expectation).
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len() as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport {
            l_sft: avg(|r| r.l_sft),
            l_or: avg(|r| r.l_or),
            l_total: avg(|r| r.l_total),
            log_odds_w: avg(|r| r.log_odds_w),
            log_odds_l: avg(|r| r.log_odds_l),
            log_odds_ratio: avg(|r| r.log_odds_ratio),
            contrast: avg(|r| r.contrast),
            delta: avg(|r| r.delta),
            dl_or_dlogp_w: avg(|r| r.dl_or_dlogp_w),
            dl_or_dlogp_l: avg(|r| r.dl_or_dlogp_l),
        }
    }
}

pub fn sft_nll(score_w: &SeqScore) -> f64 {
    -score_w.avg_logp
}

/// `log(P / (1 - P))` with `P = exp(avg_logp)`, as `a - log(-expm1(a))`.
pub fn log_odds(avg_logp: f64, clamp: f64) -> Result<f64> {
    if avg_logp > clamp || avg_logp.is_nan() {
        return Err(Error::ProbabilitySaturated { avg_logp, clamp });
    }
    Ok(avg_logp - log1m_exp(avg_logp))
}

/// `σ(-z)`: the gate that vanishes once the chosen response dominates.
pub fn delta_term(z: f64) -> f64 {
    sigmoid(-z)
}

/// Returns `(L_OR, z)` where `z` is the log odds ratio and `L_OR = softplus(-z)`.
pub fn odds_ratio_loss(score_w: &SeqScore, score_l: &SeqScore, clamp: f64) -> Result<(f64, f64)> {
    let z = log_odds(score_w.avg_logp, clamp)? - log_odds(score_l.avg_logp, clamp)?;
    Ok((softplus(-z), z))
}

/// `1 / (1 - exp(a))`, stable for `a` near zero.
fn inv_one_minus_p(avg_logp: f64) -> f64 {
    1.0 / -avg_logp.exp_m1()
}

/// `(∂L_OR/∂a_w, ∂L_OR/∂a_l) = (-δ/(1-P_w), +δ/(1-P_l))`.
pub fn or_partials(score_w: &SeqScore, score_l: &SeqScore, clamp: f64) -> Result<(f64, f64)> {
    let (_, z) = odds_ratio_loss(score_w, score_l, clamp)?;
    let d = delta_term(z);
    Ok((
        -d * inv_one_minus_p(score_w.avg_logp),
        d * inv_one_minus_p(score_l.avg_logp),
    ))
}

/// `L_SFT + λ · L_OR` for one pair.
pub fn orpo_loss(score_w: &SeqScore, score_l: &SeqScore, hp: &HyperParams) -> Result<LossReport> {
    let log_odds_w = log_odds(score_w.avg_logp, hp.logp_clamp)?;
    let log_odds_l = log_odds(score_l.avg_logp, hp.logp_clamp)?;
    let z = log_odds_w - log_odds_l;
    let l_sft = sft_nll(score_w);
    let l_or = softplus(-z);
    let delta = delta_term(z);
    Ok(LossReport {
        l_sft,
        l_or,
        l_total: l_sft + hp.lambda * l_or,
        log_odds_w,
        log_odds_l,
        log_odds_ratio: z,
        contrast: z,
        delta,
        dl_or_dlogp_w: -delta * inv_one_minus_p(score_w.avg_logp),
        dl_or_dlogp_l: delta * inv_one_minus_p(score_l.avg_logp),
    })
}

/// ORPO with the log odds ratio replaced by `pr_beta · (a_w - a_l)`.
pub fn pr_variant_loss(
    score_w: &SeqScore,
    score_l: &SeqScore,
    hp: &HyperParams,
) -> Result<LossReport> {
    let log_odds_w = log_odds(score_w.avg_logp, hp.logp_clamp)?;
    let log_odds_l = log_odds(score_l.avg_logp, hp.logp_clamp)?;
    let z = hp.pr_beta * (score_w.avg_logp - score_l.avg_logp);
    let l_sft = sft_nll(score_w);
    let l_or = softplus(-z);
    let delta = delta_term(z);
    Ok(LossReport {
        l_sft,
        l_or,
        l_total: l_sft + hp.lambda * l_or,
        log_odds_w,
        log_odds_l,
        log_odds_ratio: log_odds_w - log_odds_l,
        contrast: z,
        delta,
        dl_or_dlogp_w: -hp.pr_beta * delta,
        dl_or_dlogp_l: hp.pr_beta * delta,
    })
}

fn dpo_margin(
    policy_w: &SeqScore,
    policy_l: &SeqScore,
    ref_w: &SeqScore,
    ref_l: &SeqScore,
    beta: f64,
) -> f64 {
    beta * ((policy_w.sum_logp - ref_w.sum_logp) - (policy_l.sum_logp - ref_l.sum_logp))
}

/// DPO baseline on summed log-likelihoods against a frozen reference.
pub fn dpo_loss(
    policy_w: &SeqScore,
    policy_l: &SeqScore,
    ref_w: &SeqScore,
    ref_l: &SeqScore,
    hp: &HyperParams,
) -> f64 {
    softplus(-dpo_margin(policy_w, policy_l, ref_w, ref_l, hp.dpo_beta))
}

/// Derivatives of [`dpo_loss`] w.r.t. the policy's *summed* log-likelihoods.
/// Multiply by the sequence length to get the derivative w.r.t. `avg_logp`.
pub fn dpo_partials(
    policy_w: &SeqScore,
    policy_l: &SeqScore,
    ref_w: &SeqScore,
    ref_l: &SeqScore,
    hp: &HyperParams,
) -> (f64, f64) {
    let g = hp.dpo_beta * sigmoid(-dpo_margin(policy_w, policy_l, ref_w, ref_l, hp.dpo_beta));
    (-g, g)
}
