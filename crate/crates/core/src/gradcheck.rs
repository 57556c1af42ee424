//! Analytic gradients against central finite differences.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PreferenceTriple;
use crate::error::{Error, Result};
use crate::lm::{LMConfig, SeqScore, TinyLM};
use crate::objectives::{dpo_loss, dpo_partials, odds_ratio_loss, or_partials, HyperParams};
use crate::reward::{reward_forward, rm_pair_loss, rm_pair_loss_grad, RewardModel};
use crate::rng::stream;
use crate::trainer::{pair_loss, pair_loss_grad, LossKind};

pub const SCALAR_STEP: f64 = 1e-7;
pub const SCALAR_TOL: f64 = 1e-6;
pub const NETWORK_STEP: f64 = 1e-5;
pub const NETWORK_TOL: f64 = 1e-4;
const SCALAR_FLOOR: f64 = 1e-8;
const NETWORK_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Random probability pairs for the scalar suites.
    pub trials: usize,
    /// Random triples for the through-network suites.
    pub net_triples: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            trials: 100,
            net_triples: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub input: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub passed: bool,
    pub worst: Option<WorstCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub network_params: usize,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

struct Check {
    input: String,
    analytic: f64,
    numeric: f64,
    err: f64,
}

fn summarize(name: &str, step: f64, tolerance: f64, checks: Vec<Check>) -> SuiteResult {
    let mut worst: Option<&Check> = None;
    for c in &checks {
        // NaN errors must surface as the worst case
        if worst.is_none_or(|w| !(c.err <= w.err)) {
            worst = Some(c);
        }
    }
    let max_rel_err = worst.map_or(0.0, |w| w.err);
    SuiteResult {
        name: name.into(),
        checks: checks.len(),
        step,
        tolerance,
        max_rel_err,
        passed: !checks.is_empty() && max_rel_err < tolerance,
        worst: worst.map(|w| WorstCase {
            input: w.input.clone(),
            analytic: w.analytic,
            numeric: w.numeric,
        }),
    }
}

/// Random `(P_w, P_l)` in `[0.02, 0.98]`, as average log-probabilities.
fn random_prob_pairs(seed: u64, n: usize) -> Vec<(f64, f64)> {
    let mut rng = stream(seed, &[0x6C01]);
    (0..n)
        .map(|_| {
            (
                rng.gen_range(0.02f64..0.98).ln(),
                rng.gen_range(0.02f64..0.98).ln(),
            )
        })
        .collect()
}

/// `∂L_OR/∂a_w`, `∂L_OR/∂a_l` against central differences.
pub fn check_or_partials(cfg: &GradcheckConfig) -> Result<SuiteResult> {
    let clamp = HyperParams::default().logp_clamp;
    let mut checks = Vec::new();
    for (aw, al) in random_prob_pairs(cfg.seed, cfg.trials) {
        let (w, l) = (SeqScore::from_avg(aw, 1), SeqScore::from_avg(al, 1));
        let (gw, gl) = or_partials(&w, &l, clamp)?;
        let f = |a: f64, b: f64| {
            odds_ratio_loss(&SeqScore::from_avg(a, 1), &SeqScore::from_avg(b, 1), clamp)
                .map(|r| r.0)
                .unwrap_or(f64::NAN)
        };
        let nw = central_diff(|a| f(a, al), aw, SCALAR_STEP);
        let nl = central_diff(|b| f(aw, b), al, SCALAR_STEP);
        let input = format!("P_w={:.6} P_l={:.6}", aw.exp(), al.exp());
        checks.push(Check {
            input: format!("{input} d/da_w"),
            analytic: gw,
            numeric: nw,
            err: rel_err(gw, nw, SCALAR_FLOOR),
        });
        checks.push(Check {
            input: format!("{input} d/da_l"),
            analytic: gl,
            numeric: nl,
            err: rel_err(gl, nl, SCALAR_FLOOR),
        });
    }
    Ok(summarize("or_partials", SCALAR_STEP, SCALAR_TOL, checks))
}

/// DPO partials with respect to the policy's summed log-probabilities.
pub fn check_dpo_partials(cfg: &GradcheckConfig) -> Result<SuiteResult> {
    let hp = HyperParams::default();
    let mut rng = stream(cfg.seed, &[0xD90]);
    let mut checks = Vec::new();
    for _ in 0..cfg.trials {
        let mut s = || SeqScore::from_avg(rng.gen_range(-4.0..-0.05), 1);
        let (pw, pl, rw, rl) = (s(), s(), s(), s());
        let (gw, gl) = dpo_partials(&pw, &pl, &rw, &rl, &hp);
        let f = |a: f64, b: f64| {
            dpo_loss(
                &SeqScore::from_avg(a, 1),
                &SeqScore::from_avg(b, 1),
                &rw,
                &rl,
                &hp,
            )
        };
        let nw = central_diff(|a| f(a, pl.sum_logp), pw.sum_logp, SCALAR_STEP);
        let nl = central_diff(|b| f(pw.sum_logp, b), pl.sum_logp, SCALAR_STEP);
        let input = format!(
            "pw={:.6} pl={:.6} rw={:.6} rl={:.6}",
            pw.sum_logp, pl.sum_logp, rw.sum_logp, rl.sum_logp
        );
        checks.push(Check {
            input: format!("{input} d/dpw"),
            analytic: gw,
            numeric: nw,
            err: rel_err(gw, nw, SCALAR_FLOOR),
        });
        checks.push(Check {
            input: format!("{input} d/dpl"),
            analytic: gl,
            numeric: nl,
            err: rel_err(gl, nl, SCALAR_FLOOR),
        });
    }
    Ok(summarize("dpo_partials", SCALAR_STEP, SCALAR_TOL, checks))
}

/// Model used by the through-network suites (about 1.1k parameters).
pub fn network_config(seed: u32) -> LMConfig {
    LMConfig {
        vocab_size: 30,
        embed_dim: 6,
        hidden_dim: 16,
        context_window: 4,
        seed,
    }
}

fn random_triples(seed: u64, n: usize, vocab_size: usize) -> Vec<PreferenceTriple> {
    let mut rng = stream(seed, &[0x7819]);
    let mut seq = |lo: usize, hi: usize| -> Vec<usize> {
        let len = rng.gen_range(lo..=hi);
        (0..len).map(|_| rng.gen_range(0..vocab_size)).collect()
    };
    (0..n)
        .map(|_| PreferenceTriple {
            x: seq(1, 4),
            y_w: seq(2, 6),
            y_l: seq(2, 6),
        })
        .collect()
}

fn param_locations(model: &TinyLM) -> Vec<(usize, usize)> {
    model
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(t, (_, v))| (0..v.len()).map(move |i| (t, i)))
        .collect()
}

/// Full-parameter gradient of `kind`'s loss summed over `triples`.
fn check_network(
    name: &str,
    model: &TinyLM,
    reference: Option<&TinyLM>,
    triples: &[PreferenceTriple],
    kind: LossKind,
    hp: &HyperParams,
) -> Result<SuiteResult> {
    let mut grads = model.grad_block();
    for t in triples {
        pair_loss_grad(model, reference, t, kind, hp, 1.0, &mut grads)?;
    }
    let flat = grads.flatten();
    let loss = |m: &TinyLM| -> f64 {
        triples
            .iter()
            .map(|t| pair_loss(m, reference, t, kind, hp).unwrap_or(f64::NAN))
            .sum()
    };
    let locations = param_locations(model);
    let checks: Vec<Check> = locations
        .par_iter()
        .enumerate()
        .map_init(
            || model.clone(),
            |m, (k, &(t, i))| {
                let orig = m.tensors_mut()[t][i];
                m.tensors_mut()[t][i] = orig + NETWORK_STEP;
                let up = loss(m);
                m.tensors_mut()[t][i] = orig - NETWORK_STEP;
                let down = loss(m);
                m.tensors_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * NETWORK_STEP);
                Check {
                    input: format!("{}[{i}]", model.tensors()[t].0),
                    analytic: flat[k],
                    numeric,
                    err: rel_err(flat[k], numeric, NETWORK_FLOOR),
                }
            },
        )
        .collect();
    Ok(summarize(name, NETWORK_STEP, NETWORK_TOL, checks))
}

/// Reward-head gradient (linear, so the tight tolerance applies) and the
/// full pair-loss gradient through the backbone.
fn check_reward(cfg: &GradcheckConfig, triples: &[PreferenceTriple]) -> Result<Vec<SuiteResult>> {
    let mut rm = RewardModel::new(network_config(cfg.seed as u32))?;
    rm.backbone.randomize_all(cfg.seed ^ 0x5EED, 0.5);
    let mut rng = stream(cfg.seed, &[0x4EAD]);
    for v in rm.value_head.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    rm.bias = rng.gen_range(-1.0..1.0);

    let mut head_checks = Vec::new();
    for (n, t) in triples.iter().enumerate() {
        let mut g = rm.grads();
        rm.accumulate_reward_grad(&t.x, &t.y_w, 1.0, &mut g)?;
        for j in 0..rm.value_head.len() {
            let f = |v: f64| {
                let mut p = rm.clone();
                p.value_head[j] = v;
                reward_forward(&p, &t.x, &t.y_w).unwrap_or(f64::NAN)
            };
            let numeric = central_diff(f, rm.value_head[j], SCALAR_STEP);
            head_checks.push(Check {
                input: format!("triple {n} value_head[{j}]"),
                analytic: g.value_head[j],
                numeric,
                err: rel_err(g.value_head[j], numeric, SCALAR_FLOOR),
            });
        }
    }

    let mut g = rm.grads();
    for t in triples {
        rm_pair_loss_grad(&rm, t, 1.0, &mut g)?;
    }
    let mut analytic = g.backbone.flatten();
    analytic.extend(&g.value_head);
    analytic.push(g.bias);
    let loss = |m: &RewardModel| -> f64 {
        triples
            .iter()
            .map(|t| rm_pair_loss(m, t).unwrap_or(f64::NAN))
            .sum()
    };
    let n_backbone = rm.backbone.config.param_count();
    let hd = rm.value_head.len();
    let net_checks: Vec<Check> = (0..analytic.len())
        .into_par_iter()
        .map_init(
            || rm.clone(),
            |m, k| {
                let orig = rm_param(m, k, n_backbone, hd);
                let name = if k < n_backbone {
                    let (t, i) = param_locations(&rm.backbone)[k];
                    format!("{}[{i}]", rm.backbone.tensors()[t].0)
                } else if k < n_backbone + hd {
                    format!("value_head[{}]", k - n_backbone)
                } else {
                    "bias".to_string()
                };
                let eval_at = |m: &mut RewardModel, v: f64| {
                    set_rm_param(m, k, n_backbone, hd, v);
                    loss(m)
                };
                let up = eval_at(m, orig + NETWORK_STEP);
                let down = eval_at(m, orig - NETWORK_STEP);
                set_rm_param(m, k, n_backbone, hd, orig);
                let numeric = (up - down) / (2.0 * NETWORK_STEP);
                Check {
                    input: name,
                    analytic: analytic[k],
                    numeric,
                    err: rel_err(analytic[k], numeric, NETWORK_FLOOR),
                }
            },
        )
        .collect();
    Ok(vec![
        summarize("reward_head", SCALAR_STEP, SCALAR_TOL, head_checks),
        summarize("reward_network", NETWORK_STEP, NETWORK_TOL, net_checks),
    ])
}

fn rm_param(m: &RewardModel, k: usize, n_backbone: usize, hd: usize) -> f64 {
    if k < n_backbone {
        let (t, i) = param_locations(&m.backbone)[k];
        m.backbone.tensors()[t].1[i]
    } else if k < n_backbone + hd {
        m.value_head[k - n_backbone]
    } else {
        m.bias
    }
}

fn set_rm_param(m: &mut RewardModel, k: usize, n_backbone: usize, hd: usize, v: f64) {
    if k < n_backbone {
        let (t, i) = param_locations(&m.backbone)[k];
        m.backbone.tensors_mut()[t][i] = v;
    } else if k < n_backbone + hd {
        m.value_head[k - n_backbone] = v;
    } else {
        m.bias = v;
    }
}

/// All suites: scalar odds-ratio partials, ORPO through the network, DPO
/// (scalar and through the network), and the reward model.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.trials == 0 || cfg.net_triples == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let net_cfg = network_config(cfg.seed as u32);
    let mut model = TinyLM::new(net_cfg)?;
    model.randomize_all(cfg.seed, 0.3);
    let mut reference = model.clone();
    reference.randomize_all(cfg.seed ^ 0xFEED, 0.3);
    let triples = random_triples(cfg.seed, cfg.net_triples, net_cfg.vocab_size);
    let hp = HyperParams {
        lambda: 1.0,
        ..Default::default()
    };

    let mut suites = vec![
        check_or_partials(cfg)?,
        check_network("orpo_network", &model, None, &triples, LossKind::Orpo, &hp)?,
        check_network(
            "orpo_pr_network",
            &model,
            None,
            &triples,
            LossKind::OrpoPr,
            &hp,
        )?,
        check_dpo_partials(cfg)?,
        check_network(
            "dpo_network",
            &model,
            Some(&reference),
            &triples,
            LossKind::Dpo,
            &hp,
        )?,
    ];
    suites.extend(check_reward(cfg, &triples)?);
    Ok(GradcheckReport {
        config: *cfg,
        network_params: net_cfg.param_count(),
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0, 1e-8), 0.0);
        assert!((rel_err(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
        assert_eq!(rel_err(0.0, 1e-10, 1e-8), 1e-2);
    }

    #[test]
    fn summarize_reports_nan_as_failure() {
        let checks = vec![
            Check {
                input: "a".into(),
                analytic: 1.0,
                numeric: 1.0,
                err: 0.0,
            },
            Check {
                input: "b".into(),
                analytic: 1.0,
                numeric: f64::NAN,
                err: f64::NAN,
            },
        ];
        let s = summarize("x", 1e-7, 1e-6, checks);
        assert!(!s.passed);
        assert_eq!(s.worst.unwrap().input, "b");
        assert!(!summarize("empty", 1e-7, 1e-6, Vec::new()).passed);
    }

    #[test]
    fn all_suites_pass() {
        let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
        for s in &report.suites {
            assert!(
                s.passed,
                "{} max rel err {} at {:?}",
                s.name, s.max_rel_err, s.worst
            );
        }
        assert!(report.network_params <= 10_000);
        assert_eq!(report.suites[0].checks, 200);
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = GradcheckConfig {
            seed: 7,
            trials: 10,
            net_triples: 1,
        };
        let a = serde_json::to_string(&run_gradcheck(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_gradcheck(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(run_gradcheck(&GradcheckConfig { trials: 0, ..cfg }).is_err());
    }
}
