//! Training loop for SFT, ORPO, the probability-ratio variant and DPO.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, DatasetSplit, PreferenceTriple};
use crate::error::{Error, Result};
use crate::lm::{GradBlock, SeqScore, TinyLM};
use crate::objectives::{self, HyperParams, LossReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Chosen-response NLL only.
    Sft,
    Orpo,
    /// ORPO with the log probability ratio in place of the log odds ratio.
    OrpoPr,
    Dpo,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(LossKind::Sft),
            "orpo" => Ok(LossKind::Orpo),
            "orpo_pr" => Ok(LossKind::OrpoPr),
            "dpo" => Ok(LossKind::Dpo),
            other => Err(Error::InvalidConfig(format!("unknown loss kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Sft => "sft",
            LossKind::Orpo => "orpo",
            LossKind::OrpoPr => "orpo_pr",
            LossKind::Dpo => "dpo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub hp: HyperParams,
    pub lr_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub seed: u64,
    /// Evaluate (and checkpoint) every this many steps; 0 = only at the end.
    pub eval_every: usize,
    /// Optional cap on the number of optimizer steps.
    pub max_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Orpo,
            hp: HyperParams::default(),
            lr_max: 1e-3,
            epochs: 10,
            batch_size: 32,
            warmup_frac: 0.1,
            seed: 0,
            eval_every: 0,
            max_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    /// Per-method defaults: SFT 1 epoch, DPO 3 epochs, ORPO 10 epochs, with
    /// learning rates in the same proportions as 1e-5 : 5e-6 : 8e-6.
    pub fn defaults_for(kind: LossKind) -> Self {
        let base = TrainConfig {
            loss_kind: kind,
            ..Default::default()
        };
        match kind {
            LossKind::Sft => TrainConfig {
                epochs: 1,
                lr_max: 1.25e-3,
                ..base
            },
            LossKind::Dpo => TrainConfig {
                epochs: 3,
                lr_max: 6.25e-4,
                ..base
            },
            LossKind::Orpo | LossKind::OrpoPr => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.lr_max > 0.0) || !self.lr_max.is_finite() {
            return Err(Error::InvalidConfig("lr_max must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::InvalidConfig("warmup_frac must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::InvalidConfig("invalid AdamW constants".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, train_len: usize) -> usize {
        let per_epoch = train_len.div_ceil(self.batch_size);
        let full = per_epoch * self.epochs;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Linear warmup from 0 to `lr_max` over `warmup_frac · total_steps`, then
/// cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let warm = ((cfg.warmup_frac * total_steps as f64).floor() as usize).min(total_steps);
    if step < warm {
        return cfg.lr_max * step as f64 / warm as f64;
    }
    if warm == total_steps {
        return cfg.lr_max;
    }
    let progress = (step.min(total_steps) - warm) as f64 / (total_steps - warm) as f64;
    0.5 * cfg.lr_max * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// AdamW moments for an ordered list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(shapes: &[usize], cfg: &TrainConfig) -> Self {
        OptimizerState {
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn for_model(model: &TinyLM, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        Self::new(&shapes, cfg)
    }

    /// One AdamW update over matching `(params, grads)` lists: decoupled
    /// weight decay, bias-corrected moments.
    pub fn update(
        &mut self,
        params: Vec<&mut Vec<f64>>,
        grads: &[(&'static str, &[f64])],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch("optimizer tensor count".into()));
        }
        for (i, (name, g)) in grads.iter().enumerate() {
            if params[i].len() != g.len() || self.first_moment[i].len() != g.len() {
                return Err(Error::ShapeMismatch(format!("optimizer tensor `{name}`")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].1;
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[j]);
            }
        }
        Ok(())
    }
}

/// AdamW step on a [`TinyLM`]; zeroes `grads` afterwards.
pub fn optimizer_step(
    model: &mut TinyLM,
    grads: &mut GradBlock,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !grads.matches(&model.config) {
        return Err(Error::ShapeMismatch(
            "gradient block does not match model".into(),
        ));
    }
    state.update(
        model.tensors_mut().into_iter().collect(),
        &grads.tensors(),
        lr,
    )?;
    grads.zero();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: usize,
    pub epoch: usize,
    pub l_sft: f64,
    pub l_or: f64,
    pub l_total: f64,
    pub avg_logp_chosen: f64,
    pub avg_logp_rejected: f64,
    /// Log odds ratio of the batch-mean chosen vs rejected log-likelihoods.
    pub log_odds_ratio: f64,
    pub lr: f64,
}

pub const TELEMETRY_HEADER: &str =
    "step,epoch,l_sft,l_or,l_total,avg_logp_chosen,avg_logp_rejected,log_odds_ratio,lr";

/// `printf("%.9g")`-style formatting: 9 significant digits, trailing zeros
/// trimmed, scientific notation outside `[1e-5, 1e9)`.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

pub fn telemetry_to_csv(rows: &[TelemetryRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(TELEMETRY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            fmt_sig9(r.l_sft),
            fmt_sig9(r.l_or),
            fmt_sig9(r.l_total),
            fmt_sig9(r.avg_logp_chosen),
            fmt_sig9(r.avg_logp_rejected),
            fmt_sig9(r.log_odds_ratio),
            fmt_sig9(r.lr),
        );
    }
    s
}

/// Strict parser: the header must match [`TELEMETRY_HEADER`] exactly.
pub fn telemetry_from_csv(text: &str) -> Result<Vec<TelemetryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TELEMETRY_HEADER => {}
        Some(h) => {
            return Err(Error::InvalidConfig(format!(
                "telemetry header mismatch: `{h}`"
            )))
        }
        None => return Err(Error::InvalidConfig("empty telemetry file".into())),
    }
    let bad =
        |n: usize, what: &str| Error::InvalidConfig(format!("telemetry line {}: {what}", n + 2));
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 9 {
                return Err(bad(n, "expected 9 columns"));
            }
            let f = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(n, "bad float"));
            let u = |i: usize| cols[i].parse::<usize>().map_err(|_| bad(n, "bad integer"));
            Ok(TelemetryRow {
                step: u(0)?,
                epoch: u(1)?,
                l_sft: f(2)?,
                l_or: f(3)?,
                l_total: f(4)?,
                avg_logp_chosen: f(5)?,
                avg_logp_rejected: f(6)?,
                log_odds_ratio: f(7)?,
                lr: f(8)?,
            })
        })
        .collect()
}

/// Per-epoch means of `field` over telemetry rows, in epoch order.
pub fn epoch_means(rows: &[TelemetryRow], field: fn(&TelemetryRow) -> f64) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if sums.len() <= r.epoch {
            sums.resize(r.epoch + 1, (0.0, 0));
        }
        sums[r.epoch].0 += field(r);
        sums[r.epoch].1 += 1;
    }
    sums.into_iter()
        .filter(|s| s.1 > 0)
        .map(|(s, n)| s / n as f64)
        .collect()
}

fn clamp_score(s: SeqScore, clamp: f64) -> (SeqScore, bool) {
    if s.avg_logp > clamp {
        (SeqScore::from_avg(clamp, s.len), true)
    } else {
        (s, false)
    }
}

/// Loss report and the upstream scales `(∂L/∂a_w, ∂L/∂a_l)` for one pair.
fn pair_objective(
    kind: LossKind,
    hp: &HyperParams,
    w: SeqScore,
    l: SeqScore,
    refs: Option<(SeqScore, SeqScore)>,
) -> Result<(LossReport, f64, f64)> {
    let (wc, w_sat) = clamp_score(w, hp.logp_clamp);
    let (lc, l_sat) = clamp_score(l, hp.logp_clamp);
    let mut report = match kind {
        LossKind::OrpoPr => objectives::pr_variant_loss(&wc, &lc, hp)?,
        _ => objectives::orpo_loss(&wc, &lc, hp)?,
    };
    // the penalty has zero slope through the clamp
    let dw_or = if w_sat { 0.0 } else { report.dl_or_dlogp_w };
    let dl_or = if l_sat { 0.0 } else { report.dl_or_dlogp_l };
    let (dw, dl) = match kind {
        LossKind::Sft => {
            report.l_total = report.l_sft;
            (-1.0, 0.0)
        }
        LossKind::Orpo | LossKind::OrpoPr => (-1.0 + hp.lambda * dw_or, hp.lambda * dl_or),
        LossKind::Dpo => {
            let (rw, rl) = refs.expect("dpo needs reference scores");
            report.l_total = objectives::dpo_loss(&w, &l, &rw, &rl, hp);
            let (gw, gl) = objectives::dpo_partials(&w, &l, &rw, &rl, hp);
            (gw * w.len as f64, gl * l.len as f64)
        }
    };
    Ok((report, dw, dl))
}

/// Per-pair objective under `kind`. Adds `scale · ∂loss/∂θ` to `grads` and
/// returns the loss report with the unclamped chosen/rejected scores.
pub fn pair_loss_grad(
    model: &TinyLM,
    reference: Option<&TinyLM>,
    t: &PreferenceTriple,
    kind: LossKind,
    hp: &HyperParams,
    scale: f64,
    grads: &mut GradBlock,
) -> Result<(LossReport, SeqScore, SeqScore)> {
    if kind == LossKind::Dpo && reference.is_none() {
        return Err(Error::InvalidConfig("dpo needs a reference model".into()));
    }
    let tw = model.trace(&t.x, &t.y_w)?;
    let tl = model.trace(&t.x, &t.y_l)?;
    let refs = match reference {
        Some(r) if kind == LossKind::Dpo => {
            Some((r.seq_score(&t.x, &t.y_w)?, r.seq_score(&t.x, &t.y_l)?))
        }
        _ => None,
    };
    let (report, dw, dl) = pair_objective(kind, hp, tw.score, tl.score, refs)?;
    tw.backward(model, dw * scale, grads)?;
    tl.backward(model, dl * scale, grads)?;
    Ok((report, tw.score, tl.score))
}

/// Per-pair objective value without gradients.
pub fn pair_loss(
    model: &TinyLM,
    reference: Option<&TinyLM>,
    t: &PreferenceTriple,
    kind: LossKind,
    hp: &HyperParams,
) -> Result<f64> {
    if kind == LossKind::Dpo && reference.is_none() {
        return Err(Error::InvalidConfig("dpo needs a reference model".into()));
    }
    let w = model.seq_score(&t.x, &t.y_w)?;
    let l = model.seq_score(&t.x, &t.y_l)?;
    let refs = match reference {
        Some(r) if kind == LossKind::Dpo => {
            Some((r.seq_score(&t.x, &t.y_w)?, r.seq_score(&t.x, &t.y_l)?))
        }
        _ => None,
    };
    Ok(pair_objective(kind, hp, w, l, refs)?.0.l_total)
}

struct BatchResult {
    grads: GradBlock,
    reports: Vec<LossReport>,
    chosen: Vec<f64>,
    rejected: Vec<f64>,
}

// Fixed chunking keeps the gradient summation order independent of the
// thread count.
const GRAD_CHUNK: usize = 4;

fn batch_gradients(
    model: &TinyLM,
    reference: Option<&TinyLM>,
    data: &[PreferenceTriple],
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<BatchResult> {
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Result<BatchResult>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut out = BatchResult {
                grads: model.grad_block(),
                reports: Vec::with_capacity(chunk.len()),
                chosen: Vec::with_capacity(chunk.len()),
                rejected: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let (report, w, l) = pair_loss_grad(
                    model,
                    reference,
                    &data[i],
                    cfg.loss_kind,
                    &cfg.hp,
                    scale,
                    &mut out.grads,
                )?;
                out.reports.push(report);
                out.chosen.push(w.avg_logp);
                out.rejected.push(l.avg_logp);
            }
            Ok(out)
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut acc = iter.next().expect("non-empty batch")?;
    for p in iter {
        let p = p?;
        acc.grads.add_assign(&p.grads);
        acc.reports.extend(p.reports);
        acc.chosen.extend(p.chosen);
        acc.rejected.extend(p.rejected);
    }
    Ok(acc)
}

/// Mean objective value over `data` (no gradients).
pub fn evaluate(
    model: &TinyLM,
    reference: Option<&TinyLM>,
    data: &[PreferenceTriple],
    cfg: &TrainConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<Result<f64>> = data
        .par_iter()
        .map(|t| pair_loss(model, reference, t, cfg.loss_kind, &cfg.hp))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}

/// Mean `avg_logp(chosen) - avg_logp(rejected)` over `data`.
pub fn mean_margin(model: &TinyLM, data: &[PreferenceTriple]) -> Result<f64> {
    let margins: Vec<Result<f64>> = data
        .par_iter()
        .map(|t| {
            Ok(model.seq_score(&t.x, &t.y_w)?.avg_logp - model.seq_score(&t.x, &t.y_l)?.avg_logp)
        })
        .collect();
    let mut sum = 0.0;
    for m in margins {
        sum += m?;
    }
    Ok(sum / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub step: usize,
    pub eval_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyLM,
    pub telemetry: Vec<TelemetryRow>,
    pub evals: Vec<EvalPoint>,
    /// Snapshots taken at each evaluation point, keyed by step.
    pub checkpoints: Vec<(usize, TinyLM)>,
    /// Step of the snapshot with the lowest evaluation loss.
    pub best_step: Option<usize>,
    /// Sequence-level forward passes, reference model included.
    pub forward_passes: u64,
    /// Frozen copy of the input model (DPO only).
    pub reference: Option<TinyLM>,
}

impl TrainOutcome {
    pub fn best_model(&self) -> &TinyLM {
        self.best_step
            .and_then(|s| self.checkpoints.iter().find(|(step, _)| *step == s))
            .map_or(&self.model, |(_, m)| m)
    }
}

pub fn train(model: TinyLM, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = &split.train;
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let mut model = model;
    let reference = (cfg.loss_kind == LossKind::Dpo).then(|| model.clone());
    let total = cfg.total_steps(data.len());
    let mut opt = OptimizerState::for_model(&model, cfg);
    let mut grads = model.grad_block();
    let passes_per_pair: u64 = if reference.is_some() { 4 } else { 2 };

    let mut out = TrainOutcome {
        model: model.clone(),
        telemetry: Vec::with_capacity(total),
        evals: Vec::new(),
        checkpoints: Vec::new(),
        best_step: None,
        forward_passes: 0,
        reference: reference.clone(),
    };
    let mut step = 0usize;
    let eval_at = |step: usize, model: &TinyLM, out: &mut TrainOutcome| -> Result<()> {
        let eval_loss = evaluate(model, reference.as_ref(), &split.eval, cfg)?;
        let better = out
            .best_step
            .and_then(|b| out.evals.iter().find(|e| e.step == b))
            .is_none_or(|best| eval_loss < best.eval_loss);
        if better && eval_loss.is_finite() {
            out.best_step = Some(step);
        }
        out.evals.push(EvalPoint { step, eval_loss });
        out.checkpoints.push((step, model.clone()));
        Ok(())
    };

    'epochs: for epoch in 0..cfg.epochs {
        for (batch_id, batch) in make_batches(data.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            if step >= total {
                break 'epochs;
            }
            let lr = lr_at(step, total, cfg);
            let r = batch_gradients(&model, reference.as_ref(), data, batch, cfg)?;
            out.forward_passes += passes_per_pair * batch.len() as u64;
            let mean = LossReport::mean(&r.reports);
            if !mean.l_total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    batch: batch_id,
                });
            }
            grads.add_assign(&r.grads);
            let clamp = cfg.hp.logp_clamp;
            let chosen = crate::math::mean(&r.chosen).min(clamp);
            let rejected = crate::math::mean(&r.rejected).min(clamp);
            out.telemetry.push(TelemetryRow {
                step,
                epoch,
                l_sft: mean.l_sft,
                l_or: mean.l_or,
                l_total: mean.l_total,
                avg_logp_chosen: chosen,
                avg_logp_rejected: rejected,
                log_odds_ratio: objectives::log_odds(chosen, clamp)?
                    - objectives::log_odds(rejected, clamp)?,
                lr,
            });
            optimizer_step(&mut model, &mut grads, &mut opt, lr)?;
            step += 1;
            if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every) {
                eval_at(step, &model, &mut out)?;
            }
        }
    }
    if step > 0 && out.evals.last().is_none_or(|e| e.step != step) {
        eval_at(step, &model, &mut out)?;
    }
    out.model = model;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub lambda: f64,
    pub telemetry: Vec<TelemetryRow>,
    /// Mean chosen-minus-rejected log-likelihood on the eval split.
    pub final_margin: f64,
    pub model: TinyLM,
}

/// Train one ORPO model per `λ` from the same initial model and seed.
pub fn lambda_sweep(
    model_init: &TinyLM,
    split: &DatasetSplit,
    lambdas: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<SweepResult>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("no lambdas".into()));
    }
    if split.eval.is_empty() {
        return Err(Error::InvalidConfig(
            "lambda sweep needs an eval split".into(),
        ));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let run_cfg = TrainConfig {
                loss_kind: LossKind::Orpo,
                hp: HyperParams { lambda, ..cfg.hp },
                ..*cfg
            };
            let outcome = train(model_init.clone(), split, &run_cfg)?;
            Ok(SweepResult {
                lambda,
                final_margin: mean_margin(&outcome.model, &split.eval)?,
                telemetry: outcome.telemetry,
                model: outcome.model,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        corpus_texts, filter_and_tokenize, make_synthetic_corpus, split as split_data,
        TokenizeConfig,
    };
    use crate::lm::{build_vocab, LMConfig};

    fn tiny_setup(n: usize) -> (TinyLM, DatasetSplit) {
        let rows = make_synthetic_corpus(n, 3);
        let vocab = build_vocab(&corpus_texts(&rows), 1, false).unwrap();
        let (triples, stats) = filter_and_tokenize(&rows, &vocab, &TokenizeConfig::default());
        let split = split_data(triples, [0.8, 0.1, 0.1], 3, stats).unwrap();
        let model = TinyLM::new(LMConfig {
            vocab_size: vocab.len(),
            embed_dim: 4,
            hidden_dim: 8,
            context_window: 4,
            seed: 1,
        })
        .unwrap();
        (model, split)
    }

    fn small_cfg(kind: LossKind) -> TrainConfig {
        TrainConfig {
            loss_kind: kind,
            epochs: 2,
            batch_size: 8,
            hp: HyperParams {
                lambda: 1.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let cfg = TrainConfig {
            lr_max: 0.5,
            warmup_frac: 0.1,
            ..Default::default()
        };
        assert_eq!(lr_at(0, 100, &cfg), 0.0);
        assert_eq!(lr_at(10, 100, &cfg), 0.5);
        assert!((lr_at(5, 100, &cfg) - 0.25).abs() < 1e-15);
        assert!(lr_at(100, 100, &cfg).abs() < 1e-12);
        assert!((lr_at(55, 100, &cfg) - 0.25).abs() < 1e-12);
        let no_warm = TrainConfig {
            warmup_frac: 0.0,
            ..cfg
        };
        assert_eq!(lr_at(0, 10, &no_warm), 0.5);
        for s in 1..=100 {
            assert!(lr_at(s, 100, &cfg) <= 0.5);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut m, _) = tiny_setup(20);
        let before = m.clone();
        let cfg = TrainConfig::default();
        let mut opt = OptimizerState::for_model(&m, &cfg);
        let mut g = m.grad_block();
        optimizer_step(&mut m, &mut g, &mut opt, 0.1).unwrap();
        assert_eq!(m, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let (mut m, _) = tiny_setup(20);
        let cfg = TrainConfig::default();
        let mut opt = OptimizerState::for_model(&m, &cfg);
        let mut g = m.grad_block();
        g.hidden_bias[1] = f64::NAN;
        let err = optimizer_step(&mut m, &mut g, &mut opt, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient("hidden_bias")));
    }

    #[test]
    fn adamw_single_step_on_quadratic() {
        // f(w) = w², w = 1 → g = 2; first Adam step moves by lr·(1 - tiny)
        let cfg = TrainConfig::default();
        let mut opt = OptimizerState::new(&[1], &cfg);
        let mut w = vec![1.0];
        let g = [2.0 * w[0]];
        opt.update(vec![&mut w], &[("w", &g)], 0.1).unwrap();
        let expected = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8));
        assert!((w[0] - expected).abs() < 1e-15);
        assert!(w[0] * w[0] < 1.0);
    }

    #[test]
    fn decoupled_weight_decay() {
        let cfg = TrainConfig {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&[1], &cfg);
        let mut w = vec![2.0];
        opt.update(vec![&mut w], &[("w", &[0.0])], 0.1).unwrap();
        assert!((w[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn fmt_sig9_examples() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-1.791759469228055), "-1.79175947");
        assert_eq!(fmt_sig9(0.001), "0.001");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-07");
        assert_eq!(fmt_sig9(123456789012.0), "1.23456789e+11");
        assert_eq!(fmt_sig9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn zero_steps_returns_input_model() {
        let (m, split) = tiny_setup(40);
        let cfg = TrainConfig {
            max_steps: Some(0),
            ..small_cfg(LossKind::Orpo)
        };
        let out = train(m.clone(), &split, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert!(out.telemetry.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_self_consistent() {
        let (m, split) = tiny_setup(60);
        let cfg = small_cfg(LossKind::Orpo);
        let a = train(m.clone(), &split, &cfg).unwrap();
        let b = train(m, &split, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(
            telemetry_to_csv(&a.telemetry),
            telemetry_to_csv(&b.telemetry)
        );
        assert_eq!(a.telemetry.len(), cfg.total_steps(split.train.len()));
        for r in &a.telemetry {
            let z = objectives::log_odds(r.avg_logp_chosen, cfg.hp.logp_clamp).unwrap()
                - objectives::log_odds(r.avg_logp_rejected, cfg.hp.logp_clamp).unwrap();
            assert!((z - r.log_odds_ratio).abs() < 1e-9);
            assert!(r.l_total.is_finite());
        }
    }

    #[test]
    fn orpo_with_zero_lambda_matches_sft_exactly() {
        let (m, split) = tiny_setup(60);
        let sft = train(m.clone(), &split, &small_cfg(LossKind::Sft)).unwrap();
        let orpo_cfg = TrainConfig {
            hp: HyperParams {
                lambda: 0.0,
                ..Default::default()
            },
            ..small_cfg(LossKind::Orpo)
        };
        let orpo = train(m, &split, &orpo_cfg).unwrap();
        assert_eq!(sft.model, orpo.model);
        assert_eq!(
            telemetry_to_csv(&sft.telemetry),
            telemetry_to_csv(&orpo.telemetry)
        );
    }

    #[test]
    fn dpo_runs_with_twice_the_forward_passes() {
        let (m, split) = tiny_setup(40);
        let dpo = train(m.clone(), &split, &small_cfg(LossKind::Dpo)).unwrap();
        let orpo = train(m.clone(), &split, &small_cfg(LossKind::Orpo)).unwrap();
        assert_eq!(dpo.forward_passes, 2 * orpo.forward_passes);
        // the first step sees policy == reference, so the DPO loss is ln 2
        assert!((dpo.telemetry[0].l_total - std::f64::consts::LN_2).abs() < 1e-12);
        assert_ne!(dpo.model, m);
    }

    #[test]
    fn evaluation_checkpoints_and_best_model() {
        let (m, split) = tiny_setup(60);
        let cfg = TrainConfig {
            eval_every: 3,
            ..small_cfg(LossKind::Orpo)
        };
        let out = train(m, &split, &cfg).unwrap();
        let total = cfg.total_steps(split.train.len());
        let steps: Vec<usize> = out.evals.iter().map(|e| e.step).collect();
        assert_eq!(*steps.last().unwrap(), total);
        assert!(steps.iter().all(|s| s % 3 == 0 || *s == total));
        assert_eq!(out.checkpoints.len(), out.evals.len());
        let best = out.best_step.unwrap();
        let best_loss = out.evals.iter().find(|e| e.step == best).unwrap().eval_loss;
        assert!(out.evals.iter().all(|e| e.eval_loss >= best_loss));
        assert_eq!(out.checkpoints.last().unwrap().1, out.model);
    }

    #[test]
    fn csv_round_trip_and_strict_header() {
        let (m, split) = tiny_setup(30);
        let out = train(m, &split, &small_cfg(LossKind::Sft)).unwrap();
        let csv = telemetry_to_csv(&out.telemetry);
        assert!(csv.starts_with(&format!("{TELEMETRY_HEADER}\n")));
        assert!(!csv.contains('\r'));
        let back = telemetry_from_csv(&csv).unwrap();
        assert_eq!(back.len(), out.telemetry.len());
        assert_eq!(telemetry_to_csv(&back), csv);
        let permuted = csv.replacen("step,epoch", "epoch,step", 1);
        assert!(telemetry_from_csv(&permuted).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            lr_max: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            warmup_frac: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(TrainConfig::defaults_for(LossKind::Sft).epochs, 1);
        assert_eq!(TrainConfig::defaults_for(LossKind::Dpo).epochs, 3);
        assert_eq!(TrainConfig::defaults_for(LossKind::Orpo).epochs, 10);
        assert_eq!("orpo_pr".parse::<LossKind>().unwrap(), LossKind::OrpoPr);
    }

    #[test]
    fn sweep_with_zero_lambda_matches_sft() {
        let (m, split) = tiny_setup(40);
        let cfg = small_cfg(LossKind::Orpo);
        let sweep = lambda_sweep(&m, &split, &[0.0], &cfg).unwrap();
        let sft = train(m, &split, &small_cfg(LossKind::Sft)).unwrap();
        assert_eq!(
            telemetry_to_csv(&sweep[0].telemetry),
            telemetry_to_csv(&sft.telemetry)
        );
        assert!(lambda_sweep(&sft.model, &split, &[], &cfg).is_err());
    }
}
