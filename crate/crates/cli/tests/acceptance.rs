//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use orpo_core::analysis::{self, DiversityConfig};
use orpo_core::data::{
    corpus_texts, filter_and_tokenize, make_synthetic_corpus, split, TokenizeConfig,
};
use orpo_core::gradcheck::{run_gradcheck, GradcheckConfig};
use orpo_core::lm::{build_vocab, read_checkpoint, write_checkpoint};
use orpo_core::objectives::{delta_term, odds_ratio_loss, DEFAULT_LOGP_CLAMP};
use orpo_core::reward::{self, RewardModel, RewardTrainConfig, SamplingConfig};
use orpo_core::rng::stream;
use orpo_core::trainer::{self, epoch_means, TrainOutcome};
use orpo_core::{
    DatasetSplit, HyperParams, LMConfig, LossKind, SeqScore, TelemetryRow, TinyLM, TrainConfig,
};
use rand::Rng;

const SEED: u64 = 0;
const CORPUS_N: usize = 2000;
const EPOCHS: usize = 10;

struct Ledger {
    failures: usize,
}

impl Ledger {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!(
            "{} {id:>2} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failures += 1;
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn corr(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn final_rejected(t: &[TelemetryRow]) -> f64 {
    *epoch_means(t, |r| r.avg_logp_rejected).last().unwrap()
}

fn gradient_correctness(l: &mut Ledger) {
    let start = Instant::now();
    let report = run_gradcheck(&GradcheckConfig {
        seed: SEED,
        trials: 100,
        net_triples: 3,
    })
    .unwrap();
    let elapsed = start.elapsed();
    let suite = |n: &str| report.suites.iter().find(|s| s.name == n).unwrap();
    let (scalar, net) = (suite("or_partials"), suite("orpo_network"));
    let params = report.network_params;
    let pass = scalar.checks >= 100
        && scalar.max_rel_err < 1e-6
        && net.max_rel_err < 1e-4
        && params <= 10_000
        && report.passed
        && elapsed < Duration::from_secs(10);
    l.record(
        1,
        "gradient correctness",
        pass,
        format!(
            "or_partials max rel err {:.2e} over {} checks (< 1e-6); network max rel err {:.2e} on {params} params (< 1e-4); all suites {}; {} (< 10s)",
            scalar.max_rel_err,
            scalar.checks,
            net.max_rel_err,
            if report.passed { "pass" } else { "do not pass" },
            secs(elapsed)
        ),
    );
}

fn closed_forms(l: &mut Ledger) {
    let ln2 = 2f64.ln();
    let s = |p: f64| SeqScore::from_avg(p.ln(), 1);
    let (l_equal, _) = odds_ratio_loss(&s(0.5), &s(0.5), DEFAULT_LOGP_CLAMP).unwrap();
    let (l_85, _) = odds_ratio_loss(&s(0.8), &s(0.5), DEFAULT_LOGP_CLAMP).unwrap();
    let d0 = delta_term(0.0);
    let rm = reward::pair_loss_from_margin(0.0);
    let errs = [
        (l_equal - ln2).abs(),
        (l_85 - 1.25f64.ln()).abs(),
        (d0 - 0.5).abs(),
        (rm - ln2).abs(),
    ];
    let pass = errs.iter().all(|e| *e <= 1e-12);
    l.record(
        2,
        "closed-form loss values",
        pass,
        format!(
            "|l_or(z=0)-ln2| {:.1e}, |l_or(0.8,0.5)-ln(5/4)| {:.1e}, |δ(0)-0.5| {:.1e}, |rm_loss(equal)-ln2| {:.1e} (all <= 1e-12)",
            errs[0], errs[1], errs[2], errs[3]
        ),
    );
}

fn ratio_study(l: &mut Ledger) {
    let start = Instant::now();
    let pairs = analysis::sample_uniform_pairs(50_000, SEED);
    let (pr1, or) = analysis::ratio_series(&pairs, 1.0);
    let (pr02, _) = analysis::ratio_series(&pairs, 0.2);
    let elapsed = start.elapsed();
    let (s_or, s_pr1, s_pr02) = (sample_std(&or), sample_std(&pr1), sample_std(&pr02));
    let (t_or, t_pr1) = (
        (2.0 * std::f64::consts::PI.powi(2) / 3.0).sqrt(),
        2f64.sqrt(),
    );
    let rel = |s: f64, t: f64| (s - t).abs() / t;
    let pass = rel(s_or, t_or) < 0.02
        && rel(s_pr1, t_pr1) < 0.02
        && s_or > s_pr1
        && s_pr1 > s_pr02
        && elapsed < Duration::from_secs(5);
    l.record(
        3,
        "ratio study",
        pass,
        format!(
            "std log-OR {s_or:.4} vs {t_or:.4} ({:.2}%), std log-PR(β=1) {s_pr1:.4} vs {t_pr1:.4} ({:.2}%), ordering {s_or:.3} > {s_pr1:.3} > {s_pr02:.3}; {} (< 5s)",
            100.0 * rel(s_or, t_or),
            100.0 * rel(s_pr1, t_pr1),
            secs(elapsed)
        ),
    );
}

struct Setup {
    split: DatasetSplit,
    init: TinyLM,
    lm: LMConfig,
}

fn setup() -> Setup {
    let rows = make_synthetic_corpus(CORPUS_N, SEED);
    let vocab = build_vocab(&corpus_texts(&rows), 1, false).unwrap();
    let (triples, stats) = filter_and_tokenize(&rows, &vocab, &TokenizeConfig::default());
    let split = split(triples, [0.8, 0.1, 0.1], SEED, stats).unwrap();
    let lm = LMConfig {
        vocab_size: vocab.len(),
        embed_dim: 16,
        hidden_dim: 48,
        context_window: 4,
        seed: SEED as u32,
    };
    Setup {
        init: TinyLM::new(lm).unwrap(),
        split,
        lm,
    }
}

fn run(s: &Setup, kind: LossKind, lambda: f64) -> TrainOutcome {
    let cfg = TrainConfig {
        loss_kind: kind,
        epochs: EPOCHS,
        lr_max: 1e-3,
        seed: SEED,
        hp: HyperParams {
            lambda,
            ..Default::default()
        },
        ..Default::default()
    };
    trainer::train(s.init.clone(), &s.split, &cfg).unwrap()
}

fn training_criteria(l: &mut Ledger) {
    let s = setup();
    let n_triples = s.split.train.len() + s.split.eval.len() + s.split.test.len();

    let start = Instant::now();
    let sft = run(&s, LossKind::Sft, 1.0);
    let sft_time = start.elapsed();
    let chosen = epoch_means(&sft.telemetry, |r| r.avg_logp_chosen);
    let rejected = epoch_means(&sft.telemetry, |r| r.avg_logp_rejected);
    let r = corr(&chosen, &rejected);
    let pass = n_triples >= 2000
        && EPOCHS >= 5
        && rejected.last() > rejected.first()
        && r > 0.9
        && sft_time < Duration::from_secs(300);
    l.record(
        4,
        "SFT raises rejected likelihood",
        pass,
        format!(
            "{n_triples} triples, {EPOCHS} epochs; epoch-mean rejected avg log-prob {:.3} -> {:.3}; Pearson(chosen, rejected) {r:.4} (> 0.9); {} (< 5 min)",
            rejected[0],
            rejected.last().unwrap(),
            secs(sft_time)
        ),
    );

    let sweep_cfg = TrainConfig {
        epochs: EPOCHS,
        lr_max: 1e-3,
        seed: SEED,
        ..Default::default()
    };
    let sweep = trainer::lambda_sweep(&s.init, &s.split, &[0.1, 0.5, 1.0], &sweep_cfg).unwrap();
    let orpo = &sweep[2];
    let lor = epoch_means(&orpo.telemetry, |r| r.log_odds_ratio);
    let inc = lor.windows(2).filter(|w| w[1] > w[0]).count() as f64 / (lor.len() - 1) as f64;
    let (sft_rej, orpo_rej) = (
        final_rejected(&sft.telemetry),
        final_rejected(&orpo.telemetry),
    );
    let pass = inc >= 0.8 && lor.last() > lor.first() && orpo_rej < sft_rej;
    l.record(
        5,
        "ORPO log odds ratio dynamics",
        pass,
        format!(
            "epoch-mean log odds ratio {:.3} -> {:.3}, increasing on {:.0}% of epoch pairs (>= 80%); final rejected ORPO {orpo_rej:.3} < SFT {sft_rej:.3}",
            lor[0],
            lor.last().unwrap(),
            100.0 * inc
        ),
    );

    let m: Vec<f64> = sweep.iter().map(|r| r.final_margin).collect();
    l.record(
        6,
        "lambda ablation",
        m[0] < m[1] && m[1] < m[2],
        format!(
            "held-out margin λ=0.1 {:.4}, λ=0.5 {:.4}, λ=1.0 {:.4} (strictly increasing)",
            m[0], m[1], m[2]
        ),
    );

    let pr = run(&s, LossKind::OrpoPr, 1.0);
    let pr_rej = final_rejected(&pr.telemetry);
    l.record(
        7,
        "probability-ratio variant suppresses harder",
        pr_rej < orpo_rej && pr.telemetry.len() == orpo.telemetry.len(),
        format!(
            "final rejected PR {pr_rej:.3} < OR {orpo_rej:.3} over {} matched steps",
            pr.telemetry.len()
        ),
    );

    let start = Instant::now();
    let rm_init = RewardModel::new(LMConfig {
        seed: SEED as u32 + 9,
        ..s.lm
    })
    .unwrap();
    let rm = reward::train_reward(
        rm_init,
        &s.split,
        &RewardTrainConfig {
            seed: SEED,
            ..Default::default()
        },
    )
    .unwrap();
    let prompts: Vec<Vec<usize>> = s.split.test.iter().map(|t| t.x.clone()).collect();
    let sc = SamplingConfig {
        seed: SEED,
        rounds: 3,
        temperature: 1.0,
        ..Default::default()
    };
    let wr = reward::win_rate(&orpo.model, &sft.model, &prompts, &rm.model, &sc).unwrap();
    let rm_time = start.elapsed() + sft_time;
    let pass = rm.heldout_accuracy > 0.8
        && wr.win_rate_a > 55.0
        && wr.mean_reward_a > wr.mean_reward_b
        && rm_time < Duration::from_secs(600);
    l.record(
        8,
        "reward pipeline",
        pass,
        format!(
            "RM held-out accuracy {:.3} (> 0.8); win rate ORPO vs SFT {:.1}% ± {:.1} over {} rounds at T=1 (> 55%); mean reward ORPO {:.3} > SFT {:.3}; {} (< 10 min)",
            rm.heldout_accuracy,
            wr.win_rate_a,
            wr.win_rate_std,
            wr.rounds,
            wr.mean_reward_a,
            wr.mean_reward_b,
            secs(rm_time)
        ),
    );
}

fn diversity_algebra(l: &mut Ledger) {
    let v = vec![0.3, -1.2, 0.7, 2.0];
    let same = analysis::diversity_d(&vec![v; 6]).unwrap();
    let (e_lit, e_cos) = ((same.literal - 0.25).abs(), (same.mean_cosine - 1.0).abs());

    let mut rng = stream(SEED, &[0xD1]);
    let mut set: Vec<Vec<f64>> = (0..9)
        .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let d1 = analysis::diversity_d(&set).unwrap();
    set.reverse();
    set.swap(1, 4);
    let d2 = analysis::diversity_d(&set).unwrap();

    let model = {
        let mut m = TinyLM::new(LMConfig {
            vocab_size: 20,
            embed_dim: 6,
            hidden_dim: 12,
            context_window: 3,
            seed: 5,
        })
        .unwrap();
        m.randomize_all(11, 0.5);
        m
    };
    let mut prompts: Vec<Vec<usize>> = (0..7)
        .map(|_| (0..4).map(|_| rng.gen_range(0..17)).collect())
        .collect();
    let cfg = DiversityConfig {
        seed: SEED,
        ..Default::default()
    };
    let a = analysis::diversity_report(&model, &prompts, &cfg).unwrap();
    prompts.rotate_left(3);
    prompts.swap(0, 5);
    let b = analysis::diversity_report(&model, &prompts, &cfg).unwrap();

    let pass = e_lit <= 1e-12
        && e_cos <= 1e-12
        && d1 == d2
        && a.per_input == b.per_input
        && a.across_input == b.across_input;
    l.record(
        9,
        "diversity algebra",
        pass,
        format!(
            "identical set literal D err {e_lit:.1e}, mean-cosine err {e_cos:.1e} (<= 1e-12); D permutation-invariant: {}; PID {}; AID {}",
            d1 == d2,
            a.per_input == b.per_input,
            a.across_input == b.across_input
        ),
    );
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn kit(out: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_orpo-kit"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("ORPO_KIT_SEED")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism(l: &mut Ledger) {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let telemetry = train_dir.join("telemetry.csv");
    let telemetry = telemetry.to_str().unwrap().to_string();
    let jobs: Vec<(&str, Vec<&str>)> = vec![
        (
            "train",
            vec![
                "--seed",
                "3",
                "train",
                "--synthetic-n",
                "300",
                "--epochs",
                "2",
                "--eval-every",
                "5",
            ],
        ),
        (
            "ratios",
            vec!["--seed", "3", "sample-ratios", "--n", "5000"],
        ),
        ("plot", vec!["plot", "--telemetry", &telemetry]),
        (
            "gradcheck",
            vec!["gradcheck", "--trials", "10", "--net-triples", "1"],
        ),
    ];
    let mut identical = true;
    let mut names = 0;
    let mut ok = true;
    for (name, args) in &jobs {
        let dir = tmp.path().join(name);
        ok &= kit(&dir, args);
        let first = snapshot(&dir);
        ok &= kit(&dir, args);
        let second = snapshot(&dir);
        names += first.len();
        identical &= !first.is_empty() && first == second;
    }
    let kinds_covered = [
        "telemetry.csv",
        "metrics.json",
        "ratio_study.json",
        "ratio_hist.svg",
        "telemetry_logp.svg",
        "gradcheck.json",
    ]
    .iter()
    .all(|f| {
        jobs.iter()
            .any(|(n, _)| tmp.path().join(n).join(f).is_file())
    });

    let model = {
        let mut m = TinyLM::new(LMConfig {
            vocab_size: 40,
            embed_dim: 8,
            hidden_dim: 16,
            context_window: 4,
            seed: 2,
        })
        .unwrap();
        m.randomize_all(9, 1.0);
        m
    };
    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes).unwrap();
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    let bit_exact = model.config == back.config
        && model
            .tensors()
            .iter()
            .zip(back.tensors().iter())
            .all(|((_, a), (_, b))| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b.iter())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            });
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();

    let pass = ok && identical && kinds_covered && bit_exact && bytes == again;
    l.record(
        10,
        "determinism and formats",
        pass,
        format!(
            "commands succeeded: {ok}; {names} output files byte-identical on rerun: {identical}; CSV/JSON/SVG covered: {kinds_covered}; checkpoint round trip bit-exact: {}",
            bit_exact && bytes == again
        ),
    );
}

fn main() {
    let mut ledger = Ledger { failures: 0 };
    gradient_correctness(&mut ledger);
    closed_forms(&mut ledger);
    ratio_study(&mut ledger);
    training_criteria(&mut ledger);
    diversity_algebra(&mut ledger);
    determinism(&mut ledger);
    if ledger.failures > 0 {
        println!("{} criteria failed", ledger.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
