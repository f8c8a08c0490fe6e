//! Acceptance suite: every criterion at its stated tolerance and time budget.
//!
//! Run with `cargo test -p thinkguard --test acceptance -- --nocapture` to
//! see one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thinkguard::config::RunConfig;
use thinkguard::core::corpus::{generate_synthetic, Label, MemeRecord, Split};
use thinkguard::core::metrics::meteor::{meteor_detail, MeteorOptions};
use thinkguard::core::metrics::{agreement_rwg, classification_report, AgreementMode, RatingsMatrix};
use thinkguard::core::policy::{
    kl_divergence, kl_grad_logits, log_softmax, softmax, DecodeConfig, TokenId, ToyPolicy, Vocabulary,
    STRUCTURAL_TOKENS,
};
use thinkguard::core::rewards::{reward_format, reward_length, LengthRewardParams, RewardBreakdown, RewardWeights};
use thinkguard::core::structured::{check_format, parse, serialize};
use thinkguard::core::trainer::eval::evaluate;
use thinkguard::core::trainer::grpo::{grpo_step, sample_group, surrogate, GroupBatch, GrpoConfig, GrpoTrainer};
use thinkguard::core::trainer::sft::{run_sft, sft_loss, sft_loss_and_grad, SftExample, SftTarget, SftVariant};
use thinkguard::core::trainer::telemetry::CollapseMonitor;
use thinkguard::core::trainer::{compute_advantages, prompt_items, PromptItem};
use thinkguard::core::StructuredOutput;
use thinkguard::plot;
use thinkguard::telemetry::parse_telemetry;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if $cond {
        } else {
            return Err(format!($($msg)*));
        }
    };
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

#[test]
fn acceptance() {
    let criteria = [
        Criterion { id: 1, name: "reward formula", budget: secs(1), run: reward_formula },
        Criterion { id: 2, name: "meteor oracle", budget: secs(30), run: meteor_oracle },
        Criterion { id: 3, name: "advantage contract", budget: secs(1), run: advantage_contract },
        Criterion { id: 4, name: "gradient checks", budget: secs(120), run: gradient_checks },
        Criterion { id: 5, name: "clipping and kl", budget: secs(10), run: clipping_and_kl },
        Criterion { id: 6, name: "end-to-end grpo", budget: secs(300), run: end_to_end_grpo },
        Criterion { id: 7, name: "warm-start ordering", budget: secs(900), run: warm_start_ordering },
        Criterion { id: 8, name: "agreement index", budget: secs(1), run: agreement_index },
        Criterion { id: 9, name: "parser and format", budget: secs(5), run: parser_and_format },
        Criterion { id: 10, name: "classification metrics", budget: secs(5), run: classification_metrics },
        Criterion { id: 11, name: "telemetry and collapse", budget: secs(10), run: telemetry_and_collapse },
        Criterion { id: 12, name: "determinism", budget: secs(720), run: determinism },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => {
                Err(format!("{detail}; took {elapsed:.1?}, budget {:?}", c.budget))
            }
            r => r,
        };
        match &result {
            Ok(detail) => println!("criterion {:>2} {:<24} PASS {:>8.2?}  {detail}", c.id, c.name, elapsed),
            Err(why) => {
                println!("criterion {:>2} {:<24} FAIL {:>8.2?}  {why}", c.id, c.name, elapsed);
                failed.push(c.id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn words(n: usize) -> String {
    vec!["w"; n].join(" ")
}

fn reward_formula() -> Outcome {
    let w = RewardWeights::default();
    ensure!(
        (w.alpha_fmt, w.alpha_lbl, w.alpha_len, w.alpha_met) == (0.5, 0.4, 0.05, 0.05),
        "default weights {w:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let r: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
        let b = RewardBreakdown::compose(r[0], r[1], r[2], r[3], &w);
        let oracle = 0.5 * r[0] + 0.4 * r[1] + 0.05 * r[2] + 0.05 * r[3];
        worst = worst.max((b.total - oracle).abs());
    }
    ensure!(worst <= 1e-12, "weighted sum off by {worst:e}");

    let p = LengthRewardParams::default();
    let len = |n| reward_length(&words(n), &p);
    ensure!(len(100) == 1.0, "R_len(100) = {}", len(100));
    ensure!((len(120) - (-0.5f64).exp()).abs() <= 1e-9, "R_len(120) = {}", len(120));
    for d in 0..100 {
        let oracle = (-((d * d) as f64) / 800.0).exp();
        ensure!(len(100 + d) == len(100 - d), "asymmetric at ±{d}");
        ensure!((len(100 + d) - oracle).abs() <= 1e-12, "R_len({}) = {}", 100 + d, len(100 + d));
    }
    Ok(format!("max identity error {worst:.1e}"))
}

/// Best (matches, chunks) over every partial one-to-one alignment.
fn brute_force_alignment(cand: &[u8], refs: &[u8]) -> (usize, usize) {
    #[allow(clippy::too_many_arguments)]
    fn rec(cand: &[u8], refs: &[u8], used: &mut [bool; 8], i: usize, prev: Option<usize>, m: usize, ch: usize, best: &mut (usize, usize)) {
        if i == cand.len() {
            if m > best.0 || (m == best.0 && ch < best.1) {
                *best = (m, ch);
            }
            return;
        }
        rec(cand, refs, used, i + 1, None, m, ch, best);
        for j in 0..refs.len() {
            if !used[j] && cand[i] == refs[j] {
                let continues = j > 0 && prev == Some(j - 1);
                used[j] = true;
                rec(cand, refs, used, i + 1, Some(j), m + 1, ch + usize::from(!continues), best);
                used[j] = false;
            }
        }
    }
    let mut best = (0, usize::MAX);
    rec(cand, refs, &mut [false; 8], 0, None, 0, 0, &mut best);
    if best.0 == 0 {
        best.1 = 0;
    }
    best
}

fn meteor_oracle() -> Outcome {
    let opts = MeteorOptions::default();
    let ten = "a b c d e f g h i j";
    let same = meteor_detail(ten, ten, &opts).score;
    ensure!((same - 0.9995).abs() <= 1e-6, "identical ten tokens: {same}");
    let swapped = meteor_detail("b a", "a b", &opts).score;
    ensure!((swapped - 0.5).abs() <= 1e-9, "swapped halves: {swapped}");
    let disjoint = meteor_detail("x y z", "a b c", &opts).score;
    ensure!(disjoint == 0.0, "disjoint: {disjoint}");

    // Scores depend only on which positions hold equal tokens, so one
    // restricted-growth string per renaming class covers every pair of
    // sentences up to length 6 over 5 tokens.
    fn classes(n: usize, f: &mut dyn FnMut(&[u8]) -> Result<(), String>) -> Result<(), String> {
        fn rec(buf: &mut Vec<u8>, n: usize, max: u8, f: &mut dyn FnMut(&[u8]) -> Result<(), String>) -> Result<(), String> {
            if buf.len() == n {
                return f(buf);
            }
            let top = if buf.is_empty() { 0 } else { (max + 1).min(4) };
            for s in 0..=top {
                buf.push(s);
                rec(buf, n, max.max(s), f)?;
                buf.pop();
            }
            Ok(())
        }
        rec(&mut Vec::new(), n, 0, f)
    }
    let text = |t: &[u8]| t.iter().map(|x| format!("t{x}")).collect::<Vec<_>>().join(" ");
    let mut pairs = 0u64;
    for a in 0..=6 {
        for b in 0..=6 {
            classes(a + b, &mut |s| {
                let (cand, refs) = s.split_at(a);
                let (m, ch) = brute_force_alignment(cand, refs);
                let d = meteor_detail(&text(cand), &text(refs), &opts);
                let expected = if m == 0 {
                    0.0
                } else {
                    let (p, r) = (m as f64 / a as f64, m as f64 / b as f64);
                    10.0 * p * r / (r + 9.0 * p) * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
                };
                pairs += 1;
                if (d.matches, d.chunks) != (m, ch) || (d.score - expected).abs() > 1e-12 {
                    return Err(format!("{cand:?} vs {refs:?}: got {} / {} / {}, oracle {m} / {ch} / {expected}", d.matches, d.chunks, d.score));
                }
                Ok(())
            })?;
        }
    }
    Ok(format!("{pairs} pair classes agree"))
}

fn advantage_contract() -> Outcome {
    let a = compute_advantages(&[1.0, 0.5, 0.0], 0.0).map_err(|e| e.to_string())?;
    let z = (1.5f64).sqrt();
    ensure!((a[0] - z).abs() <= 1e-4 && a[1].abs() <= 1e-4 && (a[2] + z).abs() <= 1e-4, "{a:?}");
    ensure!(compute_advantages(&[0.3; 6], 1e-8).unwrap() == vec![0.0; 6], "all-equal group");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let k = rng.gen_range(2..17);
        let r: Vec<f64> = (0..k).map(|_| rng.gen_range(0..64) as f64 / 64.0).collect();
        let c = rng.gen_range(-16..16) as f64;
        let s: Vec<f64> = r.iter().map(|x| x + c).collect();
        ensure!(
            compute_advantages(&r, 0.0).unwrap() == compute_advantages(&s, 0.0).unwrap(),
            "shift {c} changed advantages of {r:?}"
        );
    }
    Ok("exact".into())
}

const WORDS: [&str; 5] = ["zorp", "blick", "cat", "dog", "sun"];

fn small_policy() -> ToyPolicy {
    let tokens = STRUCTURAL_TOKENS.iter().chain(WORDS.iter()).map(|s| s.to_string()).collect();
    ToyPolicy::new(Vocabulary::new(tokens).unwrap(), vec!["zorp".into(), "blick".into()]).unwrap()
}

fn with_params(policy: &ToyPolicy, params: Vec<f64>) -> ToyPolicy {
    let mut p = policy.clone();
    p.set_params(params).unwrap();
    p
}

fn jitter(policy: &ToyPolicy, scale: f64, rng: &mut ChaCha8Rng) -> ToyPolicy {
    let params = policy.params().iter().map(|x| x + rng.gen_range(-scale..scale)).collect();
    with_params(policy, params)
}

fn random_prompt(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(1..6)).map(|_| WORDS[rng.gen_range(0..5)]).collect::<Vec<_>>().join(" ")
}

fn random_tokens(policy: &ToyPolicy, len: usize, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    (0..len).map(|_| TokenId(rng.gen_range(0..policy.vocab().len()) as u16)).collect()
}

fn record(label: Label, text: &str) -> MemeRecord {
    MemeRecord {
        id: "a0".into(),
        image_ref: "img/a0.png".into(),
        ocr_text: text.into(),
        label,
        protected_categories: BTreeSet::new(),
        attack_types: BTreeSet::new(),
        gold_explanation: "the text names zorp".into(),
        cot_trace: None,
        split: Split::Train,
    }
}

/// Largest relative gap between `analytic` and central differences of `f`.
fn fd_error(analytic: &[f64], at: &[f64], f: &mut dyn FnMut(Vec<f64>) -> f64) -> f64 {
    const H: f64 = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..at.len() {
        let mut up = at.to_vec();
        up[i] += H;
        let mut down = at.to_vec();
        down[i] -= H;
        let numeric = (f(up) - f(down)) / (2.0 * H);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

fn gradient_checks() -> Outcome {
    let base = small_policy();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let zero = with_params(&base, vec![0.0; base.params().len()]);
    let (mut lp, mut sft, mut grpo) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..100 {
        let policy = jitter(&zero, 1.0, &mut rng);
        let prompt = policy.encode_prompt(&random_prompt(&mut rng));
        let len = rng.gen_range(1..10);
        let tokens = random_tokens(&policy, len, &mut rng);
        let g = policy.grad_logprob(&prompt, &tokens).unwrap();
        lp = lp.max(fd_error(&g, policy.params(), &mut |x| {
            with_params(&policy, x).logprob(&prompt, &tokens).unwrap().iter().sum()
        }));

        let batch: Vec<SftExample> = (0..rng.gen_range(1..4))
            .map(|_| {
                let len = rng.gen_range(1..10);
                SftExample {
                    prompt: policy.encode_prompt(&random_prompt(&mut rng)),
                    target: SftTarget {
                        tokens: random_tokens(&policy, len, &mut rng),
                        mask: (0..len).map(|_| rng.gen_bool(0.7)).collect(),
                    },
                }
            })
            .collect();
        let (_, g) = sft_loss_and_grad(&policy, &batch).unwrap();
        sft = sft.max(fd_error(&g, policy.params(), &mut |x| sft_loss(&with_params(&policy, x), &batch).unwrap()));

        let reference = jitter(&zero, 1.0, &mut rng);
        let old = jitter(&reference, 0.3, &mut rng);
        let live = jitter(&old, 0.3, &mut rng);
        let config = GrpoConfig {
            group_size: 3,
            kl_beta: rng.gen_range(0.0..0.5),
            decode: DecodeConfig { max_tokens: 8, ..DecodeConfig::default() },
            ..GrpoConfig::default()
        };
        let recs = [record(Label::Hateful, &random_prompt(&mut rng)), record(Label::NonHateful, &random_prompt(&mut rng))];
        let frozen = old.snapshot();
        let batches: Vec<GroupBatch> = recs
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let item = PromptItem { prompt: live.encode_prompt(&r.ocr_text), record: r };
                let mut b = sample_group(&frozen, &item, &config, &[case, j as u64]).unwrap();
                b.advantages = b.advantages.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
                b
            })
            .collect();
        let g = surrogate(&live, &reference, &batches, &config).unwrap().grad;
        grpo = grpo.max(fd_error(&g, live.params(), &mut |x| {
            -surrogate(&with_params(&live, x), &reference, &batches, &config).unwrap().objective
        }));
    }
    let detail = format!("max rel error logprob {lp:.1e}, sft {sft:.1e}, grpo {grpo:.1e}");
    ensure!(lp < 1e-4 && sft < 1e-4 && grpo < 1e-4, "{detail}");
    Ok(detail)
}

fn clipping_and_kl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let zero = with_params(&small_policy(), vec![0.0; small_policy().params().len()]);
    let rec = record(Label::Hateful, "zorp cat");
    let config = GrpoConfig {
        kl_beta: 0.0,
        group_size: 2,
        decode: DecodeConfig { max_tokens: 1, top_p: 1.0, ..DecodeConfig::default() },
        ..GrpoConfig::default()
    };
    for seed in 0..50 {
        let old = jitter(&zero, 0.5, &mut rng);
        let item = PromptItem { prompt: old.encode_prompt(&rec.ocr_text), record: &rec };
        let mut batch = sample_group(&old.snapshot(), &item, &config, &[seed]).unwrap();
        batch.completions.truncate(1);
        batch.advantages.truncate(1);
        let token = batch.completions[0].trajectory.tokens[0];
        let idx = old.param_index(0, token);
        for (adv, delta) in [(1.0, 2.0), (-1.0, -2.0)] {
            batch.advantages = vec![adv];
            let mut moved = old.clone();
            moved.params_mut()[idx] += delta;
            let e = surrogate(&moved, &old, std::slice::from_ref(&batch), &config).unwrap();
            ensure!(e.clip_frac == 1.0, "state not clipped (A = {adv})");
            ensure!(e.grad.iter().all(|g| *g == 0.0), "clipped state has non-zero gradient (A = {adv})");
        }
    }

    for _ in 0..1000 {
        let n = rng.gen_range(2..20);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        ensure!(kl_divergence(&softmax(&s), &softmax(&s)).unwrap() == 0.0, "KL(p, p) != 0");
        ensure!(kl_grad_logits(&log_softmax(&s), &log_softmax(&s)).0 == 0.0, "KL(p, p) != 0");
        ensure!(kl_divergence(&softmax(&s), &softmax(&t)).unwrap() >= 0.0, "negative KL");
        ensure!(kl_grad_logits(&log_softmax(&s), &log_softmax(&t)).0 >= 0.0, "negative KL");
    }

    let recs: Vec<MemeRecord> = (0..3).map(|i| record(Label::ALL[i % 2], &random_prompt(&mut rng))).collect();
    let config = GrpoConfig { decode: DecodeConfig { max_tokens: 12, ..DecodeConfig::default() }, ..GrpoConfig::default() };
    for step in 0..20 {
        let policy = jitter(&zero, 1.0, &mut rng);
        let items: Vec<PromptItem> =
            recs.iter().map(|r| PromptItem { prompt: policy.encode_prompt(&r.ocr_text), record: r }).collect();
        let out = grpo_step(&policy, &policy.snapshot(), &policy.snapshot(), &items, &config, step).unwrap();
        ensure!(out.eval.kl == 0.0 && out.eval.clip_frac == 0.0, "kl {} clip {}", out.eval.kl, out.eval.clip_frac);
        for b in &out.batches {
            for c in &b.completions {
                let now = policy.logprob(&b.prompt, &c.trajectory.tokens).unwrap();
                ensure!(
                    now.iter().zip(&c.trajectory.logprobs).all(|(a, o)| (a - o).exp() == 1.0),
                    "ratio != 1 after snapshot"
                );
            }
        }
    }
    Ok("exact".into())
}

struct Run {
    sft_accuracy: f64,
    accuracy: f64,
    rewards: Vec<f64>,
}

/// Synthetic corpus, optional SFT warm-up, then GRPO; accuracies are on dev
/// with the policy left after the last step.
fn pipeline(seed: u64, warm: bool) -> Run {
    let cfg = RunConfig::load(None, None, &[format!("seed={seed}")]).unwrap();
    let synth = cfg.synth_config();
    assert_eq!((synth.n_train, synth.n_dev, synth.vocab_size), (200, 50, 64));
    let records = generate_synthetic(&synth).unwrap();
    let pick = |s| records.iter().filter(|r| r.split == s).cloned().collect::<Vec<_>>();
    let (train, dev) = (pick(Split::Train), pick(Split::Dev));
    let fresh = ToyPolicy::new(Vocabulary::new(synth.vocabulary_words()).unwrap(), synth.trigger_tokens).unwrap();
    let ctx = cfg.prompt_context().unwrap();
    let train_items = prompt_items(&fresh, &train, &ctx).unwrap();
    let dev_items = prompt_items(&fresh, &dev, &ctx).unwrap();
    let variant: SftVariant = cfg.sft.variant;
    let eval_cfg = cfg.eval_config(variant, None);

    let start = if warm {
        let sft_cfg = cfg.sft_config();
        assert_eq!(sft_cfg.epochs, 3);
        run_sft(fresh, &train_items, &dev_items, &sft_cfg).unwrap().policy
    } else {
        fresh
    };
    let sft_accuracy = evaluate(&start, &dev_items, &eval_cfg).unwrap().classification.accuracy;
    let grpo_cfg = cfg.grpo_config_for(variant);
    assert_eq!((grpo_cfg.group_size, grpo_cfg.kl_beta, grpo_cfg.clip_epsilon), (8, 0.04, 0.2));
    let mut trainer = GrpoTrainer::new(start, grpo_cfg, &dev_items).unwrap();
    while !trainer.is_finished() {
        trainer.step(&train_items, &dev_items).unwrap();
    }
    let rewards = trainer.telemetry.iter().map(|r| r.mean_reward).collect();
    let accuracy = evaluate(&trainer.policy, &dev_items, &eval_cfg).unwrap().classification.accuracy;
    Run { sft_accuracy, accuracy, rewards }
}

/// Largest fall of the full-window trailing mean below its running peak.
fn worst_smoothed_drop(values: &[f64], window: usize) -> f64 {
    let means: Vec<f64> = values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    let mut worst = 0.0f64;
    for (i, later) in means.iter().enumerate() {
        for earlier in &means[..i] {
            worst = worst.max(earlier - later);
        }
    }
    worst
}

fn end_to_end_grpo() -> Outcome {
    let run = pipeline(42, true);
    let window = (run.rewards.len() / 10).max(5);
    let drop = worst_smoothed_drop(&run.rewards, window);
    let first = run.rewards[..window].iter().sum::<f64>() / window as f64;
    let last = run.rewards[run.rewards.len() - window..].iter().sum::<f64>() / window as f64;
    let detail = format!(
        "dev accuracy {:.3}, reward {first:.4} -> {last:.4}, largest smoothed decrease {drop:.4} (window {window})",
        run.accuracy
    );
    ensure!(run.accuracy >= 0.95, "{detail}");
    ensure!(drop <= 0.02, "{detail}");
    Ok(detail)
}

fn warm_start_ordering() -> Outcome {
    let mut parts = Vec::new();
    for seed in [42, 43, 44] {
        let cold = pipeline(seed, false);
        let warm = pipeline(seed, true);
        parts.push(format!("seed {seed}: cold {:.2} warm {:.2}", cold.accuracy, warm.accuracy));
        ensure!(cold.accuracy <= warm.accuracy, "{}", parts.join("; "));
        ensure!(warm.sft_accuracy > 0.0, "warm start learned nothing");
    }
    Ok(parts.join("; "))
}

fn agreement_index() -> Outcome {
    let rwg = |rows: Vec<Vec<u8>>| agreement_rwg(&RatingsMatrix::new(rows).unwrap(), AgreementMode::PerItem);
    for v in 1..=5 {
        ensure!(rwg(vec![vec![v; 3]; 4]) == 1.0, "unanimous {v}");
    }
    let a = rwg(vec![vec![5, 4]]);
    ensure!((a - 0.9375).abs() <= 1e-12, "{{5,4}} -> {a}");
    let b = rwg(vec![vec![1, 5]]);
    ensure!(b == 0.0, "{{1,5}} -> {b}");
    Ok("exact".into())
}

/// Malformed outputs and the flags they must raise, in the order
/// think block, well nested, label field, label parseable, explanation.
const MALFORMED: [(&str, &str, [bool; 5]); 12] = [
    ("empty", "", [false, true, false, false, false]),
    ("no think block", "Label: hateful\nExplanation: x", [false, true, true, true, true]),
    ("unclosed think", "<think>a\nLabel: hateful\nExplanation: x", [false, false, true, true, true]),
    ("stray close", "a</think>\nLabel: hateful\nExplanation: x", [false, false, true, true, true]),
    ("nested think", "<think><think>a</think></think>\nLabel: hateful\nExplanation: x", [true, false, true, true, true]),
    ("no label", "<think>a</think>\nExplanation: x", [true, true, false, false, false]),
    ("unknown label", "<think>a</think>\nLabel: maybe\nExplanation: x", [true, true, true, false, true]),
    ("no explanation", "<think>a</think>\nLabel: hateful", [true, true, true, true, false]),
    ("blank explanation", "<think>a</think>\nLabel: hateful\nExplanation:   ", [true, true, true, true, false]),
    ("label only inside think", "<think>Label: hateful</think>\nExplanation: x", [true, true, false, false, false]),
    ("delimiter in explanation", "<think>a</think>\nLabel: hateful\nExplanation: y <think> z", [true, false, true, true, false]),
    ("text before think", "preamble <think>a</think>\nLabel: hateful\nExplanation: x", [false, false, true, true, true]),
];

fn parser_and_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pool = ["cat", "Zorp", "42", "ünï", "a,b", "label", "why?", "x-y"];
    let phrase = |rng: &mut ChaCha8Rng, min: usize| {
        (0..rng.gen_range(min..8)).map(|_| pool[rng.gen_range(0..pool.len())]).collect::<Vec<_>>().join(" ")
    };
    for _ in 0..1000 {
        let label = if rng.gen_bool(0.5) { Label::Hateful } else { Label::NonHateful };
        let o = StructuredOutput::new(phrase(&mut rng, 0), label, phrase(&mut rng, 1));
        let text = serialize(&o);
        let back = parse(&text).map_err(|r| format!("{text:?} failed to parse: {r:?}"))?;
        ensure!(back == o && serialize(&back) == text, "round trip changed {text:?}");
    }
    for (name, text, flags) in MALFORMED {
        let r = check_format(text);
        ensure!(r.flags() == flags, "{name}: flags {:?}, documented {flags:?}", r.flags());
        ensure!(!r.compliant && reward_format(text) == 0.0, "{name}: not rejected");
    }
    Ok(format!("1000 round trips, {} fixtures", MALFORMED.len()))
}

fn classification_metrics() -> Outcome {
    use Label::{Hateful as H, NonHateful as N};
    let r = classification_report(&[Some(H), Some(N), Some(N), Some(N)], &[H, H, N, N]).unwrap();
    ensure!(r.accuracy == 0.75 && (r.macro_f1 - 0.7333).abs() <= 1e-4, "{} {}", r.accuracy, r.macro_f1);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..100 {
        let n = rng.gen_range(1..80);
        let golds: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.5) { H } else { N }).collect();
        let preds: Vec<Option<Label>> = (0..n).map(|_| [None, Some(H), Some(N)][rng.gen_range(0..3)]).collect();
        // counts[gold][pred], pred 2 = unparseable
        let mut counts = [[0f64; 3]; 2];
        for (g, p) in golds.iter().zip(&preds) {
            let gi = usize::from(*g == N);
            let pi = match p {
                Some(H) => 0,
                Some(N) => 1,
                None => 2,
            };
            counts[gi][pi] += 1.0;
        }
        let f1 = |c: usize| {
            let tp = counts[c][c];
            let predicted = counts[0][c] + counts[1][c];
            let actual = counts[c].iter().sum::<f64>();
            if tp == 0.0 { 0.0 } else { 2.0 * tp / (predicted + actual) }
        };
        let support = [counts[0].iter().sum::<f64>(), counts[1].iter().sum::<f64>()];
        let acc = (counts[0][0] + counts[1][1]) / n as f64;
        let macro_f1 = (f1(0) + f1(1)) / 2.0;
        let weighted = (f1(0) * support[0] + f1(1) * support[1]) / n as f64;
        let r = classification_report(&preds, &golds).unwrap();
        ensure!(
            (r.accuracy - acc).abs() <= 1e-12 && (r.macro_f1 - macro_f1).abs() <= 1e-12 && (r.weighted_f1 - weighted).abs() <= 1e-12,
            "case {case}: {} {} {} vs {acc} {macro_f1} {weighted}",
            r.accuracy,
            r.macro_f1,
            r.weighted_f1
        );
    }
    Ok("100 random sets agree".into())
}

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_thinkguard"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUN_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("thinkguard {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn telemetry_and_collapse() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    cli(dir, &["synth", "--out-dir", "data", "--n-train", "40", "--n-dev", "10", "--n-test", "10"])?;
    cli(dir, &["grpo", "--train", "data/train.jsonl", "--dev", "data/dev.jsonl", "--cold-start", "--steps", "12", "--out", "g"])?;
    let csv = fs::read_to_string(dir.join("g/telemetry.csv")).map_err(|e| e.to_string())?;
    let header = csv.lines().next().unwrap_or_default();
    ensure!(header == "step,mean_reward,mean_len,mean_think_len,loss,kl,clip_frac", "header {header:?}");
    ensure!(csv.lines().count() == 13, "{} telemetry lines", csv.lines().count());

    let mut monitor = CollapseMonitor::new(5, 0.5);
    let stream: Vec<f64> = (0..30).map(|i| if i < 10 { 40.0 } else { 40.0 * 0.85f64.powi(i - 9) }).collect();
    let fired: Vec<bool> = stream.iter().map(|&t| monitor.observe(t)).collect();
    ensure!(fired.iter().any(|f| *f), "shrinking think length was not flagged");
    ensure!(!fired[..10].iter().any(|f| *f), "flag raised before shrinkage");
    let mut steady = CollapseMonitor::new(5, 0.5);
    ensure!(!(0..30).any(|_| steady.observe(40.0)), "steady stream flagged");

    cli(dir, &["plot", "--telemetry", "g/telemetry.csv", "--out", "a.svg"])?;
    cli(dir, &["plot", "--telemetry", "g/telemetry.csv", "--out", "b.svg"])?;
    let a = fs::read(dir.join("a.svg")).map_err(|e| e.to_string())?;
    let b = fs::read(dir.join("b.svg")).map_err(|e| e.to_string())?;
    ensure!(a == b, "SVG bytes differ between runs");
    let svg = String::from_utf8(a).map_err(|e| e.to_string())?;
    ensure!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 2, "chart lacks the reward and length curves");
    let direct = plot::render(&parse_telemetry(&csv).map_err(|e| e.to_string())?, None).map_err(|e| e.to_string())?;
    ensure!(direct.svg == svg, "library and CLI charts differ");
    Ok(format!("flag at observation {}", monitor.flagged_at().unwrap_or(0)))
}

const PIPELINE_OUTPUTS: [&str; 12] = [
    "data/train.jsonl",
    "data/dev.jsonl",
    "data/test.jsonl",
    "sft/sft.ckpt.json",
    "sft/sft_telemetry.csv",
    "grpo/telemetry.csv",
    "grpo/completions.csv",
    "grpo/grpo.ckpt.json",
    "grpo/manifest.json",
    "report.json",
    "report.csv",
    "reward.svg",
];

fn full_pipeline(dir: &Path) -> Result<(), String> {
    cli(dir, &["--seed", "42", "synth", "--out-dir", "data"])?;
    cli(dir, &["--seed", "42", "sft", "--train", "data/train.jsonl", "--dev", "data/dev.jsonl", "--out", "sft"])?;
    cli(dir, &[
        "--seed", "42", "grpo", "--train", "data/train.jsonl", "--dev", "data/dev.jsonl", "--init", "sft/sft.ckpt.json",
        "--out", "grpo",
    ])?;
    cli(dir, &["--seed", "42", "eval", "--checkpoint", "grpo/grpo.ckpt.json", "--data", "data/test.jsonl", "--out", "report.json"])?;
    cli(dir, &["plot", "--telemetry", "grpo/telemetry.csv", "--out", "reward.svg"])?;
    Ok(())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    full_pipeline(a.path())?;
    full_pipeline(b.path())?;
    for f in PIPELINE_OUTPUTS {
        let x = fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure!(x == y, "{f} differs between runs");
    }
    Ok(format!("{} artifacts byte-identical", PIPELINE_OUTPUTS.len()))
}
