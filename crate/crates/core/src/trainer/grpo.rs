//! Group relative policy optimization.
//!
//! Per prompt, `K` completions are sampled from the frozen pre-update policy
//! `π_old`, scored with the composite reward and turned into group-normalized
//! advantages. The objective maximized is
//!
//! ```text
//! J(θ) = 1/(P·K) Σ_prompts Σ_k Σ_t [ min(r·A_k, clip(r, 1−ε, 1+ε)·A_k) − β·KL(π_θ(·|h) ‖ π_ref(·|h)) ]
//! ```
//!
//! with `r = π_θ(a|h) / π_old(a|h)` per sampled token and the KL taken
//! exactly over the full vocabulary at each visited state.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::advantages::{compute_advantages, AdvantageError};
use super::optim::{clip_grad_norm, AdamW, CosineSchedule, OptimConfig};
use super::telemetry::{think_length, StepRecord};
use super::PromptItem;
use crate::policy::{
    kl_grad_logits, log_softmax, nucleus, DecodeConfig, EncodedPrompt, FrozenPolicy, PolicyError,
    Trajectory, ToyPolicy,
};
use crate::rewards::{reward_total, RewardBreakdown, RewardConfig};
use crate::rng::{derive_rng, stage};

/// Distribution used for importance ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// Untruncated temperature-1 distributions.
    #[default]
    Full,
    /// The temperature-scaled nucleus distribution actually sampled from.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub kl_beta: f64,
    pub clip_epsilon: f64,
    pub advantage_epsilon: f64,
    pub inner_epochs: usize,
    pub steps: usize,
    pub prompts_per_step: usize,
    pub eval_every: usize,
    pub optim: OptimConfig,
    pub decode: DecodeConfig,
    pub reward: RewardConfig,
    pub ratio_mode: RatioMode,
    pub seed: u64,
    /// Not read by the critic-free objective.
    pub value_loss_coef: f64,
    /// Not read by the critic-free objective.
    pub gae_lambda: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            kl_beta: 0.04,
            clip_epsilon: 0.2,
            advantage_epsilon: 1e-8,
            inner_epochs: 1,
            steps: 60,
            prompts_per_step: 4,
            eval_every: 10,
            optim: OptimConfig { learning_rate: 0.02, ..OptimConfig::default() },
            decode: DecodeConfig::default(),
            reward: RewardConfig::default(),
            ratio_mode: RatioMode::Full,
            seed: 42,
            value_loss_coef: 0.1,
            gae_lambda: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("invalid GRPO config: {0}")]
    InvalidConfig(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl GrpoConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: String| Err(GrpoError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size {} must be at least 2", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon {} is outside (0, 1)", self.clip_epsilon));
        }
        if !(self.kl_beta >= 0.0) || !(self.advantage_epsilon >= 0.0) {
            return bad("kl_beta and advantage_epsilon must be non-negative".into());
        }
        if self.inner_epochs == 0 || self.prompts_per_step == 0 || self.eval_every == 0 {
            return bad("inner_epochs, prompts_per_step and eval_every must be positive".into());
        }
        if !self.optim.is_valid() || !self.reward.weights.is_valid() || !(self.reward.length.sigma > 0.0) {
            return bad("invalid optimizer or reward settings".into());
        }
        self.decode.validate()?;
        Ok(())
    }
}

/// One sampled completion with its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub trajectory: Trajectory,
    pub text: String,
    pub reward: RewardBreakdown,
    /// Old-policy log-probabilities under the truncated distribution, only
    /// filled in [`RatioMode::Truncated`].
    pub old_truncated: Vec<f64>,
}

/// One prompt's group of completions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub prompt: EncodedPrompt,
    pub completions: Vec<Completion>,
    pub baseline: f64,
    pub advantages: Vec<f64>,
}

/// Log-probability of `token` under the temperature-scaled nucleus
/// distribution of `scores`, plus the gradient of that log-probability with
/// respect to the scores. `None` when the token is outside the nucleus.
fn truncated_logprob(scores: &[f64], token: usize, decode: &DecodeConfig) -> Option<(f64, Vec<f64>)> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / decode.temperature).collect();
    let log_q = log_softmax(&scaled);
    let q: Vec<f64> = log_q.iter().map(|l| libm::exp(*l)).collect();
    let support = nucleus(&q, decode.top_p);
    if !support.contains(&token) {
        return None;
    }
    let mass: f64 = support.iter().map(|&i| q[i]).sum();
    let mut grad = vec![0.0; scores.len()];
    for &i in &support {
        grad[i] -= q[i] / mass / decode.temperature;
    }
    grad[token] += 1.0 / decode.temperature;
    Some((log_q[token] - libm::log(mass), grad))
}

/// Samples and scores one group from `old`.
pub fn sample_group(
    old: &FrozenPolicy,
    item: &PromptItem<'_>,
    config: &GrpoConfig,
    stream: &[u64],
) -> Result<GroupBatch, GrpoError> {
    let mut completions = Vec::with_capacity(config.group_size);
    for k in 0..config.group_size {
        let mut path = stream.to_vec();
        path.push(k as u64);
        let mut rng = derive_rng(config.seed, &path);
        let trajectory = old.sample(&item.prompt, &config.decode, &mut rng)?;
        let text = old.vocab().render(&trajectory.tokens);
        let reward = reward_total(&text, item.record, &config.reward);
        let mut old_truncated = Vec::new();
        if config.ratio_mode == RatioMode::Truncated {
            old.for_each_state(&item.prompt, &trajectory.tokens, |s| {
                // Log-probabilities are shifted scores, which the softmax ignores.
                let lp = truncated_logprob(s.log_probs, s.token.index(), &config.decode)
                    .map_or(f64::NEG_INFINITY, |(lp, _)| lp);
                old_truncated.push(lp);
            })?;
        }
        completions.push(Completion { trajectory, text, reward, old_truncated });
    }
    let rewards: Vec<f64> = completions.iter().map(|c| c.reward.total).collect();
    let baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let advantages = compute_advantages(&rewards, config.advantage_epsilon)?;
    Ok(GroupBatch { prompt: item.prompt.clone(), completions, baseline, advantages })
}

/// Objective value, loss gradient and diagnostics on frozen sampled data.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    /// `J(θ)`; the loss is its negation.
    pub objective: f64,
    /// Gradient of the loss `−J(θ)`.
    pub grad: Vec<f64>,
    /// Mean per-token KL to the reference policy.
    pub kl: f64,
    /// Share of tokens whose clipped branch is active.
    pub clip_frac: f64,
    pub tokens: usize,
}

impl SurrogateEval {
    pub fn loss(&self) -> f64 {
        -self.objective
    }
}

/// Token ratio and whether the clipped branch of `min(r·A, clip(r)·A)` is active.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    let active = (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps);
    (unclipped.min(clipped), active)
}

pub fn surrogate(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    batches: &[GroupBatch],
    config: &GrpoConfig,
) -> Result<SurrogateEval, GrpoError> {
    let mut grad = vec![0.0; policy.params().len()];
    let mut objective = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    let n_completions: usize = batches.iter().map(|b| b.completions.len()).sum();
    if n_completions == 0 {
        return Ok(SurrogateEval { objective, grad, kl: 0.0, clip_frac: 0.0, tokens });
    }
    // Loss gradient weight per unit of objective.
    let w = -1.0 / n_completions as f64;
    let eps = config.clip_epsilon;
    for batch in batches {
        for (c, &adv) in batch.completions.iter().zip(&batch.advantages) {
            let traj = &c.trajectory;
            policy.for_each_state(&batch.prompt, &traj.tokens, |s| {
                if s.position < traj.forced {
                    return;
                }
                let a = s.token.index();
                let log_ref = reference.next_log_distribution(&batch.prompt, &traj.tokens[..s.position]);
                let (ratio, ratio_grad) = match config.ratio_mode {
                    RatioMode::Full => {
                        (libm::exp(s.log_probs[a] - traj.logprobs[s.position]), None)
                    }
                    RatioMode::Truncated => {
                        let old = c.old_truncated[s.position];
                        match truncated_logprob(s.log_probs, a, &config.decode) {
                            Some((lp, g)) => (libm::exp(lp - old), Some(g)),
                            None => (0.0, Some(vec![0.0; s.log_probs.len()])),
                        }
                    }
                };
                let (term, active) = clipped_term(ratio, adv, eps);
                objective += term;
                tokens += 1;
                if active {
                    clipped += 1;
                } else if adv != 0.0 {
                    match &ratio_grad {
                        None => policy.accumulate_logprob_grad(&s, w * adv * ratio, &mut grad),
                        Some(g) => {
                            let sg: Vec<f64> = g.iter().map(|x| w * adv * ratio * x).collect();
                            policy.accumulate_score_grad(s.features, &sg, &mut grad);
                        }
                    }
                }
                let (kl, kl_grad) = kl_grad_logits(s.log_probs, &log_ref);
                objective -= config.kl_beta * kl;
                kl_sum += kl;
                if config.kl_beta != 0.0 {
                    let sg: Vec<f64> = kl_grad.iter().map(|x| -w * config.kl_beta * x).collect();
                    policy.accumulate_score_grad(s.features, &sg, &mut grad);
                }
            })?;
        }
    }
    Ok(SurrogateEval {
        objective: objective / n_completions as f64,
        grad,
        kl: if tokens == 0 { 0.0 } else { kl_sum / tokens as f64 },
        clip_frac: if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 },
        tokens,
    })
}

/// Output of one sampling round.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub batches: Vec<GroupBatch>,
    /// Surrogate evaluated before the first update of the round.
    pub eval: SurrogateEval,
    pub record: StepRecord,
}

/// Samples groups for `items` from `old` and evaluates the surrogate for
/// `policy`. Does not update parameters.
pub fn grpo_step(
    policy: &ToyPolicy,
    old: &FrozenPolicy,
    reference: &FrozenPolicy,
    items: &[PromptItem<'_>],
    config: &GrpoConfig,
    step: u64,
) -> Result<StepOutput, GrpoError> {
    let batches = items
        .iter()
        .enumerate()
        .map(|(j, item)| sample_group(old, item, config, &[stage::GRPO_SAMPLE, step, j as u64]))
        .collect::<Result<Vec<_>, _>>()?;
    let eval = surrogate(policy, reference, &batches, config)?;
    let record = step_record(step, &batches, &eval, policy);
    Ok(StepOutput { batches, eval, record })
}

fn step_record(step: u64, batches: &[GroupBatch], eval: &SurrogateEval, policy: &ToyPolicy) -> StepRecord {
    let completions: Vec<&Completion> = batches.iter().flat_map(|b| &b.completions).collect();
    let n = completions.len().max(1) as f64;
    let eos = policy.vocab().eos();
    let mean = |f: &dyn Fn(&Completion) -> f64| completions.iter().map(|c| f(c)).sum::<f64>() / n;
    StepRecord {
        step,
        mean_reward: mean(&|c| c.reward.total),
        mean_len: mean(&|c| c.trajectory.tokens.iter().filter(|t| **t != eos).count() as f64),
        mean_think_len: mean(&|c| think_length(policy.vocab(), &c.trajectory.tokens) as f64),
        loss: eval.loss(),
        kl: eval.kl,
        clip_frac: eval.clip_frac,
    }
}

/// Mean total reward of one sampled completion per dev record.
pub fn dev_reward(policy: &ToyPolicy, dev: &[PromptItem<'_>], config: &GrpoConfig) -> Result<f64, GrpoError> {
    if dev.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, item) in dev.iter().enumerate() {
        let mut rng = derive_rng(config.seed, &[stage::DEV_EVAL, i as u64]);
        let traj = policy.sample(&item.prompt, &config.decode, &mut rng)?;
        total += reward_total(&policy.vocab().render(&traj.tokens), item.record, &config.reward).total;
    }
    Ok(total / dev.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevRecord {
    pub step: u64,
    pub dev_reward: f64,
}

/// Resumable GRPO state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoTrainer {
    pub config: GrpoConfig,
    pub policy: ToyPolicy,
    pub reference: FrozenPolicy,
    optimizer: AdamW,
    schedule: CosineSchedule,
    pub steps_done: u64,
    pub best: FrozenPolicy,
    pub best_step: u64,
    pub best_dev_reward: f64,
    pub telemetry: Vec<StepRecord>,
    pub dev_history: Vec<DevRecord>,
}

impl GrpoTrainer {
    /// The reference policy is frozen from `initial`.
    pub fn new(initial: ToyPolicy, config: GrpoConfig, dev: &[PromptItem<'_>]) -> Result<Self, GrpoError> {
        config.validate()?;
        let updates = (config.steps * config.inner_epochs) as u64;
        let schedule = CosineSchedule::new(config.optim.learning_rate, config.optim.warmup_ratio, updates);
        let dev0 = dev_reward(&initial, dev, &config)?;
        Ok(Self {
            optimizer: AdamW::new(initial.params().len(), &config.optim),
            schedule,
            reference: initial.snapshot(),
            best: initial.snapshot(),
            best_step: 0,
            best_dev_reward: dev0,
            steps_done: 0,
            telemetry: Vec::new(),
            dev_history: vec![DevRecord { step: 0, dev_reward: dev0 }],
            config,
            policy: initial,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.steps_done >= self.config.steps as u64
    }

    /// Training prompts for `step` (one-based): consecutive slices of a
    /// per-epoch seeded permutation of the training set.
    pub fn batch_indices(&self, step: u64, n_train: usize) -> Vec<usize> {
        let per = self.config.prompts_per_step;
        let mut out = Vec::with_capacity(per);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for j in 0..per {
            let global = (step - 1) * per as u64 + j as u64;
            let epoch = global / n_train as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n_train).collect();
                perm.shuffle(&mut derive_rng(self.config.seed, &[stage::GRPO_BATCH, epoch]));
                cached = Some((epoch, perm));
            }
            let perm = &cached.as_ref().expect("filled above").1;
            out.push(perm[(global % n_train as u64) as usize]);
        }
        out
    }

    /// Runs one sampling round and its inner optimization epochs. The
    /// returned surrogate is the one evaluated before the first update,
    /// with its gradient dropped.
    pub fn step(&mut self, train: &[PromptItem<'_>], dev: &[PromptItem<'_>]) -> Result<StepOutput, GrpoError> {
        if train.is_empty() {
            return Err(GrpoError::EmptySplit("train"));
        }
        let step = self.steps_done + 1;
        let items: Vec<PromptItem<'_>> =
            self.batch_indices(step, train.len()).into_iter().map(|i| train[i].clone()).collect();
        let old = self.policy.snapshot();
        let mut out = grpo_step(&self.policy, &old, &self.reference, &items, &self.config, step)?;
        let mut grad = core::mem::take(&mut out.eval.grad);
        for epoch in 0..self.config.inner_epochs {
            if epoch > 0 {
                grad = surrogate(&self.policy, &self.reference, &out.batches, &self.config)?.grad;
            }
            clip_grad_norm(&mut grad, self.config.optim.grad_clip);
            let lr = self.schedule.lr(self.optimizer.steps_taken());
            self.optimizer.step(self.policy.params_mut(), &grad, lr);
        }
        self.steps_done = step;
        if step.is_multiple_of(self.config.eval_every as u64) || self.is_finished() {
            let r = dev_reward(&self.policy, dev, &self.config)?;
            self.dev_history.push(DevRecord { step, dev_reward: r });
            if r > self.best_dev_reward {
                self.best_dev_reward = r;
                self.best_step = step;
                self.best = self.policy.snapshot();
            }
        }
        self.telemetry.push(out.record);
        Ok(out)
    }

    pub fn finish(self) -> GrpoOutcome {
        GrpoOutcome {
            policy: self.best.thaw(),
            best_step: self.best_step,
            best_dev_reward: self.best_dev_reward,
            telemetry: self.telemetry,
            dev_history: self.dev_history,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoOutcome {
    /// Checkpoint with the highest dev reward, the initial policy included.
    pub policy: ToyPolicy,
    pub best_step: u64,
    pub best_dev_reward: f64,
    pub telemetry: Vec<StepRecord>,
    pub dev_history: Vec<DevRecord>,
}

pub fn run_grpo(
    initial: ToyPolicy,
    train: &[PromptItem<'_>],
    dev: &[PromptItem<'_>],
    config: &GrpoConfig,
) -> Result<GrpoOutcome, GrpoError> {
    if train.is_empty() {
        return Err(GrpoError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(GrpoError::EmptySplit("dev"));
    }
    let mut trainer = GrpoTrainer::new(initial, config.clone(), dev)?;
    while !trainer.is_finished() {
        trainer.step(train, dev)?;
    }
    Ok(trainer.finish())
}
