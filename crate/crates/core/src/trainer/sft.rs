//! Supervised warm-up: masked negative log-likelihood of structured targets.
//!
//! The no-CoT variants place an empty think block in front of the target and
//! leave those two tag tokens out of the loss; at decode time they are fed as
//! a forced prefix. The distilled-CoT variant trains on the full think block.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, AdamW, CosineSchedule, OptimConfig};
use super::PromptItem;
use crate::corpus::{Label, MemeRecord};
use crate::policy::{EncodedPrompt, FrozenPolicy, PolicyError, TokenId, ToyPolicy, Vocabulary};
use crate::rng::{derive_rng, stage};
use crate::structured::{serialize, StructuredOutput, THINK_CLOSE, THINK_OPEN};

/// Which supervision fields enter the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftVariant {
    /// Label and explanation, empty think block.
    ClsExpNoCot,
    /// Label, explanation with fine-grained labels, empty think block.
    ClsFgExpNoCot,
    /// As above with the distilled reasoning trace inside the think block.
    ClsFgExpCotd,
}

impl SftVariant {
    pub const ALL: [SftVariant; 3] =
        [SftVariant::ClsExpNoCot, SftVariant::ClsFgExpNoCot, SftVariant::ClsFgExpCotd];

    pub fn as_str(self) -> &'static str {
        match self {
            SftVariant::ClsExpNoCot => "cls_exp_no_cot",
            SftVariant::ClsFgExpNoCot => "cls_fg_exp_no_cot",
            SftVariant::ClsFgExpCotd => "cls_fg_exp_cotd",
        }
    }

    pub fn uses_cot(self) -> bool {
        self == SftVariant::ClsFgExpCotd
    }

    pub fn uses_fine_grained(self) -> bool {
        self != SftVariant::ClsExpNoCot
    }

    /// Tokens fed before sampling for policies trained with this variant.
    pub fn decode_prefix(self) -> Vec<String> {
        if self.uses_cot() {
            Vec::new()
        } else {
            vec![THINK_OPEN.into(), THINK_CLOSE.into()]
        }
    }
}

impl fmt::Display for SftVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SftVariant {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        SftVariant::ALL.into_iter().find(|v| v.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SftError {
    #[error("record {0} has no distilled reasoning trace")]
    MissingCotTrace(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid SFT config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub mask_think_tokens: bool,
    pub variant: SftVariant,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 4,
            optim: OptimConfig::default(),
            mask_think_tokens: true,
            variant: SftVariant::ClsFgExpNoCot,
            seed: 42,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), SftError> {
        if self.batch_size == 0 {
            return Err(SftError::InvalidConfig("batch_size must be positive".into()));
        }
        if !self.optim.is_valid() {
            return Err(SftError::InvalidConfig(format!("bad optimizer settings {:?}", self.optim)));
        }
        Ok(())
    }
}

/// Target output a record supervises under `variant`.
pub fn target_output(record: &MemeRecord, variant: SftVariant) -> Result<StructuredOutput, SftError> {
    let think = if variant.uses_cot() {
        record
            .cot_trace
            .as_deref()
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| SftError::MissingCotTrace(record.id.clone()))?
    } else {
        ""
    };
    let mut explanation = String::from(record.gold_explanation.trim());
    if variant.uses_fine_grained() && record.label == Label::Hateful {
        if !record.protected_categories.is_empty() {
            explanation.push_str(" protected");
            for c in &record.protected_categories {
                explanation.push(' ');
                explanation.push_str(c.as_str());
            }
        }
        if !record.attack_types.is_empty() {
            explanation.push_str(" attack");
            for a in &record.attack_types {
                explanation.push(' ');
                explanation.push_str(a.as_str());
            }
        }
    }
    Ok(StructuredOutput::new(think, record.label, explanation))
}

/// Tokenized target with its loss mask (`true` = contributes to the loss).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftTarget {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<bool>,
}

pub fn build_sft_target(
    record: &MemeRecord,
    variant: SftVariant,
    vocab: &Vocabulary,
    mask_think_tokens: bool,
) -> Result<SftTarget, SftError> {
    let out = target_output(record, variant)?;
    let mut tokens = vocab.encode(&serialize(&out))?;
    tokens.push(vocab.eos());
    let mut mask = vec![true; tokens.len()];
    if !variant.uses_cot() && mask_think_tokens {
        // The empty think block is exactly the first two tokens.
        mask[0] = false;
        mask[1] = false;
    }
    Ok(SftTarget { tokens, mask })
}

#[derive(Debug, Clone)]
pub struct SftExample {
    pub prompt: EncodedPrompt,
    pub target: SftTarget,
}

pub fn sft_examples(
    policy: &ToyPolicy,
    items: &[PromptItem<'_>],
    config: &SftConfig,
) -> Result<Vec<SftExample>, SftError> {
    items
        .iter()
        .map(|item| {
            Ok(SftExample {
                prompt: item.prompt.clone(),
                target: build_sft_target(item.record, config.variant, policy.vocab(), config.mask_think_tokens)?,
            })
        })
        .collect()
}

/// Mean over the batch of the masked per-sequence NLL.
pub fn sft_loss(policy: &ToyPolicy, batch: &[SftExample]) -> Result<f64, SftError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in batch {
        let lp = policy.logprob(&ex.prompt, &ex.target.tokens)?;
        total -= lp.iter().zip(&ex.target.mask).filter(|(_, m)| **m).map(|(l, _)| l).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Loss and its gradient with respect to the policy parameters.
pub fn sft_loss_and_grad(policy: &ToyPolicy, batch: &[SftExample]) -> Result<(f64, Vec<f64>), SftError> {
    let mut grad = vec![0.0; policy.params().len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        policy.for_each_state(&ex.prompt, &ex.target.tokens, |s| {
            if ex.target.mask[s.position] {
                loss -= s.log_probs[s.token.index()];
                policy.accumulate_logprob_grad(&s, -scale, &mut grad);
            }
        })?;
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftEpochRecord {
    pub epoch: usize,
    /// Mean training-batch loss over the epoch; `None` for the initial record.
    pub train_loss: Option<f64>,
    pub dev_loss: f64,
}

/// Resumable SFT state; one call to [`SftTrainer::run_epoch`] per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTrainer {
    pub config: SftConfig,
    pub policy: ToyPolicy,
    optimizer: AdamW,
    schedule: CosineSchedule,
    pub epochs_done: usize,
    pub best: FrozenPolicy,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub history: Vec<SftEpochRecord>,
}

impl SftTrainer {
    pub fn new(
        policy: ToyPolicy,
        config: SftConfig,
        n_train: usize,
        dev: &[SftExample],
    ) -> Result<Self, SftError> {
        config.validate()?;
        let steps_per_epoch = n_train.div_ceil(config.batch_size);
        let schedule = CosineSchedule::new(
            config.optim.learning_rate,
            config.optim.warmup_ratio,
            (steps_per_epoch * config.epochs) as u64,
        );
        let dev_loss = sft_loss(&policy, dev)?;
        Ok(Self {
            optimizer: AdamW::new(policy.params().len(), &config.optim),
            schedule,
            epochs_done: 0,
            best: policy.snapshot(),
            best_epoch: 0,
            best_dev_loss: dev_loss,
            history: vec![SftEpochRecord { epoch: 0, train_loss: None, dev_loss }],
            config,
            policy,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    pub fn run_epoch(&mut self, train: &[SftExample], dev: &[SftExample]) -> Result<SftEpochRecord, SftError> {
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derive_rng(self.config.seed, &[stage::SFT_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<SftExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, mut grad) = sft_loss_and_grad(&self.policy, &batch)?;
            clip_grad_norm(&mut grad, self.config.optim.grad_clip);
            let lr = self.schedule.lr(self.optimizer.steps_taken());
            self.optimizer.step(self.policy.params_mut(), &grad, lr);
            loss_sum += loss;
            batches += 1;
        }
        let dev_loss = sft_loss(&self.policy, dev)?;
        if dev_loss < self.best_dev_loss {
            self.best_dev_loss = dev_loss;
            self.best_epoch = epoch;
            self.best = self.policy.snapshot();
        }
        let record = SftEpochRecord {
            epoch,
            train_loss: Some(if batches == 0 { 0.0 } else { loss_sum / batches as f64 }),
            dev_loss,
        };
        self.history.push(record);
        self.epochs_done = epoch;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftOutcome {
    /// Checkpoint with the lowest dev loss (the initial policy included).
    pub policy: ToyPolicy,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub history: Vec<SftEpochRecord>,
}

pub fn run_sft(
    policy: ToyPolicy,
    train: &[PromptItem<'_>],
    dev: &[PromptItem<'_>],
    config: &SftConfig,
) -> Result<SftOutcome, SftError> {
    if train.is_empty() {
        return Err(SftError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(SftError::EmptySplit("dev"));
    }
    let train_ex = sft_examples(&policy, train, config)?;
    let dev_ex = sft_examples(&policy, dev, config)?;
    let mut trainer = SftTrainer::new(policy, config.clone(), train_ex.len(), &dev_ex)?;
    while !trainer.is_finished() {
        trainer.run_epoch(&train_ex, &dev_ex)?;
    }
    Ok(trainer.finish())
}

impl SftTrainer {
    pub fn finish(self) -> SftOutcome {
        SftOutcome {
            policy: self.best.thaw(),
            best_epoch: self.best_epoch,
            best_dev_loss: self.best_dev_loss,
            history: self.history,
        }
    }
}
