//! Supervised warm-up, GRPO post-training, inference and telemetry.

pub mod advantages;
pub mod eval;
pub mod grpo;
pub mod infer;
pub mod optim;
pub mod sft;
pub mod telemetry;

use alloc::vec::Vec;

use crate::corpus::{build_prompt, MemeRecord, PromptContext, PromptError};
use crate::policy::{EncodedPrompt, ToyPolicy};

pub use advantages::compute_advantages;

/// A record paired with the policy features of its prompt.
#[derive(Debug, Clone)]
pub struct PromptItem<'a> {
    pub prompt: EncodedPrompt,
    pub record: &'a MemeRecord,
}

pub fn prompt_items<'a>(
    policy: &ToyPolicy,
    records: &'a [MemeRecord],
    ctx: &PromptContext,
) -> Result<Vec<PromptItem<'a>>, PromptError> {
    records
        .iter()
        .map(|record| {
            Ok(PromptItem { prompt: policy.encode_prompt(&build_prompt(record, ctx)?), record })
        })
        .collect()
}
