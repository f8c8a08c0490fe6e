//! Run configuration: defaults, a JSON or `key = value` file, `RUN_SEED`
//! and `--set dotted.key=value` overrides, applied in that order and
//! checked against the key schema.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thinkguard_core::corpus::{PromptContext, SynthConfig, KNOWN_TEMPLATES, TEMPLATE_INSTRUCT_V1};
use thinkguard_core::policy::DecodeConfig;
use thinkguard_core::rewards::RewardConfig;
use thinkguard_core::trainer::eval::EvalConfig;
use thinkguard_core::trainer::grpo::{GrpoConfig, RatioMode};
use thinkguard_core::trainer::optim::OptimConfig;
use thinkguard_core::trainer::sft::{SftConfig, SftVariant};

use crate::modelsvc::ServiceClientConfig;

/// Documented key schema shipped with the crate.
pub const CONFIG_SCHEMA: &str = include_str!("../resources/config_schema.json");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("bad override `{0}`: expected dotted.key=value")]
    BadOverride(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("RUN_SEED `{0}` is not an unsigned integer")]
    BadEnvSeed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthSection,
    pub prompt: PromptSection,
    pub reward: RewardConfig,
    pub decode: DecodeSection,
    pub sft: SftSection,
    pub grpo: GrpoSection,
    pub eval: EvalSection,
    pub modelsvc: ServiceClientConfig,
    pub plot: PlotSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            synth: SynthSection::default(),
            prompt: PromptSection::default(),
            reward: RewardConfig::default(),
            decode: DecodeSection::default(),
            sft: SftSection::default(),
            grpo: GrpoSection::default(),
            eval: EvalSection::default(),
            modelsvc: ServiceClientConfig::default(),
            plot: PlotSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub trigger_tokens: Vec<String>,
    pub hateful_ratio: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            vocab_size: s.vocab_size,
            n_train: s.n_train,
            n_dev: s.n_dev,
            n_test: s.n_test,
            trigger_tokens: s.trigger_tokens,
            hateful_ratio: s.hateful_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Replaces the bundled guidelines when set.
    pub guidelines_file: Option<PathBuf>,
    pub include_fine_grained: bool,
    pub template_id: String,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self { guidelines_file: None, include_fine_grained: true, template_id: TEMPLATE_INSTRUCT_V1.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self { temperature: d.temperature, top_p: d.top_p, max_tokens: d.max_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub mask_think_tokens: bool,
    pub variant: SftVariant,
}

impl Default for SftSection {
    fn default() -> Self {
        let s = SftConfig::default();
        Self {
            epochs: s.epochs,
            batch_size: s.batch_size,
            optim: s.optim,
            mask_think_tokens: s.mask_think_tokens,
            variant: s.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoSection {
    pub group_size: usize,
    pub kl_beta: f64,
    pub clip_epsilon: f64,
    pub advantage_epsilon: f64,
    pub inner_epochs: usize,
    pub steps: usize,
    pub prompts_per_step: usize,
    pub eval_every: usize,
    pub optim: OptimConfig,
    pub ratio_mode: RatioMode,
    pub value_loss_coef: f64,
    pub gae_lambda: f64,
}

impl Default for GrpoSection {
    fn default() -> Self {
        let g = GrpoConfig::default();
        Self {
            group_size: g.group_size,
            kl_beta: g.kl_beta,
            clip_epsilon: g.clip_epsilon,
            advantage_epsilon: g.advantage_epsilon,
            inner_epochs: g.inner_epochs,
            steps: g.steps,
            prompts_per_step: g.prompts_per_step,
            eval_every: g.eval_every,
            optim: g.optim,
            ratio_mode: g.ratio_mode,
            value_loss_coef: g.value_loss_coef,
            gae_lambda: g.gae_lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub best_of: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { best_of: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    /// Moving-average window; `null` picks run_length / 10, at least 5.
    pub window: Option<usize>,
}

/// Flat spellings accepted for nested reward keys in `key = value` files and overrides.
pub const KEY_ALIASES: [(&str, &str); 6] = [
    ("reward.alpha_fmt", "reward.weights.alpha_fmt"),
    ("reward.alpha_lbl", "reward.weights.alpha_lbl"),
    ("reward.alpha_len", "reward.weights.alpha_len"),
    ("reward.alpha_met", "reward.weights.alpha_met"),
    ("reward.target_words", "reward.length.target_words"),
    ("reward.sigma", "reward.length.sigma"),
];

fn resolve_alias(key: &str) -> &str {
    KEY_ALIASES.iter().find(|(alias, _)| *alias == key).map_or(key, |(_, full)| full)
}

impl RunConfig {
    /// Builds the configuration from its layered sources.
    pub fn load(file: Option<&Path>, env_seed: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        let mut merged = defaults.clone();
        if let Some(path) = file {
            let p = path.display().to_string();
            let text = fs::read_to_string(path).map_err(|err| ConfigError::Io { path: p.clone(), err })?;
            if text.trim_start().starts_with('{') {
                let v: Value =
                    serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: p, msg: e.to_string() })?;
                merge(&mut merged, v);
            } else {
                for (n, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                        path: p.clone(),
                        msg: format!("line {}: expected key = value", n + 1),
                    })?;
                    set_dotted(&mut merged, resolve_alias(key.trim()), value.trim())?;
                }
            }
        }
        if let Some(s) = env_seed {
            let seed: u64 = s.trim().parse().map_err(|_| ConfigError::BadEnvSeed(s.to_string()))?;
            merged["seed"] = Value::from(seed);
        }
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            set_dotted(&mut merged, resolve_alias(key.trim()), value.trim())?;
        }
        check_keys(&defaults, &merged, "")?;
        let config: RunConfig = serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.synth_config().validate().map_err(|e| invalid(&e))?;
        self.sft_config().validate().map_err(|e| invalid(&e))?;
        self.grpo_config().validate().map_err(|e| invalid(&e))?;
        if !KNOWN_TEMPLATES.contains(&self.prompt.template_id.as_str()) {
            return Err(ConfigError::Invalid(format!("unknown prompt template `{}`", self.prompt.template_id)));
        }
        if self.eval.best_of == 0 {
            return Err(ConfigError::Invalid("eval.best_of must be at least 1".into()));
        }
        if self.plot.window == Some(0) {
            return Err(ConfigError::Invalid("plot.window must be positive".into()));
        }
        self.modelsvc.validate().map_err(|e| invalid(&e))
    }

    /// Canonical JSON used for hashing and manifests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            vocab_size: self.synth.vocab_size,
            n_train: self.synth.n_train,
            n_dev: self.synth.n_dev,
            n_test: self.synth.n_test,
            trigger_tokens: self.synth.trigger_tokens.clone(),
            hateful_ratio: self.synth.hateful_ratio,
            seed: self.seed,
        }
    }

    pub fn prompt_context(&self) -> Result<PromptContext, ConfigError> {
        let mut ctx = PromptContext {
            include_fine_grained: self.prompt.include_fine_grained,
            template_id: self.prompt.template_id.clone(),
            ..PromptContext::default()
        };
        if let Some(path) = &self.prompt.guidelines_file {
            ctx.guidelines = fs::read_to_string(path)
                .map_err(|err| ConfigError::Io { path: path.display().to_string(), err })?
                .trim()
                .to_string();
        }
        Ok(ctx)
    }

    /// Decoding settings for policies trained with `variant`.
    pub fn decode_config(&self, variant: SftVariant) -> DecodeConfig {
        DecodeConfig {
            temperature: self.decode.temperature,
            top_p: self.decode.top_p,
            max_tokens: self.decode.max_tokens,
            seed: self.seed,
            forced_prefix: variant.decode_prefix(),
        }
    }

    pub fn sft_config(&self) -> SftConfig {
        SftConfig {
            epochs: self.sft.epochs,
            batch_size: self.sft.batch_size,
            optim: self.sft.optim,
            mask_think_tokens: self.sft.mask_think_tokens,
            variant: self.sft.variant,
            seed: self.seed,
        }
    }

    pub fn grpo_config(&self) -> GrpoConfig {
        self.grpo_config_for(self.sft.variant)
    }

    pub fn grpo_config_for(&self, variant: SftVariant) -> GrpoConfig {
        let g = &self.grpo;
        GrpoConfig {
            group_size: g.group_size,
            kl_beta: g.kl_beta,
            clip_epsilon: g.clip_epsilon,
            advantage_epsilon: g.advantage_epsilon,
            inner_epochs: g.inner_epochs,
            steps: g.steps,
            prompts_per_step: g.prompts_per_step,
            eval_every: g.eval_every,
            optim: g.optim,
            decode: self.decode_config(variant),
            reward: self.reward,
            ratio_mode: g.ratio_mode,
            seed: self.seed,
            value_loss_coef: g.value_loss_coef,
            gae_lambda: g.gae_lambda,
        }
    }

    pub fn eval_config(&self, variant: SftVariant, best_of: Option<usize>) -> EvalConfig {
        EvalConfig {
            decode: self.decode_config(variant),
            best_of: best_of.unwrap_or(self.eval.best_of),
            reward: self.reward,
            seed: self.seed,
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c` to `raw`, read as JSON when it parses and as a string otherwise.
fn set_dotted(root: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::BadOverride(format!("{key}={raw}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("key has at least one part")
}

fn check_keys(schema: &Value, value: &Value, prefix: &str) -> Result<(), ConfigError> {
    if let (Value::Object(s), Value::Object(v)) = (schema, value) {
        for (k, child) in v {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match s.get(k) {
                None => return Err(ConfigError::UnknownKey(path)),
                Some(sub) => check_keys(sub, child, &path)?,
            }
        }
    }
    Ok(())
}

/// Dotted paths of every leaf key in `value`.
pub fn leaf_keys(value: &Value) -> Vec<String> {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(child, &path, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    walk(value, "", &mut out);
    out.sort();
    out
}
