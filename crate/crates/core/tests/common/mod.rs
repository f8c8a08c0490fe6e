#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use thinkguard_core::corpus::{Label, MemeRecord, Split};
use thinkguard_core::policy::{TokenId, ToyPolicy, Vocabulary, STRUCTURAL_TOKENS};

pub const WORDS: [&str; 5] = ["zorp", "blick", "cat", "dog", "sun"];
pub const TRIGGERS: [&str; 2] = ["zorp", "blick"];

pub fn small_policy() -> ToyPolicy {
    let tokens = STRUCTURAL_TOKENS.iter().chain(WORDS.iter()).map(|s| s.to_string()).collect();
    ToyPolicy::new(Vocabulary::new(tokens).unwrap(), TRIGGERS.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn randomized(policy: &ToyPolicy, scale: f64, rng: &mut impl Rng) -> ToyPolicy {
    let mut p = policy.clone();
    let params = p.params().iter().map(|_| rng.gen_range(-scale..scale)).collect();
    p.set_params(params).unwrap();
    p
}

pub fn perturbed(policy: &ToyPolicy, scale: f64, rng: &mut impl Rng) -> ToyPolicy {
    let mut p = policy.clone();
    for x in p.params_mut() {
        *x += rng.gen_range(-scale..scale);
    }
    p
}

pub fn random_prompt(rng: &mut impl Rng) -> String {
    (0..rng.gen_range(1..6)).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn random_tokens(policy: &ToyPolicy, len: usize, rng: &mut impl Rng) -> Vec<TokenId> {
    (0..len).map(|_| TokenId(rng.gen_range(0..policy.vocab().len()) as u16)).collect()
}

pub fn record(label: Label, ocr: &str) -> MemeRecord {
    MemeRecord {
        id: "r0".into(),
        image_ref: "img/r0.png".into(),
        ocr_text: ocr.into(),
        label,
        protected_categories: BTreeSet::new(),
        attack_types: BTreeSet::new(),
        gold_explanation: "the text names zorp".into(),
        cot_trace: None,
        split: Split::Train,
    }
}

/// Largest relative error between analytic and central-difference gradients.
pub fn max_rel_error(analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> f64 {
    let mut x = at.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
