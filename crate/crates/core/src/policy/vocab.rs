use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::structured::{EXPLANATION_MARKER, LABEL_MARKER, THINK_CLOSE, THINK_OPEN};

pub const EOS: &str = "<eos>";

/// Tokens every vocabulary must contain, in canonical order.
pub const STRUCTURAL_TOKENS: &[&str] = &[
    THINK_OPEN,
    THINK_CLOSE,
    LABEL_MARKER,
    EXPLANATION_MARKER,
    "hateful",
    "not_hateful",
    EOS,
];

const MAX_VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u16);

impl TokenId {
    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

/// Ordered, duplicate-free token list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u16>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = PolicyError;
    fn try_from(tokens: Vec<String>) -> Result<Self, PolicyError> {
        Vocabulary::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.len() > MAX_VOCAB {
            return Err(PolicyError::InvalidVocabulary(alloc::format!(
                "{} tokens exceed the limit of {MAX_VOCAB}",
                tokens.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(PolicyError::InvalidVocabulary(alloc::format!("bad token `{t}`")));
            }
            if index.insert(t.clone(), i as u16).is_some() {
                return Err(PolicyError::InvalidVocabulary(alloc::format!("duplicate token `{t}`")));
            }
        }
        for s in STRUCTURAL_TOKENS {
            if !index.contains_key(*s) {
                return Err(PolicyError::InvalidVocabulary(alloc::format!("missing `{s}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<TokenId, PolicyError> {
        self.index
            .get(token)
            .map(|&i| TokenId(i))
            .ok_or_else(|| PolicyError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn eos(&self) -> TokenId {
        TokenId(self.index[EOS])
    }

    /// Splits on whitespace, with the think delimiters also splitting glued text.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, PolicyError> {
        let spaced = text
            .replace(THINK_OPEN, " \u{0}o ")
            .replace(THINK_CLOSE, " \u{0}c ");
        spaced
            .split_whitespace()
            .map(|w| match w {
                "\u{0}o" => self.id(THINK_OPEN),
                "\u{0}c" => self.id(THINK_CLOSE),
                w => self.id(w),
            })
            .collect()
    }

    /// Joins tokens into text, reproducing the canonical output layout for
    /// well-formed sequences. End-of-sequence tokens are dropped.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev: Option<&str> = None;
        for &id in tokens {
            let tok = self.token(id);
            if tok == EOS {
                continue;
            }
            let sep = match prev {
                None => "",
                Some(THINK_OPEN) => "",
                Some(_) if tok == THINK_CLOSE => "",
                Some(THINK_CLOSE) => "\n",
                Some(_) if tok == LABEL_MARKER || tok == EXPLANATION_MARKER => "\n",
                Some(_) => " ",
            };
            out.push_str(sep);
            out.push_str(tok);
            prev = Some(tok);
        }
        out
    }
}
