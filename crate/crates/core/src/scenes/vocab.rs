//! Token vocabulary shared by the questioner, answerer, and guesser.
//!
//! Layout is fixed: seven control tokens first (so their indices are
//! compile-time constants), then the question-template words, then one name
//! per object category. Index = position, both directions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Padding sentinel; never predicted, excluded from losses.
pub const PAD: usize = 0;
/// Start-of-dialogue sentinel fed to the first generator step.
pub const START: usize = 1;
/// Emitted by the policy to end the whole dialogue.
pub const STOP: usize = 2;
/// Question terminator; triggers an answer.
pub const QMARK: usize = 3;
pub const YES: usize = 4;
pub const NO: usize = 5;
pub const NA: usize = 6;

const CONTROL: [&str; 7] = ["<pad>", "<start>", "<stop>", "<?>", "<yes>", "<no>", "<na>"];

/// Non-category words used by the question templates, in fixed order.
pub const TEMPLATE_WORDS: [&str; 13] = [
    "is", "it", "a", "in", "the", "left", "right", "top", "bottom", "half", "cell", "middle",
    "center",
];

/// Single-word category names; categories beyond the pool get synthetic
/// names.
const CATEGORY_POOL: [&str; 20] = [
    "chair", "dog", "car", "tree", "ball", "book", "cup", "fish", "hat", "key", "lamp", "map",
    "owl", "pen", "bed", "cat", "van", "box", "jar", "bug",
];

/// One of the three oracle answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Yes,
    No,
    Na,
}

impl Answer {
    pub fn token(self) -> usize {
        match self {
            Answer::Yes => YES,
            Answer::No => NO,
            Answer::Na => NA,
        }
    }

    pub fn from_token(token: usize) -> Option<Answer> {
        match token {
            YES => Some(Answer::Yes),
            NO => Some(Answer::No),
            NA => Some(Answer::Na),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::Na => "na",
        }
    }

    pub fn parse(s: &str) -> Result<Answer> {
        match s {
            "yes" => Ok(Answer::Yes),
            "no" => Ok(Answer::No),
            "na" => Ok(Answer::Na),
            other => Err(Error::Invalid(format!("unknown answer '{other}'"))),
        }
    }

    /// Index into a (yes, no, na) output layer.
    pub fn class_index(self) -> usize {
        match self {
            Answer::Yes => 0,
            Answer::No => 1,
            Answer::Na => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Answer {
        match i {
            0 => Answer::Yes,
            1 => Answer::No,
            _ => Answer::Na,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    n_categories: usize,
}

impl Vocabulary {
    /// Builds the vocabulary for a world with `n_categories` object kinds.
    pub fn for_categories(n_categories: usize) -> Vocabulary {
        let mut tokens: Vec<String> = CONTROL.iter().map(|s| s.to_string()).collect();
        tokens.extend(TEMPLATE_WORDS.iter().map(|s| s.to_string()));
        for c in 0..n_categories {
            tokens.push(category_name(c + 1));
        }
        Self::from_tokens(tokens, n_categories)
    }

    fn from_tokens(tokens: Vec<String>, n_categories: usize) -> Vocabulary {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index, n_categories }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(|s| s.as_str())
            .ok_or(Error::UnknownToken { token: id, vocab_size: self.tokens.len() })
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("token '{token}' is not in the vocabulary")))
    }

    /// Token id for category `c` (1-based as categories are everywhere).
    pub fn category_token(&self, category: usize) -> Result<usize> {
        if category == 0 || category > self.n_categories {
            return Err(Error::Invalid(format!(
                "category {category} out of range 1..={}",
                self.n_categories
            )));
        }
        Ok(CONTROL.len() + TEMPLATE_WORDS.len() + category - 1)
    }

    /// Inverse of [`Vocabulary::category_token`].
    pub fn token_category(&self, token: usize) -> Option<usize> {
        let base = CONTROL.len() + TEMPLATE_WORDS.len();
        (base..base + self.n_categories).contains(&token).then(|| token - base + 1)
    }

    pub fn is_control(&self, token: usize) -> bool {
        token < CONTROL.len()
    }

    /// Renders token ids as a space-joined string (transcripts, reports).
    pub fn render(&self, tokens: &[usize]) -> String {
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", self.token(t).unwrap_or("<bad>"));
        }
        out
    }

    /// One token per line; index = line number.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for t in &self.tokens {
            body.push_str(t);
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = body.lines().map(|l| l.to_string()).collect();
        if tokens.len() < CONTROL.len() + TEMPLATE_WORDS.len() {
            return Err(Error::Invalid(format!(
                "vocabulary file {} is too short ({} tokens)",
                path.display(),
                tokens.len()
            )));
        }
        for (i, want) in CONTROL.iter().chain(TEMPLATE_WORDS.iter()).enumerate() {
            if tokens[i] != *want {
                return Err(Error::Invalid(format!(
                    "vocabulary file {} token {i} is '{}', expected '{want}'",
                    path.display(),
                    tokens[i]
                )));
            }
        }
        let n_categories = tokens.len() - CONTROL.len() - TEMPLATE_WORDS.len();
        Ok(Self::from_tokens(tokens, n_categories))
    }
}

/// Display name for 1-based category ids.
pub fn category_name(category: usize) -> String {
    CATEGORY_POOL
        .get(category - 1)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("kind{category}"))
}
