use std::fmt;
use std::sync::Arc;

/// A lowercased, non-empty, whitespace-free word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

/// Shared token sequence. Quadruples reuse the same sentences many times.
pub type Sentence = Arc<[Token]>;

impl Token {
    /// Wraps `s` if it already satisfies the token invariants.
    pub fn new(s: &str) -> Option<Token> {
        let ok = !s.is_empty() && !s.chars().any(char::is_whitespace) && s.to_lowercase() == s;
        ok.then(|| Token(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Lowercases, splits on Unicode whitespace, and strips leading and trailing
/// ASCII punctuation from each piece. Pieces that end up empty are dropped.
pub fn tokenize(raw: &str) -> Vec<Token> {
    raw.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
        .map(|w| Token(w.to_owned()))
        .collect()
}

/// Joins tokens with single spaces.
pub fn join(tokens: &[Token]) -> String {
    let parts: Vec<&str> = tokens.iter().map(Token::as_str).collect();
    parts.join(" ")
}
