use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tokenize::{join, tokenize, Sentence, Token};

/// Question category by leading wh-word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WhType {
    Who,
    When,
    Where,
    Other,
}

impl WhType {
    pub const ALL: [WhType; 4] = [WhType::Who, WhType::When, WhType::Where, WhType::Other];
    /// The three types whose answers fall in distinct categories
    /// (person, date/time, location).
    pub const ANALOGY: [WhType; 3] = [WhType::Who, WhType::When, WhType::Where];

    pub fn as_str(self) -> &'static str {
        match self {
            WhType::Who => "who",
            WhType::When => "when",
            WhType::Where => "where",
            WhType::Other => "other",
        }
    }
}

impl fmt::Display for WhType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WhType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "who" => Ok(WhType::Who),
            "when" => Ok(WhType::When),
            "where" => Ok(WhType::Where),
            "other" => Ok(WhType::Other),
            other => Err(Error::Config(format!("unknown question type {other:?}"))),
        }
    }
}

/// Types a question by its first token.
pub fn classify_question(tokens: &[Token]) -> WhType {
    match tokens.first().map(Token::as_str) {
        Some("who") => WhType::Who,
        Some("when") => WhType::When,
        Some("where") => WhType::Where,
        _ => WhType::Other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub text: Sentence,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: Sentence,
    pub wh_type: WhType,
    pub candidates: Vec<Candidate>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: Vec<Token>, candidates: Vec<Candidate>) -> Self {
        let wh_type = classify_question(&text);
        Question {
            id: id.into(),
            text: text.into(),
            wh_type,
            candidates,
        }
    }

    pub fn has_positive(&self) -> bool {
        self.candidates.iter().any(|c| c.label)
    }

    pub fn positives(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.label)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| !c.label)
    }

    pub fn labels(&self) -> Vec<bool> {
        self.candidates.iter().map(|c| c.label).collect()
    }
}

/// Questions with their ordered, labelled candidate answers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QADataset {
    questions: Vec<Question>,
}

impl QADataset {
    pub fn new(questions: Vec<Question>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, q) in questions.iter().enumerate() {
            if q.candidates.is_empty() {
                return Err(Error::Contract(format!("question {} has no candidates", q.id)));
            }
            if seen.insert(q.id.as_str(), i).is_some() {
                return Err(Error::Contract(format!("duplicate question id {}", q.id)));
            }
        }
        Ok(QADataset { questions })
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn candidate_count(&self) -> usize {
        self.questions.iter().map(|q| q.candidates.len()).sum()
    }

    pub fn of_type(&self, t: WhType) -> impl Iterator<Item = &Question> {
        self.questions.iter().filter(move |q| q.wh_type == t)
    }

    /// Number of questions per type that have at least one correct answer.
    pub fn answerable_counts(&self) -> HashMap<WhType, usize> {
        let mut counts = HashMap::new();
        for q in self.questions.iter().filter(|q| q.has_positive()) {
            *counts.entry(q.wh_type).or_insert(0) += 1;
        }
        counts
    }

    /// Every word used by any question or candidate.
    pub fn vocabulary(&self) -> std::collections::HashSet<String> {
        let mut vocab = std::collections::HashSet::new();
        for q in &self.questions {
            vocab.extend(q.text.iter().map(|t| t.as_str().to_owned()));
            for c in &q.candidates {
                vocab.extend(c.text.iter().map(|t| t.as_str().to_owned()));
            }
        }
        vocab
    }

    /// One `question_id, question, candidate, label` row per candidate.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for q in &self.questions {
            let qt = join(&q.text);
            for c in &q.candidates {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    q.id,
                    qt,
                    join(&c.text),
                    u8::from(c.label)
                ));
            }
        }
        out
    }
}

/// Reads `question_id<TAB>question<TAB>candidate<TAB>label` rows, grouping
/// candidates by question id in file order.
pub fn load_qa_dataset(path: &Path, has_header: bool) -> Result<QADataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qa_tsv(&text, path, has_header)
}

pub(crate) fn parse_qa_tsv(text: &str, path: &Path, has_header: bool) -> Result<QADataset> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<Token>, Vec<Candidate>)> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if has_header && idx == 0 {
            continue;
        }
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let label = match cols[3].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(path, lineno, format!("label must be 0 or 1, got {other:?}")))
            }
        };
        let id = cols[0].trim();
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty question id"));
        }
        let candidate = Candidate {
            text: tokenize(cols[2]).into(),
            label,
        };
        match groups.get_mut(id) {
            Some((_, cands)) => cands.push(candidate),
            None => {
                order.push(id.to_owned());
                groups.insert(id.to_owned(), (tokenize(cols[1]), vec![candidate]));
            }
        }
    }

    let questions = order
        .into_iter()
        .map(|id| {
            let (text, cands) = groups.remove(&id).expect("grouped above");
            Question::new(id, text, cands)
        })
        .collect();
    QADataset::new(questions)
}
