use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

use super::tokenize::Token;

/// Half-width of the uniform range OOV vectors are drawn from.
pub const OOV_RANGE: f32 = 0.1;

/// Frozen word vectors with a deterministic fallback for unknown words.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    oov_seed: u64,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            oov_seed,
        })
    }

    /// Adds `word`. Returns false (and keeps the old vector) if it is
    /// already present.
    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Config(format!(
                "vector for {word:?} has length {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(word) {
            return Ok(false);
        }
        self.index.insert(word.to_owned(), self.words.len());
        self.words.push(word.to_owned());
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn set_oov_seed(&mut self, seed: u64) {
        self.oov_seed = seed;
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Stored vector, or a pseudo-random vector in `[-0.1, 0.1]^dim` keyed
    /// by `(oov_seed, token)`.
    pub fn lookup(&self, token: &Token) -> Cow<'_, [f32]> {
        match self.get(token.as_str()) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(self.oov_vector(token.as_str())),
        }
    }

    fn oov_vector(&self, word: &str) -> Vec<f32> {
        let mut rng = seed::rng(self.oov_seed, word);
        (0..self.dim)
            .map(|_| rng.gen_range(-OOV_RANGE..=OOV_RANGE))
            .collect()
    }

    /// Serializes in the word-vector text format, with a `count dim` header.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Reads a word-vector text file. Words are lowercased to match the
/// tokenizer; when two entries collide the first one wins.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    read_vectors(path, expected_dim, None)
}

/// Like [`load_embeddings`] but keeps only words in `vocab`.
pub fn load_embeddings_for(
    path: &Path,
    expected_dim: Option<usize>,
    vocab: &HashSet<String>,
) -> Result<EmbeddingTable> {
    read_vectors(path, expected_dim, Some(vocab))
}

fn read_vectors(
    path: &Path,
    expected_dim: Option<usize>,
    vocab: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut table: Option<EmbeddingTable> = None;
    let mut header_dim: Option<usize> = None;
    let mut buf = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let word = fields.next().unwrap_or_default();
        let rest: Vec<&str> = fields.collect();

        if lineno == 1 && rest.len() == 1 {
            if let (Ok(_count), Ok(dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                if let Some(exp) = expected_dim.filter(|&e| e != dim) {
                    return Err(Error::Config(format!(
                        "{}: header declares dim {dim}, expected {exp}",
                        path.display()
                    )));
                }
                header_dim = Some(dim);
                continue;
            }
        }

        let dim = match &table {
            Some(t) => t.dim(),
            None => {
                let dim = rest.len();
                if let Some(h) = header_dim.filter(|&h| h != dim) {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("row has {dim} values, header declares {h}"),
                    ));
                }
                if let Some(exp) = expected_dim.filter(|&e| e != dim) {
                    return Err(Error::Config(format!(
                        "{}: vectors have dim {dim}, expected {exp}",
                        path.display()
                    )));
                }
                table = Some(EmbeddingTable::new(dim, 0).map_err(|_| {
                    Error::parse(path, lineno, "row has no vector values")
                })?);
                dim
            }
        };
        if rest.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("row has {} values, expected {dim}", rest.len()),
            ));
        }
        let word = word.to_lowercase();
        if vocab.is_some_and(|v| !v.contains(&word)) {
            continue;
        }
        buf.clear();
        for f in &rest {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value {f:?}")));
            }
            buf.push(v);
        }
        let t = table.as_mut().expect("initialized above");
        t.insert(&word, &buf)?;
    }

    match (table, header_dim.or(expected_dim)) {
        (Some(t), _) => Ok(t),
        (None, Some(dim)) => EmbeddingTable::new(dim, 0),
        (None, None) => Err(Error::Config(format!(
            "{}: no vectors and no dimension given",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    #[test]
    fn reads_headerless_file() {
        let f = write_tmp("a 1.0 0.0\nb 0.0 1.0\n");
        let t = load_embeddings(f.path(), None).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(&*t.lookup(&tok("a")), &[1.0, 0.0]);
    }

    #[test]
    fn reads_header_and_wide_rows() {
        let row = |w: &str| format!("{w}{}\n", " 0.5".repeat(300));
        let f = write_tmp(&format!("2 300\n{}{}", row("x"), row("y")));
        let t = load_embeddings(f.path(), Some(300)).unwrap();
        assert_eq!(t.dim(), 300);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn short_row_is_parse_error_with_line() {
        let f = write_tmp(&format!(
            "2 300\nx{}\ny{}\n",
            " 0.5".repeat(300),
            " 0.5".repeat(299)
        ));
        match load_embeddings(f.path(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dim_mismatch_is_config_error() {
        let f = write_tmp("a 1.0 0.0\n");
        assert!(matches!(load_embeddings(f.path(), Some(3)), Err(Error::Config(_))));
    }

    #[test]
    fn duplicates_keep_first_and_trailing_space_is_ok() {
        let f = write_tmp("The 1 2 \nthe 3 4\n");
        let t = load_embeddings(f.path(), None).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("the").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn vocab_filter_drops_other_words() {
        let f = write_tmp("a 1 0\nb 0 1\n");
        let vocab: HashSet<String> = ["b".to_string()].into();
        let t = load_embeddings_for(f.path(), None, &vocab).unwrap();
        assert!(!t.contains("a"));
        assert!(t.contains("b"));
    }

    #[test]
    fn oov_is_deterministic_and_bounded() {
        let t = EmbeddingTable::new(8, 11).unwrap();
        assert_eq!(t.lookup(&tok("zebra")), t.lookup(&tok("zebra")));
        assert_ne!(t.lookup(&tok("zebra")), t.lookup(&tok("zebras")));
        for i in 0..1000 {
            let v = t.lookup(&tok(&format!("oov{i}")));
            assert!(v.iter().all(|x| (-OOV_RANGE..=OOV_RANGE).contains(x)));
        }
        let mut other = t.clone();
        other.set_oov_seed(12);
        assert_ne!(t.lookup(&tok("zebra")), other.lookup(&tok("zebra")));
    }

    #[test]
    fn text_round_trip() {
        let mut t = EmbeddingTable::new(2, 0).unwrap();
        t.insert("a", &[0.25, -1.5]).unwrap();
        t.insert("b", &[3.0, 1e-3]).unwrap();
        let f = write_tmp(&t.to_text());
        assert_eq!(load_embeddings(f.path(), Some(2)).unwrap(), t);
    }
}
