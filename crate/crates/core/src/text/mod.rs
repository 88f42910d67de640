//! Tokenization, word vectors, and QA dataset ingestion.

mod dataset;
mod embeddings;
mod tokenize;

pub use dataset::{classify_question, load_qa_dataset, Candidate, QADataset, Question, WhType};
pub use embeddings::{load_embeddings, load_embeddings_for, EmbeddingTable};
pub use tokenize::{join, tokenize, Sentence, Token};
