//! Ranking metrics, per-type reports, prototype sweeps and baselines.

mod encoders;
mod metrics;
mod pipeline;

pub use encoders::{GruEncoder, MeanEncoder, SentenceEncoder};
pub use metrics::{average_precision, map, mrr, reciprocal_rank, RankedList};
pub use pipeline::{
    baseline_rank, evaluate, evaluate_with, random_rank, rank_questions, rankings_to_tsv,
    sweep_prototypes, sweep_to_tsv,
    EvalOptions, Evaluation, MetricsReport, MetricsRow, SweepRow,
};
