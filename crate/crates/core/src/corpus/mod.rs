//! Synthetic cipher languages, vocabularies, datasets and batching.

pub mod batch;
pub mod dataset;
pub mod synth;
pub mod vocab;

pub use batch::{make_batches, Batch, BatchConfig, Example, StreamKey, Task, TokenBatch};
pub use dataset::{
    load_vocabs, read_lines, tokenize, write_lines, Bitext, Dataset, LangEntry, Manifest, Sentence,
};
pub use synth::{oracle_translate, ReorderRule, SyntheticLangSpec};
pub use vocab::Vocab;
