//! Decoding, BLEU, evaluation reports, checkpoints and ablation runners.

pub mod ablation;
pub mod bleu;
pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod report;

pub use ablation::{
    ablation_structure, ablation_tasks, build_and_train, enc_sharing_pair, evaluate,
    structure_groups, task_rows, train_and_evaluate, AblationReport, AblationRow, EvalOptions,
    SpecRun, TaskRun,
};
pub use bleu::{corpus_bleu, corpus_bleu_smoothed, BleuStats};
pub use checkpoint::{load_checkpoint, model_digest, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use decode::greedy_decode;
pub use report::{all_directions, zero_shot_matrix, DirectionScore, EvalReport};
