//! Model assembly: sharing specs, the parameter store, per-language packs
//! with tied interlingua layers, and forward sessions.

pub mod forward;
pub mod graph;
pub mod spec;
pub mod store;

pub use forward::{Gradients, Memory, Session};
pub use graph::{private_count, shared_count, LanguagePack, ModelGraph, TieGroup, TieReport};
pub use spec::{LayerRange, SharingSpec};
pub use store::{ParamId, ParamStore};
