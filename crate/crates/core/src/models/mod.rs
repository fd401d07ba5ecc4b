//! Assembly of the twelve architectures, prompt embedding, prediction, and
//! the training loss.

pub mod arch;
pub mod checkpoint;
pub mod model;
pub mod prompt;

pub use arch::{ArchitectureSpec, AttentionKind, Components, FfnKind, NormKind, PosEmb, VariantId};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_as, read_manifest, save_checkpoint, AnyModel,
    CheckpointManifest,
};
pub use model::{build_graph, inv_loss_norm, loss_bindings, mse_loss, BuiltGraph, GraphIo, Model};
pub use prompt::{embed_prompt, PromptBatch};
