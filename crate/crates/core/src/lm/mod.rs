//! The policy: a fixed-window neural language model with exact gradients.
//!
//! Architecture: the last `context_window` token ids (left-padded with
//! `<pad>`) are embedded, concatenated, passed through one `tanh` hidden layer,
//! and projected to vocabulary logits. Everything is `f64`.

pub(crate) mod checkpoint;
mod model;
mod vocab;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use model::{GradBlock, LMConfig, SeqScore, SeqTrace, TinyLM, INIT_RANGE};
pub use vocab::{build_vocab, Vocab, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN};
