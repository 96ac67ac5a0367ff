//! Dense tensors, reverse-mode differentiation and the layer primitives the
//! policy network is built from.

mod adam;
mod checkpoint;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, Adam, AdamHyper};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use layers::{affine, gru_cell, gumbel_noise, init_gru, init_linear, Gru, Linear};
pub use params::{orthogonal, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Standalone masked row softmax on plain tensors.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, NumError> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(NumError::Dimension(format!(
                "softmax mask has {} entries for {:?}",
                m.len(),
                x.shape()
            )));
        }
    }
    tape::masked_softmax_values(x, mask)
}

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("row {0} has no unmasked entry")]
    DegenerateRow(usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unknown parameter {0}")]
    MissingParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
