//! Neural building blocks: embedding lookup, LSTM, dense, pooling, dropout.

mod dense;
mod dropout;
mod embedding;
pub mod init;
mod lstm;

pub use dense::{Activation, DenseLayer};
pub use dropout::{dropout, DropoutSpec, Mode};
pub use embedding::{EmbeddingTable, TokenMatrix};
pub use lstm::{encode_sequence, lstm_step, BoundLstm, LstmCell};
