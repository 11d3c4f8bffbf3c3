use rand::Rng;

use super::init::glorot_uniform;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

/// Token embedding table; row count equals the vocabulary size including
/// the PAD and UNK specials.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub params: ParamSet,
    vocab_size: usize,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        params.push("embedding", glorot_uniform(vocab_size, dim, rng));
        EmbeddingTable { params, vocab_size, dim }
    }

    pub fn zeroed(vocab_size: usize, dim: usize) -> Self {
        let mut params = ParamSet::new();
        params.push("embedding", Tensor::zeros(&[vocab_size, dim]));
        EmbeddingTable { params, vocab_size, dim }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        if let Some(pos) = ids.iter().position(|&i| i >= self.vocab_size) {
            return Err(Error::Data(format!(
                "token id {} at position {pos} outside vocabulary of {}",
                ids[pos], self.vocab_size
            )));
        }
        let table = tape.param(&self.params, 0);
        tape.gather_rows(table, ids)
    }
}

/// Padded token ids, `rows × width`, with a valid length per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMatrix {
    ids: Vec<u32>,
    lengths: Vec<usize>,
    width: usize,
}

impl TokenMatrix {
    pub fn new(ids: Vec<u32>, lengths: Vec<usize>, width: usize) -> Result<Self> {
        if width == 0 || ids.len() != lengths.len() * width {
            return Err(Error::Dimension(format!(
                "{} ids for {} rows of width {width}",
                ids.len(),
                lengths.len()
            )));
        }
        Ok(TokenMatrix { ids, lengths, width })
    }

    /// Pads each sequence with PAD (0) to the longest one.
    pub fn from_sequences(seqs: &[&[u32]]) -> Result<Self> {
        let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
        let mut ids = vec![0u32; seqs.len() * width];
        for (r, s) in seqs.iter().enumerate() {
            ids[r * width..r * width + s.len()].copy_from_slice(s);
        }
        TokenMatrix::new(ids, seqs.iter().map(|s| s.len()).collect(), width)
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn length(&self, row: usize) -> usize {
        self.lengths[row]
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn id(&self, row: usize, t: usize) -> u32 {
        self.ids[row * self.width + t]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.ids[row * self.width..row * self.width + self.lengths[row]]
    }

    pub fn max_length(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.rows() == 0 {
            return Err(Error::Data("empty token batch".into()));
        }
        for (r, &len) in self.lengths.iter().enumerate() {
            if len == 0 || len > self.width {
                return Err(Error::Data(format!(
                    "row {r} has length {len}, expected 1..={}",
                    self.width
                )));
            }
            for t in 0..len {
                let id = self.id(r, t);
                if id as usize >= vocab_size {
                    return Err(Error::Data(format!(
                        "token id {id} at row {r}, position {t} outside vocabulary of {vocab_size}"
                    )));
                }
            }
        }
        Ok(())
    }
}
