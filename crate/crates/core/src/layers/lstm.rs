use rand::Rng;

use super::init::{glorot_uniform, orthogonal};
use super::{EmbeddingTable, TokenMatrix};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

const GATES: [&str; 4] = ["i", "f", "o", "c"];

/// LSTM cell with separate input/recurrent weights per gate.
///
/// Tensor order in `params`: `w_x{i,f,o,c}` (input_dim×hidden),
/// `w_h{i,f,o,c}` (hidden×hidden), `b_{i,f,o,c}` (hidden).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub params: ParamSet,
    input_dim: usize,
    hidden_dim: usize,
}

/// The cell's weights registered on a tape in fused `[i | f | o | c]` order.
#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    w_x: Var,
    w_h: Var,
    bias: Var,
    hidden: usize,
}

impl LstmCell {
    /// Input weights Glorot-uniform, recurrent weights orthogonal, biases zero.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        for g in GATES {
            params.push(format!("w_x{g}"), glorot_uniform(input_dim, hidden_dim, rng));
        }
        for g in GATES {
            params.push(format!("w_h{g}"), orthogonal(hidden_dim, rng));
        }
        for g in GATES {
            params.push(format!("b_{g}"), Tensor::zeros(&[hidden_dim]));
        }
        LstmCell { params, input_dim, hidden_dim }
    }

    pub fn zeroed(input_dim: usize, hidden_dim: usize) -> Self {
        let mut params = ParamSet::new();
        for g in GATES {
            params.push(format!("w_x{g}"), Tensor::zeros(&[input_dim, hidden_dim]));
        }
        for g in GATES {
            params.push(format!("w_h{g}"), Tensor::zeros(&[hidden_dim, hidden_dim]));
        }
        for g in GATES {
            params.push(format!("b_{g}"), Tensor::zeros(&[hidden_dim]));
        }
        LstmCell { params, input_dim, hidden_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn recurrent_weight(&self, gate: usize) -> &Tensor {
        self.params.get(4 + gate)
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundLstm> {
        let h = self.hidden_dim;
        let wx: Vec<Var> = (0..4).map(|g| tape.param(&self.params, g)).collect();
        let wh: Vec<Var> = (4..8).map(|g| tape.param(&self.params, g)).collect();
        let mut bs = Vec::with_capacity(4);
        for g in 8..12 {
            let b = tape.param(&self.params, g);
            bs.push(tape.reshape(b, &[1, h])?);
        }
        let w_x = tape.concat_cols(&wx)?;
        let w_h = tape.concat_cols(&wh)?;
        let bias = tape.concat_cols(&bs)?;
        let bias = tape.reshape(bias, &[4 * h])?;
        Ok(BoundLstm { w_x, w_h, bias, hidden: h })
    }
}

impl BoundLstm {
    /// `x·W_x + b` for every row of `x`.
    pub fn project_input(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w_x)?;
        tape.add_bias(xw, self.bias)
    }

    /// One recurrence given the already projected input.
    pub fn step_projected(
        &self,
        tape: &mut Tape,
        x_proj: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let h = self.hidden;
        let hw = tape.matmul(h_prev, self.w_h)?;
        let z = tape.add(x_proj, hw)?;
        let ifo_pre = tape.slice_cols(z, 0, 3 * h)?;
        let ifo = tape.sigmoid(ifo_pre)?;
        let i = tape.slice_cols(ifo, 0, h)?;
        let f = tape.slice_cols(ifo, h, h)?;
        let o = tape.slice_cols(ifo, 2 * h, h)?;
        let g_pre = tape.slice_cols(z, 3 * h, h)?;
        let g = tape.tanh(g_pre)?;
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let c_act = tape.tanh(c)?;
        let h_out = tape.mul(o, c_act)?;
        Ok((h_out, c))
    }
}

/// One LSTM time step:
/// `i,f,o = σ(x·W_x + h·W_h + b)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`,
/// `h = o⊙tanh(c)`.
pub fn lstm_step(
    cell: &LstmCell,
    tape: &mut Tape,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let (xs, hs, cs) = (
        tape.value(x_t).shape().to_vec(),
        tape.value(h_prev).shape().to_vec(),
        tape.value(c_prev).shape().to_vec(),
    );
    let ok = xs.len() == 2
        && xs[1] == cell.input_dim
        && hs == [xs[0], cell.hidden_dim]
        && cs == hs;
    if !ok {
        return Err(Error::Dimension(format!(
            "lstm_step: x {xs:?}, h {hs:?}, c {cs:?} for cell {}→{}",
            cell.input_dim, cell.hidden_dim
        )));
    }
    let bound = cell.bind(tape)?;
    let proj = bound.project_input(tape, x_t)?;
    bound.step_projected(tape, proj, h_prev, c_prev)
}

/// Embeds a padded token matrix, runs the LSTM from a zero state and
/// averages `h_t` over each row's valid steps.
///
/// Steps past the longest row are never computed, and padded steps of
/// shorter rows are masked out of the mean, so the output of a row does
/// not depend on padding or on the rest of the batch.
pub fn encode_sequence(
    emb: &EmbeddingTable,
    cell: &LstmCell,
    tape: &mut Tape,
    tokens: &TokenMatrix,
) -> Result<Var> {
    tokens.validate(emb.vocab_size())?;
    if emb.dim() != cell.input_dim {
        return Err(Error::Dimension(format!(
            "embedding width {} but LSTM input width {}",
            emb.dim(),
            cell.input_dim
        )));
    }
    let batch = tokens.rows();
    let steps = tokens.max_length();
    let h = cell.hidden_dim;

    let ids: Vec<usize> = (0..steps)
        .flat_map(|t| (0..batch).map(move |b| (b, t)))
        .map(|(b, t)| tokens.id(b, t) as usize)
        .collect();
    let table = tape.param(&emb.params, 0);
    let embedded = tape.gather_rows(table, &ids)?;
    let bound = cell.bind(tape)?;
    let projected = bound.project_input(tape, embedded)?;

    let mut h_t = tape.constant(Tensor::zeros(&[batch, h]));
    let mut c_t = tape.constant(Tensor::zeros(&[batch, h]));
    let mut pooled: Option<Var> = None;
    for t in 0..steps {
        let x_proj = tape.slice_rows(projected, t * batch, batch)?;
        let (h_next, c_next) = bound.step_projected(tape, x_proj, h_t, c_t)?;
        h_t = h_next;
        c_t = c_next;

        let mut mask = vec![0.0; batch * h];
        for (b, row) in mask.chunks_exact_mut(h).enumerate() {
            let len = tokens.length(b);
            if t < len {
                row.fill(1.0 / len as f64);
            }
        }
        let mask = tape.constant(Tensor::matrix(batch, h, mask)?);
        let weighted = tape.mul(mask, h_t)?;
        pooled = Some(match pooled {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    pooled.ok_or_else(|| Error::Argument("empty token matrix".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, sigmoid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_cell() -> LstmCell {
        let mut cell = LstmCell::zeroed(1, 1);
        let set = &mut cell.params;
        for name in ["b_i", "b_f", "b_o"] {
            let idx = set.index_of(name).unwrap();
            set.get_mut(idx).data_mut()[0] = 100.0;
        }
        let idx = set.index_of("w_xc").unwrap();
        set.get_mut(idx).data_mut()[0] = 1.0;
        cell
    }

    #[test]
    fn zero_cell_gives_zero_state() {
        let cell = LstmCell::zeroed(3, 4);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 3], 0.7));
        let h0 = tape.constant(Tensor::zeros(&[2, 4]));
        let c0 = tape.constant(Tensor::zeros(&[2, 4]));
        let (h, c) = lstm_step(&cell, &mut tape, x, h0, c0).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_scalar_cell_matches_closed_form() {
        // Oracle: gates σ(100) evaluated independently, g = tanh(1).
        let gate = sigmoid(100.0);
        let c_expected = gate * 1f64.tanh();
        let h_expected = gate * c_expected.tanh();
        assert!((c_expected - 0.76159).abs() < 1e-5);
        assert!((h_expected - 0.64201).abs() < 1e-5);

        let cell = scalar_cell();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1], 1.0));
        let z = tape.constant(Tensor::zeros(&[1, 1]));
        let (h, c) = lstm_step(&cell, &mut tape, x, z, z).unwrap();
        assert!((tape.value(c).data()[0] - c_expected).abs() < 1e-12);
        assert!((tape.value(h).data()[0] - h_expected).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let cell = LstmCell::zeroed(3, 4);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        let h0 = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            lstm_step(&cell, &mut tape, x, h0, h0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn recurrent_weights_start_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cell = LstmCell::new(5, 16, &mut rng);
        for g in 0..4 {
            assert!(super::super::init::orthogonality_error(cell.recurrent_weight(g)) < 1e-6);
        }
    }

    #[test]
    fn full_cell_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cell = LstmCell::new(8, 8, &mut rng);
        for t in cell.params.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let x = Tensor::matrix(3, 8, (0..24).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let h0 = Tensor::matrix(3, 8, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let c0 = Tensor::matrix(3, 8, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let weights = Tensor::matrix(3, 8, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let report = grad_check(
            &mut cell,
            |tape, cell| {
                let x = tape.constant(x.clone());
                let h0 = tape.constant(h0.clone());
                let c0 = tape.constant(c0.clone());
                let w = tape.constant(weights.clone());
                let (h, c) = lstm_step(cell, tape, x, h0, c0)?;
                let hc = tape.add(h, c)?;
                let weighted = tape.mul(hc, w)?;
                tape.sum(weighted)
            },
            |cell| vec![&mut cell.params],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
