use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: survivors are scaled by `1/(1 − rate)` at train time,
/// eval mode is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn new(rate: f64, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutSpec { rate, mode })
    }
}

pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, spec: DropoutSpec, rng: &mut R) -> Result<Var> {
    if spec.mode == Mode::Eval || spec.rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - spec.rate;
    let scale = 1.0 / keep;
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}
