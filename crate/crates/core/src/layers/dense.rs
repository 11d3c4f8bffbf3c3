use rand::Rng;

use super::init::glorot_uniform;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

/// Fully connected layer `activation(x·W + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub params: ParamSet,
    pub activation: Activation,
    input_dim: usize,
    output_dim: usize,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        params.push("w", glorot_uniform(input_dim, output_dim, rng));
        params.push("b", Tensor::zeros(&[output_dim]));
        DenseLayer { params, activation, input_dim, output_dim }
    }

    pub fn from_weights(w: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        let (input_dim, output_dim) = w.dims2();
        if w.shape().len() != 2 || b.shape() != [output_dim] {
            return Err(Error::shapes("dense", w.shape(), b.shape()));
        }
        let mut params = ParamSet::new();
        params.push("w", w);
        params.push("b", b);
        Ok(DenseLayer { params, activation, input_dim, output_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Dimension(format!(
                "dense layer expects width {}, got shape {shape:?}",
                self.input_dim
            )));
        }
        let w = tape.param(&self.params, 0);
        let b = tape.param(&self.params, 1);
        let xw = tape.matmul(x, w)?;
        let z = tape.add_bias(xw, b)?;
        match self.activation {
            Activation::None => Ok(z),
            Activation::Relu => tape.relu(z),
            Activation::Tanh => tape.tanh(z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let layer = DenseLayer::from_weights(Tensor::eye(2), Tensor::zeros(&[2]), Activation::None).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![-1.0, 2.0]).unwrap());
        let y = layer.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 2.0]);

        let relu = DenseLayer::from_weights(Tensor::eye(2), Tensor::zeros(&[2]), Activation::Relu).unwrap();
        let y = relu.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::new(4, 3, Activation::None, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(layer.forward(&mut tape, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradient_check_four_to_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for activation in [Activation::None, Activation::Tanh, Activation::Relu] {
            let mut layer = DenseLayer::new(4, 3, activation, &mut rng);
            let b = layer.params.get_mut(1);
            b.data_mut().copy_from_slice(&[0.3, -0.2, 0.1]);
            let x = Tensor::matrix(5, 4, (0..20).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let report = grad_check(
                &mut layer,
                |tape, layer| {
                    let x = tape.constant(x.clone());
                    let y = layer.forward(tape, x)?;
                    let y2 = tape.square(y)?;
                    tape.sum(y2)
                },
                |layer| vec![&mut layer.params],
                1e-5,
                1e-6,
            )
            .unwrap();
            assert!(report.passed(), "{activation:?}\n{report}");
        }
    }
}
