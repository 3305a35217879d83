//! Trainable ROI-wise projection `V×V → V×B` placed in front of the encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Two linear projections with an activation in between:
/// `relu(x·W1 + b1)·W2 + b2`, applied to every ROI row independently.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

pub struct AdapterVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    activation: Activation,
}

impl Adapter {
    /// Weights uniform in `±1/√fan_in`, biases zero, all trainable.
    pub fn new<R: Rng + ?Sized>(regions: usize, hidden: usize, out: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            w1: Tensor::uniform(&[regions, hidden], 1.0 / (regions as f64).sqrt(), rng).with_grad(true),
            b1: Tensor::zeros(&[hidden]).with_grad(true),
            w2: Tensor::uniform(&[hidden, out], 1.0 / (hidden as f64).sqrt(), rng).with_grad(true),
            b2: Tensor::zeros(&[out]).with_grad(true),
            activation,
        }
    }

    pub fn zeros(regions: usize, hidden: usize, out: usize, activation: Activation) -> Self {
        Self {
            w1: Tensor::zeros(&[regions, hidden]).with_grad(true),
            b1: Tensor::zeros(&[hidden]).with_grad(true),
            w2: Tensor::zeros(&[hidden, out]).with_grad(true),
            b2: Tensor::zeros(&[out]).with_grad(true),
            activation,
        }
    }

    pub fn regions(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("adapter.w1".into(), &self.w1),
            ("adapter.b1".into(), &self.b1),
            ("adapter.w2".into(), &self.w2),
            ("adapter.b2".into(), &self.b2),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("adapter.w1".into(), &mut self.w1),
            ("adapter.b1".into(), &mut self.b1),
            ("adapter.w2".into(), &mut self.w2),
            ("adapter.b2".into(), &mut self.b2),
        ]
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> AdapterVars<'t> {
        AdapterVars {
            w1: tape.param(&self.w1),
            b1: tape.param(&self.b1),
            w2: tape.param(&self.w2),
            b2: tape.param(&self.b2),
            activation: self.activation,
        }
    }
}

impl<'t> AdapterVars<'t> {
    /// Leaves in the order of [`Adapter::named_mut`].
    pub fn leaves(&self) -> Vec<Var<'t>> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let (v, cols) = {
            let xv = x.value();
            xv.dims2()?
        };
        let regions = self.w1.value().shape()[0];
        if cols != regions || v != regions {
            return Err(Error::dim("adapter_forward", &[v, cols], self.w1.value().shape()));
        }
        let h = x.matmul(&self.w1)?.add_bias(&self.b1)?;
        let h = match self.activation {
            Activation::Relu => h.relu(),
            Activation::Identity => h,
        };
        h.matmul(&self.w2)?.add_bias(&self.b2)
    }
}

/// Forward pass without gradient tracking.
pub fn adapter_forward(x: &Tensor, params: &Adapter) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let out = vars.forward(tape.constant(x.clone()))?;
    let value = out.value().clone();
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_adapter() -> Adapter {
        let mut a = Adapter::zeros(2, 2, 2, Activation::Relu);
        a.w1 = Tensor::new(&[2, 2], vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        a.b1 = Tensor::new(&[2], vec![0.0, 0.25]).unwrap();
        a.w2 = Tensor::new(&[2, 2], vec![1.0, 2.0, -1.0, 3.0]).unwrap();
        a.b2 = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        a
    }

    #[test]
    fn zero_weights_emit_bias() {
        let mut a = Adapter::zeros(3, 4, 2, Activation::Relu);
        a.b2 = Tensor::new(&[2], vec![0.7, -1.3]).unwrap();
        let x = Tensor::filled(&[3, 3], 0.4);
        let y = adapter_forward(&x, &a).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        for r in 0..3 {
            assert_eq!(y.row(r), &[0.7, -1.3]);
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        // x = [[1, 0.5], [0.5, 1]]
        // row0: h = [1*1 + .5*2, 1*-1 + .5*.5] + [0, .25] = [2, -0.5] -> relu [2, 0]
        //       y = [2*1 + 0, 2*2 + 0] + [.5, -.5] = [2.5, 3.5]
        // row1: h = [.5 + 2, -.5 + .5] + [0, .25] = [2.5, 0.25]
        //       y = [2.5 - .25, 5 + .75] + [.5, -.5] = [2.75, 5.25]
        let x = Tensor::new(&[2, 2], vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let y = adapter_forward(&x, &hand_adapter()).unwrap();
        let expected = [2.5, 3.5, 2.75, 5.25];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_activation_is_affine() {
        let mut a = hand_adapter();
        a.activation = Activation::Identity;
        let x = Tensor::new(&[2, 2], vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let y = adapter_forward(&x, &a).unwrap();
        // row0 h = [2, -0.5] kept; y = [2 + 0.5, 4 - 1.5] + b2
        assert!((y.at(0, 0) - 3.0).abs() < 1e-15);
        assert!((y.at(0, 1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let a = Adapter::zeros(3, 4, 2, Activation::Relu);
        assert!(matches!(
            adapter_forward(&Tensor::zeros(&[3, 4]), &a),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rows_are_projected_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Adapter::new(5, 16, 6, Activation::Relu, &mut rng);
        let x = Tensor::uniform(&[5, 5], 1.0, &mut rng);
        let mut x2 = x.clone();
        for j in 0..5 {
            x2.data_mut()[2 * 5 + j] += 0.3 * (j as f64 - 2.0);
        }
        let y = adapter_forward(&x, &a).unwrap();
        let y2 = adapter_forward(&x2, &a).unwrap();
        assert_eq!(y.shape(), &[5, 6]);
        for r in 0..5 {
            if r == 2 {
                assert_ne!(y.row(r), y2.row(r));
            } else {
                assert_eq!(y.row(r), y2.row(r));
            }
        }
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Adapter::new(16, 64, 8, Activation::Relu, &mut rng);
        assert!(a.w1.data().iter().all(|v| v.abs() <= 0.25));
        assert!(a.w2.data().iter().all(|v| v.abs() <= 0.125));
        assert!(a.b1.data().iter().all(|&v| v == 0.0));
        assert!(a.named().iter().all(|(_, t)| t.requires_grad));
    }
}
