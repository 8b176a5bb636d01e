use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

/// Slope of the leaky rectifier used between hidden layers.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Linear,
    Tanh,
    Sigmoid,
}

/// Affine layer `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Fully connected network: leaky rectifier between layers, configurable
/// output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub head: Head,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `widths` lists every layer
    /// boundary, input first.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], head: Head, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .map(|w| {
                let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-a..=a)).collect();
                Dense {
                    weight: Tensor::new(vec![w[0], w[1]], data).expect("sized"),
                    bias: Tensor::zeros(&[w[1]]),
                }
            })
            .collect();
        Self { layers, head }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
            head: self.head,
        }
    }

    /// Tape-free evaluation on a `[batch, in]` input.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = bound.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var)>,
    pub head: Head,
}

impl BoundMlp {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Output before the head nonlinearity.
    pub fn pre_head(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let z = self.pre_head(tape, x)?;
        match self.head {
            Head::Linear => Ok(z),
            Head::Tanh => tape.tanh(z),
            Head::Sigmoid => tape.sigmoid(z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::glorot(&[4, 64, 2], Head::Linear, &mut rng);
        let a = (6.0f64 / 68.0).sqrt();
        assert!(m.layers[0].weight.data().iter().all(|w| w.abs() <= a));
        assert!(m
            .layers
            .iter()
            .all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
        assert_eq!(m.num_params(), 4 * 64 + 64 + 64 * 2 + 2);
    }

    #[test]
    fn sigmoid_head_stays_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::glorot(&[3, 16, 1], Head::Sigmoid, &mut rng);
        let x = Tensor::new(vec![5, 3], (0..15).map(|i| i as f64 - 7.0).collect()).unwrap();
        let y = m.eval(&x).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
