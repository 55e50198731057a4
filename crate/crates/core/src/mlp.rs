//! Fully connected stack with tanh hidden layers and an identity output layer.
//! The backward pass is hand-derived; `MlpCache` keeps exactly the activations
//! it needs.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::opt::Parameters;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Activation record from one forward pass. `acts[l]` is the post-activation
/// output of layer l; the final entry is the logits.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` chains layer widths, e.g.
    /// [256, 64, 3].
    pub fn init(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least one layer");
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weight: Matrix::glorot(w[1], w[0], rng),
                bias: alloc::vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least one layer");
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weight: Matrix::zeros(w[1], w[0]),
                bias: alloc::vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.zeros_like(),
                    bias: alloc::vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.layers.len() + 1);
        s.push(self.in_width());
        for l in &self.layers {
            s.push(l.weight.rows());
        }
        s
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.in_width() {
            return Err(CoreError::DimMismatch {
                what: "mlp input",
                expected: self.in_width(),
                actual: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.matvec(&cur);
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            if l != last {
                for zi in z.iter_mut() {
                    *zi = libm::tanh(*zi);
                }
            }
            acts.push(z.clone());
            cur = z;
        }
        let logits = acts[last].clone();
        Ok((
            logits,
            MlpCache {
                input: x.to_vec(),
                acts,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` (same shape as self) and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.out_width(), "grad width mismatch");
        let mut delta = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer_in = if l == 0 {
                &cache.input
            } else {
                &cache.acts[l - 1]
            };
            grads.layers[l].weight.add_outer(&delta, layer_in);
            crate::linalg::add_assign(&mut grads.layers[l].bias, &delta);
            let mut grad_in = self.layers[l].weight.matvec_t(&delta);
            if l > 0 {
                // Propagate through the tanh of the previous layer: a = tanh(z),
                // da/dz = 1 - a^2.
                for (g, a) in grad_in.iter_mut().zip(&cache.acts[l - 1]) {
                    *g *= 1.0 - a * a;
                }
            }
            delta = grad_in;
        }
        delta
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use alloc::vec;

    #[test]
    fn zero_params_map_everything_to_zero() {
        let mlp = Mlp::zeros(&[4, 3, 3]);
        let (logits, _) = mlp.forward(&[1.0, -2.0, 0.5, 9.0]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_identity_layer_passes_input_through() {
        // One layer, so no hidden nonlinearity applies: y = I x + 0.
        let mut mlp = Mlp::zeros(&[3, 3]);
        for i in 0..3 {
            mlp.layers[0].weight.set(i, i, 1.0);
        }
        let (logits, _) = mlp.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(logits, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn input_width_mismatch_names_expected_and_actual() {
        let mlp = Mlp::zeros(&[4, 3]);
        let err = mlp.forward(&[1.0; 5]).unwrap_err();
        assert_eq!(
            err,
            CoreError::DimMismatch {
                what: "mlp input",
                expected: 4,
                actual: 5
            }
        );
    }

    // Independent straight-line re-evaluation of the same arithmetic, written
    // without Matrix so a bug in matvec cannot hide itself.
    fn naive_forward(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let last = mlp.layers.len() - 1;
        for (l, layer) in mlp.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.bias.len()];
            for (r, n) in next.iter_mut().enumerate() {
                let mut s = layer.bias[r];
                for (c, xc) in cur.iter().enumerate() {
                    s += layer.weight.get(r, c) * xc;
                }
                *n = if l == last { s } else { libm::tanh(s) };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn forward_matches_straight_line_reevaluation() {
        let mut rng = Rng::new(314);
        let mlp = Mlp::init(&[256, 64, 3], &mut rng);
        let x: Vec<f64> = (0..256).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (logits, _) = mlp.forward(&x).unwrap();
        let expect = naive_forward(&mlp, &x);
        for (a, b) in logits.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "forward disagrees: {a} vs {b}");
        }
    }

    #[test]
    fn cache_holds_logits_and_input() {
        let mut rng = Rng::new(1);
        let mlp = Mlp::init(&[5, 4, 3], &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (logits, cache) = mlp.forward(&x).unwrap();
        assert_eq!(cache.input, x);
        assert_eq!(cache.acts.last().unwrap(), &logits);
    }

    #[test]
    fn backward_matches_finite_differences_on_scalar_loss() {
        // Loss = c . logits, a linear readout, so grad_out = c exactly.
        let mut rng = Rng::new(99);
        let mlp = Mlp::init(&[6, 5, 3], &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let c = [0.3, -1.1, 0.7];
        let (_, cache) = mlp.forward(&x).unwrap();
        let mut grads = mlp.zeros_like();
        let grad_x = mlp.backward(&cache, &c, &mut grads);

        let h = 1e-6;
        let loss = |m: &Mlp, x: &[f64]| {
            let (lg, _) = m.forward(x).unwrap();
            dot(&lg, &c)
        };
        // Parameter gradients.
        for (li, layer) in mlp.layers.iter().enumerate() {
            for r in 0..layer.weight.rows() {
                for cc in 0..layer.weight.cols() {
                    let mut p = mlp.clone();
                    p.layers[li].weight.set(r, cc, layer.weight.get(r, cc) + h);
                    let mut m = mlp.clone();
                    m.layers[li].weight.set(r, cc, layer.weight.get(r, cc) - h);
                    let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                    let an = grads.layers[li].weight.get(r, cc);
                    assert!(
                        (fd - an).abs() < 1e-6,
                        "weight grad mismatch at layer {li} ({r},{cc}): fd {fd} vs {an}"
                    );
                }
            }
        }
        // Input gradient.
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!(
                (fd - grad_x[i]).abs() < 1e-6,
                "input grad mismatch at {i}: fd {fd} vs {}",
                grad_x[i]
            );
        }
    }
}
