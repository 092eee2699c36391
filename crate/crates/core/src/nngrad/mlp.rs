//! Multilayer perceptron parameters and forward passes.
//!
//! Hidden layers are affine + ReLU; the output layer is affine with no
//! activation (normalization is applied by the caller where needed). Two
//! forward paths exist on purpose: a straight-line one for inference and a
//! taped one for training. Tests pin them to each other.

use rand::Rng;

use crate::{Error, Result};

use super::tape::{NodeId, Tape};
use super::tensor::{self, Tensor};

/// One affine layer: `x @ w + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub w: Tensor,
    /// `[fan_out]`
    pub b: Tensor,
}

/// MLP weights; `widths()` recovers the `{in, h1, ..., out}` list.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = vec![self.layers[0].w.rows()];
        w.extend(self.layers.iter().map(|l| l.w.cols()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().w.cols()
    }

    /// Flat view of all parameter tensors (w, b, w, b, ...), the order used
    /// by checkpoints and the optimizer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }
}

/// Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`), zero biases.
pub fn init_glorot(widths: &[usize], rng: &mut impl Rng) -> MlpParams {
    assert!(widths.len() >= 2, "an MLP needs at least {{in, out}} widths");
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for win in widths.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen::<f64>() * 2.0 * bound - bound)
            .collect();
        layers.push(Layer {
            w: Tensor::new(&[fan_in, fan_out], data),
            b: Tensor::zeros(&[fan_out]),
        });
    }
    MlpParams { layers }
}

/// Straight-line forward pass: `x` is `[rows, input_width]`.
pub fn mlp_forward(params: &MlpParams, x: &Tensor) -> Result<Tensor> {
    if x.cols() != params.input_width() {
        return Err(Error::Shape(format!(
            "mlp input width {} != expected {}",
            x.cols(),
            params.input_width()
        )));
    }
    let last = params.layers.len() - 1;
    let mut cur = x.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut y = tensor::matmul(&cur, &layer.w);
        let n = y.cols();
        for row in y.data_mut().chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(layer.b.data()) {
                *v += b;
            }
        }
        if i != last {
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        cur = y;
    }
    Ok(cur)
}

/// Tape handles for one MLP's parameters, in `tensors()` order.
#[derive(Clone, Debug)]
pub struct MlpNodeIds {
    pub layers: Vec<(NodeId, NodeId)>,
}

impl MlpNodeIds {
    /// Registers every parameter tensor as a differentiable tape leaf.
    pub fn bind(tape: &mut Tape, params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| (tape.var(l.w.clone()), tape.var(l.b.clone())))
            .collect();
        Self { layers }
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Taped forward pass mirroring [`mlp_forward`].
pub fn mlp_forward_taped(tape: &mut Tape, ids: &MlpNodeIds, x: NodeId) -> Result<NodeId> {
    let want = tape.value(ids.layers[0].0).rows();
    if tape.value(x).cols() != want {
        return Err(Error::Shape(format!(
            "mlp input width {} != expected {}",
            tape.value(x).cols(),
            want
        )));
    }
    let last = ids.layers.len() - 1;
    let mut cur = x;
    for (i, &(w, b)) in ids.layers.iter().enumerate() {
        let y = tape.matmul(cur, w);
        let y = tape.add_row(y, b);
        cur = if i != last { tape.relu(y) } else { y };
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent straight-line oracle: hand-unrolled two-layer evaluation.
    fn two_layer_oracle(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let w0 = &p.layers[0].w;
        let b0 = &p.layers[0].b;
        let w1 = &p.layers[1].w;
        let b1 = &p.layers[1].b;
        let mut h = vec![0.0; w0.cols()];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut acc = b0.data()[j];
            for (i, xi) in x.iter().enumerate() {
                acc += xi * w0.at(i, j);
            }
            *hj = acc.max(0.0);
        }
        let mut out = vec![0.0; w1.cols()];
        for (j, oj) in out.iter_mut().enumerate() {
            let mut acc = b1.data()[j];
            for (i, hi) in h.iter().enumerate() {
                acc += hi * w1.at(i, j);
            }
            *oj = acc;
        }
        out
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = MlpParams {
            layers: vec![
                Layer { w: Tensor::zeros(&[3, 4]), b: Tensor::zeros(&[4]) },
                Layer { w: Tensor::zeros(&[4, 2]), b: Tensor::zeros(&[2]) },
            ],
        };
        let x = Tensor::new(&[2, 3], vec![1., -2., 3., 0.5, 0.25, -1.]);
        let y = mlp_forward(&p, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_identity_layer_is_identity() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let p = MlpParams { layers: vec![Layer { w, b: Tensor::zeros(&[3]) }] };
        let x = Tensor::new(&[2, 3], vec![1., -2., 3., 0.5, 0.25, -1.]);
        let y = mlp_forward(&p, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = init_glorot(&[5, 8, 3], &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let y = mlp_forward(&p, &Tensor::new(&[1, 5], x.clone())).unwrap();
        let oracle = two_layer_oracle(&p, &x);
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn taped_forward_matches_straight_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = init_glorot(&[4, 6, 6, 2], &mut rng);
        let x = Tensor::new(&[3, 4], (0..12).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect());
        let raw = mlp_forward(&p, &x).unwrap();
        let mut tape = Tape::new();
        let ids = MlpNodeIds::bind(&mut tape, &p);
        let xid = tape.constant(x);
        let out = mlp_forward_taped(&mut tape, &ids, xid).unwrap();
        assert_eq!(tape.value(out), &raw);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_glorot(&[5, 4], &mut rng);
        let x = Tensor::zeros(&[1, 6]);
        assert!(mlp_forward(&p, &x).is_err());
    }

    #[test]
    fn glorot_shapes_match_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_glorot(&[5, 32, 32], &mut rng);
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].w.shape(), &[5, 32]);
        assert_eq!(p.layers[1].w.shape(), &[32, 32]);
        assert_eq!(p.widths(), vec![5, 32, 32]);
        assert!(p.layers.iter().all(|l| l.b.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn glorot_mean_within_three_standard_errors() {
        // 100x100 = 1e4 draws from U(-a, a); SE of the mean is a/sqrt(3n).
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = init_glorot(&[100, 100], &mut rng);
        let w = &p.layers[0].w;
        let n = w.len() as f64;
        let a = (6.0 / 200.0_f64).sqrt();
        let mean = w.data().iter().sum::<f64>() / n;
        let se = a / (3.0 * n).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean} exceeds 3 SE {se}");
        assert!(w.data().iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn glorot_same_seed_same_params() {
        let p1 = init_glorot(&[5, 32, 32], &mut ChaCha8Rng::seed_from_u64(9));
        let p2 = init_glorot(&[5, 32, 32], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(p1, p2);
    }
}
