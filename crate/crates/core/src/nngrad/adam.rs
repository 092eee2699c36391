//! Bias-corrected adam.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers for one flat list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, shapes: &[&Tensor]) -> Self {
        Self {
            cfg,
            t: 0,
            m: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }
}

/// One update over a flat parameter list; `grads` must align with `params`.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.check_same_shape(g, "adam_step param/grad")?;
    }
    state.t += 1;
    let t = state.t as i32;
    let AdamConfig { lr, beta1, beta2, eps } = state.cfg;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(&mut state.v)) {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
            let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            pd[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(&[2], vec![1.5, -0.5]);
        let before = p.clone();
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        let g = Tensor::zeros(&[2]);
        adam_step(&mut state, &mut [&mut p], &[g]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_converges_and_matches_textbook_recurrence() {
        // Oracle: the standard recurrence written out independently.
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let mut x_oracle = 1.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        let mut x = Tensor::scalar(1.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&x]);
        for t in 1..=2000 {
            let g = 2.0 * x_oracle;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x_oracle -= lr * mh / (vh.sqrt() + eps);

            let gt = Tensor::scalar(2.0 * x.item());
            adam_step(&mut state, &mut [&mut x], &[gt]).unwrap();
            assert!((x.item() - x_oracle).abs() <= 1e-12, "step {t}: {} vs {x_oracle}", x.item());
        }
        assert!(x.item().abs() < 0.05, "converged to {}", x.item());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        let g = Tensor::zeros(&[3]);
        assert!(adam_step(&mut state, &mut [&mut p], &[g]).is_err());
    }
}
