use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{contract, dimension, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimKind {
    pub fn adam() -> Self {
        OptimKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub kind: OptimKind,
    pub lr: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimState {
    pub fn new(kind: OptimKind, n_params: usize, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
        }
    }

    /// Adam with lr 1e-3 and betas (0.9, 0.999).
    pub fn adam(n_params: usize) -> Self {
        Self::new(OptimKind::adam(), n_params, 1e-3)
    }

    pub fn sgd(n_params: usize, lr: f64) -> Self {
        Self::new(OptimKind::Sgd, n_params, lr)
    }

    pub fn for_mlp(kind: OptimKind, net: &Mlp, lr: f64) -> Self {
        Self::new(kind, net.param_count(), lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// One update of `params` in place from `grads` (descent direction).
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(dimension(format!(
                "optimizer tracks {} parameters, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
        }
        self.check_lr()?;
        self.step += 1;
        self.apply(0, params, grads);
        Ok(())
    }

    fn check_lr(&self) -> Result<()> {
        if self.lr > 0.0 && self.lr.is_finite() {
            Ok(())
        } else {
            Err(contract(format!("learning rate must be positive, got {}", self.lr)))
        }
    }

    fn apply(&mut self, offset: usize, params: &mut [f64], grads: &[f64]) {
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let m = &mut self.first[offset..offset + params.len()];
                let v = &mut self.second[offset..offset + params.len()];
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Applies one optimizer step to every layer of `params`.
///
/// Fails with a numeric error naming the first layer whose gradient is not
/// finite; in that case nothing is modified.
pub fn optim_step(params: &mut Mlp, grads: &Mlp, state: &mut OptimState) -> Result<()> {
    if !params.same_shape(grads) || state.len() != params.param_count() {
        return Err(dimension("optimizer, parameter and gradient shapes differ"));
    }
    for (l, layer) in grads.layers().iter().enumerate() {
        let finite = layer.weight.as_slice().iter().all(|v| v.is_finite())
            && layer.bias.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric(format!("non-finite gradient in layer {l}")));
        }
    }
    state.check_lr()?;
    state.step += 1;
    let flat_grads = grads.flat_params();
    let mut offset = 0;
    params.for_each_slice_mut(|_, slice| {
        let n = slice.len();
        state.apply(offset, slice, &flat_grads[offset..offset + n]);
        offset += n;
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Activation, Layer, Mat};

    fn scalar(v: f64) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weight: Mat::from_vec(1, 1, vec![v]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut net = scalar(0.7);
        let grads = net.zeros_like();
        let mut state = OptimState::for_mlp(OptimKind::adam(), &net, 1e-3);
        optim_step(&mut net, &grads, &mut state).unwrap();
        assert_eq!(net.flat_params(), vec![0.7, 0.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn plain_sgd_step() {
        let mut params = [0.0];
        let mut state = OptimState::sgd(1, 0.1);
        state.step_slice(&mut params, &[1.0]).unwrap();
        assert_eq!(params, [-0.1]);
    }

    #[test]
    fn adam_descends_on_square() {
        // Hand-iterated recurrence: with bias correction the first Adam step
        // moves by exactly lr * sign(g), later steps by slightly less.
        let mut x = [1.0];
        let mut state = OptimState::new(OptimKind::adam(), 1, 0.1);
        let mut prev = 1.0f64;
        for step in 0..3 {
            let g = 2.0 * x[0];
            state.step_slice(&mut x, &[g]).unwrap();
            assert!(x[0].abs() < prev, "step {step}: |x| did not shrink");
            prev = x[0].abs();
        }
        assert!((1.0 - 0.1 - x[0]) > 0.19);
    }

    #[test]
    fn first_adam_step_has_unit_normalized_size() {
        let mut x = [1.0];
        let mut state = OptimState::new(OptimKind::adam(), 1, 0.1);
        state.step_slice(&mut x, &[2.0]).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut net = Mlp::zeros(&[2, 2, 1], Activation::Tanh, Activation::Identity).unwrap();
        let mut grads = net.zeros_like();
        grads.layers_mut()[1].bias[0] = f64::NAN;
        let mut state = OptimState::for_mlp(OptimKind::adam(), &net, 1e-3);
        match optim_step(&mut net, &grads, &mut state) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("layer 1")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut state = OptimState::sgd(1, 0.0);
        assert!(state.step_slice(&mut [0.0], &[1.0]).is_err());
    }
}
