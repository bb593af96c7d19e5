use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use super::Real;
use crate::error::{bail, Result};

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-4)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Applies one update from the stored gradients, then clears them.
    pub fn step<T: Real>(&self, params: &mut ParameterSet<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            bail!(State, "parameter '{}' has no gradient", p.name);
        }
        params.step += 1;
        let t = params.step as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1.powi(t));
        let c2 = T::c(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::c(self.lr), T::c(self.eps));
        for p in params.iter_mut() {
            let grad = p.grad.take().expect("checked above");
            for i in 0..p.value.len() {
                let g = grad[i];
                p.m[i] = b1 * p.m[i] + (T::one() - b1) * g;
                p.v[i] = b2 * p.v[i] + (T::one() - b2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                p.value[i] = p.value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::Error;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = ParameterSet::<f64>::from_named(vec![("w".into(), [1, 3], vec![1.0, -2.0, 0.5])]).unwrap();
        let before = p.clone();
        p.set_gradients(p.zero_gradients()).unwrap();
        Adam::default().step(&mut p).unwrap();
        assert_eq!(p.by_name("w").unwrap().value, before.by_name("w").unwrap().value);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParameterSet::<f64>::from_named(vec![("w".into(), [1, 1], vec![0.0])]).unwrap();
        let mut g = p.zero_gradients();
        g.0[0][0] = 1.0;
        p.set_gradients(g).unwrap();
        Adam::new(1e-3).step(&mut p).unwrap();
        assert!((p.by_name("w").unwrap().value[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut p = ParameterSet::<f64>::from_named(vec![("w".into(), [1, 1], vec![0.0])]).unwrap();
        assert!(matches!(Adam::default().step(&mut p), Err(Error::State(_))));
        let mut g = p.zero_gradients();
        g.0[0][0] = 1.0;
        p.set_gradients(g).unwrap();
        Adam::default().step(&mut p).unwrap();
        assert!(matches!(Adam::default().step(&mut p), Err(Error::State(_))));
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut p = ParameterSet::<f64>::from_named(vec![("w".into(), [1, 2], vec![1.5, -0.7])]).unwrap();
        let adam = Adam::new(0.05);
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let (loss, grads) = {
                let mut g = Graph::new(&p);
                let w = g.param(p.id("w").unwrap());
                let sq = g.mul(w, w).unwrap();
                let l = g.sum(sq);
                (g.scalar(l), g.backward(l).unwrap().params)
            };
            assert!(loss < last);
            last = loss;
            p.set_gradients(grads).unwrap();
            adam.step(&mut p).unwrap();
        }
    }
}
