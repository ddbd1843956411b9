use super::OptimConfig;
use crate::error::{Error, Result};
use crate::model::VimModel;
use crate::numerics::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: OptimConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &VimModel<T>, cfg: OptimConfig) -> Self {
        let zeros = || model.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads[i]` pairs with `model.params()[i]`.
    pub fn step(&mut self, model: &mut VimModel<T>, grads: &[Vec<T>]) -> Result<()> {
        let mut params = model.params_mut();
        if grads.len() != params.len() {
            return Err(Error::invalid("gradient list does not match parameters"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::lit(self.cfg.lr), T::lit(self.cfg.eps));
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                *w = *w - lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
