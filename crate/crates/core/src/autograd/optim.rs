use crate::error::{Error, Result};

use super::params::{GradMap, ParamStore};
use super::scalar::Scalar;

/// Adam with bias-corrected moments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies one update. Non-finite gradients or results leave the store untouched.
    pub fn step<S: Scalar>(&self, store: &mut ParamStore<S>, grads: &GradMap<S>) -> Result<()> {
        for (name, p) in store.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("no gradient for {name}")))?;
            if g.len() != p.value.len() {
                return Err(Error::Argument(format!("gradient of {name} has {} entries", g.len())));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("gradient of {name}")));
            }
        }
        let backup = store.clone();
        let t = store.step + 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let c1 = S::lit(1.0 - self.beta1.powi(t as i32));
        let c2 = S::lit(1.0 - self.beta2.powi(t as i32));
        let (lr, eps) = (S::lit(self.lr), S::lit(self.eps));
        let one = S::one();
        let mut bad = None;
        for (name, p) in store.iter_mut() {
            let g = &grads[name];
            for i in 0..g.len() {
                p.m[i] = b1 * p.m[i] + (one - b1) * g[i];
                p.v[i] = b2 * p.v[i] + (one - b2) * g[i] * g[i];
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                p.value[i] -= lr * mh / (vh.sqrt() + eps);
            }
            if bad.is_none() && p.value.iter().any(|x| !x.is_finite()) {
                bad = Some(name.clone());
            }
        }
        if let Some(name) = bad {
            *store = backup;
            return Err(Error::Numeric(format!("parameter {name} after update")));
        }
        store.step = t;
        Ok(())
    }
}
