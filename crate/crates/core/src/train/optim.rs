//! Adam with bias correction and global-norm gradient clipping.

use crate::autograd::{ParamGrads, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-4,
        }
    }
}

/// Optimizer moments, keyed like the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: ParameterStore<T>,
    pub v: ParameterStore<T>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParameterStore<T>) -> Self {
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One update. Parameters without a gradient entry are treated as
    /// having zero gradient. Nothing is modified if any new value would be
    /// non-finite.
    pub fn step(&mut self, params: &mut ParameterStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.t + 1;
        let c1 = 1.0 - beta1.powi(t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(t.min(i32::MAX as u64) as i32);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(epsilon));

        let mut updates = Vec::with_capacity(params.len());
        for (name, p) in params.iter() {
            let m = self.m.get(name)?;
            let v = self.v.get(name)?;
            let mut nm = m.clone();
            let mut nv = v.clone();
            let mut np = p.clone();
            let g = grads.get(name);
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::shape(
                        "adam",
                        format!("gradient {name} has shape {:?}, parameter {:?}", g.shape(), p.shape()),
                    ));
                }
            }
            for i in 0..p.len() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                let mi = b1 * m.data()[i] + one_b1 * gi;
                let vi = b2 * v.data()[i] + one_b2 * gi * gi;
                let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                let pi = p.data()[i] - step;
                if !pi.is_finite() {
                    return Err(Error::NonFinite {
                        op: format!("adam update of {name}[{i}]"),
                    });
                }
                nm.data_mut()[i] = mi;
                nv.data_mut()[i] = vi;
                np.data_mut()[i] = pi;
            }
            updates.push((name.clone(), np, nm, nv));
        }
        for (name, np, nm, nv) in updates {
            *params.get_mut(&name)? = np;
            *self.m.get_mut(&name)? = nm;
            *self.v.get_mut(&name)? = nv;
        }
        self.t = t;
        Ok(())
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm<T: Real>(grads: &ParamGrads<T>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&x| Real::to_f64(x) * Real::to_f64(x))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut ParamGrads<T>, max_norm: f64) -> Result<f64> {
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::NonFinite {
                op: format!("gradient of {name}"),
            });
        }
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.values_mut() {
            *g = g.scale(scale);
        }
    }
    Ok(norm)
}

/// Elementwise `acc += x` over matching gradient maps.
pub(crate) fn accumulate<T: Real>(acc: &mut ParamGrads<T>, x: &ParamGrads<T>) -> Result<()> {
    for (name, g) in x {
        match acc.get_mut(name) {
            Some(a) => a.add_assign(g)?,
            None => {
                acc.insert(name.clone(), g.clone());
            }
        }
    }
    Ok(())
}

pub(crate) fn scale_all<T: Real>(grads: &mut ParamGrads<T>, s: f64) {
    let s = T::from_f64(s);
    for g in grads.values_mut() {
        *g = g.scale(s);
    }
}
