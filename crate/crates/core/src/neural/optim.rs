//! Bias-corrected Adam over a [`ParamStore`].

use crate::error::{Error, Result};
use crate::neural::arch::ParamStore;
use crate::neural::model::Grads;
use crate::neural::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid Adam config {self:?}")));
        }
        Ok(())
    }
}

/// One Adam update at step `t` (1-based) of every trainable parameter.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, grads: &Grads<T>, cfg: &AdamConfig, t: u64) -> Result<()> {
    let names = store.trainable_names();
    if let Some(missing) = names.iter().find(|n| !grads.contains_key(n.as_str())) {
        return Err(Error::MissingGradient(missing.clone()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let step = T::from_f64(cfg.lr / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(cfg.eps);
    for name in names {
        let g = &grads[name.as_str()];
        let p = store.params.get_mut(&name).expect("trainable name exists");
        if g.dims != p.dims {
            return Err(Error::ShapeMismatch(format!("gradient of `{name}`: {:?} vs {:?}", g.dims, p.dims)));
        }
        let m = store.adam_m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&p.dims));
        let v = store.adam_v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&p.dims));
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + one_b1 * gi;
            v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
            p.data[i] -= step * m.data[i] / ((v.data[i] * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_vec(&[1], vec![x]).unwrap());
        s
    }

    fn grad(g: f64) -> Grads<f64> {
        let mut gr = Grads::new();
        gr.insert("x".into(), Tensor::from_vec(&[1], vec![g]).unwrap());
        gr
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        for t in 1..=5 {
            adam_step(&mut s, &grad(0.0), &AdamConfig::default(), t).unwrap();
        }
        assert_eq!(s.get("x").unwrap().data[0], 0.7);
    }

    #[test]
    fn first_step_is_lr() {
        let mut s = scalar_store(0.0);
        adam_step(&mut s, &grad(1.0), &AdamConfig::default(), 1).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((s.get("x").unwrap().data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        for t in 1..=500 {
            let x = s.get("x").unwrap().data[0];
            adam_step(&mut s, &grad(2.0 * x), &cfg, t).unwrap();
        }
        assert!(s.get("x").unwrap().data[0].abs() < 0.01);
    }

    #[test]
    fn missing_and_frozen() {
        let mut s = scalar_store(1.0);
        s.insert("y", Tensor::zeros(&[2]));
        assert!(matches!(adam_step(&mut s, &grad(1.0), &AdamConfig::default(), 1), Err(Error::MissingGradient(n)) if n == "y"));
        s.freeze("y");
        adam_step(&mut s, &grad(1.0), &AdamConfig::default(), 1).unwrap();
        assert_eq!(s.get("y").unwrap().data, vec![0.0, 0.0]);
    }
}
