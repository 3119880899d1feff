use std::collections::BTreeMap;

use candle_core::Var;
use candle_core::Tensor;
use candle_core::backprop::GradStore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok { Ok(()) } else { Err(Error::Config(format!("invalid Adam settings {self:?}"))) }
    }
}

/// Adam with bias correction over a fixed, named set of variables.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let m = vars.iter().map(|(_, v)| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            cfg,
            vars,
            m,
            v,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One update of every variable that has a gradient in `grads`.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.cfg;
        let t = self.steps as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((_, var), (m, v)) in self.vars.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let Some(g) = grads.get(var) else { continue };
            *m = ((&*m * b1)? + (g * (1.0 - b1))?)?;
            *v = ((&*v * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let denom = ((&*v / c2)?.sqrt()? + eps)?;
            let delta = ((&*m / c1)? / denom)?;
            var.set(&(var.as_tensor() - (delta * lr)?)?)?;
        }
        Ok(())
    }

    /// First and second moments keyed `m/<name>` and `v/<name>`.
    pub fn moments(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for ((name, _), (m, v)) in self.vars.iter().zip(self.m.iter().zip(&self.v)) {
            out.insert(format!("m/{name}"), m.copy()?);
            out.insert(format!("v/{name}"), v.copy()?);
        }
        Ok(out)
    }

    pub fn restore(&mut self, steps: u64, moments: &BTreeMap<String, Tensor>) -> Result<()> {
        let expected = 2 * self.vars.len();
        if moments.len() != expected {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} tensors, expected {expected}",
                moments.len()
            )));
        }
        for ((name, var), (m, v)) in self.vars.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (slot, key) in [(&mut *m, format!("m/{name}")), (&mut *v, format!("v/{name}"))] {
                let t = moments
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {key}")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Checkpoint(format!("optimizer tensor {key} has shape {:?}", t.dims())));
                }
                *slot = t.to_dtype(var.dtype())?.copy()?;
            }
        }
        self.steps = steps;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    /// Scalar Adam written out longhand.
    fn reference(grads: &[f64], cfg: AdamConfig, x0: f64) -> f64 {
        let (mut m, mut v, mut x) = (0.0, 0.0, x0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
        x
    }

    #[test]
    fn matches_longhand_on_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let x = Var::from_tensor(&Tensor::new(&[3.0f64], &Device::Cpu).unwrap()).unwrap();
        let mut opt = Adam::new(vec![("x".into(), x.clone())], cfg).unwrap();
        let mut seen = Vec::new();
        for _ in 0..5 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            seen.push(2.0 * x.as_tensor().to_vec1::<f64>().unwrap()[0]);
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let got = x.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((got - reference(&seen, cfg, 3.0)).abs() < 1e-12);
    }

    #[test]
    fn restore_round_trips_and_validates() {
        let x = Var::zeros((2, 2), DType::F32, &Device::Cpu).unwrap();
        let mut opt = Adam::new(vec![("x".into(), x.clone())], AdamConfig::default()).unwrap();
        let loss = (x.as_tensor() * 3.0).unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let saved = opt.moments().unwrap();
        let mut other = Adam::new(vec![("x".into(), x)], AdamConfig::default()).unwrap();
        other.restore(opt.steps(), &saved).unwrap();
        assert_eq!(other.steps(), 1);
        let back = other.moments().unwrap();
        for (k, t) in &saved {
            let d = (t - &back[k]).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(d, 0.0);
        }
        assert!(other.restore(1, &BTreeMap::new()).is_err());
    }
}
