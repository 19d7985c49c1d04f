use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

/// AdamW with a constant learning rate and bias correction. Moment
/// estimates are exposed so they can be checkpointed.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every named parameter that received a gradient.
    pub fn step(&mut self, params: &[(String, &Var)], grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let (m, v) = match self.moments.remove(name) {
                Some(mv) => mv,
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            let v = ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.eps)?)?;
            let mut theta = var.as_tensor().detach();
            if self.weight_decay != 0.0 {
                theta = (&theta * (1.0 - self.lr * self.weight_decay))?;
            }
            var.set(&(theta - (update * self.lr)?)?)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(())
    }

    /// Moment tensors named `<param>.exp_avg` / `<param>.exp_avg_sq`.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.moments.len() * 2);
        for (name, (m, v)) in &self.moments {
            out.push((format!("{name}.exp_avg"), m.clone()));
            out.push((format!("{name}.exp_avg_sq"), v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, step: u64, tensors: &HashMap<String, Tensor>) -> Result<()> {
        self.step = step;
        self.moments.clear();
        for (key, m) in tensors {
            let Some(name) = key.strip_suffix(".exp_avg") else {
                continue;
            };
            let v = tensors
                .get(&format!("{name}.exp_avg_sq"))
                .ok_or_else(|| Error::Inconsistent(format!("optimizer state lacks {name}.exp_avg_sq")))?;
            self.moments.insert(name.to_string(), (m.clone(), v.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr · sign(g) (up to eps).
        let x = Var::from_tensor(&Tensor::new(&[1.0f32, -2.0], &Device::Cpu).unwrap()).unwrap();
        let loss = (x.as_tensor().sqr().unwrap().sum_all().unwrap() * 0.5).unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = AdamW::new(0.1);
        opt.step(&[("x".into(), &x)], &grads).unwrap();
        let v: Vec<f32> = x.as_tensor().to_vec1().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 1.9).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn minimises_a_quadratic() {
        let x = Var::from_tensor(&Tensor::new(&[3.0f32], &Device::Cpu).unwrap()).unwrap();
        let mut opt = AdamW::new(0.05);
        for _ in 0..500 {
            let loss = (x.as_tensor() - 1.0).unwrap().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&[("x".into(), &x)], &grads).unwrap();
        }
        let v: Vec<f32> = x.as_tensor().to_vec1().unwrap();
        assert!((v[0] - 1.0).abs() < 1e-2, "{v:?}");
    }

    #[test]
    fn state_roundtrip_reproduces_updates() {
        let run = |split: bool| -> f32 {
            let x = Var::from_tensor(&Tensor::new(&[3.0f32], &Device::Cpu).unwrap()).unwrap();
            let mut opt = AdamW::new(0.05);
            for i in 0..20 {
                if split && i == 10 {
                    let state: HashMap<String, Tensor> = opt.state().into_iter().collect();
                    let steps = opt.steps();
                    opt = AdamW::new(0.05);
                    opt.load_state(steps, &state).unwrap();
                }
                let loss = (x.as_tensor() - 1.0).unwrap().sqr().unwrap().sum_all().unwrap();
                let grads = loss.backward().unwrap();
                opt.step(&[("x".into(), &x)], &grads).unwrap();
            }
            x.as_tensor().to_vec1::<f32>().unwrap()[0]
        };
        assert_eq!(run(false), run(true));
    }
}
