use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            v: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
        }
    }

    /// One bias-corrected update. Every gradient is checked before any
    /// parameter moves, so a non-finite gradient leaves the state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(TrainError::Shape(format!("gradient of {name} does not match its parameter")));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient { parameter: name });
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mj, gj) in m.iter_mut().zip(g) {
                *mj = c.beta1 * *mj + (1.0 - c.beta1) * gj;
            }
            let v = self.v[i].data_mut();
            for (vj, gj) in v.iter_mut().zip(g) {
                *vj = c.beta2 * *vj + (1.0 - c.beta2) * gj * gj;
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for ((x, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                *x -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["x".into()]
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let mut x = Tensor::vector(vec![1.0, -2.0]);
        let mut adam = AdamState::new(AdamConfig::default(), &[&x]);
        adam.step(&mut [&mut x], &[Tensor::vector(vec![0.5, 0.5])], &names()).unwrap();
        let before = x.clone();
        let m = adam.m[0].clone();
        adam.step(&mut [&mut x], &[Tensor::vector(vec![0.0, 0.0])], &names()).unwrap();
        assert_eq!(adam.m[0], m.scale(0.9));
        // m̂ shrinks but stays non-zero, so the parameter still moves
        assert_ne!(x, before);
        let mut y = Tensor::vector(vec![3.0]);
        let mut fresh = AdamState::new(AdamConfig::default(), &[&y]);
        fresh.step(&mut [&mut y], &[Tensor::vector(vec![0.0])], &names()).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(fresh.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.7, -42.0] {
            let mut x = Tensor::scalar(0.0);
            let mut adam = AdamState::new(AdamConfig::default(), &[&x]);
            adam.step(&mut [&mut x], &[Tensor::scalar(g)], &names()).unwrap();
            // m̂/√v̂ = g/|g|, up to ε
            let want = -1e-4 * g.signum() * g.abs() / (g.abs() + 1e-8);
            assert!((x.item() - want).abs() < 1e-18, "{g}: {}", x.item());
        }
    }

    #[test]
    fn descends_a_quadratic() {
        let mut x = Tensor::scalar(1.0);
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &[&x]);
        let mut f = 1.0;
        for _ in 0..2 {
            let g = Tensor::scalar(2.0 * x.item());
            adam.step(&mut [&mut x], &[g], &names()).unwrap();
            let fx = x.item() * x.item();
            assert!(fx < f);
            f = fx;
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::vector(vec![1.0, 2.0]);
        let mut adam = AdamState::new(AdamConfig::default(), &[&a, &b]);
        let err = adam
            .step(
                &mut [&mut a, &mut b],
                &[Tensor::scalar(1.0), Tensor::vector(vec![0.0, f64::NAN])],
                &["shape.0.weight".into(), "brdf.3.bias".into()],
            )
            .unwrap_err();
        assert!(matches!(&err, TrainError::NonFiniteGradient { parameter } if parameter == "brdf.3.bias"));
        assert_eq!(adam.step, 0);
        assert_eq!(a.item(), 1.0);
    }
}
