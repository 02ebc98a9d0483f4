//! Adam optimizer over flat parameter buffers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes` gives the length of each parameter tensor.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Non-finite gradients are rejected before any
    /// state changes.
    pub fn step<P, G>(&mut self, params: &mut [P], grads: &[G]) -> Result<()>
    where
        P: AsMut<[f32]>,
        G: AsRef<[f32]>,
    {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (p, g) = (p.as_mut(), g.as_ref());
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i} length changed")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {i} is not finite")));
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(beta1, f64::from(t));
        let c2 = 1.0 - libm::pow(beta2, f64::from(t));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, gv)) in p.as_mut().iter_mut().zip(g.as_ref()).enumerate() {
                let g = f64::from(*gv);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let update = learning_rate * (m[j] / c1) / (libm::sqrt(v[j] / c2) + epsilon);
                *pv = (f64::from(*pv) - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_step(p: f64, g: f64, m: &mut f64, v: &mut f64, t: i32, c: &AdamConfig) -> f64 {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let mh = *m / (1.0 - c.beta1.powi(t));
        let vh = *v / (1.0 - c.beta2.powi(t));
        p - c.learning_rate * mh / (vh.sqrt() + c.epsilon)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]).unwrap();
        let mut p = vec![vec![1.0f32, -1.0]];
        adam.step(&mut p, &[vec![0.5f32, -3.0]]).unwrap();
        assert!((p[0][0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((p[0][1] - (-1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn matches_scalar_reference() {
        let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg, &[1]).unwrap();
        let mut p = vec![vec![0.3f32]];
        let (mut rp, mut m, mut v) = (0.3f64, 0.0, 0.0);
        for t in 1..=20 {
            let g = (t as f64 * 0.7).sin();
            adam.step(&mut p, &[vec![g as f32]]).unwrap();
            rp = reference_step(rp, f64::from(g as f32), &mut m, &mut v, t, &cfg);
            assert!((f64::from(p[0][0]) - rp).abs() < 1e-6);
        }
        assert_eq!(adam.steps_taken(), 20);
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_parameters() {
        let mut adam = Adam::new(AdamConfig::default(), &[3]).unwrap();
        let mut p = vec![vec![0.25f32, -4.0, 7.5]];
        adam.step(&mut p, &[vec![0.0f32; 3]]).unwrap();
        assert_eq!(p[0], [0.25, -4.0, 7.5]);
    }

    #[test]
    fn zero_gradient_after_history_keeps_momentum() {
        let mut adam = Adam::new(AdamConfig::default(), &[1]).unwrap();
        let mut p = vec![vec![0.0f32]];
        adam.step(&mut p, &[vec![1.0f32]]).unwrap();
        let before = p[0][0];
        adam.step(&mut p, &[vec![0.0f32]]).unwrap();
        assert!(p[0][0] < before);
    }

    #[test]
    fn rejects_nan_without_mutation() {
        let mut adam = Adam::new(AdamConfig::default(), &[1]).unwrap();
        let mut p = vec![vec![1.0f32]];
        let err = adam.step(&mut p, &[vec![f32::NAN]]).unwrap_err();
        assert_eq!(err.kind(), "non-finite");
        assert_eq!(p[0][0], 1.0);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        assert!(Adam::new(AdamConfig { learning_rate: 0.0, ..AdamConfig::default() }, &[1]).is_err());
        assert!(Adam::new(AdamConfig { beta1: 1.0, ..AdamConfig::default() }, &[1]).is_err());
        let mut adam = Adam::new(AdamConfig::default(), &[2]).unwrap();
        let mut p = vec![vec![1.0f32]];
        assert_eq!(adam.step(&mut p, &[vec![1.0f32]]).unwrap_err().kind(), "shape");
    }
}
