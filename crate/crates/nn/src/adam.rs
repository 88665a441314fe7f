//! Bias-corrected Adam.

use crate::params::Params;
use crate::{Matrix, NnError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new<P: Params>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Matrix> = params
            .blocks()
            .iter()
            .map(|b| Matrix::zeros(b.rows(), b.cols()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step along `grads`. Parameters are untouched if any
    /// gradient entry is non-finite.
    pub fn update<P: Params>(&mut self, params: &mut P, grads: &P) -> Result<(), NnError> {
        let named = grads.named_blocks();
        if let Some((name, _)) = named.iter().find(|(_, g)| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { block: name.clone() });
        }
        let grads: Vec<&Matrix> = named.into_iter().map(|(_, g)| g).collect();
        let mut blocks = params.blocks_mut();
        assert_eq!(blocks.len(), self.m.len(), "parameter block count changed");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in blocks.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
