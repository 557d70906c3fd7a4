use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mlp::Gradient;
use super::params::{Layout, ParameterSet};
use crate::error::Result;

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: ParameterSet,
    v: ParameterSet,
    t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(layout: Arc<Layout>, learning_rate: f64) -> Self {
        Self {
            m: ParameterSet::zeros(Arc::clone(&layout)),
            v: ParameterSet::zeros(layout),
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParameterSet, grad: &Gradient) -> Result<()> {
        let g = grad.params();
        params.check_layout(g)?;
        params.check_layout(&self.m)?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let lr = self.learning_rate;
        let eps = self.eps_hat;
        let m = self.m.values_mut();
        let v = self.v.values_mut();
        for (((p, &g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
    },
    /// Plain gradient descent, `θ ← θ − lr·g`.
    Sgd {
        lr: f64,
    },
}

impl OptimizerKind {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr } | OptimizerKind::Sgd { lr } => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, layout: Arc<Layout>) -> Self {
        match kind {
            OptimizerKind::Adam { lr } => Optimizer::Adam(AdamState::new(layout, lr)),
            OptimizerKind::Sgd { lr } => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grad: &Gradient) -> Result<()> {
        match self {
            Optimizer::Adam(state) => state.step(params, grad),
            Optimizer::Sgd { lr } => params.add_scaled(grad.params(), -*lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParameterSet {
        ParameterSet::flat(vec![v])
    }

    #[test]
    fn zero_gradient_leaves_params_and_advances_t() {
        let mut p = ParameterSet::flat(vec![0.25, -1.5]);
        let before = p.clone();
        let mut s = AdamState::new(Arc::clone(p.layout()), 0.001);
        let g = Gradient::new(ParameterSet::zeros(Arc::clone(p.layout())));
        s.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(Arc::clone(p.layout()), 0.001);
        s.step(&mut p, &Gradient::new(scalar(0.1))).unwrap();
        // m_hat = 0.1, v_hat = 0.01, so the step is lr * 0.1 / (0.1 + 1e-8)
        let expected = 1.0 - 0.001 * 0.1 / (0.1 + 1e-8);
        assert!((p.values()[0] - expected).abs() < 1e-15);
        assert!((1.0 - p.values()[0] - 0.001).abs() < 1e-9);
    }

    #[test]
    fn equal_gradients_give_equal_updates() {
        let mut p = ParameterSet::flat(vec![0.0, 0.0]);
        let mut s = AdamState::new(Arc::clone(p.layout()), 0.01);
        for _ in 0..5 {
            s.step(&mut p, &Gradient::new(ParameterSet::flat(vec![0.3, 0.3])))
                .unwrap();
        }
        assert_eq!(p.values()[0], p.values()[1]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(Arc::clone(p.layout()), 0.001);
        let g = Gradient::new(ParameterSet::flat(vec![0.0, 0.0]));
        assert!(s.step(&mut p, &g).is_err());
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut p = ParameterSet::flat(vec![1.0, 2.0]);
        let mut o = Optimizer::new(OptimizerKind::Sgd { lr: 0.5 }, Arc::clone(p.layout()));
        o.step(&mut p, &Gradient::new(ParameterSet::flat(vec![2.0, -2.0])))
            .unwrap();
        assert_eq!(p.values(), &[0.0, 3.0]);
    }
}
