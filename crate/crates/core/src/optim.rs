//! Adam. Embedding tables are updated lazily: only rows with a gradient in
//! the current step have their moments decayed and their values moved.
//! The small dense matrices are updated in full every step.

use alloc::vec;
use alloc::vec::Vec;

use crate::gradients::{GradientSet, RowGrad};
use crate::math;
use crate::model::BranchParameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for every tensor of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: [Vec<f64>; 5],
    second: [Vec<f64>; 5],
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &BranchParameters) -> Self {
        let shapes = params.tensors().map(|t| t.len());
        Self {
            config,
            step: 0,
            first: shapes.map(|n| vec![0.0; n]),
            second: shapes.map(|n| vec![0.0; n]),
        }
    }

    /// One Adam step. With `clip`, every moved embedding row is projected
    /// back onto the unit ball.
    pub fn step(&mut self, params: &mut BranchParameters, grads: &GradientSet, clip: bool) {
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bias2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let dim = params.dim;
        let [users, items, attention, mean, std] = params.tensors_mut();
        let [m0, m1, m2, m3, m4] = &mut self.first;
        let [v0, v1, v2, v3, v4] = &mut self.second;

        let update = |theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..theta.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                theta[i] -= c.learning_rate * m_hat / (libm::sqrt(v_hat) + c.epsilon);
            }
        };
        let sparse = |table: &mut [f64], m: &mut [f64], v: &mut [f64], g: &RowGrad| {
            for &r in g.touched() {
                let span = r * dim..(r + 1) * dim;
                update(&mut table[span.clone()], &mut m[span.clone()], &mut v[span.clone()], g.row(r));
                if clip {
                    math::clip_to_unit_ball(&mut table[span]);
                }
            }
        };
        sparse(users, m0, v0, &grads.user_embeddings);
        sparse(items, m1, v1, &grads.item_embeddings);
        update(attention, m2, v2, &grads.attention);
        update(mean, m3, v3, &grads.aspect_mean);
        update(std, m4, v4, &grads.aspect_std);
    }
}

/// Adam over a bare pair of embedding tables (used by the CML baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct TableAdam {
    pub config: AdamConfig,
    pub step: u64,
    dim: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl TableAdam {
    pub fn new(config: AdamConfig, len: usize, dim: usize) -> Self {
        Self {
            config,
            step: 0,
            dim,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    /// Lazy update of the rows touched in `grads`. The step counter is
    /// owned by the caller so that several tables share one clock.
    pub fn apply(&mut self, step: u64, table: &mut [f64], grads: &RowGrad, clip: bool) {
        let c = self.config;
        let bias1 = 1.0 - libm::pow(c.beta1, step as f64);
        let bias2 = 1.0 - libm::pow(c.beta2, step as f64);
        for &r in grads.touched() {
            let g = grads.row(r);
            for (k, &gk) in g.iter().enumerate() {
                let i = r * self.dim + k;
                self.first[i] = c.beta1 * self.first[i] + (1.0 - c.beta1) * gk;
                self.second[i] = c.beta2 * self.second[i] + (1.0 - c.beta2) * gk * gk;
                table[i] -=
                    c.learning_rate * (self.first[i] / bias1) / (libm::sqrt(self.second[i] / bias2) + c.epsilon);
            }
            if clip {
                math::clip_to_unit_ball(&mut table[r * self.dim..(r + 1) * self.dim]);
            }
        }
        self.step = step;
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::BranchTag;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = BranchParameters::zeros(BranchTag::Conventional, 2, 2, 2, 1);
        let mut g = GradientSet::zeros_like(&p);
        g.user_embeddings.row_mut(1).copy_from_slice(&[3.0, -0.5]);
        g.attention[0] = 2.0;
        let mut opt = OptimizerState::new(AdamConfig::default(), &p);
        opt.step(&mut p, &g, true);
        // m_hat = g, v_hat = g^2, so the step is lr * sign(g) up to epsilon
        assert_relative_eq!(p.user(1)[0], -5e-4, epsilon = 1e-10);
        assert_relative_eq!(p.user(1)[1], 5e-4, epsilon = 1e-10);
        assert_relative_eq!(p.attention[0], -5e-4, epsilon = 1e-10);
        assert_eq!(p.user(0), [0.0, 0.0]);
        assert_eq!(p.attention[1], 0.0);
    }

    #[test]
    fn zero_gradient_from_rest_is_a_fixed_point() {
        let mut p = BranchParameters::zeros(BranchTag::Adaptive, 3, 3, 2, 2);
        p.user_embeddings[0] = 0.5;
        p.aspect_std[1] = -0.2;
        let before = p.clone();
        let g = GradientSet::zeros_like(&p);
        let mut opt = OptimizerState::new(AdamConfig::default(), &p);
        opt.step(&mut p, &g, true);
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_keeps_rows_in_the_unit_ball() {
        let mut p = BranchParameters::zeros(BranchTag::Conventional, 1, 1, 2, 1);
        p.item_embeddings = vec![0.8, 0.6];
        let mut g = GradientSet::zeros_like(&p);
        g.item_embeddings.row_mut(0).copy_from_slice(&[-1.0, -1.0]);
        let config = AdamConfig {
            learning_rate: 0.5,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(config, &p);
        opt.step(&mut p, &g, true);
        assert!(p.max_embedding_norm() <= 1.0 + 1e-12);
    }
}
