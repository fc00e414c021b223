//! Adam with decoupled weight decay, global-norm clipping and a milestone schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::nn::Parameterized;
use super::Tensor;
use crate::error::{Error, Result};

/// Optimizer hyperparameters. Defaults follow the reference training table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    /// Epoch indices at which the learning rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            milestones: vec![1, 10, 25, 40],
            decay_factor: 0.5,
            weight_decay: 1e-5,
            clip_norm: 3.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0 < self.decay_factor && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must lie in (0, 1] so the learning rate never grows, got {}",
                self.decay_factor
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub epoch: usize,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            epoch: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at_epoch(self.epoch)
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }
}

/// Rescales every gradient by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. Returns the norm measured before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One Adam step over every trainable tensor of `model`.
///
/// Gradients are clipped first, then the bias-corrected Adam direction and a decoupled
/// weight decay `p -= lr * wd * p` are applied. Tensors without a gradient entry only
/// receive weight decay when they require gradients.
pub fn adam_step(
    model: &mut dyn Parameterized,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    let mut grads = grads.clone();
    clip_global_norm(&mut grads, state.config.clip_norm);

    let mut shape_err = None;
    model.visit_params(&mut |name, t| {
        if let Some(g) = grads.get(name) {
            if g.shape() != t.shape() {
                shape_err.get_or_insert(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    t.shape()
                ));
            }
        }
    });
    if let Some(e) = shape_err {
        return Err(Error::Argument(e));
    }

    state.step += 1;
    let cfg = state.config.clone();
    let lr = state.lr();
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (m_all, v_all) = (&mut state.first_moment, &mut state.second_moment);

    model.visit_params_mut(&mut |name, p| {
        if !p.requires_grad() {
            return;
        }
        let n = p.len();
        let m = m_all
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = v_all
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let g = grads.get(name);
        let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.data_mut());
        for i in 0..n {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * pd[i]);
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::nn::Parameterized;

    struct Single(Tensor);

    impl Parameterized for Single {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("p", &self.0);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("p", &mut self.0);
        }
    }

    fn grads(v: Vec<f64>) -> Gradients {
        let mut g = Gradients::new();
        let n = v.len();
        g.insert("p".into(), Tensor::new(vec![n], v).unwrap());
        g
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut model = Single(Tensor::vector(vec![2.0, -4.0]).with_requires_grad(true));
        let mut st = OptimizerState::new(OptimizerConfig::default());
        adam_step(&mut model, &grads(vec![0.0, 0.0]), &mut st).unwrap();
        let shrink = 1.0 - 1e-3 * 1e-5;
        assert!((model.0.data()[0] - 2.0 * shrink).abs() < 1e-15);
        assert!((model.0.data()[1] + 4.0 * shrink).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn clipping_halves_norm_six() {
        let mut g = grads(vec![0.0, 6.0]);
        let n = clip_global_norm(&mut g, 3.0);
        assert_eq!(n, 6.0);
        assert_eq!(g["p"].data(), &[0.0, 3.0]);
        let mut small = grads(vec![1.0, 1.0]);
        clip_global_norm(&mut small, 3.0);
        assert_eq!(small["p"].data(), &[1.0, 1.0]);
    }

    /// Textbook scalar Adam, written independently of the tensor implementation.
    fn scalar_adam(p0: f64, g: f64, steps: usize, lr: f64, wd: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        let mut out = Vec::new();
        for t in 1..=steps {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            p = p - lr * mh / (vh.sqrt() + eps) - lr * wd * p;
            out.push(p);
        }
        out
    }

    #[test]
    fn matches_scalar_reference_over_three_steps() {
        let reference = scalar_adam(0.5, 0.25, 3, 1e-3, 1e-5);
        let mut model = Single(Tensor::vector(vec![0.5]).with_requires_grad(true));
        let cfg = OptimizerConfig {
            milestones: vec![],
            ..OptimizerConfig::default()
        };
        let mut st = OptimizerState::new(cfg);
        for r in reference {
            adam_step(&mut model, &grads(vec![0.25]), &mut st).unwrap();
            assert!(
                (model.0.data()[0] - r).abs() < 1e-15,
                "{} vs {r}",
                model.0.data()[0]
            );
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut model = Single(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
        let mut st = OptimizerState::new(OptimizerConfig::default());
        assert!(matches!(
            adam_step(&mut model, &grads(vec![1.0]), &mut st),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn schedule_is_non_increasing() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cfg.lr_at_epoch(0), 1e-3);
        assert_eq!(cfg.lr_at_epoch(1), 5e-4);
        assert_eq!(cfg.lr_at_epoch(9), 5e-4);
        assert_eq!(cfg.lr_at_epoch(10), 2.5e-4);
        let lrs: Vec<f64> = (0..60).map(|e| cfg.lr_at_epoch(e)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(OptimizerConfig {
            decay_factor: 1.5,
            ..cfg
        }
        .validate()
        .is_err());
    }
}
