use std::collections::BTreeMap;

use crate::layer::Layer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// L2 penalty added to the gradient (coupled, as in `torch.optim.Adam`).
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// A learning rate applied to every parameter whose name `member` accepts.
pub struct ParamGroup<'a> {
    pub lr: f32,
    pub member: &'a dyn Fn(&str) -> bool,
}

#[derive(Default)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam with per-group learning rates. Moment buffers are keyed by
/// parameter name.
pub struct Adam {
    cfg: AdamConfig,
    step: u32,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Apply one update to every trainable parameter of `net` and zero its
    /// gradient. Panics if a trainable parameter belongs to no group.
    pub fn step(&mut self, net: &mut dyn Layer, groups: &[ParamGroup<'_>]) {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
        let state = &mut self.state;
        net.visit_mut("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let lr = groups
                .iter()
                .find(|g| (g.member)(name))
                .unwrap_or_else(|| panic!("parameter {name} is in no optimizer group"))
                .lr;
            let mom = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            let step_size = lr / bc1;
            let values = p.value.data_mut();
            for (((x, &dx), m), v) in values.iter_mut().zip(&p.grad).zip(&mut mom.m).zip(&mut mom.v) {
                let g = dx + weight_decay * *x;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let denom = v.sqrt() / bc2_sqrt + eps;
                *x -= step_size * *m / denom;
            }
            p.zero_grad();
        });
    }
}

pub fn zero_grad(net: &mut dyn Layer) {
    net.visit_mut("", &mut |_, p| p.zero_grad());
}
