use crate::layer::{take_cache, Ctx, Layer, LayerDesc, LayerKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Relu,
    Hardswish,
    Hardsigmoid,
}

impl Act {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Act::Relu => x.max(0.0),
            Act::Hardswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
            Act::Hardsigmoid => (x + 3.0).clamp(0.0, 6.0) / 6.0,
        }
    }

    /// Derivative at `x`, using the same one-sided choices as PyTorch at
    /// the kinks.
    #[inline]
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Act::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Hardswish => {
                if x < -3.0 {
                    0.0
                } else if x <= 3.0 {
                    x / 3.0 + 0.5
                } else {
                    1.0
                }
            }
            Act::Hardsigmoid => {
                if x > -3.0 && x < 3.0 {
                    1.0 / 6.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Element-wise activation.
pub struct Activation {
    act: Act,
    input: Option<Tensor>,
}

impl Activation {
    pub fn new(act: Act) -> Self {
        Self { act, input: None }
    }

    pub fn act(&self) -> Act {
        self.act
    }
}

impl Layer for Activation {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let y = self.infer_ref(&x);
        if ctx.cache {
            self.input = Some(x);
        }
        y
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let x = take_cache(&mut self.input, "activation");
        let act = self.act;
        for (g, &v) in grad.data_mut().iter_mut().zip(x.data()) {
            *g *= act.derivative(v);
        }
        grad
    }

    fn infer(&self, mut x: Tensor) -> Tensor {
        let act = self.act;
        x.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        x
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::Activation(self.act),
            input: input.to_vec(),
            output: input.to_vec(),
            params: 0,
        });
        input.to_vec()
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

impl Activation {
    fn infer_ref(&self, x: &Tensor) -> Tensor {
        let act = self.act;
        let data = x.data().iter().map(|&v| act.apply(v)).collect();
        Tensor::from_vec(x.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hardswish_reference_points() {
        assert_eq!(Act::Hardswish.apply(-4.0), 0.0);
        assert_eq!(Act::Hardswish.apply(4.0), 4.0);
        assert!((Act::Hardswish.apply(1.0) - 4.0 / 6.0).abs() < 1e-7);
        assert_eq!(Act::Hardsigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn derivatives_match_finite_differences_away_from_kinks() {
        for act in [Act::Relu, Act::Hardswish, Act::Hardsigmoid] {
            for &x in &[-5.0f32, -2.0, -0.7, 0.4, 1.9, 5.0] {
                let h = 1e-2;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-3, "{act:?} at {x}");
            }
        }
    }
}
