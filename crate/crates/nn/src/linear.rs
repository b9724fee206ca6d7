use rand::Rng;

use crate::gemm::gemm;
use crate::init;
use crate::layer::{join, take_cache, Ctx, Layer, LayerDesc, LayerKind};
use crate::param::Param;
use crate::tensor::Tensor;

/// Fully connected layer, `y = x Wᵀ + b` with `W` stored `[out, in]`.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor>,
}

impl Linear {
    /// Uniform fan-in initialisation, zero bias.
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let weight = init::uniform_fan_in(&[out_features, in_features], in_features, rng);
        Self::from_weight(weight, out_features, in_features)
    }

    /// He-normal (fan-out) weights stored as a `[out, in, 1, 1]` kernel, the
    /// layout of a pointwise convolution applied to a `1 × 1` map.
    pub fn pointwise<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let weight = init::kaiming_normal(&[out_features, in_features, 1, 1], out_features, rng);
        Self::from_weight(weight, out_features, in_features)
    }

    fn from_weight(weight: Tensor, out_features: usize, in_features: usize) -> Self {
        Self {
            weight: Param::trainable(weight),
            bias: Param::trainable(Tensor::zeros(&[out_features])),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    fn run(&self, x: &Tensor) -> Tensor {
        let (n, f) = x.dims2();
        assert_eq!(f, self.in_features, "linear input width mismatch");
        let mut y = Tensor::zeros(&[n, self.out_features]);
        gemm(
            false,
            true,
            n,
            self.out_features,
            self.in_features,
            1.0,
            x.data(),
            self.weight.value.data(),
            0.0,
            y.data_mut(),
        );
        let b = self.bias.value.data();
        for row in y.data_mut().chunks_mut(self.out_features) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        y
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let y = self.run(&x);
        if ctx.cache {
            self.input = Some(x);
        }
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = take_cache(&mut self.input, "linear");
        let (n, _) = x.dims2();
        gemm(
            true,
            false,
            self.out_features,
            self.in_features,
            n,
            1.0,
            grad.data(),
            x.data(),
            1.0,
            &mut self.weight.grad,
        );
        for row in grad.data().chunks(self.out_features) {
            for (b, &g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, self.in_features]);
        gemm(
            false,
            false,
            n,
            self.in_features,
            self.out_features,
            1.0,
            grad.data(),
            self.weight.value.data(),
            0.0,
            dx.data_mut(),
        );
        dx
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.run(&x)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::Linear {
                in_features: self.in_features,
                out_features: self.out_features,
                bias: true,
            },
            input: input.to_vec(),
            output: vec![self.out_features],
            params: self.weight.len() + self.bias.len(),
        });
        vec![self.out_features]
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` during
/// training; identity at inference.
pub struct Dropout {
    rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate, mask: None }
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }
}

impl Layer for Dropout {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Tensor {
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.len())
            .map(|_| {
                if ctx.rng.random::<f32>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        if ctx.cache {
            self.mask = Some(mask);
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let mask = take_cache(&mut self.mask, "dropout");
        for (g, &m) in grad.data_mut().iter_mut().zip(&mask) {
            *g *= m;
        }
        grad
    }

    fn infer(&self, x: Tensor) -> Tensor {
        x
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::Dropout { rate: self.rate },
            input: input.to_vec(),
            output: input.to_vec(),
            params: 0,
        });
        input.to_vec()
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_matches_matrix_vector_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = Linear::new(3, 2, &mut rng);
        let x = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]);
        let y = lin.infer(x);
        let w = lin.weight.value.data();
        for o in 0..2 {
            let want = w[o * 3] - 2.0 * w[o * 3 + 1] + 0.5 * w[o * 3 + 2];
            assert!((y.data()[o] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::new(6, 4, &mut rng);
        let x = random_tensor(&[3, 6], &mut rng);
        check_gradients(&mut lin, x, &mut rng, 2e-3);
    }

    #[test]
    fn dropout_masks_repeat_for_equal_seeds() {
        let x = Tensor::full(&[4, 64], 1.0);
        let mut a = Dropout::new(0.2);
        let mut b = Dropout::new(0.2);
        let ya = a.forward(x.clone(), &mut Ctx::train(11));
        let yb = b.forward(x.clone(), &mut Ctx::train(11).no_cache());
        assert_eq!(ya, yb);
        let dropped = ya.data().iter().filter(|v| **v == 0.0).count();
        assert!(dropped > 20 && dropped < 80, "dropped {dropped} of 256");
        assert!(ya.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-6));
        assert_eq!(a.infer(x.clone()), x);
    }
}
