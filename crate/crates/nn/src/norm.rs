use crate::layer::{join, take_cache, Ctx, Layer, LayerDesc, LayerKind};
use crate::param::Param;
use crate::tensor::Tensor;

struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

/// 2-d batch normalisation with PyTorch's conventions: biased variance for
/// normalising, unbiased variance folded into the running estimate with
/// weight `momentum`.
pub struct BatchNorm2d {
    pub weight: Param,
    pub bias: Param,
    pub running_mean: Param,
    pub running_var: Param,
    channels: usize,
    eps: f32,
    momentum: f32,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize, eps: f32, momentum: f32) -> Self {
        Self {
            weight: Param::trainable(Tensor::full(&[channels], 1.0)),
            bias: Param::trainable(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::full(&[channels], 1.0)),
            channels,
            eps,
            momentum,
            cache: None,
        }
    }

    pub fn eps(&self) -> f32 {
        self.eps
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels, "batch norm channel mismatch");
        let plane = h * w;
        let count = n * plane;
        assert!(count > 1, "batch norm needs more than one value per channel");
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for i in 0..n {
            let xi = x.sample(i);
            for ch in 0..c {
                mean[ch] += xi[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for i in 0..n {
            let xi = x.sample(i);
            for ch in 0..c {
                let m = mean[ch];
                var[ch] += xi[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - m;
                        d * d
                    })
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);

        if ctx.update_stats {
            let mo = ctx.bn_momentum.unwrap_or(self.momentum);
            let unbias = count as f64 / (count - 1) as f64;
            let rm = self.running_mean.value.data_mut();
            for ch in 0..c {
                rm[ch] = (1.0 - mo) * rm[ch] + mo * mean[ch] as f32;
            }
            let rv = self.running_var.value.data_mut();
            for ch in 0..c {
                rv[ch] = (1.0 - mo) * rv[ch] + mo * (var[ch] * unbias) as f32;
            }
        }

        let inv_std: Vec<f32> = var
            .iter()
            .map(|&v| (1.0 / (v + self.eps as f64).sqrt()) as f32)
            .collect();
        let gamma = self.weight.value.data();
        let beta = self.bias.value.data();
        let mut xhat = if ctx.cache {
            Some(Tensor::zeros(x.shape()))
        } else {
            None
        };
        for i in 0..n {
            let xi = x.sample_mut(i);
            for ch in 0..c {
                let (m, s) = (mean[ch] as f32, inv_std[ch]);
                let (g, b) = (gamma[ch], beta[ch]);
                let slice = &mut xi[ch * plane..(ch + 1) * plane];
                if let Some(xh) = xhat.as_mut() {
                    let dst = &mut xh.sample_mut(i)[ch * plane..(ch + 1) * plane];
                    for (v, d) in slice.iter_mut().zip(dst) {
                        let nv = (*v - m) * s;
                        *d = nv;
                        *v = g * nv + b;
                    }
                } else {
                    for v in slice.iter_mut() {
                        *v = g * ((*v - m) * s) + b;
                    }
                }
            }
        }
        if let Some(xhat) = xhat {
            self.cache = Some(BnCache { xhat, inv_std });
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let BnCache { xhat, inv_std } = take_cache(&mut self.cache, "batch norm");
        let (n, c, h, w) = grad.dims4();
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for i in 0..n {
            let gi = grad.sample(i);
            let xi = xhat.sample(i);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                for (&g, &x) in gi[r.clone()].iter().zip(&xi[r]) {
                    sg += g as f64;
                    sgx += (g * x) as f64;
                }
                dbeta[ch] += sg;
                dgamma[ch] += sgx;
            }
        }
        let gamma = self.weight.value.data();
        for i in 0..n {
            let xi = xhat.sample(i);
            let gi = grad.sample_mut(i);
            for ch in 0..c {
                let k = gamma[ch] * inv_std[ch];
                let mb = (dbeta[ch] / count) as f32;
                let mg = (dgamma[ch] / count) as f32;
                let r = ch * plane..(ch + 1) * plane;
                for (g, &x) in gi[r.clone()].iter_mut().zip(&xi[r]) {
                    *g = k * (*g - mb - x * mg);
                }
            }
        }
        for ch in 0..c {
            self.weight.grad[ch] += dgamma[ch] as f32;
            self.bias.grad[ch] += dbeta[ch] as f32;
        }
        grad
    }

    fn infer(&self, mut x: Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels, "batch norm channel mismatch");
        let plane = h * w;
        let gamma = self.weight.value.data();
        let beta = self.bias.value.data();
        let rm = self.running_mean.value.data();
        let rv = self.running_var.value.data();
        let (scale, shift): (Vec<f32>, Vec<f32>) = (0..c)
            .map(|ch| {
                let s = gamma[ch] / (rv[ch] + self.eps).sqrt();
                (s, beta[ch] - rm[ch] * s)
            })
            .unzip();
        for i in 0..n {
            let xi = x.sample_mut(i);
            for ch in 0..c {
                let (s, b) = (scale[ch], shift[ch]);
                xi[ch * plane..(ch + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * s + b);
            }
        }
        x
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::BatchNorm {
                channels: self.channels,
            },
            input: input.to_vec(),
            output: input.to_vec(),
            params: 2 * self.channels,
        });
        input.to_vec()
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn training_output_is_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bn = BatchNorm2d::new(2, 1e-5, 0.1);
        let x = random_tensor(&[4, 2, 3, 3], &mut rng);
        let y = bn.forward(x, &mut Ctx::train(0).no_cache());
        for ch in 0..2 {
            let vals: Vec<f32> = (0..4)
                .flat_map(|i| y.sample(i)[ch * 9..(ch + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f32>() / vals.len() as f32;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / vals.len() as f32;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm2d::new(1, 1e-5, 0.1);
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        bn.forward(x, &mut Ctx::train(0).no_cache());
        assert!((bn.running_mean.value.data()[0] - 0.25).abs() < 1e-6);
        // unbiased variance of 1..4 is 5/3
        let want = 0.9 + 0.1 * 5.0 / 3.0;
        assert!((bn.running_var.value.data()[0] - want).abs() < 1e-6);
    }

    #[test]
    fn context_momentum_overrides_layer_momentum() {
        let mut bn = BatchNorm2d::new(1, 1e-5, 0.01);
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        bn.forward(x, &mut Ctx::train(0).no_cache().with_bn_momentum(Some(0.5)));
        assert!((bn.running_mean.value.data()[0] - 1.25).abs() < 1e-6);
    }

    #[test]
    fn frozen_stats_leave_buffers_alone() {
        let mut bn = BatchNorm2d::new(1, 1e-5, 0.1);
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        bn.forward(x, &mut Ctx::train(0).no_cache().frozen_stats());
        assert_eq!(bn.running_mean.value.data(), &[0.0]);
        assert_eq!(bn.running_var.value.data(), &[1.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm2d::new(3, 1e-5, 0.1);
        bn.weight
            .value
            .data_mut()
            .copy_from_slice(&[0.5, 1.5, -1.0]);
        bn.bias.value.data_mut().copy_from_slice(&[0.1, 0.0, -0.2]);
        let x = random_tensor(&[3, 3, 2, 3], &mut rng);
        check_gradients(&mut bn, x, &mut rng, 5e-3);
    }
}
