use rand::Rng;

use crate::activation::{Act, Activation};
use crate::layer::{join, take_cache, Ctx, Layer, LayerDesc, LayerKind};
use crate::linear::Linear;
use crate::param::Param;
use crate::pool::GlobalAvgPool;
use crate::tensor::Tensor;

/// Squeeze-and-excitation gate: `x * hardsigmoid(fc2(relu(fc1(gap(x)))))`.
pub struct SqueezeExcite {
    pool: GlobalAvgPool,
    fc1: Linear,
    relu: Activation,
    fc2: Linear,
    gate: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl SqueezeExcite {
    pub fn new<R: Rng>(channels: usize, squeeze: usize, rng: &mut R) -> Self {
        Self {
            pool: GlobalAvgPool::new(),
            fc1: Linear::pointwise(channels, squeeze, rng),
            relu: Activation::new(Act::Relu),
            fc2: Linear::pointwise(squeeze, channels, rng),
            gate: Activation::new(Act::Hardsigmoid),
            cache: None,
        }
    }

    fn scale(x: &mut Tensor, gate: &Tensor) {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        for i in 0..n {
            let g = gate.sample(i);
            for (ch, p) in x.sample_mut(i).chunks_mut(plane).enumerate().take(c) {
                let gv = g[ch];
                p.iter_mut().for_each(|v| *v *= gv);
            }
        }
    }
}

impl Layer for SqueezeExcite {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let s = self.pool.forward(x.clone(), ctx);
        let s = self.fc1.forward(s, ctx);
        let s = self.relu.forward(s, ctx);
        let s = self.fc2.forward(s, ctx);
        let gate = self.gate.forward(s, ctx);
        let mut y = x.clone();
        Self::scale(&mut y, &gate);
        if ctx.cache {
            self.cache = Some((x, gate));
        }
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let (x, gate) = take_cache(&mut self.cache, "squeeze-excite");
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let mut dgate = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let gi = grad.sample(i);
            let xi = x.sample(i);
            let dg = dgate.sample_mut(i);
            for (ch, slot) in dg.iter_mut().enumerate() {
                let r = ch * plane..(ch + 1) * plane;
                *slot = gi[r.clone()]
                    .iter()
                    .zip(&xi[r])
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>() as f32;
            }
        }
        let d = self.gate.backward(dgate);
        let d = self.fc2.backward(d);
        let d = self.relu.backward(d);
        let d = self.fc1.backward(d);
        let mut dx = self.pool.backward(d);
        let mut direct = grad;
        Self::scale(&mut direct, &gate);
        dx.add_assign(&direct);
        dx
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let s = self.pool.infer(x.clone());
        let s = self.fc1.infer(s);
        let s = self.relu.infer(s);
        let s = self.fc2.infer(s);
        let gate = self.gate.infer(s);
        let mut y = x;
        Self::scale(&mut y, &gate);
        y
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let pooled = self.pool.describe(&join(name, "avgpool"), input, out);
        let s = self.fc1.describe(&join(name, "fc1"), &pooled, out);
        let s = self.relu.describe(&join(name, "relu"), &s, out);
        let s = self.fc2.describe(&join(name, "fc2"), &s, out);
        self.gate.describe(&join(name, "gate"), &s, out);
        out.push(LayerDesc {
            name: join(name, "scale"),
            kind: LayerKind::ChannelScale,
            input: input.to_vec(),
            output: input.to_vec(),
            params: 0,
        });
        input.to_vec()
    }

    fn clear_cache(&mut self) {
        self.cache = None;
        self.pool.clear_cache();
        self.fc1.clear_cache();
        self.relu.clear_cache();
        self.fc2.clear_cache();
        self.gate.clear_cache();
    }
}
