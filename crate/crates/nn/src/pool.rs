use crate::layer::{take_cache, Ctx, Layer, LayerDesc, LayerKind};
use crate::tensor::Tensor;

/// Max pooling with implicit `-inf` padding.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<usize>, Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Pooled output plus, per output cell, the flat in-plane index of the
    /// winning input.
    fn run(&self, x: &Tensor) -> (Tensor, Vec<u32>) {
        let (n, c, h, w) = x.dims4();
        let (ho, wo) = self.out_hw(h, w);
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        let mut arg = vec![0u32; n * c * ho * wo];
        for (plane_idx, (src, dst)) in x
            .data()
            .chunks(h * w)
            .zip(y.data_mut().chunks_mut(ho * wo))
            .enumerate()
        {
            let args = &mut arg[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..k {
                        let iy = oy as isize * s + ky - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize * s + kx - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            let v = src[idx];
                            if best_idx == usize::MAX || v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    dst[oy * wo + ox] = best;
                    args[oy * wo + ox] = best_idx as u32;
                }
            }
        }
        (y, arg)
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let (y, arg) = self.run(&x);
        if ctx.cache {
            self.cache = Some((x.shape().to_vec(), arg));
        }
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let (shape, arg) = take_cache(&mut self.cache, "max pool");
        let plane = shape[2] * shape[3];
        let mut dx = Tensor::zeros(&shape);
        let (_, _, ho, wo) = grad.dims4();
        for (plane_idx, (g, d)) in grad
            .data()
            .chunks(ho * wo)
            .zip(dx.data_mut().chunks_mut(plane))
            .enumerate()
        {
            let args = &arg[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
            for (&gv, &a) in g.iter().zip(args) {
                d[a as usize] += gv;
            }
        }
        dx
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.run(&x).0
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let (ho, wo) = self.out_hw(input[1], input[2]);
        let output = vec![input[0], ho, wo];
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::MaxPool {
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
            },
            input: input.to_vec(),
            output: output.clone(),
            params: 0,
        });
        output
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Spatial mean: `[N, C, H, W] -> [N, C]`.
#[derive(Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        if ctx.cache {
            self.input_shape = Some(x.shape().to_vec());
        }
        self.infer(x)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = take_cache(&mut self.input_shape, "global average pool");
        let plane = shape[2] * shape[3];
        let scale = 1.0 / plane as f32;
        let mut dx = Tensor::zeros(&shape);
        for (d, &g) in dx.data_mut().chunks_mut(plane).zip(grad.data()) {
            d.iter_mut().for_each(|v| *v = g * scale);
        }
        dx
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let data = x
            .data()
            .chunks(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        Tensor::from_vec(&[n, c], data)
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::GlobalAvgPool,
            input: input.to_vec(),
            output: vec![input[0]],
            params: 0,
        });
        vec![input[0]]
    }

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}
