use rand::Rng;

use crate::gemm::gemm;
use crate::init;
use crate::layer::{join, take_cache, Ctx, Layer, LayerDesc, LayerKind};
use crate::param::Param;
use crate::tensor::Tensor;

fn out_size(len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(
        len + 2 * padding >= kernel,
        "input extent {len} smaller than kernel {kernel}"
    );
    (len + 2 * padding - kernel) / stride + 1
}

/// Range of output positions `o` whose input tap `o * stride + offset - padding`
/// lands inside `[0, len)`.
#[inline]
fn valid_range(
    out_len: usize,
    len: usize,
    stride: usize,
    tap: usize,
    padding: usize,
) -> (usize, usize) {
    let lo = if padding > tap {
        (padding - tap).div_ceil(stride)
    } else {
        0
    };
    let hi_incl = (len - 1 + padding) as isize - tap as isize;
    if hi_incl < 0 {
        return (0, 0);
    }
    let hi = (hi_incl as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Dense 2-d convolution (`groups = 1`) with square kernels.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    /// The network input needs no gradient; skip computing it.
    input_grad: bool,
    input: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let fan_out = out_channels * kernel * kernel;
        Self {
            weight: Param::trainable(init::kaiming_normal(&shape, fan_out, rng)),
            bias: bias.then(|| Param::trainable(Tensor::zeros(&[out_channels]))),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input_grad: true,
            input: None,
        }
    }

    /// Stop computing the gradient with respect to the input.
    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_size(h, self.kernel, self.stride, self.padding),
            out_size(w, self.kernel, self.stride, self.padding),
        )
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, col: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (ho, wo) = self.out_hw(h, w);
        col.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (oy0, oy1) = valid_range(ho, h, s, ky, p);
                for kx in 0..k {
                    let (ox0, ox1) = valid_range(wo, w, s, kx, p);
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let src = &plane[iy * w..(iy + 1) * w];
                        let d = &mut dst[oy * wo..(oy + 1) * wo];
                        for ox in ox0..ox1 {
                            d[ox] = src[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (ho, wo) = self.out_hw(h, w);
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (oy0, oy1) = valid_range(ho, h, s, ky, p);
                for kx in 0..k {
                    let (ox0, ox1) = valid_range(wo, w, s, kx, p);
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * ho * wo..(row + 1) * ho * wo];
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        for ox in ox0..ox1 {
                            plane[iy * w + ox * s + kx - p] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }

    fn run(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (ho, wo) = self.out_hw(h, w);
        let mut y = Tensor::zeros(&[n, self.out_channels, ho, wo]);
        let ckk = self.in_channels * self.kernel * self.kernel;
        let mut col = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; ckk * ho * wo]
        };
        for i in 0..n {
            let xi = x.sample(i);
            let rhs: &[f32] = if self.is_pointwise() {
                xi
            } else {
                self.im2col(xi, h, w, &mut col);
                &col
            };
            let yi = y.sample_mut(i);
            gemm(
                false,
                false,
                self.out_channels,
                ho * wo,
                ckk,
                1.0,
                self.weight.value.data(),
                rhs,
                0.0,
                yi,
            );
            if let Some(b) = &self.bias {
                for (co, plane) in yi.chunks_mut(ho * wo).enumerate() {
                    let bv = b.value.data()[co];
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        y
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let y = self.run(&x);
        if ctx.cache {
            self.input = Some(x);
        }
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = take_cache(&mut self.input, "conv2d");
        let (n, _, h, w) = x.dims4();
        let (ho, wo) = self.out_hw(h, w);
        let ckk = self.in_channels * self.kernel * self.kernel;
        let pointwise = self.is_pointwise();
        let mut dx = Tensor::zeros(if self.input_grad { x.shape() } else { &[0, 0, 0, 0] });
        let mut col = if pointwise {
            Vec::new()
        } else {
            vec![0.0; ckk * ho * wo]
        };
        for i in 0..n {
            let gi = grad.sample(i);
            let xi = x.sample(i);
            let rhs: &[f32] = if pointwise {
                xi
            } else {
                self.im2col(xi, h, w, &mut col);
                &col
            };
            gemm(
                false,
                true,
                self.out_channels,
                ckk,
                ho * wo,
                1.0,
                gi,
                rhs,
                1.0,
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                for (co, plane) in gi.chunks(ho * wo).enumerate() {
                    b.grad[co] += plane.iter().sum::<f32>();
                }
            }
            if !self.input_grad {
                continue;
            }
            if pointwise {
                gemm(
                    true,
                    false,
                    self.in_channels,
                    h * w,
                    self.out_channels,
                    1.0,
                    self.weight.value.data(),
                    gi,
                    0.0,
                    dx.sample_mut(i),
                );
            } else {
                gemm(
                    true,
                    false,
                    ckk,
                    ho * wo,
                    self.out_channels,
                    1.0,
                    self.weight.value.data(),
                    gi,
                    0.0,
                    &mut col,
                );
                self.col2im(&col, h, w, dx.sample_mut(i));
            }
        }
        dx
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.run(&x)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let (ho, wo) = self.out_hw(input[1], input[2]);
        let output = vec![self.out_channels, ho, wo];
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::Conv2d {
                in_channels: self.in_channels,
                out_channels: self.out_channels,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
                groups: 1,
                bias: self.bias.is_some(),
            },
            input: input.to_vec(),
            output: output.clone(),
            params: self.weight.len() + self.bias.as_ref().map_or(0, Param::len),
        });
        output
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Depthwise 2-d convolution (`groups = channels`), no bias.
pub struct DepthwiseConv2d {
    pub weight: Param,
    channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<Tensor>,
}

impl DepthwiseConv2d {
    /// Padding is `kernel / 2`.
    pub fn new<R: Rng>(channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let shape = [channels, 1, kernel, kernel];
        // PyTorch's fan-out for grouped weights counts the full leading axis.
        let fan_out = channels * kernel * kernel;
        Self {
            weight: Param::trainable(init::kaiming_normal(&shape, fan_out, rng)),
            channels,
            kernel,
            stride,
            padding: kernel / 2,
            input: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_size(h, self.kernel, self.stride, self.padding),
            out_size(w, self.kernel, self.stride, self.padding),
        )
    }

    fn run(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels, "depthwise conv channel mismatch");
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (ho, wo) = self.out_hw(h, w);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        let weights = self.weight.value.data();
        for i in 0..n {
            let xi = x.sample(i);
            let yi = y.sample_mut(i);
            for ch in 0..c {
                let src = &xi[ch * h * w..(ch + 1) * h * w];
                let dst = &mut yi[ch * ho * wo..(ch + 1) * ho * wo];
                let wk = &weights[ch * k * k..(ch + 1) * k * k];
                for ky in 0..k {
                    let (oy0, oy1) = valid_range(ho, h, s, ky, p);
                    for kx in 0..k {
                        let (ox0, ox1) = valid_range(wo, w, s, kx, p);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let wv = wk[ky * k + kx];
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let out_row = &mut dst[oy * wo + ox0..oy * wo + ox1];
                            let start = iy * w + ox0 * s + kx - p;
                            if s == 1 {
                                let in_row = &src[start..start + (ox1 - ox0)];
                                for (o, &v) in out_row.iter_mut().zip(in_row) {
                                    *o += wv * v;
                                }
                            } else {
                                let in_row = src[start..].iter().step_by(s);
                                for (o, &v) in out_row.iter_mut().zip(in_row) {
                                    *o += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }
}

impl Layer for DepthwiseConv2d {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let y = self.run(&x);
        if ctx.cache {
            self.input = Some(x);
        }
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = take_cache(&mut self.input, "depthwise conv");
        let (n, c, h, w) = x.dims4();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (ho, wo) = self.out_hw(h, w);
        let mut dx = Tensor::zeros(x.shape());
        let weights = self.weight.value.data();
        let wgrad = &mut self.weight.grad;
        for i in 0..n {
            let xi = x.sample(i);
            let gi = grad.sample(i);
            let dxi = dx.sample_mut(i);
            for ch in 0..c {
                let src = &xi[ch * h * w..(ch + 1) * h * w];
                let dsrc = &mut dxi[ch * h * w..(ch + 1) * h * w];
                let gout = &gi[ch * ho * wo..(ch + 1) * ho * wo];
                for ky in 0..k {
                    let (oy0, oy1) = valid_range(ho, h, s, ky, p);
                    for kx in 0..k {
                        let (ox0, ox1) = valid_range(wo, w, s, kx, p);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let widx = ch * k * k + ky * k + kx;
                        let wv = weights[widx];
                        let mut acc = 0.0f32;
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let g_row = &gout[oy * wo + ox0..oy * wo + ox1];
                            let start = iy * w + ox0 * s + kx - p;
                            if s == 1 {
                                let len = ox1 - ox0;
                                let in_row = &src[start..start + len];
                                let d_row = &mut dsrc[start..start + len];
                                for ((d, &g), &v) in d_row.iter_mut().zip(g_row).zip(in_row) {
                                    *d += wv * g;
                                    acc += g * v;
                                }
                            } else {
                                for (j, &g) in g_row.iter().enumerate() {
                                    let idx = start + j * s;
                                    dsrc[idx] += wv * g;
                                    acc += g * src[idx];
                                }
                            }
                        }
                        wgrad[widx] += acc;
                    }
                }
            }
        }
        dx
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.run(&x)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let (ho, wo) = self.out_hw(input[1], input[2]);
        let output = vec![self.channels, ho, wo];
        out.push(LayerDesc {
            name: name.to_string(),
            kind: LayerKind::Conv2d {
                in_channels: self.channels,
                out_channels: self.channels,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
                groups: self.channels,
                bias: false,
            },
            input: input.to_vec(),
            output: output.clone(),
            params: self.weight.len(),
        });
        output
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of a grouped convolution, used as a reference.
    #[allow(clippy::too_many_arguments)]
    fn reference_conv(
        x: &[f32],
        (c, h, w): (usize, usize, usize),
        weight: &[f32],
        cout: usize,
        k: usize,
        s: usize,
        p: usize,
        groups: usize,
    ) -> Vec<f32> {
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let cin_g = c / groups;
        let cout_g = cout / groups;
        let mut y = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin_g {
                        let cin = g * cin_g + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[cin * h * w + iy as usize * w + ix as usize];
                                let wv = weight[((co * cin_g + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        y
    }

    fn assert_close(a: &[f32], b: &[f32], tol: f32) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn dense_conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(1, 1, 0), (3, 1, 1), (3, 2, 1), (5, 2, 2)] {
            let conv = Conv2d::new(3, 4, k, s, p, true, &mut rng);
            let x = random_tensor(&[2, 3, 7, 6], &mut rng);
            let y = conv.infer(x.clone());
            for i in 0..2 {
                let want =
                    reference_conv(x.sample(i), (3, 7, 6), conv.weight.value.data(), 4, k, s, p, 1);
                // bias is zero-initialised
                assert_close(y.sample(i), &want, 1e-5);
            }
        }
    }

    #[test]
    fn depthwise_conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(k, s) in &[(3, 1), (3, 2), (5, 1), (5, 2)] {
            let conv = DepthwiseConv2d::new(4, k, s, &mut rng);
            let x = random_tensor(&[2, 4, 9, 8], &mut rng);
            let y = conv.infer(x.clone());
            for i in 0..2 {
                let want = reference_conv(
                    x.sample(i),
                    (4, 9, 8),
                    conv.weight.value.data(),
                    4,
                    k,
                    s,
                    k / 2,
                    4,
                );
                assert_close(y.sample(i), &want, 1e-5);
            }
        }
    }

    #[test]
    fn dense_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p) in &[(1, 1, 0), (3, 2, 1)] {
            let mut conv = Conv2d::new(3, 4, k, s, p, true, &mut rng);
            let x = random_tensor(&[2, 3, 6, 5], &mut rng);
            check_gradients(&mut conv, x, &mut rng, 2e-3);
        }
    }

    #[test]
    fn depthwise_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(k, s) in &[(3, 1), (3, 2), (5, 2)] {
            let mut conv = DepthwiseConv2d::new(3, k, s, &mut rng);
            let x = random_tensor(&[2, 3, 7, 6], &mut rng);
            check_gradients(&mut conv, x, &mut rng, 2e-3);
        }
    }

    #[test]
    fn input_grad_can_be_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::new(3, 2, 3, 2, 1, false, &mut rng).without_input_grad();
        let x = random_tensor(&[1, 3, 5, 5], &mut rng);
        let y = conv.forward(x, &mut Ctx::train(0));
        let dx = conv.backward(Tensor::full(y.shape(), 1.0));
        assert!(dx.is_empty());
        assert!(conv.weight.grad.iter().any(|g| *g != 0.0));
    }
}
