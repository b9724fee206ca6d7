//! MobileNetV3-Small feature extractor with torchvision parameter names.

use fiqa_nn::layer::{join, Ctx, Layer, LayerDesc, LayerKind};
use fiqa_nn::{
    Act, Activation, BatchNorm2d, Conv2d, DepthwiseConv2d, Param, Sequential, SqueezeExcite,
    Tensor,
};
use rand::Rng;

const BN_EPS: f32 = 1e-3;
const BN_MOMENTUM: f32 = 0.01;

/// Channels of the last feature map.
pub const FEATURE_DIM: usize = 576;

struct BlockConfig {
    input: usize,
    kernel: usize,
    expanded: usize,
    out: usize,
    use_se: bool,
    act: Act,
    stride: usize,
}

const fn block(
    input: usize,
    kernel: usize,
    expanded: usize,
    out: usize,
    use_se: bool,
    act: Act,
    stride: usize,
) -> BlockConfig {
    BlockConfig {
        input,
        kernel,
        expanded,
        out,
        use_se,
        act,
        stride,
    }
}

const RE: Act = Act::Relu;
const HS: Act = Act::Hardswish;

const BLOCKS: [BlockConfig; 11] = [
    block(16, 3, 16, 16, true, RE, 2),
    block(16, 3, 72, 24, false, RE, 2),
    block(24, 3, 88, 24, false, RE, 1),
    block(24, 5, 96, 40, true, HS, 2),
    block(40, 5, 240, 40, true, HS, 1),
    block(40, 5, 240, 40, true, HS, 1),
    block(40, 5, 120, 48, true, HS, 1),
    block(48, 5, 144, 48, true, HS, 1),
    block(48, 5, 288, 96, true, HS, 2),
    block(96, 5, 576, 96, true, HS, 1),
    block(96, 5, 576, 96, true, HS, 1),
];

/// Round `v` to a multiple of `divisor` without dropping more than 10%.
pub(crate) fn make_divisible(v: usize, divisor: usize) -> usize {
    let rounded = ((v + divisor / 2) / divisor * divisor).max(divisor);
    if (rounded as f64) < 0.9 * v as f64 {
        rounded + divisor
    } else {
        rounded
    }
}

fn conv_bn(conv: impl Layer + 'static, channels: usize, act: Option<Act>) -> Sequential {
    let seq = Sequential::new()
        .push(conv)
        .push(BatchNorm2d::new(channels, BN_EPS, BN_MOMENTUM));
    match act {
        Some(a) => seq.push(Activation::new(a)),
        None => seq,
    }
}

/// Inverted residual block: optional 1x1 expansion, depthwise conv,
/// optional squeeze-excitation, linear 1x1 projection.
struct InvertedResidual {
    block: Sequential,
    residual: bool,
}

impl InvertedResidual {
    fn new<R: Rng>(cfg: &BlockConfig, rng: &mut R) -> Self {
        let mut block = Sequential::new();
        if cfg.expanded != cfg.input {
            let expand = Conv2d::new(cfg.input, cfg.expanded, 1, 1, 0, false, rng);
            block = block.push(conv_bn(expand, cfg.expanded, Some(cfg.act)));
        }
        let dw = DepthwiseConv2d::new(cfg.expanded, cfg.kernel, cfg.stride, rng);
        block = block.push(conv_bn(dw, cfg.expanded, Some(cfg.act)));
        if cfg.use_se {
            let squeeze = make_divisible(cfg.expanded / 4, 8);
            block = block.push(SqueezeExcite::new(cfg.expanded, squeeze, rng));
        }
        let project = Conv2d::new(cfg.expanded, cfg.out, 1, 1, 0, false, rng);
        block = block.push(conv_bn(project, cfg.out, None));
        Self {
            block,
            residual: cfg.stride == 1 && cfg.input == cfg.out,
        }
    }
}

impl Layer for InvertedResidual {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        if self.residual {
            let mut y = self.block.forward(x.clone(), ctx);
            y.add_assign(&x);
            y
        } else {
            self.block.forward(x, ctx)
        }
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        if self.residual {
            let mut dx = self.block.backward(grad.clone());
            dx.add_assign(&grad);
            dx
        } else {
            self.block.backward(grad)
        }
    }

    fn infer(&self, x: Tensor) -> Tensor {
        if self.residual {
            let mut y = self.block.infer(x.clone());
            y.add_assign(&x);
            y
        } else {
            self.block.infer(x)
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.block.visit(&join(prefix, "block"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.block.visit_mut(&join(prefix, "block"), f);
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let output = self.block.describe(&join(name, "block"), input, out);
        if self.residual {
            out.push(LayerDesc {
                name: join(name, "add"),
                kind: LayerKind::ResidualAdd,
                input: output.clone(),
                output: output.clone(),
                params: 0,
            });
        }
        output
    }

    fn clear_cache(&mut self) {
        self.block.clear_cache();
    }
}

/// The `features` stack of MobileNetV3-Small (classifier removed). Output:
/// `[N, 576, H/32, W/32]`.
pub fn features<R: Rng>(rng: &mut R) -> Sequential {
    let stem = Conv2d::new(3, 16, 3, 2, 1, false, rng).without_input_grad();
    let mut features = Sequential::new().push(conv_bn(stem, 16, Some(Act::Hardswish)));
    for cfg in &BLOCKS {
        features = features.push(InvertedResidual::new(cfg, rng));
    }
    let last = Conv2d::new(96, FEATURE_DIM, 1, 1, 0, false, rng);
    features.push(conv_bn(last, FEATURE_DIM, Some(Act::Hardswish)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squeeze_widths_match_torchvision() {
        let got: Vec<usize> = [16, 96, 240, 120, 144, 288, 576]
            .iter()
            .map(|&e| make_divisible(e / 4, 8))
            .collect();
        assert_eq!(got, vec![8, 24, 64, 32, 40, 72, 144]);
    }
}
