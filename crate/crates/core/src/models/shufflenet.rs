//! ShuffleNetV2 (x0.5 width) feature extractor with torchvision parameter
//! names.

use fiqa_nn::layer::{join, Ctx, Layer, LayerDesc, LayerKind};
use fiqa_nn::{Act, Activation, BatchNorm2d, Conv2d, DepthwiseConv2d, MaxPool2d, Param, Sequential, Tensor};
use rand::Rng;

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

/// Channels of the last feature map.
pub const FEATURE_DIM: usize = 1024;

const STAGE_REPEATS: [usize; 3] = [4, 8, 4];
/// Stem, three stages, final 1x1 conv.
const STAGE_CHANNELS: [usize; 5] = [24, 48, 96, 192, FEATURE_DIM];

fn bn(channels: usize) -> BatchNorm2d {
    BatchNorm2d::new(channels, BN_EPS, BN_MOMENTUM)
}

/// `[N, C, H, W] -> [N, C, H, W]` with channel `g * (C/2) + i` moved to
/// `2 * i + g`.
fn channel_shuffle(x: &Tensor) -> Tensor {
    permute_channels(x, false)
}

fn channel_unshuffle(x: &Tensor) -> Tensor {
    permute_channels(x, true)
}

fn permute_channels(x: &Tensor, inverse: bool) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let half = c / 2;
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    for s in 0..n {
        let src = x.sample(s);
        let dst = out.sample_mut(s);
        for g in 0..2 {
            for i in 0..half {
                let grouped = g * half + i;
                let interleaved = 2 * i + g;
                let (from, to) = if inverse {
                    (interleaved, grouped)
                } else {
                    (grouped, interleaved)
                };
                dst[to * plane..(to + 1) * plane]
                    .copy_from_slice(&src[from * plane..(from + 1) * plane]);
            }
        }
    }
    out
}

/// ShuffleNetV2 unit. Stride 1 splits the channels and transforms one half;
/// stride 2 runs two downsampling branches on the full input. Both
/// concatenate and shuffle.
struct ShuffleUnit {
    branch1: Option<Sequential>,
    branch2: Sequential,
}

impl ShuffleUnit {
    fn new<R: Rng>(input: usize, output: usize, stride: usize, rng: &mut R) -> Self {
        let branch = output / 2;
        assert!(stride != 1 || input == 2 * branch);
        let branch1 = (stride > 1).then(|| {
            Sequential::new()
                .push(DepthwiseConv2d::new(input, 3, stride, rng))
                .push(bn(input))
                .push(Conv2d::new(input, branch, 1, 1, 0, false, rng))
                .push(bn(branch))
                .push(Activation::new(Act::Relu))
        });
        let branch2_in = if stride > 1 { input } else { branch };
        let branch2 = Sequential::new()
            .push(Conv2d::new(branch2_in, branch, 1, 1, 0, false, rng))
            .push(bn(branch))
            .push(Activation::new(Act::Relu))
            .push(DepthwiseConv2d::new(branch, 3, stride, rng))
            .push(bn(branch))
            .push(Conv2d::new(branch, branch, 1, 1, 0, false, rng))
            .push(bn(branch))
            .push(Activation::new(Act::Relu));
        Self { branch1, branch2 }
    }
}

impl Layer for ShuffleUnit {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let out = match &mut self.branch1 {
            Some(b1) => {
                let left = b1.forward(x.clone(), ctx);
                let right = self.branch2.forward(x, ctx);
                Tensor::cat_channels(&left, &right)
            }
            None => {
                let (left, right) = x.split_channels(x.dims4().1 / 2);
                let right = self.branch2.forward(right, ctx);
                Tensor::cat_channels(&left, &right)
            }
        };
        channel_shuffle(&out)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let grad = channel_unshuffle(&grad);
        let (g_left, g_right) = grad.split_channels(grad.dims4().1 / 2);
        let d_right = self.branch2.backward(g_right);
        match &mut self.branch1 {
            Some(b1) => {
                let mut dx = b1.backward(g_left);
                dx.add_assign(&d_right);
                dx
            }
            None => Tensor::cat_channels(&g_left, &d_right),
        }
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let out = match &self.branch1 {
            Some(b1) => {
                let left = b1.infer(x.clone());
                let right = self.branch2.infer(x);
                Tensor::cat_channels(&left, &right)
            }
            None => {
                let (left, right) = x.split_channels(x.dims4().1 / 2);
                let right = self.branch2.infer(right);
                Tensor::cat_channels(&left, &right)
            }
        };
        channel_shuffle(&out)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(b1) = &self.branch1 {
            b1.visit(&join(prefix, "branch1"), f);
        }
        self.branch2.visit(&join(prefix, "branch2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(b1) = &mut self.branch1 {
            b1.visit_mut(&join(prefix, "branch1"), f);
        }
        self.branch2.visit_mut(&join(prefix, "branch2"), f);
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let (left, right) = match &self.branch1 {
            Some(b1) => {
                let left = b1.describe(&join(name, "branch1"), input, out);
                let right = self.branch2.describe(&join(name, "branch2"), input, out);
                (left, right)
            }
            None => {
                let half = vec![input[0] / 2, input[1], input[2]];
                out.push(LayerDesc {
                    name: join(name, "split"),
                    kind: LayerKind::ChannelSplit,
                    input: input.to_vec(),
                    output: half.clone(),
                    params: 0,
                });
                let right = self.branch2.describe(&join(name, "branch2"), &half, out);
                (half, right)
            }
        };
        let output = vec![left[0] + right[0], right[1], right[2]];
        out.push(LayerDesc {
            name: join(name, "concat"),
            kind: LayerKind::ChannelConcat,
            input: right,
            output: output.clone(),
            params: 0,
        });
        out.push(LayerDesc {
            name: join(name, "shuffle"),
            kind: LayerKind::ChannelShuffle { groups: 2 },
            input: output.clone(),
            output: output.clone(),
            params: 0,
        });
        output
    }

    fn clear_cache(&mut self) {
        if let Some(b1) = &mut self.branch1 {
            b1.clear_cache();
        }
        self.branch2.clear_cache();
    }
}

/// Everything in front of ShuffleNetV2's global pool: `conv1`, `maxpool`,
/// `stage2..4`, `conv5`. Output: `[N, 1024, H/32, W/32]`.
pub fn features<R: Rng>(rng: &mut R) -> Sequential {
    let [stem, ..] = STAGE_CHANNELS;
    let conv1 = Sequential::new()
        .push(Conv2d::new(3, stem, 3, 2, 1, false, rng).without_input_grad())
        .push(bn(stem))
        .push(Activation::new(Act::Relu));
    let mut net = Sequential::new()
        .push_named("conv1", conv1)
        .push_named("maxpool", MaxPool2d::new(3, 2, 1));
    let mut input = stem;
    for (stage, (&repeats, &output)) in STAGE_REPEATS.iter().zip(&STAGE_CHANNELS[1..4]).enumerate() {
        let mut seq = Sequential::new().push(ShuffleUnit::new(input, output, 2, rng));
        for _ in 1..repeats {
            seq = seq.push(ShuffleUnit::new(output, output, 1, rng));
        }
        net = net.push_named(format!("stage{}", stage + 2), seq);
        input = output;
    }
    let conv5 = Sequential::new()
        .push(Conv2d::new(input, FEATURE_DIM, 1, 1, 0, false, rng))
        .push(bn(FEATURE_DIM))
        .push(Activation::new(Act::Relu));
    net.push_named("conv5", conv5)
}
