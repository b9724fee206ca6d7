use crate::layer::{join, Ctx, Layer, LayerDesc};
use crate::param::Param;
use crate::tensor::Tensor;

/// Named chain of layers. Child names become path components of parameter
/// names, so `Sequential` nesting mirrors PyTorch state-dict keys.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<(String, Box<dyn Layer>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a child named by its position, as `nn.Sequential` does.
    pub fn push(mut self, layer: impl Layer + 'static) -> Self {
        let name = self.layers.len().to_string();
        self.layers.push((name, Box::new(layer)));
        self
    }

    pub fn push_named(mut self, name: impl Into<String>, layer: impl Layer + 'static) -> Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Tensor {
        for (_, layer) in &mut self.layers {
            x = layer.forward(x, ctx);
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        for (_, layer) in self.layers.iter_mut().rev() {
            grad = layer.backward(grad);
        }
        grad
    }

    fn infer(&self, mut x: Tensor) -> Tensor {
        for (_, layer) in &self.layers {
            x = layer.infer(x);
        }
        x
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (name, layer) in &self.layers {
            layer.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (name, layer) in &mut self.layers {
            layer.visit_mut(&join(prefix, name), f);
        }
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let mut shape = input.to_vec();
        for (child, layer) in &self.layers {
            shape = layer.describe(&join(name, child), &shape, out);
        }
        shape
    }

    fn clear_cache(&mut self) {
        for (_, layer) in &mut self.layers {
            layer.clear_cache();
        }
    }
}
