use crate::tensor::Tensor;

/// A named tensor owned by a layer. Trainable parameters carry a gradient
/// buffer of the same length; buffers such as running statistics do not.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn trainable(value: Tensor) -> Self {
        let grad = vec![0.0; value.len()];
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: Tensor) -> Self {
        Self {
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
