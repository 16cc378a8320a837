use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major buffer with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::structural(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// Xavier/Glorot uniform initialisation for a `[fan_in, fan_out]` matrix.
    pub fn xavier_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Tensor {
            shape: vec![fan_in, fan_out],
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let n = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![0.0; n]);
        (&mut self.data, g)
    }

    pub fn view1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    pub fn view2(&self) -> ArrayView2<'_, f64> {
        let (r, c) = self.dims2();
        ArrayView2::from_shape((r, c), &self.data).expect("shape checked at construction")
    }

    pub fn grad_view1_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(self.grad_mut())
    }

    pub fn grad_view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (r, c) = self.dims2();
        ArrayViewMut2::from_shape((r, c), self.grad_mut()).expect("shape checked at construction")
    }

    fn dims2(&self) -> (usize, usize) {
        match self.shape[..] {
            [r, c] => (r, c),
            [c] => (1, c),
            _ => panic!("tensor of shape {:?} viewed as a matrix", self.shape),
        }
    }
}

/// Per-element freeze flags for a list of parameter tensors; `true` = frozen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    masks: Vec<Vec<bool>>,
}

impl FreezeMask {
    pub fn none(params: &[&Tensor]) -> Self {
        FreezeMask {
            masks: params.iter().map(|t| vec![false; t.len()]).collect(),
        }
    }

    pub fn all(params: &[&Tensor]) -> Self {
        FreezeMask {
            masks: params.iter().map(|t| vec![true; t.len()]).collect(),
        }
    }

    pub fn from_masks(masks: Vec<Vec<bool>>) -> Self {
        FreezeMask { masks }
    }

    pub fn tensor(&self, i: usize) -> &[bool] {
        &self.masks[i]
    }

    pub fn set(&mut self, tensor: usize, element: usize, frozen: bool) {
        self.masks[tensor][element] = frozen;
    }

    pub fn n_tensors(&self) -> usize {
        self.masks.len()
    }

    pub fn frozen_count(&self) -> usize {
        self.masks.iter().flatten().filter(|&&f| f).count()
    }

    pub fn matches(&self, params: &[&Tensor]) -> bool {
        self.masks.len() == params.len()
            && self.masks.iter().zip(params).all(|(m, t)| m.len() == t.len())
    }
}
