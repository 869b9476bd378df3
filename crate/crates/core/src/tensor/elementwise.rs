use std::hash::Hasher;

use super::graph::{Graph, Op, Var};
use super::{require_same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryOp(Binary);

impl<T: Scalar> Op<T> for BinaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        require_same_shape(Op::<T>::name(self), a, b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| match self.0 {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        match self.0 {
            Binary::Add => vec![
                wanted[0].then(|| grad.clone()),
                wanted[1].then(|| grad.clone()),
            ],
            Binary::Sub => vec![
                wanted[0].then(|| grad.clone()),
                wanted[1].then(|| grad.map(|g| -g)),
            ],
            Binary::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let times = |other: &Tensor<T>| {
                    let data = grad
                        .data()
                        .iter()
                        .zip(other.data())
                        .map(|(&g, &o)| g * o)
                        .collect();
                    Tensor::from_parts(grad.shape().to_vec(), data)
                };
                vec![wanted[0].then(|| times(b)), wanted[1].then(|| times(a))]
            }
        }
    }
}

struct Scale(f64);

impl<T: Scalar> Op<T> for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let k = T::from_f64(self.0);
        Ok(inputs[0].map(|v| v * k))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let k = T::from_f64(self.0);
        vec![wanted[0].then(|| grad.map(|g| g * k))]
    }
}

struct Relu;

impl<T: Scalar> Op<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![wanted[0].then(|| {
            let data = grad
                .data()
                .iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect();
            Tensor::from_parts(grad.shape().to_vec(), data)
        })]
    }

    fn branches(&self, inputs: &[&Tensor<T>], state: &mut dyn Hasher) {
        for &x in inputs[0].data() {
            state.write_u8((x > T::zero()) as u8);
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

struct Sigmoid;

impl<T: Scalar> Op<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(sigmoid))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![wanted[0].then(|| {
            let data = grad
                .data()
                .iter()
                .zip(output.data())
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect();
            Tensor::from_parts(grad.shape().to_vec(), data)
        })]
    }
}

/// Elementwise maximum over k same-shaped tensors. Ties route the gradient
/// to the earliest input.
struct MaxN;

impl MaxN {
    fn argmax<T: Scalar>(inputs: &[&Tensor<T>], i: usize) -> usize {
        let mut best = 0;
        for (k, t) in inputs.iter().enumerate().skip(1) {
            if t.data()[i] > inputs[best].data()[i] {
                best = k;
            }
        }
        best
    }
}

impl<T: Scalar> Op<T> for MaxN {
    fn name(&self) -> &'static str {
        "max"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("max", "needs at least one input"))?;
        for t in &inputs[1..] {
            require_same_shape("max", first, t)?;
        }
        let data = (0..first.len())
            .map(|i| inputs[Self::argmax(inputs, i)].data()[i])
            .collect();
        Ok(Tensor::from_parts(first.shape().to_vec(), data))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = wanted
            .iter()
            .map(|&w| w.then(|| grad.zeros_like()))
            .collect();
        for (i, &g) in grad.data().iter().enumerate() {
            if let Some(t) = &mut out[Self::argmax(inputs, i)] {
                t.data_mut()[i] = g;
            }
        }
        out
    }

    fn branches(&self, inputs: &[&Tensor<T>], state: &mut dyn Hasher) {
        for i in 0..inputs[0].len() {
            state.write_usize(Self::argmax(inputs, i));
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(BinaryOp(Binary::Add), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(BinaryOp(Binary::Sub), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(BinaryOp(Binary::Mul), &[a, b])
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.apply(Scale(k), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Sigmoid, &[a])
    }

    /// Elementwise maximum of all `inputs`.
    pub fn max_n(&mut self, inputs: &[Var]) -> Result<Var> {
        self.apply(MaxN, inputs)
    }
}
