use super::elementwise::sigmoid;
use super::graph::{Graph, Op, Var};
use super::{require_same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

struct Sum {
    mean: bool,
}

impl<T: Scalar> Op<T> for Sum {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let s = x.sum();
        Ok(Tensor::scalar(if self.mean {
            s / T::from_f64(x.len() as f64)
        } else {
            s
        }))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let mut g = grad.data()[0];
        if self.mean {
            g = g / T::from_f64(x.len() as f64);
        }
        vec![wanted[0].then(|| x.map(|_| g))]
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct Softmax {
    axis: usize,
}

impl<T: Scalar> Op<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        if self.axis >= x.rank() {
            return Err(Error::shape(
                "softmax",
                format!("axis {} out of range for shape {:?}", self.axis, x.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(x.shape(), self.axis);
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(src[at(k)]));
                let mut total = T::zero();
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] = out[at(k)] / total;
                }
            }
        }
        Ok(Tensor::from_parts(x.shape().to_vec(), out))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        if !wanted[0] {
            return vec![None];
        }
        let (outer, len, inner) = axis_split(output.shape(), self.axis);
        let (s, g) = (output.data(), grad.data());
        let mut dx = vec![T::zero(); s.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let dot: T = (0..len).map(|k| s[at(k)] * g[at(k)]).sum();
                for k in 0..len {
                    dx[at(k)] = s[at(k)] * (g[at(k)] - dot);
                }
            }
        }
        vec![Some(Tensor::from_parts(output.shape().to_vec(), dx))]
    }
}

/// Per-element binary cross entropy on logits, stable for large |z|:
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub(crate) fn bce_logit_term<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross entropy of logits against soft targets in `[0, 1]`.
struct BceWithLogits;

impl<T: Scalar> Op<T> for BceWithLogits {
    fn name(&self) -> &'static str {
        "bce_with_logits"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (z, y) = (inputs[0], inputs[1]);
        require_same_shape("bce_with_logits", z, y)?;
        if let Some(i) = z.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("bce_with_logits logit at flat index {i}"),
            });
        }
        let total: T = z
            .data()
            .iter()
            .zip(y.data())
            .map(|(&z, &y)| bce_logit_term(z, y))
            .sum();
        Ok(Tensor::scalar(total / T::from_f64(z.len() as f64)))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (z, y) = (inputs[0], inputs[1]);
        let k = grad.data()[0] / T::from_f64(z.len() as f64);
        let dz = wanted[0].then(|| {
            let data = z
                .data()
                .iter()
                .zip(y.data())
                .map(|(&z, &y)| (sigmoid(z) - y) * k)
                .collect();
            Tensor::from_parts(z.shape().to_vec(), data)
        });
        // d/dy = -z / N
        let dy = wanted[1].then(|| z.map(|z| -z * k));
        vec![dz, dy]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Sum { mean: false }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Sum { mean: true }, &[a])
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Softmax { axis }, &[a])
    }

    /// Mean BCE of `logits` against `targets` (soft labels allowed).
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.apply(BceWithLogits, &[logits, targets])
    }
}
