use super::graph::{Graph, Op, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization over the spatial axes followed by a
/// learned per-channel scale and shift.
struct InstanceNorm;

struct PlaneStats<T> {
    mean: T,
    inv_std: T,
}

fn plane_stats<T: Scalar>(plane: &[T]) -> PlaneStats<T> {
    let n = T::from_f64(plane.len() as f64);
    let mean = plane.iter().copied().sum::<T>() / n;
    let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    PlaneStats {
        mean,
        inv_std: T::one() / (var + T::from_f64(NORM_EPS)).sqrt(),
    }
}

impl<T: Scalar> Op<T> for InstanceNorm {
    fn name(&self) -> &'static str {
        "instance_norm"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
        let (_, c, h, w) = x.dims4("instance_norm")?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(
                "instance_norm",
                format!(
                    "scale {:?} / shift {:?} do not match {c} channels of {:?}",
                    gamma.shape(),
                    beta.shape(),
                    x.shape()
                ),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(x.len());
        for (i, p) in x.data().chunks(plane).enumerate() {
            let s = plane_stats(p);
            let (gm, bt) = (gamma.data()[i % c], beta.data()[i % c]);
            out.extend(p.iter().map(|&v| (v - s.mean) * s.inv_std * gm + bt));
        }
        Ok(Tensor::from_parts(x.shape().to_vec(), out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let [_, c, h, w] = x.shape()[..] else { unreachable!() };
        let plane = h * w;
        let n = T::from_f64(plane as f64);
        let mut dx = wanted[0].then(|| x.zeros_like());
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (i, (p, gp)) in x.data().chunks(plane).zip(grad.data().chunks(plane)).enumerate() {
            let s = plane_stats(p);
            let ch = i % c;
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (&v, &g) in p.iter().zip(gp) {
                let xhat = (v - s.mean) * s.inv_std;
                sum_g += g;
                sum_gx += g * xhat;
            }
            dgamma[ch] += sum_gx;
            dbeta[ch] += sum_g;
            if let Some(dx) = &mut dx {
                // dx = gamma * inv_std / N * (N*g - sum(g) - xhat * sum(g*xhat))
                let k = gamma.data()[ch] * s.inv_std / n;
                let dst = &mut dx.data_mut()[i * plane..(i + 1) * plane];
                for ((d, &v), &g) in dst.iter_mut().zip(p).zip(gp) {
                    let xhat = (v - s.mean) * s.inv_std;
                    *d = k * (n * g - sum_g - xhat * sum_gx);
                }
            }
        }
        vec![
            dx,
            wanted[1].then(|| Tensor::from_parts(vec![c], dgamma)),
            wanted[2].then(|| Tensor::from_parts(vec![c], dbeta)),
        ]
    }
}

impl<T: Scalar> Graph<T> {
    /// Instance-style normalization of `x [B, C, H, W]` with per-channel
    /// `scale [C]` and `shift [C]`.
    pub fn instance_norm(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        self.apply(InstanceNorm, &[x, scale, shift])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_each_plane() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 2, 3, 3], |i| (i * i) as f64 * 0.1).unwrap());
        let s = g.constant(Tensor::ones(&[2]).unwrap());
        let b = g.constant(Tensor::zeros(&[2]).unwrap());
        let y = g.instance_norm(x, s, b).unwrap();
        for p in g.value(y).data().chunks(9) {
            let mean: f64 = p.iter().sum::<f64>() / 9.0;
            let var: f64 = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_plane_maps_to_shift() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 2, 2]).unwrap());
        let s = g.constant(Tensor::ones(&[1]).unwrap());
        let b = g.constant(Tensor::full(&[1], 0.5).unwrap());
        let y = g.instance_norm(x, s, b).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }
}
