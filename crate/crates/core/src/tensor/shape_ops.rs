use super::graph::{Graph, Op, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Concatenation of rank-4 tensors along the channel axis.
struct ConcatChannels;

impl<T: Scalar> Op<T> for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "needs at least one input"))?;
        let (b, _, h, w) = first.dims4("concat")?;
        let mut channels = 0;
        for t in inputs {
            let (tb, tc, th, tw) = t.dims4("concat")?;
            if (tb, th, tw) != (b, h, w) {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} differ off the channel axis", first.shape(), t.shape()),
                ));
            }
            channels += tc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(b * channels * plane);
        for bi in 0..b {
            for t in inputs {
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        Ok(Tensor::from_parts(vec![b, channels, h, w], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let [b, total, h, w] = output.shape()[..] else { unreachable!() };
        let plane = h * w;
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (t, &want) in inputs.iter().zip(wanted) {
            let c = t.shape()[1];
            out.push(want.then(|| {
                let mut d = Vec::with_capacity(t.len());
                for bi in 0..b {
                    let start = (bi * total + offset) * plane;
                    d.extend_from_slice(&grad.data()[start..start + c * plane]);
                }
                Tensor::from_parts(t.shape().to_vec(), d)
            }));
            offset += c;
        }
        out
    }
}

/// Source taps for one output coordinate of a 2x bilinear resize with
/// half-pixel centers: `src = max(0, (o + 0.5) / 2 - 0.5)`.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

struct Upsample2x;

impl<T: Scalar> Op<T> for Upsample2x {
    fn name(&self) -> &'static str {
        "upsample_bilinear2x"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (b, c, h, w) = x.dims4("upsample_bilinear2x")?;
        let (oh, ow) = (2 * h, 2 * w);
        let ty = bilinear_taps(oh, h);
        let tx = bilinear_taps(ow, w);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for (plane_in, plane_out) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
                let r0 = &plane_in[y0 * w..(y0 + 1) * w];
                let r1 = &plane_in[y1 * w..(y1 + 1) * w];
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                    plane_out[oy * ow + ox] =
                        wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                }
            }
        }
        Ok(Tensor::from_parts(vec![b, c, oh, ow], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        if !wanted[0] {
            return vec![None];
        }
        let x = inputs[0];
        let [_, _, h, w] = x.shape()[..] else { unreachable!() };
        let (oh, ow) = (2 * h, 2 * w);
        let ty = bilinear_taps(oh, h);
        let tx = bilinear_taps(ow, w);
        let mut dx = x.zeros_like();
        for (plane_in, plane_out) in dx.data_mut().chunks_mut(h * w).zip(grad.data().chunks(oh * ow)) {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                    let g = plane_out[oy * ow + ox];
                    plane_in[y0 * w + x0] += g * wy0 * wx0;
                    plane_in[y0 * w + x1] += g * wy0 * wx1;
                    plane_in[y1 * w + x0] += g * wy1 * wx0;
                    plane_in[y1 * w + x1] += g * wy1 * wx1;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// `[m, k] x [k, n] -> [m, n]`.
struct MatMul;

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl<T: Scalar> Op<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        match (a.shape(), b.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => Ok(Tensor::from_parts(
                vec![m, n],
                matmul_raw(a.data(), b.data(), m, k, n),
            )),
            (sa, sb) => Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        }
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let [m, k] = a.shape()[..] else { unreachable!() };
        let n = b.shape()[1];
        let da = wanted[0].then(|| {
            let bt = transpose(b.data(), k, n);
            Tensor::from_parts(vec![m, k], matmul_raw(grad.data(), &bt, m, n, k))
        });
        let db = wanted[1].then(|| {
            let at = transpose(a.data(), m, k);
            Tensor::from_parts(vec![k, n], matmul_raw(&at, grad.data(), k, m, n))
        });
        vec![da, db]
    }
}

impl<T: Scalar> Graph<T> {
    /// Concatenates rank-4 tensors along channels.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        self.apply(ConcatChannels, inputs)
    }

    /// Bilinear 2x upsampling of a rank-4 tensor (half-pixel centers, edge
    /// clamped).
    pub fn upsample_bilinear2x(&mut self, x: Var) -> Result<Var> {
        self.apply(Upsample2x, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(MatMul, &[a, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_interleaves_per_batch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(&[2, 1, 1, 2], |i| i as f64).unwrap());
        let b = g.constant(Tensor::from_fn(&[2, 2, 1, 2], |i| 10.0 + i as f64).unwrap());
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 3, 1, 2]);
        assert_eq!(
            g.value(c).data(),
            &[0.0, 1.0, 10.0, 11.0, 12.0, 13.0, 2.0, 3.0, 14.0, 15.0, 16.0, 17.0]
        );
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[1, 1, 2, 2]).unwrap());
        let b = g.constant(Tensor::zeros(&[1, 1, 2, 3]).unwrap());
        assert!(g.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn matmul_small() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::new(&[2, 1], vec![5.0, 6.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[17.0, 39.0]);
        let bad = g.constant(Tensor::zeros(&[3, 1]).unwrap());
        assert!(g.matmul(a, bad).is_err());
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(&[1, 2, 3, 2], 0.75).unwrap());
        let u = g.upsample_bilinear2x(a).unwrap();
        assert_eq!(g.value(u).shape(), &[1, 2, 6, 4]);
        assert!(g.value(u).data().iter().all(|&v| v == 0.75));
    }
}
