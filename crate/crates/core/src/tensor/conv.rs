use super::graph::{Graph, Op, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// 2-D cross-correlation, NCHW input and `[out, in, kh, kw]` kernel.
#[derive(Clone, Copy, Debug)]
struct Conv2d {
    stride: usize,
    padding: usize,
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(
        input: &Tensor<impl Scalar>,
        kernel: &Tensor<impl Scalar>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (batch, cin, h, w) = input.dims4("conv2d")?;
        let (cout, kcin, kh, kw) = kernel.dims4("conv2d")?;
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input {:?} has {cin} channels but kernel {:?} expects {kcin}",
                    input.shape(),
                    kernel.shape()
                ),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            ));
        }
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    /// Output indices `o` in `[lo, hi)` whose input coordinate
    /// `o * stride + k - pad` falls inside `[0, len)`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(s)
        };
        let hi = if len + self.pad > k {
            ((len + self.pad - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Applies `f(out_index, in_index)` over the valid span of one kernel tap
/// along one axis.
#[inline(always)]
fn taps(lo: usize, hi: usize, k: usize, stride: usize, pad: usize) -> impl Iterator<Item = (usize, usize)> {
    (lo..hi).map(move |o| (o, o * stride + k - pad))
}

fn forward_raw<T: Scalar>(g: &Geometry, x: &[T], k: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (iplane, oplane) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.batch * g.cout * oplane];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let dst = &mut out[(b * g.cout + co) * oplane..][..oplane];
            if let Some(bias) = bias {
                dst.fill(bias[co]);
            }
            for ci in 0..g.cin {
                let src = &x[(b * g.cin + ci) * iplane..][..iplane];
                for ky in 0..g.kh {
                    let (ylo, yhi) = g.valid(ky, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = k[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        let (xlo, xhi) = g.valid(kx, g.w, g.ow);
                        if xlo >= xhi {
                            continue;
                        }
                        for (oy, iy) in taps(ylo, yhi, ky, g.stride, g.pad) {
                            let drow = &mut dst[oy * g.ow..][..g.ow];
                            let srow = &src[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = xlo + kx - g.pad;
                                let n = xhi - xlo;
                                for (d, &s) in drow[xlo..xhi].iter_mut().zip(&srow[ix0..ix0 + n]) {
                                    *d += wv * s;
                                }
                            } else {
                                for (ox, ix) in taps(xlo, xhi, kx, g.stride, g.pad) {
                                    drow[ox] += wv * srow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn grad_input<T: Scalar>(g: &Geometry, dy: &[T], k: &[T]) -> Vec<T> {
    let (iplane, oplane) = (g.h * g.w, g.oh * g.ow);
    let mut dx = vec![T::zero(); g.batch * g.cin * iplane];
    for b in 0..g.batch {
        for ci in 0..g.cin {
            let dst = &mut dx[(b * g.cin + ci) * iplane..][..iplane];
            for co in 0..g.cout {
                let src = &dy[(b * g.cout + co) * oplane..][..oplane];
                for ky in 0..g.kh {
                    let (ylo, yhi) = g.valid(ky, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = k[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        let (xlo, xhi) = g.valid(kx, g.w, g.ow);
                        if xlo >= xhi {
                            continue;
                        }
                        for (oy, iy) in taps(ylo, yhi, ky, g.stride, g.pad) {
                            let grow = &src[oy * g.ow..][..g.ow];
                            let drow = &mut dst[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = xlo + kx - g.pad;
                                let n = xhi - xlo;
                                for (d, &s) in drow[ix0..ix0 + n].iter_mut().zip(&grow[xlo..xhi]) {
                                    *d += wv * s;
                                }
                            } else {
                                for (ox, ix) in taps(xlo, xhi, kx, g.stride, g.pad) {
                                    drow[ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn grad_kernel<T: Scalar>(g: &Geometry, dy: &[T], x: &[T]) -> Vec<T> {
    let (iplane, oplane) = (g.h * g.w, g.oh * g.ow);
    let mut dk = vec![T::zero(); g.cout * g.cin * g.kh * g.kw];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                let (ylo, yhi) = g.valid(ky, g.h, g.oh);
                for kx in 0..g.kw {
                    let (xlo, xhi) = g.valid(kx, g.w, g.ow);
                    if xlo >= xhi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for b in 0..g.batch {
                        let src = &x[(b * g.cin + ci) * iplane..][..iplane];
                        let grd = &dy[(b * g.cout + co) * oplane..][..oplane];
                        for (oy, iy) in taps(ylo, yhi, ky, g.stride, g.pad) {
                            let grow = &grd[oy * g.ow..][..g.ow];
                            let srow = &src[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = xlo + kx - g.pad;
                                let n = xhi - xlo;
                                acc += grow[xlo..xhi]
                                    .iter()
                                    .zip(&srow[ix0..ix0 + n])
                                    .fold(T::zero(), |a, (&gv, &sv)| a + gv * sv);
                            } else {
                                for (ox, ix) in taps(xlo, xhi, kx, g.stride, g.pad) {
                                    acc += grow[ox] * srow[ix];
                                }
                            }
                        }
                    }
                    dk[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
    dk
}

impl<T: Scalar> Op<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, k) = (inputs[0], inputs[1]);
        let g = Geometry::new(x, k, self.stride, self.padding)?;
        let bias = inputs.get(2).copied();
        if let Some(b) = bias {
            if b.shape() != [g.cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} does not match {} output channels", b.shape(), g.cout),
                ));
            }
        }
        let out = forward_raw(&g, x.data(), k.data(), bias.map(|b| b.data()));
        Ok(Tensor::from_parts(vec![g.batch, g.cout, g.oh, g.ow], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (x, k) = (inputs[0], inputs[1]);
        let g = Geometry::new(x, k, self.stride, self.padding).expect("validated in forward");
        let dx = wanted[0].then(|| Tensor::from_parts(x.shape().to_vec(), grad_input(&g, grad.data(), k.data())));
        let dk = wanted[1].then(|| Tensor::from_parts(k.shape().to_vec(), grad_kernel(&g, grad.data(), x.data())));
        let mut out = vec![dx, dk];
        if inputs.len() == 3 {
            out.push(wanted[2].then(|| {
                let plane = g.oh * g.ow;
                let mut db = vec![T::zero(); g.cout];
                for (i, chunk) in grad.data().chunks(plane).enumerate() {
                    db[i % g.cout] += chunk.iter().copied().sum();
                }
                Tensor::from_parts(vec![g.cout], db)
            }));
        }
        out
    }
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation of `input [B, Cin, H, W]` with `kernel
    /// [Cout, Cin, kh, kw]`, zero padding on all four sides.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let op = Conv2d { stride, padding };
        match bias {
            Some(b) => self.apply(op, &[input, kernel, b]),
            None => self.apply(op, &[input, kernel]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: Tensor<f64>, k: Tensor<f64>, b: Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let mut g = Graph::new();
        let (x, k, b) = (g.constant(x), g.constant(k), g.constant(b));
        let y = g.conv2d(x, k, Some(b), stride, pad).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn unit_kernel_scales() {
        let y = run(
            Tensor::ones(&[1, 1, 3, 3]).unwrap(),
            Tensor::full(&[1, 1, 1, 1], 2.0).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            1,
            0,
        );
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn diagonal_kernel_sums_corners() {
        let y = run(
            Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            1,
            0,
        );
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn output_extent_formula() {
        let y = run(
            Tensor::zeros(&[1, 2, 7, 6]).unwrap(),
            Tensor::zeros(&[3, 2, 3, 3]).unwrap(),
            Tensor::zeros(&[3]).unwrap(),
            2,
            1,
        );
        assert_eq!(y.shape(), &[1, 3, 4, 3]);
    }

    #[test]
    fn channel_mismatch_is_descriptive() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]).unwrap());
        let k = g.constant(Tensor::zeros(&[1, 3, 3, 3]).unwrap());
        let err = g.conv2d(x, k, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("conv2d") && err.contains("channels"), "{err}");
    }

    #[test]
    fn oversized_kernel_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 2, 2]).unwrap());
        let k = g.constant(Tensor::zeros(&[1, 1, 5, 5]).unwrap());
        assert!(g.conv2d(x, k, None, 1, 0).is_err());
        assert!(g.conv2d(x, k, None, 1, 2).is_ok());
    }
}
