//! Axial self-attention with learned relative-position terms.
//!
//! For a position `o` on the attended axis and `p` in its window,
//!
//! ```text
//! logit(o, p) = q_o . k_p + q_o . rq[p - o] + k_p . rk[p - o]
//! y_o         = sum_p softmax_p(logit(o, p)) * (v_p + rv[p - o])
//! ```
//!
//! Relative tables have `2m - 1` rows for span `m`; row `m - 1` is offset 0.
//! The effective window length is `min(m, L)` for an axis of length `L`; the
//! window is centered on `o` and shifted inward at the borders so it always
//! lies inside the axis.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{fan_in_bound, Conv2dLayer, Init};
use crate::tensor::{Graph, Op, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Height => "height",
            Axis::Width => "width",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "height" | "h" => Ok(Axis::Height),
            "width" | "w" => Ok(Axis::Width),
            other => Err(Error::config("axis", format!("`{other}` is not height or width"))),
        }
    }
}

/// Half-open window `[start, end)` attended by position `o` on an axis of
/// length `len` with span `span`.
pub fn attention_window(o: usize, len: usize, span: usize) -> (usize, usize) {
    let m = span.min(len);
    let start = o.saturating_sub((m - 1) / 2).min(len - m);
    (start, start + m)
}

/// Index arithmetic for one attended axis of a `[B, C, H, W]` tensor.
#[derive(Clone, Copy)]
struct Lines {
    /// Number of independent lines per channel plane.
    count: usize,
    /// Positions per line.
    len: usize,
    axis: Axis,
    width: usize,
}

impl Lines {
    fn new(axis: Axis, h: usize, w: usize) -> Self {
        match axis {
            Axis::Width => Self { count: h, len: w, axis, width: w },
            Axis::Height => Self { count: w, len: h, axis, width: w },
        }
    }

    #[inline]
    fn offset(&self, line: usize, pos: usize) -> usize {
        match self.axis {
            Axis::Width => line * self.width + pos,
            Axis::Height => pos * self.width + line,
        }
    }
}

/// Fused multi-head axial attention over projected queries, keys and values.
///
/// Inputs: `q, k [B, heads*dq, H, W]`, `v [B, heads*dv, H, W]`,
/// `rq, rk [heads, 2m-1, dq]`, `rv [heads, 2m-1, dv]`.
/// Output: `[B, heads*dv, H, W]`.
pub(crate) struct AxialAttentionOp {
    pub axis: Axis,
    pub heads: usize,
    pub span: usize,
}

struct Dims {
    batch: usize,
    dq: usize,
    dv: usize,
    h: usize,
    w: usize,
}

impl AxialAttentionOp {
    fn dims<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<Dims> {
        let [q, k, v, rq, rk, rv] = inputs else {
            return Err(Error::shape("axial_attention", "expects six inputs"));
        };
        let (b, cq, h, w) = q.dims4("axial_attention")?;
        let (_, cv, _, _) = v.dims4("axial_attention")?;
        if k.shape() != q.shape() || v.shape() != [b, cv, h, w] {
            return Err(Error::shape(
                "axial_attention",
                format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
            ));
        }
        if self.heads == 0 || cq % self.heads != 0 || cv % self.heads != 0 {
            return Err(Error::shape(
                "axial_attention",
                format!("{cq} query / {cv} value channels not divisible by {} heads", self.heads),
            ));
        }
        let (dq, dv) = (cq / self.heads, cv / self.heads);
        let rows = 2 * self.span - 1;
        for (t, d, label) in [(rq, dq, "rq"), (rk, dq, "rk"), (rv, dv, "rv")] {
            if t.shape() != [self.heads, rows, d] {
                return Err(Error::shape(
                    "axial_attention",
                    format!(
                        "{label} is {:?}, expected [{}, {rows}, {d}]",
                        t.shape(),
                        self.heads
                    ),
                ));
            }
        }
        Ok(Dims { batch: b, dq, dv, h, w })
    }

    /// Copies one head's channels along one line into `[len][d]` row-major.
    fn gather<T: Scalar>(
        src: &[T],
        lines: &Lines,
        plane: usize,
        chan0: usize,
        d: usize,
        line: usize,
        buf: &mut [T],
    ) {
        for pos in 0..lines.len {
            let off = lines.offset(line, pos);
            for c in 0..d {
                buf[pos * d + c] = src[(chan0 + c) * plane + off];
            }
        }
    }

    fn scatter_add<T: Scalar>(
        dst: &mut [T],
        lines: &Lines,
        plane: usize,
        chan0: usize,
        d: usize,
        line: usize,
        buf: &[T],
    ) {
        for pos in 0..lines.len {
            let off = lines.offset(line, pos);
            for c in 0..d {
                dst[(chan0 + c) * plane + off] += buf[pos * d + c];
            }
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Softmax weights of position `o` over its window, written to `weights`.
#[allow(clippy::too_many_arguments)]
fn window_weights<T: Scalar>(
    o: usize,
    (start, end): (usize, usize),
    span: usize,
    dq: usize,
    q: &[T],
    k: &[T],
    rq: &[T],
    rk: &[T],
    weights: &mut [T],
) {
    let qo = &q[o * dq..(o + 1) * dq];
    let mut max = T::neg_infinity();
    for (j, p) in (start..end).enumerate() {
        let row = p + span - 1 - o;
        let kp = &k[p * dq..(p + 1) * dq];
        let l = dot(qo, kp) + dot(qo, &rq[row * dq..(row + 1) * dq]) + dot(kp, &rk[row * dq..(row + 1) * dq]);
        weights[j] = l;
        max = max.max(l);
    }
    let n = end - start;
    let mut total = T::zero();
    for w in &mut weights[..n] {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in &mut weights[..n] {
        *w = *w / total;
    }
}

impl<T: Scalar> Op<T> for AxialAttentionOp {
    fn name(&self) -> &'static str {
        "axial_attention"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let d = self.dims(inputs)?;
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let (rq, rk, rv) = (inputs[3].data(), inputs[4].data(), inputs[5].data());
        let lines = Lines::new(self.axis, d.h, d.w);
        let plane = d.h * d.w;
        let (cq, cv) = (self.heads * d.dq, self.heads * d.dv);
        let rows = 2 * self.span - 1;
        let mut out = vec![T::zero(); d.batch * cv * plane];

        let mut qb = vec![T::zero(); lines.len * d.dq];
        let mut kb = vec![T::zero(); lines.len * d.dq];
        let mut vb = vec![T::zero(); lines.len * d.dv];
        let mut yb = vec![T::zero(); lines.len * d.dv];
        let mut weights = vec![T::zero(); lines.len];

        for b in 0..d.batch {
            let qs = &q[b * cq * plane..(b + 1) * cq * plane];
            let ks = &k[b * cq * plane..(b + 1) * cq * plane];
            let vs = &v[b * cv * plane..(b + 1) * cv * plane];
            let ys = &mut out[b * cv * plane..(b + 1) * cv * plane];
            for head in 0..self.heads {
                let rqh = &rq[head * rows * d.dq..(head + 1) * rows * d.dq];
                let rkh = &rk[head * rows * d.dq..(head + 1) * rows * d.dq];
                let rvh = &rv[head * rows * d.dv..(head + 1) * rows * d.dv];
                for line in 0..lines.count {
                    Self::gather(qs, &lines, plane, head * d.dq, d.dq, line, &mut qb);
                    Self::gather(ks, &lines, plane, head * d.dq, d.dq, line, &mut kb);
                    Self::gather(vs, &lines, plane, head * d.dv, d.dv, line, &mut vb);
                    yb.fill(T::zero());
                    for o in 0..lines.len {
                        let win = attention_window(o, lines.len, self.span);
                        window_weights(o, win, self.span, d.dq, &qb, &kb, rqh, rkh, &mut weights);
                        let yo = &mut yb[o * d.dv..(o + 1) * d.dv];
                        for (j, p) in (win.0..win.1).enumerate() {
                            let a = weights[j];
                            let row = p + self.span - 1 - o;
                            let vp = &vb[p * d.dv..(p + 1) * d.dv];
                            let rvp = &rvh[row * d.dv..(row + 1) * d.dv];
                            for c in 0..d.dv {
                                yo[c] += a * (vp[c] + rvp[c]);
                            }
                        }
                    }
                    Self::scatter_add(ys, &lines, plane, head * d.dv, d.dv, line, &yb);
                }
            }
        }
        Ok(Tensor::from_parts(vec![d.batch, cv, d.h, d.w], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let d = self.dims(inputs).expect("validated in forward");
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let (rq, rk, rv) = (inputs[3].data(), inputs[4].data(), inputs[5].data());
        let gy = grad.data();
        let lines = Lines::new(self.axis, d.h, d.w);
        let plane = d.h * d.w;
        let (cq, cv) = (self.heads * d.dq, self.heads * d.dv);
        let rows = 2 * self.span - 1;

        let mut dq_t = inputs[0].zeros_like();
        let mut dk_t = inputs[1].zeros_like();
        let mut dv_t = inputs[2].zeros_like();
        let mut drq_t = inputs[3].zeros_like();
        let mut drk_t = inputs[4].zeros_like();
        let mut drv_t = inputs[5].zeros_like();

        let mut qb = vec![T::zero(); lines.len * d.dq];
        let mut kb = vec![T::zero(); lines.len * d.dq];
        let mut vb = vec![T::zero(); lines.len * d.dv];
        let mut gb = vec![T::zero(); lines.len * d.dv];
        let mut dqb = vec![T::zero(); lines.len * d.dq];
        let mut dkb = vec![T::zero(); lines.len * d.dq];
        let mut dvb = vec![T::zero(); lines.len * d.dv];
        let mut weights = vec![T::zero(); lines.len];
        let mut dlogit = vec![T::zero(); lines.len];

        for b in 0..d.batch {
            let qs = &q[b * cq * plane..(b + 1) * cq * plane];
            let ks = &k[b * cq * plane..(b + 1) * cq * plane];
            let vs = &v[b * cv * plane..(b + 1) * cv * plane];
            let gs = &gy[b * cv * plane..(b + 1) * cv * plane];
            for head in 0..self.heads {
                let rqh = &rq[head * rows * d.dq..(head + 1) * rows * d.dq];
                let rkh = &rk[head * rows * d.dq..(head + 1) * rows * d.dq];
                let rvh = &rv[head * rows * d.dv..(head + 1) * rows * d.dv];
                let drq = &mut drq_t.data_mut()[head * rows * d.dq..(head + 1) * rows * d.dq];
                let drk = &mut drk_t.data_mut()[head * rows * d.dq..(head + 1) * rows * d.dq];
                let drv = &mut drv_t.data_mut()[head * rows * d.dv..(head + 1) * rows * d.dv];
                for line in 0..lines.count {
                    Self::gather(qs, &lines, plane, head * d.dq, d.dq, line, &mut qb);
                    Self::gather(ks, &lines, plane, head * d.dq, d.dq, line, &mut kb);
                    Self::gather(vs, &lines, plane, head * d.dv, d.dv, line, &mut vb);
                    Self::gather(gs, &lines, plane, head * d.dv, d.dv, line, &mut gb);
                    dqb.fill(T::zero());
                    dkb.fill(T::zero());
                    dvb.fill(T::zero());
                    for o in 0..lines.len {
                        let win = attention_window(o, lines.len, self.span);
                        window_weights(o, win, self.span, d.dq, &qb, &kb, rqh, rkh, &mut weights);
                        let go = &gb[o * d.dv..(o + 1) * d.dv];
                        // d(weight_j) = g_o . (v_p + rv[p-o]); softmax backward.
                        let mut weighted = T::zero();
                        for (j, p) in (win.0..win.1).enumerate() {
                            let row = p + self.span - 1 - o;
                            let da = dot(go, &vb[p * d.dv..(p + 1) * d.dv])
                                + dot(go, &rvh[row * d.dv..(row + 1) * d.dv]);
                            dlogit[j] = da;
                            weighted += weights[j] * da;
                        }
                        for (j, p) in (win.0..win.1).enumerate() {
                            let a = weights[j];
                            let dl = a * (dlogit[j] - weighted);
                            let row = p + self.span - 1 - o;
                            for c in 0..d.dv {
                                let ga = a * go[c];
                                dvb[p * d.dv + c] += ga;
                                drv[row * d.dv + c] += ga;
                            }
                            for c in 0..d.dq {
                                let qo = qb[o * d.dq + c];
                                let kp = kb[p * d.dq + c];
                                dqb[o * d.dq + c] += dl * (kp + rqh[row * d.dq + c]);
                                dkb[p * d.dq + c] += dl * (qo + rkh[row * d.dq + c]);
                                drq[row * d.dq + c] += dl * qo;
                                drk[row * d.dq + c] += dl * kp;
                            }
                        }
                    }
                    let off_q = b * cq * plane;
                    let off_v = b * cv * plane;
                    Self::scatter_add(&mut dq_t.data_mut()[off_q..], &lines, plane, head * d.dq, d.dq, line, &dqb);
                    Self::scatter_add(&mut dk_t.data_mut()[off_q..], &lines, plane, head * d.dq, d.dq, line, &dkb);
                    Self::scatter_add(&mut dv_t.data_mut()[off_v..], &lines, plane, head * d.dv, d.dv, line, &dvb);
                }
            }
        }
        vec![Some(dq_t), Some(dk_t), Some(dv_t), Some(drq_t), Some(drk_t), Some(drv_t)]
    }
}

/// Learned projections and relative-position tables of one multi-head axial
/// attention layer.
#[derive(Clone, Debug)]
pub struct AxialAttention {
    pub heads: usize,
    pub span: usize,
    pub in_channels: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    /// `[heads * key_dim, in_channels, 1, 1]`; head `h` owns rows
    /// `h * key_dim .. (h + 1) * key_dim`.
    pub w_q: Conv2dLayer,
    pub w_k: Conv2dLayer,
    pub w_v: Conv2dLayer,
    /// `[heads, 2 * span - 1, key_dim]`.
    pub r_q: ParamId,
    pub r_k: ParamId,
    /// `[heads, 2 * span - 1, value_dim]`.
    pub r_v: ParamId,
}

impl AxialAttention {
    /// Layer mapping `width` channels to `width` channels with `heads` heads
    /// of `width / heads` query and value channels each.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        span: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::config(
                format!("{name}.heads"),
                format!("width {width} is not divisible by {heads} heads"),
            ));
        }
        if span == 0 {
            return Err(Error::config(format!("{name}.span"), "span must be at least 1"));
        }
        let d = width / heads;
        let proj = |store: &mut ParamStore<T>, which: &str, rng: &mut _| {
            Conv2dLayer::new(store, &format!("{name}.{which}"), width, width, 1, 1, false, Init::FanIn(1.0), rng)
        };
        let w_q = proj(store, "w_q", rng)?;
        let w_k = proj(store, "w_k", rng)?;
        let w_v = proj(store, "w_v", rng)?;
        let rows = 2 * span - 1;
        let r_q = store.add(format!("{name}.r_q"), Tensor::zeros(&[heads, rows, d])?)?;
        let r_k = store.add(format!("{name}.r_k"), Tensor::zeros(&[heads, rows, d])?)?;
        let r_v = store.add(format!("{name}.r_v"), Tensor::zeros(&[heads, rows, d])?)?;
        Ok(Self {
            heads,
            span,
            in_channels: width,
            key_dim: d,
            value_dim: d,
            w_q,
            w_k,
            w_v,
            r_q,
            r_k,
            r_v,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.heads * self.value_dim
    }

    /// Runs every head along `axis` and concatenates head outputs along
    /// channels.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        axis: Axis,
    ) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4("axial_attention")?;
        if c != self.in_channels {
            return Err(Error::shape(
                "axial_attention",
                format!("input has {c} channels, layer expects {}", self.in_channels),
            ));
        }
        let q = self.w_q.forward(g, store, x)?;
        let k = self.w_k.forward(g, store, x)?;
        let v = self.w_v.forward(g, store, x)?;
        let rq = g.param(store, self.r_q);
        let rk = g.param(store, self.r_k);
        let rv = g.param(store, self.r_v);
        g.apply(
            AxialAttentionOp {
                axis,
                heads: self.heads,
                span: self.span,
            },
            &[q, k, v, rq, rk, rv],
        )
    }
}

/// Fan-in bound used for attention projections; exposed for tests that
/// re-randomize tables.
pub fn projection_bound(width: usize) -> f64 {
    fan_in_bound(width, 1.0)
}
