//! Straightforward reference implementations used to cross-check the library.
//! Everything here works on plain `f64` slices in row-major order.

#![allow(dead_code)]

/// Quadruple-loop cross-correlation. `x` is `[b, cin, h, w]`, `k` is
/// `[cout, cin, kh, kw]`.
pub fn conv2d(
    x: &[f64],
    xs: [usize; 4],
    k: &[f64],
    ks: [usize; 4],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [b, cin, h, w] = xs;
    let [cout, kcin, kh, kw] = ks;
    assert_eq!(cin, kcin);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.get(co).copied().unwrap_or(0.0);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((n * cin + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((n * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [b, cout, oh, ow])
}

/// 2x bilinear upsampling of one `h x w` plane with half-pixel centers.
/// Along each axis, output `2i` is `0.75 x[i] + 0.25 x[i-1]` and output
/// `2i+1` is `0.75 x[i] + 0.25 x[i+1]`, with indices clamped to the plane.
pub fn upsample2x(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let axis = |n: usize, o: usize| -> [(usize, f64); 2] {
        let i = o / 2;
        let nb = if o.is_multiple_of(2) { i.saturating_sub(1) } else { (i + 1).min(n - 1) };
        [(i, 0.75), (nb, 0.25)]
    };
    let mut out = vec![0.0; 4 * h * w];
    for oy in 0..2 * h {
        for ox in 0..2 * w {
            let mut acc = 0.0;
            for (y, wy) in axis(h, oy) {
                for (x0, wx) in axis(w, ox) {
                    acc += wy * wx * x[y * w + x0];
                }
            }
            out[oy * 2 * w + ox] = acc;
        }
    }
    out
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Per-pixel binary cross entropy written directly from the definition.
pub fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            let p = 1.0 / (1.0 + (-z).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// One attention head's weights.
#[derive(Clone, Debug)]
pub struct Head {
    /// `[dq, c]`
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    /// `[dv, c]`
    pub wv: Vec<f64>,
    /// `[2m - 1, dq]`
    pub rq: Vec<f64>,
    pub rk: Vec<f64>,
    /// `[2m - 1, dv]`
    pub rv: Vec<f64>,
    pub dq: usize,
    pub dv: usize,
}

/// Which positions `o` may attend to: a run of `min(m, len)` positions
/// centered on `o`, pushed back inside the axis when it would overhang.
pub fn window_mask(len: usize, span: usize) -> Vec<Vec<bool>> {
    let m = span.min(len) as isize;
    let mut mask = vec![vec![false; len]; len];
    for (o, row) in mask.iter_mut().enumerate() {
        let mut lo = o as isize - (m - 1) / 2;
        let mut hi = lo + m - 1;
        if lo < 0 {
            hi -= lo;
            lo = 0;
        }
        if hi > len as isize - 1 {
            lo -= hi - (len as isize - 1);
        }
        for p in lo..lo + m {
            row[p as usize] = true;
        }
    }
    mask
}

/// Dense single-head axial attention over one `[c, h, w]` image. The full
/// `len x len` logit matrix is materialized for every line with positions
/// outside the window masked out.
pub fn axial_head(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    head: &Head,
    span: usize,
    along_width: bool,
) -> Vec<f64> {
    let (lines, len) = if along_width { (h, w) } else { (w, h) };
    let at = |line: usize, pos: usize| if along_width { line * w + pos } else { pos * w + line };
    let project = |m: &[f64], d: usize, line: usize, pos: usize| -> Vec<f64> {
        (0..d)
            .map(|r| (0..c).map(|ci| m[r * c + ci] * x[ci * h * w + at(line, pos)]).sum())
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mask = window_mask(len, span);
    let mut out = vec![0.0; head.dv * h * w];
    for line in 0..lines {
        let q: Vec<Vec<f64>> = (0..len).map(|p| project(&head.wq, head.dq, line, p)).collect();
        let k: Vec<Vec<f64>> = (0..len).map(|p| project(&head.wk, head.dq, line, p)).collect();
        let v: Vec<Vec<f64>> = (0..len).map(|p| project(&head.wv, head.dv, line, p)).collect();
        for o in 0..len {
            let mut logits = vec![f64::NEG_INFINITY; len];
            for p in 0..len {
                if !mask[o][p] {
                    continue;
                }
                let row = (p as isize - o as isize + span as isize - 1) as usize;
                let rq = &head.rq[row * head.dq..(row + 1) * head.dq];
                let rk = &head.rk[row * head.dq..(row + 1) * head.dq];
                logits[p] = dot(&q[o], &k[p]) + dot(&q[o], rq) + dot(&k[p], rk);
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for dvi in 0..head.dv {
                let mut acc = 0.0;
                for p in 0..len {
                    if !mask[o][p] {
                        continue;
                    }
                    let row = (p as isize - o as isize + span as isize - 1) as usize;
                    acc += e[p] / s * (v[p][dvi] + head.rv[row * head.dv + dvi]);
                }
                out[dvi * h * w + at(line, o)] = acc;
            }
        }
    }
    out
}

/// Confusion counts `(tp, fp, tn, fn)` with `true` as the positive class.
pub fn confusion(pred: &[bool], truth: &[bool]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}
