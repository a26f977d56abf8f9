//! Differentiable operations recorded on a [`Tape`].
//!
//! Each op validates shapes, computes the forward value eagerly, and (when
//! tracking is on) records a closure computing the local vector-Jacobian
//! product. Binary elementwise ops accept equal shapes or a scalar on either
//! side; there is no other implicit broadcasting. Row-bias and channel ops
//! are explicit, dedicated operations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Fixed 2x upsampling kernel choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn require_rank2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Dim(format!(
            "{what} must be rank-2, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF via the complementary error function.
fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal PDF.
fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Tape {
    // ── linear algebra ──────────────────────────────────────────────

    /// `a[m,k] @ b[k,n] -> [m,n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = require_rank2(a, "matmul lhs")?;
        let (k2, n) = require_rank2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul inner extents differ: {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out = Tensor::from_vec(matmul_raw(&a.data(), &b.data(), m, k, n), &[m, n])?;
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record("matmul", &[a, b], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            if ac.requires_grad() {
                let bt = transpose_raw(&bc.data(), k, n);
                ac.accumulate_grad(&matmul_raw(&g, &bt, m, n, k));
            }
            if bc.requires_grad() {
                let at = transpose_raw(&ac.data(), m, k);
                bc.accumulate_grad(&matmul_raw(&at, &g, k, m, n));
            }
        });
        Ok(out)
    }

    /// 2-D transpose.
    pub fn transpose(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = require_rank2(x, "transpose input")?;
        let out = Tensor::from_vec(transpose_raw(&x.data(), r, c), &[c, r])?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("transpose", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            xc.accumulate_grad(&transpose_raw(&g, c, r));
        });
        Ok(out)
    }

    // ── binary elementwise (equal shapes or scalar broadcast) ───────

    fn binary_shapes<'s>(a: &'s Tensor, b: &'s Tensor, op: &str) -> Result<&'s [usize]> {
        if a.shape() == b.shape() {
            Ok(a.shape())
        } else if a.is_scalar() {
            Ok(b.shape())
        } else if b.is_scalar() {
            Ok(a.shape())
        } else {
            Err(Error::Dim(format!(
                "{op}: shapes {:?} and {:?} differ (only scalar broadcast is supported)",
                a.shape(),
                b.shape()
            )))
        }
    }

    fn binary(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        fwd: fn(f64, f64) -> f64,
        // (g, a_val, b_val) -> (da, db)
        bwd: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let shape = Self::binary_shapes(a, b, op)?.to_vec();
        let numel: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let (asc, bsc) = (a.is_scalar() && numel > 1, b.is_scalar() && numel > 1);
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let av = ad[if asc { 0 } else { i }];
            let bv = bd[if bsc { 0 } else { i }];
            data.push(fwd(av, bv));
        }
        drop(ad);
        drop(bd);
        let out = Tensor::from_vec(data, &shape)?;
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(op, &[a, b], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let (ad, bd) = (ac.data(), bc.data());
            let mut da = vec![0.0; ad.len()];
            let mut db = vec![0.0; bd.len()];
            for (i, &gi) in g.iter().enumerate() {
                let av = ad[if asc { 0 } else { i }];
                let bv = bd[if bsc { 0 } else { i }];
                let (dai, dbi) = bwd(gi, av, bv);
                da[if asc { 0 } else { i }] += dai;
                db[if bsc { 0 } else { i }] += dbi;
            }
            drop(ad);
            drop(bd);
            if ac.requires_grad() {
                ac.accumulate_grad(&da);
            }
            if bc.requires_grad() {
                bc.accumulate_grad(&db);
            }
        });
        Ok(out)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, |g, _, _| (g, g))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, |x, y| x - y, |g, _, _| (g, -g))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            |g, x, y| (g / y, -g * x / (y * y)),
        )
    }

    /// Sum of equally shaped tensors in one node.
    pub fn add_n(&self, terms: &[&Tensor]) -> Result<Tensor> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Param("add_n needs at least one term".into()))?;
        let shape = first.shape().to_vec();
        for t in terms {
            if t.shape() != shape.as_slice() {
                return Err(Error::Dim(format!(
                    "add_n: shape {:?} differs from {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
        let mut data = vec![0.0; first.numel()];
        for t in terms {
            for (o, v) in data.iter_mut().zip(t.data().iter()) {
                *o += v;
            }
        }
        let out = Tensor::from_vec(data, &shape)?;
        let clones: Vec<Tensor> = terms.iter().map(|t| (*t).clone()).collect();
        let oc = out.clone();
        self.record("add_n", terms, &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            for t in &clones {
                if t.requires_grad() {
                    t.accumulate_grad(&g);
                }
            }
        });
        Ok(out)
    }

    pub fn add_scalar(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let data: Vec<f64> = x.data().iter().map(|&v| v + c).collect();
        let out = Tensor::from_vec(data, x.shape())?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("add_scalar", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            xc.accumulate_grad(&g);
        });
        Ok(out)
    }

    pub fn mul_scalar(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let data: Vec<f64> = x.data().iter().map(|&v| v * c).collect();
        let out = Tensor::from_vec(data, x.shape())?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("mul_scalar", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let delta: Vec<f64> = g.iter().map(|&gi| gi * c).collect();
            xc.accumulate_grad(&delta);
        });
        Ok(out)
    }

    // ── unary elementwise ───────────────────────────────────────────

    fn unary(
        &self,
        op: &'static str,
        x: &Tensor,
        fwd: impl Fn(f64) -> f64,
        // (g, x_val, y_val) -> dx
        bwd: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let data: Vec<f64> = x.data().iter().map(|&v| fwd(v)).collect();
        let out = Tensor::from_vec(data, x.shape())?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record(op, &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let (xd, od) = (xc.data(), oc.data());
            let delta: Vec<f64> = g
                .iter()
                .zip(xd.iter().zip(od.iter()))
                .map(|(&gi, (&xi, &yi))| bwd(gi, xi, yi))
                .collect();
            drop(xd);
            drop(od);
            xc.accumulate_grad(&delta);
        });
        Ok(out)
    }

    /// relu with relu'(0) = 0.
    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(
            "relu",
            x,
            |v| if v > 0.0 { v } else { 0.0 },
            |g, x, _| if x > 0.0 { g } else { 0.0 },
        )
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("sigmoid", x, stable_sigmoid, |g, _, y| g * y * (1.0 - y))
    }

    /// Exact Gaussian-CDF gelu: `x * Phi(x)`.
    pub fn gelu(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(
            "gelu",
            x,
            |v| v * norm_cdf(v),
            |g, x, _| g * (norm_cdf(x) + x * norm_pdf(x)),
        )
    }

    pub fn ln(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("ln", x, f64::ln, |g, x, _| g / x)
    }

    /// Square root; the backward guards the derivative at 0 so degenerate
    /// zero distances do not poison training with infinities.
    pub fn sqrt(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("sqrt", x, f64::sqrt, |g, _, y| g / (2.0 * y.max(1e-12)))
    }

    /// Clamp to `[lo, hi]`; gradient passes through inside the interval.
    pub fn clamp(&self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo <= hi) {
            return Err(Error::Param(format!("clamp: lo {lo} > hi {hi}")));
        }
        self.unary(
            "clamp",
            x,
            move |v| v.clamp(lo, hi),
            move |g, x, _| if (lo..=hi).contains(&x) { g } else { 0.0 },
        )
    }

    // ── reductions ─────────────────────────────────────────────────

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let s: f64 = x.data().iter().sum();
        let out = Tensor::from_vec(vec![s], &[1])?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("sum_all", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            xc.accumulate_grad(&vec![g[0]; xc.numel()]);
        });
        Ok(out)
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.numel();
        if n == 0 {
            return Err(Error::Dim("mean_all of empty tensor".into()));
        }
        let s: f64 = x.data().iter().sum();
        let out = Tensor::from_vec(vec![s / n as f64], &[1])?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("mean_all", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            xc.accumulate_grad(&vec![g[0] / n as f64; n]);
        });
        Ok(out)
    }

    // ── softmax / normalization ────────────────────────────────────

    /// Max-subtracted softmax along `axis`; each slice sums to 1.
    pub fn softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= x.rank() {
            return Err(Error::Dim(format!(
                "softmax axis {axis} out of range for shape {:?}",
                x.shape()
            )));
        }
        let shape = x.shape().to_vec();
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = x.data();
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(xd[idx(j)]);
                }
                let mut denom = 0.0;
                for j in 0..len {
                    let e = (xd[idx(j)] - mx).exp();
                    data[idx(j)] = e;
                    denom += e;
                }
                for j in 0..len {
                    data[idx(j)] /= denom;
                }
            }
        }
        drop(xd);
        let out = Tensor::from_vec(data, &shape)?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("softmax", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let od = oc.data();
            let mut delta = vec![0.0; od.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let mut dot = 0.0;
                    for j in 0..len {
                        dot += g[idx(j)] * od[idx(j)];
                    }
                    for j in 0..len {
                        delta[idx(j)] = od[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            drop(od);
            xc.accumulate_grad(&delta);
        });
        Ok(out)
    }

    /// Layer normalization over the last axis with elementwise affine.
    pub fn layer_norm(
        &self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        if eps <= 0.0 {
            return Err(Error::Param(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let shape = x.shape().to_vec();
        let c = *shape
            .last()
            .ok_or_else(|| Error::Dim("layer_norm on rank-0 tensor".into()))?;
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(Error::Dim(format!(
                "layer_norm gain/bias must have shape [{c}], got {:?} / {:?}",
                gain.shape(),
                bias.shape()
            )));
        }
        let rows = x.numel() / c;
        let xd = x.data();
        let gd = gain.data();
        let bd = bias.data();
        let mut data = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut means = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            means[r] = mu;
            inv_std[r] = is;
            for j in 0..c {
                data[r * c + j] = (row[j] - mu) * is * gd[j] + bd[j];
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);
        let out = Tensor::from_vec(data, &shape)?;
        let (xc, gc, bc, oc) = (x.clone(), gain.clone(), bias.clone(), out.clone());
        self.record("layer_norm", &[x, gain, bias], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let xd = xc.data();
            let gd = gc.data();
            let mut dx = vec![0.0; xd.len()];
            let mut dgain = vec![0.0; c];
            let mut dbias = vec![0.0; c];
            for r in 0..rows {
                let row = &xd[r * c..(r + 1) * c];
                let grow = &g[r * c..(r + 1) * c];
                let (mu, is) = (means[r], inv_std[r]);
                let mut mean_h = 0.0;
                let mut mean_hx = 0.0;
                for j in 0..c {
                    let xhat = (row[j] - mu) * is;
                    let h = gd[j] * grow[j];
                    mean_h += h;
                    mean_hx += h * xhat;
                    dgain[j] += grow[j] * xhat;
                    dbias[j] += grow[j];
                }
                mean_h /= c as f64;
                mean_hx /= c as f64;
                for j in 0..c {
                    let xhat = (row[j] - mu) * is;
                    dx[r * c + j] = (gd[j] * grow[j] - mean_h - xhat * mean_hx) * is;
                }
            }
            drop(xd);
            drop(gd);
            if xc.requires_grad() {
                xc.accumulate_grad(&dx);
            }
            if gc.requires_grad() {
                gc.accumulate_grad(&dgain);
            }
            if bc.requires_grad() {
                bc.accumulate_grad(&dbias);
            }
        });
        Ok(out)
    }

    /// Add a `[c]` bias to every row of a `[r, c]` matrix.
    pub fn add_bias(&self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (r, c) = require_rank2(x, "add_bias input")?;
        if b.shape() != [c] {
            return Err(Error::Dim(format!(
                "add_bias: bias shape {:?} does not match {c} columns",
                b.shape()
            )));
        }
        let xd = x.data();
        let bd = b.data();
        let mut data = vec![0.0; xd.len()];
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = xd[i * c + j] + bd[j];
            }
        }
        drop(xd);
        drop(bd);
        let out = Tensor::from_vec(data, x.shape())?;
        let (xc, bc, oc) = (x.clone(), b.clone(), out.clone());
        self.record("add_bias", &[x, b], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            if xc.requires_grad() {
                xc.accumulate_grad(&g);
            }
            if bc.requires_grad() {
                let mut db = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        db[j] += g[i * c + j];
                    }
                }
                bc.accumulate_grad(&db);
            }
        });
        Ok(out)
    }

    // ── convolution / resampling ───────────────────────────────────

    /// 3x3 cross-correlation with bias: `x[ci,h,w] * w[co,ci,3,3] + b[co]`.
    pub fn conv2d(
        &self,
        x: &Tensor,
        w: &Tensor,
        b: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        if x.rank() != 3 || w.rank() != 4 {
            return Err(Error::Dim(format!(
                "conv2d expects x rank-3 and w rank-4, got {:?} / {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, wci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if kh != 3 || kw != 3 {
            return Err(Error::Dim(format!("conv2d kernel must be 3x3, got {kh}x{kw}")));
        }
        if wci != ci {
            return Err(Error::Dim(format!(
                "conv2d channel mismatch: input {ci}, kernel expects {wci}"
            )));
        }
        if b.shape() != [co] {
            return Err(Error::Dim(format!(
                "conv2d bias shape {:?} does not match {co} output channels",
                b.shape()
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Param(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let oh = (h + 2 * pad).checked_sub(3).map(|v| v / stride + 1);
        let ow = (wd + 2 * pad).checked_sub(3).map(|v| v / stride + 1);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
            _ => {
                return Err(Error::Dim(format!(
                    "conv2d output would be empty for input {h}x{wd}, pad {pad}, stride {stride}"
                )))
            }
        };

        let xd = x.data();
        let wdat = w.data();
        let bd = b.data();
        let mut data = vec![0.0; co * oh * ow];
        for c_out in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bd[c_out];
                    for c_in in 0..ci {
                        for u in 0..3 {
                            let src_i = (i * stride + u) as isize - pad as isize;
                            if src_i < 0 || src_i >= h as isize {
                                continue;
                            }
                            for v in 0..3 {
                                let src_j = (j * stride + v) as isize - pad as isize;
                                if src_j < 0 || src_j >= wd as isize {
                                    continue;
                                }
                                acc += xd[(c_in * h + src_i as usize) * wd + src_j as usize]
                                    * wdat[((c_out * ci + c_in) * 3 + u) * 3 + v];
                            }
                        }
                    }
                    data[(c_out * oh + i) * ow + j] = acc;
                }
            }
        }
        drop(xd);
        drop(wdat);
        drop(bd);
        let out = Tensor::from_vec(data, &[co, oh, ow])?;
        let (xc, wc, bc, oc) = (x.clone(), w.clone(), b.clone(), out.clone());
        self.record("conv2d", &[x, w, b], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let xd = xc.data();
            let wdat = wc.data();
            let mut dx = vec![0.0; xd.len()];
            let mut dw = vec![0.0; wdat.len()];
            let mut db = vec![0.0; co];
            for c_out in 0..co {
                for i in 0..oh {
                    for j in 0..ow {
                        let gv = g[(c_out * oh + i) * ow + j];
                        if gv == 0.0 {
                            continue;
                        }
                        db[c_out] += gv;
                        for c_in in 0..ci {
                            for u in 0..3 {
                                let src_i = (i * stride + u) as isize - pad as isize;
                                if src_i < 0 || src_i >= h as isize {
                                    continue;
                                }
                                for v in 0..3 {
                                    let src_j = (j * stride + v) as isize - pad as isize;
                                    if src_j < 0 || src_j >= wd as isize {
                                        continue;
                                    }
                                    let xi = (c_in * h + src_i as usize) * wd + src_j as usize;
                                    let wi = ((c_out * ci + c_in) * 3 + u) * 3 + v;
                                    dw[wi] += gv * xd[xi];
                                    dx[xi] += gv * wdat[wi];
                                }
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(wdat);
            if xc.requires_grad() {
                xc.accumulate_grad(&dx);
            }
            if wc.requires_grad() {
                wc.accumulate_grad(&dw);
            }
            if bc.requires_grad() {
                bc.accumulate_grad(&db);
            }
        });
        Ok(out)
    }

    /// Fixed non-learnable 2x upsampling; backward is the exact transpose of
    /// the forward interpolation matrix.
    pub fn upsample2x(&self, x: &Tensor, mode: UpsampleMode) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(Error::Dim(format!(
                "upsample2x expects rank-3 [c,h,w], got {:?}",
                x.shape()
            )));
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if h < 1 || w < 1 {
            return Err(Error::Dim("upsample2x needs h, w >= 1".into()));
        }
        let (oh, ow) = (2 * h, 2 * w);
        // (index0, index1, weight for index1) per output coordinate
        let axis_table = |n: usize, on: usize| -> Vec<(usize, usize, f64)> {
            (0..on)
                .map(|i| match mode {
                    UpsampleMode::Nearest => (i / 2, i / 2, 0.0),
                    UpsampleMode::Bilinear => {
                        let src = (i as f64 + 0.5) / 2.0 - 0.5;
                        let i0 = src.floor();
                        let frac = src - i0;
                        let a = (i0.max(0.0) as usize).min(n - 1);
                        let b = ((i0 as isize + 1).max(0) as usize).min(n - 1);
                        (a, b, frac)
                    }
                })
                .collect()
        };
        let rows = axis_table(h, oh);
        let cols = axis_table(w, ow);
        let xd = x.data();
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let plane = &xd[ch * h * w..(ch + 1) * h * w];
            for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                    let v = (1.0 - fr) * (1.0 - fc) * plane[r0 * w + c0]
                        + (1.0 - fr) * fc * plane[r0 * w + c1]
                        + fr * (1.0 - fc) * plane[r1 * w + c0]
                        + fr * fc * plane[r1 * w + c1];
                    data[(ch * oh + i) * ow + j] = v;
                }
            }
        }
        drop(xd);
        let out = Tensor::from_vec(data, &[c, oh, ow])?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("upsample2x", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                        let gv = g[(ch * oh + i) * ow + j];
                        dx[(ch * h + r0) * w + c0] += (1.0 - fr) * (1.0 - fc) * gv;
                        dx[(ch * h + r0) * w + c1] += (1.0 - fr) * fc * gv;
                        dx[(ch * h + r1) * w + c0] += fr * (1.0 - fc) * gv;
                        dx[(ch * h + r1) * w + c1] += fr * fc * gv;
                    }
                }
            }
            xc.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity at inference or `p = 0`.
    pub fn dropout(
        &self,
        x: &Tensor,
        p: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout p must be in [0,1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let data: Vec<f64> = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(data, x.shape())?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("dropout", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let delta: Vec<f64> = g.iter().zip(&mask).map(|(&gi, &m)| gi * m).collect();
            xc.accumulate_grad(&delta);
        });
        Ok(out)
    }

    // ── shape ops ──────────────────────────────────────────────────

    pub fn reshape(&self, x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
        let numel: usize = new_shape.iter().product();
        if numel != x.numel() {
            return Err(Error::Dim(format!(
                "reshape {:?} -> {:?} changes element count",
                x.shape(),
                new_shape
            )));
        }
        let out = Tensor::from_vec(x.to_vec(), new_shape)?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("reshape", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            xc.accumulate_grad(&g);
        });
        Ok(out)
    }

    /// Rows `[start, start+count)` of a rank-2 tensor.
    pub fn slice_rows(&self, x: &Tensor, start: usize, count: usize) -> Result<Tensor> {
        let (r, c) = require_rank2(x, "slice_rows input")?;
        if start + count > r {
            return Err(Error::Dim(format!(
                "slice_rows [{start}, {}) out of range for {r} rows",
                start + count
            )));
        }
        let data = x.data()[start * c..(start + count) * c].to_vec();
        let out = Tensor::from_vec(data, &[count, c])?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("slice_rows", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut dx = vec![0.0; r * c];
            dx[start * c..(start + count) * c].copy_from_slice(&g);
            xc.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Stack rank-2 tensors with equal column counts along axis 0.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Param("concat_rows needs at least one part".into()))?;
        let (_, c) = require_rank2(first, "concat_rows part")?;
        let mut total_rows = 0;
        for p in parts {
            let (pr, pc) = require_rank2(p, "concat_rows part")?;
            if pc != c {
                return Err(Error::Dim(format!(
                    "concat_rows: column counts differ ({pc} vs {c})"
                )));
            }
            total_rows += pr;
        }
        let mut data = Vec::with_capacity(total_rows * c);
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let out = Tensor::from_vec(data, &[total_rows, c])?;
        let clones: Vec<Tensor> = parts.iter().map(|t| (*t).clone()).collect();
        let oc = out.clone();
        self.record("concat_rows", parts, &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut offset = 0;
            for t in &clones {
                let n = t.numel();
                if t.requires_grad() {
                    t.accumulate_grad(&g[offset..offset + n]);
                }
                offset += n;
            }
        });
        Ok(out)
    }

    /// Columns `[start, start+count)` of a rank-2 tensor.
    pub fn slice_cols(&self, x: &Tensor, start: usize, count: usize) -> Result<Tensor> {
        let (r, c) = require_rank2(x, "slice_cols input")?;
        if start + count > c {
            return Err(Error::Dim(format!(
                "slice_cols [{start}, {}) out of range for {c} columns",
                start + count
            )));
        }
        let xd = x.data();
        let mut data = Vec::with_capacity(r * count);
        for i in 0..r {
            data.extend_from_slice(&xd[i * c + start..i * c + start + count]);
        }
        drop(xd);
        let out = Tensor::from_vec(data, &[r, count])?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("slice_cols", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                dx[i * c + start..i * c + start + count]
                    .copy_from_slice(&g[i * count..(i + 1) * count]);
            }
            xc.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Concatenate rank-2 tensors with equal row counts along axis 1.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Param("concat_cols needs at least one part".into()))?;
        let (r, _) = require_rank2(first, "concat_cols part")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total_cols = 0;
        for p in parts {
            let (pr, pc) = require_rank2(p, "concat_cols part")?;
            if pr != r {
                return Err(Error::Dim(format!(
                    "concat_cols: row counts differ ({pr} vs {r})"
                )));
            }
            widths.push(pc);
            total_cols += pc;
        }
        let mut data = vec![0.0; r * total_cols];
        let mut offset = 0;
        for (p, &pc) in parts.iter().zip(&widths) {
            let pd = p.data();
            for i in 0..r {
                data[i * total_cols + offset..i * total_cols + offset + pc]
                    .copy_from_slice(&pd[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let out = Tensor::from_vec(data, &[r, total_cols])?;
        let clones: Vec<Tensor> = parts.iter().map(|t| (*t).clone()).collect();
        let oc = out.clone();
        self.record("concat_cols", parts, &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut offset = 0;
            for (t, &pc) in clones.iter().zip(&widths) {
                if t.requires_grad() {
                    let mut dt = vec![0.0; r * pc];
                    for i in 0..r {
                        dt[i * pc..(i + 1) * pc].copy_from_slice(
                            &g[i * total_cols + offset..i * total_cols + offset + pc],
                        );
                    }
                    t.accumulate_grad(&dt);
                }
                offset += pc;
            }
        });
        Ok(out)
    }

    /// Slice a `[1,h,w]` image into `n = (h*w)/p^2` non-overlapping patches in
    /// row-major patch order, each flattened to length `p*p`.
    pub fn patchify(&self, x: &Tensor, p: usize) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[0] != 1 {
            return Err(Error::Dim(format!(
                "patchify expects [1,h,w], got {:?}",
                x.shape()
            )));
        }
        let (h, w) = (x.shape()[1], x.shape()[2]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Dim(format!(
                "patchify: image {h}x{w} not divisible by patch size {p}"
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let n = gh * gw;
        let xd = x.data();
        let mut data = vec![0.0; n * p * p];
        let mut index_map = vec![0usize; n * p * p];
        for pi in 0..gh {
            for pj in 0..gw {
                let row = pi * gw + pj;
                for u in 0..p {
                    for v in 0..p {
                        let src = (pi * p + u) * w + (pj * p + v);
                        let dst = row * p * p + u * p + v;
                        data[dst] = xd[src];
                        index_map[dst] = src;
                    }
                }
            }
        }
        drop(xd);
        let out = Tensor::from_vec(data, &[n, p * p])?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("patchify", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut dx = vec![0.0; h * w];
            for (dst, &src) in index_map.iter().enumerate() {
                dx[src] += g[dst];
            }
            xc.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Normalize the channel vector at every spatial position of a `[c,h,w]`
    /// map to (nearly) unit length: `v / sqrt(sum_c v^2 + 1e-10)`.
    pub fn unit_normalize_channels(&self, x: &Tensor) -> Result<Tensor> {
        const DELTA: f64 = 1e-10;
        if x.rank() != 3 {
            return Err(Error::Dim(format!(
                "unit_normalize_channels expects [c,h,w], got {:?}",
                x.shape()
            )));
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let hw = h * w;
        let xd = x.data();
        let mut data = vec![0.0; xd.len()];
        let mut inv_norms = vec![0.0; hw];
        for pos in 0..hw {
            let mut s = DELTA;
            for ch in 0..c {
                let v = xd[ch * hw + pos];
                s += v * v;
            }
            let inv = 1.0 / s.sqrt();
            inv_norms[pos] = inv;
            for ch in 0..c {
                data[ch * hw + pos] = xd[ch * hw + pos] * inv;
            }
        }
        drop(xd);
        let out = Tensor::from_vec(data, x.shape())?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record("unit_normalize_channels", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let xd = xc.data();
            let mut dx = vec![0.0; xd.len()];
            for pos in 0..hw {
                let inv = inv_norms[pos];
                let mut dot = 0.0;
                for ch in 0..c {
                    dot += g[ch * hw + pos] * xd[ch * hw + pos];
                }
                let k = dot * inv * inv * inv;
                for ch in 0..c {
                    dx[ch * hw + pos] = g[ch * hw + pos] * inv - xd[ch * hw + pos] * k;
                }
            }
            drop(xd);
            xc.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Multiply each channel plane of `x[c,h,w]` by a fixed per-channel
    /// weight. The weights are constants; no gradient flows to them.
    pub fn scale_channels(&self, x: &Tensor, weights: &[f64]) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(Error::Dim(format!(
                "scale_channels expects [c,h,w], got {:?}",
                x.shape()
            )));
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if weights.len() != c {
            return Err(Error::Dim(format!(
                "scale_channels: {} weights for {c} channels",
                weights.len()
            )));
        }
        let hw = h * w;
        let xd = x.data();
        let mut data = vec![0.0; xd.len()];
        for ch in 0..c {
            for pos in 0..hw {
                data[ch * hw + pos] = xd[ch * hw + pos] * weights[ch];
            }
        }
        drop(xd);
        let out = Tensor::from_vec(data, x.shape())?;
        let wcopy = weights.to_vec();
        let (xc, oc) = (x.clone(), out.clone());
        self.record("scale_channels", &[x], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut dx = vec![0.0; g.len()];
            for ch in 0..c {
                for pos in 0..hw {
                    dx[ch * hw + pos] = g[ch * hw + pos] * wcopy[ch];
                }
            }
            xc.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Numerically stable cross-entropy of a logit vector against a class
    /// index: `logsumexp(logits) - logits[label]`.
    pub fn cross_entropy(&self, logits: &Tensor, label: usize) -> Result<Tensor> {
        let k = logits.numel();
        if logits.rank() > 2 || (logits.rank() == 2 && logits.shape()[0] != 1) {
            return Err(Error::Dim(format!(
                "cross_entropy expects a logit vector, got {:?}",
                logits.shape()
            )));
        }
        if label >= k {
            return Err(Error::Input(format!(
                "cross_entropy label {label} out of range for {k} classes"
            )));
        }
        let ld = logits.data();
        let mx = ld.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = ld.iter().map(|&v| (v - mx).exp()).sum();
        let loss = mx + sum_exp.ln() - ld[label];
        let probs: Vec<f64> = ld.iter().map(|&v| (v - mx).exp() / sum_exp).collect();
        drop(ld);
        let out = Tensor::from_vec(vec![loss], &[1])?;
        let (lc, oc) = (logits.clone(), out.clone());
        self.record("cross_entropy", &[logits], &out, move || {
            let Some(g) = oc.grad_snapshot() else { return };
            let mut delta: Vec<f64> = probs.iter().map(|&p| p * g[0]).collect();
            delta[label] -= g[0];
            lc.accumulate_grad(&delta);
        });
        Ok(out)
    }
}

/// Reassemble `patchify` output back into the original `[1,h,w]` image;
/// exact inverse of the patch partition.
pub fn unpatchify(patches: &Tensor, p: usize, h: usize, w: usize) -> Result<Tensor> {
    if patches.rank() != 2 || patches.shape()[1] != p * p {
        return Err(Error::Dim(format!(
            "unpatchify expects [n, {}], got {:?}",
            p * p,
            patches.shape()
        )));
    }
    let (gh, gw) = (h / p, w / p);
    if gh * gw != patches.shape()[0] || h % p != 0 || w % p != 0 {
        return Err(Error::Dim(format!(
            "unpatchify: {} patches do not tile {h}x{w} with p={p}",
            patches.shape()[0]
        )));
    }
    let pd = patches.data();
    let mut data = vec![0.0; h * w];
    for pi in 0..gh {
        for pj in 0..gw {
            let row = pi * gw + pj;
            for u in 0..p {
                for v in 0..p {
                    data[(pi * p + u) * w + (pj * p + v)] = pd[row * p * p + u * p + v];
                }
            }
        }
    }
    drop(pd);
    Tensor::from_vec(data, &[1, h, w])
}
