use super::{MatMulSpec, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// `(outer, len, inner)` extents around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        out.extend_from_slice(data);
        return (out, out_shape);
    }
    let last = rank - 1;
    let last_len = out_shape[last];
    let last_stride = strides[last];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < n {
        for j in 0..last_len {
            out.push(data[base + j * last_stride]);
        }
        // advance the multi-index over all but the last axis
        let mut d = last;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(0.044715) * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::lit(3.0 * 0.044715) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(&self, op: Op<T>, value: Tensor<T>) -> Var<'t, T> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn same_shape(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::shape(op, &a, &b));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Var<'t, T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(other, op)?;
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    fn binary(&self, other: &Var<'t, T>, op: Op<T>, value: Tensor<T>) -> Var<'t, T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), v))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), v))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), v))
    }

    /// `x[..., n] + b[n]`, broadcasting `b` over every leading index.
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let bs = bias.shape();
        if bs.len() != 1 || xs.last() != Some(&bs[0]) {
            return Err(Error::shape("add_bias", &xs, &bs));
        }
        let v = {
            let nodes = self.tape.nodes.borrow();
            let b = nodes[bias.id].value.data();
            let mut out = nodes[self.id].value.clone();
            for row in out.data_mut().chunks_mut(b.len()) {
                for (o, &bb) in row.iter_mut().zip(b) {
                    *o += bb;
                }
            }
            out
        };
        Ok(self.binary(bias, Op::AddBias(self.id, bias.id), v))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        let v = self.with_value(|t| t.map(|x| x * c));
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        let v = self.with_value(|t| t.map(|x| x + c));
        self.unary(Op::AddScalar(self.id), v)
    }

    /// Multiplies every element by the single-element tensor `s`.
    pub fn mul_scalar(&self, s: &Var<'t, T>) -> Result<Var<'t, T>> {
        let sv = s.with_value(|t| {
            if t.len() == 1 {
                Ok(t.item())
            } else {
                Err(Error::shape("mul_scalar", &[1], t.shape()))
            }
        })?;
        let v = self.with_value(|t| t.map(|x| x * sv));
        Ok(self.binary(s, Op::MulScalarVar(self.id, s.id), v))
    }

    /// Matrix product over the last two axes.
    ///
    /// Leading (batch) axes must either match exactly or be absent on one
    /// side, in which case that operand is shared across the batch.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let la = &sa[..sa.len() - 2];
        let lb = &sb[..sb.len() - 2];
        if k != k2 || !(la == lb || la.is_empty() || lb.is_empty()) {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let lead: Vec<usize> = if la.is_empty() { lb.to_vec() } else { la.to_vec() };
        let batch = numel(&lead);
        let spec = MatMulSpec {
            a: self.id,
            b: other.id,
            m,
            k,
            n,
            batch,
            a_batched: !la.is_empty(),
            b_batched: !lb.is_empty(),
        };
        let mut out_shape = lead;
        out_shape.extend([m, n]);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.id].value.data();
            let b = nodes[other.id].value.data();
            let mut c = vec![T::zero(); batch * m * n];
            if !spec.b_batched {
                // one tall product: [batch*m, k] x [k, n]
                let rows = if spec.a_batched { batch * m } else { m };
                if spec.a_batched {
                    T::gemm(rows, k, n, a, k as isize, 1, b, n as isize, 1, &mut c);
                } else {
                    T::gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, &mut c);
                }
            } else {
                for bi in 0..batch {
                    let a_off = if spec.a_batched { bi * m * k } else { 0 };
                    T::gemm(
                        m,
                        k,
                        n,
                        &a[a_off..a_off + m * k],
                        k as isize,
                        1,
                        &b[bi * k * n..(bi + 1) * k * n],
                        n as isize,
                        1,
                        &mut c[bi * m * n..(bi + 1) * m * n],
                    );
                }
            }
            Tensor::new(out_shape, c)?
        };
        Ok(self.binary(other, Op::MatMul(spec), value))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid("permute", format!("axes {axes:?} for shape {shape:?}")));
        }
        let value = self.with_value(|t| {
            let (data, s) = permute_data(t.data(), t.shape(), axes);
            Tensor::new(s, data)
        })?;
        Ok(self.unary(Op::Permute(self.id, axes.to_vec()), value))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::invalid("transpose", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().reshape(shape.to_vec())?;
        Ok(self.unary(Op::Reshape(self.id), value))
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::invalid("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let value = self.with_value(|t| {
            let d = t.data();
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for i in 0..len {
                    let src = &d[(o * len + i) * inner..(o * len + i + 1) * inner];
                    for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            let mut s = shape.clone();
            s.remove(axis);
            Tensor::new(s, out)
        })?;
        Ok(self.unary(Op::SumAxis(self.id, axis), value))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid("mean_axis", "axis out of range"))?;
        Ok(self.sum_axis(axis)?.scale(T::one() / T::from_usize_lossy(len)))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Var<'t, T>> {
        let n = self.with_value(|t| t.len());
        self.reshape(&[n])?.sum_axis(0)
    }

    pub fn mean_all(&self) -> Result<Var<'t, T>> {
        let n = self.with_value(|t| t.len());
        Ok(self.sum_all()?.scale(T::one() / T::from_usize_lossy(n)))
    }

    /// Softmax along `axis`, stabilised by max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        self.masked_softmax(axis, None)
    }

    /// Softmax along `axis` restricted to entries whose `mask` is true.
    ///
    /// `mask` has the full shape of `self`. Masked entries output exactly
    /// zero and take no part in normalisation. A slice with every entry
    /// masked is an error.
    pub fn masked_softmax(&self, axis: usize, mask: Option<&[bool]>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::invalid("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        if let Some(m) = mask {
            if m.len() != numel(&shape) {
                return Err(Error::shape("softmax mask", &shape, &[m.len()]));
            }
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let value = self.with_value(|t| -> Result<Tensor<T>> {
            let d = t.data();
            let mut out = vec![T::zero(); d.len()];
            let on = |i: usize| mask.map_or(true, |m| m[i]);
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let mut mx = T::neg_infinity();
                    let mut any = false;
                    for i in 0..len {
                        if on(at(i)) {
                            any = true;
                            mx = mx.max(d[at(i)]);
                        }
                    }
                    if !any {
                        return Err(Error::UndefinedSlice { op: "softmax" });
                    }
                    let mut sum = T::zero();
                    for i in 0..len {
                        if on(at(i)) {
                            let e = (d[at(i)] - mx).exp();
                            out[at(i)] = e;
                            sum += e;
                        }
                    }
                    for i in 0..len {
                        out[at(i)] /= sum;
                    }
                }
            }
            Tensor::new(shape.clone(), out)
        })?;
        Ok(self.unary(Op::Softmax(self.id, axis), value))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::invalid("log_softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let value = self.with_value(|t| {
            let d = t.data();
            let mut out = vec![T::zero(); d.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let mx = (0..len).map(|i| d[at(i)]).fold(T::neg_infinity(), T::max);
                    let lse = (0..len).map(|i| (d[at(i)] - mx).exp()).sum::<T>().ln() + mx;
                    for i in 0..len {
                        out[at(i)] = d[at(i)] - lse;
                    }
                }
            }
            Tensor::new(shape.clone(), out)
        })?;
        Ok(self.unary(Op::LogSoftmax(self.id, axis), value))
    }

    pub fn exp(&self) -> Var<'t, T> {
        let v = self.with_value(|t| t.map(T::exp));
        self.unary(Op::Exp(self.id), v)
    }

    pub fn ln(&self) -> Var<'t, T> {
        let v = self.with_value(|t| t.map(T::ln));
        self.unary(Op::Log(self.id), v)
    }

    pub fn relu(&self) -> Var<'t, T> {
        let v = self.with_value(|t| t.map(|x| x.max(T::zero())));
        self.unary(Op::Relu(self.id), v)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t, T> {
        let v = self.with_value(|t| t.map(gelu_fwd));
        self.unary(Op::Gelu(self.id), v)
    }

    /// Layer normalisation over the last axis: `(x - mean) / sqrt(var + eps) * gain + bias`.
    /// A constant slice normalises to zeros before gain and bias.
    pub fn layer_norm(&self, gain: &Var<'t, T>, bias: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let n = *xs.last().ok_or_else(|| Error::invalid("layer_norm", "rank-0 input"))?;
        for p in [gain, bias] {
            if p.shape() != [n] {
                return Err(Error::shape("layer_norm", &xs, &p.shape()));
            }
        }
        let (value, xhat, rstd) = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.data();
            let g = nodes[gain.id].value.data();
            let b = nodes[bias.id].value.data();
            let rows = x.len() / n;
            let nf = T::from_usize_lossy(n);
            let mut out = vec![T::zero(); x.len()];
            let mut xhat = vec![T::zero(); x.len()];
            let mut rstd = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &x[r * n..(r + 1) * n];
                let mean = row.iter().copied().sum::<T>() / nf;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                let rs = T::one() / (var + eps).sqrt();
                rstd.push(rs);
                for j in 0..n {
                    let h = (row[j] - mean) * rs;
                    xhat[r * n + j] = h;
                    out[r * n + j] = h * g[j] + b[j];
                }
            }
            (Tensor::new(xs.clone(), out)?, xhat, rstd)
        };
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// `x / max(||x||_2, eps)` along the last axis.
    pub fn l2_normalize(&self, eps: T) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let n = *xs.last().ok_or_else(|| Error::invalid("l2_normalize", "rank-0 input"))?;
        let (value, norms) = self.with_value(|t| {
            let mut out = t.clone();
            let mut norms = Vec::with_capacity(t.len() / n);
            for row in out.data_mut().chunks_mut(n) {
                let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                norms.push(norm);
                let d = norm.max(eps);
                for v in row.iter_mut() {
                    *v /= d;
                }
            }
            (out, norms)
        });
        Ok(self.unary(Op::L2Normalize { x: self.id, norms, eps }, value))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(xs: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let tape = first.tape;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for x in xs {
            let s = x.shape();
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &base, &s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let value = {
            let nodes = tape.nodes.borrow();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for x in xs {
                    let t = &nodes[x.id].value;
                    let len = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
                }
            }
            let mut s = base.clone();
            s[axis] = total;
            Tensor::new(s, out)?
        };
        let rg = xs.iter().any(|x| x.requires_grad());
        Ok(tape.push(value, Op::Concat(xs.iter().map(|x| x.id).collect(), axis), rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let value = self.with_value(|t| {
            let d = t.data();
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * full + start) * inner;
                out.extend_from_slice(&d[from..from + len * inner]);
            }
            let mut s = shape.clone();
            s[axis] = len;
            Tensor::new(s, out)
        })?;
        Ok(self.unary(Op::Narrow { x: self.id, axis, start }, value))
    }

    /// Gathers entries `index` along `axis` (repeats allowed).
    pub fn index_select(&self, axis: usize, index: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || index.is_empty() {
            return Err(Error::invalid("index_select", format!("axis {axis} for shape {shape:?}")));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= shape[axis]) {
            return Err(Error::invalid("index_select", format!("index {bad} >= {}", shape[axis])));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let value = self.with_value(|t| {
            let d = t.data();
            let mut out = Vec::with_capacity(outer * index.len() * inner);
            for o in 0..outer {
                for &i in index {
                    let from = (o * full + i) * inner;
                    out.extend_from_slice(&d[from..from + inner]);
                }
            }
            let mut s = shape.clone();
            s[axis] = index.len();
            Tensor::new(s, out)
        })?;
        Ok(self.unary(
            Op::IndexSelect {
                x: self.id,
                axis,
                index: index.to_vec(),
            },
            value,
        ))
    }

    /// Circular linear-interpolation gather.
    ///
    /// `self` is a stack of sequences `[..., T, D]`, `pos` holds sampling
    /// positions `[..., Q, N]` with the same leading axes. Each output row is
    /// `(1 - w) * seq[floor(p)] + w * seq[(floor(p) + 1) mod period]` with
    /// `w = p - floor(p)`, giving `[..., Q, N, D]`. `periods` (one per leading
    /// index, default `T`) bounds the valid prefix of each sequence; positions
    /// must already lie in `[0, period)`.
    pub fn interp_gather(&self, pos: &Var<'t, T>, periods: Option<&[usize]>) -> Result<Var<'t, T>> {
        let ss = self.shape();
        let ps = pos.shape();
        if ss.len() < 2 || ps.len() < 2 || ss[..ss.len() - 2] != ps[..ps.len() - 2] {
            return Err(Error::shape("interp_gather", &ss, &ps));
        }
        let (t_len, d) = (ss[ss.len() - 2], ss[ss.len() - 1]);
        let (q, n) = (ps[ps.len() - 2], ps[ps.len() - 1]);
        let nb = numel(&ss[..ss.len() - 2]);
        let periods: Vec<usize> = match periods {
            Some(p) if p.len() != nb => return Err(Error::shape("interp_gather periods", &[nb], &[p.len()])),
            Some(p) => {
                if let Some(&bad) = p.iter().find(|&&v| v == 0 || v > t_len) {
                    return Err(Error::invalid("interp_gather", format!("period {bad} not in [1, {t_len}]")));
                }
                p.to_vec()
            }
            None => vec![t_len; nb],
        };
        let value = {
            let nodes = self.tape.nodes.borrow();
            let seq = nodes[self.id].value.data();
            let p = nodes[pos.id].value.data();
            let mut out = vec![T::zero(); nb * q * n * d];
            for b in 0..nb {
                let period = periods[b];
                for qi in 0..q {
                    for ni in 0..n {
                        let pv = p[(b * q + qi) * n + ni];
                        if !(pv >= T::zero() && pv < T::from_usize_lossy(period)) {
                            return Err(Error::OutOfRange {
                                op: "interp_gather",
                                value: pv.as_f64(),
                                period,
                            });
                        }
                        let f = pv.floor();
                        let w = pv - f;
                        let i0 = f.to_usize().expect("nonnegative");
                        let dst = &mut out[((b * q + qi) * n + ni) * d..][..d];
                        let r0 = &seq[(b * t_len + i0) * d..][..d];
                        if w == T::zero() {
                            dst.copy_from_slice(r0);
                        } else {
                            let i1 = (i0 + 1) % period;
                            let r1 = &seq[(b * t_len + i1) * d..][..d];
                            let w0 = T::one() - w;
                            for j in 0..d {
                                dst[j] = w0 * r0[j] + w * r1[j];
                            }
                        }
                    }
                }
            }
            let mut s = ps.clone();
            s.push(d);
            Tensor::new(s, out)?
        };
        let rg = self.requires_grad() || pos.requires_grad();
        Ok(self.tape.push(
            value,
            Op::InterpGather {
                seq: self.id,
                pos: pos.id,
                periods,
            },
            rg,
        ))
    }

    /// Sliding windows over the middle axis of `[B, L, C]` with zero
    /// padding: `[B, L_out, kernel * C]`, window-major then channel.
    pub fn unfold1d(&self, kernel: usize, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 3 || kernel == 0 || stride == 0 || s[1] + 2 * pad < kernel {
            return Err(Error::invalid("unfold1d", format!("shape {s:?}, kernel {kernel}, stride {stride}, pad {pad}")));
        }
        let (b, l, c) = (s[0], s[1], s[2]);
        let l_out = (l + 2 * pad - kernel) / stride + 1;
        let value = self.with_value(|t| {
            let x = t.data();
            let mut out = vec![T::zero(); b * l_out * kernel * c];
            for bi in 0..b {
                for o in 0..l_out {
                    for kk in 0..kernel {
                        let src = (o * stride + kk) as isize - pad as isize;
                        if src < 0 || src as usize >= l {
                            continue;
                        }
                        let from = (bi * l + src as usize) * c;
                        let to = ((bi * l_out + o) * kernel + kk) * c;
                        out[to..to + c].copy_from_slice(&x[from..from + c]);
                    }
                }
            }
            Tensor::new([b, l_out, kernel * c], out)
        })?;
        Ok(self.unary(
            Op::Unfold1d {
                x: self.id,
                kernel,
                stride,
                pad,
            },
            value,
        ))
    }

    /// Wraps values into `[0, period)`; `periods` holds one period per equal
    /// contiguous block of elements. The gradient passes through unchanged.
    pub fn wrap(&self, periods: &[usize]) -> Result<Var<'t, T>> {
        let len = self.with_value(|t| t.len());
        if periods.is_empty() || len % periods.len() != 0 || periods.contains(&0) {
            return Err(Error::invalid("wrap", format!("{} periods for {len} elements", periods.len())));
        }
        let block = len / periods.len();
        let value = self.with_value(|t| {
            let mut out = t.clone();
            for (chunk, &p) in out.data_mut().chunks_mut(block).zip(periods) {
                let pf = T::from_usize_lossy(p);
                for v in chunk {
                    let mut w = *v - pf * (*v / pf).floor();
                    if w >= pf || w < T::zero() {
                        w = T::zero();
                    }
                    *v = w;
                }
            }
            out
        });
        Ok(self.unary(Op::Wrap(self.id), value))
    }

    /// Clamps into `[lo, hi]`; zero gradient outside.
    pub fn clamp(&self, lo: T, hi: T) -> Var<'t, T> {
        let v = self.with_value(|t| t.map(|x| x.max(lo).min(hi)));
        self.unary(Op::Clamp { x: self.id, lo, hi }, v)
    }
}
