use super::ops::{axis_split, gelu_grad, inverse_axes, permute_data};
use super::{MatMulSpec, Node, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Acc<'a, T> {
    nodes: &'a [Node<T>],
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Acc<'_, T> {
    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn slot(&mut self, id: usize) -> &mut Vec<T> {
        let n = self.nodes[id].value.len();
        self.grads[id].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn add(&mut self, id: usize, g: &[T]) {
        if !self.wants(id) {
            return;
        }
        match &mut self.grads[id] {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    fn add_owned(&mut self, id: usize, g: Vec<T>) {
        if !self.wants(id) {
            return;
        }
        if self.grads[id].is_none() {
            self.grads[id] = Some(g);
        } else {
            self.add(id, &g);
        }
    }

    fn val(&self, id: usize) -> &[T] {
        self.nodes[id].value.data()
    }
}

pub(super) fn run<T: Scalar>(nodes: &[Node<T>], root: usize) -> Vec<Option<Tensor<T>>> {
    let mut acc = Acc {
        nodes,
        grads: vec![None; root + 1],
    };
    if nodes[root].requires_grad {
        acc.grads[root] = Some(vec![T::one()]);
    }
    for id in (0..=root).rev() {
        let Some(g) = acc.grads[id].take() else {
            continue;
        };
        let node = &nodes[id];
        if let Op::Leaf = node.op {
            acc.grads[id] = Some(g);
            continue;
        }
        step(&mut acc, node, &g);
    }
    acc.grads
        .into_iter()
        .enumerate()
        .map(|(id, g)| g.map(|g| Tensor::new(nodes[id].value.shape().to_vec(), g).expect("grad shape")))
        .collect()
}

fn step<T: Scalar>(acc: &mut Acc<'_, T>, node: &Node<T>, g: &[T]) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc.add(*a, g);
            acc.add(*b, g);
        }
        Op::Sub(a, b) => {
            acc.add(*a, g);
            if acc.wants(*b) {
                acc.add_owned(*b, g.iter().map(|&v| -v).collect());
            }
        }
        Op::Mul(a, b) => {
            if acc.wants(*a) {
                let gb: Vec<T> = g.iter().zip(acc.val(*b)).map(|(&u, &v)| u * v).collect();
                acc.add_owned(*a, gb);
            }
            if acc.wants(*b) {
                let ga: Vec<T> = g.iter().zip(acc.val(*a)).map(|(&u, &v)| u * v).collect();
                acc.add_owned(*b, ga);
            }
        }
        Op::AddBias(x, b) => {
            acc.add(*x, g);
            if acc.wants(*b) {
                let n = acc.val(*b).len();
                let mut gb = vec![T::zero(); n];
                for row in g.chunks(n) {
                    for (s, &v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc.add_owned(*b, gb);
            }
        }
        Op::Scale(x, c) => {
            if acc.wants(*x) {
                acc.add_owned(*x, g.iter().map(|&v| v * *c).collect());
            }
        }
        Op::AddScalar(x) | Op::Reshape(x) | Op::Wrap(x) => acc.add(*x, g),
        Op::MulScalarVar(x, s) => {
            let sv = acc.val(*s)[0];
            if acc.wants(*x) {
                acc.add_owned(*x, g.iter().map(|&v| v * sv).collect());
            }
            if acc.wants(*s) {
                let ds = g.iter().zip(acc.val(*x)).map(|(&u, &v)| u * v).sum::<T>();
                acc.add_owned(*s, vec![ds]);
            }
        }
        Op::MatMul(spec) => matmul_backward(acc, spec, g),
        Op::Permute(x, axes) => {
            if acc.wants(*x) {
                let inv = inverse_axes(axes);
                let (gx, _) = permute_data(g, node.value.shape(), &inv);
                acc.add_owned(*x, gx);
            }
        }
        Op::SumAxis(x, axis) => {
            if acc.wants(*x) {
                let shape = acc.nodes[*x].value.shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut gx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                acc.add_owned(*x, gx);
            }
        }
        Op::Softmax(x, axis) => {
            if acc.wants(*x) {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let dot = (0..len).map(|i| g[at(i)] * y[at(i)]).sum::<T>();
                        for i in 0..len {
                            gx[at(i)] = y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
                acc.add_owned(*x, gx);
            }
        }
        Op::LogSoftmax(x, axis) => {
            if acc.wants(*x) {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let gs = (0..len).map(|i| g[at(i)]).sum::<T>();
                        for i in 0..len {
                            gx[at(i)] = g[at(i)] - y[at(i)].exp() * gs;
                        }
                    }
                }
                acc.add_owned(*x, gx);
            }
        }
        Op::Exp(x) => {
            if acc.wants(*x) {
                acc.add_owned(*x, g.iter().zip(y).map(|(&u, &v)| u * v).collect());
            }
        }
        Op::Log(x) => {
            if acc.wants(*x) {
                let xv = acc.val(*x);
                acc.add_owned(*x, g.iter().zip(xv).map(|(&u, &v)| u / v).collect());
            }
        }
        Op::Relu(x) => {
            if acc.wants(*x) {
                let xv = acc.val(*x);
                acc.add_owned(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&u, &v)| if v > T::zero() { u } else { T::zero() })
                        .collect(),
                );
            }
        }
        Op::Gelu(x) => {
            if acc.wants(*x) {
                let xv = acc.val(*x);
                acc.add_owned(*x, g.iter().zip(xv).map(|(&u, &v)| u * gelu_grad(v)).collect());
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let n = acc.val(*gain).len();
            if acc.wants(*bias) {
                let mut gb = vec![T::zero(); n];
                for row in g.chunks(n) {
                    for (s, &v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc.add_owned(*bias, gb);
            }
            if acc.wants(*gain) {
                let mut gg = vec![T::zero(); n];
                for (row, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        gg[j] += row[j] * hrow[j];
                    }
                }
                acc.add_owned(*gain, gg);
            }
            if acc.wants(*x) {
                let gv = acc.val(*gain).to_vec();
                let nf = T::from_usize_lossy(n);
                let mut gx = vec![T::zero(); g.len()];
                for (r, (row, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..n {
                        let dh = row[j] * gv[j];
                        m1 += dh;
                        m2 += dh * hrow[j];
                    }
                    m1 /= nf;
                    m2 /= nf;
                    for j in 0..n {
                        let dh = row[j] * gv[j];
                        gx[r * n + j] = rstd[r] * (dh - m1 - hrow[j] * m2);
                    }
                }
                acc.add_owned(*x, gx);
            }
        }
        Op::L2Normalize { x, norms, eps } => {
            if acc.wants(*x) {
                let n = y.len() / norms.len();
                let mut gx = vec![T::zero(); y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &y[r * n..(r + 1) * n];
                    if norm > *eps {
                        let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                        for j in 0..n {
                            gx[r * n + j] = (gr[j] - yr[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..n {
                            gx[r * n + j] = gr[j] / *eps;
                        }
                    }
                }
                acc.add_owned(*x, gx);
            }
        }
        Op::Concat(xs, axis) => {
            let (outer, total, inner) = axis_split(node.value.shape(), *axis);
            let mut offset = 0;
            for &x in xs {
                let len = acc.nodes[x].value.shape()[*axis];
                if acc.wants(x) {
                    let mut gx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        gx.extend_from_slice(&g[from..from + len * inner]);
                    }
                    acc.add_owned(x, gx);
                }
                offset += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            if acc.wants(*x) {
                let (outer, full, inner) = axis_split(acc.nodes[*x].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                let slot = acc.slot(*x);
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    for (d, &v) in slot[to..to + len * inner].iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                        *d += v;
                    }
                }
            }
        }
        Op::IndexSelect { x, axis, index } => {
            if acc.wants(*x) {
                let (outer, full, inner) = axis_split(acc.nodes[*x].value.shape(), *axis);
                let slot = acc.slot(*x);
                for o in 0..outer {
                    for (k, &i) in index.iter().enumerate() {
                        let to = (o * full + i) * inner;
                        let from = (o * index.len() + k) * inner;
                        for (d, &v) in slot[to..to + inner].iter_mut().zip(&g[from..from + inner]) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Op::InterpGather { seq, pos, periods } => {
            let ss = acc.nodes[*seq].value.shape().to_vec();
            let ps = acc.nodes[*pos].value.shape().to_vec();
            let (t_len, d) = (ss[ss.len() - 2], ss[ss.len() - 1]);
            let (q, n) = (ps[ps.len() - 2], ps[ps.len() - 1]);
            let p = acc.val(*pos).to_vec();
            let want_seq = acc.wants(*seq);
            let want_pos = acc.wants(*pos);
            let mut gseq = if want_seq { vec![T::zero(); acc.val(*seq).len()] } else { Vec::new() };
            let mut gpos = if want_pos { vec![T::zero(); p.len()] } else { Vec::new() };
            let sv = acc.val(*seq);
            for (b, &period) in periods.iter().enumerate() {
                for qi in 0..q {
                    for ni in 0..n {
                        let k = (b * q + qi) * n + ni;
                        let f = p[k].floor();
                        let w = p[k] - f;
                        let i0 = f.to_usize().expect("nonnegative");
                        let i1 = (i0 + 1) % period;
                        let go = &g[k * d..(k + 1) * d];
                        if want_seq {
                            let w0 = T::one() - w;
                            for j in 0..d {
                                gseq[(b * t_len + i0) * d + j] += w0 * go[j];
                                gseq[(b * t_len + i1) * d + j] += w * go[j];
                            }
                        }
                        if want_pos {
                            let r0 = &sv[(b * t_len + i0) * d..][..d];
                            let r1 = &sv[(b * t_len + i1) * d..][..d];
                            gpos[k] = (0..d).map(|j| go[j] * (r1[j] - r0[j])).sum::<T>();
                        }
                    }
                }
            }
            if want_seq {
                acc.add_owned(*seq, gseq);
            }
            if want_pos {
                acc.add_owned(*pos, gpos);
            }
        }
        Op::Unfold1d { x, kernel, stride, pad } => {
            if acc.wants(*x) {
                let s = acc.nodes[*x].value.shape().to_vec();
                let (b, l, c) = (s[0], s[1], s[2]);
                let l_out = node.value.shape()[1];
                let slot = acc.slot(*x);
                for bi in 0..b {
                    for o in 0..l_out {
                        for kk in 0..*kernel {
                            let src = (o * stride + kk) as isize - *pad as isize;
                            if src < 0 || src as usize >= l {
                                continue;
                            }
                            let to = (bi * l + src as usize) * c;
                            let from = ((bi * l_out + o) * kernel + kk) * c;
                            for j in 0..c {
                                slot[to + j] += g[from + j];
                            }
                        }
                    }
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            if acc.wants(*x) {
                let xv = acc.val(*x);
                acc.add_owned(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&u, &v)| if v >= *lo && v <= *hi { u } else { T::zero() })
                        .collect(),
                );
            }
        }
    }
}

fn matmul_backward<T: Scalar>(acc: &mut Acc<'_, T>, s: &MatMulSpec, g: &[T]) {
    let (m, k, n) = (s.m, s.k, s.n);
    let (ki, ni) = (k as isize, n as isize);
    if acc.wants(s.a) {
        let a_len = acc.val(s.a).len();
        let mut ga = vec![T::zero(); a_len];
        {
            let b = acc.val(s.b);
            if !s.b_batched && s.a_batched {
                // [batch*m, n] x B^T
                T::gemm(s.batch * m, n, k, g, ni, 1, b, 1, ni, &mut ga);
            } else {
                for bi in 0..s.batch {
                    let b_off = if s.b_batched { bi * k * n } else { 0 };
                    let a_off = if s.a_batched { bi * m * k } else { 0 };
                    T::gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..(bi + 1) * m * n],
                        ni,
                        1,
                        &b[b_off..b_off + k * n],
                        1,
                        ni,
                        &mut ga[a_off..a_off + m * k],
                    );
                }
            }
        }
        acc.add_owned(s.a, ga);
    }
    if acc.wants(s.b) {
        let b_len = acc.val(s.b).len();
        let mut gb = vec![T::zero(); b_len];
        {
            let a = acc.val(s.a);
            if !s.b_batched && s.a_batched {
                // A_flat^T [k, batch*m] x g [batch*m, n]
                T::gemm(k, s.batch * m, n, a, 1, ki, g, ni, 1, &mut gb);
            } else {
                for bi in 0..s.batch {
                    let a_off = if s.a_batched { bi * m * k } else { 0 };
                    let b_off = if s.b_batched { bi * k * n } else { 0 };
                    T::gemm(
                        k,
                        m,
                        n,
                        &a[a_off..a_off + m * k],
                        1,
                        ki,
                        &g[bi * m * n..(bi + 1) * m * n],
                        ni,
                        1,
                        &mut gb[b_off..b_off + k * n],
                    );
                }
            }
        }
        acc.add_owned(s.b, gb);
    }
}
