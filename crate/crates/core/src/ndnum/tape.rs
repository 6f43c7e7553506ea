//! Reverse-mode differentiation over [`Array`] values.
//!
//! A [`Tape`] records each kernel applied during the forward pass together
//! with its output. [`Tape::backward`] walks the record in reverse and
//! applies the analytic adjoint of every op. Every op output is checked for
//! non-finite values as it is produced.

use crate::error::{Error, Result};

use super::array::{Array, Scalar};
use super::rng::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Relu(NodeId),
    Dropout(NodeId, Vec<T>),
    SoftmaxMasked(NodeId),
    LogSoftmax(NodeId),
    Scale(NodeId, T),
    Concat(Vec<NodeId>),
    Mean(NodeId),
    Sum(NodeId),
    Square(NodeId),
    Log(NodeId),
    Gather(NodeId, Vec<usize>),
    HeadScores {
        q: NodeId,
        k: NodeId,
        heads: usize,
        t: usize,
    },
    HeadMix {
        w: NodeId,
        v: NodeId,
        heads: usize,
        t: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Array<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the loss does not depend on `id`.
    pub fn get(&self, id: NodeId) -> Option<&Array<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, name: &'static str) -> Result<NodeId> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Array<T>) -> Result<NodeId> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Elementwise sum. `b` may also be a 1-D row of length `cols(a)`, which
    /// is then added to every row of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let out = va.zip_map(vb, "add", |x, y| x + y)?;
            return self.push(out, Op::Add(a, b), "add");
        }
        if vb.shape().len() == 1 && vb.len() == va.cols() {
            let c = va.cols();
            let data = va
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + vb.data()[i % c])
                .collect();
            let out = Array::new(va.shape().to_vec(), data)?;
            return self.push(out, Op::AddRow(a, b), "add");
        }
        Err(Error::dim("add", format!("{:?} + {:?}", va.shape(), vb.shape())))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Inverted dropout. Outside training, or with `rate == 0`, returns `a`
    /// unchanged.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut Rng, train: bool) -> Result<NodeId> {
        if !train || rate == 0.0 {
            return Ok(a);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64_lossy(1.0 / keep);
        let va = self.value(a);
        let mult: Vec<T> = (0..va.len())
            .map(|_| if rng.bernoulli(keep) { scale } else { T::zero() })
            .collect();
        let data = va.data().iter().zip(&mult).map(|(&x, &m)| x * m).collect();
        let out = Array::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Dropout(a, mult), "dropout")
    }

    /// Row-wise softmax over the trailing axis with masked entries pinned
    /// to zero.
    pub fn softmax_masked(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        let out = self.value(a).softmax_masked(mask)?;
        self.push(out, Op::SoftmaxMasked(a), "softmax_masked")
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let c = va.cols();
        let mut data = Vec::with_capacity(va.len());
        for row in va.data().chunks(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Array::new(va.shape().to_vec(), data)?;
        self.push(out, Op::LogSoftmax(a), "log_softmax")
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    /// Concatenates 2-D arrays with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero arrays".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.shape().len() != 2 {
                return Err(Error::dim("concat", format!("part shape {:?}", v.shape())));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Array::matrix(rows, total, data)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::Degenerate("mean of empty array".into()));
        }
        let out = Array::scalar(va.sum() / T::from_f64_lossy(va.len() as f64));
        self.push(out, Op::Mean(a), "mean")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let out = Array::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), "square")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(T::ln);
        self.push(out, Op::Log(a), "log")
    }

    /// Picks `a[i, idx[i]]` for every row `i`.
    pub fn gather(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        if idx.len() != va.rows() {
            return Err(Error::dim(
                "gather",
                format!("{} indices for {} rows", idx.len(), va.rows()),
            ));
        }
        let c = va.cols();
        if let Some(bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::dim("gather", format!("index {bad} >= {c}")));
        }
        let data = idx.iter().enumerate().map(|(r, &i)| va.at(r, i)).collect();
        let out = Array::vector(data);
        self.push(out, Op::Gather(a, idx.to_vec()), "gather")
    }

    /// Per-head dot products between one query row per item and that item's
    /// `t` key rows.
    ///
    /// `q` is `B x E`, `k` is `(B*t) x E`; the result is `(B*heads) x t`
    /// with row `b*heads + h` holding head `h` of item `b`.
    pub fn head_scores(&mut self, q: NodeId, k: NodeId, heads: usize, t: usize) -> Result<NodeId> {
        let (vq, vk) = (self.value(q), self.value(k));
        let (b, e) = (vq.rows(), vq.cols());
        check_heads("head_scores", e, heads)?;
        if vk.rows() != b * t || vk.cols() != e {
            return Err(Error::dim(
                "head_scores",
                format!("q {:?} with k {:?}, t={t}", vq.shape(), vk.shape()),
            ));
        }
        let dh = e / heads;
        let mut data = vec![T::zero(); b * heads * t];
        for bi in 0..b {
            let qrow = vq.row(bi);
            for h in 0..heads {
                let qh = &qrow[h * dh..(h + 1) * dh];
                for ti in 0..t {
                    let kh = &vk.row(bi * t + ti)[h * dh..(h + 1) * dh];
                    data[(bi * heads + h) * t + ti] = qh.iter().zip(kh).map(|(&x, &y)| x * y).sum();
                }
            }
        }
        let out = Array::matrix(b * heads, t, data)?;
        self.push(out, Op::HeadScores { q, k, heads, t }, "head_scores")
    }

    /// Attention-weighted sums of value rows, heads laid side by side.
    ///
    /// `w` is `(B*heads) x t`, `v` is `(B*t) x E`; the result is `B x E`.
    pub fn head_mix(&mut self, w: NodeId, v: NodeId, heads: usize, t: usize) -> Result<NodeId> {
        let (vw, vv) = (self.value(w), self.value(v));
        let e = vv.cols();
        check_heads("head_mix", e, heads)?;
        if vw.cols() != t || vw.rows() % heads != 0 || vv.rows() != (vw.rows() / heads) * t {
            return Err(Error::dim(
                "head_mix",
                format!("w {:?} with v {:?}, t={t}", vw.shape(), vv.shape()),
            ));
        }
        let b = vw.rows() / heads;
        let dh = e / heads;
        let mut data = vec![T::zero(); b * e];
        for bi in 0..b {
            for h in 0..heads {
                let wrow = vw.row(bi * heads + h);
                let out = &mut data[bi * e + h * dh..bi * e + (h + 1) * dh];
                for (ti, &wt) in wrow.iter().enumerate() {
                    let vh = &vv.row(bi * t + ti)[h * dh..(h + 1) * dh];
                    for (o, &x) in out.iter_mut().zip(vh) {
                        *o = *o + wt * x;
                    }
                }
            }
        }
        let out = Array::matrix(b, e, data)?;
        self.push(out, Op::HeadMix { w, v, heads, t }, "head_mix")
    }

    /// Gradients of the scalar at `loss` with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::new(lv.shape().to_vec(), vec![T::one()])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<T>, g: &Array<T>, grads: &mut [Option<Array<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul(&vb.transpose())?)?;
                accumulate(grads, *b, va.transpose().matmul(g)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::AddRow(a, b) => {
                let c = g.cols();
                let mut gb = vec![T::zero(); c];
                for row in g.data().chunks(c) {
                    for (acc, &x) in gb.iter_mut().zip(row) {
                        *acc = *acc + x;
                    }
                }
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, Array::new(self.value(*b).shape().to_vec(), gb)?)?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.map(|x| -x))?;
            }
            Op::Relu(a) => {
                let gx = g.zip_map(
                    self.value(*a),
                    "relu",
                    |gi, x| {
                        if x > T::zero() {
                            gi
                        } else {
                            T::zero()
                        }
                    },
                )?;
                accumulate(grads, *a, gx)?;
            }
            Op::Dropout(a, mult) => {
                let data = g.data().iter().zip(mult).map(|(&gi, &m)| gi * m).collect();
                accumulate(grads, *a, Array::new(g.shape().to_vec(), data)?)?;
            }
            Op::SoftmaxMasked(a) => {
                let c = y.cols();
                let mut data = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    data.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                accumulate(grads, *a, Array::new(y.shape().to_vec(), data)?)?;
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut data = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                    let total: T = gr.iter().copied().sum();
                    data.extend(yr.iter().zip(gr).map(|(&ly, &q)| q - ly.exp() * total));
                }
                accumulate(grads, *a, Array::new(y.shape().to_vec(), data)?)?;
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(grads, *a, g.map(|x| x * c))?;
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    accumulate(grads, p, Array::matrix(rows, w, data)?)?;
                    offset += w;
                }
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let gi = g.data()[0] / T::from_f64_lossy(va.len() as f64);
                accumulate(grads, *a, Array::filled(va.shape().to_vec(), gi))?;
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, Array::filled(va.shape().to_vec(), g.data()[0]))?;
            }
            Op::Square(a) => {
                let two = T::from_f64_lossy(2.0);
                let gx = g.zip_map(self.value(*a), "square", |gi, x| two * x * gi)?;
                accumulate(grads, *a, gx)?;
            }
            Op::Log(a) => {
                let gx = g.zip_map(self.value(*a), "log", |gi, x| gi / x)?;
                accumulate(grads, *a, gx)?;
            }
            Op::Gather(a, idx) => {
                let va = self.value(*a);
                let c = va.cols();
                let mut data = vec![T::zero(); va.len()];
                for (r, &i) in idx.iter().enumerate() {
                    data[r * c + i] = g.data()[r];
                }
                accumulate(grads, *a, Array::new(va.shape().to_vec(), data)?)?;
            }
            Op::HeadScores { q, k, heads, t } => {
                let (vq, vk) = (self.value(*q), self.value(*k));
                let (b, e) = (vq.rows(), vq.cols());
                let dh = e / heads;
                let mut gq = vec![T::zero(); vq.len()];
                let mut gk = vec![T::zero(); vk.len()];
                for bi in 0..b {
                    for h in 0..*heads {
                        let grow = g.row(bi * heads + h);
                        for (ti, &gs) in grow.iter().enumerate() {
                            let kr = (bi * t + ti) * e + h * dh;
                            let qr = bi * e + h * dh;
                            for j in 0..dh {
                                gq[qr + j] = gq[qr + j] + gs * vk.data()[kr + j];
                                gk[kr + j] = gk[kr + j] + gs * vq.data()[qr + j];
                            }
                        }
                    }
                }
                accumulate(grads, *q, Array::new(vq.shape().to_vec(), gq)?)?;
                accumulate(grads, *k, Array::new(vk.shape().to_vec(), gk)?)?;
            }
            Op::HeadMix { w, v, heads, t } => {
                let (vw, vv) = (self.value(*w), self.value(*v));
                let e = vv.cols();
                let b = vw.rows() / heads;
                let dh = e / heads;
                let mut gw = vec![T::zero(); vw.len()];
                let mut gv = vec![T::zero(); vv.len()];
                for bi in 0..b {
                    for h in 0..*heads {
                        let go = &g.row(bi)[h * dh..(h + 1) * dh];
                        let wrow = bi * heads + h;
                        for ti in 0..*t {
                            let vr = (bi * t + ti) * e + h * dh;
                            let wt = vw.at(wrow, ti);
                            let mut acc = T::zero();
                            for j in 0..dh {
                                acc = acc + go[j] * vv.data()[vr + j];
                                gv[vr + j] = gv[vr + j] + wt * go[j];
                            }
                            gw[wrow * t + ti] = acc;
                        }
                    }
                }
                accumulate(grads, *w, Array::new(vw.shape().to_vec(), gw)?)?;
                accumulate(grads, *v, Array::new(vv.shape().to_vec(), gv)?)?;
            }
        }
        Ok(())
    }
}

fn check_heads(op: &'static str, e: usize, heads: usize) -> Result<()> {
    if heads == 0 || !e.is_multiple_of(heads) {
        return Err(Error::dim(op, format!("width {e} not divisible by {heads} heads")));
    }
    Ok(())
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array<T>>], id: NodeId, g: Array<T>) -> Result<()> {
    match &mut grads[id.0] {
        Some(acc) => *acc = acc.zip_map(&g, "accumulate", |x, y| x + y)?,
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::rng::Stream;

    fn fd_check(build: impl Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>, x: Array<f64>) {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone()).unwrap();
        let loss = build(&mut tape, leaf).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(leaf).unwrap().clone();

        let eval = |v: Array<f64>| {
            let mut t = Tape::new();
            let l = t.leaf(v).unwrap();
            let out = build(&mut t, l).unwrap();
            t.value(out).data()[0]
        };
        let h = 1e-5;
        for i in 0..x.len() {
            let mut plus = x.clone().into_data();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (eval(Array::new(x.shape().to_vec(), plus).unwrap())
                - eval(Array::new(x.shape().to_vec(), minus).unwrap()))
                / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - fd).abs() / fd.abs().max(1.0) < 1e-6,
                "entry {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(Array::vector(vec![0.3, -1.0, 4.0])).unwrap();
        let s = tape.sum(w).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(Array::vector(vec![1.0, -2.0])).unwrap();
        let sq = tape.square(w).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(Array::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_leaf_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let err = tape.leaf(Array::vector(vec![f32::NAN])).unwrap_err();
        assert!(matches!(err, Error::NonFinite("leaf")));
    }

    #[test]
    fn fd_matmul_and_bias() {
        let x = Array::new(vec![2, 3], vec![0.1, -0.4, 0.7, 1.2, 0.3, -0.9]).unwrap();
        fd_check(
            |t, l| {
                let w = t.leaf(Array::new(vec![3, 2], vec![0.5, -0.2, 0.1, 0.9, -0.3, 0.4])?)?;
                let b = t.leaf(Array::vector(vec![0.05, -0.1]))?;
                let y = t.matmul(l, w)?;
                let y = t.add(y, b)?;
                let y = t.relu(y)?;
                let y = t.square(y)?;
                t.mean(y)
            },
            x,
        );
    }

    #[test]
    fn fd_softmax_and_log_softmax() {
        let x = Array::new(vec![2, 3], vec![0.1, -0.4, 0.7, 1.2, 0.3, -0.9]).unwrap();
        fd_check(
            |t, l| {
                let s = t.softmax_masked(l, &[true, false, true, true, true, true])?;
                let ls = t.log_softmax(l)?;
                let p = t.gather(ls, &[2, 0])?;
                let w = t.leaf(Array::new(vec![2, 3], vec![1.0, 2.0, -3.0, 0.5, 0.25, 4.0])?)?;
                let sw = t.add(s, w)?;
                let sq = t.square(sw)?;
                let a = t.sum(sq)?;
                let b = t.sum(p)?;
                let c = t.scale(b, -0.7)?;
                let total = t.add(a, c)?;
                let lg = t.log(total)?;
                t.sum(lg)
            },
            x,
        );
    }

    #[test]
    fn fd_head_ops() {
        // B=2, t=3, E=4, heads=2; differentiate w.r.t. the keys.
        let k: Vec<f64> = (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
        fd_check(
            |t, l| {
                let q = t.leaf(Array::new(vec![2, 4], vec![0.3, -0.2, 0.5, 0.1, -0.6, 0.4, 0.2, 0.8])?)?;
                let s = t.head_scores(q, l, 2, 3)?;
                let w = t.softmax_masked(
                    s,
                    &[true, true, false, true, true, false, true, true, true, true, true, true],
                )?;
                let m = t.head_mix(w, l, 2, 3)?;
                let c = t.concat(&[m, q])?;
                let sq = t.square(c)?;
                t.sum(sq)
            },
            Array::new(vec![6, 4], k).unwrap(),
        );
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::<f32>::new();
        let mut rng = Rng::new(0, Stream::Dropout);
        let x = tape.leaf(Array::vector(vec![1.0, 2.0])).unwrap();
        let y = tape.dropout(x, 0.5, &mut rng, false).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_keep_fraction_within_three_sigma() {
        let n = 100_000;
        let p = 0.1;
        let mut tape = Tape::<f32>::new();
        let mut rng = Rng::new(11, Stream::Dropout);
        let x = tape.leaf(Array::ones(vec![n])).unwrap();
        let y = tape.dropout(x, p, &mut rng, true).unwrap();
        let kept = tape.value(y).data().iter().filter(|&&v| v != 0.0).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((kept - n as f64 * (1.0 - p)).abs() < 3.0 * sigma);
        let scaled = tape.value(y).data().iter().find(|&&v| v != 0.0).unwrap();
        assert!((scaled - 1.0 / 0.9).abs() < 1e-6);
    }
}
