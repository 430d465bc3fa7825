use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    Element(Var, usize),
    Reshape(Var),
    Sum(Var),
    SumRows(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    WeightedSum(Var, Var),
    Softmax(Var),
    Inner(Var, Var),
    Conv1d { x: Var, w: Var, b: Var, left: usize },
    Dropout(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only computation tape. Node order is a valid topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one scalar with respect to every node that reaches it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

fn as_vector(op: &'static str, t: &Tensor) -> Result<usize> {
    match t.shape() {
        [n] => Ok(*n),
        s => Err(Error::shape(op, format!("expected a vector, got {s:?}"))),
    }
}

/// `a (n×m) · b (m×p)` on raw row-major buffers.
fn gemm(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let orow = &mut out[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in orow.iter_mut().zip(&b[k * p..(k + 1) * p]) {
                *o += aik * bkj;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Logical (n, m) view of a matmul operand; vectors become a row (left) or a column (right).
fn mm_dims(t: &Tensor, left: bool) -> Option<(usize, usize)> {
    match (t.shape(), left) {
        ([m], true) => Some((1, *m)),
        ([m], false) => Some((*m, 1)),
        ([r, c], _) => Some((*r, *c)),
        _ => None,
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_owned()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> Result<Var> {
        self.constant(Tensor::scalar(x))
    }

    /// Leaf holding the current value of a stored parameter; repeated calls reuse the node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Vector or matrix product. Vectors act as a row on the left and a column on the right.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (Some((n, m)), Some((m2, p))) = (mm_dims(ta, true), mm_dims(tb, false)) else {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        };
        if m != m2 || (ta.ndim() == 1 && tb.ndim() == 1) {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let data = gemm(ta.data(), tb.data(), n, m, p);
        let shape = match (ta.ndim(), tb.ndim()) {
            (1, _) => vec![p],
            (_, 1) => vec![n],
            _ => vec![n, p],
        };
        self.push("matmul", Tensor::new(shape, data)?, Op::MatMul(a, b))
    }

    /// Adds a bias vector to a vector or to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let p = as_vector("add_bias", tb)?;
        if tx.shape().last() != Some(&p) || tx.ndim() > 2 {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut out = tx.clone();
        for chunk in out.data_mut().chunks_mut(p) {
            for (o, bb) in chunk.iter_mut().zip(tb.data()) {
                *o += bb;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, b))
    }

    /// `x · W + b` for a vector or row-stacked matrix `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_op(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.push("square", out, Op::Square(a))
    }

    /// Joins vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            as_vector("concat", t)?;
            data.extend_from_slice(t.data());
        }
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        self.push("concat", Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("stack", "no inputs"));
        };
        let inner = self.value(first).shape().to_vec();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape() != inner.as_slice() {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", t.shape(), inner)));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        self.push("stack", Tensor::new(shape, data)?, Op::Stack(parts.to_vec()))
    }

    /// Gathers matrix rows; indices may repeat.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = as_matrix("select_rows", t)?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::shape("select_rows", format!("row {i} of {r}")));
            }
            data.extend_from_slice(t.row(i));
        }
        self.push("select_rows", Tensor::matrix(idx.len(), c, data)?, Op::SelectRows(a, idx.to_vec()))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let r = self.select_rows(a, &[i])?;
        let c = self.value(r).cols();
        self.reshape(r, vec![c])
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = as_matrix("slice_rows", t)?;
        if start > end || end > r {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {r} rows")));
        }
        let data = t.data()[start * c..end * c].to_vec();
        self.push("slice_rows", Tensor::matrix(end - start, c, data)?, Op::SliceRows(a, start))
    }

    /// Entry `i` of a vector as a scalar.
    pub fn element(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        let n = as_vector("element", t)?;
        if i >= n {
            return Err(Error::shape("element", format!("index {i} of {n}")));
        }
        let x = t.data()[i];
        self.push("element", Tensor::scalar(x), Op::Element(a, i))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::shape("reshape", format!("{:?} to {shape:?}", t.shape())));
        }
        let out = t.clone().reshaped(shape);
        self.push("reshape", out, Op::Reshape(a))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    fn reduce_rows(&self, name: &'static str, a: Var) -> Result<(usize, usize)> {
        let (r, c) = as_matrix(name, self.value(a))?;
        if r == 0 {
            return Err(Error::shape(name, "no rows"));
        }
        Ok((r, c))
    }

    /// Column-wise sum over the rows of a matrix.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = as_matrix("sum_rows", self.value(a))?;
        let t = self.value(a);
        let mut out = vec![0.0; c];
        for row in t.data().chunks(c.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push("sum_rows", Tensor::vector(out), Op::SumRows(a))
    }

    /// Column-wise mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.reduce_rows("mean_rows", a)?;
        let t = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push("mean_rows", Tensor::vector(out), Op::MeanRows(a))
    }

    /// Column-wise maximum over rows; ties resolve to the first row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.reduce_rows("max_rows", a)?;
        let t = self.value(a);
        let mut arg = vec![0usize; c];
        let mut out = t.row(0).to_vec();
        for i in 1..r {
            for (j, &x) in t.row(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    arg[j] = i;
                }
            }
        }
        self.push("max_rows", Tensor::vector(out), Op::MaxRows(a, arg))
    }

    /// `Σ_i w_i · rows_i` for weights `[n]` and rows `[n, p]`.
    pub fn weighted_sum(&mut self, w: Var, rows: Var) -> Result<Var> {
        let (tw, tr) = (self.value(w), self.value(rows));
        let n = as_vector("weighted_sum", tw)?;
        let (r, c) = as_matrix("weighted_sum", tr)?;
        if n != r {
            return Err(Error::shape("weighted_sum", format!("{n} weights for {r} rows")));
        }
        let mut out = vec![0.0; c];
        for (i, &wi) in tw.data().iter().enumerate() {
            for (o, x) in out.iter_mut().zip(tr.row(i)) {
                *o += wi * x;
            }
        }
        self.push("weighted_sum", Tensor::vector(out), Op::WeightedSum(w, rows))
    }

    /// Normalized exponentials of a score vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = as_vector("softmax", t)?;
        if n == 0 {
            return Err(Error::shape("softmax", "empty score set"));
        }
        let m = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.data().iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let out = Tensor::vector(e.into_iter().map(|x| x / z).collect());
        self.push("softmax", out, Op::Softmax(a))
    }

    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        as_vector("inner", ta)?;
        check_same("inner", ta, tb)?;
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push("inner", Tensor::scalar(s), Op::Inner(a, b))
    }

    /// Same-padded 1-D convolution over the rows of `x [L, d]`.
    ///
    /// `w` is `[channels, d, width]`, `b` is `[channels]`, the output `[L, channels]`.
    /// Padding puts `(width - 1) / 2` zero rows before and the rest after.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (len, d) = as_matrix("conv1d", tx)?;
        let [c, d2, k] = *tw.shape() else {
            return Err(Error::shape("conv1d", format!("kernel shape {:?}", tw.shape())));
        };
        if d != d2 || as_vector("conv1d", tb)? != c || k == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("input {:?}, kernel {:?}, bias {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let left = (k - 1) / 2;
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = vec![0.0; len * c];
        for t in 0..len {
            for o in 0..c {
                let mut s = tb.data()[o];
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(left).filter(|&s| s < len) else {
                        continue;
                    };
                    let xrow = &xd[src * d..(src + 1) * d];
                    let wrow = &wd[(o * d) * k..(o * d + d) * k];
                    for i in 0..d {
                        s += wrow[i * k + j] * xrow[i];
                    }
                }
                out[t * c + o] = s;
            }
        }
        self.push("conv1d", Tensor::matrix(len, c, out)?, Op::Conv1d { x, w, b, left })
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`; identity when not training.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("dropout", out, Op::Dropout(a, mask))
    }

    /// Reverse pass from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss of shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, m) = mm_dims(ta, true).expect("checked in forward");
                let (_, p) = mm_dims(tb, false).expect("checked in forward");
                let da = gemm(g.data(), &transpose(tb.data(), m, p), n, p, m);
                let db = gemm(&transpose(ta.data(), n, m), g.data(), m, n, p);
                add(grads, *a, Tensor::new(ta.shape().to_vec(), da).expect("same size"));
                add(grads, *b, Tensor::new(tb.shape().to_vec(), db).expect("same size"));
            }
            Op::AddBias(x, b) => {
                let p = val(*b).len();
                let mut db = vec![0.0; p];
                for chunk in g.data().chunks(p) {
                    for (o, x) in db.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
                add(grads, *x, g.clone());
                add(grads, *b, Tensor::vector(db));
            }
            Op::Add(a, b) => {
                add(grads, *a, g.clone());
                add(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add(grads, *a, g.clone());
                add(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let da = zip(g, val(*b), |x, y| x * y);
                let db = zip(g, val(*a), |x, y| x * y);
                add(grads, *a, da);
                add(grads, *b, db);
            }
            Op::Scale(a, c) => add(grads, *a, g.map(|x| x * c)),
            Op::Tanh(a) => add(grads, *a, zip(g, out, |gx, y| gx * (1.0 - y * y))),
            Op::Relu(a) => add(grads, *a, zip(g, val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::LeakyRelu(a, s) => add(grads, *a, zip(g, val(*a), |gx, x| if x > 0.0 { gx } else { s * gx })),
            Op::Square(a) => add(grads, *a, zip(g, val(*a), |gx, x| 2.0 * x * gx)),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    add(grads, *p, Tensor::vector(g.data()[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::Stack(parts) => {
                let n = val(parts[0]).len();
                for (j, p) in parts.iter().enumerate() {
                    let data = g.data()[j * n..(j + 1) * n].to_vec();
                    add(grads, *p, Tensor::new(val(*p).shape().to_vec(), data).expect("same size"));
                }
            }
            Op::SelectRows(a, idx) => {
                let ta = val(*a);
                let c = ta.cols();
                let mut d = Tensor::zeros(ta.shape());
                for (j, &r) in idx.iter().enumerate() {
                    for (o, x) in d.data_mut()[r * c..(r + 1) * c].iter_mut().zip(&g.data()[j * c..(j + 1) * c]) {
                        *o += x;
                    }
                }
                add(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let ta = val(*a);
                let c = ta.cols();
                let mut d = Tensor::zeros(ta.shape());
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                add(grads, *a, d);
            }
            Op::Element(a, j) => {
                let mut d = Tensor::zeros(val(*a).shape());
                d.data_mut()[*j] = g.item();
                add(grads, *a, d);
            }
            Op::Reshape(a) => add(grads, *a, g.clone().reshaped(val(*a).shape().to_vec())),
            Op::Sum(a) => add(grads, *a, Tensor::full(val(*a).shape(), g.item())),
            Op::SumRows(a) | Op::MeanRows(a) => {
                let ta = val(*a);
                let r = ta.rows();
                let scale = if matches!(self.nodes[i].op, Op::MeanRows(_)) { 1.0 / r as f64 } else { 1.0 };
                let row: Vec<f64> = g.data().iter().map(|x| x * scale).collect();
                let data = row.iter().cycle().take(ta.len()).copied().collect();
                add(grads, *a, Tensor::new(ta.shape().to_vec(), data).expect("same size"));
            }
            Op::MaxRows(a, arg) => {
                let ta = val(*a);
                let c = ta.cols();
                let mut d = Tensor::zeros(ta.shape());
                for (j, &r) in arg.iter().enumerate() {
                    d.data_mut()[r * c + j] += g.data()[j];
                }
                add(grads, *a, d);
            }
            Op::WeightedSum(w, rows) => {
                let (tw, tr) = (val(*w), val(*rows));
                let dw = (0..tw.len())
                    .map(|r| tr.row(r).iter().zip(g.data()).map(|(x, y)| x * y).sum())
                    .collect();
                let mut dr = Vec::with_capacity(tr.len());
                for &wi in tw.data() {
                    dr.extend(g.data().iter().map(|x| wi * x));
                }
                add(grads, *w, Tensor::vector(dw));
                add(grads, *rows, Tensor::new(tr.shape().to_vec(), dr).expect("same size"));
            }
            Op::Softmax(a) => {
                let dot: f64 = g.data().iter().zip(out.data()).map(|(x, y)| x * y).sum();
                add(grads, *a, zip(g, out, |gx, y| y * (gx - dot)));
            }
            Op::Inner(a, b) => {
                let s = g.item();
                add(grads, *a, val(*b).map(|x| x * s));
                add(grads, *b, val(*a).map(|x| x * s));
            }
            Op::Conv1d { x, w, b, left } => {
                let (tx, tw) = (val(*x), val(*w));
                let (len, d) = (tx.rows(), tx.cols());
                let (c, k) = (tw.shape()[0], tw.shape()[2]);
                let mut dx = vec![0.0; tx.len()];
                let mut dw = vec![0.0; tw.len()];
                let mut db = vec![0.0; c];
                let (xd, wd, gd) = (tx.data(), tw.data(), g.data());
                for t in 0..len {
                    for o in 0..c {
                        let go = gd[t * c + o];
                        db[o] += go;
                        if go == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            let Some(src) = (t + j).checked_sub(*left).filter(|&s| s < len) else {
                                continue;
                            };
                            for ii in 0..d {
                                let widx = (o * d + ii) * k + j;
                                dx[src * d + ii] += go * wd[widx];
                                dw[widx] += go * xd[src * d + ii];
                            }
                        }
                    }
                }
                add(grads, *x, Tensor::new(tx.shape().to_vec(), dx).expect("same size"));
                add(grads, *w, Tensor::new(tw.shape().to_vec(), dw).expect("same size"));
                add(grads, *b, Tensor::vector(db));
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                add(grads, *a, Tensor::new(g.shape().to_vec(), data).expect("same size"));
            }
        }
    }

    /// Adds parameter gradients into the store; fails on a non-finite gradient.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of `{}`", store.get(id).name)));
                }
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    /// Node of a parameter, if it was used in this graph.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same size")
}
