use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Gradients, ParamId, Params, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
    MaxPool(Vec<Var>, Vec<usize>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        gold: Vec<usize>,
        probs: Vec<f64>,
    },
    FeatureBias(Var, Vec<Vec<usize>>),
    Bilinear(Var, Var, Var),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation over borrowed parameters and replays it
/// backwards.
pub struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl<'p> Tape<'p> {
    /// Evaluation-mode tape; dropout is the identity.
    pub fn new(params: &'p Params) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode tape whose dropout masks are drawn from `seed`.
    pub fn training(params: &'p Params, seed: u64) -> Self {
        Tape {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Tape::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::Numeric { op });
        }
        let needs_grad = match &kind {
            Op::Constant => false,
            Op::Param(_) => true,
            other => inputs(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push("matmul", Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    /// `[m,k] x [n,k]^T -> [m,n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(shape_err(
                "matmul_nt",
                format!("{:?} x {:?}^T", ta.shape(), tb.shape()),
            ));
        }
        let (m, n) = (ta.rows(), tb.rows());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let r = ta.row(i);
            for j in 0..n {
                out.push(dot(r, tb.row(j)));
            }
        }
        self.push("matmul_nt", Tensor::matrix(m, n, out), Op::MatMulNt(a, b))
    }

    /// `[m,k] x [k] -> [m]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var, AutodiffError> {
        let (ta, tx) = (self.value(a), self.value(x));
        if ta.shape().len() != 2 || tx.shape().len() != 1 || ta.cols() != tx.len() {
            return Err(shape_err("matvec", format!("{:?} x {:?}", ta.shape(), tx.shape())));
        }
        let out = (0..ta.rows()).map(|i| dot(ta.row(i), tx.data())).collect();
        self.push("matvec", Tensor::vector(out), Op::MatVec(a, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect(),
        );
        self.push("add", out, Op::Add(a, b))
    }

    /// Adds vector `b` to every row of matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape() != [ta.cols()] {
            return Err(shape_err("add_row", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let c = ta.cols();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % c])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), out);
        self.push("add_row", out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
        );
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x * factor);
        self.push("scale", out, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(shape_err("concat", format!("non-vector input {:?}", t.shape())));
            }
            out.extend_from_slice(t.data());
        }
        if out.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        self.push("concat", Tensor::vector(out), Op::Concat(parts.to_vec()))
    }

    /// `a[start..start+len]` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.shape().len() != 1 || len == 0 || start + len > t.len() {
            return Err(shape_err(
                "slice",
                format!("[{start}..{}] of {:?}", start + len, t.shape()),
            ));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        self.push("slice", out, Op::Slice(a, start))
    }

    /// Stacks equally sized vectors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = rows.first() else {
            return Err(shape_err("stack_rows", "no inputs".into()));
        };
        let c = self.value(first).len();
        let mut out = Vec::with_capacity(c * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.shape() != [c] {
                return Err(shape_err("stack_rows", format!("row {:?} vs [{c}]", t.shape())));
            }
            out.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows.len(), c, out);
        self.push("stack_rows", out, Op::StackRows(rows.to_vec()))
    }

    /// Selects rows (with repetition) of a matrix.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.shape().len() != 2 || index.is_empty() || index.iter().any(|&i| i >= t.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("rows {index:?} of {:?}", t.shape()),
            ));
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(c * index.len());
        for &i in index {
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(index.len(), c, out);
        self.push("gather_rows", out, Op::GatherRows(a, index.to_vec()))
    }

    /// Row `index` of an embedding table, as a vector.
    pub fn embedding_lookup(&mut self, table: Var, index: usize) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        if t.shape().len() != 2 || index >= t.rows() {
            return Err(shape_err(
                "embedding_lookup",
                format!("row {index} of {:?}", t.shape()),
            ));
        }
        let out = Tensor::vector(t.row(index).to_vec());
        self.push("embedding_lookup", out, Op::GatherRows(table, vec![index]))
    }

    /// Inverted dropout. Identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(shape_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(a);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        self.push("dropout", out, Op::Dropout(a, mask))
    }

    /// Elementwise maximum over a sequence of equally sized vectors.
    pub fn max_pool(&mut self, items: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = items.first() else {
            return Err(shape_err("max_pool", "empty sequence".into()));
        };
        let d = self.value(first).len();
        let mut out = self.value(first).data().to_vec();
        let mut arg = vec![0usize; d];
        for (k, &v) in items.iter().enumerate().skip(1) {
            let t = self.value(v);
            if t.len() != d {
                return Err(shape_err("max_pool", format!("{:?} vs [{d}]", t.shape())));
            }
            for (i, &x) in t.data().iter().enumerate() {
                if x > out[i] {
                    out[i] = x;
                    arg[i] = k;
                }
            }
        }
        self.push("max_pool", Tensor::vector(out), Op::MaxPool(items.to_vec(), arg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// `-log softmax(logits)[gold]` for a single logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var, AutodiffError> {
        self.cross_entropy_rows(logits, &[gold], &[None])
    }

    /// Summed cross entropy over the rows of a `[m,k]` logit matrix (a
    /// vector counts as one row). `exclude[r]` removes one column of row
    /// `r` from its softmax.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        gold: &[usize],
        exclude: &[Option<usize>],
    ) -> Result<Var, AutodiffError> {
        let t = self.value(logits);
        let (m, k) = match t.shape() {
            [k] => (1, *k),
            [m, k] => (*m, *k),
            s => return Err(shape_err("cross_entropy", format!("logits {s:?}"))),
        };
        if gold.len() != m || exclude.len() != m {
            return Err(shape_err(
                "cross_entropy",
                format!("{} gold labels for {m} rows", gold.len()),
            ));
        }
        let mut probs = vec![0.0; m * k];
        let mut loss = 0.0;
        for r in 0..m {
            let row = &t.data()[r * k..(r + 1) * k];
            if gold[r] >= k || exclude[r] == Some(gold[r]) {
                return Err(shape_err(
                    "cross_entropy",
                    format!("gold {} invalid for row {r} of width {k}", gold[r]),
                ));
            }
            let max = row
                .iter()
                .enumerate()
                .filter(|(c, _)| exclude[r] != Some(*c))
                .map(|(_, x)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                if exclude[r] != Some(c) {
                    let e = (row[c] - max).exp();
                    probs[r * k + c] = e;
                    z += e;
                }
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p /= z;
            }
            loss += z.ln() - (row[gold[r]] - max);
        }
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                gold: gold.to_vec(),
                probs,
            },
        )
    }

    /// `out[r][c] = sum(v[f] for f in active[r * cols + c])`: a sparse
    /// binary feature vector per cell dotted with weights `v`.
    pub fn feature_bias(
        &mut self,
        v: Var,
        rows: usize,
        cols: usize,
        active: Vec<Vec<usize>>,
    ) -> Result<Var, AutodiffError> {
        let tv = self.value(v);
        if tv.shape().len() != 1
            || active.len() != rows * cols
            || active.iter().flatten().any(|&f| f >= tv.len())
        {
            return Err(shape_err(
                "feature_bias",
                format!("{rows}x{cols} cells over weights {:?}", tv.shape()),
            ));
        }
        let out: Vec<f64> = active
            .iter()
            .map(|fs| fs.iter().map(|&f| tv.data()[f]).sum())
            .collect();
        self.push(
            "feature_bias",
            Tensor::matrix(rows, cols, out),
            Op::FeatureBias(v, active),
        )
    }

    /// Per-row bilinear forms: `out[j][r] = a_j^T U_r b_j` with
    /// `a, b: [n,d]` and `u: [R*d, d]` holding the stacked `U_r`.
    pub fn bilinear(&mut self, a: Var, b: Var, u: Var) -> Result<Var, AutodiffError> {
        let (ta, tb, tu) = (self.value(a), self.value(b), self.value(u));
        let d = ta.cols();
        if ta.shape().len() != 2
            || ta.shape() != tb.shape()
            || tu.shape().len() != 2
            || tu.cols() != d
            || tu.rows() % d != 0
        {
            return Err(shape_err(
                "bilinear",
                format!("{:?}, {:?}, {:?}", ta.shape(), tb.shape(), tu.shape()),
            ));
        }
        let n = ta.rows();
        let r_count = tu.rows() / d;
        let mut out = vec![0.0; n * r_count];
        for j in 0..n {
            let (aj, bj) = (ta.row(j), tb.row(j));
            for r in 0..r_count {
                let mut s = 0.0;
                for (p, &x) in aj.iter().enumerate() {
                    if x != 0.0 {
                        s += x * dot(tu.row(r * d + p), bj);
                    }
                }
                out[j * r_count + r] = s;
            }
        }
        self.push(
            "bilinear",
            Tensor::matrix(n, r_count, out),
            Op::Bilinear(a, b, u),
        )
    }

    /// Reverse pass from a scalar `loss`; returns one gradient per
    /// parameter of the borrowed store.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(AutodiffError::State(
                "backward called before any forward computation".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::State(format!(
                "loss must be a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop(&node.op, idx, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop(
        &self,
        op: &Op,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) {
        let gd = g.data();
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match op {
            Op::Constant => {}
            Op::Param(id) => out.get_mut(*id).add_assign(g),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G B^T, dB = A^T G
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        da[i * k + p] = dot(&gd[i * n..(i + 1) * n], tb.row(p));
                    }
                }
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = ta.data()[i * k + p];
                        for c in 0..n {
                            db[p * n + c] += x * gd[i * n + c];
                        }
                    }
                }
                acc(*a, Tensor::matrix(m, k, da));
                acc(*b, Tensor::matrix(k, n, db));
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                // out = A B^T; dA = G B, dB = G^T A
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += gij * tb.data()[j * k + p];
                            db[j * k + p] += gij * ta.data()[i * k + p];
                        }
                    }
                }
                acc(*a, Tensor::matrix(m, k, da));
                acc(*b, Tensor::matrix(n, k, db));
            }
            Op::MatVec(a, x) => {
                let (ta, tx) = (self.value(*a), self.value(*x));
                let (m, k) = (ta.rows(), ta.cols());
                let mut da = vec![0.0; m * k];
                let mut dx = vec![0.0; k];
                for i in 0..m {
                    let gi = gd[i];
                    let row = ta.row(i);
                    for p in 0..k {
                        da[i * k + p] = gi * tx.data()[p];
                        dx[p] += gi * row[p];
                    }
                }
                acc(*a, Tensor::matrix(m, k, da));
                acc(*x, Tensor::vector(dx));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                let c = self.value(*a).cols();
                let mut db = vec![0.0; c];
                for (i, x) in gd.iter().enumerate() {
                    db[i % c] += x;
                }
                acc(*a, g.clone());
                acc(*b, Tensor::vector(db));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let shape = ta.shape().to_vec();
                let da = gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let db = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                acc(*a, Tensor::new(shape.clone(), da));
                acc(*b, Tensor::new(shape, db));
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::Tanh(a) => {
                let y = self.value(Var(idx));
                let d = gd
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                acc(*a, Tensor::new(y.shape().to_vec(), d));
            }
            Op::Sigmoid(a) => {
                let y = self.value(Var(idx));
                let d = gd
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                acc(*a, Tensor::new(y.shape().to_vec(), d));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, Tensor::vector(gd[offset..offset + len].to_vec()));
                    offset += len;
                }
            }
            Op::Slice(a, start) => {
                let mut d = vec![0.0; self.value(*a).len()];
                d[*start..*start + gd.len()].copy_from_slice(gd);
                acc(*a, Tensor::vector(d));
            }
            Op::StackRows(rows) => {
                let c = g.cols();
                for (i, &r) in rows.iter().enumerate() {
                    acc(r, Tensor::vector(gd[i * c..(i + 1) * c].to_vec()));
                }
            }
            Op::GatherRows(a, index) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut d = Tensor::zeros(ta.shape());
                for (k, &i) in index.iter().enumerate() {
                    for (x, y) in d.data_mut()[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&gd[k * c..(k + 1) * c])
                    {
                        *x += y;
                    }
                }
                acc(*a, d);
            }
            Op::Dropout(a, mask) => {
                let d = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d));
            }
            Op::MaxPool(items, arg) => {
                let mut per: Vec<Vec<f64>> = items.iter().map(|_| vec![0.0; gd.len()]).collect();
                for (i, &k) in arg.iter().enumerate() {
                    per[k][i] += gd[i];
                }
                for (&v, d) in items.iter().zip(per) {
                    acc(v, Tensor::vector(d));
                }
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                acc(*a, Tensor::new(t.shape().to_vec(), vec![gd[0]; t.len()]));
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            } => {
                let t = self.value(*logits);
                let k = probs.len() / gold.len();
                let mut d: Vec<f64> = probs.iter().map(|p| p * gd[0]).collect();
                for (r, &y) in gold.iter().enumerate() {
                    d[r * k + y] -= gd[0];
                }
                acc(*logits, Tensor::new(t.shape().to_vec(), d));
            }
            Op::FeatureBias(v, active) => {
                let mut d = vec![0.0; self.value(*v).len()];
                for (cell, fs) in active.iter().enumerate() {
                    for &f in fs {
                        d[f] += gd[cell];
                    }
                }
                acc(*v, Tensor::vector(d));
            }
            Op::Bilinear(a, b, u) => {
                let (ta, tb, tu) = (self.value(*a), self.value(*b), self.value(*u));
                let (n, dim) = (ta.rows(), ta.cols());
                let r_count = tu.rows() / dim;
                let mut da = vec![0.0; n * dim];
                let mut db = vec![0.0; n * dim];
                let mut du = vec![0.0; tu.len()];
                for j in 0..n {
                    let (aj, bj) = (ta.row(j), tb.row(j));
                    for r in 0..r_count {
                        let gjr = gd[j * r_count + r];
                        if gjr == 0.0 {
                            continue;
                        }
                        for p in 0..dim {
                            let urow = tu.row(r * dim + p);
                            da[j * dim + p] += gjr * dot(urow, bj);
                            let ap = gjr * aj[p];
                            for q in 0..dim {
                                db[j * dim + q] += ap * urow[q];
                                du[(r * dim + p) * dim + q] += ap * bj[q];
                            }
                        }
                    }
                }
                acc(*a, Tensor::matrix(n, dim, da));
                acc(*b, Tensor::matrix(n, dim, db));
                acc(*u, Tensor::new(tu.shape().to_vec(), du));
            }
        }
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Constant | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::MatVec(a, b) => vec![*a, *b],
        Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Scale(a, _) | Op::Tanh(a) | Op::Sigmoid(a) | Op::Slice(a, _) => vec![*a],
        Op::GatherRows(a, _) | Op::Dropout(a, _) | Op::Sum(a) => vec![*a],
        Op::Concat(vs) | Op::StackRows(vs) | Op::MaxPool(vs, _) => vs.clone(),
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::FeatureBias(v, _) => vec![*v],
        Op::Bilinear(a, b, u) => vec![*a, *b, *u],
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
