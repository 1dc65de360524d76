use super::params::{Gradients, ParamId, ParamStore};
use super::{log_sum_exp, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(Var, Var),
    VecMat(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    MulConst(Var, Vec<f64>),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    GatherRow(Var, usize),
    Sum(Var),
    Dot(Var, Var),
    AddN(Vec<Var>),
    MeanOverRows(Var, Vec<bool>),
    MeanOverCols(Var, Vec<bool>),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Pick(Var, usize),
    PairTanh {
        h: Var,
        n: usize,
    },
    Mqt {
        l: Var,
        s: Var,
        w: Var,
        n: usize,
        dots: Vec<f64>,
    },
    Aqt {
        l: Var,
        s: Var,
        w: Var,
        n: usize,
        squashed: Vec<f64>,
    },
    SetDiagonal(Var, Var),
}

#[derive(Debug)]
struct Node {
    // Empty for `Op::Param`; the value lives in the store.
    value: Tensor,
    len: usize,
    needs_grad: bool,
    op: Op,
}

/// Index of the pair `(j, k)` with `j <= k` in a packed upper triangle of
/// an `n x n` symmetric layout.
pub fn packed_index(n: usize, j: usize, k: usize) -> usize {
    let (j, k) = if j <= k { (j, k) } else { (k, j) };
    j * n - j * (j + 1) / 2 + k
}

pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A dynamic tape. Rebuilt for every forward pass; confined to one thread.
///
/// `backward` may be called once. A second call returns
/// [`TensorError::TapeConsumed`] rather than accumulating.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    consumed: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Whether gradient can flow into `v` from a later root.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let len = value.len();
        self.nodes.push(Node {
            value,
            len,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a constant. Constants never receive gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// The node for a stored parameter; created once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let len = self.params.value(id).len();
        self.nodes.push(Node {
            value: Tensor::scalar(0.0),
            len,
            needs_grad: true,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Copies the value of `v` into a new constant cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    /// `w[m x n] * x[n] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.rank() != 2 || xt.rank() != 1 || wt.cols() != xt.len() {
            return Err(shape_err("matvec", wt, xt));
        }
        let n = wt.cols();
        let xd = xt.data();
        let out: Vec<f64> = wt
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        let ng = self.ng(&[w, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), ng))
    }

    /// `v[n] * m[n x d] -> [d]`, i.e. a weighted sum of the rows of `m`.
    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var> {
        let (vt, mt) = (self.value(v), self.value(m));
        if vt.rank() != 1 || mt.rank() != 2 || mt.rows() != vt.len() {
            return Err(shape_err("vecmat", vt, mt));
        }
        let d = mt.cols();
        let mut out = vec![0.0; d];
        for (weight, row) in vt.data().iter().zip(mt.data().chunks_exact(d)) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += weight * r;
            }
        }
        let ng = self.ng(&[v, m]);
        Ok(self.push(Tensor::vector(out), Op::VecMat(v, m), ng))
    }

    /// `a[m x k] * b[k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rank() != 2 || bt.rank() != 2 || at.cols() != bt.rows() {
            return Err(shape_err("matmul", at, bt));
        }
        let (m, k, n) = (at.rows(), at.cols(), bt.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = at.data()[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, bv) in orow.iter_mut().zip(bt.row(p)) {
                    *o += aip * bv;
                }
            }
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err(name, at, bt));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds vector `v[c]` to every row of `m[r x c]`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.rank() != 2 || vt.rank() != 1 || mt.cols() != vt.len() {
            return Err(shape_err("add_row_broadcast", mt, vt));
        }
        let c = mt.cols();
        let mut data = mt.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (x, y) in row.iter_mut().zip(vt.data()) {
                *x += y;
            }
        }
        let value = Tensor::new(mt.shape().to_vec(), data)?;
        let ng = self.ng(&[m, v]);
        Ok(self.push(value, Op::AddRowBroadcast(m, v), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let at = self.value(a);
        let data = at.data().iter().map(|x| x * factor).collect();
        let value = Tensor {
            shape: at.shape().to_vec(),
            data,
        };
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, factor), ng)
    }

    /// Multiplies `a` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (at, st) = (self.value(a), self.value(s));
        if st.len() != 1 {
            return Err(shape_err("mul_scalar", at, st));
        }
        let k = st.item();
        let value = Tensor {
            shape: at.shape().to_vec(),
            data: at.data().iter().map(|x| x * k).collect(),
        };
        let ng = self.ng(&[a, s]);
        Ok(self.push(value, Op::MulScalar(a, s), ng))
    }

    /// Elementwise product with a constant factor vector (dropout masks).
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let at = self.value(a);
        if at.len() != factors.len() {
            return Err(TensorError::Shape {
                op: "mul_const",
                left: at.shape().to_vec(),
                right: vec![factors.len()],
            });
        }
        let value = Tensor {
            shape: at.shape().to_vec(),
            data: at.data().iter().zip(&factors).map(|(x, f)| x * f).collect(),
        };
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::MulConst(a, factors), ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let at = self.value(a);
        let value = Tensor {
            shape: at.shape().to_vec(),
            data: at.data().iter().map(|&x| f(x)).collect(),
        };
        let ng = self.ng(&[a]);
        self.push(value, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(TensorError::Rank(t.shape().to_vec()));
            }
            data.extend_from_slice(t.data());
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), ng))
    }

    /// `a[start..start + len]` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let at = self.value(a);
        if at.rank() != 1 || start + len > at.len() {
            return Err(TensorError::Index {
                index: start + len,
                size: at.len(),
            });
        }
        let data = at.data()[start..start + len].to_vec();
        let ng = self.ng(&[a]);
        Ok(self.push(Tensor::vector(data), Op::Slice(a, start), ng))
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(TensorError::Empty("stack_rows"));
        }
        let c = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != c {
                return Err(shape_err("stack_rows", self.value(rows[0]), t));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows.len(), c], data)?;
        let ng = self.ng(rows);
        Ok(self.push(value, Op::StackRows(rows.to_vec()), ng))
    }

    /// Row `index` of a matrix; backward scatter-adds into that row.
    pub fn gather_row(&mut self, table: Var, index: usize) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(TensorError::Rank(t.shape().to_vec()));
        }
        if index >= t.rows() {
            return Err(TensorError::Index {
                index,
                size: t.rows(),
            });
        }
        let data = t.row(index).to_vec();
        let ng = self.ng(&[table]);
        Ok(self.push(Tensor::vector(data), Op::GatherRow(table, index), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("dot", at, bt));
        }
        let s = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).sum();
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), ng))
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Empty("add_n"))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape() != acc.shape() {
                return Err(shape_err("add_n", &acc, t));
            }
            for (x, y) in acc.data.iter_mut().zip(t.data()) {
                *x += y;
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(acc, Op::AddN(parts.to_vec()), ng))
    }

    fn mask_or_all(mask: Option<&[bool]>, n: usize, op: &'static str) -> Result<Vec<bool>> {
        match mask {
            Some(m) if m.len() != n => Err(TensorError::Shape {
                op,
                left: vec![n],
                right: vec![m.len()],
            }),
            Some(m) if !m.iter().any(|&v| v) => Err(TensorError::InvalidMask),
            Some(m) => Ok(m.to_vec()),
            None => Ok(vec![true; n]),
        }
    }

    /// For a matrix `m[r x c]`, the mean over valid rows of each column:
    /// `out[k] = mean_{j valid} m[j][k]`.
    pub fn mean_over_rows(&mut self, m: Var, row_mask: Option<&[bool]>) -> Result<Var> {
        let mt = self.value(m);
        if mt.rank() != 2 {
            return Err(TensorError::Rank(mt.shape().to_vec()));
        }
        let (r, c) = (mt.rows(), mt.cols());
        let mask = Self::mask_or_all(row_mask, r, "mean_over_rows")?;
        let count = mask.iter().filter(|&&v| v).count() as f64;
        let mut out = vec![0.0; c];
        for (row, _) in mt.data().chunks_exact(c).zip(&mask).filter(|(_, &v)| v) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= count;
        }
        let ng = self.ng(&[m]);
        Ok(self.push(Tensor::vector(out), Op::MeanOverRows(m, mask), ng))
    }

    /// For a matrix `m[r x c]`, the mean over valid columns of each row.
    pub fn mean_over_cols(&mut self, m: Var, col_mask: Option<&[bool]>) -> Result<Var> {
        let mt = self.value(m);
        if mt.rank() != 2 {
            return Err(TensorError::Rank(mt.shape().to_vec()));
        }
        let c = mt.cols();
        let mask = Self::mask_or_all(col_mask, c, "mean_over_cols")?;
        let count = mask.iter().filter(|&&v| v).count() as f64;
        let out: Vec<f64> = mt
            .data()
            .chunks_exact(c)
            .map(|row| {
                row.iter()
                    .zip(&mask)
                    .filter(|(_, &v)| v)
                    .map(|(x, _)| x)
                    .sum::<f64>()
                    / count
            })
            .collect();
        let ng = self.ng(&[m]);
        Ok(self.push(Tensor::vector(out), Op::MeanOverCols(m, mask), ng))
    }

    /// Softmax of a vector, masked positions forced to exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() != 1 {
            return Err(TensorError::Rank(xt.shape().to_vec()));
        }
        let out = super::softmax(xt.data(), mask)?;
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::vector(out), Op::Softmax(x), ng))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() != 1 || xt.is_empty() {
            return Err(TensorError::Rank(xt.shape().to_vec()));
        }
        let out = super::log_softmax(xt.data());
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::vector(out), Op::LogSoftmax(x), ng))
    }

    /// `-log softmax(logits)[target]`, evaluated through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lt = self.value(logits);
        if lt.rank() != 1 {
            return Err(TensorError::Rank(lt.shape().to_vec()));
        }
        if target >= lt.len() {
            return Err(TensorError::Index {
                index: target,
                size: lt.len(),
            });
        }
        let lse = log_sum_exp(lt.data());
        let loss = lse - lt.data()[target];
        let probs = lt.data().iter().map(|x| (x - lse).exp()).collect();
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            ng,
        ))
    }

    /// Element `index` of a vector as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xt = self.value(x);
        if index >= xt.len() {
            return Err(TensorError::Index {
                index,
                size: xt.len(),
            });
        }
        let v = xt.data()[index];
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::scalar(v), Op::Pick(x, index), ng))
    }

    /// Pair tensor `L[j][k] = tanh(h_j + h_k)` for the rows of `h[n x d]`.
    ///
    /// Only pairs with `j <= k` are stored; the value has shape
    /// `[n(n+1)/2, d]` and is addressed with [`packed_index`].
    pub fn pair_tanh(&mut self, h: Var) -> Result<Var> {
        let ht = self.value(h);
        if ht.rank() != 2 || ht.rows() == 0 {
            return Err(TensorError::Empty("pair_tanh"));
        }
        let (n, d) = (ht.rows(), ht.cols());
        let mut data = Vec::with_capacity(packed_len(n) * d);
        for j in 0..n {
            let hj = ht.row(j);
            for k in j..n {
                data.extend(hj.iter().zip(ht.row(k)).map(|(a, b)| (a + b).tanh()));
            }
        }
        let value = Tensor::new(vec![packed_len(n), d], data)?;
        let ng = self.ng(&[h]);
        Ok(self.push(value, Op::PairTanh { h, n }, ng))
    }

    fn check_pair(&self, name: &'static str, l: Var, s: Var) -> Result<(usize, usize)> {
        let (lt, st) = (self.value(l), self.value(s));
        if lt.rank() != 2 || st.rank() != 1 || lt.cols() != st.len() {
            return Err(shape_err(name, lt, st));
        }
        let p = lt.rows();
        // Recover n from n(n+1)/2.
        let n = (((8 * p + 1) as f64).sqrt() as usize - 1) / 2;
        if packed_len(n) != p {
            return Err(shape_err(name, lt, st));
        }
        Ok((n, lt.cols()))
    }

    /// Multiplicative pairwise scores `M[j][k] = w * <L[j][k], s>`.
    pub fn mqt(&mut self, l: Var, s: Var, w: Var) -> Result<Var> {
        let (n, d) = self.check_pair("mqt", l, s)?;
        if self.value(w).len() != 1 {
            return Err(shape_err("mqt", self.value(w), self.value(s)));
        }
        let (lt, st) = (self.value(l), self.value(s));
        let wv = self.value(w).item();
        let dots: Vec<f64> = lt
            .data()
            .chunks_exact(d)
            .map(|row| row.iter().zip(st.data()).map(|(a, b)| a * b).sum())
            .collect();
        let mut out = vec![0.0; n * n];
        let mut p = 0;
        for j in 0..n {
            for k in j..n {
                let v = wv * dots[p];
                out[j * n + k] = v;
                out[k * n + j] = v;
                p += 1;
            }
        }
        let ng = self.ng(&[l, s, w]);
        Ok(self.push(
            Tensor::new(vec![n, n], out)?,
            Op::Mqt { l, s, w, n, dots },
            ng,
        ))
    }

    /// Additive pairwise scores `M[j][k] = <tanh(L[j][k] + s), w>`.
    pub fn aqt(&mut self, l: Var, s: Var, w: Var) -> Result<Var> {
        let (n, d) = self.check_pair("aqt", l, s)?;
        if self.value(w).shape() != self.value(s).shape() {
            return Err(shape_err("aqt", self.value(w), self.value(s)));
        }
        let (lt, st, wt) = (self.value(l), self.value(s), self.value(w));
        let mut squashed = Vec::with_capacity(lt.len());
        let mut scores = Vec::with_capacity(lt.rows());
        for row in lt.data().chunks_exact(d) {
            let mut acc = 0.0;
            for ((lv, sv), wv) in row.iter().zip(st.data()).zip(wt.data()) {
                let t = (lv + sv).tanh();
                squashed.push(t);
                acc += t * wv;
            }
            scores.push(acc);
        }
        let mut out = vec![0.0; n * n];
        let mut p = 0;
        for j in 0..n {
            for k in j..n {
                out[j * n + k] = scores[p];
                out[k * n + j] = scores[p];
                p += 1;
            }
        }
        let ng = self.ng(&[l, s, w]);
        Ok(self.push(
            Tensor::new(vec![n, n], out)?,
            Op::Aqt {
                l,
                s,
                w,
                n,
                squashed,
            },
            ng,
        ))
    }

    /// Replaces the diagonal of square `m` with `diag`.
    pub fn set_diagonal(&mut self, m: Var, diag: Var) -> Result<Var> {
        let (mt, dt) = (self.value(m), self.value(diag));
        if mt.rank() != 2 || mt.rows() != mt.cols() || dt.len() != mt.rows() {
            return Err(shape_err("set_diagonal", mt, dt));
        }
        let n = mt.rows();
        let mut data = mt.data().to_vec();
        for (i, v) in dt.data().iter().enumerate() {
            data[i * n + i] = *v;
        }
        let ng = self.ng(&[m, diag]);
        Ok(self.push(Tensor::new(vec![n, n], data)?, Op::SetDiagonal(m, diag), ng))
    }

    /// Reverse pass from the scalar `root`.
    ///
    /// Returns one gradient buffer per parameter in the store; parameters
    /// that do not influence `root` get zeros.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(TensorError::Rank(rt.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.len;
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(
        &self,
        op: &Op,
        value: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        match op {
            Op::Input => {}
            Op::Param(id) => {
                for (a, b) in out.get_mut(*id).data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::MatVec(w, x) => {
                let (wt, xt) = (self.value(*w), self.value(*x));
                let n = wt.cols();
                if let Some(dw) = self.slot(grads, *w) {
                    for (row, gi) in dw.chunks_exact_mut(n).zip(g) {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (d, xv) in row.iter_mut().zip(xt.data()) {
                            *d += gi * xv;
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    for (row, gi) in wt.data().chunks_exact(n).zip(g) {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (d, wv) in dx.iter_mut().zip(row) {
                            *d += gi * wv;
                        }
                    }
                }
            }
            Op::VecMat(v, m) => {
                let (vt, mt) = (self.value(*v), self.value(*m));
                let d = mt.cols();
                if let Some(dv) = self.slot(grads, *v) {
                    for (dvi, row) in dv.iter_mut().zip(mt.data().chunks_exact(d)) {
                        *dvi += row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if let Some(dm) = self.slot(grads, *m) {
                    for (row, vi) in dm.chunks_exact_mut(d).zip(vt.data()) {
                        for (r, gj) in row.iter_mut().zip(g) {
                            *r += vi * gj;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k, n) = (at.rows(), at.cols(), bt.cols());
                if let Some(da) = self.slot(grads, *a) {
                    // dA = dC * B^T
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] +=
                                gi.iter().zip(bt.row(p)).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    // dB = A^T * dC
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = at.data()[i * k + p];
                            for (d, x) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += aip * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        for (x, y) in d.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, gi), bi) in d.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((x, gi), ai) in d.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRowBroadcast(m, v) => {
                let c = self.value(*v).len();
                if let Some(d) = self.slot(grads, *m) {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if let Some(d) = self.slot(grads, *v) {
                    for row in g.chunks_exact(c) {
                        for (x, y) in d.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(d) = self.slot(grads, *a) {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += f * y;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                let at = self.value(*a).data();
                let ds: f64 = at.iter().zip(g).map(|(x, y)| x * y).sum();
                if let Some(d) = self.slot(grads, *a) {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += k * y;
                    }
                }
                if let Some(d) = self.slot(grads, *s) {
                    d[0] += ds;
                }
            }
            Op::MulConst(a, factors) => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, y), f) in d.iter_mut().zip(g).zip(factors) {
                        *x += f * y;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, y), t) in d.iter_mut().zip(g).zip(value.data()) {
                        *x += y * (1.0 - t * t);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, y), s) in d.iter_mut().zip(g).zip(value.data()) {
                        *x += y * s * (1.0 - s);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].len;
                    if let Some(d) = self.slot(grads, p) {
                        for (x, y) in d.iter_mut().zip(&g[offset..offset + len]) {
                            *x += y;
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice(a, start) => {
                if let Some(d) = self.slot(grads, *a) {
                    for (x, y) in d[*start..*start + g.len()].iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::StackRows(rows) => {
                let c = value.cols();
                for (&r, chunk) in rows.iter().zip(g.chunks_exact(c)) {
                    if let Some(d) = self.slot(grads, r) {
                        for (x, y) in d.iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                }
            }
            Op::GatherRow(table, index) => {
                let c = g.len();
                if let Some(d) = self.slot(grads, *table) {
                    for (x, y) in d[index * c..(index + 1) * c].iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    for x in d.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Dot(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(d) = self.slot(grads, *a) {
                    for (x, y) in d.iter_mut().zip(bv) {
                        *x += g[0] * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (x, y) in d.iter_mut().zip(av) {
                        *x += g[0] * y;
                    }
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    if let Some(d) = self.slot(grads, p) {
                        for (x, y) in d.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::MeanOverRows(m, mask) => {
                let count = mask.iter().filter(|&&v| v).count() as f64;
                let c = g.len();
                if let Some(d) = self.slot(grads, *m) {
                    for (row, _) in d.chunks_exact_mut(c).zip(mask).filter(|(_, &v)| v) {
                        for (x, y) in row.iter_mut().zip(g) {
                            *x += y / count;
                        }
                    }
                }
            }
            Op::MeanOverCols(m, mask) => {
                let count = mask.iter().filter(|&&v| v).count() as f64;
                let c = mask.len();
                if let Some(d) = self.slot(grads, *m) {
                    for (row, gi) in d.chunks_exact_mut(c).zip(g) {
                        for (x, _) in row.iter_mut().zip(mask).filter(|(_, &v)| v) {
                            *x += gi / count;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = value.data();
                let inner: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                if let Some(d) = self.slot(grads, *x) {
                    for ((dx, yi), gi) in d.iter_mut().zip(y).zip(g) {
                        *dx += yi * (gi - inner);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let total: f64 = g.iter().sum();
                if let Some(d) = self.slot(grads, *x) {
                    for ((dx, ly), gi) in d.iter_mut().zip(value.data()).zip(g) {
                        *dx += gi - ly.exp() * total;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                if let Some(d) = self.slot(grads, *logits) {
                    for (i, (dx, p)) in d.iter_mut().zip(probs).enumerate() {
                        let one_hot = if i == *target { 1.0 } else { 0.0 };
                        *dx += g[0] * (p - one_hot);
                    }
                }
            }
            Op::Pick(x, index) => {
                if let Some(d) = self.slot(grads, *x) {
                    d[*index] += g[0];
                }
            }
            Op::PairTanh { h, n } => {
                let dim = value.cols();
                if let Some(dh) = self.slot(grads, *h) {
                    let mut p = 0;
                    for j in 0..*n {
                        for k in j..*n {
                            let lrow = &value.data()[p * dim..(p + 1) * dim];
                            let grow = &g[p * dim..(p + 1) * dim];
                            for t in 0..dim {
                                let u = grow[t] * (1.0 - lrow[t] * lrow[t]);
                                dh[j * dim + t] += u;
                                dh[k * dim + t] += u;
                            }
                            p += 1;
                        }
                    }
                }
            }
            Op::Mqt { l, s, w, n, dots } => {
                let n = *n;
                let pair_grads = fold_symmetric(g, n);
                let wv = self.value(*w).item();
                let (lt, st) = (self.value(*l), self.value(*s));
                let dim = st.len();
                if let Some(dw) = self.slot(grads, *w) {
                    dw[0] += pair_grads.iter().zip(dots).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(ds) = self.slot(grads, *s) {
                    for (gp, row) in pair_grads.iter().zip(lt.data().chunks_exact(dim)) {
                        let k = gp * wv;
                        for (x, y) in ds.iter_mut().zip(row) {
                            *x += k * y;
                        }
                    }
                }
                if let Some(dl) = self.slot(grads, *l) {
                    for (gp, row) in pair_grads.iter().zip(dl.chunks_exact_mut(dim)) {
                        let k = gp * wv;
                        for (x, y) in row.iter_mut().zip(st.data()) {
                            *x += k * y;
                        }
                    }
                }
            }
            Op::Aqt {
                l,
                s,
                w,
                n,
                squashed,
            } => {
                let pair_grads = fold_symmetric(g, *n);
                let wt = self.value(*w).data();
                let dim = wt.len();
                let need_l = self.nodes[l.0].needs_grad;
                let need_s = self.nodes[s.0].needs_grad;
                let need_w = self.nodes[w.0].needs_grad;
                let mut dl_local = if need_l {
                    vec![0.0; squashed.len()]
                } else {
                    Vec::new()
                };
                let mut ds_local = vec![0.0; dim];
                let mut dw_local = vec![0.0; dim];
                for (p, gp) in pair_grads.iter().enumerate() {
                    let trow = &squashed[p * dim..(p + 1) * dim];
                    for t in 0..dim {
                        let tv = trow[t];
                        if need_w {
                            dw_local[t] += gp * tv;
                        }
                        let u = gp * wt[t] * (1.0 - tv * tv);
                        if need_l {
                            dl_local[p * dim + t] += u;
                        }
                        ds_local[t] += u;
                    }
                }
                if let Some(d) = self.slot(grads, *w) {
                    for (x, y) in d.iter_mut().zip(&dw_local) {
                        *x += y;
                    }
                }
                if need_s {
                    if let Some(d) = self.slot(grads, *s) {
                        for (x, y) in d.iter_mut().zip(&ds_local) {
                            *x += y;
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *l) {
                    for (x, y) in d.iter_mut().zip(&dl_local) {
                        *x += y;
                    }
                }
            }
            Op::SetDiagonal(m, diag) => {
                let n = value.rows();
                if let Some(d) = self.slot(grads, *m) {
                    for (i, (x, y)) in d.iter_mut().zip(g).enumerate() {
                        if i % (n + 1) != 0 {
                            *x += y;
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *diag) {
                    for (i, x) in d.iter_mut().enumerate() {
                        *x += g[i * n + i];
                    }
                }
            }
        }
    }
}

/// Gradient per packed pair from a gradient on the full symmetric matrix.
fn fold_symmetric(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(packed_len(n));
    for j in 0..n {
        for k in j..n {
            if j == k {
                out.push(g[j * n + j]);
            } else {
                out.push(g[j * n + k] + g[k * n + j]);
            }
        }
    }
    out
}
