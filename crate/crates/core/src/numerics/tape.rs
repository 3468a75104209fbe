//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive evaluates eagerly, checks its operands' shapes, rejects
//! non-finite results and appends one node to the tape. Node inputs always
//! precede the node, so a single reverse sweep visits each node once.
//!
//! ```
//! use memtrain_core::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::row_vector(&[1.0, 2.0]));
//! let x = tape.leaf(Tensor::row_vector(&[3.0, 4.0]));
//! let loss = tape.dot(w, x).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).unwrap().data(), &[3.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul_nt, matmul_tn, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// Adds a `1 × c` row to every row of an `r × c` matrix.
    AddRow(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    /// `scale * x + shift`
    Affine(Var, f64),
    /// `1 × 1` variable times a tensor.
    ScaleBy(Var, Var),
    /// Tensor divided by a `1 × 1` variable.
    DivBy(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Dot(Var, Var),
    L2Norm(Var),
    Mean(Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
    RowMean(Var, Vec<Vec<usize>>),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.adjoints.get(var.0).and_then(Option::as_ref)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "{name} produced a non-finite value"
            )));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(format!("{name}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn scalar_operand(&self, s: Var, name: &str) -> Result<f64> {
        if self.shape(s) != (1, 1) {
            return Err(Error::dim(format!(
                "{name}: expected 1x1 scalar, got {:?}",
                self.shape(s)
            )));
        }
        Ok(self.value(s).item())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v, "add")
    }

    /// Broadcast add of a `1 × c` row (typically a bias).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::dim(format!(
                "add_row: {r}x{c} with {:?}",
                self.shape(row)
            )));
        }
        let bias = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        for chunk in v.data_mut().chunks_mut(c.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&bias) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), v, "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Hadamard(a, b), v, "hadamard")
    }

    /// Side-by-side concatenation; all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::arg("concat_cols of nothing"))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(Error::dim(format!(
                "concat_cols: {rows} rows vs {:?}",
                self.shape(p)
            )));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_raw(rows, cols, data),
            "concat_cols",
        )
    }

    /// Stacks parts vertically; all parts must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::arg("concat_rows of nothing"))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).1 != cols) {
            return Err(Error::dim(format!(
                "concat_rows: {cols} cols vs {:?}",
                self.shape(p)
            )));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = parts.iter().map(|&p| self.shape(p).0).sum();
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::from_raw(rows, cols, data),
            "concat_rows",
        )
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(Op::Affine(a, scale), v, "affine")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    /// Multiplies a tensor by a `1 × 1` variable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.scalar_operand(s, "scale_by")?;
        let v = self.value(a).map(|x| k * x);
        self.push(Op::ScaleBy(a, s), v, "scale_by")
    }

    /// Divides a tensor by a `1 × 1` variable.
    pub fn div_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.scalar_operand(s, "div_by")?;
        if k == 0.0 {
            return Err(Error::numeric("div_by zero"));
        }
        let v = self.value(a).map(|x| x / k);
        self.push(Op::DivBy(a, s), v, "div_by")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, "relu")
    }

    /// Frobenius inner product, as a `1 × 1` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let v = self.value(a).frobenius_dot(self.value(b));
        self.push(Op::Dot(a, b), Tensor::scalar(v), "dot")
    }

    /// Frobenius norm, as a `1 × 1` tensor. The gradient at zero is taken as zero.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).norm();
        self.push(Op::L2Norm(a), Tensor::scalar(v), "l2_norm")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::arg("mean of an empty tensor"));
        }
        let v = t.sum() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(v), "mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::scalar(v), "sum")
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim(format!("gather row {bad} of {n}")));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        self.push(
            Op::Gather(a, rows.to_vec()),
            Tensor::from_raw(rows.len(), c, data),
            "gather",
        )
    }

    /// Output row `k` is the mean of the rows of `a` listed in `groups[k]`,
    /// or zero when the group is empty.
    pub fn row_mean(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (n, c) = self.shape(a);
        if let Some(&bad) = groups.iter().flatten().find(|&&r| r >= n) {
            return Err(Error::dim(format!("row_mean row {bad} of {n}")));
        }
        let src = self.value(a);
        let mut data = vec![0.0; groups.len() * c];
        for (k, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let w = 1.0 / group.len() as f64;
            let out = &mut data[k * c..(k + 1) * c];
            for &r in group {
                for (o, x) in out.iter_mut().zip(src.row(r)) {
                    *o += w * x;
                }
            }
        }
        self.push(
            Op::RowMean(a, groups.to_vec()),
            Tensor::from_raw(groups.len(), c, data),
            "row_mean",
        )
    }

    /// Summed binary cross-entropy of an `n × 1` logit column against labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let (n, c) = self.shape(logits);
        if c != 1 || n != labels.len() {
            return Err(Error::dim(format!(
                "bce_with_logits: {n}x{c} logits, {} labels",
                labels.len()
            )));
        }
        let v: f64 = self
            .value(logits)
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus(z) - z * y)
            .sum();
        self.push(
            Op::BceWithLogits(logits, labels.to_vec()),
            Tensor::scalar(v),
            "bce_with_logits",
        )
    }

    /// Reverse sweep from a scalar node. Forward values are left untouched.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::arg(format!("unknown node {}", loss.0)));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let (lower, upper) = adjoints.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let node = &self.nodes[i];
            let mut acc = |v: Var, delta: Tensor| match &mut lower[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, matmul_nt(g, self.value(*b)));
                    acc(*b, matmul_tn(self.value(*a), g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for chunk in g.data().chunks(c.max(1)) {
                        for (d, x) in db.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    acc(*a, g.clone());
                    acc(*row, Tensor::from_raw(1, c, db));
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|x| -x));
                }
                Op::Hadamard(a, b) => {
                    acc(*a, g.zip(self.value(*b), |x, y| x * y));
                    acc(*b, g.zip(self.value(*a), |x, y| x * y));
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        let mut d = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        acc(p, Tensor::from_raw(rows, pc, d));
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        let d = g.data()[offset..offset + pr * pc].to_vec();
                        acc(p, Tensor::from_raw(pr, pc, d));
                        offset += pr * pc;
                    }
                }
                Op::Affine(a, scale) => acc(*a, g.map(|x| x * scale)),
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).item();
                    acc(*a, g.map(|x| x * k));
                    acc(*s, Tensor::scalar(g.frobenius_dot(self.value(*a))));
                }
                Op::DivBy(a, s) => {
                    let k = self.value(*s).item();
                    acc(*a, g.map(|x| x / k));
                    let ds = -g.frobenius_dot(self.value(*a)) / (k * k);
                    acc(*s, Tensor::scalar(ds));
                }
                Op::Sigmoid(a) => acc(*a, g.zip(&node.value, |x, y| x * y * (1.0 - y))),
                Op::Tanh(a) => acc(*a, g.zip(&node.value, |x, y| x * (1.0 - y * y))),
                Op::Relu(a) => acc(
                    *a,
                    g.zip(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
                ),
                Op::Dot(a, b) => {
                    let k = g.item();
                    acc(*a, self.value(*b).map(|y| k * y));
                    acc(*b, self.value(*a).map(|y| k * y));
                }
                Op::L2Norm(a) => {
                    let n = node.value.item();
                    let k = g.item();
                    if n > 0.0 {
                        acc(*a, self.value(*a).map(|y| k * y / n));
                    } else {
                        let (r, c) = self.shape(*a);
                        acc(*a, Tensor::zeros(r, c));
                    }
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    acc(*a, Tensor::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(*a, Tensor::filled(r, c, g.item()));
                }
                Op::Gather(a, rows) => {
                    let (n, c) = self.shape(*a);
                    let mut d = Tensor::zeros(n, c);
                    let dd = d.data_mut();
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, x) in dd[r * c..(r + 1) * c].iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(*a, d);
                }
                Op::RowMean(a, groups) => {
                    let (n, c) = self.shape(*a);
                    let mut d = Tensor::zeros(n, c);
                    let dd = d.data_mut();
                    for (k, group) in groups.iter().enumerate() {
                        if group.is_empty() {
                            continue;
                        }
                        let w = 1.0 / group.len() as f64;
                        for &r in group {
                            for (o, x) in dd[r * c..(r + 1) * c].iter_mut().zip(g.row(k)) {
                                *o += w * x;
                            }
                        }
                    }
                    acc(*a, d);
                }
                Op::BceWithLogits(z, labels) => {
                    let k = g.item();
                    let d: Vec<f64> = self
                        .value(*z)
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(&x, &y)| k * (sigmoid(x) - y))
                        .collect();
                    acc(*z, Tensor::from_raw(labels.len(), 1, d));
                }
            }
        }
        Ok(Gradients { adjoints })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Tensor) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let g = tape.backward(y).unwrap().wrt(x).unwrap().clone();
        let h = 1e-6;
        for k in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[k] += delta;
                let mut t = Tape::new();
                let v = t.leaf(xp);
                let out = build(&mut t, v);
                t.value(out).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (fd - g.data()[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "component {k}: fd {fd} vs ad {}",
                g.data()[k]
            );
        }
    }

    #[test]
    fn analytic_values() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(t).item(), 0.0);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(z).unwrap().item(), 0.25);
    }

    #[test]
    fn dot_is_squared_norm() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::row_vector(&[3.0, -4.0, 12.0]));
        let d = tape.dot(u, u).unwrap();
        let n = tape.l2_norm(u).unwrap();
        assert!((tape.value(d).item() - tape.value(n).item().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(2, 3, vec![1.0, -2.0, 3.5, 0.0, 7.0, -1.0]).unwrap());
        let i = tape.leaf(Tensor::identity(3));
        let p = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(p), tape.value(a));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
        assert!(matches!(tape.backward(a), Err(Error::Argument(_))));
    }

    #[test]
    fn overflow_is_a_numeric_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1e300));
        assert!(matches!(tape.affine(a, 1e300, 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn linear_form_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row_vector(&[1.0, 2.0]));
        let x = tape.leaf(Tensor::row_vector(&[3.0, 4.0]));
        let l = tape.dot(w, x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(w).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn primitives_match_finite_differences() {
        let x0 = Tensor::new(2, 3, vec![0.3, -0.7, 1.1, 0.05, -1.4, 0.9]).unwrap();
        let w = Tensor::new(3, 2, vec![0.2, -0.5, 0.8, 0.1, -0.3, 0.6]).unwrap();
        fd_check(
            |t, x| {
                let wv = t.leaf(w.clone());
                let m = t.matmul(x, wv).unwrap();
                let s = t.sigmoid(m).unwrap();
                let th = t.tanh(x).unwrap();
                let h = t.hadamard(th, x).unwrap();
                let c = t.concat_cols(&[s, h]).unwrap();
                let r = t.relu(c).unwrap();
                let g = t.gather(r, &[1, 0, 1]).unwrap();
                let rm = t.row_mean(g, &[vec![0, 2], vec![], vec![1]]).unwrap();
                let n = t.l2_norm(rm).unwrap();
                let d = t.div_by(rm, n).unwrap();
                let sum = t.sum(d).unwrap();
                let sc = t.scale_by(x, sum).unwrap();
                let cr = t.concat_rows(&[sc, x]).unwrap();
                t.mean(cr).unwrap()
            },
            x0.clone(),
        );
        fd_check(
            |t, x| {
                let col = t.gather(x, &[0, 1]).unwrap();
                let ones = t.leaf(Tensor::filled(3, 1, 0.5));
                let first = t.matmul(col, ones).unwrap();
                t.bce_with_logits(first, &[1.0, 0.0]).unwrap()
            },
            x0,
        );
    }

    #[test]
    fn backward_does_not_touch_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(&[0.5, -0.25]));
        let y = tape.tanh(x).unwrap();
        let l = tape.sum(y).unwrap();
        let before = tape.value(y).clone();
        let g1 = tape.backward(l).unwrap();
        let g2 = tape.backward(l).unwrap();
        assert_eq!(tape.value(y), &before);
        assert_eq!(g1.wrt(x), g2.wrt(x));
    }
}
