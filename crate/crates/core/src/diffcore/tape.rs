//! Tape-based reverse-mode differentiation over [`DenseTensor`] values.
//!
//! Every operation appends a node holding its output value and the indices
//! of its inputs. `backward` walks the tape once in reverse, accumulating
//! vector-Jacobian products. Nodes built only from constants are skipped.

use std::cell::{Ref, RefCell};

use super::tensor::{self, DenseTensor};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulConst(usize, DenseTensor),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Abs(usize),
    NormalizeRows(usize, Vec<f64>),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    MaskedLogSumExpRows(usize, DenseTensor),
    GatherCols(usize, Vec<usize>),
    SelectRows(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: DenseTensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of a scalar with respect to every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&DenseTensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of its shape when it did not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> DenseTensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => DenseTensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: DenseTensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: DenseTensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: DenseTensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_of(&self, id: usize) -> Ref<'_, DenseTensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<DenseTensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(DenseTensor::new(shapes[loss.id].clone(), vec![1.0])?);

        for id in (0..=loss.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<DenseTensor>], nodes: &[Node], id: usize, delta: DenseTensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot @ None => {
            let shape = nodes[id].value.shape().to_vec();
            *slot = Some(DenseTensor::new(shape, delta.into_data()).expect("gradient shape"));
        }
    }
}

fn zip_map(a: &DenseTensor, b: &DenseTensor, f: impl Fn(f64, f64) -> f64) -> DenseTensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    DenseTensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn backprop_node(
    nodes: &[Node],
    node: &Node,
    g: &DenseTensor,
    grads: &mut [Option<DenseTensor>],
) -> Result<()> {
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[*a].requires_grad {
                let ga = tensor::matmul_t(g, val(*b))?;
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let gb = tensor::t_matmul(val(*a), g)?;
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::MatMulT(a, b) => {
            if nodes[*a].requires_grad {
                let ga = tensor::matmul(g, val(*b))?;
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let gb = tensor::t_matmul(g, val(*a))?;
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::AddRow(a, bias) => {
            accumulate(grads, nodes, *a, g.clone());
            if nodes[*bias].requires_grad {
                let n = val(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                let gb = DenseTensor::new(val(*bias).shape().to_vec(), gb)?;
                accumulate(grads, nodes, *bias, gb);
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            accumulate(grads, nodes, *a, zip_map(g, val(*b), |x, y| x * y));
            accumulate(grads, nodes, *b, zip_map(g, val(*a), |x, y| x * y));
        }
        Op::MulConst(a, c) => {
            accumulate(grads, nodes, *a, zip_map(g, c, |x, y| x * y));
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(grads, nodes, *a, g.map(|v| v * c));
        }
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::Relu(a) => {
            let d = zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
            accumulate(grads, nodes, *a, d);
        }
        Op::Tanh(a) => {
            let d = zip_map(g, &node.value, |gv, y| gv * (1.0 - y * y));
            accumulate(grads, nodes, *a, d);
        }
        Op::Exp(a) => {
            let d = zip_map(g, &node.value, |gv, y| gv * y);
            accumulate(grads, nodes, *a, d);
        }
        Op::Ln(a) => {
            let d = zip_map(g, val(*a), |gv, x| gv / x);
            accumulate(grads, nodes, *a, d);
        }
        Op::Abs(a) => {
            let d = zip_map(g, val(*a), |gv, x| {
                if x > 0.0 {
                    gv
                } else if x < 0.0 {
                    -gv
                } else {
                    0.0
                }
            });
            accumulate(grads, nodes, *a, d);
        }
        Op::NormalizeRows(a, norms) => {
            let y = &node.value;
            let c = y.cols();
            let mut d = g.clone();
            for (i, drow) in d.data_mut().chunks_mut(c).enumerate() {
                let yrow = y.row(i);
                let proj = tensor::dot(yrow, &g.data()[i * c..(i + 1) * c]);
                for (dv, &yv) in drow.iter_mut().zip(yrow) {
                    *dv = (*dv - yv * proj) / norms[i];
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::Sum(a) => {
            let gv = g.item();
            accumulate(grads, nodes, *a, val(*a).map(|_| gv));
        }
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            let gv = g.item() / n;
            accumulate(grads, nodes, *a, val(*a).map(|_| gv));
        }
        Op::RowSum(a) => {
            let x = val(*a);
            let c = x.cols();
            let mut d = DenseTensor::zeros(x.shape());
            for (i, row) in d.data_mut().chunks_mut(c).enumerate() {
                row.iter_mut().for_each(|v| *v = g.data()[i]);
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            let c = y.cols();
            let mut d = g.clone();
            for (i, drow) in d.data_mut().chunks_mut(c).enumerate() {
                let yrow = y.row(i);
                let s = tensor::dot(yrow, &g.data()[i * c..(i + 1) * c]);
                for (dv, &yv) in drow.iter_mut().zip(yrow) {
                    *dv = yv * (*dv - s);
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::LogSoftmaxRows(a) => {
            let y = &node.value;
            let c = y.cols();
            let mut d = g.clone();
            for drow in d.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                let (drow, yrow) = drow;
                let s: f64 = drow.iter().sum();
                for (dv, &yv) in drow.iter_mut().zip(yrow) {
                    *dv -= yv.exp() * s;
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::MaskedLogSumExpRows(a, coef) => {
            let x = val(*a);
            let c = x.cols();
            let mut d = DenseTensor::zeros(x.shape());
            for (i, drow) in d.data_mut().chunks_mut(c).enumerate() {
                let lse = node.value.data()[i];
                let gi = g.data()[i];
                for j in 0..c {
                    let w = coef.data()[i * c + j];
                    if w != 0.0 {
                        drow[j] = gi * w * (x.data()[i * c + j] - lse).exp();
                    }
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::GatherCols(a, idx) => {
            let x = val(*a);
            let c = x.cols();
            let mut d = DenseTensor::zeros(x.shape());
            for (i, &j) in idx.iter().enumerate() {
                d.data_mut()[i * c + j] = g.data()[i];
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::SelectRows(a, idx) => {
            let x = val(*a);
            let c = x.cols();
            let mut d = DenseTensor::zeros(x.shape());
            for (r, &src) in idx.iter().enumerate() {
                let grow = &g.data()[r * c..(r + 1) * c];
                for (dv, gv) in d.row_mut(src).iter_mut().zip(grow) {
                    *dv += gv;
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = val(p).len();
                let piece = DenseTensor::new(
                    val(p).shape().to_vec(),
                    g.data()[offset..offset + n].to_vec(),
                )?;
                offset += n;
                accumulate(grads, nodes, p, piece);
            }
        }
        Op::Reshape(a) => {
            let d = g.reshape(val(*a).shape().to_vec())?;
            accumulate(grads, nodes, *a, d);
        }
    }
    Ok(())
}

fn same_shape(a: &DenseTensor, b: &DenseTensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> DenseTensor {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.value_of(self.id).item()
    }

    fn unary(self, op: Op, f: impl FnOnce(&DenseTensor) -> DenseTensor) -> Var<'t> {
        let v = f(&self.tape.value_of(self.id));
        let rg = self.tape.needs(&[self.id]);
        self.tape.push(v, op, rg)
    }

    fn binary(self, other: Var<'t>, op: Op, value: DenseTensor) -> Var<'t> {
        let rg = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = tensor::matmul(&self.tape.value_of(self.id), &self.tape.value_of(other.id))?;
        Ok(self.binary(other, Op::MatMul(self.id, other.id), v))
    }

    /// `self @ other^T`.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = tensor::matmul_t(&self.tape.value_of(self.id), &self.tape.value_of(other.id))?;
        Ok(self.binary(other, Op::MatMulT(self.id, other.id), v))
    }

    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let v = tensor::add_row(&self.tape.value_of(self.id), &self.tape.value_of(bias.id))?;
        Ok(self.binary(bias, Op::AddRow(self.id, bias.id), v))
    }

    fn elementwise(
        self,
        other: Var<'t>,
        what: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let v = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            same_shape(&a, &b, what)?;
            zip_map(&a, &b, f)
        };
        Ok(self.binary(other, op, v))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, c: DenseTensor) -> Result<Var<'t>> {
        let v = {
            let a = self.tape.value_of(self.id);
            same_shape(&a, &c, "mul_const")?;
            zip_map(&a, &c, |x, y| x * y)
        };
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::MulConst(self.id, c), rg))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |a| a.map(|v| v * c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a.map(|v| v + c))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|v| v.max(0.0)))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), |a| a.map(f64::ln))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |a| a.map(f64::abs))
    }

    /// Row-wise L2 normalization (each row of a matrix, or the whole vector).
    pub fn normalize_rows(self) -> Result<Var<'t>> {
        let (v, norms) = tensor::normalize_rows(&self.tape.value_of(self.id))?;
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::NormalizeRows(self.id, norms), rg))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| DenseTensor::scalar(a.data().iter().sum()))
    }

    pub fn mean(self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |a| {
            DenseTensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        })
    }

    /// Sum across columns: `[m, n] -> [m]`.
    pub fn row_sum(self) -> Var<'t> {
        self.unary(Op::RowSum(self.id), |a| {
            let c = a.cols();
            DenseTensor::vector(a.data().chunks(c).map(|r| r.iter().sum()).collect())
        })
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |a| {
            let mut out = a.clone();
            let c = a.cols();
            for row in out.data_mut().chunks_mut(c) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.iter_mut().for_each(|v| *v = (*v - m).exp());
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            out
        })
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), |a| {
            let mut out = a.clone();
            let c = a.cols();
            for row in out.data_mut().chunks_mut(c) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            out
        })
    }

    /// Per row: `ln sum_j coef[i,j] * exp(x[i,j])` with non-negative coefficients.
    pub fn masked_log_sum_exp_rows(self, coef: DenseTensor) -> Result<Var<'t>> {
        let v = {
            let a = self.tape.value_of(self.id);
            same_shape(&a, &coef, "masked_log_sum_exp_rows")?;
            let c = a.cols();
            let mut out = Vec::with_capacity(a.rows());
            for (row, crow) in a.data().chunks(c).zip(coef.data().chunks(c)) {
                let m = row
                    .iter()
                    .zip(crow)
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(&x, _)| x)
                    .fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return Err(Error::contract("masked log-sum-exp over an empty row"));
                }
                let s: f64 = row
                    .iter()
                    .zip(crow)
                    .map(|(&x, &w)| if w > 0.0 { w * (x - m).exp() } else { 0.0 })
                    .sum();
                out.push(m + s.ln());
            }
            DenseTensor::vector(out)
        };
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::MaskedLogSumExpRows(self.id, coef), rg))
    }

    /// `out[i] = self[i, idx[i]]`.
    pub fn gather_cols(self, idx: Vec<usize>) -> Result<Var<'t>> {
        let v = {
            let a = self.tape.value_of(self.id);
            if idx.len() != a.rows() || idx.iter().any(|&j| j >= a.cols()) {
                return Err(Error::dim(format!(
                    "gather_cols: {} indices for {:?}",
                    idx.len(),
                    a.shape()
                )));
            }
            DenseTensor::vector(idx.iter().enumerate().map(|(i, &j)| a.row(i)[j]).collect())
        };
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::GatherCols(self.id, idx), rg))
    }

    pub fn select_rows(self, idx: Vec<usize>) -> Result<Var<'t>> {
        let v = {
            let a = self.tape.value_of(self.id);
            if idx.iter().any(|&r| r >= a.rows()) {
                return Err(Error::dim(format!(
                    "select_rows: index out of range for {:?}",
                    a.shape()
                )));
            }
            let rows: Vec<&[f64]> = idx.iter().map(|&r| a.row(r)).collect();
            let mut t = DenseTensor::from_rows(&rows)?;
            if rows.is_empty() {
                t = DenseTensor::zeros(&[0, a.cols()]);
            }
            t
        };
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::SelectRows(self.id, idx), rg))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let v = self.tape.value_of(self.id).reshape(shape)?;
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::Reshape(self.id), rg))
    }
}

/// Stack matrices with equal column counts along rows.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::contract("concat_rows of nothing"))?
        .tape;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let v = {
        let cols = tape.value_of(ids[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &i in &ids {
            let t = tape.value_of(i);
            if t.cols() != cols {
                return Err(Error::dim("concat_rows: column mismatch"));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        DenseTensor::new(vec![rows, cols], data)?
    };
    let rg = tape.needs(&ids);
    Ok(tape.push(v, Op::ConcatRows(ids), rg))
}
