//! Recording tape for reverse-mode differentiation.
//!
//! Operations append nodes in evaluation order, so a reverse sweep over the
//! node list visits every node after all of its consumers. Parameters enter the
//! tape as borrowed leaves; gradients come back as an owned [`Gradients`] table.

use std::borrow::Cow;
use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{sigmoid, NumericsError, ParamStore, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_COEFF: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    BatchMatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Sin(usize),
    Cos(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum(usize),
    Mean(usize),
    BceWithLogits {
        logits: usize,
        targets: Vec<T>,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    ConcatRows(Vec<usize>),
    ExpandRows {
        x: usize,
        reps: usize,
    },
    SplitHeads {
        x: usize,
        tokens: usize,
        batch: usize,
        heads: usize,
    },
    MergeHeads {
        x: usize,
        tokens: usize,
        batch: usize,
        heads: usize,
    },
}

struct Node<'a, T: Real> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward pass worth of recorded operations.
///
/// Shape errors in graph construction are programming errors and panic;
/// [`Tape::backward`] reports contract violations as [`NumericsError`].
pub struct Tape<'a, T: Real = f32> {
    id: u64,
    nodes: RefCell<Vec<Node<'a, T>>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        None => (1, 1),
        Some((&cols, rest)) => (rest.iter().product(), cols),
    }
}

fn sum_f64<T: Real>(values: &[T]) -> f64 {
    values.iter().map(|v| v.as_f64()).sum()
}

fn gelu<T: Real>(x: T) -> T {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let xf = x.as_f64();
    let inner = c * (xf + GELU_COEFF * xf * xf * xf);
    T::from_f64(0.5 * xf * (1.0 + inner.tanh()))
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let xf = x.as_f64();
    let th = (c * (xf + GELU_COEFF * xf * xf * xf)).tanh();
    let d_inner = c * (1.0 + 3.0 * GELU_COEFF * xf * xf);
    T::from_f64(0.5 * (1.0 + th) + 0.5 * xf * (1.0 - th * th) * d_inner)
}

fn bce_with_logits<T: Real>(z: T, y: T) -> f64 {
    let z = z.as_f64();
    let y = y.as_f64();
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, parents: &[usize]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>().max(1), value.len().max(1));
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index
    }

    fn leaf(&self, shape: Vec<usize>, value: Cow<'a, [T]>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    /// Borrowed trainable leaf.
    pub fn param(&self, tensor: &'a Tensor<T>) -> Var {
        self.leaf(
            tensor.shape().to_vec(),
            Cow::Borrowed(tensor.values()),
            true,
        )
    }

    /// Binds every parameter of `store` in declaration order.
    pub fn params(&self, store: &'a ParamStore<T>) -> Vec<Var> {
        store.iter().map(|p| self.param(&p.tensor)).collect()
    }

    /// Owned trainable leaf.
    pub fn variable(&self, shape: Vec<usize>, values: Vec<T>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "variable shape"
        );
        self.leaf(shape, Cow::Owned(values), true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, shape: Vec<usize>, values: Vec<T>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "constant shape"
        );
        self.leaf(shape, Cow::Owned(values), false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, [T]> {
        let i = self.check(v);
        Ref::map(self.nodes.borrow(), |n| &*n[i].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        let i = self.check(v);
        self.nodes.borrow()[i].shape.clone()
    }

    /// Value of a single-element variable.
    pub fn scalar(&self, v: Var) -> T {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar() on a non-scalar variable");
        value[0]
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Var {
        let i = self.check(x);
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            (
                nodes[i].shape.clone(),
                nodes[i].value.iter().map(|&v| f(v)).collect(),
            )
        };
        self.push(shape, value, op(i), &[i])
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            assert_eq!(
                nodes[ia].shape, nodes[ib].shape,
                "elementwise shape mismatch"
            );
            let value = nodes[ia]
                .value
                .iter()
                .zip(nodes[ib].value.iter())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (nodes[ia].shape.clone(), value)
        };
        self.push(shape, value, op, &[ia, ib])
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a.index, b.index))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.index, b.index))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.index, b.index))
    }

    pub fn scale(&self, x: Var, factor: T) -> Var {
        self.unary(x, |v| v * factor, |i| Op::Scale(i, factor))
    }

    /// `x[.., n] + bias[n]`, broadcast over all leading dimensions.
    pub fn add_row(&self, x: Var, bias: Var) -> Var {
        let (ix, ib) = (self.check(x), self.check(bias));
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (_, n) = rows_cols(&nodes[ix].shape);
            assert_eq!(nodes[ib].value.len(), n, "bias width mismatch");
            let b = &nodes[ib].value;
            let value = nodes[ix]
                .value
                .chunks(n)
                .flat_map(|row| row.iter().zip(b.iter()).map(|(&v, &c)| v + c))
                .collect();
            (nodes[ix].shape.clone(), value)
        };
        self.push(shape, value, Op::AddRow(ix, ib), &[ix, ib])
    }

    /// `a[m,k] @ b[k,n]`, or `a @ b^T` for `b[n,k]` when `trans_b`.
    pub fn matmul(&self, a: Var, b: Var, trans_b: bool) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (m, k, n, value) = {
            let nodes = self.nodes.borrow();
            let (sa, sb) = (&nodes[ia].shape, &nodes[ib].shape);
            assert!(sa.len() == 2 && sb.len() == 2, "matmul expects matrices");
            let (m, k) = (sa[0], sa[1]);
            let n = if trans_b {
                assert_eq!(sb[1], k, "matmul inner dimension");
                sb[0]
            } else {
                assert_eq!(sb[0], k, "matmul inner dimension");
                sb[1]
            };
            let value = super::matmul(&nodes[ia].value, &nodes[ib].value, m, k, n, trans_b);
            (m, k, n, value)
        };
        self.push(
            vec![m, n],
            value,
            Op::MatMul {
                a: ia,
                b: ib,
                m,
                k,
                n,
                trans_b,
            },
            &[ia, ib],
        )
    }

    /// Batched `a[g,m,k] @ b[g,k,n]` (or `b[g,n,k]` transposed).
    pub fn batch_matmul(&self, a: Var, b: Var, trans_b: bool) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (batch, m, k, n, value) = {
            let nodes = self.nodes.borrow();
            let (sa, sb) = (&nodes[ia].shape, &nodes[ib].shape);
            assert!(
                sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0],
                "batch_matmul shapes"
            );
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = if trans_b {
                assert_eq!(sb[2], k, "batch_matmul inner dimension");
                sb[1]
            } else {
                assert_eq!(sb[1], k, "batch_matmul inner dimension");
                sb[2]
            };
            let mut value = Vec::with_capacity(batch * m * n);
            for g in 0..batch {
                let av = &nodes[ia].value[g * m * k..(g + 1) * m * k];
                let bv = &nodes[ib].value[g * k * n..(g + 1) * k * n];
                value.extend(super::matmul(av, bv, m, k, n, trans_b));
            }
            (batch, m, k, n, value)
        };
        self.push(
            vec![batch, m, n],
            value,
            Op::BatchMatMul {
                a: ia,
                b: ib,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            &[ia, ib],
        )
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn sin(&self, x: Var) -> Var {
        self.unary(x, |v| v.sin(), Op::Sin)
    }

    pub fn cos(&self, x: Var) -> Var {
        self.unary(x, |v| v.cos(), Op::Cos)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&self, x: Var) -> Var {
        let i = self.check(x);
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (_, n) = rows_cols(&nodes[i].shape);
            let mut value = Vec::with_capacity(nodes[i].value.len());
            for row in nodes[i].value.chunks(n) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
                let total = sum_f64(&exps);
                value.extend(exps.iter().map(|&e| T::from_f64(e.as_f64() / total)));
            }
            (nodes[i].shape.clone(), value)
        };
        self.push(shape, value, Op::Softmax(i), &[i])
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Var {
        let (ix, ig, ib) = (self.check(x), self.check(gamma), self.check(beta));
        let (shape, value, xhat, rstd) = {
            let nodes = self.nodes.borrow();
            let (rows, n) = rows_cols(&nodes[ix].shape);
            assert_eq!(nodes[ig].value.len(), n, "layer_norm gamma width");
            assert_eq!(nodes[ib].value.len(), n, "layer_norm beta width");
            let (g, b) = (&nodes[ig].value, &nodes[ib].value);
            let mut value = Vec::with_capacity(rows * n);
            let mut xhat = Vec::with_capacity(rows * n);
            let mut rstd = Vec::with_capacity(rows);
            for row in nodes[ix].value.chunks(n) {
                let mean = sum_f64(row) / n as f64;
                let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
                let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                rstd.push(T::from_f64(r));
                for (j, v) in row.iter().enumerate() {
                    let h = T::from_f64((v.as_f64() - mean) * r);
                    xhat.push(h);
                    value.push(h * g[j] + b[j]);
                }
            }
            (nodes[ix].shape.clone(), value, xhat, rstd)
        };
        self.push(
            shape,
            value,
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                rstd,
            },
            &[ix, ig, ib],
        )
    }

    pub fn sum(&self, x: Var) -> Var {
        let i = self.check(x);
        let total = sum_f64(&self.nodes.borrow()[i].value);
        self.push(vec![], vec![T::from_f64(total)], Op::Sum(i), &[i])
    }

    pub fn mean(&self, x: Var) -> Var {
        let i = self.check(x);
        let mean = {
            let nodes = self.nodes.borrow();
            sum_f64(&nodes[i].value) / nodes[i].value.len() as f64
        };
        self.push(vec![], vec![T::from_f64(mean)], Op::Mean(i), &[i])
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`,
    /// evaluated in the logit domain.
    pub fn bce_with_logits(&self, logits: Var, targets: &[T]) -> Var {
        let i = self.check(logits);
        let mean = {
            let nodes = self.nodes.borrow();
            let z = &nodes[i].value;
            assert_eq!(z.len(), targets.len(), "bce target count");
            z.iter()
                .zip(targets)
                .map(|(&z, &y)| bce_with_logits(z, y))
                .sum::<f64>()
                / z.len() as f64
        };
        self.push(
            vec![],
            vec![T::from_f64(mean)],
            Op::BceWithLogits {
                logits: i,
                targets: targets.to_vec(),
            },
            &[i],
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&self, pred: Var, target: &[T]) -> Var {
        let t = self.constant(self.shape(pred), target.to_vec());
        let diff = self.sub(pred, t);
        let sq = self.mul(diff, diff);
        self.mean(sq)
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&self, x: Var, start: usize, width: usize) -> Var {
        let i = self.check(x);
        let (rows, value) = {
            let nodes = self.nodes.borrow();
            let (rows, n) = rows_cols(&nodes[i].shape);
            assert!(start + width <= n, "slice_cols out of range");
            let value = nodes[i]
                .value
                .chunks(n)
                .flat_map(|row| row[start..start + width].iter().copied())
                .collect();
            (rows, value)
        };
        self.push(
            vec![rows, width],
            value,
            Op::SliceCols { x: i, start },
            &[i],
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let (rows, total, value) = {
            let nodes = self.nodes.borrow();
            let rows = rows_cols(&nodes[idx[0]].shape).0;
            let widths: Vec<usize> = idx
                .iter()
                .map(|&p| {
                    let (r, c) = rows_cols(&nodes[p].shape);
                    assert_eq!(r, rows, "concat_cols row mismatch");
                    c
                })
                .collect();
            let total = widths.iter().sum();
            let mut value = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (&p, &w) in idx.iter().zip(&widths) {
                    value.extend_from_slice(&nodes[p].value[r * w..(r + 1) * w]);
                }
            }
            (rows, total, value)
        };
        self.push(vec![rows, total], value, Op::ConcatCols(idx.clone()), &idx)
    }

    /// Rows `start..start + count` of a matrix.
    pub fn slice_rows(&self, x: Var, start: usize, count: usize) -> Var {
        let i = self.check(x);
        let (n, value) = {
            let nodes = self.nodes.borrow();
            let (rows, n) = rows_cols(&nodes[i].shape);
            assert!(start + count <= rows, "slice_rows out of range");
            (n, nodes[i].value[start * n..(start + count) * n].to_vec())
        };
        self.push(vec![count, n], value, Op::SliceRows { x: i, start }, &[i])
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let (rows, n, value) = {
            let nodes = self.nodes.borrow();
            let n = rows_cols(&nodes[idx[0]].shape).1;
            let mut rows = 0;
            let mut value = Vec::new();
            for &p in &idx {
                let (r, c) = rows_cols(&nodes[p].shape);
                assert_eq!(c, n, "concat_rows width mismatch");
                rows += r;
                value.extend_from_slice(&nodes[p].value);
            }
            (rows, n, value)
        };
        self.push(vec![rows, n], value, Op::ConcatRows(idx.clone()), &idx)
    }

    /// Repeats each row of `x[t, n]` `reps` times: output row `t * reps + r` is `x[t]`.
    pub fn expand_rows(&self, x: Var, reps: usize) -> Var {
        let i = self.check(x);
        let (rows, n, value) = {
            let nodes = self.nodes.borrow();
            let (rows, n) = rows_cols(&nodes[i].shape);
            let mut value = Vec::with_capacity(rows * reps * n);
            for row in nodes[i].value.chunks(n) {
                for _ in 0..reps {
                    value.extend_from_slice(row);
                }
            }
            (rows, n, value)
        };
        self.push(
            vec![rows * reps, n],
            value,
            Op::ExpandRows { x: i, reps },
            &[i],
        )
    }

    /// Token-major `x[tokens * batch, heads * d]` (row `t * batch + b`) to
    /// per-head blocks `[batch * heads, tokens, d]`.
    pub fn split_heads(&self, x: Var, tokens: usize, batch: usize, heads: usize) -> Var {
        let i = self.check(x);
        let (d, value) = {
            let nodes = self.nodes.borrow();
            let (rows, width) = rows_cols(&nodes[i].shape);
            assert_eq!(rows, tokens * batch, "split_heads row count");
            assert_eq!(width % heads, 0, "split_heads width");
            let d = width / heads;
            let src = &nodes[i].value;
            let mut value = vec![T::zero(); src.len()];
            for t in 0..tokens {
                for b in 0..batch {
                    for h in 0..heads {
                        let from = (t * batch + b) * width + h * d;
                        let to = ((b * heads + h) * tokens + t) * d;
                        value[to..to + d].copy_from_slice(&src[from..from + d]);
                    }
                }
            }
            (d, value)
        };
        self.push(
            vec![batch * heads, tokens, d],
            value,
            Op::SplitHeads {
                x: i,
                tokens,
                batch,
                heads,
            },
            &[i],
        )
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&self, x: Var, tokens: usize, batch: usize, heads: usize) -> Var {
        let i = self.check(x);
        let (width, value) = {
            let nodes = self.nodes.borrow();
            let shape = &nodes[i].shape;
            assert!(shape.len() == 3 && shape[0] == batch * heads && shape[1] == tokens);
            let d = shape[2];
            let width = heads * d;
            let src = &nodes[i].value;
            let mut value = vec![T::zero(); src.len()];
            for t in 0..tokens {
                for b in 0..batch {
                    for h in 0..heads {
                        let to = (t * batch + b) * width + h * d;
                        let from = ((b * heads + h) * tokens + t) * d;
                        value[to..to + d].copy_from_slice(&src[from..from + d]);
                    }
                }
            }
            (width, value)
        };
        self.push(
            vec![tokens * batch, width],
            value,
            Op::MergeHeads {
                x: i,
                tokens,
                batch,
                heads,
            },
            &[i],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if loss.tape != self.id {
            return Err(NumericsError::NotInGraph);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.index];
        if root.value.len() != 1 {
            return Err(NumericsError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(vec![T::one()]);

        for i in (0..=loss.index).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn buffer<'g, T: Real>(
    grads: &'g mut [Option<Vec<T>>],
    nodes: &[Node<'_, T>],
    i: usize,
) -> Option<&'g mut Vec<T>> {
    if !nodes[i].needs_grad {
        return None;
    }
    let len = nodes[i].value.len();
    Some(grads[i].get_or_insert_with(|| vec![T::zero(); len]))
}

fn accumulate<T: Real>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<'_, T>],
    i: usize,
    f: impl Fn(usize) -> T,
) {
    if let Some(buf) = buffer(grads, nodes, i) {
        buf.iter_mut().enumerate().for_each(|(j, b)| *b += f(j));
    }
}

fn propagate<T: Real>(nodes: &[Node<'_, T>], i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, |j| g[j]);
            accumulate(grads, nodes, *b, |j| g[j]);
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, |j| g[j]);
            accumulate(grads, nodes, *b, |j| -g[j]);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(grads, nodes, *a, |j| g[j] * vb[j]);
            accumulate(grads, nodes, *b, |j| g[j] * va[j]);
        }
        Op::AddRow(x, bias) => {
            accumulate(grads, nodes, *x, |j| g[j]);
            let n = nodes[*bias].value.len();
            if let Some(buf) = buffer(grads, nodes, *bias) {
                let mut sums = vec![0.0f64; n];
                for row in g.chunks(n) {
                    sums.iter_mut().zip(row).for_each(|(s, v)| *s += v.as_f64());
                }
                buf.iter_mut()
                    .zip(sums)
                    .for_each(|(b, s)| *b += T::from_f64(s));
            }
        }
        Op::Scale(x, c) => accumulate(grads, nodes, *x, |j| g[j] * *c),
        &Op::MatMul {
            a,
            b,
            m,
            k,
            n,
            trans_b,
        } => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            matmul_backward(
                g,
                va,
                vb,
                m,
                k,
                n,
                trans_b,
                buffer(grads, nodes, a).map(|v| v.as_mut_slice()),
                None,
            );
            matmul_backward(
                g,
                va,
                vb,
                m,
                k,
                n,
                trans_b,
                None,
                buffer(grads, nodes, b).map(|v| v.as_mut_slice()),
            );
        }
        &Op::BatchMatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        } => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (sa, sb, so) = (m * k, k * n, m * n);
            if let Some(ga) = buffer(grads, nodes, a) {
                for q in 0..batch {
                    matmul_backward(
                        &g[q * so..(q + 1) * so],
                        &va[q * sa..(q + 1) * sa],
                        &vb[q * sb..(q + 1) * sb],
                        m,
                        k,
                        n,
                        trans_b,
                        Some(&mut ga[q * sa..(q + 1) * sa]),
                        None,
                    );
                }
            }
            if let Some(gb) = buffer(grads, nodes, b) {
                for q in 0..batch {
                    matmul_backward(
                        &g[q * so..(q + 1) * so],
                        &va[q * sa..(q + 1) * sa],
                        &vb[q * sb..(q + 1) * sb],
                        m,
                        k,
                        n,
                        trans_b,
                        None,
                        Some(&mut gb[q * sb..(q + 1) * sb]),
                    );
                }
            }
        }
        Op::Relu(x) => {
            let vx = &nodes[*x].value;
            accumulate(grads, nodes, *x, |j| {
                if vx[j] > T::zero() {
                    g[j]
                } else {
                    T::zero()
                }
            });
        }
        Op::Gelu(x) => {
            let vx = &nodes[*x].value;
            accumulate(grads, nodes, *x, |j| g[j] * gelu_grad(vx[j]));
        }
        Op::Sigmoid(x) => accumulate(grads, nodes, *x, |j| g[j] * out[j] * (T::one() - out[j])),
        Op::Sin(x) => {
            let vx = &nodes[*x].value;
            accumulate(grads, nodes, *x, |j| g[j] * vx[j].cos());
        }
        Op::Cos(x) => {
            let vx = &nodes[*x].value;
            accumulate(grads, nodes, *x, |j| -g[j] * vx[j].sin());
        }
        Op::Softmax(x) => {
            let (_, n) = rows_cols(&nodes[i].shape);
            if let Some(buf) = buffer(grads, nodes, *x) {
                for ((bg, gy), y) in buf.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: f64 = gy.iter().zip(y).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    let dot = T::from_f64(dot);
                    for j in 0..n {
                        bg[j] += y[j] * (gy[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let n = nodes[*gamma].value.len();
            let gam = &nodes[*gamma].value;
            if let Some(buf) = buffer(grads, nodes, *x) {
                for (r, (bx, gy)) in buf.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = 0.0f64;
                    let mut mean_dx = 0.0f64;
                    for j in 0..n {
                        let d = (gy[j] * gam[j]).as_f64();
                        mean_d += d;
                        mean_dx += d * xh[j].as_f64();
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    let rs = rstd[r].as_f64();
                    for j in 0..n {
                        let d = (gy[j] * gam[j]).as_f64();
                        bx[j] += T::from_f64(rs * (d - mean_d - xh[j].as_f64() * mean_dx));
                    }
                }
            }
            if let Some(buf) = buffer(grads, nodes, *gamma) {
                let mut sums = vec![0.0f64; n];
                for (gy, xh) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        sums[j] += (gy[j] * xh[j]).as_f64();
                    }
                }
                buf.iter_mut()
                    .zip(sums)
                    .for_each(|(b, s)| *b += T::from_f64(s));
            }
            if let Some(buf) = buffer(grads, nodes, *beta) {
                let mut sums = vec![0.0f64; n];
                for gy in g.chunks(n) {
                    sums.iter_mut().zip(gy).for_each(|(s, v)| *s += v.as_f64());
                }
                buf.iter_mut()
                    .zip(sums)
                    .for_each(|(b, s)| *b += T::from_f64(s));
            }
        }
        Op::Sum(x) => accumulate(grads, nodes, *x, |_| g[0]),
        Op::Mean(x) => {
            let scale = g[0] / T::from_f64(nodes[*x].value.len() as f64);
            accumulate(grads, nodes, *x, |_| scale);
        }
        Op::BceWithLogits { logits, targets } => {
            let z = &nodes[*logits].value;
            let scale = g[0] / T::from_f64(z.len() as f64);
            accumulate(grads, nodes, *logits, |j| {
                (sigmoid(z[j]) - targets[j]) * scale
            });
        }
        &Op::SliceCols { x, start } => {
            let (_, n) = rows_cols(&nodes[x].shape);
            let (_, w) = rows_cols(&nodes[i].shape);
            if let Some(buf) = buffer(grads, nodes, x) {
                for (row, gy) in buf.chunks_mut(n).zip(g.chunks(w)) {
                    row[start..start + w]
                        .iter_mut()
                        .zip(gy)
                        .for_each(|(b, v)| *b += *v);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let (_, total) = rows_cols(&nodes[i].shape);
            let mut offset = 0;
            for &p in parts {
                let (_, w) = rows_cols(&nodes[p].shape);
                if let Some(buf) = buffer(grads, nodes, p) {
                    for (row, gy) in buf.chunks_mut(w).zip(g.chunks(total)) {
                        row.iter_mut()
                            .zip(&gy[offset..offset + w])
                            .for_each(|(b, v)| *b += *v);
                    }
                }
                offset += w;
            }
        }
        &Op::SliceRows { x, start } => {
            let (_, n) = rows_cols(&nodes[x].shape);
            if let Some(buf) = buffer(grads, nodes, x) {
                buf[start * n..start * n + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(b, v)| *b += *v);
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                let part = &g[offset..offset + len];
                accumulate(grads, nodes, p, |j| part[j]);
                offset += len;
            }
        }
        &Op::ExpandRows { x, reps } => {
            let (_, n) = rows_cols(&nodes[x].shape);
            if let Some(buf) = buffer(grads, nodes, x) {
                for (t, row) in buf.chunks_mut(n).enumerate() {
                    for r in 0..reps {
                        let src = &g[(t * reps + r) * n..(t * reps + r + 1) * n];
                        row.iter_mut().zip(src).for_each(|(b, v)| *b += *v);
                    }
                }
            }
        }
        &Op::SplitHeads {
            x,
            tokens,
            batch,
            heads,
        } => {
            let d = nodes[i].shape[2];
            let width = heads * d;
            if let Some(buf) = buffer(grads, nodes, x) {
                for t in 0..tokens {
                    for b in 0..batch {
                        for h in 0..heads {
                            let to = (t * batch + b) * width + h * d;
                            let from = ((b * heads + h) * tokens + t) * d;
                            buf[to..to + d]
                                .iter_mut()
                                .zip(&g[from..from + d])
                                .for_each(|(a, v)| *a += *v);
                        }
                    }
                }
            }
        }
        &Op::MergeHeads {
            x,
            tokens,
            batch,
            heads,
        } => {
            let d = nodes[x].shape[2];
            let width = heads * d;
            if let Some(buf) = buffer(grads, nodes, x) {
                for t in 0..tokens {
                    for b in 0..batch {
                        for h in 0..heads {
                            let from = (t * batch + b) * width + h * d;
                            let to = ((b * heads + h) * tokens + t) * d;
                            buf[to..to + d]
                                .iter_mut()
                                .zip(&g[from..from + d])
                                .for_each(|(a, v)| *a += *v);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `dA` and/or `dB` for `C = A @ B` (or `A @ B^T`) given `dC`.
#[allow(clippy::too_many_arguments)]
fn matmul_backward<T: Real>(
    g: &[T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    ga: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let (ki, ni) = (k as isize, n as isize);
    if let Some(ga) = ga {
        // dA[m,k] = dC[m,n] @ op(B)^T
        let (rs, cs) = if trans_b { (ki, 1) } else { (1, ni) };
        T::gemm(m, n, k, T::one(), g, ni, 1, b, rs, cs, T::one(), ga, ki, 1);
    }
    if let Some(gb) = gb {
        if trans_b {
            // dB[n,k] = dC^T[n,m] @ A[m,k]
            T::gemm(n, m, k, T::one(), g, 1, ni, a, ki, 1, T::one(), gb, ki, 1);
        } else {
            // dB[k,n] = A^T[k,m] @ dC[m,n]
            T::gemm(k, m, n, T::one(), a, 1, ki, g, ni, 1, T::one(), gb, ni, 1);
        }
    }
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `∂loss/∂v`; errors if `v` is foreign to the tape or not an ancestor of the loss.
    pub fn wrt(&self, v: Var) -> Result<&[T], NumericsError> {
        if v.tape != self.tape {
            return Err(NumericsError::NotInGraph);
        }
        self.grads
            .get(v.index)
            .and_then(|g| g.as_deref())
            .ok_or(NumericsError::NotInGraph)
    }

    /// Adds the gradient of each bound parameter into the store, in order.
    pub fn accumulate_into(
        &self,
        vars: &[Var],
        store: &mut ParamStore<T>,
    ) -> Result<(), NumericsError> {
        assert_eq!(vars.len(), store.len(), "parameter binding count");
        for (idx, &v) in vars.iter().enumerate() {
            let g = self.wrt(v)?;
            store.get_mut(idx).accumulate_grad(g)?;
        }
        Ok(())
    }
}
