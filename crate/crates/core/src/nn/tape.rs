use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};

use super::params::{ParamId, ParameterStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        seq_len: usize,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    SegmentMax {
        x: usize,
        argmax: Array2<usize>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows {
        x: usize,
        idx: Vec<usize>,
    },
    Mse {
        x: usize,
        target: Array2<f64>,
    },
    SumSquares(usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a computation over 2-D arrays for reverse-mode differentiation.
///
/// Shape mismatches are programming errors and panic; layer constructors
/// and the public forward helpers validate user-facing shapes beforehand.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant (or differentiable input) leaf.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&n) = self.params.get(&id) {
            return Var(n);
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v.0);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul shape mismatch");
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a.0, b.0))
    }

    /// `a + 1·b` with `b` a single row broadcast over `a`'s rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(vb.nrows() == 1 && vb.ncols() == va.ncols(), "add_row shape mismatch");
        let out = va + vb;
        self.push(out, Op::AddRow(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a.0, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a.0))
    }

    /// Row-wise normalisation with learned `gain` and `bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let n = vx.ncols();
        assert!(self.shape(gain) == (1, n) && self.shape(bias) == (1, n), "layer_norm shape mismatch");
        let mean = vx.mean_axis(Axis(1)).unwrap();
        let centered = vx - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * inv_std.view().insert_axis(Axis(1));
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention over consecutive blocks
    /// of `seq_len` rows; `q`, `k`, `v` are `(batch·seq_len) × d`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq_len: usize, heads: usize) -> Var {
        let (rows, d) = self.shape(q);
        assert!(self.shape(k) == (rows, d) && self.shape(v) == (rows, d), "attention shape mismatch");
        assert!(seq_len > 0 && rows % seq_len == 0 && d % heads == 0, "attention layout mismatch");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(rows / seq_len * heads);
        for b in 0..rows / seq_len {
            let r = b * seq_len..(b + 1) * seq_len;
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let qh = vq.slice(s![r.clone(), c.clone()]);
                let kh = vk.slice(s![r.clone(), c.clone()]);
                let vh = vv.slice(s![r.clone(), c.clone()]);
                let mut p = qh.dot(&kh.t()) * scale;
                for mut row in p.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
                    row.mapv_inplace(|x| (x - m).exp());
                    let z = row.sum();
                    row /= z;
                }
                out.slice_mut(s![r.clone(), c]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                seq_len,
                heads,
                probs,
            },
        )
    }

    /// Column-wise maximum over consecutive blocks of `seg_len` rows.
    pub fn segment_max(&mut self, x: Var, seg_len: usize) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.dim();
        assert!(seg_len > 0 && rows % seg_len == 0, "segment_max layout mismatch");
        let segs = rows / seg_len;
        let mut out = Array2::from_elem((segs, cols), f64::NEG_INFINITY);
        let mut argmax = Array2::zeros((segs, cols));
        for r in 0..rows {
            let sidx = r / seg_len;
            for c in 0..cols {
                let v = vx[[r, c]];
                if v > out[[sidx, c]] {
                    out[[sidx, c]] = v;
                    argmax[[sidx, c]] = r;
                }
            }
        }
        self.push(out, Op::SegmentMax { x: x.0, argmax })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        assert!(parts.iter().all(|p| self.shape(*p).0 == rows), "concat_cols row mismatch");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).unwrap();
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        assert!(parts.iter().all(|p| self.shape(*p).1 == cols), "concat_rows column mismatch");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).unwrap();
        self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    /// Row `i` of the output is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let vx = self.value(x);
        assert!(idx.iter().all(|&i| i < vx.nrows()), "gather_rows index out of range");
        let out = vx.select(Axis(0), idx);
        self.push(out, Op::GatherRows { x: x.0, idx: idx.to_vec() })
    }

    /// Mean squared difference against a constant, as a 1×1 value.
    pub fn mse(&mut self, x: Var, target: Array2<f64>) -> Var {
        assert_eq!(self.shape(x), target.dim(), "mse shape mismatch");
        let diff = self.value(x) - &target;
        let loss = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), loss), Op::Mse { x: x.0, target })
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).mapv(|v| v * v).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumSquares(x.0))
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Input | Op::Param) {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = |j: usize, d: Array2<f64>| match &mut grads[j] {
                Some(e) => *e += &d,
                slot @ None => *slot = Some(d),
            };
            match &self.nodes[i].op {
                Op::Input | Op::Param => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.nodes[*b].value.t()));
                    acc(*b, self.nodes[*a].value.t().dot(&g));
                }
                Op::AddRow(a, b) => {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * &self.nodes[*b].value);
                    acc(*b, &g * &self.nodes[*a].value);
                }
                Op::Scale(a, s) => acc(*a, g * *s),
                Op::Gelu(a) => {
                    let d = &self.nodes[*a].value.mapv(gelu_grad) * &g;
                    acc(*a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * &self.nodes[*gain].value;
                    let n = xhat.ncols() as f64;
                    let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let dx = (dxhat * n - &sum_d - xhat * &sum_dx) * &(inv_std / n).insert_axis(Axis(1));
                    acc(*x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    seq_len,
                    heads,
                    probs,
                } => {
                    let (vq, vk, vv) = (&self.nodes[*q].value, &self.nodes[*k].value, &self.nodes[*v].value);
                    let (rows, d) = vq.dim();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (mut dq, mut dk, mut dv) = (Array2::zeros((rows, d)), Array2::zeros((rows, d)), Array2::zeros((rows, d)));
                    let mut pi = 0;
                    for b in 0..rows / seq_len {
                        let r = b * seq_len..(b + 1) * seq_len;
                        for h in 0..*heads {
                            let c = h * dh..(h + 1) * dh;
                            let p = &probs[pi];
                            pi += 1;
                            let go = g.slice(s![r.clone(), c.clone()]);
                            let vh = vv.slice(s![r.clone(), c.clone()]);
                            dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&go));
                            let dp = go.dot(&vh.t());
                            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                            let ds = (dp - &row_dot) * p * scale;
                            let qh = vq.slice(s![r.clone(), c.clone()]);
                            let kh = vk.slice(s![r.clone(), c.clone()]);
                            dq.slice_mut(s![r.clone(), c.clone()]).assign(&ds.dot(&kh));
                            dk.slice_mut(s![r.clone(), c]).assign(&ds.t().dot(&qh));
                        }
                    }
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::SegmentMax { x, argmax } => {
                    let mut dx = Array2::zeros(self.nodes[*x].value.dim());
                    for ((sidx, c), &r) in argmax.indexed_iter() {
                        dx[[r, c]] += g[[sidx, c]];
                    }
                    acc(*x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        acc(p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.nodes[p].value.nrows();
                        acc(p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let mut dx = Array2::zeros(self.nodes[*x].value.dim());
                    for (o, &src) in idx.iter().enumerate() {
                        let mut row = dx.row_mut(src);
                        row += &g.row(o);
                    }
                    acc(*x, dx);
                }
                Op::Mse { x, target } => {
                    let n = target.len().max(1) as f64;
                    let d = (&self.nodes[*x].value - target) * (2.0 * g[[0, 0]] / n);
                    acc(*x, d);
                }
                Op::SumSquares(x) => acc(*x, &self.nodes[*x].value * (2.0 * g[[0, 0]])),
            }
        }
        Gradients { grads }
    }
}

/// Adjoint values produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::input`]; `None` when the loss
    /// does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// One gradient per stored parameter, zeros for parameters not used on
    /// the tape.
    pub fn for_params(&self, tape: &Tape, store: &ParameterStore) -> Vec<Array2<f64>> {
        let mut out: Vec<Array2<f64>> = store.ids().map(|id| Array2::zeros(store.get(id).dim())).collect();
        for (&id, &node) in &tape.params {
            if let Some(g) = &self.grads[node] {
                out[id.index()] = g.clone();
            }
        }
        out
    }
}
