//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are kept on
//! the tape; [`Tape::backward`] walks it in reverse and returns gradients for
//! the parameter and leaf nodes. Recurrent and normalisation layers are fused
//! ops with hand-written backward passes, so a tape holds a few hundred nodes
//! per model evaluation rather than one per time step.

mod lstm;
mod norm;

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::matrix::{gemm, Matrix};
use crate::params::{Grads, ParamId, ParamStore};

pub use lstm::SeqLayout;

/// Sentinel used in index maps: "no source" for gathers, "drop" for scatters.
pub const NO_INDEX: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    Scale(Var, f64),
    MulConst(Var, Arc<Matrix>),
    Relu(Var),
    Concat(Vec<Var>),
    SliceCols { a: Var, start: usize },
    Gather { a: Var, idx: Arc<[u32]> },
    ScatterAdd { a: Var, idx: Arc<[u32]> },
    Sum(Vec<Var>),
    NegSnr { est: Var, reference: Arc<Matrix> },
    Lstm(Box<lstm::LstmNode>),
    Norm(Box<norm::NormNode>),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node; `None` if it did not influence
    /// the output.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.nodes[var.0].as_ref()
    }

    /// Collect parameter gradients into store order. Parameters inserted more
    /// than once accumulate.
    pub fn into_param_grads(self, store: &ParamStore) -> Grads {
        let mut grads = Grads::zeros_like(store);
        for (id, node) in &self.params {
            if let Some(g) = &self.nodes[*node] {
                grads.0[id.index()].add_assign(g);
            }
        }
        grads
    }
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let m = if ta { av.cols() } else { av.rows() };
        let n = if tb { bv.rows() } else { bv.cols() };
        let mut out = Matrix::zeros(m, n);
        gemm(av, ta, bv, tb, &mut out, false);
        self.push(out, Op::MatMul { a, b, ta, tb })
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(x, y)| f(*x, *y)).collect();
        Matrix::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "bias row shape mismatch");
        let mut out = av.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        debug_assert_eq!(cols, rv.cols());
        self.push(out, Op::AddRow { a, row })
    }

    /// `x · w + b` with `w: [in × out]`, `b: [1 × out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(k);
        self.push(out, Op::Scale(a, k))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Arc<Matrix>) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), c.shape(), "mul_const shape mismatch");
        let data = av.as_slice().iter().zip(c.as_slice()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data);
        self.push(out, Op::MulConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.as_slice().iter().map(|x| x.max(0.0)).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data);
        self.push(out, Op::Relu(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let av = self.value(a);
        assert!(start + width <= av.cols());
        let out = Matrix::from_fn(av.rows(), width, |r, c| av.get(r, start + c));
        self.push(out, Op::SliceCols { a, start })
    }

    /// `out.flat[i] = a.flat[idx[i]]`, or zero where `idx[i] == NO_INDEX`.
    pub fn gather(&mut self, a: Var, idx: Arc<[u32]>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather index length");
        let src = self.value(a).as_slice();
        let data = idx
            .iter()
            .map(|&i| if i == NO_INDEX { 0.0 } else { src[i as usize] })
            .collect();
        self.push(Matrix::from_vec(rows, cols, data), Op::Gather { a, idx })
    }

    /// `out.flat[idx[i]] += a.flat[i]`; entries with `NO_INDEX` are dropped.
    pub fn scatter_add(&mut self, a: Var, idx: Arc<[u32]>, rows: usize, cols: usize) -> Var {
        let src = self.value(a).as_slice();
        assert_eq!(idx.len(), src.len(), "scatter index length");
        let mut out = Matrix::zeros(rows, cols);
        let dst = out.as_mut_slice();
        for (&i, v) in idx.iter().zip(src) {
            if i != NO_INDEX {
                dst[i as usize] += v;
            }
        }
        self.push(out, Op::ScatterAdd { a, idx })
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut out = self.value(parts[0]).clone();
        for p in &parts[1..] {
            out.add_assign(self.value(*p));
        }
        self.push(out, Op::Sum(parts.to_vec()))
    }

    /// Negative SNR in dB of an estimate against a constant reference,
    /// `-10·log10(‖r‖² / (‖r − e‖² + ε))` with `ε = 1e-8·‖r‖²`.
    pub fn neg_snr(&mut self, est: Var, reference: Arc<Matrix>) -> Var {
        let e = self.value(est);
        assert_eq!(e.shape(), reference.shape(), "snr shape mismatch");
        let loss = -crate::losses::snr_db_unchecked(e.as_slice(), reference.as_slice());
        self.push(Matrix::filled(1, 1, loss), Op::NegSnr { est, reference })
    }

    /// One direction of an LSTM over a packed sequence. See [`SeqLayout`].
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, layout: SeqLayout, reverse: bool) -> Var {
        let (out, node) = lstm::forward(
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b),
            [x, w_ih, w_hh, b],
            layout,
            reverse,
        );
        self.push(out, Op::Lstm(Box::new(node)))
    }

    /// Global layer normalisation over all entries, with per-column gain and
    /// bias (`1 × cols` each).
    pub fn global_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (out, node) = norm::forward(self.value(x), self.value(gain), self.value(bias), [x, gain, bias]);
        self.push(out, Op::Norm(Box::new(node)))
    }

    /// Backpropagate from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        self.backward_with(output, Matrix::filled(1, 1, 1.0))
    }

    /// Backpropagate an arbitrary output gradient.
    pub fn backward_with(&self, output: Var, seed: Matrix) -> Gradients {
        assert_eq!(self.value(output).shape(), seed.shape());
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = vec![None; n];
        grads[output.0] = Some(seed);
        let mut params = Vec::new();

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    params.push((*id, i));
                    continue;
                }
                _ => {}
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &g, &mut grads);
        }
        Gradients { nodes: grads, params }
    }

    fn propagate(&self, op: &Op, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = slot(grads, *a, av);
                if *ta {
                    gemm(bv, *tb, g, true, ga, true);
                } else {
                    gemm(g, false, bv, !*tb, ga, true);
                }
                let gb = slot(grads, *b, bv);
                if *tb {
                    gemm(g, true, av, *ta, gb, true);
                } else {
                    gemm(av, !*ta, g, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                slot(grads, *a, g).add_assign(g);
                slot(grads, *b, g).add_assign(g);
            }
            Op::Sub(a, b) => {
                slot(grads, *a, g).add_assign(g);
                let gb = slot(grads, *b, g);
                for (d, s) in gb.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d -= s;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = slot(grads, *a, av);
                for ((d, s), y) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(bv.as_slice()) {
                    *d += s * y;
                }
                let gb = slot(grads, *b, bv);
                for ((d, s), x) in gb.as_mut_slice().iter_mut().zip(g.as_slice()).zip(av.as_slice()) {
                    *d += s * x;
                }
            }
            Op::AddRow { a, row } => {
                slot(grads, *a, g).add_assign(g);
                let cols = g.cols();
                let gr = slot(grads, *row, self.value(*row)).as_mut_slice();
                for r in 0..g.rows() {
                    for (d, s) in gr.iter_mut().zip(&g.as_slice()[r * cols..(r + 1) * cols]) {
                        *d += s;
                    }
                }
            }
            Op::Scale(a, k) => {
                let ga = slot(grads, *a, g);
                for (d, s) in ga.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d += k * s;
                }
            }
            Op::MulConst(a, c) => {
                let ga = slot(grads, *a, g);
                for ((d, s), k) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(c.as_slice()) {
                    *d += k * s;
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let ga = slot(grads, *a, av);
                for ((d, s), x) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(av.as_slice()) {
                    if *x > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let w = pv.cols();
                    let gp = slot(grads, *p, pv);
                    for r in 0..g.rows() {
                        for (d, s) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                            *d += s;
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let ga = slot(grads, *a, av);
                for r in 0..g.rows() {
                    for (d, s) in ga.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
            }
            Op::Gather { a, idx } => {
                let ga = slot(grads, *a, self.value(*a)).as_mut_slice();
                for (&i, s) in idx.iter().zip(g.as_slice()) {
                    if i != NO_INDEX {
                        ga[i as usize] += s;
                    }
                }
            }
            Op::ScatterAdd { a, idx } => {
                let src = g.as_slice();
                let ga = slot(grads, *a, self.value(*a)).as_mut_slice();
                for (d, &i) in ga.iter_mut().zip(idx.iter()) {
                    if i != NO_INDEX {
                        *d += src[i as usize];
                    }
                }
            }
            Op::Sum(parts) => {
                for p in parts {
                    slot(grads, *p, g).add_assign(g);
                }
            }
            Op::NegSnr { est, reference } => {
                let e = self.value(*est);
                let r = reference.as_slice();
                let ref_energy = math::energy(r);
                let err: f64 = e.as_slice().iter().zip(r).map(|(x, y)| (y - x) * (y - x)).sum();
                let denom = err + crate::losses::SNR_EPS * ref_energy;
                let k = g.as_slice()[0] * 20.0 / core::f64::consts::LN_10 / denom;
                let ge = slot(grads, *est, e);
                for ((d, x), y) in ge.as_mut_slice().iter_mut().zip(e.as_slice()).zip(r) {
                    *d += k * (x - y);
                }
            }
            Op::Lstm(node) => node.backward(self, g, grads),
            Op::Norm(node) => node.backward(self, g, grads),
        }
    }
}

/// Lazily zero-initialised gradient slot shaped like `like`.
fn slot<'g>(grads: &'g mut [Option<Matrix>], v: Var, like: &Matrix) -> &'g mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(like.rows(), like.cols()))
}
