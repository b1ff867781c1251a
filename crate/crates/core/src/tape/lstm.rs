//! Fused single-direction LSTM with backpropagation through time.
//!
//! Gate order in the packed weights is `i, f, g, o`. The input projection of
//! every row is done as one GEMM up front; only the recurrent product runs per
//! step.

use alloc::vec::Vec;

use super::{slot, Tape, Var};
use crate::math::{sigmoid, tanh};
use crate::matrix::{gemm, gemm_raw, Matrix};

/// How `steps × batch` sequence positions are packed into matrix rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub steps: usize,
    pub batch: usize,
    /// `row = t·batch + b` when true, `row = b·steps + t` otherwise.
    pub time_major: bool,
}

impl SeqLayout {
    #[inline]
    pub fn row(&self, t: usize, b: usize) -> usize {
        if self.time_major {
            t * self.batch + b
        } else {
            b * self.steps + t
        }
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }
}

pub(super) struct LstmNode {
    inputs: [Var; 4],
    layout: SeqLayout,
    reverse: bool,
    /// Post-activation gates `[rows × 4H]`.
    acts: Matrix,
    tanh_c: Matrix,
    c_prev: Matrix,
    h_prev: Matrix,
}

pub(super) fn forward(
    x: &Matrix,
    w_ih: &Matrix,
    w_hh: &Matrix,
    b: &Matrix,
    inputs: [Var; 4],
    layout: SeqLayout,
    reverse: bool,
) -> (Matrix, LstmNode) {
    let rows = layout.rows();
    let hidden = w_hh.rows();
    let four = 4 * hidden;
    assert_eq!(x.rows(), rows, "lstm input rows do not match layout");
    assert_eq!(w_ih.shape(), (x.cols(), four), "lstm w_ih shape");
    assert_eq!(w_hh.shape(), (hidden, four), "lstm w_hh shape");
    assert_eq!(b.shape(), (1, four), "lstm bias shape");

    let mut xp = Matrix::zeros(rows, four);
    gemm(x, false, w_ih, false, &mut xp, false);

    let mut acts = Matrix::zeros(rows, four);
    let mut tanh_c = Matrix::zeros(rows, hidden);
    let mut c_prev = Matrix::zeros(rows, hidden);
    let mut h_prev = Matrix::zeros(rows, hidden);
    let mut out = Matrix::zeros(rows, hidden);

    let batch = layout.batch;
    let mut h_state = Matrix::zeros(batch, hidden);
    let mut c_state = Matrix::zeros(batch, hidden);
    let mut gates = Matrix::zeros(batch, four);
    let bias = b.as_slice();

    for step in 0..layout.steps {
        let t = if reverse { layout.steps - 1 - step } else { step };
        for bi in 0..batch {
            let r = layout.row(t, bi);
            for ((g, p), bb) in gates.row_mut(bi).iter_mut().zip(xp.row(r)).zip(bias) {
                *g = p + bb;
            }
        }
        gemm(&h_state, false, w_hh, false, &mut gates, true);
        for bi in 0..batch {
            let r = layout.row(t, bi);
            let g = gates.row(bi);
            let a = acts.row_mut(r);
            for j in 0..hidden {
                a[j] = sigmoid(g[j]);
                a[hidden + j] = sigmoid(g[hidden + j]);
                a[2 * hidden + j] = tanh(g[2 * hidden + j]);
                a[3 * hidden + j] = sigmoid(g[3 * hidden + j]);
            }
            let a = acts.row(r);
            for j in 0..hidden {
                let cp = c_state.get(bi, j);
                let hp = h_state.get(bi, j);
                let c = a[hidden + j] * cp + a[j] * a[2 * hidden + j];
                let tc = tanh(c);
                let h = a[3 * hidden + j] * tc;
                c_prev.set(r, j, cp);
                h_prev.set(r, j, hp);
                tanh_c.set(r, j, tc);
                out.set(r, j, h);
                c_state.set(bi, j, c);
                h_state.set(bi, j, h);
            }
        }
    }

    let node = LstmNode { inputs, layout, reverse, acts, tanh_c, c_prev, h_prev };
    (out, node)
}

impl LstmNode {
    pub(super) fn backward(&self, tape: &Tape, dout: &Matrix, grads: &mut [Option<Matrix>]) {
        let [x, w_ih, w_hh, b] = self.inputs;
        let layout = self.layout;
        let hidden = self.tanh_c.cols();
        let four = 4 * hidden;
        let rows = layout.rows();
        let batch = layout.batch;
        let w_hh_v = tape.value(w_hh);

        let mut dg = Matrix::zeros(rows, four);
        let mut dh_next = Matrix::zeros(batch, hidden);
        let mut dc_next = Matrix::zeros(batch, hidden);
        let mut dgates = Matrix::zeros(batch, four);

        for step in (0..layout.steps).rev() {
            let t = if self.reverse { layout.steps - 1 - step } else { step };
            for bi in 0..batch {
                let r = layout.row(t, bi);
                let a = self.acts.row(r);
                let dgr = dgates.row_mut(bi);
                for j in 0..hidden {
                    let (i, f, g, o) = (a[j], a[hidden + j], a[2 * hidden + j], a[3 * hidden + j]);
                    let tc = self.tanh_c.get(r, j);
                    let dh = dout.get(r, j) + dh_next.get(bi, j);
                    let d_o = dh * tc;
                    let dc = dh * o * (1.0 - tc * tc) + dc_next.get(bi, j);
                    dc_next.set(bi, j, dc * f);
                    dgr[j] = dc * g * i * (1.0 - i);
                    dgr[hidden + j] = dc * self.c_prev.get(r, j) * f * (1.0 - f);
                    dgr[2 * hidden + j] = dc * i * (1.0 - g * g);
                    dgr[3 * hidden + j] = d_o * o * (1.0 - o);
                }
                dg.row_mut(r).copy_from_slice(dgates.row(bi));
            }
            gemm(&dgates, false, w_hh_v, true, &mut dh_next, false);
        }

        let xv = tape.value(x);
        gemm(&dg, false, tape.value(w_ih), true, slot(grads, x, xv), true);
        gemm(xv, true, &dg, false, slot(grads, w_ih, tape.value(w_ih)), true);
        gemm(&self.h_prev, true, &dg, false, slot(grads, w_hh, w_hh_v), true);
        let gb = slot(grads, b, tape.value(b));
        let ones: Vec<f64> = alloc::vec![1.0; rows];
        gemm_raw(1, rows, four, &ones, rows, false, dg.as_slice(), four, false, gb.as_mut_slice(), true);
    }
}
