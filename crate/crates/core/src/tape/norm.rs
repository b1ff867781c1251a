//! Global layer normalisation: one mean/variance over every entry of the
//! input, then a per-column affine map.

use super::{slot, Tape, Var};
use crate::math::sqrt;
use crate::matrix::Matrix;

pub const NORM_EPS: f64 = 1e-8;

pub(super) struct NormNode {
    inputs: [Var; 3],
    xhat: Matrix,
    inv_std: f64,
}

pub(super) fn forward(x: &Matrix, gain: &Matrix, bias: &Matrix, inputs: [Var; 3]) -> (Matrix, NormNode) {
    let cols = x.cols();
    assert_eq!(gain.shape(), (1, cols), "norm gain shape");
    assert_eq!(bias.shape(), (1, cols), "norm bias shape");
    let n = x.len() as f64;
    let mean = x.as_slice().iter().sum::<f64>() / n;
    let var = x.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / sqrt(var + NORM_EPS);
    let mut xhat = x.clone();
    xhat.as_mut_slice().iter_mut().for_each(|v| *v = (*v - mean) * inv_std);
    let mut out = Matrix::zeros(x.rows(), cols);
    for r in 0..x.rows() {
        let (xr, or) = (xhat.row(r), out.row_mut(r));
        for c in 0..cols {
            or[c] = xr[c] * gain.as_slice()[c] + bias.as_slice()[c];
        }
    }
    (out, NormNode { inputs, xhat, inv_std })
}

impl NormNode {
    pub(super) fn backward(&self, tape: &Tape, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let [x, gain, bias] = self.inputs;
        let cols = self.xhat.cols();
        let n = self.xhat.len() as f64;
        let gain_v = tape.value(gain).as_slice();

        let mut dxhat = Matrix::zeros(dy.rows(), cols);
        {
            let gg = slot(grads, gain, tape.value(gain)).as_mut_slice();
            for r in 0..dy.rows() {
                for (c, g) in gg.iter_mut().enumerate() {
                    *g += dy.get(r, c) * self.xhat.get(r, c);
                }
            }
        }
        {
            let gbias = slot(grads, bias, tape.value(bias)).as_mut_slice();
            for r in 0..dy.rows() {
                for c in 0..cols {
                    gbias[c] += dy.get(r, c);
                    dxhat.set(r, c, dy.get(r, c) * gain_v[c]);
                }
            }
        }
        let m1 = dxhat.as_slice().iter().sum::<f64>() / n;
        let m2 = dxhat.as_slice().iter().zip(self.xhat.as_slice()).map(|(a, b)| a * b).sum::<f64>() / n;
        let gx = slot(grads, x, tape.value(x));
        for ((d, dh), xh) in gx.as_mut_slice().iter_mut().zip(dxhat.as_slice()).zip(self.xhat.as_slice()) {
            *d += self.inv_std * (dh - m1 - xh * m2);
        }
    }
}
