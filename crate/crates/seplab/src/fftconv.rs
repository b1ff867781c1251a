//! FFT-based linear convolution for reverberating long utterances.

use std::sync::Mutex;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use seplab_core::scene::Convolver;

/// Zero-padded FFT convolution. Plans are cached across calls.
pub struct FftConvolver {
    planner: Mutex<FftPlanner<f64>>,
}

impl FftConvolver {
    pub fn new() -> Self {
        FftConvolver { planner: Mutex::new(FftPlanner::new()) }
    }
}

impl Default for FftConvolver {
    fn default() -> Self {
        Self::new()
    }
}

impl Convolver for FftConvolver {
    fn convolve(&self, signal: &[f64], kernel: &[f64], out_len: usize) -> Vec<f64> {
        if signal.is_empty() || kernel.is_empty() {
            return vec![0.0; out_len];
        }
        let full = signal.len() + kernel.len() - 1;
        let n = full.next_power_of_two();
        let (fwd, inv) = {
            let mut p = self.planner.lock().unwrap_or_else(|e| e.into_inner());
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        };
        let pad = |x: &[f64]| {
            let mut v: Vec<Complex<f64>> = x.iter().map(|&r| Complex::new(r, 0.0)).collect();
            v.resize(n, Complex::new(0.0, 0.0));
            v
        };
        let mut a = pad(signal);
        let mut b = pad(kernel);
        fwd.process(&mut a);
        fwd.process(&mut b);
        a.iter_mut().zip(&b).for_each(|(x, y)| *x *= y);
        inv.process(&mut a);
        let scale = 1.0 / n as f64;
        (0..out_len).map(|i| if i < full { a[i].re * scale } else { 0.0 }).collect()
    }
}
