//! Learned linear waveform encoder and overlap-add decoder.
//!
//! A waveform of `t` samples is cut into frames of `W` samples every `hop`
//! samples (the last frame zero-padded on the right), and each frame is
//! projected onto `N` analysis filters. Latent features are stored
//! frame-major: row `l` holds the `N` channel values of frame `l`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::matrix::{gemm, Matrix};
use crate::tape::{Tape, Var, NO_INDEX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Number of analysis/synthesis filters `N`.
    pub filters: usize,
    /// Window `W` in samples.
    pub window: usize,
    pub hop: usize,
    /// Rectify encoder output. Off by default: the encoder is a pure linear map.
    #[serde(default)]
    pub encoder_relu: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig::from_window_ms(2.0, crate::SAMPLE_RATE, 128)
    }
}

impl CodecConfig {
    /// Window of `window_ms` at `sample_rate`, half-overlapping hop.
    pub fn from_window_ms(window_ms: f64, sample_rate: u32, filters: usize) -> Self {
        let window = crate::math::round(window_ms * sample_rate as f64 / 1000.0) as usize;
        CodecConfig { filters, window, hop: window / 2, encoder_relu: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.window == 0 || self.hop == 0 {
            bail!(Config, "codec: filters, window and hop must be positive");
        }
        if !self.window.is_multiple_of(self.hop) {
            bail!(Config, "codec: hop {} must divide window {}", self.hop, self.window);
        }
        Ok(())
    }

    /// Frame count for a waveform of `t ≥ W` samples.
    pub fn frames(&self, t: usize) -> usize {
        frame_count(t, self.window, self.hop)
    }
}

pub fn frame_count(t: usize, window: usize, hop: usize) -> usize {
    if t <= window {
        1
    } else {
        (t - window).div_ceil(hop) + 1
    }
}

/// Analysis filters, `[N × W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBasis {
    pub filters: Matrix,
    pub hop: usize,
    pub relu: bool,
}

/// Synthesis basis, `[N × W]`; row `n` is the waveform contributed by channel `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBasis {
    pub basis: Matrix,
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature {
    /// `[L × N]`, frame-major.
    pub data: Matrix,
    /// Length of the waveform this feature came from.
    pub sample_anchor: usize,
}

impl LatentFeature {
    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    /// Value of channel `n` at frame `l`.
    pub fn at(&self, n: usize, l: usize) -> f64 {
        self.data.get(l, n)
    }
}

/// Precomputed index maps for framing and overlap-add at one signal length.
#[derive(Debug, Clone)]
pub struct Framing {
    pub samples: usize,
    pub frames: usize,
    pub window: usize,
    /// Gather map waveform → `[L × W]` frames (zero past the end).
    frame_idx: Arc<[u32]>,
    /// Scatter map `[L × W]` frames → waveform (dropping the padded tail).
    ola_idx: Arc<[u32]>,
}

impl Framing {
    pub fn new(samples: usize, window: usize, hop: usize) -> Result<Self> {
        if samples < window {
            bail!(InvalidInput, "waveform of {samples} samples is shorter than one {window}-sample window");
        }
        let frames = frame_count(samples, window, hop);
        let idx: Vec<u32> = (0..frames)
            .flat_map(|l| (0..window).map(move |w| l * hop + w))
            .map(|s| if s < samples { s as u32 } else { NO_INDEX })
            .collect();
        let idx: Arc<[u32]> = Arc::from(idx);
        Ok(Framing { samples, frames, window, frame_idx: idx.clone(), ola_idx: idx })
    }

    /// Waveform `[1 × t]` → frames `[L × W]`.
    pub fn frame(&self, tape: &mut Tape, wave: Var) -> Var {
        tape.gather(wave, self.frame_idx.clone(), self.frames, self.window)
    }

    /// Frames `[L × W]` → waveform `[1 × t]` by overlap-add.
    pub fn overlap_add(&self, tape: &mut Tape, frames: Var) -> Var {
        tape.scatter_add(frames, self.ola_idx.clone(), 1, self.samples)
    }
}

/// `E(y)` on a tape: waveform `[1 × t]`, filters `[N × W]` → `[L × N]`.
pub fn encode_var(tape: &mut Tape, framing: &Framing, wave: Var, filters: Var, relu: bool) -> Var {
    let frames = framing.frame(tape, wave);
    let latent = tape.matmul_t(frames, false, filters, true);
    if relu {
        tape.relu(latent)
    } else {
        latent
    }
}

/// Decoder on a tape: `[L × N]` latent, `[N × W]` basis → waveform `[1 × t]`.
pub fn decode_var(tape: &mut Tape, framing: &Framing, latent: Var, basis: Var) -> Var {
    let frames = tape.matmul(latent, basis);
    framing.overlap_add(tape, frames)
}

pub fn encode(waveform: &[f64], basis: &EncoderBasis) -> Result<LatentFeature> {
    let window = basis.filters.cols();
    if waveform.len() < window {
        bail!(InvalidInput, "waveform of {} samples is shorter than one {window}-sample window", waveform.len());
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        bail!(InvalidInput, "waveform contains non-finite samples");
    }
    let frames_n = frame_count(waveform.len(), window, basis.hop);
    let frames = Matrix::from_fn(frames_n, window, |l, w| waveform.get(l * basis.hop + w).copied().unwrap_or(0.0));
    let mut data = Matrix::zeros(frames_n, basis.filters.rows());
    gemm(&frames, false, &basis.filters, true, &mut data, false);
    if basis.relu {
        data.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(LatentFeature { data, sample_anchor: waveform.len() })
}

pub fn decode(latent: &LatentFeature, basis: &DecoderBasis) -> Result<Vec<f64>> {
    if latent.channels() != basis.basis.rows() {
        bail!(Config, "decode: latent has {} channels, basis expects {}", latent.channels(), basis.basis.rows());
    }
    if latent.frames() == 0 {
        bail!(InvalidInput, "decode: latent has no frames");
    }
    let frames = latent.data.matmul(&basis.basis);
    let mut out = vec![0.0; latent.sample_anchor];
    for l in 0..latent.frames() {
        for (w, v) in frames.row(l).iter().enumerate() {
            if let Some(o) = out.get_mut(l * basis.hop + w) {
                *o += v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random_basis(n: usize, w: usize, seed: u64) -> Matrix {
        let mut r = rng::rng(seed);
        Matrix::from_fn(n, w, |_, _| r.gen_range(-1.0..1.0))
    }

    fn random_wave(t: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::rng(seed);
        (0..t).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    /// Solves `a · x = b` for square `a` by Gauss-Jordan with partial pivoting.
    fn solve(a: &Matrix, b: &Matrix) -> Matrix {
        let n = a.rows();
        let mut m = Matrix::from_fn(n, n + b.cols(), |r, c| if c < n { a.get(r, c) } else { b.get(r, c - n) });
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs())).unwrap();
            for c in 0..m.cols() {
                let tmp = m.get(col, c);
                m.set(col, c, m.get(piv, c));
                m.set(piv, c, tmp);
            }
            let p = m.get(col, col);
            for c in 0..m.cols() {
                m.set(col, c, m.get(col, c) / p);
            }
            for r in 0..n {
                if r != col {
                    let f = m.get(r, col);
                    for c in 0..m.cols() {
                        m.set(r, c, m.get(r, c) - f * m.get(col, c));
                    }
                }
            }
        }
        Matrix::from_fn(n, b.cols(), |r, c| m.get(r, n + c))
    }

    #[test]
    fn default_window_is_32_samples() {
        let cfg = CodecConfig::default();
        assert_eq!((cfg.filters, cfg.window, cfg.hop), (128, 32, 16));
        cfg.validate().unwrap();
        let bad = CodecConfig { hop: 12, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_input_gives_zero_feature() {
        let basis = EncoderBasis { filters: random_basis(128, 32, 1), hop: 16, relu: false };
        let f = encode(&[0.0; 64], &basis).unwrap();
        assert_eq!((f.channels(), f.frames()), (128, 3));
        assert!(f.data.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(64, 32, 16), 3);
        assert_eq!(frame_count(32, 32, 16), 1);
        assert_eq!(frame_count(16_000, 32, 16), 999);
        // right padding fills the last frame
        assert_eq!(frame_count(65, 32, 16), 4);
    }

    #[test]
    fn short_waveform_is_rejected() {
        let basis = EncoderBasis { filters: random_basis(4, 32, 1), hop: 16, relu: false };
        assert!(encode(&[0.0; 31], &basis).is_err());
        assert!(encode(&[f64::NAN; 40], &basis).is_err());
    }

    #[test]
    fn encode_is_linear() {
        let basis = EncoderBasis { filters: random_basis(128, 32, 2), hop: 16, relu: false };
        let x = random_wave(512, 3);
        let y = random_wave(512, 4);
        let (a, b) = (0.7, -1.3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = encode(&mix, &basis).unwrap();
        let ex = encode(&x, &basis).unwrap();
        let ey = encode(&y, &basis).unwrap();
        for i in 0..lhs.data.len() {
            let rhs = a * ex.data.as_slice()[i] + b * ey.data.as_slice()[i];
            let l = lhs.data.as_slice()[i];
            assert!((l - rhs).abs() <= 1e-5 * rhs.abs().max(1e-3), "{l} vs {rhs}");
        }
    }

    #[test]
    fn decode_zero_and_shape() {
        let dec = DecoderBasis { basis: random_basis(8, 32, 5), hop: 16 };
        let latent = LatentFeature { data: Matrix::zeros(3, 8), sample_anchor: 64 };
        assert_eq!(decode(&latent, &dec).unwrap(), vec![0.0; 64]);
        let wrong = LatentFeature { data: Matrix::zeros(3, 7), sample_anchor: 64 };
        assert!(decode(&wrong, &dec).is_err());

        let enc = EncoderBasis { filters: random_basis(8, 32, 6), hop: 16, relu: false };
        for t in [32, 33, 47, 64, 100, 257] {
            let x = random_wave(t, t as u64);
            assert_eq!(decode(&encode(&x, &enc).unwrap(), &dec).unwrap().len(), t);
        }
    }

    #[test]
    fn pseudo_inverse_decoder_reconstructs_without_overlap() {
        // hop = W: frames do not overlap, so decoder = right inverse of Fᵀ
        let (n, w) = (48, 32);
        let f = random_basis(n, w, 7);
        let ftf = f.transpose().matmul(&f);
        let dec_t = solve(&ftf, &f.transpose()); // (FᵀF)⁻¹Fᵀ : [W × N]
        let enc = EncoderBasis { filters: f, hop: w, relu: false };
        let dec = DecoderBasis { basis: dec_t.transpose(), hop: w };
        let x = random_wave(32 * 20, 8);
        let y = decode(&encode(&x, &enc).unwrap(), &dec).unwrap();
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-4, "{}", err / norm);
    }

    #[test]
    fn tape_path_matches_plain_path() {
        let filters = random_basis(16, 32, 9);
        let basis = random_basis(16, 32, 10);
        let x = random_wave(200, 11);
        let framing = Framing::new(200, 32, 16).unwrap();
        let mut tape = Tape::new();
        let w = tape.leaf(Matrix::row_vector(x.clone()));
        let fv = tape.leaf(filters.clone());
        let bv = tape.leaf(basis.clone());
        let lat = encode_var(&mut tape, &framing, w, fv, false);
        let out = decode_var(&mut tape, &framing, lat, bv);

        let plain_lat = encode(&x, &EncoderBasis { filters, hop: 16, relu: false }).unwrap();
        assert_eq!(tape.value(lat), &plain_lat.data);
        let plain = decode(&plain_lat, &DecoderBasis { basis, hop: 16 }).unwrap();
        for (a, b) in tape.value(out).as_slice().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn codec_basis_gradients_match_finite_differences() {
        let t = 80;
        let x = random_wave(t, 12);
        let target = random_wave(t, 13);
        let framing = Framing::new(t, 8, 4).unwrap();
        let loss = |filters: &Matrix, basis: &Matrix| -> (f64, Option<(Matrix, Matrix)>) {
            let mut tape = Tape::new();
            let w = tape.leaf(Matrix::row_vector(x.clone()));
            let fv = tape.leaf(filters.clone());
            let bv = tape.leaf(basis.clone());
            let lat = encode_var(&mut tape, &framing, w, fv, false);
            let out = decode_var(&mut tape, &framing, lat, bv);
            let l = tape.neg_snr(out, Arc::new(Matrix::row_vector(target.clone())));
            let g = tape.backward(l);
            (tape.scalar(l), Some((g.wrt(fv).unwrap().clone(), g.wrt(bv).unwrap().clone())))
        };
        let f = random_basis(6, 8, 14);
        let b = random_basis(6, 8, 15);
        let (_, grads) = loss(&f, &b);
        let (gf, gb) = grads.unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for which in 0..2 {
            for i in 0..f.len() {
                let (mut fp, mut fm, mut bp, mut bm) = (f.clone(), f.clone(), b.clone(), b.clone());
                if which == 0 {
                    fp.as_mut_slice()[i] += h;
                    fm.as_mut_slice()[i] -= h;
                } else {
                    bp.as_mut_slice()[i] += h;
                    bm.as_mut_slice()[i] -= h;
                }
                let num = (loss(&fp, &bp).0 - loss(&fm, &bm).0) / (2.0 * h);
                let ana = if which == 0 { gf.as_slice()[i] } else { gb.as_slice()[i] };
                worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-6));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }
}
