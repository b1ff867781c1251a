//! Procedural speech-like and noise sources.

use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::math;
use crate::rng;

/// Harmonic carrier on a drifting fundamental (80–300 Hz) under a syllabic
/// envelope (2–8 Hz) with a few inserted pauses. Peak-normalised to 1. The
/// first and last 100 ms are always voiced.
pub fn synth_speechlike(seed: u64, samples: usize) -> Vec<f64> {
    let fs = crate::SAMPLE_RATE as f64;
    let mut r = rng::rng_for(seed, 0x5EEC);
    let f0_base: f64 = r.gen_range(100.0..220.0);
    let drift_rate: f64 = r.gen_range(0.2..1.5);
    let drift_depth: f64 = r.gen_range(0.1..0.3);
    let drift_phase: f64 = r.gen_range(0.0..2.0 * PI);
    let syllable_rate: f64 = r.gen_range(2.0..8.0);
    let syllable_phase: f64 = r.gen_range(0.0..2.0 * PI);
    let harmonics = 24;
    // formant-like spectral weighting with random centre frequencies
    let formants: [f64; 3] = [r.gen_range(300.0..900.0), r.gen_range(900.0..2200.0), r.gen_range(2200.0..3500.0)];
    let harmonic_phase: Vec<f64> = (0..harmonics).map(|_| r.gen_range(0.0..2.0 * PI)).collect();

    let edge = (0.1 * fs) as usize;
    let mut pauses = Vec::new();
    if samples > 4 * edge {
        for _ in 0..r.gen_range(1..4usize) {
            let len = (r.gen_range(0.08..0.25) * fs) as usize;
            if samples > 2 * edge + len {
                let start = r.gen_range(edge..samples - edge - len);
                pauses.push((start, start + len));
            }
        }
    }

    let mut phase = 0.0;
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = i as f64 / fs;
        let f0 = (f0_base * (1.0 + drift_depth * math::sin(2.0 * PI * drift_rate * t + drift_phase))).clamp(80.0, 300.0);
        phase += 2.0 * PI * f0 / fs;
        let mut v = 0.0;
        for k in 1..=harmonics {
            let f = k as f64 * f0;
            if f > 4000.0 {
                break;
            }
            let w: f64 = formants.iter().map(|c| 1.0 / (1.0 + ((f - c) / 250.0) * ((f - c) / 250.0))).sum();
            v += w / k as f64 * math::sin(k as f64 * phase + harmonic_phase[k - 1]);
        }
        let syll = 0.5 * (1.0 - math::cos(2.0 * PI * syllable_rate * t + syllable_phase));
        let mut env = 0.25 + 0.75 * syll;
        if pauses.iter().any(|(a, b)| i >= *a && i < *b) {
            env = 0.0;
        }
        out.push(env * v);
    }
    peak_normalise(&mut out);
    out
}

/// Low-passed Gaussian noise with a slow level wobble. Peak-normalised to 1.
pub fn synth_noise(seed: u64, samples: usize) -> Vec<f64> {
    let fs = crate::SAMPLE_RATE as f64;
    let mut r = rng::rng_for(seed, 0x0015E);
    let pole: f64 = r.gen_range(0.0..0.95);
    let wobble: f64 = r.gen_range(0.1..1.0);
    let depth: f64 = r.gen_range(0.0..0.5);
    let mut state = 0.0;
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let n: f64 = StandardNormal.sample(&mut r);
        state = pole * state + (1.0 - pole) * n;
        let level = 1.0 + depth * math::sin(2.0 * PI * wobble * i as f64 / fs);
        out.push(level * state);
    }
    peak_normalise(&mut out);
    out
}

fn peak_normalise(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Peak of the normalised cross-correlation over all lags (direct sum).
    fn xcorr_peak(a: &[f64], b: &[f64]) -> f64 {
        let norm = math::sqrt(math::energy(a) * math::energy(b));
        let n = a.len() as isize;
        let mut best: f64 = 0.0;
        for lag in -(n - 1)..n {
            let mut s = 0.0;
            for i in 0..n {
                let j = i + lag;
                if j >= 0 && j < n {
                    s += a[i as usize] * b[j as usize];
                }
            }
            best = best.max((s / norm).abs());
        }
        best
    }

    #[test]
    fn deterministic_and_normalised() {
        let a = synth_speechlike(3, 8000);
        assert_eq!(a, synth_speechlike(3, 8000));
        assert!(math::energy(&a) > 0.0);
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 1e-12);
        assert_eq!(synth_noise(1, 100), synth_noise(1, 100));
    }

    #[test]
    fn different_seeds_are_weakly_correlated() {
        for seed in 0..3u64 {
            let a = synth_speechlike(2 * seed, 4000);
            let b = synth_speechlike(2 * seed + 1, 4000);
            let p = xcorr_peak(&a, &b);
            assert!(p < 0.5, "seeds {}/{}: {p}", 2 * seed, 2 * seed + 1);
        }
    }
}
