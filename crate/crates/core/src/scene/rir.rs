//! Shoebox image-method impulse responses.

use alloc::vec;
use alloc::vec::Vec;

use super::{Point, RoomSpec};
use crate::error::{bail, Result};
use crate::math;

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Uniform wall absorption from the Sabine relation
/// `T60 = 24·ln(10)·V / (c·S·α)`.
pub fn sabine_absorption(room: &RoomSpec) -> f64 {
    let (l, w, h) = (room.length, room.width, room.height);
    let volume = l * w * h;
    let surface = 2.0 * (l * w + l * h + w * h);
    24.0 * math::ln(10.0) * volume / (SPEED_OF_SOUND * surface * room.t60)
}

/// Impulse response from `src` to `mic`, `ceil(t60·fs)` taps, absorption
/// from the Sabine relation.
pub fn simulate_rir(room: &RoomSpec, src: Point, mic: Point, fs: u32) -> Result<Vec<f64>> {
    if room.t60.is_nan() || room.t60 <= 0.0 {
        bail!(InvalidInput, "t60 must be positive");
    }
    let alpha = sabine_absorption(room);
    if alpha > 1.0 {
        bail!(
            InfeasibleScene,
            "t60 {:.3} s is too short for a {:.2}x{:.2}x{:.2} m room (absorption {alpha:.3} > 1)",
            room.t60,
            room.length,
            room.width,
            room.height
        );
    }
    simulate_rir_with_absorption(room, src, mic, fs, alpha)
}

/// Image-method response with an explicit absorption coefficient `α ∈ [0, 1]`;
/// every reflection scales pressure by `√(1 − α)`. Each image contributes
/// `β^n / (4πd)` at integer delay `round(d·fs/c)`.
pub fn simulate_rir_with_absorption(room: &RoomSpec, src: Point, mic: Point, fs: u32, alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        bail!(InvalidInput, "absorption {alpha} outside [0, 1]");
    }
    let dims = [room.length, room.width, room.height];
    for (name, p) in [("source", src), ("microphone", mic)] {
        if !room.contains(p) {
            bail!(InvalidInput, "{name} position {:?} is not strictly inside the room", p);
        }
    }
    let taps = math::ceil(room.t60 * fs as f64) as usize;
    let mut h = vec![0.0; taps.max(1)];
    let beta = math::sqrt(1.0 - alpha);
    let max_dist = SPEED_OF_SOUND * h.len() as f64 / fs as f64;
    let s = [src.x, src.y, src.z];
    let m = [mic.x, mic.y, mic.z];

    // Per-axis candidate offsets: (signed distance component, reflection count).
    let axis = |a: usize| -> Vec<(f64, i32)> {
        let reach = math::ceil(max_dist / (2.0 * dims[a])) as i64 + 1;
        let mut out = Vec::new();
        for n in -reach..=reach {
            for p in 0..2i64 {
                let pos = (1 - 2 * p) as f64 * s[a] + 2.0 * n as f64 * dims[a];
                let delta = pos - m[a];
                if math::abs(delta) <= max_dist {
                    out.push((delta, ((n - p).abs() + n.abs()) as i32));
                }
            }
        }
        out
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));
    let scale = fs as f64 / SPEED_OF_SOUND;
    for &(dx, rx) in &xs {
        for &(dy, ry) in &ys {
            let dxy = dx * dx + dy * dy;
            if dxy > max_dist * max_dist {
                continue;
            }
            for &(dz, rz) in &zs {
                let d = math::sqrt(dxy + dz * dz);
                let delay = math::round(d * scale) as usize;
                if delay >= h.len() {
                    continue;
                }
                let order = rx + ry + rz;
                let gain = if order == 0 { 1.0 } else { math::powi(beta, order) };
                if gain != 0.0 {
                    h[delay] += gain / (4.0 * core::f64::consts::PI * d);
                }
            }
        }
    }
    Ok(h)
}

/// Energy decay curve in dB (backward-integrated squared response,
/// normalised to 0 dB at `t = 0`).
pub fn schroeder_db(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc = vec![0.0; h.len()];
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|e| if *e > 0.0 && total > 0.0 { 10.0 * math::log10(e / total) } else { f64::NEG_INFINITY }).collect()
}

/// First time (seconds) at which the decay curve reaches `level_db`.
pub fn decay_time(h: &[f64], level_db: f64, fs: u32) -> Option<f64> {
    schroeder_db(h).iter().position(|v| *v <= level_db).map(|i| i as f64 / fs as f64)
}
