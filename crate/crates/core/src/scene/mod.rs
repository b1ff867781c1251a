//! Two-speaker reverberant scene simulation.
//!
//! A scene places speaker 1 at the start and speaker 2 at the end of a fixed
//! window so that they share `round(r·T)` samples, balances the speakers on
//! their shared region, reverberates every source with its own image-method
//! response, and adds noise at a target SNR.

mod rir;
mod synth;

pub use rir::{decay_time, sabine_absorption, schroeder_db, simulate_rir, simulate_rir_with_absorption, SPEED_OF_SOUND};
pub use synth::{synth_noise, synth_speechlike};

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::math::{self, energy};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point { x, y, z }
    }

    pub fn distance(self, o: Point) -> f64 {
        let (dx, dy, dz) = (self.x - o.x, self.y - o.y, self.z - o.z);
        math::sqrt(dx * dx + dy * dy + dz * dz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub t60: f64,
    pub src_positions: [Point; 2],
    pub noise_position: Point,
    pub mic_position: Point,
}

impl RoomSpec {
    pub fn contains(&self, p: Point) -> bool {
        p.x > 0.0 && p.x < self.length && p.y > 0.0 && p.y < self.width && p.z > 0.0 && p.z < self.height
    }

    /// Distance from `p` to the nearest wall.
    pub fn wall_clearance(&self, p: Point) -> f64 {
        [p.x, self.length - p.x, p.y, self.width - p.y, p.z, self.height - p.z].into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Sampling ranges for scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneRanges {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub t60: (f64, f64),
    pub overlap: (f64, f64),
    pub rel_snr_db: (f64, f64),
    pub noise_snr_db: (f64, f64),
    pub wall_margin: f64,
    /// Minimum source/noise-to-microphone distance.
    pub mic_margin: f64,
    pub utterance_len: usize,
}

impl Default for SceneRanges {
    fn default() -> Self {
        SceneRanges {
            length: (3.0, 10.0),
            width: (3.0, 10.0),
            height: (2.5, 4.0),
            t60: (0.1, 0.5),
            overlap: (0.0, 1.0),
            rel_snr_db: (0.0, 5.0),
            noise_snr_db: (10.0, 20.0),
            wall_margin: 0.3,
            mic_margin: 0.3,
            utterance_len: 4 * crate::SAMPLE_RATE as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub overlap_ratio_target: f64,
    pub rel_snr_db: f64,
    pub noise_snr_db: f64,
    pub room: RoomSpec,
    pub utterance_len: usize,
}

fn uniform(r: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        r.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Scene with the default ranges.
pub fn sample_scene(seed: u64) -> SceneSpec {
    sample_scene_with(seed, &SceneRanges::default())
}

/// Draws every scene field uniformly from `ranges`. Positions are redrawn
/// until they clear each wall by `wall_margin` and the microphone by
/// `mic_margin`. The room may still be acoustically infeasible; see
/// [`sample_feasible_scene`].
pub fn sample_scene_with(seed: u64, ranges: &SceneRanges) -> SceneSpec {
    let mut r = rng::rng_for(seed, 0x5CE4E);
    let length = uniform(&mut r, ranges.length);
    let width = uniform(&mut r, ranges.width);
    let height = uniform(&mut r, ranges.height);
    let t60 = uniform(&mut r, ranges.t60);
    let overlap = uniform(&mut r, ranges.overlap);
    let rel_snr_db = uniform(&mut r, ranges.rel_snr_db);
    let noise_snr_db = uniform(&mut r, ranges.noise_snr_db);
    let mut room = RoomSpec {
        length,
        width,
        height,
        t60,
        src_positions: [Point::new(0.0, 0.0, 0.0); 2],
        noise_position: Point::new(0.0, 0.0, 0.0),
        mic_position: Point::new(0.0, 0.0, 0.0),
    };
    let draw = |r: &mut Rng, room: &RoomSpec| loop {
        let p = Point::new(r.gen_range(0.0..room.length), r.gen_range(0.0..room.width), r.gen_range(0.0..room.height));
        if room.wall_clearance(p) >= ranges.wall_margin {
            return p;
        }
    };
    room.mic_position = draw(&mut r, &room);
    let far = |r: &mut Rng, room: &RoomSpec| loop {
        let p = draw(r, room);
        if p.distance(room.mic_position) >= ranges.mic_margin {
            return p;
        }
    };
    room.src_positions = [far(&mut r, &room), far(&mut r, &room)];
    room.noise_position = far(&mut r, &room);
    SceneSpec { seed, overlap_ratio_target: overlap, rel_snr_db, noise_snr_db, room, utterance_len: ranges.utterance_len }
}

/// Redraws with seeds `derive(seed, k)` until the room is feasible, at most
/// `attempts` times.
pub fn sample_feasible_scene(seed: u64, ranges: &SceneRanges, attempts: usize) -> Result<SceneSpec> {
    for k in 0..attempts as u64 {
        let s = if k == 0 { seed } else { rng::derive(seed, k) };
        let spec = sample_scene_with(s, ranges);
        if sabine_absorption(&spec.room) <= 1.0 {
            return Ok(spec);
        }
    }
    bail!(InfeasibleScene, "no feasible room after {attempts} draws from seed {seed}")
}

/// Linear convolution truncated to `out_len` samples.
pub trait Convolver {
    fn convolve(&self, signal: &[f64], kernel: &[f64], out_len: usize) -> Vec<f64>;
}

/// Time-domain convolution; skips zero kernel taps.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectConvolver;

impl Convolver for DirectConvolver {
    fn convolve(&self, signal: &[f64], kernel: &[f64], out_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; out_len];
        for (k, &h) in kernel.iter().enumerate() {
            if h == 0.0 || k >= out_len {
                continue;
            }
            for (o, s) in out[k..].iter_mut().zip(signal) {
                *o += h * s;
            }
        }
        out
    }
}

/// Sample layout of the two speakers inside a `T`-sample window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub total: usize,
    pub overlap: usize,
    /// Speaker 1 occupies `[0, len1)`.
    pub len1: usize,
    /// Speaker 2 occupies `[total − len2, total)`.
    pub len2: usize,
}

impl Placement {
    pub fn new(total: usize, ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            bail!(InvalidInput, "overlap ratio {ratio} outside [0, 1]");
        }
        let overlap = (math::round(ratio * total as f64) as usize).min(total);
        let len1 = (total + overlap).div_ceil(2);
        Ok(Placement { total, overlap, len1, len2: total + overlap - len1 })
    }

    pub fn start2(&self) -> usize {
        self.total - self.len2
    }

    /// Shared region `[start2, len1)`.
    pub fn shared(&self) -> core::ops::Range<usize> {
        self.start2()..self.len1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub mixture: Vec<f64>,
    /// Reverberant source images at the microphone.
    pub targets: Vec<Vec<f64>>,
    pub noise_image: Vec<f64>,
    /// Placed and level-adjusted dry sources (same overall gain as targets).
    pub dry: Vec<Vec<f64>>,
    pub scene: SceneSpec,
    pub measured_overlap: f64,
}

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        energy(x) / x.len() as f64
    }
}

/// Final peak level of the mixture.
pub const MIX_PEAK: f64 = 0.9;

/// Builds one example: place, balance, reverberate, add noise, normalise.
pub fn mix_scene(spec: &SceneSpec, speech: [&[f64]; 2], noise: &[f64], conv: &dyn Convolver) -> Result<MixtureExample> {
    let total = spec.utterance_len;
    let place = Placement::new(total, spec.overlap_ratio_target)?;
    if speech[0].len() < place.len1 || speech[1].len() < place.len2 || noise.len() < total {
        bail!(
            InvalidInput,
            "sources too short: need {}/{}/{} samples, got {}/{}/{}",
            place.len1,
            place.len2,
            total,
            speech[0].len(),
            speech[1].len(),
            noise.len()
        );
    }
    let mut s1 = vec![0.0; total];
    s1[..place.len1].copy_from_slice(&speech[0][..place.len1]);
    let mut s2 = vec![0.0; total];
    s2[place.start2()..].copy_from_slice(&speech[1][..place.len2]);
    if energy(&s1) == 0.0 || energy(&s2) == 0.0 || energy(&noise[..total]) == 0.0 {
        bail!(InvalidInput, "a source is silent over its placed span");
    }

    // speaker balance on the shared region, whole span when there is none
    let shared = place.shared();
    let (p1, p2) = match (power(&s1[shared.clone()]), power(&s2[shared])) {
        (a, b) if a > 0.0 && b > 0.0 => (a, b),
        _ => (power(&s1), power(&s2)),
    };
    let g2 = math::sqrt(p1 / (p2 * math::powf(10.0, spec.rel_snr_db / 10.0)));
    s2.iter_mut().for_each(|v| *v *= g2);

    let fs = crate::SAMPLE_RATE;
    let room = &spec.room;
    let h1 = simulate_rir(room, room.src_positions[0], room.mic_position, fs)?;
    let h2 = simulate_rir(room, room.src_positions[1], room.mic_position, fs)?;
    let hn = simulate_rir(room, room.noise_position, room.mic_position, fs)?;
    let t1 = conv.convolve(&s1, &h1, total);
    let t2 = conv.convolve(&s2, &h2, total);
    let mut n = conv.convolve(&noise[..total], &hn, total);

    let speech_sum: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
    let ps = power(&speech_sum);
    let pn = power(&n);
    if ps == 0.0 || pn == 0.0 {
        bail!(InvalidInput, "reverberant speech or noise has zero power");
    }
    let gn = math::sqrt(ps / (pn * math::powf(10.0, spec.noise_snr_db / 10.0)));
    n.iter_mut().for_each(|v| *v *= gn);

    let peak = speech_sum.iter().zip(&n).fold(0.0f64, |m, (s, v)| m.max((s + v).abs()));
    let gain = MIX_PEAK / peak;
    let scale = |x: &[f64]| x.iter().map(|v| v * gain).collect::<Vec<f64>>();
    let targets = vec![scale(&t1), scale(&t2)];
    let noise_image = scale(&n);
    let mixture = sum_sources(&targets, &noise_image);

    let a1 = activity_mask(&s1, fs);
    let a2 = activity_mask(&s2, fs);
    let measured_overlap = measure_overlap(&a1, &a2)?;
    Ok(MixtureExample { mixture, targets, noise_image, dry: vec![scale(&s1), scale(&s2)], scene: spec.clone(), measured_overlap })
}

/// `(Σ targets) + noise`, summing targets in index order first.
pub fn sum_sources(targets: &[Vec<f64>], noise: &[f64]) -> Vec<f64> {
    (0..noise.len())
        .map(|i| {
            let mut s = 0.0;
            for t in targets {
                s += t[i];
            }
            s + noise[i]
        })
        .collect()
}

/// Frame length of the activity detector.
pub const VAD_FRAME_MS: f64 = 10.0;
/// Threshold relative to the loudest frame.
pub const VAD_THRESHOLD_DB: f64 = -40.0;

/// Per-sample speaker activity: frames within 40 dB of the loudest frame mark
/// the active span, pauses between the first and last active frame are
/// filled, and the span is clipped to the signal's nonzero support.
pub fn activity_mask(x: &[f64], fs: u32) -> Vec<bool> {
    let frame = ((VAD_FRAME_MS / 1000.0) * fs as f64) as usize;
    let mut mask = vec![false; x.len()];
    let (Some(first_nz), Some(last_nz)) = (x.iter().position(|v| *v != 0.0), x.iter().rposition(|v| *v != 0.0)) else {
        return mask;
    };
    let powers: Vec<f64> = x.chunks(frame.max(1)).map(power).collect();
    let peak = powers.iter().fold(0.0f64, |m, v| m.max(*v));
    let floor = peak * math::powf(10.0, VAD_THRESHOLD_DB / 10.0);
    let active = |p: &f64| *p > 0.0 && *p >= floor;
    let (Some(f0), Some(f1)) = (powers.iter().position(active), powers.iter().rposition(active)) else {
        return mask;
    };
    let start = (f0 * frame).max(first_nz);
    let end = ((f1 + 1) * frame).min(x.len()).min(last_nz + 1);
    for m in &mut mask[start..end.max(start)] {
        *m = true;
    }
    mask
}

/// Fraction of samples where both masks are active.
pub fn measure_overlap(a1: &[bool], a2: &[bool]) -> Result<f64> {
    if a1.len() != a2.len() {
        return Err(Error::InvalidInput(alloc::format!("activity masks differ in length: {} vs {}", a1.len(), a2.len())));
    }
    if a1.is_empty() {
        bail!(InvalidInput, "activity masks are empty");
    }
    let both = a1.iter().zip(a2).filter(|(a, b)| **a && **b).count();
    Ok(both as f64 / a1.len() as f64)
}
