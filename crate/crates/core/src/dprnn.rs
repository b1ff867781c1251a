//! Dual-path RNN backbone: 50%-overlap chunking and the intra-/inter-chunk
//! recurrent blocks.
//!
//! A `[L × D]` feature is padded and cut into `S` chunks of `K` frames with hop
//! `K/2`. Chunked tensors are stored chunk-major: row `s·K + k` holds frame `k`
//! of chunk `s`. The intra-chunk pass runs a recurrence along `k` for every
//! chunk; the inter-chunk pass runs along `s` for every within-chunk position.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::params::{uniform, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{SeqLayout, Tape, Var, NO_INDEX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Total number of dual-path blocks `M` across the whole model.
    pub blocks: usize,
    /// Channel width `D` inside the blocks.
    pub width: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    /// Chunk length `K` in frames (even).
    pub chunk_len: usize,
    #[serde(default = "yes")]
    pub inter_bidirectional: bool,
}

fn yes() -> bool {
    true
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { blocks: 6, width: 64, hidden: 128, chunk_len: 100, inter_bidirectional: true }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            bail!(Config, "backbone: M must be at least 1");
        }
        if self.width == 0 || self.hidden == 0 {
            bail!(Config, "backbone: width and hidden size must be positive");
        }
        check_chunk_len(self.chunk_len)
    }
}

fn check_chunk_len(chunk_len: usize) -> Result<()> {
    if chunk_len < 2 || !chunk_len.is_multiple_of(2) {
        bail!(Config, "chunk length must be even and at least 2, got {chunk_len}");
    }
    Ok(())
}

/// Chunked feature `[D × K × S]`, stored as `[S·K × D]` chunk-major rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedFeature {
    pub data: Matrix,
    pub chunk_len: usize,
    pub chunks: usize,
    /// Unpadded frame count `L`.
    pub frames: usize,
    pub front_pad: usize,
    pub back_pad: usize,
}

impl ChunkedFeature {
    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    pub fn hop(&self) -> usize {
        self.chunk_len / 2
    }

    pub fn at(&self, d: usize, k: usize, s: usize) -> f64 {
        self.data.get(s * self.chunk_len + k, d)
    }

    fn check(&self) -> Result<()> {
        check_chunk_len(self.chunk_len)?;
        let span = (self.chunks.saturating_sub(1)) * self.hop() + self.chunk_len;
        if self.chunks == 0 || self.front_pad + self.frames + self.back_pad != span {
            bail!(
                Invariant,
                "chunk geometry inconsistent: {} + {} + {} padded frames vs span {span}",
                self.front_pad,
                self.frames,
                self.back_pad
            );
        }
        if self.data.rows() != self.chunks * self.chunk_len {
            bail!(Invariant, "chunk data has {} rows, expected {}", self.data.rows(), self.chunks * self.chunk_len);
        }
        Ok(())
    }

    /// Padded position of frame `i` → list of `(chunk, offset)` covering it.
    fn coverage(&self, frame: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = frame + self.front_pad;
        let hop = self.hop();
        (0..self.chunks).filter_map(move |s| {
            let start = s * hop;
            (p >= start && p < start + self.chunk_len).then(|| (s, p - start))
        })
    }
}

/// Standard geometry: `S = ceil(L / hop) + 1` chunks, `hop` frames of front padding.
fn geometry(frames: usize, chunk_len: usize) -> (usize, usize, usize) {
    let hop = chunk_len / 2;
    let chunks = frames.div_ceil(hop) + 1;
    let front = hop;
    let back = (chunks - 1) * hop + chunk_len - front - frames;
    (chunks, front, back)
}

pub fn segment(feature: &Matrix, chunk_len: usize) -> Result<ChunkedFeature> {
    check_chunk_len(chunk_len)?;
    let frames = feature.rows();
    if frames == 0 {
        bail!(InvalidInput, "segment: feature has no frames");
    }
    let (chunks, front_pad, back_pad) = geometry(frames, chunk_len);
    let hop = chunk_len / 2;
    let width = feature.cols();
    let mut data = Matrix::zeros(chunks * chunk_len, width);
    for s in 0..chunks {
        for k in 0..chunk_len {
            let p = s * hop + k;
            if p >= front_pad && p - front_pad < frames {
                data.row_mut(s * chunk_len + k).copy_from_slice(feature.row(p - front_pad));
            }
        }
    }
    Ok(ChunkedFeature { data, chunk_len, chunks, frames, front_pad, back_pad })
}

/// Overlap-add of the chunks, divided by the number of chunks covering each
/// frame, with padding stripped.
pub fn merge(chunks: &ChunkedFeature) -> Result<Matrix> {
    chunks.check()?;
    let width = chunks.channels();
    let mut out = Matrix::zeros(chunks.frames, width);
    for i in 0..chunks.frames {
        let mut count = 0usize;
        for (s, k) in chunks.coverage(i) {
            count += 1;
            let src = chunks.data.row(s * chunks.chunk_len + k);
            for (o, v) in out.row_mut(i).iter_mut().zip(src) {
                *o += v;
            }
        }
        if count == 0 {
            bail!(Invariant, "frame {i} is not covered by any chunk");
        }
        let inv = 1.0 / count as f64;
        out.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// Tape-side chunking for one `(L, D, K)` combination.
#[derive(Debug, Clone)]
pub struct ChunkPlan {
    pub frames: usize,
    pub width: usize,
    pub chunk_len: usize,
    pub chunks: usize,
    seg_idx: Arc<[u32]>,
    merge_idx: Arc<[u32]>,
    merge_scale: Arc<Matrix>,
}

impl ChunkPlan {
    pub fn new(frames: usize, width: usize, chunk_len: usize) -> Result<Self> {
        check_chunk_len(chunk_len)?;
        if frames == 0 {
            bail!(InvalidInput, "chunk plan: no frames");
        }
        let (chunks, front, _) = geometry(frames, chunk_len);
        let hop = chunk_len / 2;
        let rows = chunks * chunk_len;
        let mut seg_idx = vec![NO_INDEX; rows * width];
        let mut counts = vec![0usize; frames];
        for s in 0..chunks {
            for k in 0..chunk_len {
                let p = s * hop + k;
                if p >= front && p - front < frames {
                    let f = p - front;
                    counts[f] += 1;
                    for d in 0..width {
                        seg_idx[(s * chunk_len + k) * width + d] = (f * width + d) as u32;
                    }
                }
            }
        }
        let merge_scale = Matrix::from_fn(frames, width, |f, _| 1.0 / counts[f] as f64);
        let seg_idx: Arc<[u32]> = Arc::from(seg_idx);
        Ok(ChunkPlan {
            frames,
            width,
            chunk_len,
            chunks,
            merge_idx: seg_idx.clone(),
            seg_idx,
            merge_scale: Arc::new(merge_scale),
        })
    }

    pub fn rows(&self) -> usize {
        self.chunks * self.chunk_len
    }

    pub fn segment(&self, tape: &mut Tape, x: Var) -> Var {
        tape.gather(x, self.seg_idx.clone(), self.rows(), self.width)
    }

    pub fn merge(&self, tape: &mut Tape, chunks: Var) -> Var {
        let summed = tape.scatter_add(chunks, self.merge_idx.clone(), self.frames, self.width);
        tape.mul_const(summed, self.merge_scale.clone())
    }

    /// Recurrence along the frames of each chunk.
    pub fn intra_layout(&self) -> SeqLayout {
        SeqLayout { steps: self.chunk_len, batch: self.chunks, time_major: false }
    }

    /// Recurrence across chunks at each within-chunk position.
    pub fn inter_layout(&self) -> SeqLayout {
        SeqLayout { steps: self.chunks, batch: self.chunk_len, time_major: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmParams {
    fn build(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / math::sqrt(hidden as f64);
        LstmParams {
            w_ih: store.add(&format!("{prefix}.w_ih"), uniform(input, 4 * hidden, bound, rng)),
            w_hh: store.add(&format!("{prefix}.w_hh"), uniform(hidden, 4 * hidden, bound, rng)),
            bias: store.add(&format!("{prefix}.bias"), uniform(1, 4 * hidden, bound, rng)),
        }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var, layout: SeqLayout, reverse: bool) -> Var {
        let w_ih = tape.param(store, self.w_ih);
        let w_hh = tape.param(store, self.w_hh);
        let b = tape.param(store, self.bias);
        tape.lstm(x, w_ih, w_hh, b, layout, reverse)
    }
}

/// Recurrence → projection → normalisation, added back to the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathParams {
    pub forward: LstmParams,
    pub backward: Option<LstmParams>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
}

impl PathParams {
    fn build(store: &mut ParamStore, prefix: &str, cfg: &BackboneConfig, bidirectional: bool, rng: &mut Rng) -> Self {
        let (d, h) = (cfg.width, cfg.hidden);
        let forward = LstmParams::build(store, &format!("{prefix}.fwd"), d, h, rng);
        let backward = bidirectional.then(|| LstmParams::build(store, &format!("{prefix}.bwd"), d, h, rng));
        let rnn_out = if bidirectional { 2 * h } else { h };
        let bound = 1.0 / math::sqrt(rnn_out as f64);
        PathParams {
            forward,
            backward,
            proj_w: store.add(&format!("{prefix}.proj.weight"), uniform(rnn_out, d, bound, rng)),
            proj_b: store.add(&format!("{prefix}.proj.bias"), uniform(1, d, bound, rng)),
            norm_gain: store.add(&format!("{prefix}.norm.gain"), Matrix::filled(1, d, 1.0)),
            norm_bias: store.add(&format!("{prefix}.norm.bias"), Matrix::zeros(1, d)),
        }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var, layout: SeqLayout) -> Var {
        let fwd = self.forward.apply(tape, store, x, layout, false);
        let h = match &self.backward {
            Some(bwd) => {
                let b = bwd.apply(tape, store, x, layout, true);
                tape.concat_cols(&[fwd, b])
            }
            None => fwd,
        };
        let w = tape.param(store, self.proj_w);
        let b = tape.param(store, self.proj_b);
        let p = tape.linear(h, w, b);
        let g = tape.param(store, self.norm_gain);
        let nb = tape.param(store, self.norm_bias);
        let n = tape.global_norm(p, g, nb);
        tape.add(x, n)
    }

    fn projections(&self) -> [ParamId; 2] {
        [self.proj_w, self.proj_b]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DprnnBlockParams {
    pub intra: PathParams,
    pub inter: PathParams,
}

impl DprnnBlockParams {
    pub fn build(store: &mut ParamStore, prefix: &str, cfg: &BackboneConfig, rng: &mut Rng) -> Self {
        DprnnBlockParams {
            intra: PathParams::build(store, &format!("{prefix}.intra"), cfg, true, rng),
            inter: PathParams::build(store, &format!("{prefix}.inter"), cfg, cfg.inter_bidirectional, rng),
        }
    }

    /// Projection weights and biases of both paths.
    pub fn projections(&self) -> [ParamId; 4] {
        let [a, b] = self.intra.projections();
        let [c, d] = self.inter.projections();
        [a, b, c, d]
    }

    pub fn width(&self, store: &ParamStore) -> usize {
        store.get(self.intra.proj_w).cols()
    }
}

/// One dual-path block on chunked rows `[S·K × D]`.
pub fn block_var(tape: &mut Tape, store: &ParamStore, x: Var, plan: &ChunkPlan, block: &DprnnBlockParams) -> Var {
    let y = block.intra.apply(tape, store, x, plan.intra_layout());
    block.inter.apply(tape, store, y, plan.inter_layout())
}

/// Segment → blocks → merge on a `[L × D]` feature. An empty stack is the identity.
pub fn stack_var(tape: &mut Tape, store: &ParamStore, x: Var, blocks: &[DprnnBlockParams], chunk_len: usize) -> Result<Var> {
    if blocks.is_empty() {
        return Ok(x);
    }
    let (frames, width) = tape.value(x).shape();
    let plan = ChunkPlan::new(frames, width, chunk_len)?;
    let mut h = plan.segment(tape, x);
    for block in blocks {
        h = block_var(tape, store, h, &plan, block);
    }
    Ok(plan.merge(tape, h))
}

/// Applies one block to a chunked feature.
pub fn dprnn_block(chunks: &ChunkedFeature, block: &DprnnBlockParams, store: &ParamStore) -> Result<ChunkedFeature> {
    chunks.check()?;
    if chunks.channels() != block.width(store) {
        bail!(Invariant, "block expects {} channels, chunks have {}", block.width(store), chunks.channels());
    }
    let plan = ChunkPlan::new(chunks.frames, chunks.channels(), chunks.chunk_len)?;
    if plan.chunks != chunks.chunks {
        bail!(Invariant, "block expects standard chunk geometry");
    }
    let mut tape = Tape::new();
    let x = tape.leaf(chunks.data.clone());
    let y = block_var(&mut tape, store, x, &plan, block);
    Ok(ChunkedFeature { data: tape.value(y).clone(), ..chunks.clone() })
}

/// Applies a stack of blocks to a `[L × D]` feature.
pub fn run_stack(feature: &Matrix, blocks: &[DprnnBlockParams], store: &ParamStore, chunk_len: usize) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.leaf(feature.clone());
    let y = stack_var(&mut tape, store, x, blocks, chunk_len)?;
    Ok(tape.value(y).clone())
}

/// Scalar count of one block, for parameter budgeting.
pub fn block_param_count(cfg: &BackboneConfig) -> usize {
    let (d, h) = (cfg.width, cfg.hidden);
    let lstm = 4 * h * (d + h + 1);
    let path = |bi: bool| {
        let dirs = if bi { 2 } else { 1 };
        dirs * lstm + dirs * h * d + d + 2 * d
    };
    path(true) + path(cfg.inter_bidirectional)
}
