//! The three separation assemblies built from one `M`-block backbone.
//!
//! * SIMO-only: encoder → `M` blocks → `C`-head mask layer → decoder.
//! * Mixed: `K` blocks + `C`-head layer produce intermediate features `F_i`;
//!   each `F_i` is fused with the mixture encoding and passed through a
//!   shared `(M−K)`-block stack.
//! * SISO-only iterative: `K` encoder blocks give `H` once; `C` passes of the
//!   `(M−K)`-block decoder each see `H`, the mixture encoding and the encoding
//!   of the residual left by earlier estimates (all-zero on the first pass).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecConfig, Framing};
use crate::dprnn::{stack_var, BackboneConfig, DprnnBlockParams};
use crate::error::{bail, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::params::{uniform, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    SimoOnly,
    Mixed,
    SisoIterative,
}

impl Design {
    pub fn name(self) -> &'static str {
        match self {
            Design::SimoOnly => "simo_only",
            Design::Mixed => "mixed",
            Design::SisoIterative => "siso_iterative",
        }
    }
}

/// Features concatenated ahead of the SISO stack. Concatenation follows the
/// declaration order regardless of how the set is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionInput {
    Intermediate,
    MixtureEncoding,
    BiasEncoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub design: Design,
    /// SIMO blocks (mixed) or encoder blocks (iterative); equals `M` for SIMO-only.
    pub k: usize,
    /// Source count `C`.
    pub sources: usize,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    /// Mixed design only: SIMO heads act as masks on `E(y)` and `F_i` is added
    /// to the SISO output.
    #[serde(default)]
    pub mask_variant: bool,
    /// `None` selects the design default.
    #[serde(default)]
    pub fusion_inputs: Option<Vec<FusionInput>>,
}

impl ModelConfig {
    /// Full-size widths: `N = 128`, `W = 32`, `D = 64`, hidden 128, `M = 6`.
    pub fn full(design: Design, k: usize) -> Self {
        ModelConfig {
            design,
            k,
            sources: 2,
            codec: CodecConfig::default(),
            backbone: BackboneConfig::default(),
            mask_variant: false,
            fusion_inputs: None,
        }
    }

    /// Desk widths (`D = 16`) with short chunks, `M = 6`.
    pub fn desk(design: Design, k: usize) -> Self {
        ModelConfig {
            backbone: BackboneConfig { blocks: 6, width: 16, hidden: 32, chunk_len: 16, inter_bidirectional: true },
            ..ModelConfig::full(design, k)
        }
    }

    /// Tiny model for finite-difference checks: `M = 2`, `D = 8`.
    pub fn micro(design: Design, k: usize) -> Self {
        ModelConfig {
            design,
            k,
            sources: 2,
            codec: CodecConfig { filters: 8, window: 8, hop: 4, encoder_relu: false },
            backbone: BackboneConfig { blocks: 2, width: 8, hidden: 4, chunk_len: 8, inter_bidirectional: true },
            mask_variant: false,
            fusion_inputs: None,
        }
    }

    pub fn blocks(&self) -> usize {
        self.backbone.blocks
    }

    /// Blocks before and after the split `(K, M−K)`.
    pub fn split(&self) -> (usize, usize) {
        match self.design {
            Design::SimoOnly => (self.blocks(), 0),
            _ => (self.k, self.blocks().saturating_sub(self.k)),
        }
    }

    pub fn fusion(&self) -> Vec<FusionInput> {
        match (&self.fusion_inputs, self.design) {
            (_, Design::SimoOnly) => Vec::new(),
            (Some(set), _) => {
                let mut v = set.clone();
                v.sort();
                v
            }
            (None, Design::Mixed) => alloc::vec![FusionInput::Intermediate, FusionInput::MixtureEncoding],
            (None, Design::SisoIterative) => {
                alloc::vec![FusionInput::Intermediate, FusionInput::MixtureEncoding, FusionInput::BiasEncoding]
            }
        }
    }

    /// Short identifier such as `mixed_k2`.
    pub fn id(&self) -> String {
        let mut id = match self.design {
            Design::SimoOnly => String::from("simo_only"),
            d => format!("{}_k{}", d.name(), self.k),
        };
        if self.mask_variant {
            id.push_str("_mask");
        }
        id
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.backbone.validate()?;
        let m = self.blocks();
        if self.sources == 0 {
            bail!(Config, "source count C must be at least 1");
        }
        match self.design {
            Design::SimoOnly if self.k != m => {
                bail!(Config, "simo_only design requires K == M (K={}, M={m})", self.k)
            }
            Design::Mixed if self.k + 1 > m => {
                bail!(Config, "mixed design requires 0 <= K <= M-1 (K={}, M={m})", self.k)
            }
            Design::SisoIterative if self.k == 0 || self.k + 1 > m => {
                bail!(Config, "siso_iterative design requires 1 <= K <= M-1 (K={}, M={m})", self.k)
            }
            _ => {}
        }
        if self.mask_variant && self.design != Design::Mixed {
            bail!(Config, "mask_variant applies to the mixed design only");
        }
        if let (Some(set), d) = (&self.fusion_inputs, self.design) {
            if d != Design::SimoOnly {
                let sorted = self.fusion();
                if sorted.is_empty() {
                    bail!(Config, "fusion_inputs must not be empty");
                }
                if sorted.windows(2).any(|w| w[0] == w[1]) || sorted.len() != set.len() {
                    bail!(Config, "fusion_inputs contains duplicates");
                }
                if d == Design::Mixed && sorted.contains(&FusionInput::BiasEncoding) {
                    bail!(Config, "bias_encoding is only available to the siso_iterative design");
                }
            }
        }
        Ok(())
    }
}

/// Linear layer `[in × out]` plus optional `[1 × out]` bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    fn build(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut Rng) -> Self {
        let bound = 1.0 / math::sqrt(input as f64);
        Linear {
            weight: store.add(&format!("{name}.weight"), uniform(input, output, bound, rng)),
            bias: bias.then(|| store.add(&format!("{name}.bias"), uniform(1, output, bound, rng))),
        }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.linear(x, w, b)
            }
            None => tape.matmul(x, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    fn build(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Norm {
            gain: store.add(&format!("{name}.gain"), Matrix::filled(1, width, 1.0)),
            bias: store.add(&format!("{name}.bias"), Matrix::zeros(1, width)),
        }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.global_norm(x, g, b)
    }
}

/// Parameter handles of a built model. Optional parts are absent for designs
/// that do not use them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelParams {
    pub encoder: ParamId,
    pub decoder: ParamId,
    pub in_norm: Norm,
    pub bottleneck_in: Linear,
    /// SIMO stack (SIMO-only, mixed) or encoder stack (iterative).
    pub front: Vec<DprnnBlockParams>,
    /// Shared SISO stack (mixed) or decoder stack (iterative).
    pub back: Vec<DprnnBlockParams>,
    pub head: Option<Linear>,
    pub bottleneck_out: Option<Linear>,
    pub fuse: Option<Linear>,
    pub fuse_norm: Option<Norm>,
    pub out_proj: Option<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
}

pub fn build_model(config: &ModelConfig, seed: u64) -> Result<SeparationModel> {
    config.validate()?;
    let mut rng = rng::rng(seed);
    let mut store = ParamStore::new();
    let (n, w) = (config.codec.filters, config.codec.window);
    let d = config.backbone.width;
    let c = config.sources;
    let (front_n, back_n) = config.split();
    if front_n + back_n != config.blocks() {
        bail!(Invariant, "block split {front_n} + {back_n} does not add up to M = {}", config.blocks());
    }

    let encoder = store.add("encoder.filters", uniform(n, w, 1.0 / math::sqrt(w as f64), &mut rng));
    let decoder = store.add("decoder.basis", uniform(n, w, 1.0 / math::sqrt(n as f64), &mut rng));
    let in_norm = Norm::build(&mut store, "in_norm", n);
    let bottleneck_in = Linear::build(&mut store, "bottleneck_in", n, d, true, &mut rng);
    let front = (0..front_n)
        .map(|i| DprnnBlockParams::build(&mut store, &format!("front.{i}"), &config.backbone, &mut rng))
        .collect();
    let back = (0..back_n)
        .map(|i| DprnnBlockParams::build(&mut store, &format!("back.{i}"), &config.backbone, &mut rng))
        .collect();

    let head = (config.design != Design::SisoIterative).then(|| Linear::build(&mut store, "head", d, c * n, true, &mut rng));
    let bottleneck_out =
        (config.design == Design::SisoIterative).then(|| Linear::build(&mut store, "bottleneck_out", d, n, true, &mut rng));
    let siso = config.design != Design::SimoOnly;
    let fuse = siso.then(|| Linear::build(&mut store, "fuse", config.fusion().len() * n, d, false, &mut rng));
    let fuse_norm = siso.then(|| Norm::build(&mut store, "fuse_norm", d));
    let out_proj = siso.then(|| Linear::build(&mut store, "out_proj", d, n, true, &mut rng));

    let params = ModelParams { encoder, decoder, in_norm, bottleneck_in, front, back, head, bottleneck_out, fuse, fuse_norm, out_proj };
    Ok(SeparationModel { config: config.clone(), store, params })
}

pub fn count_parameters(model: &SeparationModel) -> usize {
    model.store.count_scalars()
}

/// Substitutions for parts of the forward pass, used to probe the assemblies.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// SIMO-only: replace the `C` masks (each `[L × N]`).
    pub masks: Option<Vec<Matrix>>,
    /// Mixed: replace the `C` intermediate features `F_i` (each `[L × N]`).
    pub intermediates: Option<Vec<Matrix>>,
    /// Iterative: use these waveforms as the estimates that form the residual.
    pub estimates: Option<Vec<Vec<f64>>>,
}

/// Nodes of one forward pass. `outputs` are `[1 × t]` waveforms.
#[derive(Debug, Clone)]
pub struct Graph {
    pub outputs: Vec<Var>,
    pub mixture_encoding: Var,
    /// SIMO-only masks, or mixed-design mask-variant masks.
    pub masks: Vec<Var>,
    /// `F_i` (mixed) or the single `H` (iterative).
    pub intermediates: Vec<Var>,
    /// Per-iteration bias features (iterative only).
    pub biases: Vec<Var>,
}

/// Plain-value view of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub outputs: Vec<Vec<f64>>,
    pub mixture_encoding: Matrix,
    pub masks: Vec<Matrix>,
    pub intermediates: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl SeparationModel {
    pub fn design(&self) -> Design {
        self.config.design
    }

    pub fn is_iterative(&self) -> bool {
        self.config.design == Design::SisoIterative
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count_scalars()
    }

    /// Builds the forward pass on `tape` for a `[1 × t]` waveform node.
    pub fn graph(&self, tape: &mut Tape, y: Var, sources: usize, ov: &Overrides) -> Result<Graph> {
        self.graph_with(tape, &self.store, y, sources, ov)
    }

    /// As [`graph`](Self::graph) but reading parameters from `store`, which must
    /// share this model's layout.
    pub fn graph_with(&self, tape: &mut Tape, store: &ParamStore, y: Var, sources: usize, ov: &Overrides) -> Result<Graph> {
        if sources == 0 {
            bail!(InvalidInput, "source count must be at least 1");
        }
        let t = tape.value(y).cols();
        if tape.value(y).rows() != 1 {
            bail!(InvalidInput, "input must be a single waveform row");
        }
        if tape.value(y).as_slice().iter().any(|v| !v.is_finite()) {
            bail!(InvalidInput, "input waveform contains non-finite samples");
        }
        let cfg = &self.config;
        let p = &self.params;
        let framing = Framing::new(t, cfg.codec.window, cfg.codec.hop)?;
        let enc_filters = tape.param(store, p.encoder);
        let dec_basis = tape.param(store, p.decoder);
        let enc_y = codec::encode_var(tape, &framing, y, enc_filters, cfg.codec.encoder_relu);
        let frames = framing.frames;
        let n = cfg.codec.filters;

        let normed = p.in_norm.apply(tape, store, enc_y);
        let bottleneck = p.bottleneck_in.apply(tape, store, normed);
        let front = stack_var(tape, store, bottleneck, &p.front, cfg.backbone.chunk_len)?;

        let mut graph = Graph { outputs: Vec::new(), mixture_encoding: enc_y, masks: Vec::new(), intermediates: Vec::new(), biases: Vec::new() };
        let check = |m: &[Matrix], what: &str| -> Result<()> {
            if m.len() != sources || m.iter().any(|x| x.shape() != (frames, n)) {
                bail!(InvalidInput, "{what} override must hold {sources} matrices of shape [{frames} x {n}]");
            }
            Ok(())
        };

        match cfg.design {
            Design::SimoOnly => {
                if sources != cfg.sources {
                    bail!(InvalidInput, "model was built for {} sources, asked for {sources}", cfg.sources);
                }
                let masks = match &ov.masks {
                    Some(m) => {
                        check(m, "mask")?;
                        m.iter().map(|x| tape.leaf(x.clone())).collect()
                    }
                    None => {
                        let heads = p.head.as_ref().expect("head").apply(tape, store, front);
                        let rect = tape.relu(heads);
                        (0..sources).map(|i| tape.slice_cols(rect, i * n, n)).collect::<Vec<_>>()
                    }
                };
                for &m in &masks {
                    let masked = tape.mul(m, enc_y);
                    graph.outputs.push(codec::decode_var(tape, &framing, masked, dec_basis));
                }
                graph.masks = masks;
            }
            Design::Mixed => {
                if sources != cfg.sources {
                    bail!(InvalidInput, "model was built for {} sources, asked for {sources}", cfg.sources);
                }
                let feats: Vec<Var> = match &ov.intermediates {
                    Some(f) => {
                        check(f, "intermediate")?;
                        f.iter().map(|x| tape.leaf(x.clone())).collect()
                    }
                    None => {
                        let heads = p.head.as_ref().expect("head").apply(tape, store, front);
                        let heads = if cfg.mask_variant { tape.relu(heads) } else { heads };
                        (0..sources)
                            .map(|i| {
                                let h = tape.slice_cols(heads, i * n, n);
                                if cfg.mask_variant {
                                    graph.masks.push(h);
                                    tape.mul(h, enc_y)
                                } else {
                                    h
                                }
                            })
                            .collect()
                    }
                };
                for &f in &feats {
                    let latent = self.siso_pass(tape, store, f, enc_y, None)?;
                    let latent = if cfg.mask_variant { tape.add(latent, f) } else { latent };
                    graph.outputs.push(codec::decode_var(tape, &framing, latent, dec_basis));
                }
                graph.intermediates = feats;
            }
            Design::SisoIterative => {
                let h = p.bottleneck_out.as_ref().expect("bottleneck_out").apply(tape, store, front);
                graph.intermediates.push(h);
                let given: Option<Vec<Var>> = match &ov.estimates {
                    Some(e) => {
                        if e.len() + 1 < sources || e.iter().any(|x| x.len() != t) {
                            bail!(InvalidInput, "estimate override needs {} waveforms of {t} samples", sources - 1);
                        }
                        Some(e.iter().map(|x| tape.leaf(Matrix::row_vector(x.clone()))).collect())
                    }
                    None => None,
                };
                let mut residual = y;
                for j in 0..sources {
                    let bias = if j == 0 {
                        tape.leaf(Matrix::zeros(frames, n))
                    } else {
                        let prev = match &given {
                            Some(g) => g[j - 1],
                            None => graph.outputs[j - 1],
                        };
                        residual = tape.sub(residual, prev);
                        codec::encode_var(tape, &framing, residual, enc_filters, cfg.codec.encoder_relu)
                    };
                    graph.biases.push(bias);
                    let latent = self.siso_pass(tape, store, h, enc_y, Some(bias))?;
                    graph.outputs.push(codec::decode_var(tape, &framing, latent, dec_basis));
                }
            }
        }
        Ok(graph)
    }

    /// `fuse` → norm → SISO stack → output projection, producing an `[L × N]` latent.
    fn siso_pass(&self, tape: &mut Tape, store: &ParamStore, inter: Var, mix: Var, bias: Option<Var>) -> Result<Var> {
        let p = &self.params;
        let mut parts = Vec::new();
        for input in self.config.fusion() {
            match input {
                FusionInput::Intermediate => parts.push(inter),
                FusionInput::MixtureEncoding => parts.push(mix),
                FusionInput::BiasEncoding => parts.push(bias.expect("bias feature")),
            }
        }
        let fused = fuse_var(tape, store, &parts, p.fuse.as_ref().expect("fuse").weight)?;
        let normed = p.fuse_norm.as_ref().expect("fuse_norm").apply(tape, store, fused);
        let deep = stack_var(tape, store, normed, &p.back, self.config.backbone.chunk_len)?;
        Ok(p.out_proj.as_ref().expect("out_proj").apply(tape, store, deep))
    }

    pub fn trace(&self, y: &[f64], sources: usize, ov: &Overrides) -> Result<Trace> {
        let mut tape = Tape::new();
        let yv = tape.leaf(Matrix::row_vector(y.to_vec()));
        let g = self.graph(&mut tape, yv, sources, ov)?;
        let vals = |vs: &[Var]| vs.iter().map(|v| tape.value(*v).clone()).collect::<Vec<_>>();
        Ok(Trace {
            outputs: g.outputs.iter().map(|v| tape.value(*v).as_slice().to_vec()).collect(),
            mixture_encoding: tape.value(g.mixture_encoding).clone(),
            masks: vals(&g.masks),
            intermediates: vals(&g.intermediates),
            biases: vals(&g.biases),
        })
    }

    /// Separates `y` into the configured number of sources.
    pub fn separate(&self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.trace(y, self.config.sources, &Overrides::default())?.outputs)
    }

    fn expect(&self, design: Design) -> Result<()> {
        if self.config.design != design {
            bail!(InvalidInput, "model is {}, not {}", self.config.design.name(), design.name());
        }
        Ok(())
    }

    pub fn forward_simo_only(&self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.expect(Design::SimoOnly)?;
        self.separate(y)
    }

    pub fn forward_mixed(&self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.expect(Design::Mixed)?;
        self.separate(y)
    }

    pub fn forward_siso_iterative(&self, y: &[f64], sources: usize) -> Result<Vec<Vec<f64>>> {
        self.expect(Design::SisoIterative)?;
        Ok(self.trace(y, sources, &Overrides::default())?.outputs)
    }
}

/// Channel concatenation of `[L × N]` features followed by a bias-free
/// projection `weight: [k·N × D]`.
pub fn fuse_var(tape: &mut Tape, store: &ParamStore, parts: &[Var], weight: ParamId) -> Result<Var> {
    let Some(first) = parts.first() else {
        bail!(Invariant, "fuse: no inputs");
    };
    let shape = tape.value(*first).shape();
    if parts.iter().any(|p| tape.value(*p).shape() != shape) {
        bail!(Invariant, "fuse: inputs differ in shape");
    }
    if store.get(weight).rows() != shape.1 * parts.len() {
        bail!(Invariant, "fuse: projection expects {} channels, got {}", store.get(weight).rows(), shape.1 * parts.len());
    }
    let cat = if parts.len() == 1 { *first } else { tape.concat_cols(parts) };
    let w = tape.param(store, weight);
    Ok(tape.matmul(cat, w))
}

/// Plain-value fuse of `[L × N]` features with projection `weight`.
pub fn fuse(features: &[Matrix], weight: &Matrix) -> Result<Matrix> {
    let mut store = ParamStore::new();
    let id = store.add("w", weight.clone());
    let mut tape = Tape::new();
    let parts: Vec<Var> = features.iter().map(|f| tape.leaf(f.clone())).collect();
    let out = fuse_var(&mut tape, &store, &parts, id)?;
    Ok(tape.value(out).clone())
}

/// The seven mixed/SIMO-only splits `(K, M−K)` for `K = M..0`.
pub fn table1_configs(base: &ModelConfig) -> Vec<ModelConfig> {
    let m = base.blocks();
    (0..=m)
        .rev()
        .map(|k| {
            let design = if k == m { Design::SimoOnly } else { Design::Mixed };
            ModelConfig { design, k, fusion_inputs: None, mask_variant: false, ..base.clone() }
        })
        .collect()
}

/// The iterative splits `K = 1..M−1`.
pub fn table2_configs(base: &ModelConfig) -> Vec<ModelConfig> {
    (1..base.blocks())
        .map(|k| ModelConfig { design: Design::SisoIterative, k, fusion_inputs: None, mask_variant: false, ..base.clone() })
        .collect()
}

/// Largest pairwise relative difference `|a−b| / max(a, b)`.
pub fn max_relative_spread(counts: &[usize]) -> f64 {
    let (Some(lo), Some(hi)) = (counts.iter().min(), counts.iter().max()) else {
        return 0.0;
    };
    if *hi == 0 {
        0.0
    } else {
        (hi - lo) as f64 / *hi as f64
    }
}
