//! The mini U-Net noise predictor.
//!
//! Three encoder levels (residual blocks then rotary self-attention), each
//! followed by a stride-2 convolution; a bottleneck of residual + attention +
//! residual; and a mirrored decoder where every level upsamples by nearest
//! neighbor, aligns channels with a 1×1 convolution and *adds* the matching
//! encoder features. The timestep enters through a sinusoidal embedding and a
//! two-layer projection added per channel inside every residual block.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::attention::{Rope2d, DEFAULT_ROPE_BASE};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NetError;
use crate::diffusion::RealImage;

pub const LEVELS: usize = 3;
/// Spatial dimensions must be multiples of this (three halvings).
pub const SPATIAL_MULTIPLE: usize = 1 << LEVELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPlacement {
    /// Attention at every level, including full resolution.
    #[default]
    All,
    /// Only the two coarsest encoder/decoder levels (plus the bottleneck).
    Coarse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub channel_multipliers: [usize; LEVELS],
    pub blocks_per_level: usize,
    pub attention_heads: usize,
    pub time_embed_dim: usize,
    pub norm_groups: usize,
    pub attention: AttentionPlacement,
    pub rope_base: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            levels: LEVELS,
            base_channels: 16,
            channel_multipliers: [1, 2, 2],
            blocks_per_level: 1,
            attention_heads: 1,
            time_embed_dim: 32,
            norm_groups: 4,
            attention: AttentionPlacement::All,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }
}

impl DenoiserConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            base_channels: 8,
            channel_multipliers: [1, 1, 1],
            blocks_per_level: 1,
            attention_heads: 1,
            time_embed_dim: 8,
            norm_groups: 2,
            ..Self::default()
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    fn has_attention(&self, level: usize) -> bool {
        match self.attention {
            AttentionPlacement::All => true,
            AttentionPlacement::Coarse => level >= LEVELS - 2,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.levels != LEVELS {
            return bad(format!("levels must be {LEVELS}, got {}", self.levels));
        }
        if self.base_channels == 0 || self.channel_multipliers.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.blocks_per_level == 0 || self.attention_heads == 0 || self.norm_groups == 0 {
            return bad("blocks_per_level, attention_heads and norm_groups must be positive".into());
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad(format!("time_embed_dim must be even and at least 2, got {}", self.time_embed_dim));
        }
        if !(self.rope_base > 1.0 && self.rope_base.is_finite()) {
            return bad(format!("rope_base must exceed 1, got {}", self.rope_base));
        }
        for level in 0..LEVELS {
            let c = self.channels(level);
            if c % self.norm_groups != 0 {
                return bad(format!("level {level}: {c} channels not divisible into {} groups", self.norm_groups));
            }
            if c % self.attention_heads != 0 || (c / self.attention_heads) % 4 != 0 {
                return bad(format!(
                    "level {level}: {c} channels over {} heads gives a head dimension not divisible by 4",
                    self.attention_heads
                ));
            }
        }
        Ok(())
    }

    /// Stable hash of the serialized configuration.
    pub fn config_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    /// N(0, 1/fan_in)
    FanIn(usize),
}

#[derive(Debug, Clone, Copy)]
struct ConvP {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormP {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct LinearP {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct ResBlockP {
    norm1: NormP,
    conv1: ConvP,
    time: LinearP,
    norm2: NormP,
    conv2: ConvP,
}

#[derive(Debug, Clone, Copy)]
struct AttnP {
    norm: NormP,
    qkv: ConvP,
    out: ConvP,
}

#[derive(Debug, Clone)]
struct LevelP {
    res: Vec<ResBlockP>,
    attn: Option<AttnP>,
}

#[derive(Debug, Clone)]
struct Layout {
    time_fc1: LinearP,
    time_fc2: LinearP,
    stem: ConvP,
    enc: Vec<LevelP>,
    down: Vec<ConvP>,
    mid_res1: ResBlockP,
    mid_attn: AttnP,
    mid_res2: ResBlockP,
    /// Decoder levels indexed like the encoder (0 = full resolution).
    align: Vec<ConvP>,
    dec: Vec<LevelP>,
    out_norm: NormP,
    out_conv: ConvP,
}

struct Registry {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Registry {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) -> ConvP {
        let init = if zero { Init::Zeros } else { Init::FanIn(cin * k * k) };
        ConvP {
            w: self.add(format!("{name}.weight"), vec![cout, cin, k, k], init),
            b: self.add(format!("{name}.bias"), vec![cout], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormP {
        NormP {
            gamma: self.add(format!("{name}.gamma"), vec![c], Init::Ones),
            beta: self.add(format!("{name}.beta"), vec![c], Init::Zeros),
        }
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> LinearP {
        LinearP {
            w: self.add(format!("{name}.weight"), vec![o, i], Init::FanIn(i)),
            b: self.add(format!("{name}.bias"), vec![o], Init::Zeros),
        }
    }

    fn res_block(&mut self, name: &str, c: usize, temb: usize) -> ResBlockP {
        ResBlockP {
            norm1: self.norm(&format!("{name}.norm1"), c),
            conv1: self.conv(&format!("{name}.conv1"), c, c, 3, false),
            time: self.linear(&format!("{name}.time"), temb, c),
            norm2: self.norm(&format!("{name}.norm2"), c),
            conv2: self.conv(&format!("{name}.conv2"), c, c, 3, false),
        }
    }

    fn attn(&mut self, name: &str, c: usize) -> AttnP {
        AttnP {
            norm: self.norm(&format!("{name}.norm"), c),
            qkv: self.conv(&format!("{name}.qkv"), c, 3 * c, 1, false),
            out: self.conv(&format!("{name}.out"), c, c, 1, false),
        }
    }

    fn level(&mut self, name: &str, cfg: &DenoiserConfig, level: usize) -> LevelP {
        let c = cfg.channels(level);
        LevelP {
            res: (0..cfg.blocks_per_level)
                .map(|i| self.res_block(&format!("{name}.res.{i}"), c, cfg.time_embed_dim))
                .collect(),
            attn: cfg.has_attention(level).then(|| self.attn(&format!("{name}.attn"), c)),
        }
    }
}

fn build_layout(cfg: &DenoiserConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let mut r = Registry { specs: Vec::new() };
    let e = cfg.time_embed_dim;
    let time_fc1 = r.linear("time.fc1", e, e);
    let time_fc2 = r.linear("time.fc2", e, e);
    let stem = r.conv("stem", 1, cfg.channels(0), 3, false);
    let mut enc = Vec::new();
    let mut down = Vec::new();
    for l in 0..LEVELS {
        enc.push(r.level(&format!("enc.{l}"), cfg, l));
        let next = cfg.channels((l + 1).min(LEVELS - 1));
        down.push(r.conv(&format!("down.{l}"), cfg.channels(l), next, 3, false));
    }
    let cm = cfg.channels(LEVELS - 1);
    let mid_res1 = r.res_block("mid.res.0", cm, e);
    let mid_attn = r.attn("mid.attn", cm);
    let mid_res2 = r.res_block("mid.res.1", cm, e);
    let mut align = Vec::new();
    let mut dec = Vec::new();
    for l in 0..LEVELS {
        let below = cfg.channels((l + 1).min(LEVELS - 1));
        align.push(r.conv(&format!("dec.{l}.align"), below, cfg.channels(l), 1, false));
        dec.push(r.level(&format!("dec.{l}"), cfg, l));
    }
    let out_norm = r.norm("out.norm", cfg.channels(0));
    let out_conv = r.conv("out.conv", cfg.channels(0), 1, 3, true);
    let layout = Layout { time_fc1, time_fc2, stem, enc, down, mid_res1, mid_attn, mid_res2, align, dec, out_norm, out_conv };
    (layout, r.specs)
}

/// Learnable arrays keyed by hierarchical name.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl DenoiserParams {
    /// Collects named arrays; duplicate names are rejected.
    pub fn from_named(entries: Vec<(String, Tensor)>) -> Result<Self, NetError> {
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        let mut index = BTreeMap::new();
        for (name, tensor) in entries {
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(NetError::Config(format!("duplicate parameter {name}")));
            }
            names.push(name);
            tensors.push(tensor);
        }
        Ok(Self { names, tensors, index })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    /// `(name, tensor)` in name-sorted order.
    pub fn sorted(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.index.iter().map(|(n, &i)| (n.as_str(), &self.tensors[i]))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Sinusoidal embedding: `dim/2` sines then `dim/2` cosines of `t·10000^(-i/(dim/2))`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    out
}

/// Handles to intermediate feature maps of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub output: Var,
    /// Encoder feature maps feeding the skip connections, by level.
    pub skips: Vec<Var>,
    /// Decoder level outputs, by level.
    pub decoder: Vec<Var>,
}

/// The noise predictor: configuration, parameter layout and values.
#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    layout: Layout,
    params: DenoiserParams,
    timesteps: usize,
}

/// Builds parameters for `config`; deterministic in `seed`. The final output
/// convolution starts at zero so the untrained network predicts zero noise.
pub fn init_params(config: &DenoiserConfig, seed: u64) -> Result<DenoiserParams, NetError> {
    config.validate()?;
    let (_, specs) = build_layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(specs.len());
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, shape, init) in specs {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn(fan_in) => {
                let std = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data));
    }
    let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    Ok(DenoiserParams { names, tensors, index })
}

impl Denoiser {
    /// Fresh network for a diffusion process with `timesteps` steps.
    pub fn new(config: DenoiserConfig, timesteps: usize, seed: u64) -> Result<Self, NetError> {
        let params = init_params(&config, seed)?;
        Self::from_params(config, timesteps, params)
    }

    /// Wraps existing parameters; names and shapes must match the layout of `config`.
    pub fn from_params(config: DenoiserConfig, timesteps: usize, params: DenoiserParams) -> Result<Self, NetError> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != params.len() {
            return Err(NetError::Config(format!("expected {} parameters, got {}", specs.len(), params.len())));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, _) in specs {
            let t = params.get(&name).ok_or_else(|| NetError::Config(format!("missing parameter {name}")))?;
            if t.shape != shape {
                return Err(NetError::Config(format!("parameter {name}: shape {:?}, expected {shape:?}", t.shape)));
            }
            tensors.push(t.clone());
            names.push(name);
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self { config, layout, params: DenoiserParams { names, tensors, index }, timesteps })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DenoiserParams {
        &mut self.params
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn check_input(&self, x: &RealImage, t: usize) -> Result<(), NetError> {
        let (h, w) = x.dims();
        if h == 0 || w == 0 || h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
            return Err(NetError::Shape(format!("input {h}x{w}: both sides must be multiples of {SPATIAL_MULTIPLE}")));
        }
        if t > self.timesteps {
            return Err(NetError::Step { t, max: self.timesteps });
        }
        Ok(())
    }

    /// Records the forward graph of ε_θ(x_t, t) on `tape`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: &RealImage, t: usize) -> Result<ForwardTrace, NetError> {
        self.check_input(x, t)?;
        let cfg = &self.config;
        let l = &self.layout;
        let groups = cfg.norm_groups;
        let heads = cfg.attention_heads;
        let rope = Rope2d { base: cfg.rope_base };

        let p = |tape: &mut Tape<'_>, i: usize| tape.param(i);
        let conv = |tape: &mut Tape<'_>, x: Var, c: ConvP, stride: usize| {
            let (w, b) = (p(tape, c.w), p(tape, c.b));
            let k = tape.value(w).shape[2];
            tape.conv(x, w, b, stride, k / 2)
        };
        let norm = |tape: &mut Tape<'_>, x: Var, n: NormP| {
            let (g, b) = (p(tape, n.gamma), p(tape, n.beta));
            tape.group_norm(x, g, b, groups)
        };
        let linear = |tape: &mut Tape<'_>, x: Var, lp: LinearP| {
            let (w, b) = (p(tape, lp.w), p(tape, lp.b));
            tape.linear(x, w, b)
        };
        let res_block = |tape: &mut Tape<'_>, x: Var, temb: Var, rb: &ResBlockP| {
            let h = norm(tape, x, rb.norm1);
            let h = tape.silu(h);
            let h = conv(tape, h, rb.conv1, 1);
            let te = linear(tape, temb, rb.time);
            let h = tape.add_channel(h, te);
            let h = norm(tape, h, rb.norm2);
            let h = tape.silu(h);
            let h = conv(tape, h, rb.conv2, 1);
            tape.add(x, h)
        };
        let attn_block = |tape: &mut Tape<'_>, x: Var, ap: &AttnP| {
            let h = norm(tape, x, ap.norm);
            let qkv = conv(tape, h, ap.qkv, 1);
            let a = tape.attention(qkv, heads, rope);
            let o = conv(tape, a, ap.out, 1);
            tape.add(x, o)
        };
        let level = |tape: &mut Tape<'_>, mut x: Var, temb: Var, lp: &LevelP| {
            for rb in &lp.res {
                x = res_block(tape, x, temb, rb);
            }
            if let Some(ap) = &lp.attn {
                x = attn_block(tape, x, ap);
            }
            x
        };

        let emb = tape.input(Tensor::from_vec(&[cfg.time_embed_dim], timestep_embedding(t, cfg.time_embed_dim)));
        let temb = linear(tape, emb, l.time_fc1);
        let temb = tape.silu(temb);
        let temb = linear(tape, temb, l.time_fc2);
        let temb = tape.silu(temb);

        let (h, w) = x.dims();
        let input = tape.input(Tensor::from_vec(&[1, h, w], x.values().to_vec()));
        let mut cur = conv(tape, input, l.stem, 1);
        let mut skips = Vec::with_capacity(LEVELS);
        for lv in 0..LEVELS {
            cur = level(tape, cur, temb, &l.enc[lv]);
            skips.push(cur);
            cur = conv(tape, cur, l.down[lv], 2);
        }
        cur = res_block(tape, cur, temb, &l.mid_res1);
        cur = attn_block(tape, cur, &l.mid_attn);
        cur = res_block(tape, cur, temb, &l.mid_res2);
        let mut decoder = vec![cur; LEVELS];
        for lv in (0..LEVELS).rev() {
            let up = tape.upsample2x(cur);
            let aligned = conv(tape, up, l.align[lv], 1);
            cur = tape.add(aligned, skips[lv]);
            cur = level(tape, cur, temb, &l.dec[lv]);
            decoder[lv] = cur;
        }
        let o = norm(tape, cur, l.out_norm);
        let o = tape.silu(o);
        let output = conv(tape, o, l.out_conv, 1);
        Ok(ForwardTrace { output, skips, decoder })
    }

    /// ε_θ(x_t, t) for an input whose sides are multiples of 8.
    pub fn predict_noise(&self, x: &RealImage, t: usize) -> Result<RealImage, NetError> {
        let mut tape = Tape::new(self.params.tensors());
        let trace = self.forward(&mut tape, x, t)?;
        let out = tape.value(trace.output).data.clone();
        Ok(RealImage::from_values(x.height(), x.width(), out).expect("output keeps input shape"))
    }

    /// Names of decoder-side parameters other than the skip pathway: channel
    /// alignment convolutions and the residual/attention branch outputs.
    pub fn decoder_branch_params(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| {
                n.starts_with("dec.")
                    && (n.contains(".align.") || n.contains(".conv2.") || n.contains(".attn.out."))
            })
            .map(str::to_string)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_and_tiny_configs_validate() {
        DenoiserConfig::default().validate().unwrap();
        DenoiserConfig::tiny().validate().unwrap();
    }

    #[test]
    fn config_errors() {
        let c = DenoiserConfig { levels: 4, ..DenoiserConfig::default() };
        assert!(matches!(c.validate(), Err(NetError::Config(_))));
        let c = DenoiserConfig { base_channels: 12, attention_heads: 2, ..DenoiserConfig::default() };
        assert!(c.validate().is_err(), "head dim 6 is not divisible by 4");
        let c = DenoiserConfig { norm_groups: 3, ..DenoiserConfig::default() };
        assert!(c.validate().is_err());
        let c = DenoiserConfig { time_embed_dim: 7, ..DenoiserConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_with_stable_names() {
        let cfg = DenoiserConfig::tiny();
        let a = init_params(&cfg, 1).unwrap();
        let b = init_params(&cfg, 1).unwrap();
        let c = init_params(&cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tensors(), c.tensors());
        assert_eq!(a.names().collect::<Vec<_>>(), c.names().collect::<Vec<_>>());
        assert_eq!(a.get("enc.0.res.0.norm1.gamma").unwrap().data, vec![1.0; 8]);
        assert!(a.get("out.conv.weight").unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn untrained_output_is_zero() {
        let net = Denoiser::new(DenoiserConfig::tiny(), 1000, 3).unwrap();
        let x = RealImage::filled(8, 16, 0.7);
        let out = net.predict_noise(&x, 500).unwrap();
        assert_eq!(out.dims(), (8, 16));
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_step_errors() {
        let net = Denoiser::new(DenoiserConfig::tiny(), 1000, 3).unwrap();
        assert!(matches!(net.predict_noise(&RealImage::zeros(10, 10), 1), Err(NetError::Shape(_))));
        assert!(matches!(net.predict_noise(&RealImage::zeros(8, 8), 1001), Err(NetError::Step { .. })));
        assert!(net.predict_noise(&RealImage::zeros(8, 8), 0).is_ok());
    }

    #[test]
    fn internal_resolutions_halve_three_times() {
        let net = Denoiser::new(DenoiserConfig::tiny(), 10, 3).unwrap();
        let mut tape = Tape::new(net.params().tensors());
        let trace = net.forward(&mut tape, &RealImage::zeros(8, 8), 1).unwrap();
        let sizes: Vec<_> = trace.skips.iter().map(|&v| tape.value(v).chw().1).collect();
        assert_eq!(sizes, vec![8, 4, 2]);
        let dec: Vec<_> = trace.decoder.iter().map(|&v| tape.value(v).chw().1).collect();
        assert_eq!(dec, vec![8, 4, 2]);
        assert_eq!(tape.value(trace.output).shape, vec![1, 8, 8]);
    }

    #[test]
    fn coarse_attention_drops_full_resolution_attention() {
        let cfg = DenoiserConfig { attention: AttentionPlacement::Coarse, ..DenoiserConfig::tiny() };
        let p = init_params(&cfg, 0).unwrap();
        assert!(p.get("enc.0.attn.qkv.weight").is_none());
        assert!(p.get("enc.1.attn.qkv.weight").is_some());
        let net = Denoiser::from_params(cfg, 10, p).unwrap();
        assert_eq!(net.predict_noise(&RealImage::zeros(16, 8), 3).unwrap().dims(), (16, 8));
    }

    #[test]
    fn from_params_rejects_foreign_layout() {
        let p = init_params(&DenoiserConfig::tiny(), 0).unwrap();
        assert!(Denoiser::from_params(DenoiserConfig::default(), 10, p).is_err());
    }

    #[test]
    fn timestep_embedding_layout() {
        let e = timestep_embedding(0, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = timestep_embedding(3, 4);
        assert!((e[0] - 3f64.sin()).abs() < 1e-15 && (e[2] - 3f64.cos()).abs() < 1e-15);
    }
}
