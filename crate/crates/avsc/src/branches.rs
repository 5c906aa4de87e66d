//! Audio and visual classification branches.
//!
//! The audio branch is a small patch transformer over the feature grid; the
//! visual branch is a small depthwise-convolution stage stack over the image
//! sequence. Both end in a linear+ReLU embedding layer followed by a linear
//! classifier head whose weight rows double as the per-class representations
//! used by the contrastive alignment.

use crate::error::{Error, Result};
use crate::numcore::{Tape, TensorId};
use crate::params::{BoundParams, ParamSet};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Full-scale structure used in the original system, kept for reference.
pub const PAPER_AUDIO_LAYERS: usize = 12;
pub const PAPER_AUDIO_HEADS: usize = 12;
pub const PAPER_AUDIO_D_MODEL: usize = 768;
pub const PAPER_VISUAL_STAGE_BLOCKS: [usize; 4] = [3, 3, 27, 3];
pub const PAPER_VISUAL_STAGE_CHANNELS: [usize; 4] = [128, 256, 512, 1024];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AudioBranchConfig {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub c_e: usize,
}

impl Default for AudioBranchConfig {
    fn default() -> Self {
        AudioBranchConfig {
            patch_rows: 8,
            patch_cols: 8,
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            c_e: 12,
        }
    }
}

impl AudioBranchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.c_e < 2 {
            return Err(Error::Config("c_e must be at least 2".into()));
        }
        if self.patch_rows == 0 || self.patch_cols == 0 || self.n_layers == 0 {
            return Err(Error::Config("audio branch dims must be positive".into()));
        }
        Ok(())
    }

    fn ff_dim(&self) -> usize {
        2 * self.d_model
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VisualBranchConfig {
    pub stage_blocks: Vec<usize>,
    pub stage_channels: Vec<usize>,
    pub c_o: usize,
    pub activation: Activation,
}

impl Default for VisualBranchConfig {
    fn default() -> Self {
        VisualBranchConfig {
            stage_blocks: vec![1, 1, 2, 1],
            stage_channels: vec![4, 8, 16, 32],
            c_o: 16,
            activation: Activation::Relu,
        }
    }
}

impl VisualBranchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_blocks.len() != self.stage_channels.len() || self.stage_blocks.is_empty() {
            return Err(Error::Config(
                "stage_blocks and stage_channels must be equal-length and non-empty".into(),
            ));
        }
        if self.stage_channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("stage channels must be non-decreasing".into()));
        }
        if self.c_o < 2 {
            return Err(Error::Config("c_o must be at least 2".into()));
        }
        Ok(())
    }
}

/// Per-class logits and probabilities of one branch, plus the classifier head
/// whose rows carry the class representations.
pub struct BranchOutput {
    /// `[C×1]` pre-sigmoid logits.
    pub logits: TensorId,
    /// `[C×1]` sigmoid probabilities.
    pub probs: TensorId,
    /// `[C×D]` head weight on the tape.
    pub head_w: TensorId,
}

const DW_KERNEL: usize = 7;

pub fn init_audio_params(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    cfg: &AudioBranchConfig,
    embed_dim: usize,
) {
    let pp = cfg.patch_rows * cfg.patch_cols;
    let d = cfg.d_model;
    let dh = d / cfg.n_heads;
    ps.init_uniform(rng, "audio.patch.w", &[pp, d], pp);
    ps.init_uniform(rng, "audio.patch.b", &[1, d], pp);
    for l in 0..cfg.n_layers {
        for h in 0..cfg.n_heads {
            ps.init_uniform(rng, format!("audio.l{l}.h{h}.wq"), &[d, dh], d);
            ps.init_uniform(rng, format!("audio.l{l}.h{h}.wk"), &[d, dh], d);
            ps.init_uniform(rng, format!("audio.l{l}.h{h}.wv"), &[d, dh], d);
        }
        ps.init_uniform(rng, format!("audio.l{l}.wo"), &[d, d], d);
        ps.init_uniform(rng, format!("audio.l{l}.bo"), &[1, d], d);
        ps.init_uniform(rng, format!("audio.l{l}.ff1.w"), &[d, cfg.ff_dim()], d);
        ps.init_uniform(rng, format!("audio.l{l}.ff1.b"), &[1, cfg.ff_dim()], d);
        ps.init_uniform(rng, format!("audio.l{l}.ff2.w"), &[cfg.ff_dim(), d], cfg.ff_dim());
        ps.init_uniform(rng, format!("audio.l{l}.ff2.b"), &[1, d], cfg.ff_dim());
    }
    ps.init_uniform(rng, "audio.embed.w", &[d, embed_dim], d);
    ps.init_uniform(rng, "audio.embed.b", &[1, embed_dim], d);
    ps.init_uniform(rng, "audio.head.w", &[cfg.c_e, embed_dim], embed_dim);
    ps.init_uniform(rng, "audio.head.b", &[cfg.c_e, 1], embed_dim);
}

pub fn init_visual_params(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    cfg: &VisualBranchConfig,
    image_ch: usize,
    embed_dim: usize,
) {
    let c0 = cfg.stage_channels[0];
    ps.init_uniform(rng, "visual.stem.w", &[c0, image_ch], image_ch);
    ps.init_uniform(rng, "visual.stem.b", &[c0, 1], image_ch);
    for (s, (&blocks, &c)) in cfg
        .stage_blocks
        .iter()
        .zip(&cfg.stage_channels)
        .enumerate()
    {
        for b in 0..blocks {
            let fan = DW_KERNEL * DW_KERNEL;
            ps.init_uniform(rng, format!("visual.s{s}.b{b}.dw"), &[c, DW_KERNEL, DW_KERNEL], fan);
            ps.init_uniform(rng, format!("visual.s{s}.b{b}.pw1.w"), &[4 * c, c], c);
            ps.init_uniform(rng, format!("visual.s{s}.b{b}.pw1.b"), &[4 * c, 1], c);
            ps.init_uniform(rng, format!("visual.s{s}.b{b}.pw2.w"), &[c, 4 * c], 4 * c);
            ps.init_uniform(rng, format!("visual.s{s}.b{b}.pw2.b"), &[c, 1], 4 * c);
        }
        if s + 1 < cfg.stage_channels.len() {
            let c_next = cfg.stage_channels[s + 1];
            ps.init_uniform(rng, format!("visual.down{s}.w"), &[c_next, c], c);
            ps.init_uniform(rng, format!("visual.down{s}.b"), &[c_next, 1], c);
        }
    }
    let c_last = *cfg.stage_channels.last().unwrap();
    ps.init_uniform(rng, "visual.embed.w", &[c_last, embed_dim], c_last);
    ps.init_uniform(rng, "visual.embed.b", &[1, embed_dim], c_last);
    ps.init_uniform(rng, "visual.head.w", &[cfg.c_o, embed_dim], embed_dim);
    ps.init_uniform(rng, "visual.head.b", &[cfg.c_o, 1], embed_dim);
}

/// Splits a `[t×f]` grid into flattened non-overlapping patches, row-major
/// over the patch grid.
fn patchify(features: &[f64], t: usize, f: usize, cfg: &AudioBranchConfig) -> Result<Vec<f64>> {
    if t % cfg.patch_rows != 0 || f % cfg.patch_cols != 0 {
        return Err(Error::shape(
            "audio grid not divisible by patch size",
            &[t, f],
            &[cfg.patch_rows, cfg.patch_cols],
        ));
    }
    let (pr, pc) = (cfg.patch_rows, cfg.patch_cols);
    let (gt, gf) = (t / pr, f / pc);
    let mut out = Vec::with_capacity(t * f);
    for pi in 0..gt {
        for pj in 0..gf {
            for r in 0..pr {
                for c in 0..pc {
                    out.push(features[(pi * pr + r) * f + pj * pc + c]);
                }
            }
        }
    }
    Ok(out)
}

fn linear_row(
    tape: &mut Tape,
    bound: &BoundParams,
    x: TensorId,
    w: &str,
    b: &str,
) -> Result<TensorId> {
    let wm = bound.id(w)?;
    let bm = bound.id(b)?;
    let y = tape.matmul(x, wm)?;
    tape.add_row(y, bm)
}

fn classifier_head(
    tape: &mut Tape,
    bound: &BoundParams,
    embedding: TensorId,
    prefix: &str,
) -> Result<BranchOutput> {
    let head_w = bound.id(&format!("{prefix}.head.w"))?;
    let head_b = bound.id(&format!("{prefix}.head.b"))?;
    let emb_t = tape.transpose(embedding)?;
    let logits = tape.matmul(head_w, emb_t)?;
    let logits = tape.add(logits, head_b)?;
    let probs = tape.sigmoid(logits);
    Ok(BranchOutput {
        logits,
        probs,
        head_w,
    })
}

/// Patch transformer forward over a `[t×f]` feature grid.
pub fn audio_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &AudioBranchConfig,
    features: &[f64],
    t: usize,
    f: usize,
) -> Result<BranchOutput> {
    if features.len() != t * f {
        return Err(Error::shape("audio features", &[features.len()], &[t, f]));
    }
    let patches = patchify(features, t, f, cfg)?;
    let n_patches = patches.len() / (cfg.patch_rows * cfg.patch_cols);
    let pp = cfg.patch_rows * cfg.patch_cols;
    let x0 = tape.constant(&[n_patches, pp], patches);
    let mut x = linear_row(tape, bound, x0, "audio.patch.w", "audio.patch.b")?;

    let dh = cfg.d_model / cfg.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.n_layers {
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let q = tape.matmul(x, bound.id(&format!("audio.l{l}.h{h}.wq"))?)?;
            let k = tape.matmul(x, bound.id(&format!("audio.l{l}.h{h}.wk"))?)?;
            let v = tape.matmul(x, bound.id(&format!("audio.l{l}.h{h}.wv"))?)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(attn, v)?);
        }
        let cat = tape.concat(1, &heads)?;
        let o = linear_row(
            tape,
            bound,
            cat,
            &format!("audio.l{l}.wo"),
            &format!("audio.l{l}.bo"),
        )?;
        x = tape.add(x, o)?;
        let h1 = linear_row(
            tape,
            bound,
            x,
            &format!("audio.l{l}.ff1.w"),
            &format!("audio.l{l}.ff1.b"),
        )?;
        let h1 = tape.relu(h1);
        let h2 = linear_row(
            tape,
            bound,
            h1,
            &format!("audio.l{l}.ff2.w"),
            &format!("audio.l{l}.ff2.b"),
        )?;
        x = tape.add(x, h2)?;
    }

    let pooled = tape.mean_rows(x)?;
    let emb = linear_row(tape, bound, pooled, "audio.embed.w", "audio.embed.b")?;
    let emb = tape.relu(emb);
    classifier_head(tape, bound, emb, "audio")
}

fn activation(tape: &mut Tape, x: TensorId, act: Activation) -> TensorId {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}

/// Stage-stack forward over an image sequence `[n × ch × h × w]`.
pub fn visual_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &VisualBranchConfig,
    image_seq: &[f64],
    n_images: usize,
    image_ch: usize,
    h: usize,
    w: usize,
) -> Result<BranchOutput> {
    if n_images == 0 || image_seq.len() != n_images * image_ch * h * w {
        return Err(Error::shape(
            "image sequence",
            &[image_seq.len()],
            &[n_images, image_ch, h, w],
        ));
    }
    let n_down = cfg.stage_blocks.len() - 1;
    let min_side = 1usize << n_down;
    if h % min_side != 0 || w % min_side != 0 {
        return Err(Error::shape(
            "image too small for downsampling stages",
            &[h, w],
            &[min_side],
        ));
    }

    let frame_len = image_ch * h * w;
    let mut frame_rows = Vec::with_capacity(n_images);
    for frame in 0..n_images {
        let data = image_seq[frame * frame_len..(frame + 1) * frame_len].to_vec();
        let x = tape.constant(&[image_ch, h * w], data);
        let stem_w = bound.id("visual.stem.w")?;
        let stem_b = bound.id("visual.stem.b")?;
        let x = tape.matmul(stem_w, x)?;
        let x = tape.add_col(x, stem_b)?;
        let (mut ch_now, mut hh, mut ww) = (cfg.stage_channels[0], h, w);
        let mut x = tape.reshape(x, &[ch_now, hh, ww])?;
        for (s, &blocks) in cfg.stage_blocks.iter().enumerate() {
            for b in 0..blocks {
                let dw = bound.id(&format!("visual.s{s}.b{b}.dw"))?;
                let y = tape.depthwise_conv2d(x, dw)?;
                let y = tape.reshape(y, &[ch_now, hh * ww])?;
                let pw1w = bound.id(&format!("visual.s{s}.b{b}.pw1.w"))?;
                let pw1b = bound.id(&format!("visual.s{s}.b{b}.pw1.b"))?;
                let y = tape.matmul(pw1w, y)?;
                let y = tape.add_col(y, pw1b)?;
                let y = activation(tape, y, cfg.activation);
                let pw2w = bound.id(&format!("visual.s{s}.b{b}.pw2.w"))?;
                let pw2b = bound.id(&format!("visual.s{s}.b{b}.pw2.b"))?;
                let y = tape.matmul(pw2w, y)?;
                let y = tape.add_col(y, pw2b)?;
                let y = tape.reshape(y, &[ch_now, hh, ww])?;
                x = tape.add(x, y)?;
            }
            if s + 1 < cfg.stage_blocks.len() {
                let pooled = tape.avg_pool2(x)?;
                hh /= 2;
                ww /= 2;
                let flat = tape.reshape(pooled, &[ch_now, hh * ww])?;
                let dw_w = bound.id(&format!("visual.down{s}.w"))?;
                let dw_b = bound.id(&format!("visual.down{s}.b"))?;
                let y = tape.matmul(dw_w, flat)?;
                let y = tape.add_col(y, dw_b)?;
                ch_now = cfg.stage_channels[s + 1];
                x = tape.reshape(y, &[ch_now, hh, ww])?;
            }
        }
        let flat = tape.reshape(x, &[ch_now, hh * ww])?;
        let gap = tape.mean_cols(flat)?;
        frame_rows.push(tape.transpose(gap)?);
    }
    let stacked = tape.concat(0, &frame_rows)?;
    let pooled = tape.mean_rows(stacked)?;
    let emb = linear_row(tape, bound, pooled, "visual.embed.w", "visual.embed.b")?;
    let emb = tape.relu(emb);
    classifier_head(tape, bound, emb, "visual")
}

/// Multi-label BCE summed over classes: `-Σ y ln p + (1-y) ln(1-p)`.
/// Probabilities are clamped to `[1e-12, 1-1e-12]`.
pub fn bce_loss(tape: &mut Tape, probs: TensorId, labels: &[f64]) -> Result<TensorId> {
    let shape = tape.shape(probs).to_vec();
    let n: usize = shape.iter().product();
    if n != labels.len() {
        return Err(Error::shape("bce_loss labels", &shape, &[labels.len()]));
    }
    let p = tape.clamp(probs, 1e-12, 1.0 - 1e-12);
    let y = tape.constant(&shape, labels.to_vec());
    let ones = tape.constant(&shape, vec![1.0; n]);
    let lnp = tape.ln(p)?;
    let pos = tape.mul(y, lnp)?;
    let omp = tape.sub(ones, p)?;
    let ln_omp = tape.ln(omp)?;
    let omy = tape.sub(ones, y)?;
    let neg = tape.mul(omy, ln_omp)?;
    let sum = tape.add(pos, neg)?;
    let total = tape.sum_all(sum);
    Ok(tape.scale(total, -1.0))
}
