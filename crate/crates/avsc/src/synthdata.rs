//! Deterministic synthetic audio-visual scene generator.
//!
//! Each scene class has a fixed set of characteristic audio events and visual
//! objects. Per-sample soft event/object vectors are the scene's Bernoulli
//! rates plus seeded Gaussian noise; hard pseudo-labels come from threshold
//! binarization, and features are rendered as sums of per-class templates.
//! Everything is a pure function of `(spec, n, seed)`: sample randomness
//! derives from `(seed, index)` so generation is order-independent.

use crate::error::{Error, Result};
use crate::parallel::{self, Parallelism};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Binarization thresholds for event and object pseudo-labels.
pub const DEFAULT_EVENT_THRESHOLD: f64 = 0.0365;
pub const DEFAULT_OBJECT_THRESHOLD: f64 = 0.9216;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub c_s: usize,
    pub c_e: usize,
    pub c_o: usize,
    pub noise_sigma: f64,
    pub grid_t: usize,
    pub grid_f: usize,
    pub n_images: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub image_ch: usize,
    pub event_threshold: f64,
    pub object_threshold: f64,
    /// Seed for per-class feature templates and rate-matrix jitter.
    pub template_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            c_s: 4,
            c_e: 12,
            c_o: 16,
            noise_sigma: 0.05,
            grid_t: 32,
            grid_f: 16,
            n_images: 3,
            image_h: 16,
            image_w: 16,
            image_ch: 1,
            event_threshold: DEFAULT_EVENT_THRESHOLD,
            object_threshold: DEFAULT_OBJECT_THRESHOLD,
            template_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_s < 2 || self.c_e < 2 || self.c_o < 2 {
            return Err(Error::Config("need at least 2 classes per level".into()));
        }
        if self.c_e < self.c_s || self.c_o < self.c_s {
            return Err(Error::Config(
                "need at least one distinctive event and object per scene".into(),
            ));
        }
        for (name, t) in [
            ("event_threshold", self.event_threshold),
            ("object_threshold", self.object_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} {t} outside [0,1]")));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        let rates = RateMatrices::from_spec(self);
        rates.validate(self)?;
        Ok(())
    }
}

/// Scene-conditional Bernoulli rates, derived from the spec by a seeded recipe.
///
/// Each scene activates the events/objects whose index is congruent to it
/// modulo `c_s`; on-rates and off-rates sit on opposite sides of the
/// binarization thresholds, which keeps rows at least 0.3 apart in L-infinity
/// and makes scenes separable from labels alone.
#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrices {
    /// `[c_s × c_e]`, row-major.
    pub event_probs: Vec<f64>,
    /// `[c_s × c_o]`, row-major.
    pub object_probs: Vec<f64>,
}

impl RateMatrices {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.template_seed);
        rng.set_stream(0xA7E5);
        let mut event_probs = vec![0.0; spec.c_s * spec.c_e];
        for s in 0..spec.c_s {
            for j in 0..spec.c_e {
                event_probs[s * spec.c_e + j] = if j % spec.c_s == s {
                    0.9 + rng.gen_range(-0.05..=0.05)
                } else {
                    0.01 + rng.gen_range(-0.005..=0.005)
                };
            }
        }
        let mut object_probs = vec![0.0; spec.c_s * spec.c_o];
        for s in 0..spec.c_s {
            for j in 0..spec.c_o {
                object_probs[s * spec.c_o + j] = if j % spec.c_s == s {
                    0.975 + rng.gen_range(-0.015..=0.015)
                } else {
                    0.10 + rng.gen_range(-0.05..=0.05)
                };
            }
        }
        RateMatrices {
            event_probs,
            object_probs,
        }
    }

    fn validate(&self, spec: &SceneSpec) -> Result<()> {
        for (rates, cols) in [
            (&self.event_probs, spec.c_e),
            (&self.object_probs, spec.c_o),
        ] {
            if let Some(&bad) = rates.iter().find(|&&r| !(0.0..=1.0).contains(&r)) {
                return Err(Error::Config(format!("rate {bad} outside [0,1]")));
            }
            for a in 0..spec.c_s {
                for b in (a + 1)..spec.c_s {
                    let dist = (0..cols)
                        .map(|j| (rates[a * cols + j] - rates[b * cols + j]).abs())
                        .fold(0.0, f64::max);
                    if dist < 0.3 {
                        return Err(Error::Config(format!(
                            "scenes {a} and {b} closer than 0.3 in L-infinity ({dist})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Sample {
    pub scene: usize,
    pub event_soft: Vec<f64>,
    pub object_soft: Vec<f64>,
    pub event_label: Vec<f64>,
    pub object_label: Vec<f64>,
    /// `[grid_t × grid_f]`, row-major.
    pub audio_features: Vec<f64>,
    /// `[n_images × image_ch × image_h × image_w]`, row-major.
    pub image_seq: Vec<f64>,
}

impl Sample {
    pub fn scene_one_hot(&self, c_s: usize) -> Vec<f64> {
        let mut v = vec![0.0; c_s];
        v[self.scene] = 1.0;
        v
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub n: usize,
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Label = 1 iff soft value >= threshold (boundary inclusive).
pub fn binarize_pseudolabels(soft: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [0,1]")));
    }
    Ok(soft
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect())
}

/// Per-class 2-D Gaussian bump, fixed per (spec seed, class, kind).
fn template(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let cr = rng.gen_range(0.0..rows as f64);
    let cc = rng.gen_range(0.0..cols as f64);
    let sr = rows as f64 / 8.0;
    let sc = cols as f64 / 8.0;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let dr = (r as f64 - cr) / sr;
            let dc = (c as f64 - cc) / sc;
            out[r * cols + c] = (-(dr * dr + dc * dc) / 2.0).exp();
        }
    }
    out
}

pub struct Templates {
    /// One `[grid_t × grid_f]` bump per event class.
    pub event: Vec<Vec<f64>>,
    /// One `[image_h × image_w]` blob per object class (shared across channels).
    pub object: Vec<Vec<f64>>,
}

impl Templates {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.template_seed);
        rng.set_stream(0x7E4);
        let event = (0..spec.c_e)
            .map(|_| template(&mut rng, spec.grid_t, spec.grid_f))
            .collect();
        let object = (0..spec.c_o)
            .map(|_| template(&mut rng, spec.image_h, spec.image_w))
            .collect();
        Templates { event, object }
    }
}

/// Renders the audio grid and image sequence for the given active labels.
/// Rendering is linear in the active-class indicators (superposition).
pub fn render_features(
    event_label: &[f64],
    object_label: &[f64],
    spec: &SceneSpec,
    templates: &Templates,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut audio = vec![0.0; spec.grid_t * spec.grid_f];
    for (e, &active) in event_label.iter().enumerate() {
        if active >= 0.5 {
            for (dst, src) in audio.iter_mut().zip(&templates.event[e]) {
                *dst += src;
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        for v in &mut audio {
            *v += spec.noise_sigma * noise.sample(rng);
        }
    }

    let frame_len = spec.image_ch * spec.image_h * spec.image_w;
    let mut images = vec![0.0; spec.n_images * frame_len];
    for frame in 0..spec.n_images {
        let base = frame * frame_len;
        for (o, &active) in object_label.iter().enumerate() {
            if active >= 0.5 {
                for ch in 0..spec.image_ch {
                    let off = base + ch * spec.image_h * spec.image_w;
                    for (i, src) in templates.object[o].iter().enumerate() {
                        images[off + i] += src;
                    }
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in &mut images[base..base + frame_len] {
                *v += spec.noise_sigma * noise.sample(rng);
            }
        }
    }
    (audio, images)
}

fn generate_sample(
    spec: &SceneSpec,
    rates: &RateMatrices,
    templates: &Templates,
    seed: u64,
    index: usize,
) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let scene = index % spec.c_s;
    let noise = Normal::new(0.0, 1.0).unwrap();
    let perturb = |row: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        row.iter()
            .map(|&r| {
                let v = if spec.noise_sigma > 0.0 {
                    r + spec.noise_sigma * noise.sample(rng)
                } else {
                    r
                };
                v.clamp(0.0, 1.0)
            })
            .collect()
    };
    let event_soft = perturb(
        &rates.event_probs[scene * spec.c_e..(scene + 1) * spec.c_e],
        &mut rng,
    );
    let object_soft = perturb(
        &rates.object_probs[scene * spec.c_o..(scene + 1) * spec.c_o],
        &mut rng,
    );
    let event_label = binarize_pseudolabels(&event_soft, spec.event_threshold).expect("threshold");
    let object_label =
        binarize_pseudolabels(&object_soft, spec.object_threshold).expect("threshold");
    let (audio_features, image_seq) =
        render_features(&event_label, &object_label, spec, templates, &mut rng);
    Sample {
        scene,
        event_soft,
        object_soft,
        event_label,
        object_label,
        audio_features,
        image_seq,
    }
}

/// Generates `n` samples with a stratified 70/30 train/test split.
pub fn generate_dataset(
    spec: &SceneSpec,
    n: usize,
    seed: u64,
    par: Parallelism,
) -> Result<Dataset> {
    spec.validate()?;
    if n < spec.c_s {
        return Err(Error::Config(format!(
            "need at least one sample per scene: n={n} < c_s={}",
            spec.c_s
        )));
    }
    let rates = RateMatrices::from_spec(spec);
    let templates = Templates::from_spec(spec);
    let samples = parallel::map_indexed(par, n, |i| {
        generate_sample(spec, &rates, &templates, seed, i)
    });

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for s in 0..spec.c_s {
        let class: Vec<usize> = (0..n).filter(|i| i % spec.c_s == s).collect();
        let n_train = (class.len() * 7) / 10;
        train_idx.extend(&class[..n_train]);
        test_idx.extend(&class[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok(Dataset {
        spec: spec.clone(),
        n,
        seed,
        samples,
        train_idx,
        test_idx,
    })
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let ds: Dataset = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(ds)
    }
}
