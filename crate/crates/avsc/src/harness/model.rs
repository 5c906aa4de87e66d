//! Full-model assembly: parameter initialization and the per-sample forward
//! pass producing all five losses and the scene prediction.

use crate::branches::{audio_forward, bce_loss, init_audio_params, init_visual_params, visual_forward};
use crate::ceoa::{contrastive_loss_e2o, contrastive_loss_o2e, select_bank};
use crate::error::Result;
use crate::fusion::{
    ce_loss, concat_forward, init_fusion_params, sf_forward, total_loss, LossBundle,
    ScenePrediction,
};
use crate::harness::config::{Modality, RunConfig};
use crate::numcore::Tape;
use crate::params::{BoundParams, ParamSet};
use crate::synthdata::Sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn init_params(cfg: &RunConfig) -> ParamSet {
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.modality {
        Modality::Both => {
            init_audio_params(&mut ps, &mut rng, &cfg.audio, cfg.embed_dim);
            init_visual_params(&mut ps, &mut rng, &cfg.visual, cfg.data.image_ch, cfg.embed_dim);
            init_fusion_params(&mut ps, &mut rng, &cfg.fusion, cfg.audio.c_e, cfg.visual.c_o);
        }
        Modality::Audio => {
            init_audio_params(&mut ps, &mut rng, &cfg.audio, cfg.embed_dim);
            ps.init_uniform(
                &mut rng,
                "scene.audio.w",
                &[cfg.audio.c_e, cfg.fusion.c_s],
                cfg.audio.c_e,
            );
            ps.init_uniform(&mut rng, "scene.audio.b", &[1, cfg.fusion.c_s], cfg.audio.c_e);
        }
        Modality::Visual => {
            init_visual_params(&mut ps, &mut rng, &cfg.visual, cfg.data.image_ch, cfg.embed_dim);
            ps.init_uniform(
                &mut rng,
                "scene.visual.w",
                &[cfg.visual.c_o, cfg.fusion.c_s],
                cfg.visual.c_o,
            );
            ps.init_uniform(&mut rng, "scene.visual.b", &[1, cfg.fusion.c_s], cfg.visual.c_o);
        }
    }
    ps
}

pub struct SampleForward {
    pub bundle: LossBundle,
    pub scene_probs: Vec<f64>,
}

fn linear_scene_head(
    tape: &mut Tape,
    bound: &BoundParams,
    logits_col: crate::numcore::TensorId,
    prefix: &str,
) -> Result<ScenePrediction> {
    let row = tape.transpose(logits_col)?;
    let w = bound.id(&format!("{prefix}.w"))?;
    let b = bound.id(&format!("{prefix}.b"))?;
    let out = tape.matmul(row, w)?;
    let out = tape.add_row(out, b)?;
    let probs_row = tape.softmax_rows(out)?;
    Ok(ScenePrediction {
        logits: tape.transpose(out)?,
        probs: tape.transpose(probs_row)?,
        attn: Vec::new(),
    })
}

/// One sample through the active branches, CEOA, fusion, and all losses.
/// `sample_index` is the position in the dataset; RKM negatives key off it so
/// results do not depend on batch composition.
pub fn forward_sample(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &RunConfig,
    sample: &Sample,
    sample_index: usize,
) -> Result<SampleForward> {
    let spec = &cfg.data;
    let zero = tape.scalar(0.0);
    let w = cfg.weights();

    let audio_out = match cfg.modality {
        Modality::Visual => None,
        _ => Some(audio_forward(
            tape,
            bound,
            &cfg.audio,
            &sample.audio_features,
            spec.grid_t,
            spec.grid_f,
        )?),
    };
    let visual_out = match cfg.modality {
        Modality::Audio => None,
        _ => Some(visual_forward(
            tape,
            bound,
            &cfg.visual,
            &sample.image_seq,
            spec.n_images,
            spec.image_ch,
            spec.image_h,
            spec.image_w,
        )?),
    };

    let l_e = match &audio_out {
        Some(a) => bce_loss(tape, a.probs, &sample.event_label)?,
        None => zero,
    };
    let l_o = match &visual_out {
        Some(v) => bce_loss(tape, v.probs, &sample.object_label)?,
        None => zero,
    };

    let (l_e2o, l_o2e) = match (&audio_out, &visual_out) {
        (Some(a), Some(v)) if cfg.ceoa_active() => {
            let probs_e = tape.data(a.probs).to_vec();
            let probs_o = tape.data(v.probs).to_vec();
            let bank = select_bank(
                tape,
                &probs_e,
                &probs_o,
                a.head_w,
                v.head_w,
                &cfg.contrastive,
                sample_index,
            )?;
            (
                contrastive_loss_e2o(tape, &bank)?,
                contrastive_loss_o2e(tape, &bank)?,
            )
        }
        _ => (zero, zero),
    };

    let pred = match (&audio_out, &visual_out) {
        (Some(a), Some(v)) => {
            if cfg.sf_enabled {
                sf_forward(tape, bound, &cfg.fusion, a, v)?
            } else {
                concat_forward(tape, bound, &cfg.fusion, a, v)?
            }
        }
        (Some(a), None) => linear_scene_head(tape, bound, a.logits, "scene.audio")?,
        (None, Some(v)) => linear_scene_head(tape, bound, v.logits, "scene.visual")?,
        (None, None) => unreachable!("at least one modality is always active"),
    };
    let y_s = sample.scene_one_hot(spec.c_s);
    let l_s = ce_loss(tape, &pred, &y_s)?;

    let scene_probs = tape.data(pred.probs).to_vec();
    // Single-modality runs carry zero placeholders for the missing losses; a
    // positive lambda on those must not be treated as a config error here, so
    // mask them out before validation.
    let mut w = w;
    match cfg.modality {
        Modality::Audio => {
            w.l2 = 0.0;
            w.l3 = 0.0;
            w.l4 = 0.0;
        }
        Modality::Visual => {
            w.l1 = 0.0;
            w.l3 = 0.0;
            w.l4 = 0.0;
        }
        Modality::Both => {}
    }
    let bundle = total_loss(tape, l_e, l_o, l_e2o, l_o2e, l_s, &w)?;
    Ok(SampleForward {
        bundle,
        scene_probs,
    })
}

/// Inference-only scene probabilities for one sample.
pub fn predict_sample(
    cfg: &RunConfig,
    params: &ParamSet,
    sample: &Sample,
    sample_index: usize,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let fwd = forward_sample(&mut tape, &bound, cfg, sample, sample_index)?;
    Ok(fwd.scene_probs)
}

/// Small but complete configuration used by tests and benches.
pub fn tiny_bench_config() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.data.c_s = 3;
    cfg.data.c_e = 6;
    cfg.data.c_o = 6;
    cfg.data.grid_t = 8;
    cfg.data.grid_f = 8;
    cfg.data.n_images = 1;
    cfg.data.image_h = 8;
    cfg.data.image_w = 8;
    cfg.audio.c_e = 6;
    cfg.audio.patch_rows = 4;
    cfg.audio.patch_cols = 4;
    cfg.audio.n_layers = 1;
    cfg.audio.n_heads = 2;
    cfg.audio.d_model = 8;
    cfg.visual.c_o = 6;
    cfg.visual.stage_blocks = vec![1, 1];
    cfg.visual.stage_channels = vec![2, 4];
    cfg.fusion.c_s = 3;
    cfg.fusion.n_heads = 1;
    cfg.fusion.head_dim = 4;
    cfg.fusion.hidden = 8;
    cfg.contrastive.k = 2;
    cfg.embed_dim = 6;
    cfg.n_samples = 12;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.validate().unwrap();
    cfg
}
