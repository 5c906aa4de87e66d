//! Composite finite-difference gradient check over the full loss path:
//! both branches, bank selection, both contrastive losses, fusion, and the
//! weighted total.

use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::model::{forward_sample, init_params};
use crate::numcore::{grad_check, CheckParam, GradCheckReport};
use crate::params::BoundParams;
use crate::synthdata::generate_dataset;

/// Configuration sized so checking every parameter element stays fast.
pub fn gradcheck_config() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.data.c_s = 3;
    cfg.data.c_e = 6;
    cfg.data.c_o = 6;
    cfg.data.grid_t = 8;
    cfg.data.grid_f = 4;
    cfg.data.n_images = 1;
    cfg.data.image_h = 6;
    cfg.data.image_w = 6;
    cfg.audio.c_e = 6;
    cfg.audio.patch_rows = 4;
    cfg.audio.patch_cols = 4;
    cfg.audio.n_layers = 1;
    cfg.audio.n_heads = 2;
    cfg.audio.d_model = 8;
    cfg.visual.c_o = 6;
    cfg.visual.stage_blocks = vec![1];
    cfg.visual.stage_channels = vec![3];
    cfg.fusion.c_s = 3;
    cfg.fusion.n_heads = 1;
    cfg.fusion.head_dim = 4;
    cfg.fusion.hidden = 6;
    cfg.contrastive.k = 2;
    cfg.embed_dim = 4;
    cfg.n_samples = 3;
    cfg.lambdas = [1.0, 1.0, 1.0, 1.0, 1.0];
    cfg.validate().expect("gradcheck config is valid");
    cfg
}

/// Checks analytic gradients of the composite loss against central finite
/// differences for every parameter element, at the given seed.
pub fn composite_grad_check(seed: u64, h: f64, tol: f64) -> Result<GradCheckReport> {
    let mut cfg = gradcheck_config();
    cfg.seed = seed;
    cfg.data_seed = seed.wrapping_add(100);
    let ds = generate_dataset(&cfg.data, cfg.n_samples, cfg.data_seed, Default::default())?;
    let ps = init_params(&cfg);
    let names: Vec<String> = ps.iter().map(|(n, _)| n.clone()).collect();
    let params: Vec<CheckParam> = ps
        .iter()
        .map(|(n, p)| CheckParam::new(n.clone(), &p.shape, p.data.clone()))
        .collect();
    let sample = ds.samples[(seed as usize) % ds.samples.len()].clone();
    let sample_index = (seed as usize) % ds.samples.len();
    grad_check(
        |tape, ids| {
            let bound = BoundParams::from_ids(&names, ids);
            let fwd = forward_sample(tape, &bound, &cfg, &sample, sample_index)?;
            Ok(fwd.bundle.total)
        },
        &params,
        h,
        tol,
    )
}
