//! Semantic-based fusion: cross-directional multi-head attention between the
//! per-class event and object vectors, residual enrichment, concatenation,
//! scene classification, and the total weighted loss.

use crate::branches::BranchOutput;
use crate::error::{Error, Result};
use crate::numcore::{Tape, TensorId};
use crate::params::{BoundParams, ParamSet};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Full-scale attention settings, kept for reference.
pub const PAPER_FUSION_HEADS: usize = 8;
pub const PAPER_FUSION_HEAD_DIM: usize = 64;

/// Which per-class vector feeds the attention and residual path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionInput {
    Logits,
    Probs,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Attention heads per direction.
    pub n_heads: usize,
    /// Per-head width; projections map the scalar per-class feature to this.
    pub head_dim: usize,
    /// Hidden width of the two-layer fusion head.
    pub hidden: usize,
    pub c_s: usize,
    pub input: FusionInput,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            n_heads: 2,
            head_dim: 8,
            hidden: 32,
            c_s: 4,
            input: FusionInput::Logits,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.head_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("fusion dims must be positive".into()));
        }
        if self.c_s < 2 {
            return Err(Error::Config("c_s must be at least 2".into()));
        }
        Ok(())
    }
}

pub fn init_fusion_params(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    cfg: &FusionConfig,
    c_e: usize,
    c_o: usize,
) {
    for dir in ["eo", "oe"] {
        for h in 0..cfg.n_heads {
            ps.init_uniform(rng, format!("fusion.{dir}.h{h}.wq"), &[1, cfg.head_dim], 1);
            ps.init_uniform(rng, format!("fusion.{dir}.h{h}.wk"), &[1, cfg.head_dim], 1);
            ps.init_uniform(rng, format!("fusion.{dir}.h{h}.wv"), &[1, cfg.head_dim], 1);
        }
        ps.init_uniform(
            rng,
            format!("fusion.{dir}.wo"),
            &[cfg.n_heads * cfg.head_dim, 1],
            cfg.n_heads * cfg.head_dim,
        );
    }
    let in_dim = c_e + c_o;
    ps.init_uniform(rng, "fusion.head.w1", &[in_dim, cfg.hidden], in_dim);
    ps.init_uniform(rng, "fusion.head.b1", &[1, cfg.hidden], in_dim);
    ps.init_uniform(rng, "fusion.head.w2", &[cfg.hidden, cfg.c_s], cfg.hidden);
    ps.init_uniform(rng, "fusion.head.b2", &[1, cfg.c_s], cfg.hidden);
}

/// A row-major attention matrix snapshot taken off the tape for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl AttnMat {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub struct MhaOutput {
    /// `[n_q×1]`.
    pub out: TensorId,
    /// Per-head `[n_q×n_k]` attention matrices (data snapshots, diagnostics).
    pub attn: Vec<AttnMat>,
    pub n_q: usize,
    pub n_k: usize,
}

/// Multi-head attention over per-class scalar features.
/// Per head: `A = softmax(q w^Q (k w^K)^T / sqrt(d)) (v w^V)`; heads are
/// concatenated and projected back to `[n_q×1]`.
pub fn mha(
    tape: &mut Tape,
    bound: &BoundParams,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    prefix: &str,
    n_heads: usize,
    head_dim: usize,
) -> Result<MhaOutput> {
    let (n_q, qc) = (tape.shape(q)[0], tape.shape(q)[1]);
    let n_k = tape.shape(k)[0];
    if tape.shape(k) != tape.shape(v) {
        return Err(Error::shape("mha keys vs values", tape.shape(k), tape.shape(v)));
    }
    if qc != 1 || tape.shape(k)[1] != 1 {
        return Err(Error::shape("mha expects column vectors", tape.shape(q), tape.shape(k)));
    }
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut attn_mats = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let wq = bound.id(&format!("{prefix}.h{h}.wq"))?;
        let wk = bound.id(&format!("{prefix}.h{h}.wk"))?;
        let wv = bound.id(&format!("{prefix}.h{h}.wv"))?;
        let qw = tape.matmul(q, wq)?;
        let kw = tape.matmul(k, wk)?;
        let vw = tape.matmul(v, wv)?;
        let kt = tape.transpose(kw)?;
        let scores = tape.matmul(qw, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores)?;
        attn_mats.push(AttnMat {
            rows: n_q,
            cols: n_k,
            data: tape.data(attn).to_vec(),
        });
        heads.push(tape.matmul(attn, vw)?);
    }
    let cat = tape.concat(1, &heads)?;
    let wo = bound.id(&format!("{prefix}.wo"))?;
    let out = tape.matmul(cat, wo)?;
    Ok(MhaOutput {
        out,
        attn: attn_mats,
        n_q,
        n_k,
    })
}

pub struct ScenePrediction {
    /// `[C_s×1]`.
    pub logits: TensorId,
    /// `[C_s×1]`, softmax of logits.
    pub probs: TensorId,
    /// Attention matrices from both directions (empty when fusion is bypassed).
    pub attn: Vec<AttnMat>,
}

fn fusion_head(tape: &mut Tape, bound: &BoundParams, input_col: TensorId) -> Result<ScenePrediction> {
    let row = tape.transpose(input_col)?;
    let w1 = bound.id("fusion.head.w1")?;
    let b1 = bound.id("fusion.head.b1")?;
    let h = tape.matmul(row, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let w2 = bound.id("fusion.head.w2")?;
    let b2 = bound.id("fusion.head.b2")?;
    let out = tape.matmul(h, w2)?;
    let out = tape.add_row(out, b2)?;
    let probs_row = tape.softmax_rows(out)?;
    Ok(ScenePrediction {
        logits: tape.transpose(out)?,
        probs: tape.transpose(probs_row)?,
        attn: Vec::new(),
    })
}

fn branch_vector(out: &BranchOutput, input: FusionInput) -> TensorId {
    match input {
        FusionInput::Logits => out.logits,
        FusionInput::Probs => out.probs,
    }
}

/// Cross-directional attention, residual enrichment, concatenation, and the
/// scene head.
pub fn sf_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &FusionConfig,
    event_out: &BranchOutput,
    object_out: &BranchOutput,
) -> Result<ScenePrediction> {
    let e_vec = branch_vector(event_out, cfg.input);
    let o_vec = branch_vector(object_out, cfg.input);
    // Objects attended by events, and events attended by objects.
    let o_by_e = mha(
        tape, bound, o_vec, e_vec, e_vec, "fusion.eo", cfg.n_heads, cfg.head_dim,
    )?;
    let e_by_o = mha(
        tape, bound, e_vec, o_vec, o_vec, "fusion.oe", cfg.n_heads, cfg.head_dim,
    )?;
    let enriched_o = tape.add(o_by_e.out, o_vec)?;
    let enriched_e = tape.add(e_by_o.out, e_vec)?;
    let cat = tape.concat(0, &[enriched_e, enriched_o])?;
    let mut pred = fusion_head(tape, bound, cat)?;
    pred.attn = o_by_e.attn.into_iter().chain(e_by_o.attn).collect();
    Ok(pred)
}

/// Fusion bypass used by the backbone-only configuration: raw branch vectors
/// concatenated straight into the fusion head.
pub fn concat_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &FusionConfig,
    event_out: &BranchOutput,
    object_out: &BranchOutput,
) -> Result<ScenePrediction> {
    let e_vec = branch_vector(event_out, cfg.input);
    let o_vec = branch_vector(object_out, cfg.input);
    let cat = tape.concat(0, &[e_vec, o_vec])?;
    fusion_head(tape, bound, cat)
}

/// Scene cross-entropy `-Σ y ln p` with probabilities clamped at 1e-12.
pub fn ce_loss(tape: &mut Tape, pred: &ScenePrediction, y_s: &[f64]) -> Result<TensorId> {
    let shape = tape.shape(pred.probs).to_vec();
    let n: usize = shape.iter().product();
    if n != y_s.len() {
        return Err(Error::shape("ce_loss labels", &shape, &[y_s.len()]));
    }
    let ones = y_s.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || y_s.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract(format!("ce_loss label must be one-hot, got {y_s:?}")));
    }
    let p = tape.clamp(pred.probs, 1e-12, 1.0);
    let y = tape.constant(&shape, y_s.to_vec());
    let lnp = tape.ln(p)?;
    let picked = tape.mul(y, lnp)?;
    let sum = tape.sum_all(picked);
    Ok(tape.scale(sum, -1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            l4: 1.0,
            l5: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(l: [f64; 5]) -> Self {
        LossWeights {
            l1: l[0],
            l2: l[1],
            l3: l[2],
            l4: l[3],
            l5: l[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.l1, self.l2, self.l3, self.l4, self.l5]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::Config(format!("loss weights must be non-negative: {a:?}")));
        }
        if a.iter().all(|&l| l == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// The five component losses and the weighted total, on the tape.
pub struct LossBundle {
    pub l_e: TensorId,
    pub l_o: TensorId,
    pub l_e2o: TensorId,
    pub l_o2e: TensorId,
    pub l_s: TensorId,
    pub total: TensorId,
}

/// Component values captured off the tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l_e: f64,
    pub l_o: f64,
    pub l_e2o: f64,
    pub l_o2e: f64,
    pub l_s: f64,
    pub total: f64,
}

/// `L = λ1 L_e + λ2 L_o + λ3 L_e2o + λ4 L_o2e + λ5 L_s`.
pub fn total_loss(
    tape: &mut Tape,
    l_e: TensorId,
    l_o: TensorId,
    l_e2o: TensorId,
    l_o2e: TensorId,
    l_s: TensorId,
    w: &LossWeights,
) -> Result<LossBundle> {
    w.validate()?;
    let terms = [
        (l_e, w.l1),
        (l_o, w.l2),
        (l_e2o, w.l3),
        (l_o2e, w.l4),
        (l_s, w.l5),
    ];
    let mut total = None;
    for (loss, lambda) in terms {
        let scaled = tape.scale(loss, lambda);
        total = Some(match total {
            None => scaled,
            Some(acc) => tape.add(acc, scaled)?,
        });
    }
    Ok(LossBundle {
        l_e,
        l_o,
        l_e2o,
        l_o2e,
        l_s,
        total: total.unwrap(),
    })
}

impl LossBundle {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            l_e: tape.scalar_value(self.l_e),
            l_o: tape.scalar_value(self.l_o),
            l_e2o: tape.scalar_value(self.l_e2o),
            l_o2e: tape.scalar_value(self.l_o2e),
            l_s: tape.scalar_value(self.l_s),
            total: tape.scalar_value(self.total),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, CheckParam};
    use rand::{Rng, SeedableRng};

    fn fusion_params(cfg: &FusionConfig, c_e: usize, c_o: usize, seed: u64) -> ParamSet {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_fusion_params(&mut ps, &mut rng, cfg, c_e, c_o);
        ps
    }

    fn fake_branch(tape: &mut Tape, logits: Vec<f64>) -> BranchOutput {
        let n = logits.len();
        let l = tape.constant(&[n, 1], logits);
        let p = tape.sigmoid(l);
        let w = tape.constant(&[n, 2], vec![0.0; n * 2]);
        BranchOutput {
            logits: l,
            probs: p,
            head_w: w,
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = FusionConfig::default();
        let ps = fusion_params(&cfg, 5, 7, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &ps, false);
            let e = fake_branch(&mut tape, (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let o = fake_branch(&mut tape, (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let pred = sf_forward(&mut tape, &bound, &cfg, &e, &o).unwrap();
            assert!(!pred.attn.is_empty());
            for mat in &pred.attn {
                assert_eq!(mat.data.len(), mat.rows * mat.cols);
                for i in 0..mat.rows {
                    let s: f64 = mat.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
                }
            }
        }
    }

    #[test]
    fn constant_values_give_constant_attention_output() {
        // Single head, value projection all-ones, identity-scale output:
        // attention over a constant value vector is that constant.
        let cfg = FusionConfig {
            n_heads: 1,
            head_dim: 1,
            ..FusionConfig::default()
        };
        let mut ps = fusion_params(&cfg, 4, 4, 2);
        ps.get_mut("fusion.eo.h0.wv").unwrap().data = vec![1.0];
        ps.get_mut("fusion.eo.wo").unwrap().data = vec![1.0];
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &ps, false);
        let q = tape.constant(&[3, 1], vec![0.3, -1.0, 2.0]);
        let kv = tape.constant(&[4, 1], vec![0.7; 4]);
        let out = mha(&mut tape, &bound, q, kv, kv, "fusion.eo", 1, 1).unwrap();
        for &v in tape.data(out.out) {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn mha_matches_primitive_composition_oracle() {
        let (n_q, n_k, h, d) = (3, 4, 2, 2);
        let cfg = FusionConfig {
            n_heads: h,
            head_dim: d,
            ..FusionConfig::default()
        };
        let ps = fusion_params(&cfg, n_k, n_q, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let qv: Vec<f64> = (0..n_q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kv: Vec<f64> = (0..n_k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vv: Vec<f64> = (0..n_k).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &ps, false);
        let q = tape.constant(&[n_q, 1], qv.clone());
        let k = tape.constant(&[n_k, 1], kv.clone());
        let v = tape.constant(&[n_k, 1], vv.clone());
        let got = mha(&mut tape, &bound, q, k, v, "fusion.eo", h, d).unwrap();

        // Hand-assembled oracle: literal per-head composition in plain loops.
        let mut concat = vec![0.0; n_q * h * d];
        for head in 0..h {
            let wq = &ps.get(&format!("fusion.eo.h{head}.wq")).unwrap().data;
            let wk = &ps.get(&format!("fusion.eo.h{head}.wk")).unwrap().data;
            let wv = &ps.get(&format!("fusion.eo.h{head}.wv")).unwrap().data;
            // scores[i][j] = sum_c (q_i wq_c)(k_j wk_c) / sqrt(d)
            for i in 0..n_q {
                let mut row = vec![0.0; n_k];
                for j in 0..n_k {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += qv[i] * wq[c] * kv[j] * wk[c];
                    }
                    row[j] = s / (d as f64).sqrt();
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..d {
                    let mut acc = 0.0;
                    for j in 0..n_k {
                        acc += exps[j] / z * vv[j] * wv[c];
                    }
                    concat[i * h * d + head * d + c] = acc;
                }
            }
        }
        let wo = &ps.get("fusion.eo.wo").unwrap().data;
        for i in 0..n_q {
            let mut acc = 0.0;
            for c in 0..h * d {
                acc += concat[i * h * d + c] * wo[c];
            }
            assert!(
                (acc - tape.data(got.out)[i]).abs() < 1e-12,
                "row {i}: {acc} vs {}",
                tape.data(got.out)[i]
            );
        }
    }

    #[test]
    fn mha_rejects_mismatched_kv() {
        let cfg = FusionConfig::default();
        let ps = fusion_params(&cfg, 4, 4, 5);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &ps, false);
        let q = tape.constant(&[3, 1], vec![0.0; 3]);
        let k = tape.constant(&[4, 1], vec![0.0; 4]);
        let v = tape.constant(&[5, 1], vec![0.0; 5]);
        assert!(mha(&mut tape, &bound, q, k, v, "fusion.eo", cfg.n_heads, cfg.head_dim).is_err());
    }

    #[test]
    fn zero_projections_reduce_to_pure_residual() {
        let cfg = FusionConfig::default();
        let mut ps = fusion_params(&cfg, 4, 6, 6);
        for dir in ["eo", "oe"] {
            ps.get_mut(&format!("fusion.{dir}.wo")).unwrap().data.fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ev: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ov: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &ps, false);
        let e = fake_branch(&mut tape, ev.clone());
        let o = fake_branch(&mut tape, ov.clone());
        let with_sf = sf_forward(&mut tape, &bound, &cfg, &e, &o).unwrap();
        let with_sf_logits = tape.data(with_sf.logits).to_vec();

        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &ps, false);
        let e = fake_branch(&mut tape, ev);
        let o = fake_branch(&mut tape, ov);
        let plain = concat_forward(&mut tape, &bound, &cfg, &e, &o).unwrap();
        let plain_logits = tape.data(plain.logits).to_vec();

        for (a, b) in with_sf_logits.iter().zip(&plain_logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sf_output_shape_and_prob_sum() {
        let cfg = FusionConfig::default();
        let ps = fusion_params(&cfg, 4, 6, 8);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &ps, false);
        let e = fake_branch(&mut tape, vec![0.5, -0.5, 1.0, 0.0]);
        let o = fake_branch(&mut tape, vec![0.1; 6]);
        let pred = sf_forward(&mut tape, &bound, &cfg, &e, &o).unwrap();
        assert_eq!(tape.shape(pred.probs), &[cfg.c_s, 1]);
        let s: f64 = tape.data(pred.probs).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sf_gradient_check_end_to_end() {
        let cfg = FusionConfig {
            n_heads: 2,
            head_dim: 2,
            hidden: 4,
            c_s: 3,
            input: FusionInput::Logits,
        };
        let (c_e, c_o) = (3, 4);
        let ps = fusion_params(&cfg, c_e, c_o, 9);
        let names: Vec<String> = ps.iter().map(|(n, _)| n.clone()).collect();
        let mut params: Vec<CheckParam> = ps
            .iter()
            .map(|(n, p)| CheckParam::new(n.clone(), &p.shape, p.data.clone()))
            .collect();
        // Also check gradients through the branch logits.
        params.push(CheckParam::new("e_logits", &[c_e, 1], vec![0.4, -0.2, 0.9]));
        params.push(CheckParam::new("o_logits", &[c_o, 1], vec![0.1, 0.5, -0.6, 0.2]));
        let y = vec![0.0, 1.0, 0.0];
        let report = grad_check(
            |tape, ids| {
                let bound = BoundParams::from_ids(&names, &ids[..names.len()]);
                let e_l = ids[names.len()];
                let o_l = ids[names.len() + 1];
                let e = BranchOutput {
                    logits: e_l,
                    probs: tape.sigmoid(e_l),
                    head_w: e_l,
                };
                let o = BranchOutput {
                    logits: o_l,
                    probs: tape.sigmoid(o_l),
                    head_w: o_l,
                };
                let pred = sf_forward(tape, &bound, &cfg, &e, &o)?;
                ce_loss(tape, &pred, &y)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn ce_closed_forms_and_contract() {
        let mut tape = Tape::new();
        let logits = tape.constant(&[4, 1], vec![0.0; 4]);
        let probs_row = {
            let t = tape.transpose(logits).unwrap();
            let s = tape.softmax_rows(t).unwrap();
            tape.transpose(s).unwrap()
        };
        let pred = ScenePrediction {
            logits,
            probs: probs_row,
            attn: vec![],
        };
        let loss = ce_loss(&mut tape, &pred, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((tape.scalar_value(loss) - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            ce_loss(&mut tape, &pred, &[0.5, 0.5, 0.0, 0.0]),
            Err(Error::Contract(_))
        ));

        let mut tape = Tape::new();
        let probs = tape.constant(&[3, 1], vec![1.0, 0.0, 0.0]);
        let pred = ScenePrediction {
            logits: probs,
            probs,
            attn: vec![],
        };
        let loss = ce_loss(&mut tape, &pred, &[1.0, 0.0, 0.0]).unwrap();
        assert!(tape.scalar_value(loss) <= 1e-11);
    }

    #[test]
    fn ce_matches_direct_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        let expect = -( (logits[2] - max).exp() / z ).ln();
        let mut tape = Tape::new();
        let l = tape.constant(&[5, 1], logits);
        let row = tape.transpose(l).unwrap();
        let sm = tape.softmax_rows(row).unwrap();
        let probs = tape.transpose(sm).unwrap();
        let pred = ScenePrediction {
            logits: l,
            probs,
            attn: vec![],
        };
        let mut y = vec![0.0; 5];
        y[2] = 1.0;
        let loss = ce_loss(&mut tape, &pred, &y).unwrap();
        assert!((tape.scalar_value(loss) - expect).abs() < 1e-12);
    }

    fn scalar_losses(tape: &mut Tape, vals: [f64; 5]) -> [TensorId; 5] {
        [
            tape.scalar(vals[0]),
            tape.scalar(vals[1]),
            tape.scalar(vals[2]),
            tape.scalar(vals[3]),
            tape.scalar(vals[4]),
        ]
    }

    #[test]
    fn total_loss_weighting() {
        let mut tape = Tape::new();
        let [a, b, c, d, e] = scalar_losses(&mut tape, [0.5, 0.25, 1.5, 2.0, 0.75]);
        // All weights 1: plain sum.
        let bundle = total_loss(&mut tape, a, b, c, d, e, &LossWeights::default()).unwrap();
        assert!((tape.scalar_value(bundle.total) - 5.0).abs() < 1e-12);
        // Masking: only the scene loss.
        let w = LossWeights::new([0.0, 0.0, 0.0, 0.0, 1.0]);
        let bundle = total_loss(&mut tape, a, b, c, d, e, &w).unwrap();
        assert_eq!(tape.scalar_value(bundle.total), 0.75);
        // Weighted combination with unit components.
        let [a, b, c, d, e] = scalar_losses(&mut tape, [1.0; 5]);
        let w = LossWeights::new([0.25, 0.5, 0.25, 0.5, 1.0]);
        let bundle = total_loss(&mut tape, a, b, c, d, e, &w).unwrap();
        assert!((tape.scalar_value(bundle.total) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn total_loss_linear_in_each_weight() {
        let comps = [0.37, 1.21, 0.05, 2.4, 0.9];
        let base = LossWeights::default();
        for i in 0..5 {
            let eval = |wi: f64| {
                let mut w = base.as_array();
                w[i] = wi;
                let mut tape = Tape::new();
                let [a, b, c, d, e] = scalar_losses(&mut tape, comps);
                let bundle = total_loss(&mut tape, a, b, c, d, e, &LossWeights::new(w)).unwrap();
                tape.scalar_value(bundle.total)
            };
            let slope = (eval(2.0) - eval(1.0)) / 1.0;
            assert!((slope - comps[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new([0.0; 5]).validate().is_err());
        assert!(LossWeights::new([-0.1, 1.0, 1.0, 1.0, 1.0]).validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }

    #[test]
    fn permuting_event_classes_consistently_preserves_scene_logits() {
        let cfg = FusionConfig::default();
        let (c_e, c_o) = (5, 6);
        let ps = fusion_params(&cfg, c_e, c_o, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ev: Vec<f64> = (0..c_e).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ov: Vec<f64> = (0..c_o).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let perm = [2usize, 0, 4, 1, 3];

        let run = |ps: &ParamSet, ev: &[f64]| {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, ps, false);
            let e = fake_branch(&mut tape, ev.to_vec());
            let o = fake_branch(&mut tape, ov.clone());
            let pred = sf_forward(&mut tape, &bound, &cfg, &e, &o).unwrap();
            tape.data(pred.logits).to_vec()
        };
        let base = run(&ps, &ev);

        // Permute event entries and the event rows of the fusion head input.
        let ev_p: Vec<f64> = perm.iter().map(|&i| ev[i]).collect();
        let mut ps_p = ps.clone();
        {
            let w1 = ps_p.get_mut("fusion.head.w1").unwrap();
            let cols = cfg.hidden;
            let orig = w1.data.clone();
            for (new_row, &old_row) in perm.iter().enumerate() {
                w1.data[new_row * cols..(new_row + 1) * cols]
                    .copy_from_slice(&orig[old_row * cols..(old_row + 1) * cols]);
            }
        }
        let permuted = run(&ps_p, &ev_p);
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
