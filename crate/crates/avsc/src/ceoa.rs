//! Contrastive event-object alignment.
//!
//! Per sample, the K classes with the highest probabilities in each branch
//! select positive rows of that branch's classifier head; negatives come from
//! the K lowest probabilities (LKM) or a uniform draw outside the positive set
//! (RKM). The two pairwise contrastive losses compare positive-positive
//! against positive-negative dot-product matrices.

use crate::error::{Error, Result};
use crate::numcore::{Tape, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMode {
    /// Lowest-K mode: negatives are the K least probable classes.
    Lkm,
    /// Random-K mode: negatives drawn uniformly outside the positive set.
    Rkm,
}

impl std::fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NegativeMode::Lkm => write!(f, "LKM"),
            NegativeMode::Rkm => write!(f, "RKM"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub k: usize,
    pub mode: NegativeMode,
    pub rng_seed: u64,
    /// L2-normalize selected rows before the dot products. Off by default:
    /// the loss is defined on raw weight rows.
    pub normalize_rows: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            k: 3,
            mode: NegativeMode::Lkm,
            rng_seed: 0,
            normalize_rows: false,
        }
    }
}

impl ContrastiveConfig {
    /// Positives and negatives must not overlap in either modality.
    pub fn validate(&self, c_e: usize, c_o: usize) -> Result<()> {
        let cap = c_e.min(c_o) / 2;
        if self.k == 0 || self.k > cap {
            return Err(Error::Config(format!(
                "bank size K={} must satisfy 1 <= K <= min(C_e, C_o)/2 = {cap}",
                self.k
            )));
        }
        Ok(())
    }
}

/// The four selected weight-row matrices and the indices that produced them.
/// Rows are live views into the head weights: contrastive gradients flow into
/// exactly the selected rows.
pub struct ContrastiveBank {
    pub p_e: TensorId,
    pub n_e: TensorId,
    pub p_o: TensorId,
    pub n_o: TensorId,
    pub idx_p_e: Vec<usize>,
    pub idx_n_e: Vec<usize>,
    pub idx_p_o: Vec<usize>,
    pub idx_n_o: Vec<usize>,
}

/// Indices of the K largest values; ties broken by lower class index.
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Indices of the K smallest values; ties broken by lower class index.
pub fn bottom_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Uniform draw of K indices from `0..c` excluding `positives`, via a partial
/// Fisher-Yates shuffle of the complement pool (pool kept in ascending order
/// before shuffling so the draw is a pure function of the rng state).
fn random_k_outside(rng: &mut ChaCha8Rng, c: usize, positives: &[usize], k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..c).filter(|i| !positives.contains(i)).collect();
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

fn select_rows(
    tape: &mut Tape,
    head_w: TensorId,
    indices: &[usize],
    normalize: bool,
) -> Result<TensorId> {
    let rows = tape.row_select(head_w, indices)?;
    if !normalize {
        return Ok(rows);
    }
    // Row-wise L2 normalization built from primitives.
    let sq = tape.mul(rows, rows)?;
    let norms_sq = tape.mean_cols(sq)?;
    let d = tape.shape(rows)[1] as f64;
    let norms_sq = tape.scale(norms_sq, d);
    let norms_sq = tape.clamp(norms_sq, 1e-24, f64::INFINITY);
    let ln_n = tape.ln(norms_sq)?;
    let half = tape.scale(ln_n, -0.5);
    let inv = tape.exp(half);
    let dcols = tape.shape(rows)[1];
    let ones = tape.constant(&[1, dcols], vec![1.0; dcols]);
    let inv_mat = tape.matmul(inv, ones)?;
    tape.mul(rows, inv_mat)
}

/// Builds the per-sample bank from current branch probabilities.
/// Selection itself carries no gradient; `sample_index` keys the RKM draw so
/// runs are reproducible independent of batch size.
pub fn select_bank(
    tape: &mut Tape,
    probs_e: &[f64],
    probs_o: &[f64],
    event_head_w: TensorId,
    object_head_w: TensorId,
    cfg: &ContrastiveConfig,
    sample_index: usize,
) -> Result<ContrastiveBank> {
    cfg.validate(probs_e.len(), probs_o.len())?;
    let k = cfg.k;
    let idx_p_e = top_k_indices(probs_e, k);
    let idx_p_o = top_k_indices(probs_o, k);
    let (idx_n_e, idx_n_o) = match cfg.mode {
        NegativeMode::Lkm => (bottom_k_indices(probs_e, k), bottom_k_indices(probs_o, k)),
        NegativeMode::Rkm => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(sample_index as u64 + 1);
            let n_e = random_k_outside(&mut rng, probs_e.len(), &idx_p_e, k);
            let n_o = random_k_outside(&mut rng, probs_o.len(), &idx_p_o, k);
            (n_e, n_o)
        }
    };
    Ok(ContrastiveBank {
        p_e: select_rows(tape, event_head_w, &idx_p_e, cfg.normalize_rows)?,
        n_e: select_rows(tape, event_head_w, &idx_n_e, cfg.normalize_rows)?,
        p_o: select_rows(tape, object_head_w, &idx_p_o, cfg.normalize_rows)?,
        n_o: select_rows(tape, object_head_w, &idx_n_o, cfg.normalize_rows)?,
        idx_p_e,
        idx_n_e,
        idx_p_o,
        idx_n_o,
    })
}

fn pairwise_contrastive(
    tape: &mut Tape,
    anchor: TensorId,
    positive: TensorId,
    negative: TensorId,
) -> Result<TensorId> {
    let pos_t = tape.transpose(positive)?;
    let neg_t = tape.transpose(negative)?;
    let pp = tape.matmul(anchor, pos_t)?;
    let pn = tape.matmul(anchor, neg_t)?;
    let gap = tape.sub(pp, pn)?;
    let sig = tape.sigmoid(gap);
    let mean = tape.mean_all(sig);
    // Guard against ln(0) when every gap is deeply negative.
    let mean = tape.clamp(mean, 1e-300, 1.0);
    let ln = tape.ln(mean)?;
    Ok(tape.scale(ln, -1.0))
}

/// `L_e2o = -ln(mean(sigma(P_e P_o^T - P_e N_o^T)))`.
pub fn contrastive_loss_e2o(tape: &mut Tape, bank: &ContrastiveBank) -> Result<TensorId> {
    pairwise_contrastive(tape, bank.p_e, bank.p_o, bank.n_o)
}

/// `L_o2e = -ln(mean(sigma(P_o P_e^T - P_o N_e^T)))`.
pub fn contrastive_loss_o2e(tape: &mut Tape, bank: &ContrastiveBank) -> Result<TensorId> {
    pairwise_contrastive(tape, bank.p_o, bank.p_e, bank.n_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, sigmoid_scalar, CheckParam};
    use rand::Rng;

    fn bank_from_rows(
        tape: &mut Tape,
        p_e: (usize, usize, Vec<f64>),
        n_e: Vec<f64>,
        p_o: Vec<f64>,
        n_o: Vec<f64>,
    ) -> ContrastiveBank {
        let (k, d, pe) = p_e;
        ContrastiveBank {
            p_e: tape.constant(&[k, d], pe),
            n_e: tape.constant(&[k, d], n_e),
            p_o: tape.constant(&[k, d], p_o),
            n_o: tape.constant(&[k, d], n_o),
            idx_p_e: vec![],
            idx_n_e: vec![],
            idx_p_o: vec![],
            idx_n_o: vec![],
        }
    }

    #[test]
    fn selection_argmax_argmin() {
        let probs = [0.9, 0.1, 0.8, 0.2];
        assert_eq!(top_k_indices(&probs, 1), vec![0]);
        assert_eq!(bottom_k_indices(&probs, 1), vec![1]);
    }

    #[test]
    fn selection_tie_break_by_lower_index() {
        let probs = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(top_k_indices(&probs, 2), vec![0, 1]);
        assert_eq!(bottom_k_indices(&probs, 2), vec![0, 1]);
    }

    #[test]
    fn selection_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let probs: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut order: Vec<usize> = (0..10).collect();
            order.sort_by(|&a, &b| {
                probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b))
            });
            assert_eq!(top_k_indices(&probs, 3), order[..3].to_vec());
            let mut rev = order.clone();
            rev.reverse();
            // Reverse of descending order breaks ties by higher index, so
            // recompute ascending with the stated tie rule.
            rev.sort_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap().then(a.cmp(&b)));
            assert_eq!(bottom_k_indices(&probs, 3), rev[..3].to_vec());
        }
    }

    #[test]
    fn rkm_disjoint_from_positives_and_reproducible() {
        let cfg = ContrastiveConfig {
            k: 3,
            mode: NegativeMode::Rkm,
            rng_seed: 9,
            normalize_rows: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for sample in 0..50 {
            let probs_e: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
            let probs_o: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
            let run = |tape: &mut Tape| {
                let we = tape.constant(&[12, 4], vec![0.1; 48]);
                let wo = tape.constant(&[16, 4], vec![0.1; 64]);
                select_bank(tape, &probs_e, &probs_o, we, wo, &cfg, sample).unwrap()
            };
            let mut t1 = Tape::new();
            let b1 = run(&mut t1);
            let mut t2 = Tape::new();
            let b2 = run(&mut t2);
            assert_eq!(b1.idx_n_e, b2.idx_n_e);
            assert_eq!(b1.idx_n_o, b2.idx_n_o);
            for i in &b1.idx_n_e {
                assert!(!b1.idx_p_e.contains(i));
            }
            for i in &b1.idx_n_o {
                assert!(!b1.idx_p_o.contains(i));
            }
        }
    }

    #[test]
    fn invalid_k_rejected() {
        let cfg = ContrastiveConfig {
            k: 7,
            ..ContrastiveConfig::default()
        };
        assert!(cfg.validate(12, 16).is_err());
        let cfg = ContrastiveConfig {
            k: 0,
            ..ContrastiveConfig::default()
        };
        assert!(cfg.validate(12, 16).is_err());
    }

    #[test]
    fn zero_gap_gives_ln_2() {
        let mut tape = Tape::new();
        let rows = vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.7];
        let bank = bank_from_rows(
            &mut tape,
            (2, 3, rows.clone()),
            rows.clone(),
            rows.clone(),
            rows.clone(),
        );
        let e2o = contrastive_loss_e2o(&mut tape, &bank).unwrap();
        let o2e = contrastive_loss_o2e(&mut tape, &bank).unwrap();
        assert!((tape.scalar_value(e2o) - 2f64.ln()).abs() < 1e-12);
        assert!((tape.scalar_value(o2e) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_gap_drives_loss_to_zero() {
        // P_e·P_o^T - P_e·N_o^T = +40 in every entry.
        let mut tape = Tape::new();
        let p_e = tape.constant(&[1, 1], vec![1.0]);
        let p_o = tape.constant(&[1, 1], vec![40.0]);
        let n_o = tape.constant(&[1, 1], vec![0.0]);
        let bank = ContrastiveBank {
            p_e,
            n_e: n_o,
            p_o,
            n_o,
            idx_p_e: vec![],
            idx_n_e: vec![],
            idx_p_o: vec![],
            idx_n_o: vec![],
        };
        let loss = contrastive_loss_e2o(&mut tape, &bank).unwrap();
        assert!(tape.scalar_value(loss).abs() < 1e-12);
    }

    /// Direct-formula oracle in both algebraic forms.
    fn oracle_e2o(p_e: &[f64], p_o: &[f64], n_o: &[f64], k: usize, d: usize) -> (f64, f64) {
        let dot = |a: &[f64], b: &[f64], i: usize, j: usize| -> f64 {
            (0..d).map(|c| a[i * d + c] * b[j * d + c]).sum()
        };
        let mut sig_sum = 0.0;
        let mut quot_sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                let pp = dot(p_e, p_o, i, j);
                let pn = dot(p_e, n_o, i, j);
                sig_sum += sigmoid_scalar(pp - pn);
                quot_sum += pp.exp() / (pp.exp() + pn.exp());
            }
        }
        let m = (k * k) as f64;
        (-(sig_sum / m).ln(), -(quot_sum / m).ln())
    }

    #[test]
    fn random_bank_matches_both_oracle_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (k, d) = (2, 3);
        for _ in 0..20 {
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let p_e = gen(&mut rng);
            let p_o = gen(&mut rng);
            let n_o = gen(&mut rng);
            let (sig_form, quot_form) = oracle_e2o(&p_e, &p_o, &n_o, k, d);
            assert!((sig_form - quot_form).abs() < 1e-12);
            let mut tape = Tape::new();
            let bank = bank_from_rows(&mut tape, (k, d, p_e), n_o.clone(), p_o, n_o);
            let loss = contrastive_loss_e2o(&mut tape, &bank).unwrap();
            assert!((tape.scalar_value(loss) - sig_form).abs() < 1e-12);
            assert!(tape.scalar_value(loss) > 0.0);
        }
    }

    #[test]
    fn o2e_with_ne_equal_pe_is_ln_2() {
        let mut tape = Tape::new();
        let rows = vec![0.4, -0.6, 0.2, 0.9];
        let other = vec![1.0, 2.0, -1.0, 0.5];
        let bank = bank_from_rows(&mut tape, (2, 2, rows.clone()), rows, other.clone(), other);
        let loss = contrastive_loss_o2e(&mut tape, &bank).unwrap();
        assert!((tape.scalar_value(loss) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_flow_into_selected_rows_only() {
        let cfg = ContrastiveConfig {
            k: 1,
            ..ContrastiveConfig::default()
        };
        let probs_e = [0.9, 0.1, 0.5, 0.5];
        let probs_o = [0.8, 0.2, 0.5, 0.5];
        let mut tape = Tape::new();
        let we = tape.leaf(&[4, 3], (0..12).map(|i| i as f64 * 0.1).collect(), true);
        let wo = tape.leaf(&[4, 3], (0..12).map(|i| 1.0 - i as f64 * 0.05).collect(), true);
        let bank = select_bank(&mut tape, &probs_e, &probs_o, we, wo, &cfg, 0).unwrap();
        let loss = contrastive_loss_e2o(&mut tape, &bank).unwrap();
        tape.backward(loss).unwrap();
        let ge = tape.grad(we).unwrap();
        // Only P_e row 0 participates in e2o; N_e (row 1) must get zero grad.
        assert!(ge[0..3].iter().any(|&g| g != 0.0));
        assert!(ge[3..6].iter().all(|&g| g == 0.0));
        assert!(ge[6..12].iter().all(|&g| g == 0.0));
        let go = tape.grad(wo).unwrap();
        // P_o row 0 and N_o row 1 both participate.
        assert!(go[0..3].iter().any(|&g| g != 0.0));
        assert!(go[3..6].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (k, d) = (2, 3);
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let report = grad_check(
                |t, ids| {
                    let bank = ContrastiveBank {
                        p_e: ids[0],
                        n_e: ids[1],
                        p_o: ids[2],
                        n_o: ids[3],
                        idx_p_e: vec![],
                        idx_n_e: vec![],
                        idx_p_o: vec![],
                        idx_n_o: vec![],
                    };
                    contrastive_loss_e2o(t, &bank)
                },
                &[
                    CheckParam::new("p_e", &[k, d], gen(&mut rng)),
                    CheckParam::new("n_e", &[k, d], gen(&mut rng)),
                    CheckParam::new("p_o", &[k, d], gen(&mut rng)),
                    CheckParam::new("n_o", &[k, d], gen(&mut rng)),
                ],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.pass, "seed {seed}: {}", report.max_rel_err());
            // N_e is off the e2o path entirely.
            assert_eq!(report.per_param[1].max_rel_err, 0.0);
        }
    }

    #[test]
    fn small_gradient_step_descends() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let (k, d) = (2, 3);
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..k * d).map(|_| rng.gen_range(-0.5..0.5)).collect()
            };
            let (mut pe, mut po, mut no) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
            let eval_and_grads = |pe: &[f64], po: &[f64], no: &[f64]| {
                let mut t = Tape::new();
                let bank = ContrastiveBank {
                    p_e: t.leaf(&[k, d], pe.to_vec(), true),
                    n_e: t.leaf(&[k, d], no.to_vec(), true),
                    p_o: t.leaf(&[k, d], po.to_vec(), true),
                    n_o: t.leaf(&[k, d], no.to_vec(), true),
                    idx_p_e: vec![],
                    idx_n_e: vec![],
                    idx_p_o: vec![],
                    idx_n_o: vec![],
                };
                let loss = contrastive_loss_e2o(&mut t, &bank).unwrap();
                let v = t.scalar_value(loss);
                t.backward(loss).unwrap();
                (
                    v,
                    t.grad(bank.p_e).unwrap().to_vec(),
                    t.grad(bank.p_o).unwrap().to_vec(),
                    t.grad(bank.n_o).unwrap().to_vec(),
                )
            };
            let (before, gpe, gpo, gno) = eval_and_grads(&pe, &po, &no);
            let lr = 1e-3;
            for (v, g) in pe.iter_mut().zip(&gpe) {
                *v -= lr * g;
            }
            for (v, g) in po.iter_mut().zip(&gpo) {
                *v -= lr * g;
            }
            for (v, g) in no.iter_mut().zip(&gno) {
                *v -= lr * g;
            }
            let (after, ..) = eval_and_grads(&pe, &po, &no);
            assert!(after <= before, "seed {seed}: {after} > {before}");
        }
    }
}
