//! PCA projection of the learned classifier-head weight rows onto two axes.

use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::report::{fmt_float, Report};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoint {
    /// "event" or "object".
    pub kind: &'static str,
    pub class_index: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Number of usable principal axes (0, 1, or 2).
    pub rank: usize,
    pub eigenvalues: [f64; 2],
}

fn matvec(c: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| (0..d).map(|j| c[i * d + j] * v[j]).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Dominant eigenpair of a symmetric PSD matrix by power iteration. The sign
/// is fixed so the largest-magnitude component is positive.
fn top_eigenpair(c: &[f64], d: usize) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * 1e-3).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let mut w = matvec(c, d, &v);
        let n = normalize(&mut w);
        let delta: f64 = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = w;
        lambda = n;
        if delta < 1e-14 {
            break;
        }
    }
    let pivot = (0..d)
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0);
    if v[pivot] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    (lambda, v)
}

/// Projects `rows` (n x d, row-major as slices) onto their top two principal
/// components. Returns the 2-D coordinates, the usable rank, and the leading
/// eigenvalues of the sample covariance. Degenerate directions collapse to 0.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, usize, [f64; 2])> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Contract("pca needs at least 2 rows".into()));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Contract("pca rows must share a positive width".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(&x, &m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j] / (n - 1) as f64;
            }
        }
    }

    let (l1, v1) = top_eigenpair(&cov, d);
    // Deflate and repeat for the second axis.
    let mut cov2 = cov.clone();
    for i in 0..d {
        for j in 0..d {
            cov2[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (l2, v2) = top_eigenpair(&cov2, d);

    let scale = cov.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-12 * scale.max(1e-300);
    let rank = [l1, l2].iter().filter(|&&l| l > tol).count();

    let coords = centered
        .iter()
        .map(|r| {
            let x = if rank >= 1 {
                r.iter().zip(&v1).map(|(a, b)| a * b).sum()
            } else {
                0.0
            };
            let y = if rank >= 2 {
                r.iter().zip(&v2).map(|(a, b)| a * b).sum()
            } else {
                0.0
            };
            [x, y]
        })
        .collect();
    Ok((coords, rank, [l1, l2]))
}

/// Stacks the event and object head rows from a checkpoint and projects them.
pub fn export_projection(ckpt: &Checkpoint) -> Result<Projection> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (kind, name) in [("event", "audio.head.w"), ("object", "visual.head.w")] {
        if let Ok(p) = ckpt.params.get(name) {
            let d = p.shape[1];
            for (i, chunk) in p.data.chunks(d).enumerate() {
                rows.push(chunk.to_vec());
                labels.push((kind, i));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Contract(
            "checkpoint has no classifier head weights to project".into(),
        ));
    }
    let (coords, rank, eigenvalues) = pca_2d(&rows)?;
    let points = labels
        .into_iter()
        .zip(coords)
        .map(|((kind, class_index), [x, y])| ProjectedPoint {
            kind,
            class_index,
            x,
            y,
        })
        .collect();
    Ok(Projection {
        points,
        rank,
        eigenvalues,
    })
}

impl Projection {
    pub fn to_report(&self) -> Report {
        Report {
            title: "head-weight pca projection".to_string(),
            meta: vec![
                format!("rank: {}", self.rank),
                format!(
                    "eigenvalues: {} {}",
                    fmt_float(self.eigenvalues[0]),
                    fmt_float(self.eigenvalues[1])
                ),
            ],
            header: vec!["kind".into(), "class".into(), "x".into(), "y".into()],
            rows: self
                .points
                .iter()
                .map(|p| {
                    vec![
                        p.kind.to_string(),
                        p.class_index.to_string(),
                        fmt_float(p.x),
                        fmt_float(p.y),
                    ]
                })
                .collect(),
        }
    }
}
