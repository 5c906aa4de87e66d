//! Central finite-difference gradient checker.

use super::tape::{Tape, TensorId};
use crate::error::Result;

/// A named parameter fed to a checked closure.
#[derive(Clone, Debug)]
pub struct CheckParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl CheckParam {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        CheckParam {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Analytic and numeric gradient at the worst element.
    pub worst: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamReport>,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Relative error with the floor used throughout the test suite.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of a deterministic scalar-valued closure
/// against central finite differences with step `h`.
///
/// The closure receives a fresh tape and one leaf per parameter, in order,
/// and must return a scalar tensor.
pub fn grad_check<F>(f: F, params: &[CheckParam], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| tape.leaf(&p.shape, p.data.clone(), true))
        .collect();
    let loss = f(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("leaf gradient").to_vec())
        .collect();

    let eval = |data: &[Vec<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = params
            .iter()
            .zip(data)
            .map(|(p, d)| tape.leaf(&p.shape, d.clone(), false))
            .collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.scalar_value(loss))
    };

    let base: Vec<Vec<f64>> = params.iter().map(|p| p.data.clone()).collect();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut max_err: f64 = 0.0;
        let mut worst = (0.0, 0.0);
        for ei in 0..p.data.len() {
            let mut plus = base.clone();
            plus[pi][ei] += h;
            let mut minus = base.clone();
            minus[pi][ei] -= h;
            let fp = eval(&plus)?;
            let fm = eval(&minus)?;
            let numeric = (fp - fm) / (2.0 * h);
            // The central difference carries rounding noise of about
            // eps*|f|/(2h); differences below that bound carry no signal, so
            // they cannot count as mismatches.
            let noise = (fp.abs() + fm.abs()) * f64::EPSILON / (2.0 * h) * 8.0;
            if (analytic[pi][ei] - numeric).abs() <= noise {
                continue;
            }
            let err = rel_err(analytic[pi][ei], numeric);
            if err > max_err {
                max_err = err;
                worst = (analytic[pi][ei], numeric);
            }
        }
        per_param.push(ParamReport {
            name: p.name.clone(),
            max_rel_err: max_err,
            worst,
        });
    }
    let pass = per_param.iter().all(|p| p.max_rel_err <= tol);
    Ok(GradCheckReport {
        per_param,
        tol,
        pass,
    })
}
