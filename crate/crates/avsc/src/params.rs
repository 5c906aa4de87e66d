//! Named parameter storage shared by the model, optimizer, and checkpoints.
//!
//! Parameters live outside the tape; every forward pass binds them as fresh
//! leaves and collects gradients back by name after `backward`.

use crate::error::{Error, Result};
use crate::numcore::{Tape, TensorId};
use indexmap::IndexMap;
use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Insertion-ordered parameter set; iteration order is the creation order,
/// which makes initialization and optimizer traversal deterministic.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.insert(
            name.into(),
            ParamTensor {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, shape, data);
    }

    pub fn get(&self, name: &str) -> Result<&ParamTensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamTensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }
}

/// Tape bindings for one forward pass.
pub struct BoundParams {
    ids: IndexMap<String, TensorId>,
}

impl BoundParams {
    /// Wraps pre-existing leaf ids under parameter names. Used by gradient
    /// checks that re-run a model forward on externally created leaves.
    pub fn from_ids(names: &[String], ids: &[TensorId]) -> Self {
        let map = names.iter().cloned().zip(ids.iter().copied()).collect();
        BoundParams { ids: map }
    }

    pub fn bind(tape: &mut Tape, params: &ParamSet, requires_grad: bool) -> Self {
        let ids = params
            .iter()
            .map(|(name, p)| {
                (
                    name.clone(),
                    tape.leaf(&p.shape, p.data.clone(), requires_grad),
                )
            })
            .collect();
        BoundParams { ids }
    }

    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    /// Gradients by name after `tape.backward`.
    pub fn collect_grads(&self, tape: &Tape) -> IndexMap<String, Vec<f64>> {
        self.ids
            .iter()
            .map(|(name, &id)| {
                let g = tape
                    .grad(id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.data(id).len()]);
                (name.clone(), g)
            })
            .collect()
    }
}
