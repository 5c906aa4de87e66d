//! Define-by-run reverse-mode autodiff tape.
//!
//! Every forward pass builds a fresh [`Tape`]. Operations record their output
//! value together with a closure that maps the incoming gradient to gradient
//! contributions for each parent. [`Tape::backward`] replays the records in
//! reverse, visiting each node exactly once.

use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct TensorId(pub(crate) usize);

/// Gradient contributions for each parent, aligned with the parent list.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    /// True for leaves created with `requires_grad` and for any node with such
    /// a leaf among its ancestors.
    pub(crate) needs_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) parents: Vec<TensorId>,
    pub(crate) backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Creates a leaf tensor. `requires_grad` leaves receive a gradient buffer
    /// after [`Tape::backward`].
    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data length must match shape"
        );
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape: shape.to_vec(),
            data,
            needs_grad: requires_grad,
            grad: None,
            parents: Vec::new(),
            backward: None,
        });
        id
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> TensorId {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.constant(&[1, 1], vec![value])
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<TensorId>,
        backward: BackwardFn,
    ) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            needs_grad,
            grad: None,
            parents,
            backward: if needs_grad { Some(backward) } else { None },
        });
        id
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Scalar value of a `[1,1]` tensor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub(crate) fn mat_dims(&self, id: TensorId, context: &str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::shape(format!("{context}: expected matrix"), s, &[]));
        }
        Ok((s[0], s[1]))
    }

    /// Runs the chain rule backward from a scalar loss, populating `grad` on
    /// every `requires_grad` leaf (zeros for leaves not on any path).
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(Error::Contract(
                "backward already run on this tape; rebuild the tape before calling again".into(),
            ));
        }
        self.backward_done = true;

        for node in &mut self.nodes {
            if node.needs_grad {
                node.grad = Some(vec![0.0; node.data.len()]);
            }
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] = 1.0;
        }

        for i in (0..=loss.0).rev() {
            let Some(out_grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            let Some(backward) = self.nodes[i].backward.as_ref() else {
                continue;
            };
            if out_grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let contributions = backward(&out_grad);
            let parents = self.nodes[i].parents.clone();
            debug_assert_eq!(contributions.len(), parents.len());
            for (parent, contrib) in parents.into_iter().zip(contributions) {
                if let Some(pg) = self.nodes[parent.0].grad.as_mut() {
                    debug_assert_eq!(pg.len(), contrib.len());
                    for (dst, src) in pg.iter_mut().zip(&contrib) {
                        *dst += src;
                    }
                }
            }
        }
        Ok(())
    }
}
