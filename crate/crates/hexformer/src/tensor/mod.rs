//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a flat buffer plus a shape. Gradient tracking is opt-in:
//! tensors registered on a [`Tape`](tape::Tape) (directly or through an
//! operation with a tracked input) carry a node id and participate in
//! `backward`. Broadcasting follows trailing-dimension alignment.

pub mod fdiff;
pub mod tape;

pub use fdiff::finite_diff_grad;
pub use tape::Tape;

use crate::error::{HexError, Result};
use crate::scalar::Scalar;

pub(crate) type NodeId = usize;

#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    node: Option<NodeId>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(HexError::Invalid(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            node: None,
        })
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel(shape)],
            node: None,
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub(crate) fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Drop the tape association, keeping the values.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of len {}", self.data.len());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn as_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Broadcast two shapes with trailing-dimension alignment.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` right-aligned against `out`, zeroed on broadcast dims.
pub(crate) fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let nd = out.len();
    let off = nd - shape.len();
    let mut eff = vec![0usize; nd];
    for i in 0..shape.len() {
        eff[off + i] = if shape[i] == 1 && out[off + i] != 1 { 0 } else { st[i] };
    }
    eff
}

/// Odometer loop over `out_shape`, yielding (linear out index, offset into a,
/// offset into b) with the given effective strides.
pub(crate) fn for_each2(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..n {
        f(i, oa, ob);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
        }
    }
}

/// Sum `data` (shaped `from`) down to `to`, undoing broadcasting.
pub(crate) fn reduce_to_shape<T: Scalar>(data: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return data.to_vec();
    }
    let mut out = vec![T::zero(); numel(to)];
    let st = bcast_strides(to, from);
    let sa = strides(from);
    for_each2(from, &sa, &st, |_, ia, ib| {
        out[ib] += data[ia];
    });
    out
}
