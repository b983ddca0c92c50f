//! Operation tape for reverse-mode differentiation.
//!
//! Each recorded node stores the ids of its tracked parents and a backward
//! closure that maps the node's output gradient to gradient contributions
//! for those parents. Closures capture copies of whatever forward values
//! they need, so the backward pass never re-reads other nodes.

use super::{
    bcast_strides, broadcast_shapes, for_each2, numel, reduce_to_shape, NodeId, Tensor,
};
use crate::error::{HexError, Result};
use crate::scalar::Scalar;

type BackFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T> {
    parents: Vec<NodeId>,
    back: Option<BackFn<T>>,
}

/// Records operations for one forward pass. A tape and its tensors form a
/// single-threaded unit; independent tapes may live on separate threads.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    /// Leaves registered under a name (parameter bindings).
    pub(crate) bindings: Vec<(String, NodeId, usize)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            bindings: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, parents: Vec<NodeId>, back: BackFn<T>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            parents,
            back: Some(back),
        });
        id
    }

    fn push_leaf(&mut self) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            parents: Vec::new(),
            back: None,
        });
        id
    }

    /// Register a tensor as a tracked leaf.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push_leaf();
        t.clone().with_node(id)
    }

    /// Register a tracked leaf remembered under `name`; its gradient can be
    /// collected with [`Tape::grad_of_binding`] after backward.
    pub fn leaf_named(&mut self, name: &str, t: &Tensor<T>) -> Tensor<T> {
        let out = self.leaf(t);
        self.bindings
            .push((name.to_string(), out.node().unwrap(), t.len()));
        out
    }

    /// Gradient buffer of a tensor after backward.
    pub fn grad(&self, t: &Tensor<T>) -> Option<&[T]> {
        let id = t.node()?;
        self.grads.get(id)?.as_deref()
    }

    /// Iterate named bindings with their gradients (zeros when unreached).
    pub fn binding_grads(&self) -> impl Iterator<Item = (&str, Vec<T>)> + '_ {
        self.bindings.iter().map(|(name, id, len)| {
            let g = self
                .grads
                .get(*id)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![T::zero(); *len]);
            (name.as_str(), g)
        })
    }

    /// Run the backward pass from a scalar root. The tape is consumed: a
    /// second call is an error unless [`Tape::backward_retain`] is used.
    pub fn backward(&mut self, root: &Tensor<T>) -> Result<()> {
        self.backward_impl(root, false)
    }

    /// Backward pass that leaves the tape reusable (gradients are replaced
    /// on each call).
    pub fn backward_retain(&mut self, root: &Tensor<T>) -> Result<()> {
        self.backward_impl(root, true)
    }

    fn backward_impl(&mut self, root: &Tensor<T>, retain: bool) -> Result<()> {
        if self.consumed {
            return Err(HexError::TapeConsumed);
        }
        if root.len() != 1 {
            return Err(HexError::NonScalarRoot {
                shape: root.shape().to_vec(),
            });
        }
        let root_id = root.node().ok_or(HexError::UntrackedRoot)?;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root_id] = Some(vec![T::one()]);
        for id in (0..=root_id).rev() {
            if grads[id].is_none() {
                continue;
            }
            let g = std::mem::take(&mut grads[id]).unwrap();
            if let Some(back) = &self.nodes[id].back {
                let contribs = back(&g);
                debug_assert_eq!(contribs.len(), self.nodes[id].parents.len());
                for (pi, contrib) in self.nodes[id].parents.iter().zip(contribs) {
                    match &mut grads[*pi] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contrib) {
                                *a += *c;
                            }
                        }
                        slot => *slot = Some(contrib),
                    }
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        if !retain {
            self.consumed = true;
        }
        Ok(())
    }

    // ---- elementwise binary ----------------------------------------------

    fn binary(
        &mut self,
        op: &'static str,
        a: &Tensor<T>,
        b: &Tensor<T>,
        fwd: impl Fn(T, T) -> T,
        // partials given (a_i, b_i): (df/da, df/db)
        dfd: impl Fn(T, T) -> (T, T) + 'static,
    ) -> Result<Tensor<T>> {
        let out_shape = broadcast_shapes(a.shape(), b.shape()).ok_or(HexError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let sa = bcast_strides(a.shape(), &out_shape);
        let sb = bcast_strides(b.shape(), &out_shape);
        let mut data = vec![T::zero(); numel(&out_shape)];
        let (ad, bd) = (a.data(), b.data());
        if a.shape() == out_shape.as_slice() && b.shape() == out_shape.as_slice() {
            for i in 0..data.len() {
                data[i] = fwd(ad[i], bd[i]);
            }
        } else {
            for_each2(&out_shape, &sa, &sb, |i, ia, ib| {
                data[i] = fwd(ad[ia], bd[ib]);
            });
        }
        let out = Tensor::from_vec(data, &out_shape)?;
        let mut parents = Vec::new();
        let track_a = a.node().is_some();
        let track_b = b.node().is_some();
        if !track_a && !track_b {
            return Ok(out);
        }
        if let Some(id) = a.node() {
            parents.push(id);
        }
        if let Some(id) = b.node() {
            parents.push(id);
        }
        let (ad, bd) = (a.data().to_vec(), b.data().to_vec());
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        let osh = out_shape.clone();
        let back: BackFn<T> = Box::new(move |og: &[T]| {
            let sa = bcast_strides(&ash, &osh);
            let sb = bcast_strides(&bsh, &osh);
            let mut ga_full = vec![T::zero(); og.len()];
            let mut gb_full = vec![T::zero(); og.len()];
            for_each2(&osh, &sa, &sb, |i, ia, ib| {
                let (da, db) = dfd(ad[ia], bd[ib]);
                ga_full[i] = og[i] * da;
                gb_full[i] = og[i] * db;
            });
            let mut contribs = Vec::new();
            if track_a {
                contribs.push(reduce_to_shape(&ga_full, &osh, &ash));
            }
            if track_b {
                contribs.push(reduce_to_shape(&gb_full, &osh, &bsh));
            }
            contribs
        });
        let id = self.push(parents, back);
        Ok(out.with_node(id))
    }

    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("add", a, b, |x, y| x + y, |_, _| (T::one(), T::one()))
    }

    pub fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("mul", a, b, |x, y| x * y, |x, y| (y, x))
    }

    /// Division; the backward pass guards the denominator with a small
    /// epsilon so 0/0 never produces NaN gradients.
    pub fn div(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let eps = T::from_f64(1e-30);
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            move |x, y| {
                let yg = if y.abs() < eps {
                    if y >= T::zero() {
                        eps
                    } else {
                        -eps
                    }
                } else {
                    y
                };
                (T::one() / yg, -x / (yg * yg))
            },
        )
    }

    // ---- elementwise unary -----------------------------------------------

    fn unary(
        &mut self,
        a: &Tensor<T>,
        fwd: impl Fn(T) -> T,
        // derivative given (x, y=f(x))
        dfd: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = a.data().iter().map(|&x| fwd(x)).collect();
        let out = Tensor {
            shape: a.shape().to_vec(),
            data,
            node: None,
        };
        match a.node() {
            None => out,
            Some(pid) => {
                let xd = a.data().to_vec();
                let yd = out.data.clone();
                let back: BackFn<T> = Box::new(move |og: &[T]| {
                    let g = og
                        .iter()
                        .zip(xd.iter().zip(&yd))
                        .map(|(&o, (&x, &y))| o * dfd(x, y))
                        .collect();
                    vec![g]
                });
                let id = self.push(vec![pid], back);
                out.with_node(id)
            }
        }
    }

    pub fn neg(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| -x, |_, _| -T::one())
    }

    pub fn sqrt(&mut self, a: &Tensor<T>) -> Tensor<T> {
        let eps = T::from_f64(1e-30);
        self.unary(a, |x| x.sqrt(), move |_, y| {
            T::one() / ((y + y).max(eps))
        })
    }

    pub fn exp(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sigmoid(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(
            a,
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn cosh(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| x.cosh(), |x, _| x.sinh())
    }

    pub fn sinh(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| x.sinh(), |x, _| x.cosh())
    }

    /// acosh with the input clamped to >= 1 + 1e-12: rounding in Lorentz
    /// inner products can push arguments marginally below 1.
    pub fn acosh(&mut self, a: &Tensor<T>) -> Tensor<T> {
        let lo = T::one() + T::from_f64(1e-12);
        self.unary(
            a,
            move |x| x.max(T::one()).acosh(),
            move |x, _| {
                let x = x.max(lo);
                T::one() / (x * x - T::one()).sqrt()
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: &Tensor<T>) -> Tensor<T> {
        let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let three = T::from_f64(3.0);
        self.unary(
            a,
            move |x| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * x * (T::one() + t)
            },
            move |x, _| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                let du = c * (T::one() + three * k * x * x);
                half * (T::one() + t) + half * x * (T::one() - t * t) * du
            },
        )
    }

    pub fn leaky_relu(&mut self, a: &Tensor<T>, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        self.unary(
            a,
            move |x| if x >= T::zero() { x } else { s * x },
            move |x, _| if x >= T::zero() { T::one() } else { s },
        )
    }

    pub fn abs(&mut self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| x.abs(), |x, _| {
            if x >= T::zero() {
                T::one()
            } else {
                -T::one()
            }
        })
    }

    /// max(x, c) with zero gradient in the clamped region.
    pub fn clamp_min(&mut self, a: &Tensor<T>, c: T) -> Tensor<T> {
        self.unary(
            a,
            move |x| x.max(c),
            move |x, _| if x > c { T::one() } else { T::zero() },
        )
    }

    pub fn add_scalar(&mut self, a: &Tensor<T>, c: T) -> Tensor<T> {
        self.unary(a, move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(&mut self, a: &Tensor<T>, c: T) -> Tensor<T> {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    // ---- fused hyperbolic kernels ----------------------------------------
    //
    // The exponential map only needs cosh and sinh of alpha = sqrt(s) through
    // the even functions cosh(sqrt(s)) and sinh(sqrt(s))/sqrt(s), both smooth
    // in s >= 0. Expressing them as primitives of s keeps the map and its
    // gradient finite at s -> 0 without any graph-level branching.

    /// cosh(sqrt(s)) for s >= 0 (series near 0).
    pub fn cosh_sqrt(&mut self, s: &Tensor<T>) -> Result<Tensor<T>> {
        check_spacelike("cosh_sqrt", s)?;
        Ok(self.unary(s, cosh_sqrt_val, |x, _| {
            sinhc_sqrt_val(x) / T::from_f64(2.0)
        }))
    }

    /// sinh(sqrt(s))/sqrt(s) for s >= 0 (series near 0; value 1 at s = 0).
    pub fn sinhc_sqrt(&mut self, s: &Tensor<T>) -> Result<Tensor<T>> {
        check_spacelike("sinhc_sqrt", s)?;
        Ok(self.unary(s, sinhc_sqrt_val, |x, _| sinhc_sqrt_deriv(x)))
    }

    /// acosh(beta)/sqrt(beta^2 - 1), the radial factor of the logarithmic
    /// map. Slightly sub-1 inputs (rounding error) evaluate through the
    /// series continuation; values further below 1 are rejected (points off
    /// the manifold sheet).
    pub fn acosh_ratio(&mut self, beta: &Tensor<T>) -> Result<Tensor<T>> {
        let allow = T::from_f64(1e-5).max(T::from_f64(100.0) * T::epsilon());
        for &b in beta.data() {
            if !b.is_finite() {
                return Err(HexError::NonFinite {
                    context: "acosh_ratio input".into(),
                });
            }
            if b < T::one() - allow * T::one().max(b.abs()) {
                return Err(HexError::Domain {
                    op: "acosh_ratio",
                    msg: format!("beta = {b} < 1 beyond clamp tolerance"),
                });
            }
        }
        Ok(self.unary(beta, acosh_ratio_val, |x, _| acosh_ratio_deriv(x)))
    }

    // ---- matmul and layout -----------------------------------------------

    /// Batched matrix product: (..,m,k) x (..,k,n) -> (..,m,n) with leading
    /// batch dimensions broadcast. 1-D operands are promoted to a row/column.
    pub fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (ash, a_promoted) = promote_2d(a.shape(), true);
        let (bsh, b_promoted) = promote_2d(b.shape(), false);
        let (out_data, mut out_shape) =
            matmul_raw("matmul", a.data(), &ash, b.data(), &bsh, false, false)?;
        // squeeze promoted dims back off
        if a_promoted {
            let d = out_shape.len();
            out_shape.remove(d - 2);
        }
        if b_promoted {
            out_shape.pop();
        }
        let out = Tensor::from_vec(out_data, &out_shape)?;
        let track_a = a.node().is_some();
        let track_b = b.node().is_some();
        if !track_a && !track_b {
            return Ok(out);
        }
        let mut parents = Vec::new();
        if let Some(id) = a.node() {
            parents.push(id);
        }
        if let Some(id) = b.node() {
            parents.push(id);
        }
        let ad = a.data().to_vec();
        let bd = b.data().to_vec();
        let (ash_c, bsh_c) = (ash.clone(), bsh.clone());
        // gradient flows with the promoted (>=2-D) shapes; the flat buffers
        // are identical so reshaping is free
        let osh: Vec<usize> = {
            let nb = ash.len().max(bsh.len()) - 2;
            let mut s = broadcast_shapes(&ash[..ash.len() - 2], &bsh[..bsh.len() - 2]).unwrap();
            while s.len() < nb {
                s.insert(0, 1);
            }
            s.push(ash[ash.len() - 2]);
            s.push(bsh[bsh.len() - 1]);
            s
        };
        let back: BackFn<T> = Box::new(move |og: &[T]| {
            let mut contribs = Vec::new();
            if track_a {
                // dA = dC . B^T
                let (ga, gash) =
                    matmul_raw("matmul-back", og, &osh, &bd, &bsh_c, false, true).unwrap();
                contribs.push(reduce_to_shape(&ga, &gash, &ash_c));
            }
            if track_b {
                // dB = A^T . dC
                let (gb, gbsh) =
                    matmul_raw("matmul-back", &ad, &ash_c, og, &osh, true, false).unwrap();
                contribs.push(reduce_to_shape(&gb, &gbsh, &bsh_c));
            }
            contribs
        });
        let id = self.push(parents, back);
        Ok(out.with_node(id))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        if a.ndim() < 2 {
            return Err(HexError::Invalid(
                "transpose_last2 needs >= 2 dims".into(),
            ));
        }
        let (data, shape) = transpose_raw(a.data(), a.shape());
        let out = Tensor::from_vec(data, &shape)?;
        match a.node() {
            None => Ok(out),
            Some(pid) => {
                let osh = shape.clone();
                let back: BackFn<T> = Box::new(move |og: &[T]| {
                    let (g, _) = transpose_raw(og, &osh);
                    vec![g]
                });
                let id = self.push(vec![pid], back);
                Ok(out.with_node(id))
            }
        }
    }

    pub fn reshape(&mut self, a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != a.len() {
            return Err(HexError::Invalid(format!(
                "reshape {:?} -> {:?}: element count mismatch",
                a.shape(),
                shape
            )));
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: a.data().to_vec(),
            node: None,
        };
        match a.node() {
            None => Ok(out),
            Some(pid) => {
                let back: BackFn<T> = Box::new(move |og: &[T]| vec![og.to_vec()]);
                let id = self.push(vec![pid], back);
                Ok(out.with_node(id))
            }
        }
    }

    /// Contiguous sub-range along `axis`.
    pub fn narrow(
        &mut self,
        a: &Tensor<T>,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Tensor<T>> {
        let sh = a.shape();
        if axis >= sh.len() {
            return Err(HexError::InvalidAxis {
                axis,
                shape: sh.to_vec(),
            });
        }
        if start + len > sh[axis] {
            return Err(HexError::Invalid(format!(
                "narrow [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                sh
            )));
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let ext = sh[axis];
        let mut out_shape = sh.to_vec();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            data.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let out = Tensor::from_vec(data, &out_shape)?;
        match a.node() {
            None => Ok(out),
            Some(pid) => {
                let in_len = a.len();
                let back: BackFn<T> = Box::new(move |og: &[T]| {
                    let mut g = vec![T::zero(); in_len];
                    for o in 0..outer {
                        let dst = o * ext * inner + start * inner;
                        let src = o * len * inner;
                        g[dst..dst + len * inner].copy_from_slice(&og[src..src + len * inner]);
                    }
                    vec![g]
                });
                let id = self.push(vec![pid], back);
                Ok(out.with_node(id))
            }
        }
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&mut self, parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(HexError::Invalid("concat of zero tensors".into()));
        }
        let sh0 = parts[0].shape();
        if axis >= sh0.len() {
            return Err(HexError::InvalidAxis {
                axis,
                shape: sh0.to_vec(),
            });
        }
        let mut ext_total = 0;
        for p in parts {
            let sh = p.shape();
            if sh.len() != sh0.len()
                || sh
                    .iter()
                    .zip(sh0)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(HexError::ShapeMismatch {
                    op: "concat",
                    lhs: sh0.to_vec(),
                    rhs: sh.to_vec(),
                });
            }
            ext_total += sh[axis];
        }
        let outer: usize = sh0[..axis].iter().product();
        let inner: usize = sh0[axis + 1..].iter().product();
        let mut out_shape = sh0.to_vec();
        out_shape[axis] = ext_total;
        let mut data = vec![T::zero(); outer * ext_total * inner];
        let mut offset = 0;
        let mut spans = Vec::new(); // (axis offset, extent) per part
        for p in parts {
            let ext = p.shape()[axis];
            for o in 0..outer {
                let dst = o * ext_total * inner + offset * inner;
                let src = o * ext * inner;
                data[dst..dst + ext * inner].copy_from_slice(&p.data()[src..src + ext * inner]);
            }
            spans.push((offset, ext));
            offset += ext;
        }
        let out = Tensor::from_vec(data, &out_shape)?;
        let tracked: Vec<(usize, (usize, usize))> = parts
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.node().map(|id| (id, spans[i])))
            .collect();
        if tracked.is_empty() {
            return Ok(out);
        }
        let parents: Vec<NodeId> = tracked.iter().map(|(id, _)| *id).collect();
        let back: BackFn<T> = Box::new(move |og: &[T]| {
            tracked
                .iter()
                .map(|&(_, (off, ext))| {
                    let mut g = vec![T::zero(); outer * ext * inner];
                    for o in 0..outer {
                        let src = o * ext_total * inner + off * inner;
                        let dst = o * ext * inner;
                        g[dst..dst + ext * inner].copy_from_slice(&og[src..src + ext * inner]);
                    }
                    g
                })
                .collect()
        });
        let id = self.push(parents, back);
        Ok(out.with_node(id))
    }

    // ---- reductions -------------------------------------------------------

    fn reduce(
        &mut self,
        a: &Tensor<T>,
        axis: usize,
        keepdim: bool,
        kind: ReduceKind,
    ) -> Result<Tensor<T>> {
        let sh = a.shape();
        if axis >= sh.len() {
            return Err(HexError::InvalidAxis {
                axis,
                shape: sh.to_vec(),
            });
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let ext = sh[axis];
        let mut data = vec![T::zero(); outer * inner];
        let mut argmax = vec![0usize; if kind == ReduceKind::Max { outer * inner } else { 0 }];
        for o in 0..outer {
            for j in 0..inner {
                let mut acc = match kind {
                    ReduceKind::Max => T::neg_infinity(),
                    _ => T::zero(),
                };
                let mut arg = 0usize;
                for i in 0..ext {
                    let v = a.data()[o * ext * inner + i * inner + j];
                    match kind {
                        ReduceKind::Sum | ReduceKind::Mean => acc += v,
                        ReduceKind::Max => {
                            if v > acc {
                                acc = v;
                                arg = i;
                            }
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    acc /= T::from_usize(ext);
                }
                data[o * inner + j] = acc;
                if kind == ReduceKind::Max {
                    argmax[o * inner + j] = arg;
                }
            }
        }
        let mut out_shape = sh.to_vec();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let out = Tensor::from_vec(data, &out_shape)?;
        match a.node() {
            None => Ok(out),
            Some(pid) => {
                let in_len = a.len();
                let back: BackFn<T> = Box::new(move |og: &[T]| {
                    let mut g = vec![T::zero(); in_len];
                    for o in 0..outer {
                        for j in 0..inner {
                            let go = og[o * inner + j];
                            match kind {
                                ReduceKind::Sum => {
                                    for i in 0..ext {
                                        g[o * ext * inner + i * inner + j] += go;
                                    }
                                }
                                ReduceKind::Mean => {
                                    let v = go / T::from_usize(ext);
                                    for i in 0..ext {
                                        g[o * ext * inner + i * inner + j] += v;
                                    }
                                }
                                ReduceKind::Max => {
                                    let i = argmax[o * inner + j];
                                    g[o * ext * inner + i * inner + j] += go;
                                }
                            }
                        }
                    }
                    vec![g]
                });
                let id = self.push(vec![pid], back);
                Ok(out.with_node(id))
            }
        }
    }

    pub fn sum(&mut self, a: &Tensor<T>, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce(a, axis, keepdim, ReduceKind::Sum)
    }

    pub fn mean(&mut self, a: &Tensor<T>, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce(a, axis, keepdim, ReduceKind::Mean)
    }

    pub fn max(&mut self, a: &Tensor<T>, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce(a, axis, keepdim, ReduceKind::Max)
    }

    /// Sum every element to a scalar (shape []).
    pub fn sum_all(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let flat = self.reshape(a, &[a.len()])?;
        let s = self.sum(&flat, 0, false)?;
        self.reshape(&s, &[])
    }

    // ---- softmax -----------------------------------------------------------

    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&mut self, a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        self.softmax_impl(a, axis, false)
    }

    /// log(softmax) along `axis`, computed in the stable shifted form.
    pub fn log_softmax(&mut self, a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        self.softmax_impl(a, axis, true)
    }

    fn softmax_impl(&mut self, a: &Tensor<T>, axis: usize, log: bool) -> Result<Tensor<T>> {
        let sh = a.shape();
        if axis >= sh.len() {
            return Err(HexError::InvalidAxis {
                axis,
                shape: sh.to_vec(),
            });
        }
        if !a.is_finite() {
            return Err(HexError::NonFinite {
                context: "softmax input".into(),
            });
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let ext = sh[axis];
        let mut data = vec![T::zero(); a.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| o * ext * inner + i * inner + j;
                let mut m = T::neg_infinity();
                for i in 0..ext {
                    m = m.max(a.data()[at(i)]);
                }
                let mut z = T::zero();
                for i in 0..ext {
                    z += (a.data()[at(i)] - m).exp();
                }
                if log {
                    let lz = z.ln();
                    for i in 0..ext {
                        data[at(i)] = a.data()[at(i)] - m - lz;
                    }
                } else {
                    for i in 0..ext {
                        data[at(i)] = (a.data()[at(i)] - m).exp() / z;
                    }
                }
            }
        }
        let out = Tensor::from_vec(data, sh)?;
        match a.node() {
            None => Ok(out),
            Some(pid) => {
                let yd = out.data.clone();
                let back: BackFn<T> = Box::new(move |og: &[T]| {
                    let mut g = vec![T::zero(); og.len()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |i: usize| o * ext * inner + i * inner + j;
                            if log {
                                // dx = dy - softmax * sum(dy)
                                let mut s = T::zero();
                                for i in 0..ext {
                                    s += og[at(i)];
                                }
                                for i in 0..ext {
                                    g[at(i)] = og[at(i)] - yd[at(i)].exp() * s;
                                }
                            } else {
                                // dx = y * (dy - sum(dy * y))
                                let mut s = T::zero();
                                for i in 0..ext {
                                    s += og[at(i)] * yd[at(i)];
                                }
                                for i in 0..ext {
                                    g[at(i)] = yd[at(i)] * (og[at(i)] - s);
                                }
                            }
                        }
                    }
                    vec![g]
                });
                let id = self.push(vec![pid], back);
                Ok(out.with_node(id))
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ReduceKind {
    Sum,
    Mean,
    Max,
}

// ---- raw (untracked) kernels shared with backward closures ----------------

fn promote_2d(shape: &[usize], row: bool) -> (Vec<usize>, bool) {
    if shape.len() >= 2 {
        (shape.to_vec(), false)
    } else if shape.len() == 1 {
        if row {
            (vec![1, shape[0]], true)
        } else {
            (vec![shape[0], 1], true)
        }
    } else {
        (vec![1, 1], true)
    }
}

/// Batched matmul on raw buffers with optional logical transposes of the
/// last two axes of either operand.
fn matmul_raw<T: Scalar>(
    op: &'static str,
    a: &[T],
    ash: &[usize],
    b: &[T],
    bsh: &[usize],
    ta: bool,
    tb: bool,
) -> Result<(Vec<T>, Vec<usize>)> {
    let (am, ak) = {
        let d = ash.len();
        if ta {
            (ash[d - 1], ash[d - 2])
        } else {
            (ash[d - 2], ash[d - 1])
        }
    };
    let (bk, bn) = {
        let d = bsh.len();
        if tb {
            (bsh[d - 1], bsh[d - 2])
        } else {
            (bsh[d - 2], bsh[d - 1])
        }
    };
    if ak != bk {
        return Err(HexError::ShapeMismatch {
            op,
            lhs: ash.to_vec(),
            rhs: bsh.to_vec(),
        });
    }
    let abatch = &ash[..ash.len() - 2];
    let bbatch = &bsh[..bsh.len() - 2];
    let batch = broadcast_shapes(abatch, bbatch).ok_or(HexError::ShapeMismatch {
        op,
        lhs: ash.to_vec(),
        rhs: bsh.to_vec(),
    })?;
    let sa_batch = {
        let mut s = bcast_strides(abatch, &batch);
        // scale to whole-matrix strides
        let mat = ash[ash.len() - 2] * ash[ash.len() - 1];
        s.iter_mut().for_each(|v| *v *= mat);
        s
    };
    let sb_batch = {
        let mut s = bcast_strides(bbatch, &batch);
        let mat = bsh[bsh.len() - 2] * bsh[bsh.len() - 1];
        s.iter_mut().for_each(|v| *v *= mat);
        s
    };
    let nbatch = numel(&batch);
    let mut out = vec![T::zero(); nbatch * am * bn];
    // raw (row-major) extents of each operand matrix
    let (ar_cols, br_cols) = (ash[ash.len() - 1], bsh[bsh.len() - 1]);
    let mut offsets = Vec::with_capacity(nbatch);
    for_each2(&batch, &sa_batch, &sb_batch, |i, oa, ob| {
        offsets.push((i, oa, ob));
    });
    if batch.is_empty() {
        offsets.push((0, 0, 0));
    }
    for (bi, oa, ob) in offsets {
        let out_base = bi * am * bn;
        for i in 0..am {
            for j in 0..bn {
                let mut acc = T::zero();
                for k in 0..ak {
                    let av = if ta {
                        a[oa + k * ar_cols + i]
                    } else {
                        a[oa + i * ar_cols + k]
                    };
                    let bv = if tb {
                        b[ob + j * br_cols + k]
                    } else {
                        b[ob + k * br_cols + j]
                    };
                    acc += av * bv;
                }
                out[out_base + i * bn + j] = acc;
            }
        }
    }
    let mut out_shape = batch;
    out_shape.push(am);
    out_shape.push(bn);
    Ok((out, out_shape))
}

fn transpose_raw<T: Scalar>(a: &[T], shape: &[usize]) -> (Vec<T>, Vec<usize>) {
    let d = shape.len();
    let (m, n) = (shape[d - 2], shape[d - 1]);
    let nbatch: usize = shape[..d - 2].iter().product();
    let mut out = vec![T::zero(); a.len()];
    for b in 0..nbatch {
        let base = b * m * n;
        for i in 0..m {
            for j in 0..n {
                out[base + j * m + i] = a[base + i * n + j];
            }
        }
    }
    let mut osh = shape.to_vec();
    osh.swap(d - 2, d - 1);
    (out, osh)
}

fn check_spacelike<T: Scalar>(op: &'static str, s: &Tensor<T>) -> Result<()> {
    let tol = T::from_f64(-1e-5);
    for &v in s.data() {
        if !v.is_finite() {
            return Err(HexError::NonFinite {
                context: format!("{op} input"),
            });
        }
        if v < tol {
            return Err(HexError::Domain {
                op,
                msg: format!("negative squared tangent norm {v} (non-spacelike tangent)"),
            });
        }
    }
    Ok(())
}

const SERIES_S: f64 = 1e-3;
const SERIES_T: f64 = 1e-3;

pub(crate) fn cosh_sqrt_val<T: Scalar>(s: T) -> T {
    if s < T::from_f64(SERIES_S) {
        // 1 + s/2 + s^2/24 + s^3/720
        T::one()
            + s * T::from_f64(0.5)
            + s * s * T::from_f64(1.0 / 24.0)
            + s * s * s * T::from_f64(1.0 / 720.0)
    } else {
        s.sqrt().cosh()
    }
}

pub(crate) fn sinhc_sqrt_val<T: Scalar>(s: T) -> T {
    if s < T::from_f64(SERIES_S) {
        // 1 + s/6 + s^2/120 + s^3/5040
        T::one()
            + s * T::from_f64(1.0 / 6.0)
            + s * s * T::from_f64(1.0 / 120.0)
            + s * s * s * T::from_f64(1.0 / 5040.0)
    } else {
        let a = s.sqrt();
        a.sinh() / a
    }
}

fn sinhc_sqrt_deriv<T: Scalar>(s: T) -> T {
    if s < T::from_f64(SERIES_S) {
        // 1/6 + s/60 + s^2/1680
        T::from_f64(1.0 / 6.0) + s * T::from_f64(1.0 / 60.0) + s * s * T::from_f64(1.0 / 1680.0)
    } else {
        let a = s.sqrt();
        (a.cosh() - a.sinh() / a) / (s + s)
    }
}

pub(crate) fn acosh_ratio_val<T: Scalar>(beta: T) -> T {
    let t = beta - T::one();
    if t < T::from_f64(SERIES_T) {
        // 1 - t/3 + 2 t^2 / 15
        T::one() - t * T::from_f64(1.0 / 3.0) + t * t * T::from_f64(2.0 / 15.0)
    } else {
        beta.acosh() / (beta * beta - T::one()).sqrt()
    }
}

fn acosh_ratio_deriv<T: Scalar>(beta: T) -> T {
    let t = beta - T::one();
    if t < T::from_f64(SERIES_T) {
        -T::from_f64(1.0 / 3.0) + t * T::from_f64(4.0 / 15.0)
    } else {
        let d = beta * beta - T::one();
        T::one() / d - beta * beta.acosh() / (d * d.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::super::finite_diff_grad;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn add_basic() {
        let mut tape = Tape::new();
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[3.0, 4.0], &[2]);
        let c = tape.add(&a, &b).unwrap();
        assert_eq!(c.data(), &[4.0, 6.0]);
    }

    #[test]
    fn sigmoid_symmetry_point() {
        let mut tape = Tape::new();
        let y = tape.sigmoid(&Tensor::scalar(0.0f64));
        assert_eq!(y.item(), 0.5);
    }

    #[test]
    fn acosh_domain_boundary() {
        let mut tape = Tape::new();
        let y = tape.acosh(&Tensor::scalar(1.0f64));
        assert!(y.item().abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[1.0, 2.0, 3.0], &[3]);
        let err = tape.add(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        let v = t(&[2.0, -1.0, 5.0], &[3]);
        let y = tape.matmul(&eye, &v).unwrap();
        assert_eq!(y.data(), v.data());
    }

    #[test]
    fn matmul_arithmetic() {
        let mut tape = Tape::new();
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[1.0, 1.0], &[2, 1]);
        let y = tape.matmul(&a, &b).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
        assert_eq!(y.shape(), &[2, 1]);
    }

    #[test]
    fn matmul_inner_dim_mismatch() {
        let mut tape = Tape::new();
        let a = t(&[0.0; 6], &[2, 3]);
        let b = t(&[0.0; 8], &[4, 2]);
        assert!(tape.matmul(&a, &b).is_err());
    }

    #[test]
    fn reduce_examples() {
        let mut tape = Tape::new();
        let a = t(&[1.0, 2.0, 3.0], &[3]);
        assert_eq!(tape.sum(&a, 0, false).unwrap().item(), 6.0);
        let c = t(&[4.0, 4.0, 4.0, 4.0], &[2, 2]);
        assert_eq!(tape.mean(&c, 0, false).unwrap().data(), &[4.0, 4.0]);
        assert!(tape.sum(&a, 1, false).is_err());
    }

    #[test]
    fn max_backward_routes_to_argmax() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[1.0, 5.0, 3.0], &[3]));
        let m = tape.max(&a, 0, false).unwrap();
        tape.backward(&m).unwrap();
        assert_eq!(tape.grad(&a).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let y = tape.softmax(&t(&[0.0, 0.0], &[2]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = tape.softmax(&t(&[1000.0, 0.0], &[2]), 0).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
        assert!(tape
            .softmax(&t(&[f64::INFINITY, 0.0], &[2]), 0)
            .is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        for _ in 0..50 {
            let data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1e4..1e4)).collect();
            let y = tape.softmax(&t(&data, &[2, 4]), 1).unwrap();
            for r in 0..2 {
                let s: f64 = y.data()[r * 4..(r + 1) * 4].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0f64));
        let y = tape.leaf(&Tensor::scalar(3.0f64));
        let z = tape.mul(&x, &y).unwrap();
        tape.backward(&z).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[3.0]);
        assert_eq!(tape.grad(&y).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_twice_without_retain_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0f64));
        let y = tape.mul(&x, &x).unwrap();
        tape.backward(&y).unwrap();
        assert!(matches!(tape.backward(&y), Err(HexError::TapeConsumed)));
    }

    #[test]
    fn backward_retain_is_reusable() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0f64));
        let y = tape.mul(&x, &x).unwrap();
        tape.backward_retain(&y).unwrap();
        tape.backward_retain(&y).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[4.0]);
    }

    #[test]
    fn non_scalar_root_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1.0, 2.0], &[2]));
        assert!(matches!(
            tape.backward(&x),
            Err(HexError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = x*x + x*x: hand-expanded gradient 4x
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0f64));
        let a = tape.mul(&x, &x).unwrap();
        let f = tape.add(&a, &a).unwrap();
        tape.backward(&f).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[12.0]);
    }

    /// Gradient of a scalar-valued tape computation vs central differences.
    fn check_grad(
        mut f: impl FnMut(&mut Tape<f64>, &Tensor<f64>) -> Tensor<f64>,
        x: &Tensor<f64>,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let xt = tape.leaf(x);
        let y = f(&mut tape, &xt);
        tape.backward(&y).unwrap();
        let analytic = tape.grad(&xt).unwrap().to_vec();
        let numeric = finite_diff_grad(
            &mut |x: &Tensor<f64>| {
                let mut tape = Tape::new();
                Ok(f(&mut tape, x).item())
            },
            x,
            1e-6,
        )
        .unwrap();
        let scale: f64 = analytic
            .iter()
            .map(|v| v.abs())
            .fold(1.0f64, f64::max);
        for (a, n) in analytic.iter().zip(numeric.data()) {
            assert!(
                (a - n).abs() / scale < tol,
                "analytic {a} vs numeric {n} (tol {tol})"
            );
        }
    }

    #[test]
    fn matmul_gradient_vs_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..15).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let bt = t(&b, &[5, 3]);
        check_grad(
            |tape, x| {
                let m = tape.matmul(x, &bt).unwrap();
                tape.sum_all(&m).unwrap()
            },
            &t(&a, &[4, 5]),
            1e-4,
        );
        let at = t(&a, &[4, 5]);
        check_grad(
            |tape, x| {
                let m = tape.matmul(&at, x).unwrap();
                let sq = tape.mul(&m, &m).unwrap();
                tape.sum_all(&sq).unwrap()
            },
            &t(&b, &[5, 3]),
            1e-4,
        );
    }

    #[test]
    fn softmax_gradient_vs_finite_differences() {
        let x = t(&[0.3, -1.2, 2.0, 0.7], &[4]);
        let w = t(&[0.5, -2.0, 1.0, 0.25], &[4]);
        check_grad(
            |tape, x| {
                let y = tape.softmax(x, 0).unwrap();
                let wy = tape.mul(&y, &w).unwrap();
                tape.sum_all(&wy).unwrap()
            },
            &x,
            1e-4,
        );
    }

    #[test]
    fn layer_gradient_vs_finite_differences() {
        // d(sum(sigmoid(Wx)))/dW
        let x = t(&[0.2, -0.4, 0.9], &[3, 1]);
        let w0: Vec<f64> = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        check_grad(
            |tape, w| {
                let wx = tape.matmul(w, &x).unwrap();
                let s = tape.sigmoid(&wx);
                tape.sum_all(&s).unwrap()
            },
            &t(&w0, &[2, 3]),
            1e-4,
        );
    }

    #[test]
    fn every_unary_op_gradient_matches_finite_differences() {
        type OpFn = fn(&mut Tape<f64>, &Tensor<f64>) -> Tensor<f64>;
        let ops: Vec<(&str, OpFn, f64, f64)> = vec![
            ("neg", (|t, x| t.neg(x)) as OpFn, -3.0, 3.0),
            ("sqrt", |t, x| t.sqrt(x), 0.1, 3.0),
            ("exp", |t, x| t.exp(x), -3.0, 3.0),
            ("ln", |t, x| t.ln(x), 0.1, 3.0),
            ("sigmoid", |t, x| t.sigmoid(x), -3.0, 3.0),
            ("tanh", |t, x| t.tanh(x), -3.0, 3.0),
            ("cosh", |t, x| t.cosh(x), -3.0, 3.0),
            ("sinh", |t, x| t.sinh(x), -3.0, 3.0),
            ("acosh", |t, x| t.acosh(x), 1.1, 3.0),
            ("gelu", |t, x| t.gelu(x), -3.0, 3.0),
            ("lrelu", |t, x| t.leaky_relu(x, 0.01), 0.2, 3.0),
            ("abs", |t, x| t.abs(x), 0.2, 3.0),
            ("cosh_sqrt", |t, x| t.cosh_sqrt(x).unwrap(), 0.0, 3.0),
            ("sinhc_sqrt", |t, x| t.sinhc_sqrt(x).unwrap(), 0.0, 3.0),
            ("acosh_ratio", |t, x| t.acosh_ratio(x).unwrap(), 1.0, 3.0),
        ];
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (name, op, lo, hi) in &ops {
                let data: Vec<f64> = (0..4).map(|_| rng.gen_range(*lo..*hi)).collect();
                let x = t(&data, &[4]);
                let op = *op;
                let _ = name;
                check_grad(
                    move |tape, x| {
                        let y = op(tape, x);
                        tape.sum_all(&y).unwrap()
                    },
                    &x,
                    1e-4,
                );
            }
        }
    }

    #[test]
    fn fused_kernels_near_branch_boundaries() {
        // values straddling the series cutoffs
        for &s in &[0.0, 1e-9, 9e-4, 1.1e-3, 0.5] {
            let x = t(&[s], &[1]);
            check_grad(
                |tape, x| {
                    let y = tape.sinhc_sqrt(x).unwrap();
                    tape.sum_all(&y).unwrap()
                },
                &x,
                1e-4,
            );
            check_grad(
                |tape, x| {
                    let y = tape.cosh_sqrt(x).unwrap();
                    tape.sum_all(&y).unwrap()
                },
                &x,
                1e-4,
            );
        }
        for &b in &[1.0 + 1e-9, 1.0009, 1.0011, 1.5, 3.0] {
            let x = t(&[b], &[1]);
            check_grad(
                |tape, x| {
                    let y = tape.acosh_ratio(x).unwrap();
                    tape.sum_all(&y).unwrap()
                },
                &x,
                2e-4,
            );
        }
    }

    #[test]
    fn fused_kernel_values() {
        // against direct evaluation away from the series region
        let s = 2.25f64; // alpha = 1.5
        assert!((cosh_sqrt_val(s) - 1.5f64.cosh()).abs() < 1e-12);
        assert!((sinhc_sqrt_val(s) - 1.5f64.sinh() / 1.5).abs() < 1e-12);
        let b = 2.0f64;
        assert!((acosh_ratio_val(b) - b.acosh() / (b * b - 1.0).sqrt()).abs() < 1e-12);
        // limits
        assert!((cosh_sqrt_val(0.0f64) - 1.0).abs() < 1e-15);
        assert!((sinhc_sqrt_val(0.0f64) - 1.0).abs() < 1e-15);
        assert!((acosh_ratio_val(1.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn broadcast_gradients_reduce_correctly() {
        // [2,3] * [3] -> grad of the [3] side sums over rows
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        check_grad(
            |tape, x| {
                let y = tape.mul(&a, x).unwrap();
                tape.sum_all(&y).unwrap()
            },
            &t(&[0.5, -1.0, 2.0], &[3]),
            1e-6,
        );
        // scalar broadcast
        check_grad(
            |tape, x| {
                let y = tape.mul(&a, x).unwrap();
                tape.sum_all(&y).unwrap()
            },
            &Tensor::scalar(1.5f64),
            1e-6,
        );
    }

    #[test]
    fn narrow_concat_roundtrip_and_grads() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let mut tape = Tape::new();
        let al = tape.leaf(&a);
        let left = tape.narrow(&al, 1, 0, 1).unwrap();
        let right = tape.narrow(&al, 1, 1, 2).unwrap();
        let back = tape.concat(&[&left, &right], 1).unwrap();
        assert_eq!(back.data(), a.data());
        let two = Tensor::scalar(2.0);
        let doubled = tape.mul(&right, &two).unwrap();
        let s = tape.sum_all(&doubled).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(tape.grad(&al).unwrap(), &[0.0, 2.0, 2.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_axis0_prepend() {
        let mut tape = Tape::new();
        let cls = t(&[9.0, 9.0], &[1, 2]);
        let seq = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let out = tape.concat(&[&cls, &seq], 0).unwrap();
        assert_eq!(out.shape(), &[3, 2]);
        assert_eq!(out.data(), &[9.0, 9.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn batched_matmul_broadcasts_batch_dims() {
        let mut tape = Tape::new();
        // [2,2,2] x [2,2] (broadcast over batch)
        let a = t(&[1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0], &[2, 2, 2]);
        let b = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let y = tape.matmul(&a, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]);
    }
}
