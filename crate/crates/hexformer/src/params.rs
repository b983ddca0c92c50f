//! Named parameter storage shared by layers, optimizers, and checkpoints.
//!
//! Parameters live outside any tape. A forward pass binds them onto a fresh
//! tape with [`ParamStore::fetch`]; after backward, [`ParamStore::accumulate_grads`]
//! folds the tape's leaf gradients back into the store. This keeps tape
//! lifetimes short (one per sample or micro-batch) while parameters persist.

use std::collections::HashMap;

use crate::error::{HexError, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// How the optimizer treats a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Ordinary parameter updated in ambient coordinates.
    Euclidean,
    /// A point on the hyperboloid, updated by tangent projection + exp map.
    Manifold,
    /// Non-learnable state (e.g. batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Vec<T>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, data: Vec<T>, shape: &[usize], kind: ParamKind) {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "param '{name}': data/shape mismatch"
        );
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter '{name}'"
        );
        let len = data.len();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            grad: vec![T::zero(); len],
            kind,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| HexError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(HexError::UnknownParam(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Bind a parameter onto a tape as a named tracked leaf.
    pub fn fetch(&self, tape: &mut Tape<T>, name: &str) -> Result<Tensor<T>> {
        let p = self.get(name)?;
        let t = Tensor::from_vec(p.data.clone(), &p.shape)?;
        Ok(tape.leaf_named(name, &t))
    }

    /// Read a parameter as an untracked tensor (eval paths, diagnostics).
    pub fn tensor(&self, name: &str) -> Result<Tensor<T>> {
        let p = self.get(name)?;
        Tensor::from_vec(p.data.clone(), &p.shape)
    }

    /// Add the tape's binding gradients into the store gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, scale: T) -> Result<()> {
        for (name, g) in tape.binding_grads() {
            let p = self.get_mut(name)?;
            for (dst, src) in p.grad.iter_mut().zip(&g) {
                *dst += *src * scale;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    /// Learnable parameters (buffers excluded), in insertion order.
    pub fn trainable(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter().filter(|p| p.kind != ParamKind::Buffer)
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.trainable().map(|p| p.data.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fetch_and_accumulate() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", vec![2.0, 3.0], &[2], ParamKind::Euclidean);
        let mut tape = Tape::new();
        let w = store.fetch(&mut tape, "w").unwrap();
        let sq = tape.mul(&w, &w).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        tape.backward(&loss).unwrap();
        store.accumulate_grads(&tape, 1.0).unwrap();
        assert_eq!(store.get("w").unwrap().grad, vec![4.0, 6.0]);
        // accumulation across a second tape
        let mut tape = Tape::new();
        let w = store.fetch(&mut tape, "w").unwrap();
        let s = tape.sum_all(&w).unwrap();
        tape.backward(&s).unwrap();
        store.accumulate_grads(&tape, 1.0).unwrap();
        assert_eq!(store.get("w").unwrap().grad, vec![5.0, 7.0]);
    }

    #[test]
    fn unknown_param_is_an_error() {
        let store: ParamStore<f64> = ParamStore::new();
        assert!(store.get("nope").is_err());
    }
}
