//! Named parameter tensors with deterministic ordering.

use std::collections::HashMap;
use std::sync::Arc;

use numcore::{Element, Graph, Tensor, Var};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (spectral-norm vectors) are stored but never optimized.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: Arc<HashMap<String, usize>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: Arc::new(HashMap::new()),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CoreError::Config(format!("duplicate parameter `{name}`")));
        }
        Arc::make_mut(&mut self.index).insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, trainable });
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| CoreError::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(|i| &mut self.params[i].value)
    }

    /// Replace a value, keeping the shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| CoreError::Config(format!("missing parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(CoreError::Config(format!(
                "`{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Put every tensor on the tape. Trainable parameters become gradient
    /// leaves when `grad` is set; buffers are always constants.
    pub fn bind(&self, g: &mut Graph<T>, grad: bool) -> Result<Bound> {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), grad && p.trainable))
            .collect::<numcore::Result<Vec<_>>>()?;
        Ok(Bound {
            index: Arc::clone(&self.index),
            vars,
        })
    }
}

/// Tape handles for every entry of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    index: Arc<HashMap<String, usize>>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| CoreError::Config(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Point `name` at another graph value, e.g. a probe for gradient checks.
    pub fn substitute(&mut self, name: &str, var: Var) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| CoreError::Config(format!("missing parameter `{name}`")))?;
        self.vars[i] = var;
        Ok(())
    }
}

/// splitmix64 step, used to derive independent per-parameter seeds.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
