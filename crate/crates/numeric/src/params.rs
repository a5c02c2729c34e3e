use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::array::Array;
use crate::error::{NumericError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable arrays. Insertion order is stable and is the order used
/// by the optimizer and the checkpoint writer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericError::Invalid(format!("duplicate parameter {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Adds a parameter drawn from `N(0, std^2)`.
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = if std == 0.0 {
            vec![0.0; n]
        } else {
            let dist = Normal::new(0.0, std)
                .map_err(|e| NumericError::Invalid(format!("normal init: {e}")))?;
            (0..n).map(|_| dist.sample(rng)).collect()
        };
        self.add(name, Array::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Array) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(NumericError::Shape {
                op: "ParamStore::set",
                detail: format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    value.shape(),
                    self.values[id.0].shape()
                ),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }
}

/// Gradient accumulator keyed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Array>>,
}

impl ParamGrads {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Array) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads[id.0].as_ref()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn merge(&mut self, other: &ParamGrads) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
