//! Named, grouped parameter storage with checkpoint (de)serialization.

use crate::scalar::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct Param<S: Scalar> {
    pub name: String,
    /// Parameter group tag, e.g. "R" (representation), "E" (event head),
    /// "D" (domain predictor). Groups drive optimizer scoping.
    pub group: String,
    pub value: Array2<S>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct ParamStore<S: Scalar> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore { params: Vec::new() }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: &str, value: Array2<S>) -> ParamId {
        assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name: name.to_string(),
            group: group.to_string(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Array2<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    pub fn group_ids(&self, group: &str) -> Vec<ParamId> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == group)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group(&self, id: ParamId) -> &str {
        &self.params[id.0].group
    }

    /// Total number of scalar entries (for diagnostics).
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Deep copy of all values, for bitwise change detection in tests and
    /// for early-stopping restore.
    pub fn snapshot(&self) -> Vec<Array2<S>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<S>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)
            .map_err(std::io::Error::other)
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let f = std::fs::File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(f)).map_err(std::io::Error::other)
    }
}

/// Parameter gradients accumulated by a backward pass.
#[derive(Debug, Clone)]
pub struct Grads<S: Scalar> {
    map: HashMap<usize, Array2<S>>,
}

impl<S: Scalar> Default for Grads<S> {
    fn default() -> Self {
        Grads {
            map: HashMap::new(),
        }
    }
}

impl<S: Scalar> Grads<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Array2<S>) {
        match self.map.get_mut(&id.0) {
            Some(acc) => *acc += g,
            None => {
                self.map.insert(id.0, g.clone());
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<S>> {
        self.map.get(&id.0)
    }

    pub fn is_zero(&self, id: ParamId) -> bool {
        match self.map.get(&id.0) {
            None => true,
            Some(g) => g.iter().all(|&x| x == S::zero()),
        }
    }

    /// Merges another gradient set into this one (summing overlaps).
    pub fn merge(&mut self, other: &Grads<S>) {
        for (&k, g) in &other.map {
            self.accumulate(ParamId(k), g);
        }
    }

    pub fn scale(&mut self, c: S) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|x| x * c);
        }
    }

    /// Global L2 norm over the given scope.
    pub fn global_norm(&self, scope: &[ParamId]) -> S {
        let mut sq = S::zero();
        for id in scope {
            if let Some(g) = self.map.get(&id.0) {
                sq += g.iter().map(|&x| x * x).sum();
            }
        }
        sq.sqrt()
    }
}
