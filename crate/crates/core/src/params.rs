//! Named parameter tensors, partitioned into the groups that the three
//! optimizers own.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

/// Disjoint parameter partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Encoder,
    P1,
    P2,
    Student,
    Discriminator,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Encoder,
        Group::P1,
        Group::P2,
        Group::Student,
        Group::Discriminator,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub value: Matrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Matrix) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.entries[id.0].group
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, groups: &[Group]) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| groups.contains(&self.group(id)))
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of scalar parameters in the given groups.
    pub fn count_in(&self, groups: &[Group]) -> usize {
        self.ids_in(groups).iter().map(|&id| self.get(id).len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Values of every parameter in `groups`, in id order.
    pub fn snapshot(&self, groups: &[Group]) -> Vec<Matrix> {
        self.ids_in(groups)
            .into_iter()
            .map(|id| self.get(id).clone())
            .collect()
    }
}

/// Registers freshly initialized parameters under a name prefix.
///
/// Projection weights are uniform in `±1/sqrt(fan_in)`, biases start at
/// zero, and normalization gains at one.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    group: Group,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, group: Group) -> Self {
        ParamBuilder {
            store,
            rng,
            group,
            prefix: String::new(),
        }
    }

    pub fn scoped<R>(&mut self, scope: &str, f: impl FnOnce(&mut ParamBuilder<'_>) -> R) -> R {
        let prefix = format!("{}{}.", self.prefix, scope);
        let mut inner = ParamBuilder {
            store: self.store,
            rng: self.rng,
            group: self.group,
            prefix,
        };
        f(&mut inner)
    }

    pub fn group(&self) -> Group {
        self.group
    }

    fn full_name(&self, name: &str) -> String {
        format!("{}{}", self.prefix, name)
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        let full = self.full_name(name);
        self.store
            .add(full, self.group, Matrix::from_vec(rows, cols, data))
    }

    pub fn fan_in(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        self.uniform(name, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, self.group, Matrix::zeros(rows, cols))
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let full = self.full_name(name);
        self.store
            .add(full, self.group, Matrix::filled(rows, cols, 1.0))
    }
}
