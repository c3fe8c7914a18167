//! Parameter registry and the graph context that binds it to a tape.
//!
//! Every learnable weight in the model lives in one [`ParamStore`] under a
//! hierarchical dotted name. Blocks hold [`ParamId`] handles, never data, so
//! checkpointing, the optimizer, and the ablation registry diff all see the
//! same single source of truth.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Real, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<Real>,
}

#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], data: Vec<Real>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::arg(format!("duplicate parameter name {name}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "parameter {name}: shape {shape:?} vs {} values",
                data.len()
            )));
        }
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(ParamEntry { name: name.to_string(), shape: shape.to_vec(), data });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn set_data(&mut self, id: ParamId, data: Vec<Real>) {
        assert_eq!(data.len(), self.entries[id.0].data.len());
        self.entries[id.0].data = data;
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [Real] {
        &mut self.entries[id.0].data
    }
}

/// Scoped registrar carrying the init RNG. Registration order is part of the
/// model definition, so initialization is deterministic per seed.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { store, rng, prefix: String::new() }
    }

    pub fn scope(&mut self, seg: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            seg.to_string()
        } else {
            format!("{}.{seg}", self.prefix)
        };
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Xavier-uniform weight: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn xavier(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let (fan_in, fan_out) = match shape {
            [n] => (*n, *n),
            [i, o] => (*i, *o),
            _ => {
                let o = shape[shape.len() - 1];
                let i: usize = shape.iter().product::<usize>() / o;
                (i, o)
            }
        };
        let a = (6.0 / (fan_in + fan_out) as Real).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| self.rng.random_range(-a..a)).collect();
        self.store.register(&self.full(name), shape, data).expect("param registration")
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], a: Real) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| self.rng.random_range(-a..a)).collect();
        self.store.register(&self.full(name), shape, data).expect("param registration")
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        self.store.register(&self.full(name), shape, vec![0.0; n]).expect("param registration")
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        self.store.register(&self.full(name), shape, vec![1.0; n]).expect("param registration")
    }
}

/// Execution context binding the store to an optional tape. Each parameter is
/// lifted onto the tape at most once per graph, so gradients of repeated uses
/// accumulate on one leaf.
pub struct Graph<'a> {
    store: &'a ParamStore,
    tape: Option<Tape>,
    bound: RefCell<Vec<Option<Tensor>>>,
}

impl<'a> Graph<'a> {
    pub fn inference(store: &'a ParamStore) -> Self {
        Graph { store, tape: None, bound: RefCell::new(vec![None; store.len()]) }
    }

    pub fn training(store: &'a ParamStore) -> Self {
        Graph { store, tape: Some(Tape::new()), bound: RefCell::new(vec![None; store.len()]) }
    }

    pub fn is_training(&self) -> bool {
        self.tape.is_some()
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Tensor {
        let mut bound = self.bound.borrow_mut();
        if let Some(t) = &bound[id.0] {
            return t.clone();
        }
        let entry = self.store.entry(id);
        let plain = Tensor::from_vec(&entry.shape, entry.data.clone()).expect("stored param");
        let t = match &self.tape {
            Some(tape) => tape.watch(&plain),
            None => plain,
        };
        bound[id.0] = Some(t.clone());
        t
    }

    /// Constant (non-learnable) tensor in this graph.
    pub fn constant(&self, shape: &[usize], data: Vec<Real>) -> Result<Tensor> {
        Tensor::from_vec(shape, data)
    }

    /// Per-parameter gradients from a backward sweep, aligned with store ids.
    /// Parameters never touched by the forward pass yield `None`.
    pub fn param_gradients(&self, grads: &Gradients) -> Vec<Option<Vec<Real>>> {
        let bound = self.bound.borrow();
        (0..self.store.len())
            .map(|i| {
                bound[i]
                    .as_ref()
                    .and_then(|t| grads.wrt(t))
                    .map(|g| g.to_vec())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_are_unique_and_hierarchical() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut enc = b.scope("enc");
        enc.xavier("w", &[4, 4]);
        let mut blk = enc.scope("block0");
        blk.zeros("bias", &[4]);
        assert!(store.id_of("enc.w").is_some());
        assert!(store.id_of("enc.block0.bias").is_some());
        assert!(store.register("enc.w", &[1], vec![0.0]).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let build = |seed: u64| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ParamBuilder::new(&mut store, &mut rng);
            b.xavier("w", &[8, 8]);
            store
        };
        let a = build(9);
        let b = build(9);
        let c = build(10);
        assert_eq!(a.entry(ParamId(0)).data, b.entry(ParamId(0)).data);
        assert_ne!(a.entry(ParamId(0)).data, c.entry(ParamId(0)).data);
    }

    #[test]
    fn graph_binds_each_param_once() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let w = b.xavier("w", &[2, 2]);
        let g = Graph::training(&store);
        let t1 = g.param(w);
        let t2 = g.param(w);
        // Same tape node: gradient of t1+t2 accumulates on a single leaf.
        let loss = t1.add(&t2).unwrap().sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.wrt(&t1).unwrap(), &[2.0, 2.0, 2.0, 2.0]);
    }
}
