//! Named parameter storage and the builders that populate layers from it.
//!
//! Every layer is constructed through a [`ParamSource`]. The same
//! construction code therefore serves three purposes: enumerating the
//! architecture's parameter shapes, drawing a seeded random initialisation,
//! and loading a stored model with full name/shape validation.

use indexmap::IndexMap;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BN_EPS};
use crate::tensor::Tensor;

/// A named parameter of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::dim("Param::new", "data length", len, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered map from hierarchical layer name (`backbone.blocks.3.se.reduce.weight`)
/// to parameter. Insertion order is preserved and is the serialisation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    params: IndexMap<String, Param>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, param: Param) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Input(format!("duplicate weight name `{name}`")));
        }
        self.params.insert(name, param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Param::numel).sum()
    }

    /// Parameter count of every entry whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }
}

/// How a freshly initialised parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-b, b]`, `b = sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
}

/// Expected shape of one architecture parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl ParamShape {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Supplies parameters to layer constructors.
pub trait ParamSource {
    fn param(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Vec<f32>>;

    fn conv_weight(&mut self, name: &str, dims: [usize; 4]) -> Result<Tensor> {
        let fan_in = dims[1] * dims[2] * dims[3];
        let data = self.param(name, &dims, Init::HeUniform { fan_in })?;
        Tensor::new(dims, data)
    }

    fn zero_conv_weight(&mut self, name: &str, dims: [usize; 4]) -> Result<Tensor> {
        let data = self.param(name, &dims, Init::Zeros)?;
        Tensor::new(dims, data)
    }

    fn bias(&mut self, name: &str, len: usize) -> Result<Vec<f32>> {
        self.param(name, &[len], Init::Zeros)
    }

    fn batch_norm(&mut self, prefix: &str, channels: usize) -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: self.param(&format!("{prefix}.gamma"), &[channels], Init::Ones)?,
            beta: self.param(&format!("{prefix}.beta"), &[channels], Init::Zeros)?,
            running_mean: self.param(&format!("{prefix}.running_mean"), &[channels], Init::Zeros)?,
            running_var: self.param(&format!("{prefix}.running_var"), &[channels], Init::Ones)?,
            eps: BN_EPS,
        })
    }
}

/// Records every requested shape and hands back zero-filled buffers.
#[derive(Debug, Default)]
pub struct ShapeWalker {
    pub shapes: Vec<ParamShape>,
}

impl ParamSource for ShapeWalker {
    fn param(&mut self, name: &str, dims: &[usize], _init: Init) -> Result<Vec<f32>> {
        self.shapes.push(ParamShape {
            name: name.to_string(),
            dims: dims.to_vec(),
        });
        Ok(vec![0.0; dims.iter().product()])
    }
}

/// Draws a deterministic initialisation from a seed and records it.
pub struct Initializer {
    rng: ChaCha8Rng,
    store: WeightStore,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            store: WeightStore::new(),
        }
    }

    pub fn into_store(self) -> WeightStore {
        self.store
    }
}

impl ParamSource for Initializer {
    fn param(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Vec<f32>> {
        let len: usize = dims.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f32).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..len).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        self.store.insert(name, Param::new(dims.to_vec(), data.clone())?)?;
        Ok(data)
    }
}

/// Pulls parameters out of a [`WeightStore`], checking names and shapes.
pub struct Loader<'a> {
    store: &'a WeightStore,
    used: usize,
}

impl<'a> Loader<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        Self { store, used: 0 }
    }

    /// Fails on the first stored name the architecture never requested.
    pub fn finish(self, requested: &[ParamShape]) -> Result<()> {
        if self.used == self.store.len() {
            return Ok(());
        }
        let wanted: std::collections::HashSet<&str> =
            requested.iter().map(|s| s.name.as_str()).collect();
        match self.store.names().find(|n| !wanted.contains(n)) {
            Some(extra) => Err(Error::UnexpectedWeight(extra.to_string())),
            None => Ok(()),
        }
    }
}

impl ParamSource for Loader<'_> {
    fn param(&mut self, name: &str, dims: &[usize], _init: Init) -> Result<Vec<f32>> {
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if p.dims != dims {
            return Err(Error::WeightShape {
                name: name.to_string(),
                expected: dims.to_vec(),
                actual: p.dims.clone(),
            });
        }
        self.used += 1;
        Ok(p.data.clone())
    }
}
