//! Named parameter arrays with declarative initializers.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::numerics::array::{NdArray, Real};
use crate::numerics::exec::BindingSource;
use crate::numerics::rng::{DrawDistribution, RngStream};

/// How a parameter leaf is filled at model construction.
#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64 },
    /// Fixed values (log-spaced decay tables and the like).
    Values(NdArray<f64>),
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Parameter arrays in declaration order. Order is stable, so initialization
/// draws and checkpoint layout are deterministic.
#[derive(Debug, Clone)]
pub struct ParamSet<F: Real> {
    names: Vec<String>,
    arrays: Vec<NdArray<F>>,
    index: BTreeMap<String, usize>,
}

impl<F: Real> ParamSet<F> {
    pub fn initialize(specs: &[ParamSpec], rng: &mut RngStream) -> Self {
        let mut names = Vec::with_capacity(specs.len());
        let mut arrays = Vec::with_capacity(specs.len());
        let mut index = BTreeMap::new();
        for spec in specs {
            let arr: NdArray<F> = match &spec.init {
                Init::Zeros => NdArray::zeros(&spec.shape),
                Init::Ones => NdArray::full(&spec.shape, F::one()),
                Init::Normal { std } => {
                    let mut draw = rng.draw(DrawDistribution::StandardNormal, &spec.shape);
                    for v in draw.data_mut() {
                        *v *= std;
                    }
                    draw.cast()
                }
                Init::Values(v) => {
                    assert_eq!(v.shape(), spec.shape.as_slice(), "init shape for {}", spec.name);
                    v.cast()
                }
            };
            index.insert(spec.name.clone(), names.len());
            names.push(spec.name.clone());
            arrays.push(arr);
        }
        ParamSet { names, arrays, index }
    }

    pub fn from_arrays(pairs: Vec<(String, NdArray<F>)>) -> Self {
        let mut names = Vec::with_capacity(pairs.len());
        let mut arrays = Vec::with_capacity(pairs.len());
        let mut index = BTreeMap::new();
        for (name, arr) in pairs {
            index.insert(name.clone(), names.len());
            names.push(name);
            arrays.push(arr);
        }
        ParamSet { names, arrays, index }
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[NdArray<F>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [NdArray<F>] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&NdArray<F>> {
        self.index.get(name).map(|&i| &self.arrays[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NdArray<F>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.arrays[i]),
            None => Err(CoreError::UnknownLeaf(name.to_string())),
        }
    }

    /// Total scalar parameter count.
    pub fn total_len(&self) -> usize {
        self.arrays.iter().map(|a| a.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NdArray<F>)> {
        self.names.iter().zip(self.arrays.iter())
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            names: self.names.clone(),
            arrays: self.arrays.iter().map(|a| a.cast()).collect(),
            index: self.index.clone(),
        }
    }
}

impl<F: Real> BindingSource<F> for ParamSet<F> {
    fn lookup(&self, name: &str) -> Option<&NdArray<F>> {
        self.get(name)
    }
}
