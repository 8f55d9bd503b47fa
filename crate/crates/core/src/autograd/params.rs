use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// One named trainable array with its Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub(crate) m: Vec<S>,
    pub(crate) v: Vec<S>,
}

/// Named parameters in deterministic (sorted) order.
#[derive(Clone, Debug)]
pub struct ParamStore<S> {
    params: BTreeMap<String, Param<S>>,
    pub(crate) step: u64,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let n = value.len();
        self.params.insert(
            name.to_string(),
            Param {
                shape: value.shape,
                value: value.data,
                m: vec![S::zero(); n],
                v: vec![S::zero(); n],
            },
        );
        Ok(())
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<()> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::lit(rng.gen_range(-bound..bound))).collect();
        self.insert(name, Tensor::new(shape, data))
    }

    pub fn insert_const(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![S::lit(value); n]))
    }

    pub fn get(&self, name: &str) -> Result<&Param<S>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<S>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<S>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Records every parameter as a trainable leaf on `g`.
    pub fn bind(&self, g: &mut Graph<S>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), g.param(Tensor::new(&p.shape, p.value.clone()))))
            .collect();
        Bound { vars }
    }

    /// Same values in another precision; moments are reset.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (k, p) in &self.params {
            let data = p.value.iter().map(|x| T::lit(x.as_f64())).collect();
            out.insert(k, Tensor::new(&p.shape, data)).expect("unique names");
        }
        out
    }
}

/// Parameter name → graph leaf.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Gradient per parameter name.
pub type GradMap<S> = BTreeMap<String, Vec<S>>;

/// Evaluates the scalar objective built by `f` and its gradient with respect to every parameter.
pub fn value_and_grad<S: Scalar>(
    store: &ParamStore<S>,
    f: impl FnOnce(&mut Graph<S>, &Bound) -> Result<Var>,
) -> Result<(S, GradMap<S>)> {
    let mut g = Graph::new();
    value_and_grad_on(&mut g, store, f)
}

/// As [`value_and_grad`], recording onto a caller-provided graph (for fault injection).
pub fn value_and_grad_on<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    f: impl FnOnce(&mut Graph<S>, &Bound) -> Result<Var>,
) -> Result<(S, GradMap<S>)> {
    let bound = store.bind(g);
    let loss = f(g, &bound)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric("objective".into()));
    }
    let mut grads = g.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, var) in bound.iter() {
        let n = g.data(var).len();
        let gr = grads.take(var).unwrap_or_else(|| vec![S::zero(); n]);
        if gr.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("gradient of {name}")));
        }
        out.insert(name.to_string(), gr);
    }
    Ok((value, out))
}
