use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Grads, Graph, Real, Tensor, Var};

/// Named learnable tensors in a fixed, deterministic order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims())))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Sets every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (k, v) in self.tensors.iter_mut() {
            if k.starts_with(prefix) {
                v.data_mut().iter_mut().for_each(|x| *x = T::zero());
                n += 1;
            }
        }
        n
    }

    /// Places every tensor on the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, true)
    }

    /// Places every tensor on the graph as a constant.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, false)
    }

    /// Names this store's tensors with graph handles created elsewhere, in
    /// store order (as done by the gradient checker).
    pub fn bound_from(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.len() {
            return Err(Error::config(format!(
                "{} handles for {} parameters",
                vars.len(),
                self.len()
            )));
        }
        Ok(Bound {
            vars: self.tensors.keys().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    fn bind_with(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable { g.param(v.clone()) } else { g.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Collects gradients for every bound parameter (zeros where unused).
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Grads<T>) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| {
                    let g = bound
                        .vars
                        .get(k)
                        .and_then(|&var| grads.take(var))
                        .unwrap_or_else(|| Tensor::zeros(v.dims()));
                    (k.clone(), g)
                })
                .collect(),
        }
    }
}

/// Graph handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
