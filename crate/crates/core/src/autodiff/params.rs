use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Real;
use crate::error::{bail, Error, Result};

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named `rows x cols` leaf with its optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: [usize; 2],
    pub value: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Named parameters kept in lexicographic order, plus the Adam step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
    lookup: HashMap<String, usize>,
    pub(crate) step: u64,
}

impl<T: Real> ParameterSet<T> {
    /// Builds a set from `(name, shape, values)`; names must be unique.
    pub fn from_named(entries: Vec<(String, [usize; 2], Vec<T>)>) -> Result<Self> {
        let mut params: Vec<Parameter<T>> = entries
            .into_iter()
            .map(|(name, shape, value)| {
                if value.len() != shape[0] * shape[1] {
                    bail!(Shape, "parameter '{}' has {} values for shape {:?}", name, value.len(), shape);
                }
                let n = value.len();
                Ok(Parameter { name, shape, value, grad: None, m: vec![T::zero(); n], v: vec![T::zero(); n] })
            })
            .collect::<Result<_>>()?;
        params.sort_by(|a, b| a.name.cmp(&b.name));
        let mut lookup = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if lookup.insert(p.name.clone(), i).is_some() {
                bail!(Config, "duplicate parameter name '{}'", p.name);
            }
        }
        Ok(ParameterSet { params, lookup, step: 0 })
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.lookup
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::State(format!("no parameter named '{}'", name)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.lookup.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.lookup.get(name).map(|&i| &mut self.params[i])
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn shape(&self, id: ParamId) -> [usize; 2] {
        self.params[id.0].shape
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Stores accumulated gradients for the next optimizer step.
    pub fn set_gradients(&mut self, grads: Gradients<T>) -> Result<()> {
        if grads.0.len() != self.params.len() {
            bail!(Shape, "gradient set has {} entries, parameter set {}", grads.0.len(), self.params.len());
        }
        for (p, g) in self.params.iter_mut().zip(grads.0) {
            if g.len() != p.value.len() {
                bail!(Shape, "gradient for '{}' has {} values, expected {}", p.name, g.len(), p.value.len());
            }
            p.grad = Some(g);
        }
        Ok(())
    }

    pub fn clear_gradients(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Converts every tensor (values and moments) to another precision.
    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::c(x.as_f64())).collect::<Vec<U>>();
        ParameterSet {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    shape: p.shape,
                    value: conv(&p.value),
                    grad: p.grad.as_deref().map(conv),
                    m: conv(&p.m),
                    v: conv(&p.v),
                })
                .collect(),
            lookup: self.lookup.clone(),
            step: self.step,
        }
    }

    /// Zero-filled gradient accumulator shaped like this set.
    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients(self.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect())
    }

    /// Copies every parameter whose name starts with `from` onto the
    /// parameter with the prefix replaced by `to`.
    pub fn copy_prefix(&mut self, from: &str, to: &str) -> Result<()> {
        let sources: Vec<(String, Vec<T>)> = self
            .params
            .iter()
            .filter_map(|p| p.name.strip_prefix(from).map(|rest| (format!("{to}{rest}"), p.value.clone())))
            .collect();
        for (name, value) in sources {
            let dst = self.by_name_mut(&name).ok_or_else(|| Error::State(format!("no parameter named '{}'", name)))?;
            dst.value = value;
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers in [`ParameterSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<Vec<T>>);

impl<T: Real> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.0 {
            for x in a.iter_mut() {
                *x = *x * s;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.0[id.0]
    }

    /// Flattened view across all parameters.
    pub fn flat(&self) -> Vec<T> {
        self.0.iter().flatten().copied().collect()
    }
}

/// Initializers used when building a model.
pub(crate) mod init {
    use super::*;

    pub fn xavier_uniform<T: Real, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<T> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("valid bounds");
        (0..fan_in * fan_out).map(|_| T::c(dist.sample(rng))).collect()
    }

    pub fn normal<T: Real, R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<T> {
        let dist = Normal::new(0.0, std).expect("valid std");
        (0..n).map(|_| T::c(dist.sample(rng))).collect()
    }

    pub fn constant<T: Real>(n: usize, v: f64) -> Vec<T> {
        vec![T::c(v); n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> ParameterSet<f64> {
        ParameterSet::from_named(vec![
            ("b".into(), [1, 2], vec![1.0, 2.0]),
            ("a.w".into(), [2, 1], vec![3.0, 4.0]),
            ("c.w".into(), [2, 1], vec![0.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn sorted_by_name() {
        let p = set();
        let names: Vec<_> = p.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["a.w", "b", "c.w"]);
        assert_eq!(p.value(p.id("b").unwrap()), &[1.0, 2.0]);
        assert!(p.id("zz").is_err());
        assert_eq!(p.num_elements(), 6);
    }

    #[test]
    fn rejects_duplicates_and_bad_shapes() {
        assert!(ParameterSet::<f32>::from_named(vec![("x".into(), [1, 1], vec![0.0]), ("x".into(), [1, 1], vec![0.0])]).is_err());
        assert!(ParameterSet::<f32>::from_named(vec![("x".into(), [2, 2], vec![0.0])]).is_err());
    }

    #[test]
    fn cast_and_copy_prefix() {
        let mut p = set();
        p.copy_prefix("a.", "c.").unwrap();
        assert_eq!(p.by_name("c.w").unwrap().value, vec![3.0, 4.0]);
        let q: ParameterSet<f32> = p.cast();
        assert_eq!(q.by_name("c.w").unwrap().value, vec![3.0f32, 4.0]);
    }
}
