use crate::tensor::Tensor;
use crate::NnError;
use rand::Rng;
use std::collections::BTreeMap;

/// Named parameters iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NnError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Overwrites the values of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(NnError::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
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

    /// Total number of scalar values.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Reads the scalar at `index` of the flattened parameter `name`.
    pub fn scalar(&self, name: &str, index: usize) -> f64 {
        self.params[name].data()[index]
    }

    pub fn set_scalar(&mut self, name: &str, index: usize, value: f64) {
        self.params.get_mut(name).expect("known parameter").data_mut()[index] = value;
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }
}

impl std::ops::Index<&str> for ParamStore {
    type Output = Tensor;

    fn index(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }
}

impl std::ops::Index<&String> for ParamStore {
    type Output = Tensor;

    fn index(&self, name: &String) -> &Tensor {
        &self[name.as_str()]
    }
}

/// Gradients keyed by parameter name. Missing names mean zero gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn accumulate(&mut self, name: &str, g: Tensor) {
        match self.grads.get_mut(name) {
            Some(existing) => existing.add_assign(&g),
            None => {
                self.grads.insert(name.to_string(), g);
            }
        }
    }

    /// Adds every gradient of `other`, in name order.
    pub fn merge(&mut self, other: &Gradients) {
        for (name, g) in &other.grads {
            self.accumulate(name, g.clone());
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.scale(s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn scalar(&self, name: &str, index: usize) -> f64 {
        self.grads.get(name).map_or(0.0, |g| g.data()[index])
    }

    pub fn set_scalar(&mut self, name: &str, index: usize, value: f64, shape: [usize; 2]) {
        let g = self
            .grads
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
        g.data_mut()[index] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// Euclidean norm over all gradient entries.
    pub fn norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Xavier-uniform `[fan_in, fan_out]` matrix.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..=a))
        .collect();
    Tensor::new(fan_in, fan_out, data)
}
