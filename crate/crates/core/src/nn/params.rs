//! Named parameters, optimiser state and non-trainable buffers.

use std::collections::HashMap;

use crate::error::{CkmError, Result};

use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    name: String,
    value: Tensor<T>,
    /// Adam first moment.
    pub(crate) m: Vec<T>,
    /// Adam second moment.
    pub(crate) v: Vec<T>,
    pub(crate) step: u64,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let n = value.numel();
        Self {
            name: name.into(),
            value,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        self.value.data_mut()
    }
}

/// Ordered collection of parameters and buffers. Shapes are fixed once added.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
    buffer_index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            index: HashMap::new(),
            buffer_index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(CkmError::invalid(format!("duplicate parameter `{name}`")));
        }
        self.params.push(Param::new(name, value));
        self.index.insert(name.to_string(), self.params.len() - 1);
        Ok(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<usize> {
        if self.buffer_index.contains_key(name) {
            return Err(CkmError::invalid(format!("duplicate buffer `{name}`")));
        }
        self.buffers.push((name.to_string(), value));
        self.buffer_index
            .insert(name.to_string(), self.buffers.len() - 1);
        Ok(self.buffers.len() - 1)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CkmError::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.params[self.index_of(name)?].value)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffer_index
            .get(name)
            .map(|&i| &self.buffers[i].1)
            .ok_or_else(|| CkmError::invalid(format!("unknown buffer `{name}`")))
    }

    pub(crate) fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.buffer_index.get(name) {
            Some(&i) => Ok(&mut self.buffers[i].1),
            None => Err(CkmError::invalid(format!("unknown buffer `{name}`"))),
        }
    }

    /// Replaces a parameter's values; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self.index_of(name)?;
        set_same_shape(&mut self.params[i].value, value, name)
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.buffer_mut(name)?;
        set_same_shape(slot, value, name)
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// First parameter or buffer holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.value.all_finite())
            .map(|p| p.name.as_str())
            .or_else(|| {
                self.buffers
                    .iter()
                    .find(|(_, t)| !t.all_finite())
                    .map(|(n, _)| n.as_str())
            })
    }

    /// Fails with a numerical fault naming the first non-finite entry.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(CkmError::Numerical {
                name: name.to_string(),
                message: "parameter holds a non-finite value".into(),
            }),
            None => Ok(()),
        }
    }
}

fn set_same_shape<T: Real>(slot: &mut Tensor<T>, value: Tensor<T>, name: &str) -> Result<()> {
    if slot.shape() != value.shape() {
        return Err(CkmError::invalid(format!(
            "`{name}` has shape {:?}, refusing {:?}",
            slot.shape(),
            value.shape()
        )));
    }
    *slot = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[1])).is_err());
        assert!(s.set("w", Tensor::zeros(&[4])).is_err());
        s.set("w", Tensor::filled(&[2, 2], 1.0)).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0; 4]);
        assert_eq!(s.param_count(), 4);
        assert!(s.get("nope").is_err());
    }

    #[test]
    fn non_finite_is_named() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[1])).unwrap();
        s.add("b", Tensor::filled(&[1], f32::NAN)).unwrap();
        assert_eq!(s.first_non_finite(), Some("b"));
        match s.ensure_finite() {
            Err(CkmError::Numerical { name, .. }) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
