use std::collections::HashSet;

use super::{NnError, Result};

/// A named, shaped, row-major parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{name}: dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }

    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            name: name.into(),
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Every trainable parameter of a model, in layer order. Gradients use the
/// same type and layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelWeights {
    tensors: Vec<NamedTensor>,
}

impl ModelWeights {
    pub fn new(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(NnError::DuplicateName(t.name.clone()));
            }
            let expected: usize = t.dims.iter().product();
            if expected != t.data.len() {
                return Err(NnError::ShapeMismatch(format!(
                    "{}: dims {:?} need {expected} values, got {}",
                    t.name,
                    t.dims,
                    t.data.len()
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<NamedTensor> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(NamedTensor::len).sum()
    }

    /// Same names, order and dims.
    pub fn check_compatible(&self, other: &ModelWeights) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} tensors vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.dims != b.dims {
                return Err(NnError::ShapeMismatch(format!(
                    "{}{:?} vs {}{:?}",
                    a.name, a.dims, b.name, b.dims
                )));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor::zeros(t.name.clone(), t.dims.clone()))
                .collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.fill(value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn max_abs_diff(&self, other: &ModelWeights) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_dims() {
        let a = NamedTensor::zeros("a", vec![2]);
        assert_eq!(
            ModelWeights::new(vec![a.clone(), a.clone()]),
            Err(NnError::DuplicateName("a".into()))
        );
        assert!(NamedTensor::new("b", vec![2, 2], vec![0.0; 3]).is_err());
        let w = ModelWeights::new(vec![a, NamedTensor::zeros("b", vec![3, 1])]).unwrap();
        assert_eq!(w.param_count(), 5);
        assert!(w.check_compatible(&w.zeros_like()).is_ok());
    }
}
