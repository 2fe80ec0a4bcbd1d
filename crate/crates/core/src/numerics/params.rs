use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named, row-major parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamArray {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-array Adam moments plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

/// Flat named parameter arrays with their optimizer state.
///
/// Arrays keep insertion order; architectures address them by index for the
/// hot paths and by name for checkpoints and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    arrays: Vec<ParamArray>,
    adam: AdamState,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            arrays: Vec::new(),
            adam: AdamState {
                step: 0,
                first: Vec::new(),
                second: Vec::new(),
            },
        }
    }

    /// Appends a zero-filled array and returns its index.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let array = ParamArray::zeros(name, shape);
        self.adam.first.push(vec![0.0; array.len()]);
        self.adam.second.push(vec![0.0; array.len()]);
        self.arrays.push(array);
        self.arrays.len() - 1
    }

    pub fn arrays(&self) -> &[ParamArray] {
        &self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(ParamArray::len).sum()
    }

    pub fn values(&self, index: usize) -> &[f64] {
        &self.arrays[index].values
    }

    pub fn values_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.arrays[index].values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub(crate) fn adam_parts_mut(&mut self) -> (&mut [ParamArray], &mut AdamState) {
        (&mut self.arrays, &mut self.adam)
    }

    pub fn is_finite(&self) -> bool {
        self.arrays
            .iter()
            .all(|a| a.values.iter().all(|v| v.is_finite()))
    }

    /// Copies parameter values (not optimizer state) from a congruent store.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_congruent(other.arrays.iter().map(|a| a.len()))?;
        for (dst, src) in self.arrays.iter_mut().zip(&other.arrays) {
            dst.values.copy_from_slice(&src.values);
        }
        Ok(())
    }

    /// Drops optimizer state, keeping parameter values.
    pub fn reset_optimizer(&mut self) {
        self.adam.step = 0;
        for m in self
            .adam
            .first
            .iter_mut()
            .chain(self.adam.second.iter_mut())
        {
            m.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.arrays
            .iter()
            .flat_map(|a| a.values.iter().copied())
            .collect()
    }

    /// Mutable access to the `flat`-th scalar in flattened order.
    pub fn flat_mut(&mut self, mut flat: usize) -> &mut f64 {
        for a in &mut self.arrays {
            if flat < a.len() {
                return &mut a.values[flat];
            }
            flat -= a.len();
        }
        panic!("flat index out of range");
    }

    fn check_congruent(&self, lens: impl Iterator<Item = usize>) -> Result<()> {
        let lens: Vec<usize> = lens.collect();
        if lens.len() != self.arrays.len()
            || lens.iter().zip(&self.arrays).any(|(l, a)| *l != a.len())
        {
            return Err(Error::config("parameter stores are not shape-congruent"));
        }
        Ok(())
    }
}

/// Loss gradients, keyed like the [`ParamStore`] they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    arrays: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            arrays: params.arrays.iter().map(|a| vec![0.0; a.len()]).collect(),
        }
    }

    pub fn array(&self, index: usize) -> &[f64] {
        &self.arrays[index]
    }

    pub fn array_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.arrays[index]
    }

    pub fn arrays(&self) -> &[Vec<f64>] {
        &self.arrays
    }

    pub fn is_congruent(&self, params: &ParamStore) -> bool {
        self.arrays.len() == params.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&params.arrays)
                .all(|(g, p)| g.len() == p.len())
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        self.arrays
            .iter_mut()
            .for_each(|a| a.iter_mut().for_each(|v| *v = 0.0));
    }

    pub fn scale(&mut self, factor: f64) {
        self.arrays
            .iter_mut()
            .for_each(|a| a.iter_mut().for_each(|v| *v *= factor));
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (dst, src) in self.arrays.iter_mut().zip(&other.arrays) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.arrays.iter().flatten().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.arrays
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_tracks_shapes_and_moments() {
        let mut p = ParamStore::new();
        let w = p.add("w", &[3, 2]);
        let b = p.add("b", &[3]);
        assert_eq!(p.values(w).len(), 6);
        assert_eq!(p.values(b).len(), 3);
        assert_eq!(p.adam().first[w].len(), 6);
        assert_eq!(p.adam().second[b].len(), 3);
        assert_eq!(p.index_of("b"), Some(b));
        assert_eq!(p.num_values(), 9);
        let g = Gradients::zeros_like(&p);
        assert!(g.is_congruent(&p));
    }

    #[test]
    fn flat_mut_walks_arrays_in_order() {
        let mut p = ParamStore::new();
        p.add("a", &[2]);
        p.add("b", &[2]);
        *p.flat_mut(3) = 5.0;
        assert_eq!(p.flatten(), vec![0.0, 0.0, 0.0, 5.0]);
    }
}
