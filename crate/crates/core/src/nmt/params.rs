use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::Mat;

/// Handle of one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Mat) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform Xavier/Glorot initialisation.
    pub fn add_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        self.add(name, Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a)))
    }

    /// Embedding table with unit-variance rows after scaling by `sqrt(dim)`.
    pub fn add_embedding(&mut self, name: &str, rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let a = (3.0 / dim as f64).sqrt();
        self.add(name, Array2::from_shape_simple_fn((rows, dim), || rng.gen_range(-a..a)))
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.add(name, Array2::from_elem((rows, cols), value))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}
