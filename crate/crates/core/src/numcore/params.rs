use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{NumError, Tensor};

/// Named parameters with one gradient accumulator each.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NumError> {
        if self.index.contains_key(name) {
            return Err(NumError::DuplicateParam(name.to_string()));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.grads[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter_mut().zip(self.grads.iter_mut()))
            .map(|(n, (v, g))| (n, v, g))
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<(), NumError> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| NumError::MissingParam(name.to_string()))?;
        if g.len() != self.grads[i].len() {
            return Err(NumError::Dimension(format!(
                "gradient for {name} has shape {:?}, parameter is {:?}",
                g.shape(),
                self.values[i].shape()
            )));
        }
        self.grads[i].add_assign(g);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Uniform in `±gain/√fan_in` for a `[fan_in, fan_out]` weight.
    pub fn init_linear(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<(), NumError> {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<(), NumError> {
        self.insert(name, Tensor::zeros(shape))
    }

    /// Orthogonal `[rows, cols]` weight scaled by `gain`.
    pub fn init_orthogonal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<(), NumError> {
        self.insert(name, orthogonal(rows, cols, gain, rng))
    }
}

/// Gram-Schmidt on a Gaussian matrix. The longer side gets orthonormal
/// vectors; when `rows > cols` the columns are orthonormal, otherwise the
/// rows are.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let (n, dim) = if rows > cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut t = Tensor::zeros(&[rows, cols]);
    for (k, b) in basis.iter().enumerate() {
        for (l, &x) in b.iter().enumerate() {
            if rows > cols {
                t.set(l, k, gain * x);
            } else {
                t.set(k, l, gain * x);
            }
        }
    }
    t
}
