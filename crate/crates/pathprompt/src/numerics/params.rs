//! Named parameter collections with gradient accumulators.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::NumericsError;

/// One named, trainable tensor plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// An insertion-ordered set of parameters. Iteration order is the insertion
/// order, which keeps checkpoints, digests and optimizer updates stable.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateParam { name: name.into() });
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.index.insert(name.into(), self.params.len());
        self.params.push(Param { name: name.into(), value, grad, trainable: true });
        Ok(())
    }

    /// Insert a weight matrix initialized Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), NumericsError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    /// Insert a zero-initialized bias or gain-offset vector.
    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<(), NumericsError> {
        self.insert(name, Tensor::zeros(shape))
    }

    /// Insert an all-ones vector (layer-norm gains).
    pub fn insert_ones(&mut self, name: &str, shape: Vec<usize>) -> Result<(), NumericsError> {
        let numel: usize = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![1.0; numel])?)
    }

    pub fn get(&self, name: &str) -> Result<&Param, NumericsError> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| NumericsError::UnknownParam { name: name.into() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param, NumericsError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(NumericsError::UnknownParam { name: name.into() }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Total number of scalar values across trainable parameters only.
    pub fn num_trainable_values(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Mark every parameter whose name starts with `prefix`.
    pub fn set_trainable_by_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut() {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Copy parameter values into `g` as leaves. Trainable parameters become
    /// grad-requiring leaves; everything else enters as constants, so a
    /// frozen set never grows gradient buffers.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        let mut vars = HashMap::new();
        for p in &self.params {
            let var = g.leaf(p.value.clone(), p.trainable);
            vars.insert(p.name.clone(), var);
        }
        Binding { vars }
    }

    /// Bind with gradients disabled regardless of trainable flags.
    pub fn bind_frozen(&self, g: &mut Graph) -> Binding {
        let mut vars = HashMap::new();
        for p in &self.params {
            let var = g.leaf(p.value.clone(), false);
            vars.insert(p.name.clone(), var);
        }
        Binding { vars }
    }

    /// Add the gradients `backward` left in `g` onto this set's accumulators.
    pub fn accumulate_grads(&mut self, g: &Graph, binding: &Binding) -> Result<(), NumericsError> {
        for p in self.params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let var = binding.var(&p.name)?;
            if let Some(grad) = g.grad(var) {
                for (acc, gi) in p.grad.data_mut().iter_mut().zip(grad.data()) {
                    *acc += gi;
                }
            }
        }
        Ok(())
    }

    /// Order-stable checksum over every parameter tensor (name, shape, bytes).
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update(p.name.as_bytes());
            for d in p.value.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

/// Maps parameter names to the graph leaves a `bind` call created.
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    /// Assemble a binding from explicit `(name, var)` pairs. Gradient
    /// checkers use this to substitute probe leaves for bound parameters.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Binding { vars: pairs.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var, NumericsError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParam { name: name.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(&[1.0]).unwrap()).unwrap();
        assert!(ps.insert("w", Tensor::vector(&[2.0]).unwrap()).is_err());
    }

    #[test]
    fn uniform_init_is_seed_deterministic_and_bounded() {
        let mut a = ParamSet::new();
        let mut b = ParamSet::new();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        a.insert_uniform("w", vec![4, 4], 4, &mut r1).unwrap();
        b.insert_uniform("w", vec![4, 4], 4, &mut r2).unwrap();
        assert_eq!(a.get("w").unwrap().value, b.get("w").unwrap().value);
        let bound = 0.5;
        assert!(a.get("w").unwrap().value.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(&[1.0, 2.0]).unwrap()).unwrap();
        let d1 = ps.digest();
        assert_eq!(d1, ps.digest());
        ps.get_mut("w").unwrap().value.data_mut()[0] += 1e-3;
        assert_ne!(d1, ps.digest());
    }

    #[test]
    fn frozen_binding_gets_no_gradient_buffer() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(&[1.0, 2.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let binding = ps.bind_frozen(&mut g);
        let w = binding.var("w").unwrap();
        let loss = g.sum_all(w).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn accumulate_adds_gradients() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(&[1.0, 2.0]).unwrap()).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let binding = ps.bind(&mut g);
            let w = binding.var("w").unwrap();
            let loss = g.sum_all(w).unwrap();
            g.backward(loss).unwrap();
            ps.accumulate_grads(&g, &binding).unwrap();
        }
        assert_eq!(ps.get("w").unwrap().grad.data(), &[2.0, 2.0]);
    }
}
