use indexmap::IndexMap;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::{Gradients, Tensor};
use crate::error::{ensure, Error, Result};

/// A named group of trainable tensors with paired gradient buffers, plus
/// non-trainable buffers (running statistics, standardization constants).
///
/// Iteration order is insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tag: String,
    params: IndexMap<String, Tensor>,
    grads: IndexMap<String, Tensor>,
    buffers: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            params: IndexMap::new(),
            grads: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<()> {
        ensure!(!self.params.contains_key(name), "duplicate parameter `{name}`");
        self.grads.insert(name.to_string(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    /// Dense weight `fan_in × fan_out`, uniform in `±1/√fan_in`.
    pub fn add_dense(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(&format!("{prefix}.weight"), Tensor::new(vec![fan_in, fan_out], w)?)?;
        self.add(&format!("{prefix}.bias"), Tensor::zeros(&[fan_out]))
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor) {
        self.buffers.insert(name.to_string(), value);
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.buffers.get_mut(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(format!("{}.{name}", self.tag)))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let tag = &self.tag;
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(format!("{tag}.{name}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::MissingParam(format!("{}.{name}", self.tag)))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// `(name, value, grad)` triples for an optimizer.
    pub fn iter_mut_with_grads(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &Tensor)> {
        self.params
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, v), g)| (k.as_str(), v, g))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Exact number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds every gradient recorded for this set's tag.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.for_tag(&self.tag) {
            let buf = self
                .grads
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(format!("{}.{name}", self.tag)))?;
            ensure!(buf.shape() == g.shape(), "gradient shape mismatch for `{name}`");
            for (a, b) in buf.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Replaces a parameter value, checking the shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::ParamShape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Replaces a buffer value, checking the shape of an existing buffer.
    pub fn assign_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        if let Some(slot) = self.buffers.get(name) {
            if slot.shape() != value.shape() {
                return Err(Error::ParamShape {
                    name: name.to_string(),
                    expected: slot.shape().to_vec(),
                    found: value.shape().to_vec(),
                });
            }
        }
        self.buffers.insert(name.to_string(), value);
        Ok(())
    }

    /// SHA-256 over names, shapes and bit patterns of parameters and buffers.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.params.iter().chain(&self.buffers) {
            h.update(k.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
