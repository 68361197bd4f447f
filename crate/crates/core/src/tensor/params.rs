use rand::Rng;

use super::graph::Gradients;
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named, ordered collection of model tensors. Non-trainable entries hold
/// buffers such as batch-norm running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(Entry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f32,
        rng: &mut R,
    ) -> ParamId {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of scalar trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Replaces every value with the one at the same position in `other`,
    /// after checking that names and shapes agree.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), String> {
        if self.entries.len() != other.entries.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            ));
        }
        for (mine, theirs) in self.entries.iter().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(format!(
                    "tensor mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                ));
            }
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f32) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction and a fixed learning rate.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    first: Vec<Option<Vec<f32>>>,
    second: Vec<Option<Vec<f32>>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (id, grad) in grads.iter() {
            if !store.is_trainable(id) {
                continue;
            }
            let n = grad.numel();
            let m = self.first[id.0].get_or_insert_with(|| vec![0.0; n]);
            let v = self.second[id.0].get_or_insert_with(|| vec![0.0; n]);
            let p = store.get_mut(id).data_mut();
            for i in 0..n {
                let g = grad.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
