use indexmap::IndexMap;

use super::{NnError, Tensor};

/// Index of a tensor inside a [`ParamStore`]. Stable for the life of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Insertion-ordered table of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let (idx, _) = self.tensors.insert_full(name, tensor);
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.tensors.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.tensors.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Ids of every tensor whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.tensors
            .keys()
            .enumerate()
            .filter(|(_, k)| k.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Overwrites the value of an existing tensor; shapes are immutable.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<(), NnError> {
        let slot = &mut self.tensors[id.0];
        if slot.shape() != tensor.shape() {
            return Err(NnError::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.tensors.get_index(id.0).unwrap().0,
                self.tensors[id.0].shape(),
                tensor.shape()
            )));
        }
        *slot = tensor;
        Ok(())
    }

    /// Copies every tensor of `other` whose name (after stripping `from_prefix` and
    /// prepending `to_prefix`) exists here with an identical shape. Returns the number
    /// of tensors copied.
    pub fn load_matching(
        &mut self,
        other: &ParamStore,
        from_prefix: &str,
        to_prefix: &str,
    ) -> Result<usize, NnError> {
        let mut copied = 0;
        for (name, tensor) in other.iter() {
            let Some(rest) = name.strip_prefix(from_prefix) else {
                continue;
            };
            let target = format!("{to_prefix}{rest}");
            if let Some(id) = self.id(&target) {
                self.set(id, tensor.clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// Gradient accumulator keyed by [`ParamId`]. Parameters never touched stay `None`.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, id: ParamId, shape: &[usize], grad: &[f32]) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(grad) {
                    *a += *b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_vec(shape, grad.to_vec()).expect("grad shape"));
            }
        }
    }

    /// Sets a gradient directly (used for parameters whose loss is closed-form).
    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        self.slots[id.0] = Some(grad);
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.slots.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Drops gradients for every parameter not selected by `keep`.
    pub fn retain(&mut self, keep: impl Fn(ParamId) -> bool) {
        for (i, slot) in self.slots.iter_mut().enumerate() {
            if !keep(ParamId(i)) {
                *slot = None;
            }
        }
    }

    pub fn touched(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|t| (ParamId(i), t)))
    }

    pub fn global_norm(&self) -> f32 {
        self.touched()
            .flat_map(|(_, t)| t.data().iter())
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }
}
