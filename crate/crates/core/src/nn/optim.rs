use super::{Grads, NnError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

/// AdamW with decoupled weight decay and bias correction.
///
/// Moments and step counts are kept per parameter: a parameter that receives no
/// gradient in a step is left bitwise untouched (no decay, no moment drift).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    moments: Vec<Option<Moments>>,
    steps: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            moments: Vec::new(),
            steps: 0,
        }
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<(), NnError> {
        let lr = self.config.lr;
        self.step_with_lr(store, grads, lr)
    }

    pub fn step_with_lr(
        &mut self,
        store: &mut ParamStore,
        grads: &Grads,
        lr: f32,
    ) -> Result<(), NnError> {
        for (id, g) in grads.touched() {
            if !g.is_finite() {
                return Err(NnError::Numeric(format!(
                    "non-finite gradient for {}",
                    store.name(id)
                )));
            }
            if g.shape() != store.get(id).shape() {
                return Err(NnError::Shape(format!(
                    "gradient shape {:?} for {} of shape {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        for (id, g) in grads.touched() {
            let w = store.get_mut(id).data_mut();
            let mom = self.moments[id.0].get_or_insert_with(|| Moments {
                m: vec![0.0; w.len()],
                v: vec![0.0; w.len()],
                t: 0,
            });
            mom.t += 1;
            let bc1 = 1.0 - beta1.powi(mom.t as i32);
            let bc2 = 1.0 - beta2.powi(mom.t as i32);
            let decay = 1.0 - lr * weight_decay;
            for (((wi, gi), mi), vi) in w
                .iter_mut()
                .zip(g.data())
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *wi *= decay;
                *wi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// Flattens optimizer state into named tensors (for checkpoints).
    pub fn export(&self, store: &ParamStore, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![(
            format!("{prefix}steps"),
            Tensor::full(&[1], self.steps as f32),
        )];
        for (i, mom) in self.moments.iter().enumerate() {
            let Some(mom) = mom else { continue };
            let id = ParamId(i);
            let name = store.name(id);
            let shape = store.get(id).shape();
            out.push((
                format!("{prefix}m.{name}"),
                Tensor::from_vec(shape, mom.m.clone()).unwrap(),
            ));
            out.push((
                format!("{prefix}v.{name}"),
                Tensor::from_vec(shape, mom.v.clone()).unwrap(),
            ));
            out.push((format!("{prefix}t.{name}"), Tensor::full(&[1], mom.t as f32)));
        }
        out
    }

    /// Restores state produced by [`AdamW::export`]; unknown names are ignored.
    pub fn import(&mut self, store: &ParamStore, prefix: &str, tensors: &ParamStore) {
        self.moments = vec![None; store.len()];
        if let Some(t) = tensors.by_name(&format!("{prefix}steps")) {
            self.steps = t.item() as u64;
        }
        for id in store.ids() {
            let name = store.name(id);
            let (Some(m), Some(v), Some(t)) = (
                tensors.by_name(&format!("{prefix}m.{name}")),
                tensors.by_name(&format!("{prefix}v.{name}")),
                tensors.by_name(&format!("{prefix}t.{name}")),
            ) else {
                continue;
            };
            if m.shape() == store.get(id).shape() && v.shape() == m.shape() {
                self.moments[id.0] = Some(Moments {
                    m: m.data().to_vec(),
                    v: v.data().to_vec(),
                    t: t.item() as u32,
                });
            }
        }
    }
}
