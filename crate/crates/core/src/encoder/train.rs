use std::path::Path;

use super::{tokenize, EncoderCfg, EncoderError, SslModel};
use crate::maskgen::{
    build_pretrain_batch, ContextSampler, MaskRanges, PretrainBatch, PretrainSources, TaskKind,
};
use crate::nn::{save_store, AdamW, AdamWConfig, Grads, Graph, NnError, ParamStore, Tensor};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainCfg {
    pub encoder: EncoderCfg,
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub tasks: Vec<TaskKind>,
    pub ranges: MaskRanges,
    pub seed: u64,
}

impl Default for PretrainCfg {
    fn default() -> Self {
        Self {
            encoder: EncoderCfg::default(),
            steps: 2000,
            batch: 8,
            lr: 1e-4,
            weight_decay: 0.0,
            tasks: TaskKind::ALL.to_vec(),
            ranges: MaskRanges::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub task: TaskKind,
    pub loss: f64,
}

/// One forward / backward / AdamW update on the batch's task loss (mean over
/// items). Parameters the task does not touch receive no gradient and stay
/// bitwise unchanged.
pub fn pretrain_step(
    model: &SslModel,
    store: &mut ParamStore,
    opt: &mut AdamW,
    batch: &PretrainBatch,
    lr: f32,
) -> Result<f64, EncoderError> {
    if batch.items.is_empty() {
        return Err(EncoderError::Argument("empty pretraining batch".into()));
    }
    let mut grads = Grads::new(store);
    let loss = {
        let mut g = Graph::new(store);
        let mut total = None;
        for (ctx, mask) in &batch.items {
            let tokens = tokenize(ctx, model.cfg().patch)?;
            let (_, l) = model.forward(&mut g, &tokens, mask)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l),
            });
        }
        let total = total.expect("non-empty batch");
        let mean = g.scale(total, 1.0 / batch.items.len() as f32);
        g.backward(mean, &mut grads)?;
        g.scalar(mean)
    };
    opt.step_with_lr(store, &grads, lr)?;
    Ok(loss)
}

/// Per-step history of a pretraining run.
#[derive(Debug, Clone, Default)]
pub struct PretrainLog {
    pub steps: Vec<StepMetrics>,
}

impl PretrainLog {
    /// Mean loss of `task` over steps with index in `range`, if any.
    pub fn task_mean(&self, task: TaskKind, range: std::ops::Range<usize>) -> Option<f64> {
        let v: Vec<f64> = self
            .steps
            .iter()
            .filter(|m| m.task == task && range.contains(&m.step))
            .map(|m| m.loss)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Owns the model, parameters, optimizer and data stream of a pretraining run.
pub struct Pretrainer {
    pub cfg: PretrainCfg,
    pub model: SslModel,
    pub store: ParamStore,
    pub opt: AdamW,
    pub sources: PretrainSources,
    pub sampler: ContextSampler,
    pub log: PretrainLog,
    rng: SimRng,
}

impl Pretrainer {
    pub fn new(cfg: PretrainCfg, sources: PretrainSources, sampler: ContextSampler) -> Result<Self, EncoderError> {
        if cfg.tasks.is_empty() {
            return Err(EncoderError::Argument("no pretraining task enabled".into()));
        }
        if (sampler.height, sampler.width, sampler.patch) != (cfg.encoder.map_h, cfg.encoder.map_w, cfg.encoder.patch) {
            return Err(EncoderError::Argument("context sampler does not match encoder".into()));
        }
        let mut rng = seeded(cfg.seed);
        let mut store = ParamStore::new();
        let model = SslModel::init(&mut store, cfg.encoder, &mut rng)?;
        let opt = AdamW::new(AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        });
        Ok(Self {
            cfg,
            model,
            store,
            opt,
            sources,
            sampler,
            log: PretrainLog::default(),
            rng,
        })
    }

    pub fn step(&mut self) -> Result<StepMetrics, EncoderError> {
        let batch = build_pretrain_batch(
            &self.sources,
            &self.cfg.tasks,
            &self.cfg.ranges,
            &self.sampler,
            self.cfg.batch,
            &mut self.rng,
        )?;
        let loss = pretrain_step(&self.model, &mut self.store, &mut self.opt, &batch, self.cfg.lr)?;
        let m = StepMetrics {
            step: self.log.steps.len(),
            task: batch.task,
            loss,
        };
        self.log.steps.push(m);
        Ok(m)
    }

    /// Runs the remaining configured steps, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepMetrics)) -> Result<(), EncoderError> {
        while self.log.steps.len() < self.cfg.steps {
            let m = self.step()?;
            on_step(&m);
        }
        Ok(())
    }

    /// Parameters, optimizer moments and the architecture record.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut extra = self.opt.export(&self.store, "opt.");
        extra.push(("meta.encoder_cfg".into(), encoder_cfg_tensor(&self.cfg.encoder)));
        save_store(path, &self.store, &extra)
    }
}

pub(crate) fn encoder_cfg_tensor(c: &EncoderCfg) -> Tensor {
    let v = [
        c.d, c.layers, c.heads, c.patch, c.map_h, c.map_w, c.dec_dim, c.dec_layers, c.dec_heads,
    ];
    Tensor::from_vec(&[v.len()], v.iter().map(|x| *x as f32).collect()).expect("fixed length")
}

/// Reads the architecture record written by [`Pretrainer::save`].
pub fn encoder_cfg_from_store(store: &ParamStore) -> Result<EncoderCfg, EncoderError> {
    let t = store
        .by_name("meta.encoder_cfg")
        .ok_or_else(|| EncoderError::Argument("checkpoint lacks meta.encoder_cfg".into()))?;
    let v: Vec<usize> = t.data().iter().map(|x| *x as usize).collect();
    if v.len() != 9 {
        return Err(EncoderError::Argument("malformed meta.encoder_cfg".into()));
    }
    let cfg = EncoderCfg {
        d: v[0],
        layers: v[1],
        heads: v[2],
        patch: v[3],
        map_h: v[4],
        map_w: v[5],
        dec_dim: v[6],
        dec_layers: v[7],
        dec_heads: v[8],
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads encoder and decoder weights written by [`Pretrainer::save`].
pub fn load_ssl_checkpoint(path: &Path) -> Result<(SslModel, ParamStore), EncoderError> {
    let ckpt = crate::nn::load_store(path)?;
    let cfg = encoder_cfg_from_store(&ckpt)?;
    let mut store = ParamStore::new();
    let model = SslModel::init(&mut store, cfg, &mut seeded(0))?;
    store.load_matching(&ckpt, "", "")?;
    Ok((model, store))
}
