use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ndgrad::{sgd_step, Graph, ParamStore, Tensor, Var};
use crate::phantom::Image;
use crate::pretrain::encoder::{ContrastiveNet, NetSpec, DEFAULT_CHANNELS, LEVELS};
use crate::pretrain::loss::{detco_loss_graph, momentum_update, LevelEmbeddings, LossWeights, QueueVars};
use crate::pretrain::queue::QueuePair;
use crate::pretrain::views::{make_views, ViewConfig, ViewSet};
use crate::pretrain::PretrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub tau: f64,
    pub level_weights: [f64; LEVELS],
    pub momentum: f64,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub channels: [usize; LEVELS],
    pub hidden: usize,
    pub embed_dim: usize,
    /// Fill the queues with keys of the training images before the first
    /// step, so that the first losses are already contrastive.
    pub warm_start: bool,
    pub view_width: usize,
    pub view_height: usize,
    pub grid: usize,
    pub min_crop_area: f64,
    pub flip_prob: f64,
    pub jitter: f64,
    pub noise_sigma: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let v = ViewConfig::default();
        Self {
            tau: 0.2,
            level_weights: [0.1, 0.4, 0.7, 1.0],
            momentum: 0.999,
            queue_capacity: 256,
            batch_size: 4,
            epochs: 200,
            lr: 0.015,
            seed: 0,
            channels: DEFAULT_CHANNELS,
            hidden: 64,
            embed_dim: 32,
            warm_start: false,
            view_width: v.view_width,
            view_height: v.view_height,
            grid: v.grid,
            min_crop_area: v.min_crop_area,
            flip_prob: v.flip_prob,
            jitter: v.jitter,
            noise_sigma: v.noise_sigma,
        }
    }
}

impl PretrainConfig {
    pub fn views(&self) -> ViewConfig {
        ViewConfig {
            view_width: self.view_width,
            view_height: self.view_height,
            grid: self.grid,
            min_crop_area: self.min_crop_area,
            flip_prob: self.flip_prob,
            jitter: self.jitter,
            noise_sigma: self.noise_sigma,
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec { channels: self.channels, hidden: self.hidden, embed_dim: self.embed_dim, patches: self.grid * self.grid }
    }

    pub fn weights(&self) -> LossWeights<f64> {
        LossWeights { tau: self.tau, level_weights: self.level_weights.to_vec() }
    }

    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: String| Err(PretrainError::Config(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1]", self.momentum));
        }
        if self.level_weights.iter().any(|&w| !(w >= 0.0)) {
            return bad("level weights must be non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0) {
            return bad(format!("lr {} must be non-negative", self.lr));
        }
        if self.channels.iter().any(|&c| c == 0) || self.hidden == 0 || self.embed_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        self.views().validate()?;
        Ok(())
    }
}

/// One optimizer step of the log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Whether every queue was at capacity when the loss was computed.
    pub queues_full: bool,
}

/// Query encoder, momentum encoder and memory queues.
pub struct Pretrainer {
    cfg: PretrainConfig,
    net: ContrastiveNet,
    query: ParamStore<f64>,
    key: ParamStore<f64>,
    queues: QueuePair<f64>,
    steps: usize,
}

fn image_tensor(img: &Image<f64>) -> Tensor<f64> {
    Tensor::new(vec![1, img.height(), img.width()], img.data().to_vec()).expect("image pixels are finite")
}

impl Pretrainer {
    /// Fresh query encoder; the momentum encoder starts as its copy.
    pub fn new(cfg: &PretrainConfig) -> Result<Self, PretrainError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(4);
        let mut query = ParamStore::new();
        let net = ContrastiveNet::init(&mut query, &cfg.net_spec(), &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            net,
            key: query.clone(),
            query,
            queues: QueuePair::new(LEVELS, cfg.queue_capacity, cfg.embed_dim),
            steps: 0,
        })
    }

    pub fn query_params(&self) -> &ParamStore<f64> {
        &self.query
    }

    pub fn key_params(&self) -> &ParamStore<f64> {
        &self.key
    }

    pub fn queues(&self) -> &QueuePair<f64> {
        &self.queues
    }

    pub fn net(&self) -> &ContrastiveNet {
        &self.net
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn embed(&self, g: &mut Graph<f64>, p: &crate::ndgrad::Bound, global: &Image<f64>, patches: &[Image<f64>]) -> Result<LevelEmbeddings<Var>, PretrainError> {
        let x = g.input(&image_tensor(global));
        let global = self.net.encode_multilevel(g, p, x)?;
        let pv: Vec<Var> = patches.iter().map(|p| g.input(&image_tensor(p))).collect();
        let local = self.net.encode_patches(g, p, &pv)?;
        Ok(LevelEmbeddings { global, local })
    }

    /// Key embeddings of each view set from the momentum encoder.
    pub fn keys(&self, views: &[ViewSet]) -> Result<Vec<LevelEmbeddings<Vec<f64>>>, PretrainError> {
        let mut g = Graph::new();
        let p = self.key.bind_frozen(&mut g);
        let mut out = Vec::with_capacity(views.len());
        for v in views {
            let e = self.embed(&mut g, &p, &v.global_k, &v.patches_k)?;
            let val = |vars: &[Var]| vars.iter().map(|&x| g.value(x).to_vec()).collect::<Vec<_>>();
            out.push(LevelEmbeddings { global: val(&e.global), local: val(&e.local) });
        }
        Ok(out)
    }

    /// Query embeddings of each view set from the query encoder, as values.
    pub fn queries(&self, views: &[ViewSet]) -> Result<Vec<LevelEmbeddings<Vec<f64>>>, PretrainError> {
        let mut g = Graph::new();
        let p = self.query.bind_frozen(&mut g);
        let mut out = Vec::with_capacity(views.len());
        for v in views {
            let e = self.embed(&mut g, &p, &v.global_q, &v.patches_q)?;
            let val = |vars: &[Var]| vars.iter().map(|&x| g.value(x).to_vec()).collect::<Vec<_>>();
            out.push(LevelEmbeddings { global: val(&e.global), local: val(&e.local) });
        }
        Ok(out)
    }

    fn enqueue(&mut self, keys: &[LevelEmbeddings<Vec<f64>>]) -> Result<(), PretrainError> {
        for level in 0..LEVELS {
            let g: Vec<&[f64]> = keys.iter().map(|k| k.global[level].as_slice()).collect();
            let l: Vec<&[f64]> = keys.iter().map(|k| k.local[level].as_slice()).collect();
            self.queues.global[level].enqueue(&g)?;
            self.queues.local[level].enqueue(&l)?;
        }
        Ok(())
    }

    /// Enqueues momentum-encoder keys of `views` without training.
    pub fn prefill(&mut self, views: &[ViewSet]) -> Result<(), PretrainError> {
        let keys = self.keys(views)?;
        self.enqueue(&keys)
    }

    /// Mean multistage loss of a batch under the current queues, and its
    /// graph, without updating anything.
    pub fn batch_loss(&self, views: &[ViewSet]) -> Result<(Graph<f64>, crate::ndgrad::Bound, Var), PretrainError> {
        if views.is_empty() {
            return Err(PretrainError::EmptyDataset);
        }
        let keys = self.keys(views)?;
        let mut g = Graph::new();
        let p = self.query.bind(&mut g);
        let qv = QueueVars::new(&mut g, &self.queues)?;
        let w = self.cfg.weights();
        let mut total: Option<Var> = None;
        for (v, k) in views.iter().zip(&keys) {
            let q = self.embed(&mut g, &p, &v.global_q, &v.patches_q)?;
            let consts = |g: &mut Graph<f64>, vs: &[Vec<f64>]| -> Result<Vec<Var>, PretrainError> {
                vs.iter().map(|x| g.constant(vec![x.len()], x.clone()).map_err(Into::into)).collect()
            };
            let kv = LevelEmbeddings { global: consts(&mut g, &k.global)?, local: consts(&mut g, &k.local)? };
            let l = detco_loss_graph(&mut g, &q, &kv, &qv, &w)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let loss = g.scale(total.expect("non-empty batch"), 1.0 / views.len() as f64)?;
        Ok((g, p, loss))
    }

    /// One optimizer step: loss, backward, SGD on the query encoder, momentum
    /// update of the key encoder, then enqueue of this batch's keys.
    pub fn step(&mut self, views: &[ViewSet]) -> Result<f64, PretrainError> {
        let (g, p, loss) = self.batch_loss(views)?;
        let value = g.scalar(loss)?;
        if !value.is_finite() {
            return Err(PretrainError::NonFiniteLoss(self.steps));
        }
        let grads = g.backward(loss)?;
        self.query.assign_grads(&p, &grads)?;
        sgd_step(&mut self.query, self.cfg.lr)?;
        self.query.clear_grads();
        momentum_update(&self.query, &mut self.key, self.cfg.momentum)?;
        let keys = self.keys(views)?;
        self.enqueue(&keys)?;
        self.steps += 1;
        Ok(value)
    }
}

/// Result of a pretraining run.
pub struct PretrainOutcome {
    /// Query-encoder parameters of the selected epoch.
    pub params: ParamStore<f64>,
    /// 1-based epoch the parameters come from.
    pub selected_epoch: usize,
    pub log: Vec<StepRecord>,
    pub epoch_means: Vec<f64>,
    pub trainer: Pretrainer,
}

fn derive_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.gen()
}

/// Contrastive pretraining over `images`.
///
/// The saved parameters are those at the end of the epoch with the lowest
/// mean step loss among epochs whose every step ran with full queues; when
/// no epoch qualifies the final parameters are kept.
pub fn pretrain(images: &[Image<f64>], cfg: &PretrainConfig) -> Result<PretrainOutcome, PretrainError> {
    if images.is_empty() {
        return Err(PretrainError::EmptyDataset);
    }
    let mut trainer = Pretrainer::new(cfg)?;
    let view_cfg = cfg.views();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(5);
    if cfg.warm_start {
        let views = images
            .iter()
            .map(|img| make_views(img, derive_seed(&mut rng), &view_cfg))
            .collect::<Result<Vec<_>, _>>()?;
        for chunk in views.chunks(cfg.batch_size.max(1)) {
            trainer.prefill(chunk)?;
        }
    }
    let mut log = Vec::new();
    let mut epoch_means = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<f64>)> = None;
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        let mut eligible = true;
        for batch in order.chunks(cfg.batch_size) {
            let views = batch
                .iter()
                .map(|&i| make_views(&images[i], derive_seed(&mut rng), &view_cfg))
                .collect::<Result<Vec<_>, _>>()?;
            let full = trainer.queues().all_full();
            eligible &= full;
            let loss = trainer.step(&views)?;
            log.push(StepRecord { step: trainer.steps(), epoch, loss, queues_full: full });
            sum += loss;
            steps += 1;
        }
        let mean = sum / steps as f64;
        epoch_means.push(mean);
        if eligible && best.as_ref().map_or(true, |(b, _, _)| mean < *b) {
            best = Some((mean, epoch, trainer.query_params().clone()));
        }
    }
    let (params, selected_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (trainer.query_params().clone(), cfg.epochs),
    };
    Ok(PretrainOutcome { params, selected_epoch, log, epoch_means, trainer })
}

/// Text lines `step loss` for the loss log.
pub fn format_log(log: &[StepRecord]) -> String {
    log.iter().map(|r| format!("{} {:.17e}\n", r.step, r.loss)).collect()
}
