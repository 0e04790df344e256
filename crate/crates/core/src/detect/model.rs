use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::detect::anchors::{generate_anchors, match_anchors, LabelKind};
use crate::detect::boxes::{iou, BBox};
use crate::detect::config::DetectConfig;
use crate::detect::losses::{decode, regression_graph};
use crate::detect::nms::{nms, Detection};
use crate::detect::DetectError;
use crate::ndgrad::{sgd_step, sigmoid, Bound, GradError, Graph, ParamStore, Taps, Tensor, Var};
use crate::phantom::Image;
use crate::pretrain::encoder::{stage_shapes, Encoder};

/// Sample rows and columns of the region-of-interest grid.
pub const ROI_ROWS: usize = 6;
pub const ROI_COLS: usize = 6;
/// Horizontal context added on each side of a region, as a fraction of its
/// width.
pub const ROI_CONTEXT: f64 = 0.5;
/// Smallest side, in pixels, of a proposal kept for the second stage.
pub const MIN_PROPOSAL_SIDE: f64 = 1.0;

fn gaussian(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
    .expect("gaussian init is finite")
}

fn find(store: &ParamStore<f64>, name: &str, shape: &[usize]) -> Result<usize, DetectError> {
    let i = (0..store.len())
        .find(|&i| store.name(i) == name)
        .ok_or_else(|| DetectError::Shape(format!("parameter {name} missing")))?;
    if store.tensor(i).shape() != shape {
        return Err(DetectError::Shape(format!(
            "{name} has shape {:?}, expected {shape:?}",
            store.tensor(i).shape()
        )));
    }
    Ok(i)
}

#[derive(Clone, Debug, PartialEq)]
struct Heads {
    rpn_w: usize,
    rpn_b: usize,
    cls_w: usize,
    cls_b: usize,
    reg_w: usize,
    reg_b: usize,
    fc1_w: Vec<usize>,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

/// Where the encoder weights of a new detector come from.
pub enum EncoderInit<'a> {
    /// Random initialization.
    Scratch,
    /// `enc.*` tensors of a pretraining checkpoint.
    Pretrained(&'a ParamStore<f64>),
}

/// Loss parts of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub fast_cls: f64,
    pub fast_reg: f64,
}

impl StepLoss {
    pub fn rpn(&self) -> f64 {
        self.rpn_cls + self.rpn_reg
    }

    pub fn fastrcnn(&self) -> f64 {
        self.fast_cls + self.fast_reg
    }
}

/// Two-stage anchor detector over the first `rpn_level` encoder stages.
///
/// The proposal head is a 3x3 convolution with relu followed by 1x1
/// objectness and offset convolutions on the `rpn_level` feature map. The
/// second stage samples a `ROI_ROWS x ROI_COLS` bilinear grid from every
/// encoder stage inside each region (widened by [`ROI_CONTEXT`] on both
/// sides), and maps it through one hidden layer to a score and four offsets.
#[derive(Clone, Debug)]
pub struct Detector {
    cfg: DetectConfig,
    image: (usize, usize),
    encoder: Encoder,
    heads: Heads,
    params: ParamStore<f64>,
    anchors: Vec<BBox<f64>>,
    levels: Vec<(usize, usize, usize)>,
}

struct Forward {
    feats: Vec<Var>,
    cls: Var,
    reg: Var,
}

impl Detector {
    /// New detector for `width x height` images with encoder stage widths
    /// `channels` (only the first `rpn_level` are used).
    pub fn new(
        cfg: &DetectConfig,
        image: (usize, usize),
        channels: &[usize],
        init: EncoderInit<'_>,
        rng: &mut impl Rng,
    ) -> Result<Self, DetectError> {
        cfg.validate()?;
        if channels.len() < cfg.rpn_level {
            return Err(DetectError::Config(format!(
                "rpn_level {} needs {} encoder stages, have {}",
                cfg.rpn_level,
                cfg.rpn_level,
                channels.len()
            )));
        }
        let channels = &channels[..cfg.rpn_level];
        let mut params = ParamStore::new();
        let encoder = Encoder::init(&mut params, channels, rng);
        if let EncoderInit::Pretrained(src) = init {
            for i in 0..params.len() {
                let name = params.name(i).to_string();
                let j = find(src, &name, params.tensor(i).shape())?;
                let values = src.tensor(j).values().to_vec();
                let t = params.get_mut(&name).expect("own parameter");
                t.values_mut().copy_from_slice(&values);
            }
        }
        let a = cfg.anchors_per_cell();
        let c = *channels.last().expect("at least one stage");
        let hidden = cfg.rpn_hidden;
        let features: Vec<usize> = channels.iter().map(|&c| c * ROI_ROWS * ROI_COLS).collect();
        let total_features: usize = features.iter().sum();
        let heads = Heads {
            rpn_w: params.push("rpn.conv.w", gaussian(vec![hidden, c, 3, 3], (2.0 / (9 * c) as f64).sqrt(), rng)),
            rpn_b: params.push("rpn.conv.b", Tensor::zeros(vec![hidden])),
            cls_w: params.push("rpn.cls.w", gaussian(vec![a, hidden, 1, 1], 0.01, rng)),
            cls_b: params.push("rpn.cls.b", Tensor::zeros(vec![a])),
            reg_w: params.push("rpn.reg.w", gaussian(vec![4 * a, hidden, 1, 1], 0.01, rng)),
            reg_b: params.push("rpn.reg.b", Tensor::zeros(vec![4 * a])),
            fc1_w: features
                .iter()
                .enumerate()
                .map(|(l, &f)| {
                    let std = (2.0 / total_features as f64).sqrt();
                    params.push(format!("roi.fc1.l{}.w", l + 1), gaussian(vec![f, cfg.roi_hidden], std, rng))
                })
                .collect(),
            fc1_b: params.push("roi.fc1.b", Tensor::zeros(vec![cfg.roi_hidden])),
            fc2_w: params.push("roi.fc2.w", gaussian(vec![cfg.roi_hidden, 5], 0.01, rng)),
            fc2_b: params.push("roi.fc2.b", Tensor::zeros(vec![5])),
        };
        Self::assemble(cfg, image, encoder, heads, params)
    }

    fn assemble(
        cfg: &DetectConfig,
        image: (usize, usize),
        encoder: Encoder,
        heads: Heads,
        params: ParamStore<f64>,
    ) -> Result<Self, DetectError> {
        let (w, h) = image;
        let shapes = stage_shapes(h, w);
        let levels: Vec<(usize, usize, usize)> =
            encoder.channels().iter().zip(shapes).map(|(&c, (fh, fw))| (c, fh, fw)).collect();
        let (_, fh, fw) = levels[cfg.rpn_level - 1];
        if fh == 0 || fw == 0 {
            return Err(DetectError::Geometry(format!("{w}x{h} image leaves no feature cells")));
        }
        let anchors = generate_anchors((fh, fw), (w, h), &cfg.anchor_scales, &cfg.ratios()?)?
            .into_iter()
            .map(|a| a.bbox)
            .collect();
        Ok(Self { cfg: cfg.clone(), image, encoder, heads, params, anchors, levels })
    }

    /// Rebuilds a detector from its saved parameters.
    pub fn from_params(
        cfg: &DetectConfig,
        image: (usize, usize),
        channels: &[usize],
        params: ParamStore<f64>,
    ) -> Result<Self, DetectError> {
        cfg.validate()?;
        if channels.len() < cfg.rpn_level {
            return Err(DetectError::Config("fewer encoder stages than rpn_level".into()));
        }
        let channels = &channels[..cfg.rpn_level];
        let encoder = Encoder::attach(&params, channels)?;
        let a = cfg.anchors_per_cell();
        let c = *channels.last().expect("at least one stage");
        let hidden = cfg.rpn_hidden;
        let heads = Heads {
            rpn_w: find(&params, "rpn.conv.w", &[hidden, c, 3, 3])?,
            rpn_b: find(&params, "rpn.conv.b", &[hidden])?,
            cls_w: find(&params, "rpn.cls.w", &[a, hidden, 1, 1])?,
            cls_b: find(&params, "rpn.cls.b", &[a])?,
            reg_w: find(&params, "rpn.reg.w", &[4 * a, hidden, 1, 1])?,
            reg_b: find(&params, "rpn.reg.b", &[4 * a])?,
            fc1_w: channels
                .iter()
                .enumerate()
                .map(|(l, &c)| find(&params, &format!("roi.fc1.l{}.w", l + 1), &[c * ROI_ROWS * ROI_COLS, cfg.roi_hidden]))
                .collect::<Result<_, _>>()?,
            fc1_b: find(&params, "roi.fc1.b", &[cfg.roi_hidden])?,
            fc2_w: find(&params, "roi.fc2.w", &[cfg.roi_hidden, 5])?,
            fc2_b: find(&params, "roi.fc2.b", &[5])?,
        };
        if params.len() != encoder.depth() * 2 + 10 + heads.fc1_w.len() - 1 {
            return Err(DetectError::Shape(format!("unexpected parameter count {}", params.len())));
        }
        Self::assemble(cfg, image, encoder, heads, params)
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    pub fn config(&self) -> &DetectConfig {
        &self.cfg
    }

    pub fn anchors(&self) -> &[BBox<f64>] {
        &self.anchors
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image
    }

    fn input(&self, g: &mut Graph<f64>, img: &Image<f64>) -> Result<Var, DetectError> {
        if (img.width(), img.height()) != self.image {
            return Err(DetectError::Shape(format!(
                "image is {}x{}, detector expects {}x{}",
                img.width(),
                img.height(),
                self.image.0,
                self.image.1
            )));
        }
        let t = Tensor::new(vec![1, img.height(), img.width()], img.data().to_vec())?;
        Ok(g.input(&t))
    }

    fn forward(&self, g: &mut Graph<f64>, p: &Bound, x: Var) -> Result<Forward, GradError> {
        let feats = self.encoder.forward(g, p, x)?;
        let top = feats[self.cfg.rpn_level - 1];
        let h = g.conv2d(top, p.get(self.heads.rpn_w), 1, 1)?;
        let h = g.add_channel_bias(h, p.get(self.heads.rpn_b))?;
        let h = g.relu(h)?;
        let cls = g.conv2d(h, p.get(self.heads.cls_w), 1, 0)?;
        let cls = g.add_channel_bias(cls, p.get(self.heads.cls_b))?;
        let reg = g.conv2d(h, p.get(self.heads.reg_w), 1, 0)?;
        let reg = g.add_channel_bias(reg, p.get(self.heads.reg_b))?;
        Ok(Forward { feats, cls, reg })
    }

    /// Flat indices of anchor `i`'s logit and of its four offsets.
    fn anchor_slots(&self, i: usize) -> (usize, [usize; 4]) {
        let a_per = self.cfg.anchors_per_cell();
        let (_, fh, fw) = self.levels[self.cfg.rpn_level - 1];
        let plane = fh * fw;
        let (cell, a) = (i / a_per, i % a_per);
        let d = |k: usize| (4 * a + k) * plane + cell;
        (a * plane + cell, [d(0), d(1), d(2), d(3)])
    }

    fn gather_deltas(&self, g: &mut Graph<f64>, reg: Var, idx: &[usize]) -> Result<[Var; 4], GradError> {
        let mut out = [reg; 4];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = g.gather(reg, idx.iter().map(|&i| self.anchor_slots(i).1[k]).collect())?;
        }
        Ok(out)
    }

    /// Proposal boxes with their objectness, best first.
    fn proposals(&self, g: &Graph<f64>, f: &Forward) -> Vec<Detection<f64>> {
        let (cls, reg) = (g.value(f.cls), g.value(f.reg));
        let (w, h) = (self.image.0 as f64, self.image.1 as f64);
        let mut cands: Vec<Detection<f64>> = Vec::with_capacity(self.anchors.len());
        for (i, anchor) in self.anchors.iter().enumerate() {
            let (c, d) = self.anchor_slots(i);
            let b = decode([reg[d[0]], reg[d[1]], reg[d[2]], reg[d[3]]], anchor).clip(w, h);
            if b.width() >= MIN_PROPOSAL_SIDE && b.height() >= MIN_PROPOSAL_SIDE {
                cands.push(Detection { bbox: b, score: sigmoid(cls[c]) });
            }
        }
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        cands.truncate(self.cfg.pre_nms_top);
        let mut kept = nms(&cands, self.cfg.proposal_nms_iou, 0.0);
        kept.truncate(self.cfg.post_nms_top);
        kept
    }

    /// Bilinear read-out taps of the region grid on one feature level.
    fn roi_taps(&self, boxes: &[BBox<f64>], level: usize) -> Taps<f64> {
        let (c, fh, fw) = self.levels[level];
        let (sx, sy) = (fw as f64 / self.image.0 as f64, fh as f64 / self.image.1 as f64);
        let axis = |v: f64, scale: f64, n: usize| -> (usize, usize, f64) {
            let f = (v * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = f.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f - i0 as f64)
        };
        let mut taps = Taps::new();
        for b in boxes {
            let span = b.width() * (1.0 + 2.0 * ROI_CONTEXT);
            let x0 = b.x1 - b.width() * ROI_CONTEXT;
            let xs: Vec<_> = (0..ROI_COLS).map(|j| axis(x0 + (j as f64 + 0.5) / ROI_COLS as f64 * span, sx, fw)).collect();
            let ys: Vec<_> =
                (0..ROI_ROWS).map(|i| axis(b.y1 + (i as f64 + 0.5) / ROI_ROWS as f64 * b.height(), sy, fh)).collect();
            for ch in 0..c {
                let base = ch * fh * fw;
                for &(y0, y1, wy) in &ys {
                    for &(x0, x1, wx) in &xs {
                        taps.push_row([
                            (base + y0 * fw + x0, (1.0 - wy) * (1.0 - wx)),
                            (base + y0 * fw + x1, (1.0 - wy) * wx),
                            (base + y1 * fw + x0, wy * (1.0 - wx)),
                            (base + y1 * fw + x1, wy * wx),
                        ]);
                    }
                }
            }
        }
        taps
    }

    /// `[R, 5]` second-stage output: logit then four offsets per region.
    fn roi_head(&self, g: &mut Graph<f64>, p: &Bound, feats: &[Var], boxes: &[BBox<f64>]) -> Result<Var, GradError> {
        let r = boxes.len();
        let mut acc: Option<Var> = None;
        for (l, &f) in feats.iter().enumerate().take(self.heads.fc1_w.len()) {
            let cols = self.levels[l].0 * ROI_ROWS * ROI_COLS;
            let x = g.weighted_gather(f, self.roi_taps(boxes, l), vec![r, cols])?;
            let h = g.matmul(x, p.get(self.heads.fc1_w[l]))?;
            acc = Some(match acc {
                Some(a) => g.add(a, h)?,
                None => h,
            });
        }
        let h = g.add_row_bias(acc.expect("at least one level"), p.get(self.heads.fc1_b))?;
        let h = g.relu(h)?;
        let o = g.matmul(h, p.get(self.heads.fc2_w))?;
        g.add_row_bias(o, p.get(self.heads.fc2_b))
    }

    /// Runs the full pipeline: anchor scoring, proposal suppression, second
    /// stage, then score thresholding and final suppression.
    pub fn detect(&self, img: &Image<f64>) -> Result<Vec<Detection<f64>>, DetectError> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = self.input(&mut g, img)?;
        let f = self.forward(&mut g, &p, x)?;
        let props: Vec<BBox<f64>> = self.proposals(&g, &f).into_iter().map(|d| d.bbox).collect();
        if props.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.roi_head(&mut g, &p, &f.feats, &props)?;
        let o = g.value(out);
        let (w, h) = (self.image.0 as f64, self.image.1 as f64);
        let mut dets = Vec::with_capacity(props.len());
        for (i, prop) in props.iter().enumerate() {
            let row = &o[5 * i..5 * i + 5];
            let b = decode([row[1], row[2], row[3], row[4]], prop).clip(w, h);
            if b.width() > 0.0 && b.height() > 0.0 {
                dets.push(Detection { bbox: b, score: sigmoid(row[0]) });
            }
        }
        Ok(nms(&dets, self.cfg.nms_iou, self.cfg.score_threshold))
    }

    /// Loss graph of one labeled image. Returns the graph, the parameter
    /// binding, the total loss and its parts.
    fn loss_graph(
        &self,
        img: &Image<f64>,
        gts: &[BBox<f64>],
        rng: &mut impl Rng,
    ) -> Result<(Graph<f64>, Bound, Var, StepLoss), DetectError> {
        let cfg = &self.cfg;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = self.input(&mut g, img)?;
        let f = self.forward(&mut g, &p, x)?;

        // proposal stage
        let labels = match_anchors(&self.anchors, gts, cfg.pos_iou, cfg.neg_iou);
        let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].kind == LabelKind::Positive).collect();
        let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].kind == LabelKind::Negative).collect();
        let max_pos = ((cfg.rpn_batch as f64) * cfg.rpn_pos_fraction).round() as usize;
        pos.shuffle(rng);
        pos.truncate(max_pos);
        neg.shuffle(rng);
        neg.truncate(cfg.rpn_batch.saturating_sub(pos.len()));
        let sampled: Vec<usize> = pos.iter().chain(&neg).copied().collect();
        let zero = g.constant_scalar(0.0)?;
        let rpn_cls = if sampled.is_empty() {
            zero
        } else {
            let logits = g.gather(f.cls, sampled.iter().map(|&i| self.anchor_slots(i).0).collect())?;
            let targets = sampled.iter().map(|&i| if labels[i].is_positive() { 1.0 } else { 0.0 }).collect();
            let l = g.bce_with_logits(logits, targets)?;
            g.mean(l)?
        };
        let rpn_reg = if pos.is_empty() {
            zero
        } else {
            let deltas = self.gather_deltas(&mut g, f.reg, &pos)?;
            let refs: Vec<BBox<f64>> = pos.iter().map(|&i| self.anchors[i]).collect();
            let tg: Vec<BBox<f64>> = pos.iter().map(|&i| gts[labels[i].matched_gt.expect("positive")]).collect();
            let l = regression_graph(&mut g, cfg.regression_loss, deltas, &refs, &tg)?;
            g.mean(l)?
        };

        // second stage on proposals plus the ground truth itself
        let mut regions: Vec<BBox<f64>> = self.proposals(&g, &f).into_iter().map(|d| d.bbox).collect();
        regions.extend_from_slice(gts);
        let matched: Vec<Option<usize>> = regions
            .iter()
            .map(|r| {
                let mut best: Option<(usize, f64)> = None;
                for (j, gt) in gts.iter().enumerate() {
                    let v = iou(r, gt);
                    if best.map_or(true, |(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
                best.filter(|&(_, v)| v >= cfg.roi_fg_iou).map(|(j, _)| j)
            })
            .collect();
        let mut fg: Vec<usize> = (0..regions.len()).filter(|&i| matched[i].is_some()).collect();
        let mut bg: Vec<usize> = (0..regions.len()).filter(|&i| matched[i].is_none()).collect();
        let max_fg = ((cfg.roi_batch as f64) * cfg.roi_pos_fraction).round() as usize;
        fg.shuffle(rng);
        fg.truncate(max_fg);
        bg.shuffle(rng);
        bg.truncate(cfg.roi_batch.saturating_sub(fg.len()));
        let chosen: Vec<usize> = fg.iter().chain(&bg).copied().collect();
        let (fast_cls, fast_reg) = if chosen.is_empty() {
            (zero, zero)
        } else {
            let boxes: Vec<BBox<f64>> = chosen.iter().map(|&i| regions[i]).collect();
            let out = self.roi_head(&mut g, &p, &f.feats, &boxes)?;
            let logits = g.gather(out, (0..chosen.len()).map(|k| 5 * k).collect())?;
            let targets = chosen.iter().map(|&i| if matched[i].is_some() { 1.0 } else { 0.0 }).collect();
            let l = g.bce_with_logits(logits, targets)?;
            let cls = g.mean(l)?;
            let reg = if fg.is_empty() {
                zero
            } else {
                let mut deltas = [out; 4];
                for (k, d) in deltas.iter_mut().enumerate() {
                    *d = g.gather(out, (0..fg.len()).map(|r| 5 * r + 1 + k).collect())?;
                }
                let refs: Vec<BBox<f64>> = fg.iter().map(|&i| regions[i]).collect();
                let tg: Vec<BBox<f64>> = fg.iter().map(|&i| gts[matched[i].expect("foreground")]).collect();
                let l = regression_graph(&mut g, cfg.regression_loss, deltas, &refs, &tg)?;
                g.mean(l)?
            };
            (cls, reg)
        };

        let rpn = g.add(rpn_cls, rpn_reg)?;
        let fast = g.add(fast_cls, fast_reg)?;
        let a = g.scale(rpn, cfg.lambda_rpn)?;
        let b = g.scale(fast, cfg.lambda_fastrcnn)?;
        let total = g.add(a, b)?;
        let parts = StepLoss {
            total: g.scalar(total)?,
            rpn_cls: g.scalar(rpn_cls)?,
            rpn_reg: g.scalar(rpn_reg)?,
            fast_cls: g.scalar(fast_cls)?,
            fast_reg: g.scalar(fast_reg)?,
        };
        Ok((g, p, total, parts))
    }

    /// Loss of one labeled image without updating parameters.
    pub fn loss(&self, img: &Image<f64>, gts: &[BBox<f64>], rng: &mut impl Rng) -> Result<StepLoss, DetectError> {
        Ok(self.loss_graph(img, gts, rng)?.3)
    }

    /// One SGD step on one labeled image; returns the loss before the step.
    pub fn train_step(&mut self, img: &Image<f64>, gts: &[BBox<f64>], rng: &mut impl Rng) -> Result<StepLoss, DetectError> {
        let (g, p, total, parts) = self.loss_graph(img, gts, rng)?;
        let grads = g.backward(total)?;
        self.params.assign_grads(&p, &grads)?;
        sgd_step(&mut self.params, self.cfg.lr)?;
        self.params.clear_grads();
        Ok(parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomParams};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn detector(seed: u64) -> Detector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Detector::new(&DetectConfig::default(), (154, 120), &[8, 16, 32, 64], EncoderInit::Scratch, &mut rng).unwrap()
    }

    #[test]
    fn anchor_layout() {
        let d = detector(0);
        assert_eq!(d.anchors().len(), 30 * 39 * 9);
        assert_eq!(d.anchor_slots(0), (0, [0, 1170, 2340, 3510]));
        // second cell, second anchor shape
        assert_eq!(d.anchor_slots(10).0, 1170 + 1);
    }

    #[test]
    fn blank_image_gives_valid_scores() {
        let d = detector(1);
        let img = Image::filled(154, 120, 0.0);
        for det in d.detect(&img).unwrap() {
            assert!((0.0..=1.0).contains(&det.score));
            assert!(det.bbox.within(154.0, 120.0));
        }
    }

    #[test]
    fn wrong_image_size_rejected() {
        let d = detector(2);
        assert!(d.detect(&Image::filled(100, 120, 0.0)).is_err());
    }

    #[test]
    fn params_round_trip() {
        let d = detector(3);
        let back = Detector::from_params(d.config(), (154, 120), &[8, 16, 32, 64], d.params().clone()).unwrap();
        let img = generate_phantom(&PhantomParams { n_blines: 2, seed: 4, ..PhantomParams::default() }).unwrap().image;
        assert_eq!(back.detect(&img).unwrap(), d.detect(&img).unwrap());
        assert!(Detector::from_params(d.config(), (154, 120), &[8, 8], d.params().clone()).is_err());
    }

    #[test]
    fn train_step_runs_and_changes_parameters() {
        let mut d = detector(5);
        let l = generate_phantom(&PhantomParams { n_blines: 2, seed: 6, ..PhantomParams::default() }).unwrap();
        let before = d.params().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = d.train_step(&l.image, &l.boxes, &mut rng).unwrap();
        assert!(s.total.is_finite() && s.total > 0.0);
        assert!(s.rpn_reg > 0.0 && s.fast_reg > 0.0);
        assert_ne!(&before, d.params());
    }
}
