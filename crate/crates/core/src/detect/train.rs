use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detect::boxes::BBox;
use crate::detect::config::DetectConfig;
use crate::detect::model::{Detector, EncoderInit, StepLoss};
use crate::detect::nms::Detection;
use crate::detect::DetectError;
use crate::phantom::{Image, LabeledImage};

/// Anything that turns an image into scored boxes.
pub trait BoxDetector {
    /// Detections for `image`; `id` is its dataset identifier.
    fn detect(&self, image: &Image<f64>, id: &str) -> Result<Vec<Detection<f64>>, DetectError>;
}

impl BoxDetector for Detector {
    fn detect(&self, image: &Image<f64>, _id: &str) -> Result<Vec<Detection<f64>>, DetectError> {
        Detector::detect(self, image)
    }
}

/// Returns stored boxes by image identifier with score 1, optionally
/// shifted by a fixed offset. Used to check the evaluation path end to end.
#[derive(Clone, Debug, Default)]
pub struct OracleDetector {
    boxes: HashMap<String, Vec<BBox<f64>>>,
    shift: (f64, f64),
}

impl OracleDetector {
    pub fn new(labeled: &[LabeledImage]) -> Self {
        Self {
            boxes: labeled.iter().map(|l| (l.source_id.clone(), l.boxes.clone())).collect(),
            shift: (0.0, 0.0),
        }
    }

    /// Moves every returned box by `(dx, dy)`.
    pub fn shifted(mut self, dx: f64, dy: f64) -> Self {
        self.shift = (dx, dy);
        self
    }
}

impl BoxDetector for OracleDetector {
    fn detect(&self, _image: &Image<f64>, id: &str) -> Result<Vec<Detection<f64>>, DetectError> {
        let boxes = self
            .boxes
            .get(id)
            .ok_or_else(|| DetectError::Shape(format!("no stored boxes for {id:?}")))?;
        Ok(boxes.iter().map(|b| Detection { bbox: b.translate(self.shift.0, self.shift.1), score: 1.0 }).collect())
    }
}

/// One fine-tuning step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: StepLoss,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub detector: Detector,
    pub log: Vec<FinetuneRecord>,
}

fn check_train(train: &[LabeledImage]) -> Result<(usize, usize), DetectError> {
    let first = train.first().ok_or(DetectError::EmptyLabelSet)?;
    if train.iter().all(|l| l.boxes.is_empty()) {
        return Err(DetectError::EmptyLabelSet);
    }
    let size = (first.image.width(), first.image.height());
    if let Some(l) = train.iter().find(|l| (l.image.width(), l.image.height()) != size) {
        return Err(DetectError::Shape(format!(
            "{} is {}x{}, expected {}x{}",
            l.source_id,
            l.image.width(),
            l.image.height(),
            size.0,
            size.1
        )));
    }
    Ok(size)
}

/// Builds a detector for `train` and runs `cfg.epochs` passes of per-image
/// SGD over it in a seeded shuffled order.
pub fn finetune(
    train: &[LabeledImage],
    init: EncoderInit<'_>,
    channels: &[usize],
    cfg: &DetectConfig,
) -> Result<FinetuneOutcome, DetectError> {
    let size = check_train(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let detector = Detector::new(cfg, size, channels, init, &mut rng)?;
    let steps = cfg.epochs * train.len();
    finetune_steps(detector, train, steps, &mut rng)
}

/// Continues training `detector` for exactly `steps` single-image steps,
/// reshuffling the order whenever a pass over `train` completes.
pub fn finetune_steps(
    mut detector: Detector,
    train: &[LabeledImage],
    steps: usize,
    rng: &mut impl Rng,
) -> Result<FinetuneOutcome, DetectError> {
    check_train(train)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(steps);
    let mut epoch = 0;
    while log.len() < steps {
        epoch += 1;
        order.shuffle(rng);
        for &i in &order {
            if log.len() == steps {
                break;
            }
            let loss = detector.train_step(&train[i].image, &train[i].boxes, rng)?;
            if !loss.total.is_finite() {
                return Err(DetectError::Shape(format!("non-finite loss at step {}", log.len() + 1)));
            }
            log.push(FinetuneRecord { step: log.len() + 1, epoch, loss });
        }
    }
    Ok(FinetuneOutcome { detector, log })
}

/// Text lines `step total rpn fastrcnn` for the loss log.
pub fn format_log(log: &[FinetuneRecord]) -> String {
    log.iter()
        .map(|r| format!("{} {:.17e} {:.17e} {:.17e}\n", r.step, r.loss.total, r.loss.rpn(), r.loss.fastrcnn()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomParams};

    fn labeled(seed: u64, n: usize) -> LabeledImage {
        generate_phantom(&PhantomParams { n_blines: n, seed, ..PhantomParams::default() }).unwrap()
    }

    fn small_cfg() -> DetectConfig {
        DetectConfig { epochs: 1, ..DetectConfig::default() }
    }

    #[test]
    fn empty_label_set_rejected() {
        let cfg = small_cfg();
        assert!(matches!(finetune(&[], EncoderInit::Scratch, &[8, 16], &cfg), Err(DetectError::EmptyLabelSet)));
        let blank = [labeled(1, 0)];
        assert!(matches!(finetune(&blank, EncoderInit::Scratch, &[8, 16], &cfg), Err(DetectError::EmptyLabelSet)));
    }

    #[test]
    fn same_seed_same_detector() {
        let train = [labeled(1, 2), labeled(2, 1)];
        let cfg = small_cfg();
        let a = finetune(&train, EncoderInit::Scratch, &[8, 16], &cfg).unwrap();
        let b = finetune(&train, EncoderInit::Scratch, &[8, 16], &cfg).unwrap();
        assert_eq!(a.detector.params(), b.detector.params());
        assert_eq!(format_log(&a.log), format_log(&b.log));
        assert_eq!(a.log.len(), 2);
    }

    #[test]
    fn pretrained_encoder_must_match() {
        let train = [labeled(1, 2)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = crate::ndgrad::ParamStore::new();
        crate::pretrain::encoder::Encoder::init(&mut store, &[4, 4], &mut rng);
        let r = finetune(&train, EncoderInit::Pretrained(&store), &[8, 16], &small_cfg());
        assert!(matches!(r, Err(DetectError::Shape(_))));
        let mut store = crate::ndgrad::ParamStore::new();
        crate::pretrain::encoder::Encoder::init(&mut store, &[8, 16, 32, 64], &mut rng);
        let out = finetune(&train, EncoderInit::Pretrained(&store), &[8, 16], &DetectConfig { lr: 0.0, ..small_cfg() }).unwrap();
        assert_eq!(out.detector.params().get("enc.conv1.w"), store.get("enc.conv1.w"));
    }

    #[test]
    fn oracle_returns_stored_boxes() {
        let l = labeled(3, 2);
        let o = OracleDetector::new(std::slice::from_ref(&l)).shifted(1.0, 0.0);
        let d = o.detect(&l.image, &l.source_id).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].bbox.x1, l.boxes[0].x1 + 1.0);
        assert!(o.detect(&l.image, "missing").is_err());
    }
}
