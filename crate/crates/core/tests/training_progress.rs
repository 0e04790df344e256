use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lusb_core::detect::{finetune_steps, DetectConfig, Detector, EncoderInit};
use lusb_core::phantom::{LabeledImage, PhantomConfig};
use lusb_core::pretrain::{pretrain, PretrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];
const STEPS: usize = 200;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn phantoms(count: usize, seed: u64) -> Vec<LabeledImage> {
    PhantomConfig { count, ..PhantomConfig::default() }.generate(seed).unwrap()
}

/// Mean over the last `n` entries.
fn tail_mean(losses: &[f64], n: usize) -> f64 {
    let tail = &losses[losses.len() - n..];
    tail.iter().sum::<f64>() / n as f64
}

#[test]
fn pretraining_halves_the_contrastive_loss() {
    let ratios: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let images: Vec<_> = phantoms(16, seed).into_iter().map(|l| l.image).collect();
            let cfg = PretrainConfig {
                // 16 images at batch 4: 50 epochs of 4 steps
                epochs: STEPS / 4,
                queue_capacity: 8,
                momentum: 0.9,
                warm_start: true,
                // query and key views identical
                min_crop_area: 1.0,
                flip_prob: 0.0,
                jitter: 0.0,
                noise_sigma: 0.0,
                seed,
                ..PretrainConfig::default()
            };
            let out = pretrain(&images, &cfg).unwrap();
            let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
            assert_eq!(losses.len(), STEPS);
            assert!(losses[0] > 0.0);
            tail_mean(&losses, 4) / losses[0]
        })
        .collect();
    let m = median(ratios.clone());
    assert!(m <= 0.5, "median final/initial loss ratio {m} over seeds, {ratios:?}");
}

#[test]
fn finetuning_halves_the_detection_loss() {
    let ratios: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let train = phantoms(32, seed);
            let cfg = DetectConfig { seed, ..DetectConfig::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let size = (train[0].image.width(), train[0].image.height());
            let channels = PretrainConfig::default().channels;
            let detector = Detector::new(&cfg, size, &channels, EncoderInit::Scratch, &mut rng).unwrap();
            let out = finetune_steps(detector, &train, STEPS, &mut rng).unwrap();
            let losses: Vec<f64> = out.log.iter().map(|r| r.loss.total).collect();
            assert_eq!(losses.len(), STEPS);
            // single steps are noisy, so compare the first and last 10
            let first = losses[..10].iter().sum::<f64>() / 10.0;
            tail_mean(&losses, 10) / first
        })
        .collect();
    let m = median(ratios.clone());
    assert!(m <= 0.5, "median final/initial loss ratio {m} over seeds, {ratios:?}");
}
