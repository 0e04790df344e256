use std::fs;
use std::path::{Path, PathBuf};

use lusb_core::certify::{gradient_suite, TOLERANCE};
use lusb_core::detect::{finetune, format_log as finetune_log, BoxDetector, Detector, EncoderInit, OracleDetector};
use lusb_core::eval::{evaluate, format_report, render_boxes};
use lusb_core::ndgrad::checkpoint;
use lusb_core::phantom::{
    load_dataset, read_annotations, write_annotations, write_coco, write_dataset, write_pgm, Annotated, Dataset,
    Record,
};
use lusb_core::pretrain::{format_log as pretrain_log, pretrain};
use lusb_core::ParamStore;

use crate::config::{InitMode, RunConfig};
use crate::CliError;

pub const PRETRAIN_CKPT: &str = "pretrain.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_loss.txt";
pub const DETECTOR_CKPT: &str = "detector.ckpt";
pub const FINETUNE_LOG: &str = "finetune_loss.txt";
pub const METRICS: &str = "metrics.txt";
pub const DETECTIONS: &str = "detections.txt";
pub const DETECTIONS_COCO: &str = "detections.coco.json";
pub const RENDER_DIR: &str = "render";

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Writes the resolved config next to a subcommand's outputs.
fn write_sidecar(dir: &Path, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    let text = format!("# config {}\n{}", cfg.hash(), cfg.to_toml());
    write(&dir.join(format!("{command}.config.toml")), text)
}

fn header(cfg: &RunConfig) -> String {
    format!("config {}", cfg.hash())
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    load_dataset(&cfg.data_dir).map_err(runtime)
}

fn read_checkpoint(path: &Path) -> Result<ParamStore, CliError> {
    let f = fs::File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    checkpoint::read(std::io::BufReader::new(f)).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_checkpoint(path: &Path, params: &ParamStore) -> Result<(), CliError> {
    write(path, checkpoint::encode(params))
}

pub fn gen(cfg: &RunConfig) -> Result<String, CliError> {
    let images = cfg.phantom.generate(cfg.seed).map_err(runtime)?;
    write_dataset(&cfg.data_dir, &images, cfg.phantom.train_frac, cfg.seed, &cfg.hash()).map_err(runtime)?;
    write_sidecar(&cfg.data_dir, "gen", cfg)?;
    let boxes: usize = images.iter().map(|l| l.boxes.len()).sum();
    Ok(format!("wrote {} images with {boxes} boxes to {}", images.len(), cfg.data_dir.display()))
}

pub fn pretrain_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let data = load(cfg)?;
    let images: Vec<_> = data.train.into_iter().map(|l| l.image).collect();
    let out = pretrain(&images, &cfg.pretrain).map_err(runtime)?;
    write_checkpoint(&cfg.run_dir.join(PRETRAIN_CKPT), &out.params)?;
    let log = format!("# {}\n# selected epoch {}\n{}", header(cfg), out.selected_epoch, pretrain_log(&out.log));
    write(&cfg.run_dir.join(PRETRAIN_LOG), log)?;
    write_sidecar(&cfg.run_dir, "pretrain", cfg)?;
    Ok(format!(
        "pretrained on {} images for {} steps, kept epoch {}",
        images.len(),
        out.log.len(),
        out.selected_epoch
    ))
}

pub fn finetune_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let data = load(cfg)?;
    let encoder = match cfg.finetune.init {
        InitMode::Pretrained => Some(read_checkpoint(&cfg.run_dir.join(PRETRAIN_CKPT))?),
        InitMode::Scratch => None,
    };
    let init = encoder.as_ref().map_or(EncoderInit::Scratch, EncoderInit::Pretrained);
    let out = finetune(&data.train, init, &cfg.pretrain.channels, &cfg.detect).map_err(runtime)?;
    write_checkpoint(&cfg.run_dir.join(DETECTOR_CKPT), out.detector.params())?;
    write(&cfg.run_dir.join(FINETUNE_LOG), format!("# {}\n{}", header(cfg), finetune_log(&out.log)))?;
    write_sidecar(&cfg.run_dir, "finetune", cfg)?;
    let last = out.log.last().map_or(f64::NAN, |r| r.loss.total);
    Ok(format!("fine-tuned for {} steps, last loss {last:.4}", out.log.len()))
}

fn load_detector(cfg: &RunConfig) -> Result<Detector, CliError> {
    let params = read_checkpoint(&cfg.run_dir.join(DETECTOR_CKPT))?;
    let size = (cfg.phantom.width, cfg.phantom.height);
    Detector::from_params(&cfg.detect, size, &cfg.pretrain.channels, params).map_err(runtime)
}

pub fn eval_cmd(cfg: &RunConfig, oracle: bool) -> Result<String, CliError> {
    let data = load(cfg)?;
    let detector: Box<dyn BoxDetector> =
        if oracle { Box::new(OracleDetector::new(&data.eval)) } else { Box::new(load_detector(cfg)?) };
    let outcome = evaluate(detector.as_ref(), &data.eval, &cfg.eval).map_err(runtime)?;
    let report = format_report(&outcome, &[header(cfg)]);
    write(&cfg.run_dir.join(METRICS), &report)?;
    let records: Vec<Record> = outcome
        .images
        .iter()
        .map(|r| Record {
            path: r.id.clone(),
            boxes: r.detections.iter().map(|d| Annotated { bbox: d.bbox, score: Some(d.score) }).collect(),
        })
        .collect();
    write(&cfg.run_dir.join(DETECTIONS), write_annotations(&records, &[header(cfg)]).map_err(runtime)?)?;
    write(&cfg.run_dir.join(DETECTIONS_COCO), write_coco(&records, (cfg.phantom.width, cfg.phantom.height)))?;
    write_sidecar(&cfg.run_dir, "eval", cfg)?;
    Ok(report)
}

pub fn render_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let data = load(cfg)?;
    let path = cfg.run_dir.join(DETECTIONS);
    let text = fs::read_to_string(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let records = read_annotations(&text, Some((cfg.phantom.width, cfg.phantom.height))).map_err(runtime)?;
    let comment = header(cfg);
    let mut written = 0;
    for l in &data.eval {
        let dets: Vec<_> = records
            .iter()
            .filter(|r| r.path == l.source_id)
            .flat_map(|r| r.boxes.iter())
            .map(|a| lusb_core::Detection { bbox: a.bbox, score: a.score.unwrap_or(1.0) })
            .collect();
        let img = render_boxes(&l.image, &dets, &l.boxes).map_err(runtime)?;
        let name = Path::new(&l.source_id).file_name().map_or_else(|| PathBuf::from(&l.source_id), PathBuf::from);
        write(&cfg.run_dir.join(RENDER_DIR).join(name), write_pgm(&img, Some(&comment)))?;
        written += 1;
    }
    write_sidecar(&cfg.run_dir, "render", cfg)?;
    Ok(format!("rendered {written} images to {}", cfg.run_dir.join(RENDER_DIR).display()))
}

pub fn gradcheck(cfg: &RunConfig, points: usize) -> Result<String, CliError> {
    let reports = gradient_suite(points, cfg.seed).map_err(runtime)?;
    let mut out = String::new();
    let mut worst = 0.0f64;
    let mut ok = true;
    for r in &reports {
        out.push_str(&format!(
            "{}: points {} skipped {} worst relative error {:.3e}\n",
            r.name, r.points, r.skipped, r.worst
        ));
        worst = worst.max(r.worst);
        ok &= r.passes(TOLERANCE, points);
    }
    out.push_str(&format!("worst relative error: {worst:.3e} (tolerance {TOLERANCE:e})\n"));
    if ok {
        Ok(out)
    } else {
        Err(CliError::Runtime(format!("{out}gradient check failed")))
    }
}
