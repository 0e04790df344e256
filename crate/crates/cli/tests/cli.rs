use std::path::Path;
use std::process::{Command, Output};

use lusb_cli::{EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn lusb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lusb")).current_dir(dir).args(args).output().expect("spawn lusb")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn metric(report: &str, key: &str) -> String {
    report.lines().find_map(|l| l.strip_prefix(&format!("{key}: "))).expect(key).to_string()
}

#[test]
fn gen_writes_images_annotations_and_a_70_30_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = lusb(dir.path(), &["gen", "--count", "500", "--seed", "7"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let pgms = std::fs::read_dir(dir.path().join("data/images")).unwrap().count();
    assert_eq!(pgms, 500);
    let split = read(dir.path().join("data/split.txt"));
    assert_eq!(split.lines().filter(|l| l.starts_with("train ")).count(), 350);
    assert_eq!(split.lines().filter(|l| l.starts_with("eval ")).count(), 150);
    assert!(dir.path().join("data/annotations.txt").is_file());
}

#[test]
fn oracle_eval_scores_perfectly_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lusb(dir.path(), &["gen", "--count", "20"])), EXIT_OK);
    let out = lusb(dir.path(), &["eval", "--oracle", "--count", "20"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read(dir.path().join("run/metrics.txt"));
    for key in ["precision", "recall", "accuracy", "f1"] {
        assert_eq!(metric(&report, key), "100.00", "{key}");
    }
    assert!(dir.path().join("run/detections.coco.json").is_file());
    assert_eq!(code(&lusb(dir.path(), &["render", "--count", "20"])), EXIT_OK);
    let rendered = std::fs::read_dir(dir.path().join("run/render")).unwrap().count();
    assert_eq!(rendered, 6);
}

#[test]
fn outputs_carry_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lusb(dir.path(), &["gen", "--count", "10"])), EXIT_OK);
    assert_eq!(code(&lusb(dir.path(), &["eval", "--oracle", "--count", "10"])), EXIT_OK);
    let sidecar = read(dir.path().join("run/eval.config.toml"));
    let hash = sidecar.lines().next().unwrap().strip_prefix("# config ").unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert!(read(dir.path().join("run/metrics.txt")).starts_with(&format!("# config {hash}\n")));
    assert!(read(dir.path().join("run/detections.txt")).contains(&hash));
}

#[test]
fn short_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--count", "12", "--pretrain.epochs", "1", "--detect.epochs", "1"];
    for cmd in ["gen", "pretrain", "finetune", "eval", "render"] {
        let mut args = vec![cmd];
        args.extend(common);
        let out = lusb(dir.path(), &args);
        assert_eq!(code(&out), EXIT_OK, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["pretrain.ckpt", "detector.ckpt", "pretrain_loss.txt", "finetune_loss.txt", "metrics.txt"] {
        assert!(dir.path().join("run").join(f).is_file(), "{f}");
    }
    let log = read(dir.path().join("run/finetune_loss.txt"));
    assert!(log.lines().filter(|l| !l.starts_with('#')).all(|l| l.split(' ').count() == 4));
}

#[test]
fn scratch_init_needs_no_pretrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--count", "10", "--detect.epochs", "1"];
    assert_eq!(code(&lusb(dir.path(), &[&["gen"][..], &common].concat())), EXIT_OK);
    let pretrained = lusb(dir.path(), &[&["finetune"][..], &common].concat());
    assert_eq!(code(&pretrained), EXIT_RUNTIME);
    let scratch = lusb(dir.path(), &[&["finetune", "--init", "scratch"][..], &common].concat());
    assert_eq!(code(&scratch), EXIT_OK, "{}", String::from_utf8_lossy(&scratch.stderr));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lusb(dir.path(), &["gradcheck"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("worst relative error:"), "{text}");
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&lusb(p, &[])), EXIT_USAGE);
    assert_eq!(code(&lusb(p, &["train"])), EXIT_USAGE);
    assert_eq!(code(&lusb(p, &["--help"])), EXIT_OK);
    assert_eq!(code(&lusb(p, &["gen", "--bogus", "1"])), EXIT_CONFIG);
    assert_eq!(code(&lusb(p, &["gen", "--lr", "0.1"])), EXIT_CONFIG);
    assert_eq!(code(&lusb(p, &["gen", "--count", "lots"])), EXIT_CONFIG);
    assert_eq!(code(&lusb(p, &["gen", "--config", "missing.toml"])), EXIT_CONFIG);
    std::fs::write(p.join("bad.toml"), "[detect]\nnope = 3\n").unwrap();
    assert_eq!(code(&lusb(p, &["gen", "--config", "bad.toml"])), EXIT_CONFIG);
    assert_eq!(code(&lusb(p, &["eval"])), EXIT_RUNTIME);
    assert_eq!(code(&lusb(p, &["render"])), EXIT_RUNTIME);
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seed = 3\ndata_dir = \"d\"\n[phantom]\ncount = 8\n").unwrap();
    let out = lusb(dir.path(), &["gen", "--config", "run.toml", "--count", "6"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(dir.path().join("d/images")).unwrap().count(), 6);
    let sidecar = read(dir.path().join("d/gen.config.toml"));
    assert!(sidecar.contains("seed = 3"), "{sidecar}");
}
