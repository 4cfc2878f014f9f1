#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_toolrec");

/// The shipped desk config with its work directory moved under `dir`.
pub fn desk_config(dir: &Path) -> PathBuf {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let text = std::fs::read_to_string(shipped).unwrap();
    let work = dir.join("work");
    let text: String = text
        .lines()
        .map(|l| if l.starts_with("work_dir") { format!("work_dir = {:?}", work.display().to_string()) } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.join("desk.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn toolrec(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("--config").arg(config).args(args).output().unwrap()
}

pub fn ok(config: &Path, args: &[&str]) -> String {
    let out = toolrec(config, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// ingest → preprocess → augment → train-embedding → train.
pub fn run_pipeline(config: &Path) {
    for stage in ["ingest", "preprocess", "augment", "train-embedding", "train"] {
        ok(config, &[stage]);
    }
}
