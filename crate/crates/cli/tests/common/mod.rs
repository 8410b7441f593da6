#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ridesim_cli::artifacts::GENERATED_AT;

pub const CONFIG: &str = r#"
seed = 11

[paths]
out = "out"

[bc]
iterations = 12

[rl]
iterations = 3

[evaluate]
replications = 2

[sweep]
key = "platform.peak_fare_multiplier"
values = [2.0, 3.0]
"#;

pub const STAGES: [&str; 8] = ["synth", "ingest", "fit", "generate", "train-bc", "train-rl", "evaluate", "sweep"];

pub fn ridesim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ridesim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = ridesim(dir, args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// A temporary directory holding `run.toml`.
pub fn scratch(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

/// Every file under `dir` with its timestamp line dropped, keyed by
/// relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let text = fs::read_to_string(&path).unwrap();
            let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with(GENERATED_AT)).collect();
            files.insert(path.strip_prefix(dir).unwrap().display().to_string(), kept.join("\n"));
        }
    }
    files
}
