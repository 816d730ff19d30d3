#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn acae() -> Command {
    Command::new(env!("CARGO_BIN_EXE_acae"))
}

pub fn run(args: &[&str]) -> Output {
    acae().args(args).output().expect("spawn acae")
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "acae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Two taste clusters in MovieLens `::` format with timestamps.
pub fn write_movielens(path: &Path, users: usize, items: usize) {
    let mut text = String::new();
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for u in 1..=users {
        let half = items / 2;
        let base = if u % 2 == 0 { 0 } else { half };
        for j in 0..items {
            let r = next();
            let liked = j >= base && j < base + half;
            if r % 3 != 0 {
                continue;
            }
            let rating = if liked { 4 + (r % 2) } else { 1 + (r % 3) };
            text.push_str(&format!("{}::{}::{}::{}\n", u, j + 1, rating, 1_000_000 + next() % 10_000));
        }
    }
    fs::write(path, text).unwrap();
}

pub fn write_config(dir: &Path, data: &Path) -> PathBuf {
    let path = dir.join("exp.toml");
    let text = format!(
        r#"seed = 3
gamma = 0.0001
out = "{out}"

[dataset]
path = "{data}"
format = "double_colon"
threshold = 3.0

[split]
n_neg = 20

[model]
k = 4

[pretrain]
learning_rate = 0.05
batch_size = 8
max_epochs = 6
patience = 3

[adversarial]
epsilon = 0.5
max_epochs = 4
batch_size = 8
patience = 3
"#,
        out = dir.join("out").display(),
        data = data.display()
    );
    fs::write(&path, text).unwrap();
    path
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
