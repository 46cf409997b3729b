//! Plain-text artifacts: CSV tables and flat `key = value` records, each
//! headed by the config hash and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(hash: &str, seed: u64) -> String {
    format!("# config-sha256: {hash}\n# seed: {seed}\n")
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(hash: &str, seed: u64, columns: &[String]) -> Self {
        let mut text = header(hash, seed);
        text.push_str(&columns.join(","));
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn raw_line(&mut self, line: &str) {
        self.text.push_str(line);
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub struct Record {
    text: String,
}

impl Record {
    pub fn new(hash: &str, seed: u64) -> Self {
        let mut text = header(hash, seed);
        let _ = writeln!(text, "config_sha256 = {hash}");
        Record { text }
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} = {value}");
    }

    pub fn num(&mut self, key: &str, v: f64) {
        self.put(key, num(v));
    }

    pub fn vec(&mut self, key: &str, v: &[f64]) {
        for (i, a) in v.iter().enumerate() {
            self.num(&format!("{key}{}", i + 1), *a);
        }
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub fn write(dir: &Path, name: &str, text: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

/// `prefix1,...,prefixd`
pub fn cols(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

pub fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(|&a| num(a)).collect()
}
