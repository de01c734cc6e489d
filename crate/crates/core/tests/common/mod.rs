#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde::Deserialize;

pub fn e2e_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

#[derive(Debug, Deserialize)]
pub struct ExpectedPair {
    pub image_id: String,
    pub class: String,
    pub iobb: f64,
    pub ior: f64,
}

#[derive(Debug, Deserialize)]
pub struct ExpectedDissection {
    pub q: f64,
    pub connectivity: u8,
    pub tau: Vec<f32>,
    pub disjoint: f64,
    pub unique: f64,
}

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub pairs: Vec<ExpectedPair>,
    pub dissection: Vec<ExpectedDissection>,
}

pub fn expected() -> Expected {
    let text = std::fs::read_to_string(e2e_dir().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn imba_lens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imba-lens"))
        .args(args)
        .env_remove("IMBA_LENS_THREADS")
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}
