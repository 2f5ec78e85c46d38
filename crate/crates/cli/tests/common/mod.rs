#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// A tiny synthetic run: a handful of training steps per epoch.
pub const SMOKE: &str = "\
name = \"smoke\"
t_l = 24
t_h = 12
t_total = 480
val_len = 48
test_len = 96
train_stride = 6
d_hid = 8
n_e = 3
n_d = 3
n_s = 2
d_f = 8
n_h = 2
e_max = 2
batch_size = 16
latency_runs = 0
";

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}
