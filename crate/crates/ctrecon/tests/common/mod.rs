#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = r#"
[geometry]
kind = "parallel"
rows = 32
cols = 32
pixel_size = 8.0
n_views = 36

[phantom]
kind = "shepp-logan"

[protocol]
i0 = 1e4
sigma = 5.0
seed = 11

[solver]
n_subsets = 4
n_iters = 10

[ep]
beta = 512.0

[ultra]
beta = 1e4
gamma_hu = 100.0
outer_iters = 3

[spultra]
n_outer = 3

[learn]
k = 3
patch_side = 4
stride = 2
n_iters = 5
seed = 3

[denoiser]
epochs = 1
crop = 16
crops_per_pair = 2

[super]
n_layers = 2
module = "pwls-ep"
seed = 5

[super.solver]
n_iters = 2
"#;

pub fn ctrecon<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_ctrecon"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs and asserts success, echoing stderr on failure.
pub fn ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = ctrecon(args);
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
