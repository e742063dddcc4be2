#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes a small three-stage logistic study (`toy.csv` and `toy.toml`) into
/// `dir` and returns the config path.
pub fn write_toy_study(dir: &Path, rows: usize, reps: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut csv = String::from("id,a,b,c,d,label\n");
    for i in 0..rows {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eta = -0.5 + 1.2 * x[0] + 0.8 * x[1] + 0.6 * x[2] + 0.1 * x[3];
        let y = rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp());
        let _ = writeln!(
            csv,
            "{i},{:.6},{:.6},{:.6},{:.6},{}",
            x[0],
            x[1],
            x[2],
            x[3],
            if y { "yes" } else { "no" }
        );
    }
    fs::write(dir.join("toy.csv"), csv).unwrap();
    let config = format!(
        r#"name = "toy"
source = "toy.csv"
expected_rows = {rows}
outcome = {{ column = "label", positive = {{ equals = "yes" }} }}

[[stages]]
name = "F1"
columns = ["a"]

[[stages]]
name = "F2"
columns = ["a", "b"]

[[stages]]
name = "F3"
columns = ["a", "b", "c", "d"]

[loss]
c_fp = 1.0
c_fn = 5.0

[costs]
cumulative = [0.0, 0.01, 0.03]

[split]
reps = {reps}
bridge_reps = {reps}
"#
    );
    let path = dir.join("toy.toml");
    fs::write(&path, config).unwrap();
    path
}
