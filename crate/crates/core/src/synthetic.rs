//! Seeded synthetic data for tests, examples and the shipped fixture.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::Dataset;
use crate::matrix::Matrix;
use crate::seed;

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Class-conditional mean of feature `f` for class `c`, in units of the
/// class spacing. Every feature orders the classes differently.
fn center(c: usize, f: usize, k: usize) -> f64 {
    ((c + f) % k) as f64 - (k as f64 - 1.0) / 2.0
}

/// Gaussian blobs: label `i % k`, unit-variance noise around class centers
/// spaced `separation` apart on every feature.
pub fn gaussian_blobs(n: usize, m: usize, k: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let mut data = Vec::with_capacity(n * m);
    let y: Vec<usize> = (0..n).map(|i| i % k).collect();
    for &c in &y {
        for f in 0..m {
            data.push(separation * center(c, f, k) + normal(&mut rng));
        }
    }
    Dataset::new(
        Matrix::from_vec(n, m, data).expect("shape"),
        y,
        (0..m).map(|f| format!("f{f}")).collect(),
        (0..k).map(|c| format!("class-{c}")).collect(),
    )
    .expect("finite synthetic data")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_informative: usize,
    pub n_noise: usize,
    pub n_classes: usize,
    /// Gap between adjacent class means on an informative feature, in units
    /// of the noise standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 400,
            n_informative: 5,
            n_noise: 15,
            n_classes: 3,
            separation: 3.0,
            seed: 2024,
        }
    }
}

/// Mix of informative and pure-noise features at shuffled column positions.
/// Returns the dataset and the sorted indices of the informative columns.
pub fn informative_mix(spec: &SyntheticSpec) -> (Dataset, Vec<usize>) {
    let m = spec.n_informative + spec.n_noise;
    let k = spec.n_classes;
    let mut rng = seed::rng(spec.seed);
    let mut columns: Vec<usize> = (0..m).collect();
    columns.shuffle(&mut rng);
    let mut informative: Vec<usize> = columns[..spec.n_informative].to_vec();
    // role[col] = Some(j) when col is the j-th informative feature
    let mut role = vec![None; m];
    for (j, &col) in informative.iter().enumerate() {
        role[col] = Some(j);
    }
    informative.sort_unstable();

    let y: Vec<usize> = (0..spec.n_samples).map(|i| i % k).collect();
    let mut data = Vec::with_capacity(spec.n_samples * m);
    for &c in &y {
        for r in &role {
            let mean = r.map_or(0.0, |j| spec.separation * center(c, j, k));
            data.push(mean + normal(&mut rng));
        }
    }
    let ds = Dataset::new(
        Matrix::from_vec(spec.n_samples, m, data).expect("shape"),
        y,
        (0..m)
            .map(|f| {
                if role[f].is_some() {
                    format!("signal_{f}")
                } else {
                    format!("noise_{f}")
                }
            })
            .collect(),
        (0..k).map(|c| format!("class-{c}")).collect(),
    )
    .expect("finite synthetic data");
    (ds, informative)
}

/// Class names of the flow fixture, including a problematic class and the
/// class it is confused with.
pub const FLOW_CLASSES: [&str; 5] = [
    "Benign",
    "Bot",
    "DoS attacks-SlowHTTPTest",
    "FTP-BruteForce",
    "SSH-Bruteforce",
];

/// CSV text shaped like a flow-record export: a `Timestamp` column, a
/// trailing `Label`, a few `NaN`/`Infinity` rows and a repeated header line.
/// The two confusable classes share their informative means except on one
/// weak feature.
pub fn flow_csv(rows_per_class: usize, n_informative: usize, n_noise: usize, seed: u64) -> String {
    let mut rng = seed::rng(seed);
    let m = n_informative + n_noise;
    let k = FLOW_CLASSES.len();
    let mut header = vec!["Dst Port".to_string(), "Timestamp".to_string()];
    header.extend((0..n_informative).map(|j| format!("Flow Stat {j}")));
    header.extend((0..n_noise).map(|j| format!("Noise {j}")));
    header.push("Label".into());
    let mut out = header.join(",") + "\n";

    let mut line = 0usize;
    for r in 0..rows_per_class {
        for (c, name) in FLOW_CLASSES.iter().enumerate() {
            // SlowHTTPTest (2) mimics FTP-BruteForce (3)
            let twin = if c == 2 { 3 } else { c };
            let mut cells = vec![
                format!("{}", [80, 443, 21, 21, 22][c]),
                format!("02/03/2018 08:{:02}:{:02}", (line / 60) % 60, line % 60),
            ];
            for j in 0..m {
                let v = if j < n_informative {
                    let mut mean = 3.0 * center(twin, j, k);
                    if c == 2 && j == 0 {
                        mean += 1.0;
                    }
                    mean + normal(&mut rng)
                } else {
                    normal(&mut rng)
                };
                cells.push(format!("{v:.6}"));
            }
            if r % 37 == 5 && c == 0 {
                cells[2] = "NaN".into();
            }
            if r % 41 == 7 && c == 1 {
                cells[3] = "Infinity".into();
            }
            cells.push(name.to_string());
            out += &cells.join(",");
            out.push('\n');
            line += 1;
        }
        if r == rows_per_class / 2 {
            out += &header.join(",");
            out.push('\n');
        }
    }
    out
}
