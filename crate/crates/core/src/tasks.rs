//! Seeded synthetic datasets: wave-sum coefficient recovery, copy-magnitude,
//! a fixed linear combination, and plain Gaussian sequences.
//!
//! Every sample is drawn from its own stream `seed.child(index)`, so a dataset
//! is a pure function of its spec and can be generated in parallel.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::numerics::{std_normal, RngSpec};
use crate::par;
use crate::units::Sequence;

/// Frequencies of the wave-sum task: the ten smallest primes.
pub const PRIMES: [f64; 10] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0];

/// Generator name, its parameters and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: RngSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Sequence>,
    pub targets: Vec<Vec<f64>>,
    pub spec: DatasetSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::Format(format!(
                "{} inputs but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        if self.targets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite target".into()));
        }
        Ok(())
    }

    /// `(L, d, o)` of the first sample, checked against every other sample.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let first = self.inputs.first().ok_or_else(|| Error::Format("empty dataset".into()))?;
        let dims = (first.len(), first.width(), self.targets[0].len());
        for (u, t) in self.inputs.iter().zip(&self.targets) {
            if (u.len(), u.width(), t.len()) != dims {
                return Err(Error::Format("samples have different shapes".into()));
            }
        }
        Ok(dims)
    }

    /// First `k` samples and the rest.
    pub fn split(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.min(self.len());
        let part = |r: std::ops::Range<usize>, tag: &str| Dataset {
            inputs: self.inputs[r.clone()].to_vec(),
            targets: self.targets[r.clone()].to_vec(),
            spec: DatasetSpec {
                generator: self.spec.generator.clone(),
                params: json!({ "parent": self.spec.params, "part": tag, "start": r.start, "end": r.end }),
                seed: self.spec.seed,
            },
        };
        (part(0..k, "head"), part(k..self.len(), "tail"))
    }

    fn build(generator: &str, params: serde_json::Value, seed: RngSpec, samples: Vec<(Sequence, Vec<f64>)>) -> Self {
        let (inputs, targets) = samples.into_iter().unzip();
        Dataset {
            inputs,
            targets,
            spec: DatasetSpec {
                generator: generator.into(),
                params,
                seed,
            },
        }
    }
}

/// Default sampling interval of the wave-sum task: one period over `L` samples.
pub fn wavesum_dt(l: usize) -> f64 {
    2.0 * std::f64::consts::PI / l as f64
}

/// `u(t_k) = sum_i g_i cos(p_i k dt)` for `k = 0..L`.
pub fn wavesum_signal(g: &[f64], l: usize, dt: f64) -> Result<Sequence> {
    if g.len() != PRIMES.len() {
        return Err(Error::shape("10 coefficients", g.len()));
    }
    let values = (0..l)
        .map(|k| {
            let t = k as f64 * dt;
            g.iter().zip(PRIMES).map(|(gi, p)| gi * (p * t).cos()).sum()
        })
        .collect();
    Sequence::scalar(values)
}

/// Wave sums with standard-normal coefficients; the target is the
/// coefficient vector.
pub fn gen_wavesum(n_samples: usize, l: usize, dt: f64, seed: RngSpec) -> Result<Dataset> {
    if l < 2 {
        return Err(Error::Config(format!("wave-sum needs L >= 2, got {l}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let samples = par::map_range(n_samples, |i| {
        let mut rng = seed.child(i as u64).rng();
        let g: Vec<f64> = (0..PRIMES.len()).map(|_| std_normal(&mut rng)).collect();
        wavesum_signal(&g, l, dt).map(|u| (u, g))
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset::build(
        "wavesum",
        json!({ "n_samples": n_samples, "L": l, "dt": dt }),
        seed,
        samples,
    ))
}

/// Inputs `(u_1 * 1, 0, ..., 0, u_L)` with `u_1 ~ N(0, sigma1^2)` and
/// `u_L ~ N(0, sigma2^2 I_d)`; the target is `|u_1|`.
pub fn gen_copy_magnitude(
    n_samples: usize,
    l: usize,
    d: usize,
    sigma1: f64,
    sigma2: f64,
    seed: RngSpec,
) -> Result<Dataset> {
    if l < 3 || d == 0 {
        return Err(Error::Config(format!("copy-magnitude needs L >= 3 and d >= 1, got L = {l}, d = {d}")));
    }
    if !(sigma1 >= 0.0) || !(sigma2 >= 0.0) {
        return Err(Error::Config("sigma1 and sigma2 must be nonnegative".into()));
    }
    let samples = par::map_range(n_samples, |i| {
        let mut rng = seed.child(i as u64).rng();
        let u1 = sigma1 * std_normal(&mut rng);
        let mut u = Sequence::zeros(l, d);
        u.row_mut(0).fill(u1);
        for x in u.row_mut(l - 1) {
            *x = sigma2 * std_normal(&mut rng);
        }
        (u, vec![u1.abs()])
    });
    Ok(Dataset::build(
        "copy_magnitude",
        json!({ "n_samples": n_samples, "L": l, "d": d, "sigma1": sigma1, "sigma2": sigma2 }),
        seed,
        samples,
    ))
}

/// Distribution of the scalar inputs of the linear-combination task (both
/// have zero mean and unit variance).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputNoise {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    Uniform,
}

/// Scalar sequences with i.i.d. entries; the target is `sum_j theta_j u_j`.
pub fn gen_linear_combination(
    n_samples: usize,
    l: usize,
    theta: &[f64],
    noise: InputNoise,
    seed: RngSpec,
) -> Result<Dataset> {
    if theta.len() != l || l == 0 {
        return Err(Error::Config(format!("theta has {} entries for L = {l}", theta.len())));
    }
    let samples = par::map_range(n_samples, |i| {
        let mut rng = seed.child(i as u64).rng();
        let values: Vec<f64> = (0..l)
            .map(|_| match noise {
                InputNoise::Gaussian => std_normal(&mut rng),
                InputNoise::Uniform => rng.random_range(-1.0..1.0) * 3f64.sqrt(),
            })
            .collect();
        let target = values.iter().zip(theta).map(|(u, t)| u * t).sum();
        (Sequence::scalar(values).expect("finite draws"), vec![target])
    });
    Ok(Dataset::build(
        "linear_combination",
        json!({ "n_samples": n_samples, "L": l, "theta": theta, "noise": noise }),
        seed,
        samples,
    ))
}

/// Scalar sequences with entries `N(0, c^2)`, optionally ending in exactly 1.
/// Targets are empty.
pub fn gen_gaussian_sequences(
    n_trials: usize,
    l: usize,
    c: f64,
    force_last_one: bool,
    seed: RngSpec,
) -> Result<Dataset> {
    if l == 0 || !(c >= 0.0) {
        return Err(Error::Config(format!("need L >= 1 and c >= 0, got L = {l}, c = {c}")));
    }
    let samples = par::map_range(n_trials, |i| {
        let mut rng = seed.child(i as u64).rng();
        let mut values: Vec<f64> = (0..l).map(|_| c * std_normal(&mut rng)).collect();
        if force_last_one {
            values[l - 1] = 1.0;
        }
        (Sequence::scalar(values).expect("finite draws"), Vec::new())
    });
    Ok(Dataset::build(
        "gaussian_sequences",
        json!({ "n_trials": n_trials, "L": l, "c": c, "force_last_one": force_last_one }),
        seed,
        samples,
    ))
}

/// A generator and its parameters, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum TaskConfig {
    Wavesum {
        n_samples: usize,
        #[serde(rename = "L")]
        l: usize,
    },
    CopyMagnitude {
        n_samples: usize,
        #[serde(rename = "L")]
        l: usize,
        d: usize,
        sigma1: f64,
        sigma2: f64,
    },
    LinearCombination {
        n_samples: usize,
        #[serde(rename = "L")]
        l: usize,
        /// Empty means `1 / sqrt(L)` everywhere.
        #[serde(default)]
        theta: Vec<f64>,
        #[serde(default)]
        noise: InputNoise,
    },
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::Wavesum { n_samples: 4608, l: 64 }
    }
}

impl TaskConfig {
    pub fn generate(&self, seed: RngSpec) -> Result<Dataset> {
        match self {
            TaskConfig::Wavesum { n_samples, l } => gen_wavesum(*n_samples, *l, wavesum_dt(*l), seed),
            TaskConfig::CopyMagnitude { n_samples, l, d, sigma1, sigma2 } => {
                gen_copy_magnitude(*n_samples, *l, *d, *sigma1, *sigma2, seed)
            }
            TaskConfig::LinearCombination { n_samples, l, theta, noise } => {
                let theta = if theta.is_empty() {
                    vec![1.0 / (*l as f64).sqrt(); *l]
                } else {
                    theta.clone()
                };
                gen_linear_combination(*n_samples, *l, &theta, *noise, seed)
            }
        }
    }

    /// Width of each input position.
    pub fn input_width(&self) -> usize {
        match self {
            TaskConfig::CopyMagnitude { d, .. } => *d,
            _ => 1,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            TaskConfig::Wavesum { .. } => PRIMES.len(),
            _ => 1,
        }
    }
}

const MAGIC: &[u8; 8] = b"SSMLDATA";
const VERSION: u32 = 1;

/// Path of the text sidecar holding the dataset spec.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".spec.json");
    PathBuf::from(s)
}

/// Writes the binary container (magic, version, count, L, d, o, then every
/// sample's row-major inputs followed by its targets, little-endian `f64`)
/// and a JSON sidecar with the spec.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    data.validate()?;
    let (l, d, o) = if data.is_empty() { (0, 0, 0) } else { data.dims()? };
    let mut buf = Vec::with_capacity(48 + data.len() * (l * d + o) * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [data.len(), l, d, o] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for (u, t) in data.inputs.iter().zip(&data.targets) {
        for v in u.data().iter().chain(t) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&data.spec)?)?;
    Ok(())
}

/// Reads a container written by [`write_dataset`] together with its sidecar.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 44 || &bytes[..8] != MAGIC {
        return Err(bad("not a dataset container"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().expect("8 bytes")) as usize;
    let (count, l, d, o) = (word(0), word(1), word(2), word(3));
    let per = l * d + o;
    if bytes.len() != 44 + count * per * 8 {
        return Err(bad("payload length does not match header"));
    }
    let mut values = bytes[44..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let u: Vec<f64> = values.by_ref().take(l * d).collect();
        inputs.push(Sequence::new(l, d, u)?);
        targets.push(values.by_ref().take(o).collect());
    }
    let spec = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    Ok(Dataset { inputs, targets, spec })
}

/// Long-format CSV (`sample,field,position,channel,value`) for inspection.
pub fn dataset_csv(data: &Dataset) -> String {
    let mut s = String::from("sample,field,position,channel,value\n");
    for (i, (u, t)) in data.inputs.iter().zip(&data.targets).enumerate() {
        for k in 0..u.len() {
            for c in 0..u.width() {
                s.push_str(&format!("{i},input,{k},{c},{}\n", crate::experiments::fmt_f64(u.get(k, c))));
            }
        }
        for (c, v) in t.iter().enumerate() {
            s.push_str(&format!("{i},target,,{c},{}\n", crate::experiments::fmt_f64(*v)));
        }
    }
    s
}
