//! Sweeps and studies built on the units, gradients, model and tasks, plus
//! their CSV and manifest output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradients::{
    bptt, finite_difference, input_jacobians, relative_gradients, s4d_grad_b, s6_grads_closed_form,
    FD_STEP,
};
use crate::model::{
    forward, init_model, predict, random_unit, train, Activation, Arch, EncoderSpec, LossKind, ModelParams,
    TrainConfig, TrainLog,
};
use crate::numerics::{fit_loglog_slope, std_normal, ComplexDiag, RngSpec, SlopeFit, C64};
use crate::par;
use crate::tasks::{gen_copy_magnitude, gen_linear_combination, gen_wavesum, wavesum_dt, InputNoise};
use crate::units::{
    quadratic_encoder, B2S6Params, CMat, Field, QuadraticEncoder, S4DParams, S6Params, Sequence, Unit, UnitKind,
};

/// Round-trip formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// One control value with the per-trial measurements of every series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub control: f64,
    pub trials: BTreeMap<String, Vec<f64>>,
}

impl SweepRow {
    pub fn new(control: f64) -> Self {
        Self {
            control,
            trials: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, series: &str, value: f64) {
        self.trials.entry(series.to_string()).or_default().push(value);
    }

    pub fn trial_count(&self) -> usize {
        self.trials.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean(&self, series: &str) -> Option<f64> {
        let v = self.trials.get(series)?;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Standard error of the mean (0 for a single trial).
    pub fn stderr(&self, series: &str) -> Option<f64> {
        let v = self.trials.get(series)?;
        let m = self.mean(series)?;
        if v.len() < 2 {
            return Some(0.0);
        }
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        Some((var / v.len() as f64).sqrt())
    }
}

/// Rows keyed by a strictly increasing control value, with optional log-log
/// fits per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub name: String,
    pub control_name: String,
    pub rows: Vec<SweepRow>,
    pub fits: BTreeMap<String, SlopeFit>,
    /// Named scalar diagnostics (for example finite-difference cross-checks).
    pub checks: BTreeMap<String, f64>,
}

impl SweepTable {
    pub fn new(name: &str, control_name: &str) -> Self {
        Self {
            name: name.into(),
            control_name: control_name.into(),
            rows: Vec::new(),
            fits: BTreeMap::new(),
            checks: BTreeMap::new(),
        }
    }

    pub fn push_row(&mut self, row: SweepRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.control > last.control) {
                return Err(Error::Config(format!(
                    "control values must increase ({} after {})",
                    row.control, last.control
                )));
            }
        }
        if row.trial_count() == 0 {
            return Err(Error::Config("a sweep row needs at least one trial".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn series(&self) -> Vec<String> {
        let mut names: Vec<String> = self.rows.iter().flat_map(|r| r.trials.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }

    /// `(control, mean)` for every row that has the series.
    pub fn means(&self, series: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.mean(series).map(|m| (r.control, m)))
            .collect()
    }

    pub fn mean_at(&self, control: f64, series: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.control == control)?.mean(series)
    }

    /// Fits `log |mean|` against `log |control|` and stores the result.
    pub fn fit(&mut self, series: &str) -> Result<SlopeFit> {
        let pts: Vec<(f64, f64)> = self.means(series).into_iter().map(|(c, m)| (c.abs(), m.abs())).collect();
        let fit = fit_loglog_slope(&pts)?;
        self.fits.insert(series.to_string(), fit);
        Ok(fit)
    }

    /// Fits every series whose means are all positive and finite.
    pub fn fit_all(&mut self) {
        for s in self.series() {
            let _ = self.fit(&s);
        }
    }

    pub fn slope(&self, series: &str) -> Option<f64> {
        self.fits.get(series).map(|f| f.slope)
    }

    /// Long format: `control,series,trial,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("control,series,trial,value\n");
        for r in &self.rows {
            for (name, vals) in &r.trials {
                for (t, v) in vals.iter().enumerate() {
                    s.push_str(&format!("{},{name},{t},{}\n", fmt_f64(r.control), fmt_f64(*v)));
                }
            }
        }
        s
    }

    /// `series,slope,intercept,r_squared`.
    pub fn fit_csv(&self) -> String {
        let mut s = String::from("series,slope,intercept,r_squared\n");
        for (name, f) in &self.fits {
            s.push_str(&format!(
                "{name},{},{},{}\n",
                fmt_f64(f.slope),
                fmt_f64(f.intercept),
                fmt_f64(f.r_squared)
            ));
        }
        s
    }

    /// Writes `<name>.csv` and `<name>.fit.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let main = dir.join(format!("{}.csv", self.name));
        let fit = dir.join(format!("{}.fit.csv", self.name));
        fs::write(&main, self.to_csv())?;
        fs::write(&fit, self.fit_csv())?;
        Ok(vec![main, fit])
    }
}

/// Self-describing record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub grids: serde_json::Value,
    pub version: String,
    pub wall_ms: f64,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value, grids: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            seed,
            config,
            grids,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_ms: 0.0,
            files: BTreeMap::new(),
        }
    }

    /// Hashes each file and records it under its file name.
    pub fn record_files(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            self.files.insert(name, sha256_hex(&fs::read(p)?));
        }
        Ok(())
    }

    /// Writes `manifest.json`, refusing to replace an existing one unless
    /// `force` is set.
    pub fn write(&self, dir: &Path, force: bool) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        if path.exists() && !force {
            return Err(Error::Config(format!(
                "{} already exists (pass --force to overwrite)",
                path.display()
            )));
        }
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// Geometric grid of `count` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) || count < 2 {
        return Err(Error::Config(format!("bad geometric grid [{lo}, {hi}] x {count}")));
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i + 1 == count { hi } else { lo * (r * i as f64).exp() })
        .collect())
}

/// Which side of the selection hyperplane the scaled input lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasSign {
    Positive,
    Negative,
}

/// Series names recorded by [`inductive_bias_sweep`].
pub const S_BEFORE: &str = "S_before";
pub const S_AT: &str = "S_at";
pub const S_AFTER: &str = "S_after";

/// Scales `u_{k0}` (1-based) by `c` over `c_grid` and records the relative
/// gradients at `k0 - 1`, `k0` and `k0 + 1`.
///
/// For S6 the direction of the scaled vector is flipped if needed so that
/// `sign(w^T u_{k0})` matches `sign`; for the other units `Negative` scales by
/// `-c`.
pub fn inductive_bias_sweep(
    unit: &Unit,
    u_base: &Sequence,
    k0: usize,
    c_grid: &[f64],
    sign: BiasSign,
) -> Result<SweepTable> {
    let l = u_base.len();
    if k0 == 0 || k0 > l {
        return Err(Error::Config(format!("k0 = {k0} is outside 1..={l}")));
    }
    let want = if sign == BiasSign::Positive { 1.0 } else { -1.0 };
    let dir = match unit {
        Unit::S6(p) => {
            let s = crate::discretization::dot(&p.w, u_base.row(k0 - 1));
            if s == 0.0 {
                return Err(Error::Config("w^T u_k0 is zero; the sign case is undefined".into()));
            }
            want * s.signum()
        }
        _ => want,
    };
    let mut table = SweepTable::new(&format!("bias_{}_{}", unit.kind(), sign_name(sign)), "c");
    let rows = par::map_slice(c_grid, |&c| -> Result<SweepRow> {
        let mut u = u_base.clone();
        for x in u.row_mut(k0 - 1) {
            *x *= dir * c;
        }
        let s = relative_gradients(&input_jacobians(unit, &u)?)?;
        let mut row = SweepRow::new(c);
        let idx = k0 - 1;
        if idx >= 1 {
            row.push(S_BEFORE, s[idx - 1]);
        }
        row.push(S_AT, s[idx]);
        if idx + 1 < l {
            row.push(S_AFTER, s[idx + 1]);
        }
        Ok(row)
    });
    for r in rows {
        table.push_row(r?)?;
    }
    table.fit_all();
    Ok(table)
}

/// Whether some block selects positively and another negatively on `u_k`,
/// the condition under which B2S6 keeps a mild bias in both directions.
pub fn mixed_sign_blocks(params: &B2S6Params, u_k: &[f64]) -> bool {
    let signs = selection_scores(&Unit::B2s6(params.clone()), u_k);
    signs.iter().any(|&s| s > 0.0) && signs.iter().any(|&s| s < 0.0)
}

/// Shape and grid of an attribution sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub unit: UnitKind,
    pub field: Field,
    pub n: usize,
    pub d: usize,
    /// Block count for B2S6.
    pub h: usize,
    pub l: usize,
    /// 1-based.
    pub k0: usize,
    pub c_grid: Vec<f64>,
    /// Draws with `|w^T u_k0| < margin` in any block are rejected.
    pub margin: f64,
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            unit: UnitKind::S6,
            field: Field::Real,
            n: 4,
            d: 4,
            h: 2,
            l: 8,
            k0: 4,
            c_grid: geometric_grid(10.0, 1e4, 8).expect("valid grid"),
            margin: 1.0,
            seed: 0,
        }
    }
}

/// `w^T u_k` per selection block (one entry for S6, none for S4D).
pub fn selection_scores(unit: &Unit, u_k: &[f64]) -> Vec<f64> {
    match unit {
        Unit::S4d(_) => Vec::new(),
        Unit::S6(p) => vec![crate::discretization::dot(&p.w, u_k)],
        Unit::B2s6(p) => p
            .blocks
            .iter()
            .enumerate()
            .map(|(j, blk)| crate::discretization::dot(&blk.w, &u_k[j * p.p..(j + 1) * p.p]))
            .collect(),
    }
}

/// Draws a random unit and base input, repeating on child streams until
/// every selection score at `k0` clears `margin` and, for B2S6, the blocks
/// disagree in sign.
pub fn bias_instance(cfg: &BiasConfig) -> Result<(Unit, Sequence)> {
    if cfg.k0 == 0 || cfg.k0 > cfg.l {
        return Err(Error::Config(format!("k0 = {} is outside 1..={}", cfg.k0, cfg.l)));
    }
    let base = RngSpec::with_stream(cfg.seed, 0xb1a5);
    for attempt in 0..1000u64 {
        let spec = base.child(attempt);
        let h = (cfg.unit == UnitKind::B2s6).then_some(cfg.h);
        let unit = random_unit(cfg.unit, cfg.n, cfg.d, h, cfg.field, spec.child(0))?;
        let u = Sequence::new(cfg.l, cfg.d, crate::numerics::gaussian(spec.child(1), 0.0, 1.0, cfg.l * cfg.d)?)?;
        let row = u.row(cfg.k0 - 1);
        if selection_scores(&unit, row).iter().any(|s| s.abs() < cfg.margin) {
            continue;
        }
        match &unit {
            Unit::B2s6(p) if !mixed_sign_blocks(p, row) => continue,
            _ => return Ok((unit, u)),
        }
    }
    Err(Error::Config("no admissible draw found; lower the margin or use h >= 2".into()))
}

fn sign_name(s: BiasSign) -> &'static str {
    match s {
        BiasSign::Positive => "positive",
        BiasSign::Negative => "negative",
    }
}

/// Settings of the gradient-ratio sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    /// Sequence length of the `c` sweep.
    pub l: usize,
    pub c_grid: Vec<f64>,
    /// Input scale of the `L` sweep.
    pub c: f64,
    pub l_grid: Vec<usize>,
    pub trials: usize,
    /// State size.
    pub n: usize,
    /// `L * exp(b(L))`, held fixed in the `L` sweep.
    pub delta_product: f64,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            l: 100,
            c_grid: geometric_grid(10.0, 1e4, 8).expect("valid grid"),
            c: 1.0,
            l_grid: vec![100, 1_000, 10_000, 100_000],
            trials: 30,
            n: 4,
            delta_product: 10.0,
            seed: 0,
        }
    }
}

pub const DW_RATIO: &str = "dw_ratio";
pub const DB_RATIO: &str = "db_ratio";

/// A one-channel S4D/S6 pair sharing `A`, `B`, `C` and the raw bias `b`, with
/// `w = 0` for S6.
#[derive(Debug, Clone)]
pub struct RatioInstance {
    pub s4d: S4DParams,
    pub s6: S6Params,
}

impl RatioInstance {
    /// `Re(a)` uniform in `[-1, -0.1]`, `B` and `C` standard normal.
    pub fn random(n: usize, b: f64, seed: RngSpec) -> Self {
        let mut rng = seed.rng();
        let a = ComplexDiag(
            (0..n)
                .map(|_| C64::new(rng.random_range(-1.0..-0.1), 0.0))
                .collect(),
        );
        let bv: Vec<C64> = (0..n).map(|_| C64::new(std_normal(&mut rng), 0.0)).collect();
        let cv: Vec<C64> = (0..n).map(|_| C64::new(std_normal(&mut rng), 0.0)).collect();
        let s4d = S4DParams {
            a: a.clone(),
            b: CMat { rows: 1, cols: n, data: bv.clone() },
            c: CMat { rows: 1, cols: n, data: cv.clone() },
            b_delta: vec![b],
            field: Field::Real,
        };
        let s6 = S6Params {
            a,
            b: CMat { rows: n, cols: 1, data: bv },
            c: CMat { rows: 1, cols: n, data: cv },
            w: vec![0.0],
            b_delta: vec![b],
            field: Field::Real,
        };
        Self { s4d, s6 }
    }

    /// `(|d_w S6| / |d_b S4D|, |d_b S6| / |d_b S4D|)`.
    pub fn ratios(&self, u: &Sequence) -> Result<(f64, f64)> {
        let g4 = s4d_grad_b(&self.s4d, u)?;
        let g6 = s6_grads_closed_form(&self.s6, u)?;
        let den = g4.d_b.abs();
        Ok((g6.d_w.unwrap_or(0.0).abs() / den, g6.d_b.abs() / den))
    }

    /// Largest normwise relative error of the closed forms against central
    /// differences of the scans (S4D in `b`, S6 in `w` and `b`).
    pub fn fd_check(&self, u: &Sequence) -> Result<f64> {
        let g4 = s4d_grad_b(&self.s4d, u)?;
        let g6 = s6_grads_closed_form(&self.s6, u)?;
        let last = |y: Result<Sequence>| y.map(|y| y.last()[0]).unwrap_or(f64::NAN);
        let fd4 = finite_difference(
            |x| {
                let mut p = self.s4d.clone();
                p.b_delta[0] = x[0];
                last(p.scan_with(u, Default::default()).map(|o| o.y))
            },
            &self.s4d.b_delta,
            FD_STEP,
        )?;
        let fd6 = finite_difference(
            |x| {
                let mut p = self.s6.clone();
                p.w[0] = x[0];
                p.b_delta[0] = x[1];
                last(p.scan_with(u, Default::default()).map(|o| o.y))
            },
            &[0.0, self.s6.b_delta[0]],
            FD_STEP,
        )?;
        Ok(rel_err(&[g4.d_b], &fd4)
            .max(rel_err(&[g6.d_w.unwrap_or(0.0), g6.d_b], &fd6)))
    }
}

/// Normwise relative error `max|a - b| / max|b|`.
pub fn rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Gradient ratios against the input scale `c` at fixed `L`. Each trial keeps
/// its instance and base input across the grid and scales the input by `c`.
pub fn stability_ratio_sweep_c(cfg: &StabilityConfig) -> Result<SweepTable> {
    let base = RngSpec::with_stream(cfg.seed, 0x5eed_c0);
    let trials: Vec<(RatioInstance, Sequence)> = (0..cfg.trials)
        .map(|t| {
            let spec = base.child(t as u64);
            let mut rng = spec.child(0).rng();
            let delta: f64 = rng.random_range(1e-3f64.ln()..1e-1f64.ln()).exp();
            let inst = RatioInstance::random(cfg.n, delta.ln(), spec.child(1));
            let z = crate::numerics::gaussian(spec.child(2), 0.0, 1.0, cfg.l)?;
            Ok((inst, Sequence::scalar(z)?))
        })
        .collect::<Result<_>>()?;
    let mut table = SweepTable::new("stability_c", "c");
    for &c in &cfg.c_grid {
        let vals = par::map_slice(&trials, |(inst, z)| inst.ratios(&z.scaled(c)));
        let mut row = SweepRow::new(c);
        for v in vals {
            let (dw, db) = v?;
            row.push(DW_RATIO, dw);
            row.push(DB_RATIO, db);
        }
        table.push_row(row)?;
    }
    table.fit_all();
    if let Some(&c) = pick(&cfg.c_grid, cfg.seed) {
        let (inst, z) = &trials[0];
        table.checks.insert("fd_rel_err".into(), inst.fd_check(&z.scaled(c))?);
    }
    Ok(table)
}

/// The raw bias that holds `L * exp(b)` at `delta_product`.
pub fn b_for_length(l: usize, delta_product: f64) -> f64 {
    (delta_product / l as f64).ln()
}

pub const DB_S6: &str = "db_s6_abs";
pub const DB_S4D: &str = "db_s4d_abs";
pub const DB_RATIO_PER_TRIAL: &str = "db_ratio_per_trial";

/// `E|d_b S6| / E|d_b S4D|` against `L`, with `b(L) = log(delta_product / L)`,
/// inputs `N(0, c^2)` and `u_L = 1`. Trial `t` uses the same `A`, `B`, `C` at
/// every `L`. The per-trial magnitudes and their ratios are kept as separate
/// series; the fitted series is the ratio of the trial means.
pub fn stability_ratio_sweep_l(cfg: &StabilityConfig) -> Result<SweepTable> {
    let base = RngSpec::with_stream(cfg.seed, 0x5eed_11);
    let mut table = SweepTable::new("stability_l", "L");
    let mut check_at = None;
    let pick_l = pick(&cfg.l_grid, cfg.seed).copied();
    for &l in &cfg.l_grid {
        let b = b_for_length(l, cfg.delta_product);
        let vals = par::map_range(cfg.trials, |t| -> Result<(f64, f64, RatioInstance, Sequence)> {
            let spec = base.child(t as u64);
            let inst = RatioInstance::random(cfg.n, b, spec.child(1));
            let mut z = crate::numerics::gaussian(spec.child(2).child(l as u64), 0.0, cfg.c, l)?;
            z[l - 1] = 1.0;
            let u = Sequence::scalar(z)?;
            let g4 = s4d_grad_b(&inst.s4d, &u)?.d_b.abs();
            let g6 = s6_grads_closed_form(&inst.s6, &u)?.d_b.abs();
            Ok((g6, g4, inst, u))
        });
        let mut row = SweepRow::new(l as f64);
        for (t, v) in vals.into_iter().enumerate() {
            let (g6, g4, inst, u) = v?;
            row.push(DB_S6, g6);
            row.push(DB_S4D, g4);
            row.push(DB_RATIO_PER_TRIAL, g6 / g4);
            if t == 0 && Some(l) == pick_l {
                check_at = Some((inst, u));
            }
        }
        let ratio = row.mean(DB_S6).unwrap_or(f64::NAN) / row.mean(DB_S4D).unwrap_or(f64::NAN);
        row.push(DB_RATIO, ratio);
        row.push("delta_times_L", b.exp() * l as f64);
        table.push_row(row)?;
    }
    table.fit_all();
    if let Some((inst, u)) = check_at {
        table.checks.insert("fd_rel_err".into(), inst.fd_check(&u)?);
    }
    Ok(table)
}

fn pick<T>(grid: &[T], seed: u64) -> Option<&T> {
    if grid.is_empty() {
        return None;
    }
    let i = RngSpec::with_stream(seed, 0xc4ec).rng().random_range(0..grid.len());
    grid.get(i)
}

/// `(h, p)` with `h * p = d` and `h / p = ratio`.
pub fn blocks_for_ratio(d: usize, ratio: f64) -> Result<(usize, usize)> {
    let h = ((d as f64) * ratio).sqrt().round() as usize;
    if h == 0 || d % h != 0 || ((h * h) as f64 - ratio * d as f64).abs() > 1e-9 * d as f64 {
        return Err(Error::Config(format!("d = {d} has no block layout with h/p = {ratio}")));
    }
    Ok((h, d / h))
}

/// Dataset sizes and model shape of the wave-sum study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WavesumStudy {
    pub n_train: usize,
    pub n_test: usize,
    pub l: usize,
    /// State size.
    pub n: usize,
    pub activation: Activation,
    /// `h / p` for B2S6.
    pub block_ratio: f64,
    pub seeds: Vec<u64>,
}

impl Default for WavesumStudy {
    fn default() -> Self {
        Self {
            n_train: 4096,
            n_test: 512,
            l: 64,
            n: 8,
            activation: Activation::Gelu,
            block_ratio: 0.5,
            seeds: vec![0],
        }
    }
}

pub const TEST_LOSS: &str = "test_loss";

/// Mean `|g_pred - g|_2` over a dataset.
pub fn mean_l2_error(model: &ModelParams, data: &crate::tasks::Dataset) -> Result<f64> {
    let preds = predict(model, data)?;
    let total: f64 = preds
        .iter()
        .zip(&data.targets)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum();
    Ok(total / data.len().max(1) as f64)
}

/// Trains one model per width on the wave-sum task and records the mean test
/// error `|g_pred - g|_2` per seed.
pub fn width_scaling_study(
    unit: UnitKind,
    d_grid: &[usize],
    study: &WavesumStudy,
    train_cfg: &TrainConfig,
) -> Result<SweepTable> {
    let mut table = SweepTable::new(&format!("width_{unit}"), "d");
    for &d in d_grid {
        let mut row = SweepRow::new(d as f64);
        for &seed in &study.seeds {
            let spec = RngSpec::with_stream(seed, 0x3a7e);
            let data = gen_wavesum(study.n_train + study.n_test, study.l, wavesum_dt(study.l), spec.child(0))?;
            let (train_set, test_set) = data.split(study.n_train);
            let mut arch = Arch::new(unit, d, study.n);
            arch.out_dim = 10;
            arch.activation = study.activation;
            if unit == UnitKind::B2s6 {
                let (h, p) = blocks_for_ratio(d, study.block_ratio)?;
                arch.h = Some(h);
                arch.p = Some(p);
            }
            let model = init_model(&arch, spec.child(1))?;
            let cfg = TrainConfig {
                seed: spec.child(2).stream_id,
                ..train_cfg.clone()
            };
            let log = train(&model, &train_set, &cfg)?;
            row.push(TEST_LOSS, mean_l2_error(&log.final_params, &test_set)?);
        }
        table.push_row(row)?;
    }
    table.fit_all();
    Ok(table)
}

/// Model and data shape of the copy-magnitude grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CopyStudy {
    pub d: usize,
    pub n: usize,
    pub l: usize,
    pub h: usize,
    pub p: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub activation: Activation,
    pub encoder: EncoderSpec,
    pub seeds: Vec<u64>,
}

impl Default for CopyStudy {
    fn default() -> Self {
        Self {
            d: 32,
            n: 4,
            l: 16,
            h: 8,
            p: 4,
            n_train: 2048,
            n_test: 512,
            activation: Activation::Relu,
            encoder: EncoderSpec::Affine { input_dim: 32 },
            seeds: vec![0],
        }
    }
}

/// Mean `|G(u) - G_pred(u)| / sigma1` over a dataset.
pub fn mean_relative_error(model: &ModelParams, data: &crate::tasks::Dataset, sigma1: f64) -> Result<f64> {
    let preds = predict(model, data)?;
    let total: f64 = preds.iter().zip(&data.targets).map(|(p, t)| (p[0] - t[0]).abs()).sum();
    Ok(total / (data.len().max(1) as f64 * sigma1))
}

/// Series name of one `sigma1` column of the copy grid.
pub fn copy_series(sigma1: f64) -> String {
    format!("rel_err@sigma1={sigma1}")
}

/// Trains a fresh model on fresh data for every `(sigma1, sigma2)` cell and
/// seed. Rows are keyed by `sigma2`, series by `sigma1`.
pub fn copy_robustness_grid(
    units: &[UnitKind],
    sigma1_grid: &[f64],
    sigma2_grid: &[f64],
    study: &CopyStudy,
    train_cfg: &TrainConfig,
) -> Result<Vec<SweepTable>> {
    units
        .iter()
        .map(|&unit| {
            let mut table = SweepTable::new(&format!("copy_{unit}"), "sigma2");
            for (j, &s2) in sigma2_grid.iter().enumerate() {
                let mut row = SweepRow::new(s2);
                for (i, &s1) in sigma1_grid.iter().enumerate() {
                    for &seed in &study.seeds {
                        let err = copy_cell(unit, s1, s2, study, train_cfg, seed, (i * 1000 + j) as u64)?;
                        row.push(&copy_series(s1), err);
                    }
                }
                table.push_row(row)?;
            }
            Ok(table)
        })
        .collect()
}

/// Relative test error of one trained copy-magnitude model.
pub fn copy_cell(
    unit: UnitKind,
    sigma1: f64,
    sigma2: f64,
    study: &CopyStudy,
    train_cfg: &TrainConfig,
    seed: u64,
    cell: u64,
) -> Result<f64> {
    let spec = RngSpec::with_stream(seed, 0xc0b1).child(cell);
    let data = gen_copy_magnitude(study.n_train + study.n_test, study.l, study.d, sigma1, sigma2, spec.child(0))?;
    let (train_set, test_set) = data.split(study.n_train);
    let mut arch = Arch::new(unit, study.d, study.n);
    arch.activation = study.activation;
    arch.encoder = match study.encoder {
        EncoderSpec::Broadcast => {
            return Err(Error::Config("the copy task has vector inputs; use affine or identity".into()))
        }
        other => other,
    };
    if unit == UnitKind::B2s6 {
        arch.h = Some(study.h);
        arch.p = Some(study.p);
    }
    let model = init_model(&arch, spec.child(1))?;
    let cfg = TrainConfig {
        seed: spec.child(2).stream_id,
        ..train_cfg.clone()
    };
    let log = train(&model, &train_set, &cfg)?;
    mean_relative_error(&log.final_params, &test_set, sigma1)
}

/// Witness that a single-layer S6 model (with `w = 0`) maps two different
/// inputs to the same output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub seed: u64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// 0-based index of the negated coordinate.
    pub negated: usize,
    pub f_u: f64,
    pub f_v: f64,
    pub f_diff: f64,
    pub out_diff: f64,
    /// Output difference of the comparison S4D model, if one was given.
    pub s4d_out_diff: Option<f64>,
}

impl CollisionRecord {
    pub const CSV_HEADER: &'static str = "seed,negated,f_u,f_v,f_diff,out_diff,s4d_out_diff";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.negated,
            fmt_f64(self.f_u),
            fmt_f64(self.f_v),
            fmt_f64(self.f_diff),
            fmt_f64(self.out_diff),
            self.s4d_out_diff.map(fmt_f64).unwrap_or_default()
        )
    }
}

/// Builds the pair of demo models: an S6 model with `w = 0` and broadcast
/// encoder, and an S4D model of the same width.
pub fn collision_models(d: usize, n: usize, seed: RngSpec) -> Result<(ModelParams, ModelParams)> {
    let mut arch = Arch::new(UnitKind::S6, d, n);
    arch.activation = Activation::Identity;
    let mut s6 = init_model(&arch, seed.child(0))?;
    if let Unit::S6(p) = &mut s6.unit {
        p.w.iter_mut().for_each(|w| *w = 0.0);
    }
    arch.unit = UnitKind::S4d;
    let s4d = init_model(&arch, seed.child(1))?;
    Ok((s6, s4d))
}

/// Draws `u` with `u_L = 1`, negates one interior coordinate to get `v`, and
/// compares the quadratic form and both models' outputs.
pub fn uat_collision_demo(
    s6_model: &ModelParams,
    s4d_model: Option<&ModelParams>,
    l: usize,
    seed: u64,
) -> Result<CollisionRecord> {
    let p = match &s6_model.unit {
        Unit::S6(p) => p,
        _ => return Err(Error::Config("the collision demo needs an S6 model".into())),
    };
    let m = match &s6_model.encoder {
        crate::model::Encoder::Broadcast { m } => m,
        _ => return Err(Error::Config("the collision demo needs a broadcast encoder".into())),
    };
    if l < 3 {
        return Err(Error::Config("the collision demo needs L >= 3".into()));
    }
    let spec = RngSpec::with_stream(seed, 0xc011);
    let mut u = crate::numerics::gaussian(spec.child(0), 0.0, 1.0, l)?;
    u[l - 1] = 1.0;
    let negated = spec.child(1).rng().random_range(1..l - 1);
    let mut v = u.clone();
    v[negated] = -v[negated];
    let (us, vs) = (Sequence::scalar(u.clone())?, Sequence::scalar(v.clone())?);
    let enc = QuadraticEncoder::for_channel(p, m, 0)?;
    let f_u = quadratic_encoder(&enc, &us)?;
    let f_v = quadratic_encoder(&enc, &vs)?;
    let diff = |model: &ModelParams| -> Result<f64> {
        let a = forward(model, &us)?;
        let b = forward(model, &vs)?;
        Ok(a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
    };
    Ok(CollisionRecord {
        seed,
        u,
        v,
        negated,
        f_u,
        f_v,
        f_diff: (f_u - f_v).abs(),
        out_diff: diff(s6_model)?,
        s4d_out_diff: s4d_model.map(diff).transpose()?,
    })
}

/// Steps whose loss exceeds twice the median of the preceding `window`
/// losses (only counted once a full window is available).
pub fn count_spikes(losses: &[f64], window: usize) -> usize {
    (window..losses.len())
        .filter(|&i| {
            let mut w: Vec<f64> = losses[i - window..i].to_vec();
            w.sort_by(|a, b| a.total_cmp(b));
            let med = if window % 2 == 1 {
                w[window / 2]
            } else {
                0.5 * (w[window / 2 - 1] + w[window / 2])
            };
            !(losses[i] <= 2.0 * med)
        })
        .count()
}

pub const SPIKE_WINDOW: usize = 20;

/// Linear-combination task and model shape of the fixed-step experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearComboStudy {
    pub n_samples: usize,
    pub l: usize,
    /// Coefficients; empty means `theta_j = 1 / sqrt(L)`.
    pub theta: Vec<f64>,
    pub noise: InputNoise,
    pub d: usize,
    pub n: usize,
    pub activation: Activation,
    pub encoder: EncoderSpec,
    pub seeds: Vec<u64>,
}

impl Default for LinearComboStudy {
    fn default() -> Self {
        Self {
            n_samples: 1024,
            l: 64,
            theta: Vec::new(),
            noise: InputNoise::Gaussian,
            d: 16,
            n: 4,
            activation: Activation::Identity,
            encoder: EncoderSpec::Affine { input_dim: 1 },
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl LinearComboStudy {
    pub fn coefficients(&self) -> Vec<f64> {
        if self.theta.is_empty() {
            vec![1.0 / (self.l as f64).sqrt(); self.l]
        } else {
            self.theta.clone()
        }
    }
}

/// One arm of the fixed-step experiment.
#[derive(Debug, Clone)]
pub struct FixedDeltaRun {
    pub seed: u64,
    pub lr_delta: f64,
    pub spikes: usize,
    /// The step-size parameters were bitwise unchanged by training.
    pub delta_frozen: bool,
    pub log: TrainLog,
}

/// Trains an S6 model once per `(seed, lr_delta)` from identical
/// initializations and data, and counts loss spikes.
pub fn fixed_delta_training(
    study: &LinearComboStudy,
    lr_delta_values: &[f64],
    train_cfg: &TrainConfig,
) -> Result<(SweepTable, Vec<FixedDeltaRun>)> {
    let mut sorted = lr_delta_values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    let mut table = SweepTable::new("fixed_delta", "lr_delta");
    let mut runs = Vec::new();
    let theta = study.coefficients();
    let mut rows: Vec<SweepRow> = sorted.iter().map(|&lr| SweepRow::new(lr)).collect();
    for &seed in &study.seeds {
        let spec = RngSpec::with_stream(seed, 0xf1ed);
        let data = gen_linear_combination(study.n_samples, study.l, &theta, study.noise, spec.child(0))?;
        let mut arch = Arch::new(UnitKind::S6, study.d, study.n);
        arch.activation = study.activation;
        arch.encoder = study.encoder;
        let model = init_model(&arch, spec.child(1))?;
        for (row, &lr_delta) in rows.iter_mut().zip(&sorted) {
            let cfg = TrainConfig {
                lr_delta,
                seed: spec.child(2).stream_id,
                ..train_cfg.clone()
            };
            let log = train(&model, &data, &cfg)?;
            let spikes = count_spikes(&log.losses(), SPIKE_WINDOW);
            let frozen = delta_group(&log.final_params) == delta_group(&model);
            row.push("spikes", spikes as f64);
            row.push("initial_loss", log.rows.first().map_or(f64::NAN, |r| r.train_loss));
            row.push("final_loss", log.rows.last().map_or(f64::NAN, |r| r.train_loss));
            runs.push(FixedDeltaRun {
                seed,
                lr_delta,
                spikes,
                delta_frozen: frozen,
                log,
            });
        }
    }
    for r in rows {
        table.push_row(r)?;
    }
    Ok((table, runs))
}

/// Bit patterns of every step-size parameter.
pub fn delta_group(model: &ModelParams) -> Vec<u64> {
    model
        .flatten()
        .iter()
        .zip(model.groups())
        .filter(|(_, g)| *g == crate::model::Group::Delta)
        .map(|(v, _)| v.to_bits())
        .collect()
}

/// Settings of the randomized gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    /// Upper bounds on the instance sizes.
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n: 4,
            d: 8,
            l: 32,
            trials: 100,
            seed: 0,
        }
    }
}

/// Worst normwise relative error of each analytic path against central
/// differences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub jacobian: f64,
    pub closed_form: f64,
    pub bptt: f64,
    /// One line per instance: `(trial, path, unit, field, n, d, L, rel_err)`.
    pub rows: Vec<(usize, String, String, String, usize, usize, usize, f64)>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.jacobian.max(self.closed_form).max(self.bptt)
    }

    pub const CSV_HEADER: &'static str = "trial,path,unit,field,n,d,L,rel_err";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (t, path, unit, field, n, d, l, e) in &self.rows {
            s.push_str(&format!("{t},{path},{unit},{field},{n},{d},{l},{}\n", fmt_f64(*e)));
        }
        s
    }
}

fn field_name(f: Field) -> &'static str {
    match f {
        Field::Real => "real",
        Field::Complex => "complex",
    }
}

/// Random sizes within the bounds; B2S6 widths factor as `h * p`.
fn random_shape(cfg: &GradcheckConfig, kind: UnitKind, rng: &mut impl Rng) -> (usize, usize, Option<usize>, usize) {
    let n = rng.random_range(1..=cfg.n.max(1));
    let l = rng.random_range(2..=cfg.l.max(2));
    let (d, h) = match kind {
        UnitKind::B2s6 => {
            let h = rng.random_range(1..=cfg.d.clamp(1, 4));
            let p = rng.random_range(1..=(cfg.d / h).max(1));
            (h * p, Some(h))
        }
        _ => (rng.random_range(1..=cfg.d.max(1)), None),
    };
    (n, d, h, l)
}

/// Checks input Jacobians, closed-form parameter gradients and reverse-mode
/// model gradients on `trials` random instances of every unit and field.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let kinds = [UnitKind::S4d, UnitKind::S6, UnitKind::B2s6];
    let fields = [Field::Real, Field::Complex];
    let results = par::map_range(cfg.trials, |t| -> Result<Vec<(String, String, String, usize, usize, usize, f64)>> {
        let spec = RngSpec::with_stream(cfg.seed, 0x9c).child(t as u64);
        let kind = kinds[t % 3];
        let field = fields[(t / 3) % 2];
        let mut rng = spec.child(0).rng();
        let (n, d, h, l) = random_shape(cfg, kind, &mut rng);
        let unit = random_unit(kind, n, d, h, field, spec.child(1))?;
        let u = Sequence::new(l, d, crate::numerics::gaussian(spec.child(2), 0.0, 1.0, l * d)?)?;
        let mut out = Vec::new();
        let tag = |path: &str, e: f64, d: usize, l: usize| {
            (path.to_string(), kind.to_string(), field_name(field).to_string(), n, d, l, e)
        };

        // Input Jacobians.
        let jac = input_jacobians(&unit, &u)?;
        let analytic: Vec<f64> = jac.jacobians.iter().flatten().copied().collect();
        let mut fd = vec![0.0; l * d * d];
        for tt in 0..d {
            let col = finite_difference(
                |x| {
                    let v = Sequence::new(l, d, x.to_vec()).expect("finite");
                    unit.scan(&v).map(|y| y.last()[tt]).unwrap_or(f64::NAN)
                },
                u.data(),
                FD_STEP,
            )?;
            for k in 0..l {
                for s in 0..d {
                    fd[k * d * d + tt * d + s] = col[k * d + s];
                }
            }
        }
        out.push(tag("jacobian", rel_err(&analytic, &fd), d, l));

        // Closed forms on a one-channel pair.
        let b = rng.random_range(0.05f64.ln()..0.5f64.ln());
        let inst = RatioInstance::random(n, b, spec.child(3));
        let z = Sequence::scalar(crate::numerics::gaussian(spec.child(4), 0.0, 1.0, l)?)?;
        out.push(tag("closed_form", inst.fd_check(&z)?, 1, l));

        // Reverse mode through a whole model.
        let mut arch = Arch::new(kind, d, n);
        arch.h = h;
        arch.field = Some(field);
        arch.out_dim = rng.random_range(1..=3);
        arch.activation = [Activation::Gelu, Activation::Tanh, Activation::Identity][t % 3];
        let d_in = rng.random_range(1..=3);
        arch.encoder = if t % 2 == 0 {
            EncoderSpec::Broadcast
        } else {
            EncoderSpec::Affine { input_dim: d_in }
        };
        let mut model = init_model(&arch, spec.child(5))?;
        model.unit = unit.clone();
        for (i, th) in model.theta.iter_mut().enumerate() {
            *th = 0.1 * (i as f64 + 1.0).sin();
        }
        if let crate::model::Encoder::Affine { bias, .. } = &mut model.encoder {
            for (i, b) in bias.iter_mut().enumerate() {
                *b = 0.2 * (i as f64).cos();
            }
        }
        let width = model.encoder.input_width();
        let samples: Vec<(Sequence, Vec<f64>)> = (0..2)
            .map(|s| -> Result<(Sequence, Vec<f64>)> {
                let x = crate::numerics::gaussian(spec.child(6 + s), 0.0, 1.0, l * width)?;
                let y = crate::numerics::gaussian(spec.child(8 + s), 0.0, 1.0, model.out_dim)?;
                Ok((Sequence::new(l, width, x)?, y))
            })
            .collect::<Result<_>>()?;
        let batch: Vec<(&Sequence, &[f64])> = samples.iter().map(|(u, y)| (u, y.as_slice())).collect();
        let g = bptt(&model, &batch, LossKind::Mse)?;
        let x0 = model.flatten();
        let fd = finite_difference(
            |x| {
                let mut m = model.clone();
                m.unflatten(x).expect("same length");
                let total: f64 = samples
                    .iter()
                    .map(|(u, y)| {
                        forward(&m, u)
                            .map(|o| crate::gradients::sample_loss(LossKind::Mse, &o, y))
                            .unwrap_or(f64::NAN)
                    })
                    .sum();
                total / samples.len() as f64
            },
            &x0,
            FD_STEP,
        )?;
        out.push(tag("bptt", rel_err(&g.grads.flatten(), &fd), d, l));
        Ok(out)
    });
    let mut report = GradcheckReport::default();
    for (t, r) in results.into_iter().enumerate() {
        for (path, unit, field, n, d, l, e) in r? {
            let slot = match path.as_str() {
                "jacobian" => &mut report.jacobian,
                "closed_form" => &mut report.closed_form,
                _ => &mut report.bptt,
            };
            *slot = if e.is_nan() { f64::NAN } else { slot.max(e) };
            report.rows.push((t, path, unit, field, n, d, l, e));
        }
        report.instances += 1;
    }
    Ok(report)
}

/// Model, task and optimizer of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub task: crate::tasks::TaskConfig,
    /// Held-out samples taken from the end of the generated set.
    pub n_test: usize,
    pub arch: Arch,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let mut arch = Arch::new(UnitKind::S4d, 16, 8);
        arch.out_dim = crate::tasks::PRIMES.len();
        Self {
            task: crate::tasks::TaskConfig::default(),
            n_test: 512,
            arch,
            train: TrainConfig::default(),
        }
    }
}

/// Outcome of [`train_run`].
#[derive(Debug, Clone)]
pub struct TrainRunResult {
    pub log: TrainLog,
    pub test_loss: f64,
}

/// Generates the task, initializes the model and trains it. The encoder and
/// output widths are taken from the task when they disagree with `arch`.
pub fn train_run(cfg: &TrainRunConfig, seed: u64) -> Result<TrainRunResult> {
    let spec = RngSpec::with_stream(seed, 0x7e57);
    let data = cfg.task.generate(spec.child(0))?;
    if cfg.n_test >= data.len() {
        return Err(Error::Config(format!(
            "n_test = {} leaves no training samples out of {}",
            cfg.n_test,
            data.len()
        )));
    }
    let (train_set, test_set) = data.split(data.len() - cfg.n_test);
    let mut arch = cfg.arch.clone();
    arch.out_dim = cfg.task.output_width();
    let width = cfg.task.input_width();
    arch.encoder = match arch.encoder {
        EncoderSpec::Affine { .. } => EncoderSpec::Affine { input_dim: width },
        EncoderSpec::Broadcast if width > 1 => EncoderSpec::Affine { input_dim: width },
        other => other,
    };
    let model = init_model(&arch, spec.child(1))?;
    let train_cfg = TrainConfig {
        seed: spec.child(2).stream_id,
        ..cfg.train.clone()
    };
    let log = train(&model, &train_set, &train_cfg)?;
    let test_loss = if test_set.is_empty() {
        f64::NAN
    } else {
        crate::model::evaluate(&log.final_params, &test_set, LossKind::Mse)?
    };
    Ok(TrainRunResult { log, test_loss })
}

/// Units and width grids of the wave-sum study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WidthStudyConfig {
    pub grids: BTreeMap<UnitKind, Vec<usize>>,
    pub study: WavesumStudy,
    pub train: TrainConfig,
}

impl Default for WidthStudyConfig {
    fn default() -> Self {
        let grids = BTreeMap::from([
            (UnitKind::S4d, vec![4, 8, 16, 32, 64]),
            (UnitKind::S6, vec![4, 8, 16, 32, 64]),
            (UnitKind::B2s6, vec![8, 32, 128]),
        ]);
        Self {
            grids,
            study: WavesumStudy::default(),
            train: TrainConfig {
                epochs: 10,
                lr_main: 1e-2,
                lr_delta: 1e-2,
                ..TrainConfig::default()
            },
        }
    }
}

/// Units and grids of the copy-magnitude study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CopyGridConfig {
    pub units: Vec<UnitKind>,
    pub sigma1_grid: Vec<f64>,
    pub sigma2_grid: Vec<f64>,
    pub study: CopyStudy,
    pub train: TrainConfig,
}

impl Default for CopyGridConfig {
    fn default() -> Self {
        Self {
            units: vec![UnitKind::S4d, UnitKind::S6, UnitKind::B2s6],
            sigma1_grid: vec![0.1, 1.0, 10.0],
            sigma2_grid: vec![0.1, 1.0, 10.0],
            study: CopyStudy::default(),
            train: TrainConfig {
                lr_main: 1e-2,
                lr_delta: 1e-2,
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }
}

/// Shape of the collision demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UatConfig {
    pub d: usize,
    pub n: usize,
    pub l: usize,
    /// Number of consecutive seeds, starting at the run seed.
    pub trials: usize,
}

impl Default for UatConfig {
    fn default() -> Self {
        Self { d: 16, n: 4, l: 16, trials: 20 }
    }
}

/// Runs the collision demo on `trials` consecutive seeds.
pub fn uat_demo(cfg: &UatConfig, seed: u64) -> Result<Vec<CollisionRecord>> {
    (0..cfg.trials as u64)
        .map(|t| {
            let s = seed.wrapping_add(t);
            let (s6, s4d) = collision_models(cfg.d, cfg.n, RngSpec::new(s))?;
            uat_collision_demo(&s6, Some(&s4d), cfg.l, s)
        })
        .collect()
}

pub fn collision_csv(records: &[CollisionRecord]) -> String {
    let mut s = format!("{}\n", CollisionRecord::CSV_HEADER);
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Both arms of the fixed-step experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedDeltaConfig {
    pub study: LinearComboStudy,
    pub lr_delta_values: Vec<f64>,
    pub train: TrainConfig,
}

impl Default for FixedDeltaConfig {
    fn default() -> Self {
        Self {
            study: LinearComboStudy::default(),
            lr_delta_values: vec![0.0, 1e-3],
            train: TrainConfig {
                lr_main: 1e-2,
                lr_delta: 1e-3,
                batch_size: 16,
                epochs: 20,
                ..TrainConfig::default()
            },
        }
    }
}

/// Per-step losses of every arm: `seed,lr_delta,step,loss`.
pub fn fixed_delta_runs_csv(runs: &[FixedDeltaRun]) -> String {
    let mut s = String::from("seed,lr_delta,step,loss\n");
    for r in runs {
        for row in &r.log.rows {
            s.push_str(&format!("{},{},{},{}\n", r.seed, fmt_f64(r.lr_delta), row.step, fmt_f64(row.train_loss)));
        }
    }
    s
}
