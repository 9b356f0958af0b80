//! The single-layer model `y = N^T sigma(Gamma(E(u))_L + theta)`, its
//! initialization, and a mini-batch trainer with separate learning rates for
//! the step-size parameters (`w` and `b`) and everything else.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{bptt, sample_loss};
use crate::numerics::{softplus_inverse, std_normal, ComplexDiag, RngSpec, C64};
use crate::par;
use crate::tasks::Dataset;
use crate::units::{
    B2S6Block, B2S6Params, CMat, Field, S4DParams, S6Params, Sequence, Unit, UnitKind,
};

/// Pointwise nonlinearity applied after the bias `theta`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh approximation of GELU.
    #[default]
    Gelu,
    Relu,
    Tanh,
    Identity,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "id" | "none" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

/// Map from the raw input sequence to the `d` unit channels, applied
/// independently at every position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoder {
    /// Scalar input `u_k` embedded as `m * u_k`.
    Broadcast { m: Vec<f64> },
    /// `u_k -> W^T u_k + bias` with `W` stored `d_in x d` row-major.
    Affine { d_in: usize, weight: Vec<f64>, bias: Vec<f64> },
    /// The input already has `d` channels.
    Identity { width: usize },
}

impl Encoder {
    pub fn input_width(&self) -> usize {
        match self {
            Encoder::Broadcast { .. } => 1,
            Encoder::Affine { d_in, .. } => *d_in,
            Encoder::Identity { width } => *width,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Encoder::Broadcast { m } => m.len(),
            Encoder::Affine { bias, .. } => bias.len(),
            Encoder::Identity { width } => *width,
        }
    }

    pub fn encode(&self, u: &Sequence) -> Result<Sequence> {
        if u.width() != self.input_width() {
            return Err(Error::shape(format!("input of width {}", self.input_width()), u.width()));
        }
        let (l, d) = (u.len(), self.output_width());
        let mut out = Sequence::zeros(l, d);
        match self {
            Encoder::Broadcast { m } => {
                for k in 0..l {
                    let x = u.get(k, 0);
                    for (o, mi) in out.row_mut(k).iter_mut().zip(m) {
                        *o = mi * x;
                    }
                }
            }
            Encoder::Affine { d_in, weight, bias } => {
                for k in 0..l {
                    let row = u.row(k);
                    let o = out.row_mut(k);
                    o.copy_from_slice(bias);
                    for s in 0..*d_in {
                        let x = row[s];
                        for i in 0..d {
                            o[i] += x * weight[s * d + i];
                        }
                    }
                }
            }
            Encoder::Identity { .. } => return Ok(u.clone()),
        }
        Ok(out)
    }
}

/// Which encoder [`init_model`] builds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderSpec {
    #[default]
    Broadcast,
    Affine { input_dim: usize },
    Identity,
}

/// Parameters of the single-layer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub unit: Unit,
    pub theta: Vec<f64>,
    /// `d x o`, row-major.
    pub n_dec: Vec<f64>,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Parameter groups with separate learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Main,
    /// The step-size parameters `w` and `b`.
    Delta,
}

/// Calls `f` on every real parameter slot in a fixed order. Imaginary parts of
/// real-typed fields are visited with `trainable = false`.
fn visit(model: &mut ModelParams, f: &mut dyn FnMut(Group, bool, &mut f64)) {
    fn reals(v: &mut [f64], g: Group, f: &mut dyn FnMut(Group, bool, &mut f64)) {
        for x in v {
            f(g, true, x);
        }
    }
    fn complex(v: &mut [C64], imag: bool, trainable: bool, f: &mut dyn FnMut(Group, bool, &mut f64)) {
        for z in v {
            f(Group::Main, trainable, &mut z.re);
            f(Group::Main, trainable && imag, &mut z.im);
        }
    }
    match &mut model.encoder {
        Encoder::Broadcast { m } => reals(m, Group::Main, f),
        Encoder::Affine { weight, bias, .. } => {
            reals(weight, Group::Main, f);
            reals(bias, Group::Main, f);
        }
        Encoder::Identity { .. } => {}
    }
    match &mut model.unit {
        Unit::S4d(p) => {
            let cx = p.field == Field::Complex;
            complex(&mut p.a.0, cx, true, f);
            complex(&mut p.b.data, cx, true, f);
            complex(&mut p.c.data, cx, true, f);
            reals(&mut p.b_delta, Group::Delta, f);
        }
        Unit::S6(p) => {
            let cx = p.field == Field::Complex;
            complex(&mut p.a.0, cx, true, f);
            complex(&mut p.b.data, cx, true, f);
            complex(&mut p.c.data, false, true, f);
            reals(&mut p.w, Group::Delta, f);
            reals(&mut p.b_delta, Group::Delta, f);
        }
        Unit::B2s6(p) => {
            let cx = p.field == Field::Complex;
            complex(&mut p.a.0, cx, true, f);
            for blk in &mut p.blocks {
                complex(&mut blk.b_weight.data, cx, true, f);
                complex(&mut blk.b_bias.data, cx, p.use_bias, f);
                complex(&mut blk.c.data, false, true, f);
                reals(&mut blk.w, Group::Delta, f);
                reals(&mut blk.b_delta, Group::Delta, f);
            }
        }
    }
    reals(&mut model.theta, Group::Main, f);
    reals(&mut model.n_dec, Group::Main, f);
}

impl ModelParams {
    /// Channel count `d`.
    pub fn width(&self) -> usize {
        self.unit.width()
    }

    pub fn validate(&self) -> Result<()> {
        self.unit.validate()?;
        let d = self.width();
        if self.encoder.output_width() != d {
            return Err(Error::Config(format!(
                "encoder produces {} channels but the unit has {d}",
                self.encoder.output_width()
            )));
        }
        if let Encoder::Affine { d_in, weight, .. } = &self.encoder {
            if weight.len() != d_in * d {
                return Err(Error::Config(format!("encoder weight must be {d_in}x{d}")));
            }
        }
        if self.theta.len() != d || self.n_dec.len() != d * self.out_dim || self.out_dim == 0 {
            return Err(Error::Config(format!(
                "theta must have {d} entries and N must be {d}x{}",
                self.out_dim
            )));
        }
        Ok(())
    }

    /// Same shape, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        visit(&mut z, &mut |_, _, x| *x = 0.0);
        z
    }

    /// `self += scale * other` over every slot.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let mut vals = Vec::new();
        let mut o = other.clone();
        visit(&mut o, &mut |_, _, x| vals.push(*x));
        let mut it = vals.into_iter();
        visit(self, &mut |_, _, x| *x += scale * it.next().unwrap_or(0.0));
    }

    /// Trainable values in walker order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut m = self.clone();
        visit(&mut m, &mut |_, t, x| {
            if t {
                out.push(*x)
            }
        });
        out
    }

    /// Group of every entry of [`flatten`](Self::flatten).
    pub fn groups(&self) -> Vec<Group> {
        let mut out = Vec::new();
        let mut m = self.clone();
        visit(&mut m, &mut |g, t, _| {
            if t {
                out.push(g)
            }
        });
        out
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.flatten().len();
        if values.len() != expected {
            return Err(Error::shape(format!("{expected} parameters"), values.len()));
        }
        let mut it = values.iter();
        visit(self, &mut |_, t, x| {
            if t {
                *x = *it.next().expect("length checked");
            }
        });
        Ok(())
    }
}

/// Architecture description consumed by [`init_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub unit: UnitKind,
    /// Unit width `d`.
    pub d: usize,
    /// State size `n`.
    pub n: usize,
    /// B2S6 block count `h` (block width `p = d / h`).
    #[serde(default)]
    pub h: Option<usize>,
    #[serde(default)]
    pub p: Option<usize>,
    /// Defaults: complex for S4D and B2S6, real for S6.
    #[serde(default)]
    pub field: Option<Field>,
    /// B2S6 bias columns on or off.
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default = "one")]
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl Arch {
    pub fn new(unit: UnitKind, d: usize, n: usize) -> Self {
        Self {
            unit,
            d,
            n,
            h: None,
            p: None,
            field: None,
            bias: true,
            encoder: EncoderSpec::Broadcast,
            out_dim: 1,
            activation: Activation::Gelu,
        }
    }

    /// Resolved `(h, p)` for B2S6.
    pub fn blocks(&self) -> Result<(usize, usize)> {
        let (h, p) = match (self.h, self.p) {
            (Some(h), Some(p)) => (h, p),
            (Some(h), None) if h > 0 => (h, self.d / h),
            (None, Some(p)) if p > 0 => (self.d / p, p),
            (None, None) => (1, self.d),
            _ => return Err(Error::Config("block count and width must be positive".into())),
        };
        if h == 0 || p == 0 || h * p != self.d {
            return Err(Error::Config(format!("h*p = {h}*{p} does not equal d = {}", self.d)));
        }
        Ok((h, p))
    }
}

/// Gaussian draws with standard deviation `std` (complex entries split the
/// variance evenly between real and imaginary parts).
struct Draw<R: Rng> {
    rng: R,
    complex: bool,
}

impl<R: Rng> Draw<R> {
    fn real(&mut self, std: f64, count: usize) -> Vec<f64> {
        (0..count).map(|_| std * std_normal(&mut self.rng)).collect()
    }

    fn cmat(&mut self, rows: usize, cols: usize, std: f64, complex: bool) -> CMat {
        let s = if complex { std / 2f64.sqrt() } else { std };
        CMat::from_fn(rows, cols, |_, _| {
            let re = s * std_normal(&mut self.rng);
            let im = if complex { s * std_normal(&mut self.rng) } else { 0.0 };
            C64::new(re, im)
        })
    }
}

/// Diagonal state matrix: `-1/2 + i pi m` (complex) or uniform in `[-1, -1/2]` (real).
pub fn init_state_matrix(n: usize, field: Field, seed: RngSpec) -> ComplexDiag {
    let mut rng = seed.rng();
    ComplexDiag(
        (0..n)
            .map(|m| match field {
                Field::Complex => C64::new(-0.5, std::f64::consts::PI * m as f64),
                Field::Real => C64::new(rng.random_range(-1.0..=-0.5), 0.0),
            })
            .collect(),
    )
}

/// `count` step sizes log-uniform in `[1e-3, 1e-1]`.
pub fn init_deltas(count: usize, seed: RngSpec) -> Vec<f64> {
    let mut rng = seed.rng();
    let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
    (0..count).map(|_| rng.random_range(lo..hi).exp()).collect()
}

fn selective_bias(deltas: &[f64]) -> Vec<f64> {
    deltas.iter().map(|&d| softplus_inverse(d).expect("positive step")).collect()
}

/// Initializes a unit of the given architecture.
pub fn init_unit(arch: &Arch, seed: RngSpec) -> Result<Unit> {
    let (d, n) = (arch.d, arch.n);
    if d == 0 || n == 0 {
        return Err(Error::Config(format!("widths must be positive, got d = {d}, n = {n}")));
    }
    let field = arch.field.unwrap_or(match arch.unit {
        UnitKind::S6 => Field::Real,
        _ => Field::Complex,
    });
    let cx = field == Field::Complex;
    let a = init_state_matrix(n, field, seed.child(0));
    let deltas = init_deltas(d, seed.child(1));
    let mut draw = Draw {
        rng: seed.child(2).rng(),
        complex: cx,
    };
    let inv = |x: usize| 1.0 / (x as f64).sqrt();
    let mut unit = match arch.unit {
        UnitKind::S4d => Unit::S4d(S4DParams {
            a,
            b: draw.cmat(d, n, 1.0, cx),
            c: draw.cmat(d, n, inv(n), cx),
            b_delta: deltas.iter().map(|x| x.ln()).collect(),
            field,
        }),
        UnitKind::S6 => Unit::S6(S6Params {
            a,
            b: draw.cmat(n, d, inv(d), cx),
            c: draw.cmat(d, n, inv(d), false),
            w: draw.real(inv(d), d),
            b_delta: selective_bias(&deltas),
            field,
        }),
        UnitKind::B2s6 => {
            let (h, p) = arch.blocks()?;
            let complex = draw.complex;
            let blocks = (0..h)
                .map(|j| B2S6Block {
                    b_weight: draw.cmat(n, p, inv(p), complex),
                    b_bias: if arch.bias {
                        draw.cmat(n, p, 1.0, complex)
                    } else {
                        CMat::zeros(n, p)
                    },
                    c: draw.cmat(p, n, inv(p), false),
                    w: draw.real(inv(p), p),
                    b_delta: selective_bias(&deltas[j * p..(j + 1) * p]),
                })
                .collect();
            Unit::B2s6(B2S6Params {
                h,
                p,
                a,
                blocks,
                use_bias: arch.bias,
                field,
            })
        }
    };
    unit.enforce_field();
    unit.validate()?;
    Ok(unit)
}

/// Deterministic initialization of the whole model.
pub fn init_model(arch: &Arch, seed: RngSpec) -> Result<ModelParams> {
    let unit = init_unit(arch, seed.child(10))?;
    let d = arch.d;
    let mut draw = Draw {
        rng: seed.child(11).rng(),
        complex: false,
    };
    let encoder = match arch.encoder {
        EncoderSpec::Broadcast => Encoder::Broadcast { m: draw.real(1.0 / (d as f64).sqrt(), d) },
        EncoderSpec::Affine { input_dim } => Encoder::Affine {
            d_in: input_dim,
            weight: draw.real(1.0 / (input_dim.max(1) as f64).sqrt(), input_dim * d),
            bias: vec![0.0; d],
        },
        EncoderSpec::Identity => Encoder::Identity { width: d },
    };
    let model = ModelParams {
        encoder,
        unit,
        theta: vec![0.0; d],
        n_dec: draw.real(1.0 / (d as f64).sqrt(), d * arch.out_dim),
        out_dim: arch.out_dim,
        activation: arch.activation,
    };
    model.validate()?;
    Ok(model)
}

/// Intermediate values of the head for one sample.
#[derive(Debug, Clone)]
pub(crate) struct HeadParts {
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) fn forward_parts(model: &ModelParams, y_last: &[f64]) -> HeadParts {
    let o = model.out_dim;
    let z: Vec<f64> = y_last.iter().zip(&model.theta).map(|(y, t)| y + t).collect();
    let h: Vec<f64> = z.iter().map(|&x| model.activation.apply(x)).collect();
    let mut out = vec![0.0; o];
    for (i, hi) in h.iter().enumerate() {
        for k in 0..o {
            out[k] += hi * model.n_dec[i * o + k];
        }
    }
    HeadParts { z, h, out }
}

/// Model output for one input sequence.
pub fn forward(model: &ModelParams, u: &Sequence) -> Result<Vec<f64>> {
    model.validate()?;
    let enc = model.encoder.encode(u)?;
    let y = model.unit.scan(&enc)?;
    Ok(forward_parts(model, y.last()).out)
}

/// Predictions for every input of `data`.
pub fn predict(model: &ModelParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    par::map_slice(&data.inputs, |u| forward(model, u)).into_iter().collect()
}

/// Mean loss over `data`.
pub fn evaluate(model: &ModelParams, data: &Dataset, loss: LossKind) -> Result<f64> {
    let preds = predict(model, data)?;
    let total: f64 = preds
        .iter()
        .zip(&data.targets)
        .map(|(p, t)| sample_loss(loss, p, t))
        .sum();
    Ok(total / data.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
}

/// Largest real part allowed for a diagonal entry of `A` after an update.
pub const MAX_RE_A: f64 = -1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr_main: f64,
    /// Learning rate of `w` and `b`; 0 freezes them.
    pub lr_delta: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Stop at the first non-finite loss instead of skipping the step.
    pub halt_on_divergence: bool,
    /// Record elapsed wall time per step; when false the column is 0 so logs
    /// are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr_main: 1e-3,
            lr_delta: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            loss: LossKind::Mse,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            halt_on_divergence: false,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.lr_main) || !finite_nonneg(self.lr_delta) || !finite_nonneg(self.weight_decay) {
            return Err(Error::Config("learning rates and weight decay must be finite and >= 0".into()));
        }
        if self.lr_delta > self.lr_main {
            return Err(Error::Config(format!(
                "lr_delta {} exceeds lr_main {}",
                self.lr_delta, self.lr_main
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam needs beta in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// First-order optimizer state over the flattened parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lrs: Vec<f64>,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, groups: &[Group]) -> Self {
        let lrs = groups
            .iter()
            .map(|g| match g {
                Group::Main => cfg.lr_main,
                Group::Delta => cfg.lr_delta,
            })
            .collect();
        Self {
            kind: cfg.optimizer,
            lrs,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; groups.len()],
            v: vec![0.0; groups.len()],
            t: 0,
        }
    }

    /// One update of `params` in place. Entries whose learning rate is 0 are
    /// left untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let (bc1, bc2) = (1.0 - self.beta1.powi(self.t), 1.0 - self.beta2.powi(self.t));
        for i in 0..params.len() {
            let lr = self.lrs[i];
            if lr == 0.0 {
                continue;
            }
            let g = grads[i];
            let update = match self.kind {
                OptimizerKind::Sgd => g,
                OptimizerKind::Adam => {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps)
                }
            };
            params[i] -= lr * update + lr * self.weight_decay * params[i];
        }
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    /// The loss or gradient was not finite; the update was skipped.
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
    pub final_params: ModelParams,
    /// Training stopped early on a non-finite loss.
    pub halted: bool,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,step,train_loss,grad_norm,wall_ms";

    pub fn diverged(&self) -> bool {
        self.rows.iter().any(|r| r.diverged)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                r.step,
                crate::experiments::fmt_f64(r.train_loss),
                crate::experiments::fmt_f64(r.grad_norm),
                crate::experiments::fmt_f64(r.wall_ms)
            ));
        }
        s
    }
}

/// Mini-batch training with per-epoch shuffling.
pub fn train(model: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    model.validate()?;
    data.validate()?;
    if let Some(u) = data.inputs.first() {
        if u.width() != model.encoder.input_width() {
            return Err(Error::Config(format!(
                "dataset width {} does not match model input width {}",
                u.width(),
                model.encoder.input_width()
            )));
        }
    }
    if data.targets.first().is_some_and(|t| t.len() != model.out_dim) {
        return Err(Error::Config("dataset target width does not match model output".into()));
    }
    let start = Instant::now();
    let mut params = model.clone();
    let mut opt = Optimizer::new(cfg, &params.groups());
    let clamp_a = cfg.lr_main > 0.0;
    let mut rows = Vec::new();
    let mut step = 0;
    let mut halted = false;
    let mut order: Vec<usize> = (0..data.len()).collect();
    'outer: for epoch in 0..cfg.epochs {
        shuffle(&mut order, RngSpec::with_stream(cfg.seed, 0x7261_696e).child(epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Sequence, &[f64])> = chunk
                .iter()
                .map(|&i| (&data.inputs[i], data.targets[i].as_slice()))
                .collect();
            let bg = bptt(&params, &batch, cfg.loss)?;
            let g = bg.grads.flatten();
            let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut diverged = !bg.finite;
            if !diverged {
                let mut flat = params.flatten();
                opt.step(&mut flat, &g);
                let mut next = params.clone();
                next.unflatten(&flat)?;
                if clamp_a {
                    clamp_state_matrix(&mut next.unit);
                }
                if flat.iter().all(|v| v.is_finite()) {
                    params = next;
                } else {
                    diverged = true;
                }
            }
            let wall_ms = if cfg.record_wall_time {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            rows.push(TrainRow {
                epoch,
                step,
                train_loss: bg.loss,
                grad_norm,
                wall_ms,
                diverged,
            });
            step += 1;
            if diverged && cfg.halt_on_divergence {
                halted = true;
                break 'outer;
            }
        }
    }
    Ok(TrainLog {
        rows,
        final_params: params,
        halted,
    })
}

fn clamp_state_matrix(unit: &mut Unit) {
    let a = match unit {
        Unit::S4d(p) => &mut p.a.0,
        Unit::S6(p) => &mut p.a.0,
        Unit::B2s6(p) => &mut p.a.0,
    };
    for z in a {
        z.re = z.re.min(MAX_RE_A);
    }
}

/// Fisher-Yates shuffle driven by `spec`.
pub(crate) fn shuffle<T>(items: &mut [T], spec: RngSpec) {
    let mut rng = spec.rng();
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// A generic random unit for checks and tests: `Re(a)` in `[-1, -0.1]`,
/// standard-normal imaginary parts (complex field), steps `Delta` roughly in
/// `[0.05, 0.5]`, Gaussian `B`, `C`, `w`, and biases.
pub fn random_unit(kind: UnitKind, n: usize, d: usize, h: Option<usize>, field: Field, seed: RngSpec) -> Result<Unit> {
    let mut arch = Arch::new(kind, d, n);
    arch.h = h;
    arch.field = Some(field);
    let mut unit = init_unit(&arch, seed.child(0))?;
    let mut rng = seed.child(1).rng();
    let cx = field == Field::Complex;
    let a: Vec<C64> = (0..n)
        .map(|_| {
            let re = rng.random_range(-1.0..-0.1);
            let im = if cx { std_normal(&mut rng) } else { 0.0 };
            C64::new(re, im)
        })
        .collect();
    let step = |rng: &mut rand_chacha::ChaCha20Rng| rng.random_range(0.05f64.ln()..0.5f64.ln()).exp();
    match &mut unit {
        Unit::S4d(p) => {
            p.a = ComplexDiag(a);
            for b in &mut p.b_delta {
                *b = step(&mut rng).ln();
            }
        }
        Unit::S6(p) => {
            p.a = ComplexDiag(a);
            for b in &mut p.b_delta {
                *b = softplus_inverse(step(&mut rng))?;
            }
        }
        Unit::B2s6(p) => {
            p.a = ComplexDiag(a);
            for blk in &mut p.blocks {
                for b in &mut blk.b_delta {
                    *b = softplus_inverse(step(&mut rng))?;
                }
            }
        }
    }
    unit.enforce_field();
    Ok(unit)
}
