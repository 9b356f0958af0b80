use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use ssmlab::experiments::{
    bias_instance, collision_csv, copy_robustness_grid, fixed_delta_runs_csv, fixed_delta_training, gradcheck,
    inductive_bias_sweep, stability_ratio_sweep_c, stability_ratio_sweep_l, train_run, uat_demo,
    width_scaling_study, BiasConfig, BiasSign, CopyGridConfig, FixedDeltaConfig, GradcheckConfig, Manifest,
    StabilityConfig, TrainRunConfig, UatConfig, WidthStudyConfig, MANIFEST_NAME,
};
use ssmlab::{par, Error};

const SEED_ENV: &str = "SSMLAB_SEED";
/// Largest relative error `gradcheck` accepts before exiting with 3.
const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "ssmlab", version, about = "State-space unit experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed; falls back to the config file, then SSMLAB_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overwrite an existing manifest.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model on a synthetic task.
    Train(TrainArgs),
    /// Relative gradients against the scale of one input.
    BiasSweep(BiasArgs),
    /// Gradient ratios against the input scale.
    StabilityC(StabilityArgs),
    /// Gradient ratios against the sequence length.
    StabilityL(StabilityArgs),
    /// Wave-sum test loss against the model width.
    WidthStudy(WidthArgs),
    /// Copy-magnitude relative error over a (sigma1, sigma2) grid.
    CopyGrid(CopyArgs),
    /// Input pairs a fixed-step S6 model cannot tell apart.
    UatDemo(UatArgs),
    /// Training with and without updates to the step-size parameters.
    FixedDelta(FixedDeltaArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    unit: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_delta: Option<f64>,
}

#[derive(Args, Debug)]
struct BiasArgs {
    #[arg(long)]
    unit: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    /// positive, negative, or both (default).
    #[arg(long, default_value = "both")]
    sign: String,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    delta_product: Option<f64>,
}

#[derive(Args, Debug)]
struct WidthArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Args, Debug)]
struct CopyArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Args, Debug)]
struct UatArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Debug)]
struct FixedDeltaArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

/// Failure of a run, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(format!("invalid config: {e}"))
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(path: Option<&Path>) -> Outcome<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text)? {
        Value::Object(m) => Ok(m),
        _ => Err(Failure::Config(format!("{} must hold a JSON object", path.display()))),
    }
}

/// Seed from the flag, else the config's `seed`, else the environment, else 0.
fn resolve_seed(flag: Option<u64>, file: &Map<String, Value>) -> Outcome<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = file.get("seed") {
        return v
            .as_u64()
            .ok_or_else(|| Failure::Config(format!("config seed must be a nonnegative integer, got {v}")));
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("{SEED_ENV} must be a nonnegative integer, got '{s}'"))),
        Err(_) => Ok(0),
    }
}

/// Sets `path` (dot-separated) in `cfg` when `value` is present.
fn set<T: serde::Serialize>(cfg: &mut Map<String, Value>, path: &str, value: Option<T>) -> Outcome<()> {
    let Some(v) = value else { return Ok(()) };
    let mut keys = path.split('.').peekable();
    let mut node = cfg;
    while let Some(k) = keys.next() {
        if keys.peek().is_none() {
            node.insert(k.to_string(), serde_json::to_value(v)?);
            return Ok(());
        }
        let child = node.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = child
            .as_object_mut()
            .ok_or_else(|| Failure::Config(format!("config key '{k}' must be an object")))?;
    }
    Ok(())
}

/// Fills in defaults by round-tripping through the typed config.
fn resolve<T: serde::de::DeserializeOwned + serde::Serialize>(cfg: Map<String, Value>) -> Outcome<(T, Value)> {
    let typed: T = serde_json::from_value(Value::Object(cfg))?;
    let echo = serde_json::to_value(&typed)?;
    Ok((typed, echo))
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn prepare(dir: &Path, force: bool) -> Outcome<Self> {
        std::fs::create_dir_all(dir)?;
        if dir.join(MANIFEST_NAME).exists() && !force {
            return Err(Failure::Config(format!(
                "{} already holds a manifest (use --force to overwrite)",
                dir.display()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Outcome<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    fn table(&mut self, table: &ssmlab::experiments::SweepTable) -> Outcome<()> {
        self.files.extend(table.write(&self.dir)?);
        Ok(())
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let common = cli.common;
    let mut file = load_config(common.config.as_deref())?;
    let seed = resolve_seed(common.seed, &file)?;
    file.remove("seed");
    let mut out = Output::prepare(&common.out, common.force)?;
    let start = Instant::now();
    let workers = common.workers;
    let (name, config, grids, numerical) =
        par::with_workers(workers, || execute(cli.command, file, seed, &mut out))?;
    let mut manifest = Manifest::new(name, seed, config, grids);
    manifest.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    manifest.record_files(&out.files)?;
    let path = manifest.write(&out.dir, true)?;
    println!("wrote {} files and {}", out.files.len(), path.display());
    match numerical {
        Some(msg) => Err(Failure::Numerical(msg)),
        None => Ok(()),
    }
}

type Executed = (&'static str, Value, Value, Option<String>);

fn execute(command: Command, mut cfg: Map<String, Value>, seed: u64, out: &mut Output) -> Outcome<Executed> {
    match command {
        Command::Train(a) => {
            set(&mut cfg, "arch.unit", a.unit.map(|u| u.to_ascii_lowercase()))?;
            set(&mut cfg, "arch.d", a.d)?;
            set(&mut cfg, "arch.n", a.n)?;
            set(&mut cfg, "train.epochs", a.epochs)?;
            set(&mut cfg, "train.lr_main", a.lr)?;
            set(&mut cfg, "train.lr_delta", a.lr_delta)?;
            let (c, echo): (TrainRunConfig, _) = resolve(cfg)?;
            let res = train_run(&c, seed)?;
            out.write("train_log.csv", &res.log.to_csv())?;
            out.write("model.json", &serde_json::to_string_pretty(&res.log.final_params)?)?;
            let diverged = (res.log.diverged() || !res.test_loss.is_finite())
                .then(|| "training produced a non-finite loss".to_string());
            println!("test loss {}", res.test_loss);
            Ok(("train", echo, json!({ "test_loss": res.test_loss }), diverged))
        }
        Command::BiasSweep(a) => {
            set(&mut cfg, "unit", a.unit.map(|u| u.to_ascii_lowercase()))?;
            set(&mut cfg, "d", a.d)?;
            set(&mut cfg, "n", a.n)?;
            set(&mut cfg, "h", a.h)?;
            set(&mut cfg, "l", a.l)?;
            set(&mut cfg, "k0", a.k0)?;
            set(&mut cfg, "seed", Some(seed))?;
            let (c, echo): (BiasConfig, _) = resolve(cfg)?;
            let signs = match a.sign.as_str() {
                "positive" => vec![BiasSign::Positive],
                "negative" => vec![BiasSign::Negative],
                "both" => vec![BiasSign::Positive, BiasSign::Negative],
                other => return Err(Failure::Config(format!("unknown sign '{other}'"))),
            };
            let (unit, u) = bias_instance(&c)?;
            for s in signs {
                out.table(&inductive_bias_sweep(&unit, &u, c.k0, &c.c_grid, s)?)?;
            }
            out.write("instance.json", &serde_json::to_string_pretty(&json!({ "unit": unit, "u": u }))?)?;
            Ok(("bias-sweep", echo, json!({ "c_grid": c.c_grid }), None))
        }
        Command::StabilityC(a) => {
            let (c, echo) = stability_config(cfg, a, seed)?;
            out.table(&stability_ratio_sweep_c(&c)?)?;
            Ok(("stability-c", echo, json!({ "c_grid": c.c_grid, "L": c.l }), None))
        }
        Command::StabilityL(a) => {
            let (c, echo) = stability_config(cfg, a, seed)?;
            out.table(&stability_ratio_sweep_l(&c)?)?;
            Ok(("stability-l", echo, json!({ "L_grid": c.l_grid, "c": c.c }), None))
        }
        Command::WidthStudy(a) => {
            set(&mut cfg, "train.epochs", a.epochs)?;
            set(&mut cfg, "study.n_train", a.n_train)?;
            set(&mut cfg, "study.n_test", a.n_test)?;
            if !cfg.get("study").is_some_and(|s| s.get("seeds").is_some()) {
                set(&mut cfg, "study.seeds", Some(vec![seed]))?;
            }
            let (c, echo): (WidthStudyConfig, _) = resolve(cfg)?;
            for (unit, grid) in &c.grids {
                out.table(&width_scaling_study(*unit, grid, &c.study, &c.train)?)?;
            }
            Ok(("width-study", echo, json!({ "grids": c.grids }), None))
        }
        Command::CopyGrid(a) => {
            set(&mut cfg, "train.epochs", a.epochs)?;
            set(&mut cfg, "study.n_train", a.n_train)?;
            set(&mut cfg, "study.n_test", a.n_test)?;
            if !cfg.get("study").is_some_and(|s| s.get("seeds").is_some()) {
                set(&mut cfg, "study.seeds", Some(vec![seed]))?;
            }
            let (c, echo): (CopyGridConfig, _) = resolve(cfg)?;
            for t in copy_robustness_grid(&c.units, &c.sigma1_grid, &c.sigma2_grid, &c.study, &c.train)? {
                out.table(&t)?;
            }
            Ok((
                "copy-grid",
                echo,
                json!({ "sigma1_grid": c.sigma1_grid, "sigma2_grid": c.sigma2_grid }),
                None,
            ))
        }
        Command::UatDemo(a) => {
            set(&mut cfg, "d", a.d)?;
            set(&mut cfg, "n", a.n)?;
            set(&mut cfg, "l", a.l)?;
            set(&mut cfg, "trials", a.trials)?;
            let (c, echo): (UatConfig, _) = resolve(cfg)?;
            let records = uat_demo(&c, seed)?;
            out.write("collision.csv", &collision_csv(&records))?;
            let worst = records.iter().map(|r| r.out_diff).fold(0.0f64, f64::max);
            println!("largest S6 output difference {worst:e}");
            let seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
            Ok(("uat-demo", echo, json!({ "seeds": seeds }), None))
        }
        Command::FixedDelta(a) => {
            set(&mut cfg, "train.epochs", a.epochs)?;
            set(&mut cfg, "study.n_samples", a.n_samples)?;
            if !cfg.get("study").is_some_and(|s| s.get("seeds").is_some()) {
                let seeds: Vec<u64> = (0..5).map(|i| seed.wrapping_add(i)).collect();
                set(&mut cfg, "study.seeds", Some(seeds))?;
            }
            let (c, echo): (FixedDeltaConfig, _) = resolve(cfg)?;
            let (table, runs) = fixed_delta_training(&c.study, &c.lr_delta_values, &c.train)?;
            out.table(&table)?;
            out.write("fixed_delta_runs.csv", &fixed_delta_runs_csv(&runs))?;
            let diverged = runs
                .iter()
                .any(|r| r.log.diverged())
                .then(|| "a training arm produced a non-finite loss".to_string());
            Ok(("fixed-delta", echo, json!({ "lr_delta_values": c.lr_delta_values }), diverged))
        }
        Command::Gradcheck(a) => {
            set(&mut cfg, "n", a.n)?;
            set(&mut cfg, "d", a.d)?;
            set(&mut cfg, "l", a.l)?;
            set(&mut cfg, "trials", a.trials)?;
            set(&mut cfg, "seed", Some(seed))?;
            let (c, echo): (GradcheckConfig, _) = resolve(cfg)?;
            let report = gradcheck(&c)?;
            out.write("gradcheck.csv", &report.to_csv())?;
            let worst = report.max_error();
            println!(
                "{} instances; max relative error: jacobian {:e}, closed form {:e}, bptt {:e}",
                report.instances, report.jacobian, report.closed_form, report.bptt
            );
            let failed = (!(worst <= GRADCHECK_TOL))
                .then(|| format!("max relative error {worst:e} exceeds {GRADCHECK_TOL:e}"));
            Ok(("gradcheck", echo, json!({ "trials": c.trials }), failed))
        }
    }
}

fn stability_config(mut cfg: Map<String, Value>, a: StabilityArgs, seed: u64) -> Outcome<(StabilityConfig, Value)> {
    set(&mut cfg, "l", a.l)?;
    set(&mut cfg, "c", a.c)?;
    set(&mut cfg, "n", a.n)?;
    set(&mut cfg, "trials", a.trials)?;
    set(&mut cfg, "delta_product", a.delta_product)?;
    set(&mut cfg, "seed", Some(seed))?;
    resolve(cfg)
}
