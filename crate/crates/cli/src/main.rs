use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use predinfo::bho::{simulate, BhoParams, Init, WindowSpec};
use predinfo::gib::{ib_spectrum, FrontierCurve};
use predinfo::miest::PointMeta;
use predinfo::pipeline::{
    bho_frontier, classify_split, emit_plot, export, ingest, plane_point_for_model, prepare, run_sweep, train_class_models,
    train_model, write_frontier_csv, Dataset, Split, SweepConfig,
};
use predinfo::rng::derive_seed;
use predinfo::rnn::{load_checkpoint, save_checkpoint, CellKind, RnnConfig, RnnModel};
use predinfo::{Error, Result};

/// Predictive information of recurrent representations.
#[derive(Parser)]
#[command(name = "predinfo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate oscillator position sequences into a dataset file.
    BhoGen(BhoGen),
    /// Optimal past/future information trade-off of the oscillator.
    GibFrontier(GibFrontier),
    /// Train one model and save a checkpoint.
    Train(Train),
    /// Place a trained model on the information plane.
    Estimate(Estimate),
    /// Run a full noise sweep.
    Sweep(Sweep),
    /// Naive-Bayes classification with one model per label.
    Classify(Classify),
    /// Render a sweep's points (and frontier) as SVG.
    Plot(Plot),
}

#[derive(Args)]
struct OscArgs {
    #[arg(long, default_value_t = BhoParams::paper().omega)]
    omega: f64,
    #[arg(long, default_value_t = BhoParams::paper().gamma)]
    gamma: f64,
    #[arg(long = "diffusion", default_value_t = BhoParams::paper().d)]
    d: f64,
    #[arg(long, default_value_t = BhoParams::paper().dt)]
    dt: f64,
}

impl OscArgs {
    fn params(&self) -> BhoParams {
        BhoParams { omega: self.omega, gamma: self.gamma, d: self.d, dt: self.dt }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set hidden_dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<SweepConfig> {
        let mut cfg = SweepConfig::desk();
        if let Some(p) = &self.config {
            cfg = cfg.apply_text(&std::fs::read_to_string(p)?)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct BhoGen {
    #[command(flatten)]
    osc: OscArgs,
    #[arg(long, default_value_t = 800)]
    n_train: usize,
    #[arg(long, default_value_t = 100)]
    n_val: usize,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    #[arg(long, default_value_t = 100)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GibFrontier {
    #[command(flatten)]
    osc: OscArgs,
    #[arg(long, default_value_t = 18)]
    t_past: usize,
    #[arg(long, default_value_t = 18)]
    t_future: usize,
    #[arg(long, default_value_t = 400)]
    points: usize,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "vanilla")]
    cell: CellKind,
    /// Readout noise used during training.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Estimate {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    model: PathBuf,
    /// Evaluation readout noise; defaults to the model's training noise.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Sweep {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Classify {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "vanilla")]
    cell: CellKind,
    /// Training crop length in steps; sequences shorter are dropped.
    #[arg(long, default_value_t = 100)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Plot {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    frontier: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

fn bho_gen(a: &BhoGen) -> Result<()> {
    let n = a.n_train + a.n_val + a.n_test;
    let batch = simulate(&a.osc.params(), n, a.len, a.seed, Init::Stationary)?;
    let ds = Dataset::from_trajectories(&batch, a.n_train, a.n_val, a.label.as_deref());
    export(&ds, &a.out)?;
    eprintln!("wrote {n} sequences of {} steps to {}", a.len, a.out.display());
    Ok(())
}

fn gib_frontier(a: &GibFrontier) -> Result<()> {
    let spec = WindowSpec {
        t_past: a.t_past,
        t_future: a.t_future,
        total_len: a.t_past + a.t_future,
        split_index: a.t_past,
    };
    let p = a.osc.params();
    let joint = predinfo::bho::window_covariances(&p, &spec)?;
    let curve = FrontierCurve::from_spectrum(&ib_spectrum(&joint)?)?;
    eprintln!("I(past; future) = {:.6} nats", joint.mutual_information()?);
    eprintln!("frontier asymptote = {:.6} nats", curve.asymptote());
    let points = bho_frontier(&p, &spec, a.points)?;
    write_frontier_csv(&points, output(a.out.as_deref())?)
}

fn train_cmd(a: &Train) -> Result<()> {
    let cfg = a.cfg.load()?;
    cfg.validate()?;
    let prep = prepare(&cfg, a.seed)?;
    let model = train_model(&cfg, &prep, a.cell, a.sigma, derive_seed(a.seed, 1))?;
    save_checkpoint(&model, &a.out)?;
    eprintln!("saved {} ({} parameters) to {}", a.cell, model.param_count(), a.out.display());
    Ok(())
}

fn estimate_cmd(a: &Estimate) -> Result<()> {
    let cfg = a.cfg.load()?;
    cfg.validate()?;
    let model = load_checkpoint(&a.model)?;
    let prep = prepare(&cfg, a.seed)?;
    if prep.data.input_dim != model.config.input_dim {
        return Err(Error::InvalidArgument(format!(
            "model input_dim {} does not match data dimension {}",
            model.config.input_dim, prep.data.input_dim
        )));
    }
    let sigma = a.sigma.unwrap_or(model.config.noise_sigma);
    let meta = PointMeta {
        model_id: a.model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()),
        cell: model.config.cell.to_string(),
        train_noise_sigma: model.config.noise_sigma,
        seed: a.seed,
    };
    let point = plane_point_for_model(&model, &prep.data, &cfg.spec, sigma, &cfg.plane_config(), &meta, derive_seed(a.seed, 2))?;
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.serialize(&point).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

fn sweep_cmd(a: &Sweep) -> Result<()> {
    let cfg = a.cfg.load()?;
    let out = run_sweep(&cfg, Some(&a.out))?;
    for (id, e) in &out.failures {
        eprintln!("failed {id}: {e}");
    }
    eprintln!("{} rows, {} failures, written to {}", out.rows.len(), out.failures.len(), a.out.display());
    if out.rows.is_empty() && !out.failures.is_empty() {
        return Err(Error::NonFinite("every sweep job failed".into()));
    }
    Ok(())
}

fn classify_cmd(a: &Classify) -> Result<()> {
    let cfg = a.cfg.load()?;
    let (ds, rep) = ingest(&a.data, a.window)?;
    if rep.too_short > 0 {
        eprintln!("dropped {} sequences shorter than {} steps", rep.too_short, a.window);
    }
    let tc = cfg.train_config(derive_seed(a.seed, 1));
    let (cell, dim, hidden, seed) = (a.cell, ds.dim, cfg.hidden_dim, a.seed);
    let make = move |k: usize| RnnModel::new(RnnConfig::new(cell, dim, hidden).with_seed(derive_seed(seed, 10 + k as u64)));
    let models = train_class_models(&ds, a.window, &tc, &make)?;
    let report = classify_split(&models, &ds, Split::Test)?;
    let mut out = std::io::stdout().lock();
    let labels: Vec<&str> = models.iter().map(|(l, _)| l.as_str()).collect();
    writeln!(out, "true\tpredicted\t{}", labels.iter().map(|l| format!("p_{l}")).collect::<Vec<_>>().join("\t"))?;
    for (t, p, post) in &report.predictions {
        let probs: Vec<String> = post.probs.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{t}\t{p}\t{}", probs.join("\t"))?;
    }
    eprintln!("accuracy {:.4} on {} test sequences", report.accuracy, report.predictions.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BhoGen(a) => bho_gen(a),
        Command::GibFrontier(a) => gib_frontier(a),
        Command::Train(a) => train_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Plot(a) => emit_plot(&a.points, a.frontier.as_deref(), &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
