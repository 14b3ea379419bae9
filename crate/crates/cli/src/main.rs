use std::fs;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcadapt::adapt::{adapt_input, argmax, vote, write_trace_csv};
use pcadapt::classifier::PointClassifier;
use pcadapt::corrupt::{corrupt, CorruptionKind, CorruptionSpec};
use pcadapt::denoise::check::{conformance_check, CheckConfig};
use pcadapt::denoise::{serve, Denoiser, EmpiricalPosteriorDenoiser, EmpiricalSource, LineClient};
use pcadapt::geometry::io::{read_cloud, write_cloud};
use pcadapt::geometry::{normalize_for_classifier, normalize_for_diffusion};
use pcadapt::harness::{
    generate_dataset, make_denoiser, resample_to, train_classifier, Benchmark, Dataset, PipelineConfig, Report,
};
use pcadapt::schedule::NoiseSchedule;
use serde::Serialize;

mod error;
use error::{CliError, Result};

#[derive(Parser)]
#[command(name = "pcadapt", version, about = "Diffusion-guided test-time adaptation of point-cloud inputs")]
struct Cli {
    /// Pipeline configuration (JSON). Missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test dataset.
    GenData,
    /// Train the classifier and write `model.json`.
    TrainClassifier(DataArgs),
    /// Corrupt one point cloud.
    Corrupt(CorruptArgs),
    /// Adapt one point cloud and write the votes and per-step traces.
    Adapt(AdaptArgs),
    /// Run the full benchmark and write `report.json`.
    Run(RunArgs),
    /// Export a report as CSV or JSON.
    Report(ReportArgs),
    /// Check an external denoiser server against the in-process reference.
    DenoiserCheck(CheckArgs),
    /// Serve the configured in-process denoiser over stdio or TCP.
    ServeDenoiser(ServeArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `gen-data`; generated from the seed if absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    kind: CorruptionKind,
    #[arg(long, default_value_t = 5)]
    severity: u8,
    /// Output file; defaults to `<out>/<stem>_<kind>_<severity>.xyz`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Classifier checkpoint; when given, predictions are printed.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Classifier checkpoint; trained from the seed if absent.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON written by `run`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Export one row per instance instead of one per corruption.
    #[arg(long)]
    instances: bool,
    /// Output file; stdout if absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Server program to spawn (stdio transport).
    #[arg(long, conflicts_with = "address", required_unless_present = "address")]
    command: Option<String>,
    /// Argument for the server program; repeatable.
    #[arg(long = "arg", allow_hyphen_values = true)]
    args: Vec<String>,
    /// Address of a running TCP server.
    #[arg(long)]
    address: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 100)]
    requests: usize,
    #[arg(long, default_value_t = 1000)]
    fuzz_lines: usize,
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Listen on this TCP address instead of stdio; the bound address is
    /// printed as the first line of stdout.
    #[arg(long)]
    listen: Option<String>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_json(&read_file(path)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn load_data(cfg: &PipelineConfig, args: &DataArgs) -> Result<Dataset> {
    match &args.data {
        Some(dir) => Ok(Dataset::load(dir)?),
        None => Ok(generate_dataset(cfg)?),
    }
}

fn load_model(path: &Path) -> Result<PointClassifier> {
    Ok(PointClassifier::from_json(&read_file(path)?)?)
}

fn source_denoiser(cfg: &PipelineConfig, data: &Dataset) -> Result<(Box<dyn Denoiser>, NoiseSchedule, usize)> {
    let source = Arc::new(EmpiricalSource::normalized(&data.train)?);
    let sched = NoiseSchedule::polynomial(cfg.timesteps)?;
    let n = source.n_points();
    Ok((make_denoiser(&cfg.denoiser, &source, &sched, cfg.seed)?, sched, n))
}

fn out_path(cli: &Cli, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cli.out)?;
    Ok(cli.out.join(name))
}

fn gen_data(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    let data = generate_dataset(cfg)?;
    fs::create_dir_all(&cli.out)?;
    data.save(&cli.out)?;
    println!("wrote {} train and {} test clouds to {}", data.train.len(), data.test.len(), cli.out.display());
    Ok(())
}

fn train(cli: &Cli, cfg: &PipelineConfig, args: &DataArgs) -> Result<()> {
    let data = load_data(cfg, args)?;
    let model = train_classifier(cfg, &data)?;
    let acc = pcadapt::classifier::accuracy(&model, &data.test);
    let path = out_path(cli, "model.json")?;
    fs::write(&path, model.to_json()?)?;
    println!("test accuracy {acc:.4}; wrote {}", path.display());
    Ok(())
}

fn corrupt_cmd(cli: &Cli, cfg: &PipelineConfig, args: &CorruptArgs) -> Result<()> {
    let pc = read_cloud(&args.input)?;
    let spec = CorruptionSpec::new(args.kind, args.severity, cfg.seed)?;
    let out = corrupt(&pc, &spec)?;
    let path = match &args.output {
        Some(p) => p.clone(),
        None => {
            let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
            out_path(cli, &format!("{stem}_{}_{}.xyz", args.kind, args.severity))?
        }
    };
    write_cloud(&path, &out.cloud)?;
    println!("{} -> {} points; wrote {}", pc.len(), out.cloud.len(), path.display());
    Ok(())
}

fn adapt_cmd(cli: &Cli, cfg: &PipelineConfig, args: &AdaptArgs) -> Result<()> {
    let input = read_cloud(&args.input)?;
    let data = load_data(cfg, &args.data)?;
    let (denoiser, sched, n) = source_denoiser(cfg, &data)?;
    let x = resample_to(&input, n, cfg.seed);
    let (xd, frame) = normalize_for_diffusion(&x)?;
    let adapt_cfg = cfg.run.adapt.clone().with_seed(cfg.seed);
    let votes = adapt_input(&xd, denoiser.as_ref(), &sched, &adapt_cfg)?;
    let model = args.model.as_deref().map(load_model).transpose()?;
    let mut probs = Vec::new();
    for (k, v) in votes.iter().enumerate() {
        let back = frame.invert(&v.cloud);
        write_cloud(&out_path(cli, &format!("adapted_{k}.xyz"))?, &back)?;
        write_trace_csv(fs::File::create(out_path(cli, &format!("trace_{k}.csv"))?)?, &v.trace)?;
        if let Some(m) = &model {
            probs.push(m.predict(&normalize_for_classifier(&back)?.0));
        }
        let last = v.trace.last().map_or(f64::NAN, |r| r.loss);
        println!("vote {k}: final loss {last:.6}");
    }
    if let Some(m) = &model {
        let before = argmax(&m.predict(&normalize_for_classifier(&input)?.0));
        let (_, after) = vote(&probs)?;
        let name = |c: usize| data.classes.get(c).cloned().unwrap_or_else(|| c.to_string());
        println!("prediction before {}, after {}", name(before), name(after));
    }
    println!("wrote {} votes to {}", votes.len(), cli.out.display());
    Ok(())
}

fn run_cmd(cli: &Cli, cfg: &PipelineConfig, args: &RunArgs) -> Result<()> {
    let report = if args.data.data.is_none() && args.model.is_none() {
        pcadapt::harness::run_pipeline(cfg)?
    } else {
        let data = load_data(cfg, &args.data)?;
        let model = match &args.model {
            Some(p) => load_model(p)?,
            None => train_classifier(cfg, &data)?,
        };
        let bench = Benchmark::from_dataset(data, model, cfg.timesteps)?;
        let denoiser = bench.make_denoiser(&cfg.denoiser, cfg.seed)?;
        let mut r = bench.run(&cfg.run, denoiser.as_ref(), cfg.seed, cfg.workers)?;
        r.config = Some(cfg.clone());
        r
    };
    let path = out_path(cli, "report.json")?;
    fs::write(&path, report.to_json()?)?;
    println!("clean accuracy {:.4}", report.clean_accuracy);
    for s in &report.results {
        println!(
            "{:<20} unadapted {:.4}  adapted {:.4}  failures {}",
            s.corruption, s.unadapted_accuracy, s.adapted_accuracy, s.failures
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ShiftRow<'a> {
    corruption: &'a str,
    severity: u8,
    instances: usize,
    unadapted_accuracy: f64,
    adapted_accuracy: f64,
    unadapted_macro_recall: Option<f64>,
    adapted_macro_recall: Option<f64>,
    chamfer_before_median: Option<f64>,
    chamfer_after_median: Option<f64>,
    failures: usize,
}

#[derive(Serialize)]
struct InstanceRow<'a> {
    corruption: &'a str,
    index: usize,
    label: usize,
    unadapted_pred: usize,
    adapted_pred: usize,
    chamfer_before: f64,
    chamfer_after: Option<f64>,
    error: Option<&'a str>,
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let report = Report::from_json(&read_file(&args.input)?)?;
    let sink: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    match args.format {
        Format::Json => {
            let mut sink = sink;
            sink.write_all(report.to_json()?.as_bytes())?;
            sink.write_all(b"\n")?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for s in &report.results {
                if args.instances {
                    for r in &s.records {
                        w.serialize(InstanceRow {
                            corruption: &s.corruption,
                            index: r.index,
                            label: r.label,
                            unadapted_pred: r.unadapted_pred,
                            adapted_pred: r.adapted_pred,
                            chamfer_before: r.chamfer_before,
                            chamfer_after: r.chamfer_after,
                            error: r.error.as_deref(),
                        })?;
                    }
                } else {
                    w.serialize(ShiftRow {
                        corruption: &s.corruption,
                        severity: s.severity,
                        instances: s.instances,
                        unadapted_accuracy: s.unadapted_accuracy,
                        adapted_accuracy: s.adapted_accuracy,
                        unadapted_macro_recall: s.unadapted_macro_recall,
                        adapted_macro_recall: s.adapted_macro_recall,
                        chamfer_before_median: s.chamfer_before_median,
                        chamfer_after_median: s.chamfer_after_median,
                        failures: s.failures,
                    })?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn check_cmd(cfg: &PipelineConfig, args: &CheckArgs) -> Result<()> {
    let data = load_data(cfg, &args.data)?;
    let source = Arc::new(EmpiricalSource::normalized(&data.train)?);
    let sched = NoiseSchedule::polynomial(cfg.timesteps)?;
    let reference = EmpiricalPosteriorDenoiser::new(source.clone(), sched.clone());
    let mut client = match (&args.command, &args.address) {
        (Some(cmd), _) => LineClient::spawn(cmd, &args.args)?,
        (None, Some(addr)) => LineClient::connect(addr.as_str())?,
        (None, None) => return Err(CliError::Usage("give --command or --address".into())),
    };
    let check = CheckConfig { requests: args.requests, fuzz_lines: args.fuzz_lines, seed: cfg.seed, timeout_secs: args.timeout };
    let report = conformance_check(&mut client, &reference, &source, &sched, &check)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("{} problem(s), first: {}", report.failures.len(), report.failures[0])))
    }
}

fn serve_cmd(cfg: &PipelineConfig, args: &ServeArgs) -> Result<()> {
    let data = load_data(cfg, &args.data)?;
    let (denoiser, _, _) = source_denoiser(cfg, &data)?;
    let Some(addr) = &args.listen else {
        serve(io::stdin().lock(), io::stdout().lock(), denoiser.as_ref())?;
        return Ok(());
    };
    let denoiser: Arc<dyn Denoiser> = Arc::from(denoiser);
    let listener = TcpListener::bind(addr)?;
    println!("{}", listener.local_addr()?);
    io::stdout().flush()?;
    for stream in listener.incoming() {
        let stream = stream?;
        let denoiser = denoiser.clone();
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(r) => BufReader::new(r),
                Err(e) => return log::warn!("connection setup failed: {e}"),
            };
            if let Err(e) = serve(reader, &stream, denoiser.as_ref()) {
                log::warn!("connection ended: {e}");
            }
        });
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => gen_data(cli, &cfg),
        Command::TrainClassifier(a) => train(cli, &cfg, a),
        Command::Corrupt(a) => corrupt_cmd(cli, &cfg, a),
        Command::Adapt(a) => adapt_cmd(cli, &cfg, a),
        Command::Run(a) => run_cmd(cli, &cfg, a),
        Command::Report(a) => report_cmd(a),
        Command::DenoiserCheck(a) => check_cmd(&cfg, a),
        Command::ServeDenoiser(a) => serve_cmd(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
