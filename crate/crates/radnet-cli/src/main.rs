//! `radnet`: command-line front end for radial networks.
//!
//! Exit codes: 0 pass, 1 threshold or check failure, 2 usage error, 3 I/O error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use radnet::activation::RadialProfile;
use radnet::approx::{self, TargetFn, Variant};
use radnet::compress::{qr_compress, verify_lossless};
use radnet::experiments::{self, Dataset, ExperimentReport, Status};
use radnet::network::{load_model, read_dataset, save_model, write_dataset, RadialNetwork, Widths};
use radnet::train::{self, Loss, TrainConfig};
use radnet::Error;

#[derive(Parser, Debug)]
#[command(name = "radnet", version, about = "Radial neural networks: compression, training, approximation")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for reports and default outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Override the pass/fail tolerance of a check.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Run experiment seeds concurrently.
    #[arg(long, global = true)]
    parallel: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as CSV.
    GenData {
        #[arg(long, value_enum)]
        target: DataArg,
        /// Output path (default: <out-dir>/<target>.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compress a model with iterated QR decompositions.
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a model by full-batch gradient descent.
    Train(TrainArgs),
    /// Check that a model and its compression agree on probe inputs.
    VerifyThm3 {
        #[arg(long)]
        model: PathBuf,
        /// CSV with input columns; defaults to the gauss1d grid.
        #[arg(long)]
        probes: Option<PathBuf>,
    },
    /// Check that projected GD on the full model tracks GD on the compressed one.
    VerifyThm4 {
        #[arg(long)]
        model: PathBuf,
        /// Training CSV; defaults to the gauss1d grid.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 10, 100])]
        checkpoints: Vec<usize>,
    },
    /// Build a certified universal-approximation network.
    UaBuild {
        #[arg(long, value_enum)]
        variant: VariantArg,
        /// `gauss1d`, `gauss2d`, or a CSV of samples.
        #[arg(long)]
        target: String,
        /// Lipschitz constant for CSV targets.
        #[arg(long)]
        lipschitz: Option<f64>,
        /// Output dimension of a CSV target.
        #[arg(long, default_value_t = 1)]
        outputs: usize,
        #[arg(long)]
        eps: f64,
        /// Model path (default: <out-dir>/ua_<variant>.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Certificate path (default: <out-dir>/ua_<variant>_certificate.json).
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Lossless compression over seeded (1,6,7,1) networks.
    Exp1 {
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
    /// Projected vs. reduced training over seeded (1,6,7,1) networks.
    Exp2 {
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 3000)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
    },
    /// Time to a loss target for the (2,16,64,128,16,2) network and its reduction.
    Exp3 {
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Stop the full network once it is slower than the reduced one.
        #[arg(long)]
        race: bool,
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        #[arg(long, value_enum)]
        output_profile: Option<ProfileArg>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Model to start from.
    #[arg(long, conflicts_with = "widths")]
    model: Option<PathBuf>,
    /// Widths of a freshly initialized model, e.g. `1,6,7,1`.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Profile of a freshly initialized model.
    #[arg(long, value_enum, default_value_t = ProfileArg::ShiftedSigmoid)]
    profile: ProfileArg,
    /// Output-layer profile of a freshly initialized model (default: `--profile`).
    #[arg(long, value_enum)]
    output_profile: Option<ProfileArg>,
    /// Training CSV; defaults to the gauss1d grid.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Sse)]
    loss: LossArg,
    /// Zero the interpolating blocks after every step.
    #[arg(long)]
    project: bool,
    #[arg(long)]
    target_loss: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DataArg {
    Gauss1d,
    Gauss2d,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    Thm1,
    Thm2,
    Maxnm1,
    Maxnm,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProfileArg {
    StepRelu,
    Squashing,
    ShiftedSigmoid,
    Sigmoid,
    Identity,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LossArg {
    Sse,
    MeanSse,
    Mse,
}

/// A failed command, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Parse { .. } | Error::UnsupportedVersion { .. } => 3,
            Error::Divergence { .. } | Error::Consistency(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<bool, Failure>;

fn create(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn open(path: &Path) -> std::result::Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| io_failure(path, e))
}

fn write_json(path: &Path, value: &Value) -> std::result::Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
}

fn write_text(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(path, e))
}

fn read_model(path: &Path) -> std::result::Result<RadialNetwork, Failure> {
    load_model(open(path)?).map_err(|e| match e {
        Error::Parse { location, message } => Failure {
            code: 3,
            message: format!("{}: parse error at {location}: {message}", path.display()),
        },
        other => other.into(),
    })
}

fn write_model(path: &Path, net: &RadialNetwork) -> std::result::Result<(), Failure> {
    let mut w = create(path)?;
    save_model(net, &mut w)?;
    w.flush().map_err(|e| io_failure(path, e))
}

fn read_batch(path: Option<&Path>, n_in: usize, n_out: usize) -> std::result::Result<train::Batch, Failure> {
    match path {
        Some(p) => read_dataset(open(p)?, n_in, n_out).map_err(|e| match e {
            Error::Parse { location, message } => Failure {
                code: 3,
                message: format!("{}: parse error at {location}: {message}", p.display()),
            },
            other => other.into(),
        }),
        None => {
            if (n_in, n_out) != (1, 1) {
                return Err(usage("the default gauss1d data needs a 1→1 model; pass --data"));
            }
            Ok(experiments::gauss1d_batch())
        }
    }
}

fn profile_of(p: ProfileArg) -> RadialProfile {
    match p {
        ProfileArg::StepRelu => RadialProfile::StepRelu,
        ProfileArg::Squashing => RadialProfile::Squashing,
        ProfileArg::ShiftedSigmoid => experiments::EXPERIMENT_PROFILE,
        ProfileArg::Sigmoid => RadialProfile::Sigmoid,
        ProfileArg::Identity => RadialProfile::Identity,
    }
}

fn check_tolerance(t: f64) -> std::result::Result<f64, Failure> {
    if t.is_finite() && t >= 0.0 {
        Ok(t)
    } else {
        Err(usage(format!("--tolerance must be finite and non-negative, got {t}")))
    }
}

fn emit_report(cli: &Cli, report: &mut ExperimentReport) -> CmdResult {
    let json_path = cli.out_dir.join(format!("{}.json", report.name));
    let csv_path = cli.out_dir.join(format!("{}_runs.csv", report.name));
    report.artifacts = vec![json_path.display().to_string(), csv_path.display().to_string()];
    write_text(&csv_path, &report.runs_csv())?;
    let value = serde_json::to_value(&*report).map_err(|e| usage(e.to_string()))?;
    write_json(&json_path, &value)?;
    println!("{}: {:?}", report.name, report.status);
    for (k, v) in &report.metrics {
        println!("  {k} = {v:e}");
    }
    for (k, v) in &report.timings {
        println!("  {k} = {v:.3} (wall-clock)");
    }
    println!("  report: {}", json_path.display());
    match report.status {
        Status::Pass => Ok(true),
        Status::Fail => Ok(false),
        Status::Inconclusive => Err(Failure {
            code: 1,
            message: format!("{}: inconclusive", report.name),
        }),
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::GenData { target, out } => {
            let (ds, name) = match target {
                DataArg::Gauss1d => (Dataset::Gauss1d, "gauss1d"),
                DataArg::Gauss2d => (Dataset::Gauss2d, "gauss2d"),
            };
            let path = out.clone().unwrap_or_else(|| cli.out_dir.join(format!("{name}.csv")));
            let batch = ds.batch();
            let mut w = create(&path)?;
            write_dataset(&mut w, &batch)?;
            w.flush().map_err(|e| io_failure(&path, e))?;
            println!("wrote {} rows to {}", batch.len(), path.display());
            Ok(true)
        }
        Command::Compress { input, out, report } => {
            let net = read_model(input)?;
            let res = qr_compress(&net)?;
            write_model(out, &res.reduced)?;
            let rep = json!({
                "widths": net.widths().dims(),
                "reduced_widths": res.reduced.widths().dims(),
                "param_count": net.widths().param_count(),
                "param_count_reduced": res.reduced.widths().param_count(),
                "certificate_orthogonality_defect": res.certificate.orthogonality_defect(),
                "input": input.display().to_string(),
                "output": out.display().to_string(),
            });
            if let Some(p) = report {
                write_json(p, &rep)?;
            }
            println!("{} -> {}", net.widths(), res.reduced.widths());
            Ok(true)
        }
        Command::Train(args) => cmd_train(cli, args),
        Command::VerifyThm3 { model, probes } => {
            let net = read_model(model)?;
            let n_in = net.widths().input();
            let inputs = match probes {
                Some(p) => read_probes(p, n_in)?,
                None if n_in == 1 => experiments::gauss1d_batch().inputs,
                None => return Err(usage("the default gauss1d probes need a model with one input; pass --probes")),
            };
            let res = qr_compress(&net)?;
            let rep = verify_lossless(&net, &res, &inputs)?;
            let tol = check_tolerance(cli.tolerance.unwrap_or(1e-6))?;
            let passed = rep.max_abs_err <= tol;
            let value = json!({
                "max_abs_err": rep.max_abs_err,
                "mean_abs_err": rep.mean_abs_err,
                "probes": rep.probes,
                "reduced_widths": res.reduced.widths().dims(),
                "tolerance": tol,
                "passed": passed,
            });
            write_json(&cli.out_dir.join("verify_thm3.json"), &value)?;
            println!("max_abs_err = {:e}", rep.max_abs_err);
            println!("mean_abs_err = {:e}", rep.mean_abs_err);
            Ok(passed)
        }
        Command::VerifyThm4 {
            model,
            data,
            steps,
            lr,
            checkpoints,
        } => {
            let net = read_model(model)?;
            let batch = read_batch(data.as_deref(), net.widths().input(), net.widths().output())?;
            let rep = train::verify_thm4(&net, &batch, *lr, *steps, checkpoints)?;
            let tol = check_tolerance(cli.tolerance.unwrap_or(1e-6))?;
            let passed = rep.loss_gap <= tol && rep.checkpoints.iter().all(|c| c.projected_vs_reduced <= tol);
            let mut value = serde_json::to_value(&rep).map_err(|e| usage(e.to_string()))?;
            value["tolerance"] = json!(tol);
            value["passed"] = json!(passed);
            write_json(&cli.out_dir.join("verify_thm4.json"), &value)?;
            println!("loss_gap = {:e}", rep.loss_gap);
            println!("max_projected_vs_reduced = {:e}", rep.max_projected_vs_reduced);
            if let Some(e) = rep.max_gd_equivariance {
                println!("max_gd_equivariance = {e:e}");
            }
            Ok(passed)
        }
        Command::UaBuild {
            variant,
            target,
            lipschitz,
            outputs,
            eps,
            out,
            certificate,
        } => {
            let f = match target.as_str() {
                "gauss1d" | "gauss2d" => TargetFn::builtin(target)?,
                path => {
                    let r = lipschitz.ok_or_else(|| usage("CSV targets need --lipschitz"))?;
                    let p = Path::new(path);
                    let n_in = csv_columns(p)?
                        .checked_sub(*outputs)
                        .filter(|&n| n > 0)
                        .ok_or_else(|| usage("CSV has too few columns for --outputs"))?;
                    let batch = read_batch(Some(p), n_in, *outputs)?;
                    TargetFn::from_samples(path, &batch, r)?
                }
            };
            let variant = match variant {
                VariantArg::Thm1 => Variant::Thm1,
                VariantArg::Thm2 => Variant::Thm2,
                VariantArg::Maxnm1 => Variant::Maxnm1,
                VariantArg::Maxnm => Variant::Maxnm,
            };
            let (built, cover) = approx::build(variant, &f, *eps, cli.seed)?;
            let cert = approx::certify_on_cover(&built.net, &f, &cover, variant);
            let cert = approx::Certificate {
                passed: cert.sup_err_inside < *eps && cert.sup_err_outside.is_none_or(|e| e < *eps),
                ..cert
            };
            let model_path = out.clone().unwrap_or_else(|| cli.out_dir.join(format!("ua_{variant}.json")));
            let cert_path = certificate
                .clone()
                .unwrap_or_else(|| cli.out_dir.join(format!("ua_{variant}_certificate.json")));
            write_model(&model_path, &built.net)?;
            let value = json!({
                "variant": variant,
                "target": f.name,
                "eps": eps,
                "N_or_M": built.balls,
                "widths": built.net.widths().dims(),
                "sup_err": cert.sup_err_inside,
                "sup_err_outside": cert.sup_err_outside,
                "inside_points": cert.inside_points,
                "outside_points": cert.outside_points,
                "bound": cover.bound,
                "scale": cover.scale,
                "passed": cert.passed,
                "sampling": "grid certification; outside-K checks on the doubled box only",
                "model": model_path.display().to_string(),
            });
            write_json(&cert_path, &value)?;
            println!("{variant}: {} balls, widths {}", built.balls, built.net.widths());
            println!("sup_err = {:e}", cert.sup_err_inside);
            if let Some(e) = cert.sup_err_outside {
                println!("sup_err_outside = {e:e}");
            }
            Ok(cert.passed)
        }
        Command::Exp1 { runs } => {
            let mut cfg = experiments::Exp1Config {
                seed: cli.seed,
                runs: *runs,
                parallel: cli.parallel,
                ..Default::default()
            };
            if let Some(t) = cli.tolerance {
                cfg.tolerance = check_tolerance(t)?;
            }
            emit_report(cli, &mut experiments::exp1(&cfg)?)
        }
        Command::Exp2 { runs, epochs, lr } => {
            let mut cfg = experiments::Exp2Config {
                seed: cli.seed,
                runs: *runs,
                epochs: *epochs,
                learning_rate: *lr,
                parallel: cli.parallel,
                ..Default::default()
            };
            if let Some(t) = cli.tolerance {
                cfg.tolerance = check_tolerance(t)?;
            }
            emit_report(cli, &mut experiments::exp2(&cfg)?)
        }
        Command::Exp3 {
            runs,
            lr,
            max_epochs,
            race,
            profile,
            output_profile,
        } => {
            let d = experiments::Exp3Config::default();
            let cfg = experiments::Exp3Config {
                seed: cli.seed,
                profile: profile.map_or(d.profile, profile_of),
                output_profile: output_profile.map_or(d.output_profile, profile_of),
                runs: *runs,
                learning_rate: lr.unwrap_or(d.learning_rate),
                max_epochs: max_epochs.unwrap_or(d.max_epochs),
                race: *race,
                ..d
            };
            emit_report(cli, &mut experiments::exp3(&cfg)?)
        }
    }
}

fn csv_columns(path: &Path) -> std::result::Result<usize, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let header = text
        .lines()
        .next()
        .ok_or_else(|| Failure {
            code: 3,
            message: format!("{}: empty file", path.display()),
        })?;
    Ok(header.split(',').count())
}

fn read_probes(path: &Path, n_in: usize) -> std::result::Result<Vec<Vec<f64>>, Failure> {
    let cols = csv_columns(path)?;
    if cols < n_in {
        return Err(usage(format!(
            "{} has {cols} columns, the model needs {n_in} inputs",
            path.display()
        )));
    }
    Ok(read_batch(Some(path), n_in, cols - n_in)?.inputs)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CmdResult {
    let net = match (&args.model, &args.widths) {
        (Some(p), _) => read_model(p)?,
        (None, Some(w)) => {
            let widths = Widths::new(w.clone())?;
            let mut profiles = RadialNetwork::uniform_profiles(&widths, profile_of(args.profile));
            if let (Some(p), Some(last)) = (args.output_profile, profiles.last_mut()) {
                *last = profile_of(p);
            }
            train::init(widths, profiles, cli.seed)?
        }
        (None, None) => return Err(usage("pass --model or --widths")),
    };
    let batch = read_batch(args.data.as_deref(), net.widths().input(), net.widths().output())?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: cli.seed,
        loss: match args.loss {
            LossArg::Sse => Loss::Sse,
            LossArg::MeanSse => Loss::MeanSse,
            LossArg::Mse => Loss::Mse,
        },
        project: args.project,
        target_loss: args.target_loss,
    };
    let outcome = train::train(&net, &batch, &cfg)?;
    let model_path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("trained.json"));
    write_model(&model_path, &outcome.net)?;
    let history_path = cli.out_dir.join("train_history.csv");
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.history.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_text(&history_path, &csv)?;
    let value = json!({
        "config": cfg,
        "widths": net.widths().dims(),
        "epochs_run": outcome.history.len(),
        "final_loss": outcome.final_loss,
        "reached_target": outcome.reached_target,
        "model": model_path.display().to_string(),
        "history": history_path.display().to_string(),
    });
    write_json(&cli.out_dir.join("train.json"), &value)?;
    println!("final_loss = {:e} after {} epochs", outcome.final_loss, outcome.history.len());
    Ok(outcome.reached_target != Some(false))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::from(1)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
