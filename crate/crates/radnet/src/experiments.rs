//! Reproducible experiment pipelines.
//!
//! Each experiment takes a configuration record, runs a fixed number of
//! seeded repetitions, and returns an [`ExperimentReport`] whose `metrics`
//! depend only on the configuration. Wall-clock measurements are kept apart
//! in `timings`.
//!
//! | experiment | claim checked |
//! |---|---|
//! | [`exp1`] | compression leaves the feedforward function unchanged |
//! | [`exp2`] | projected GD on the full net tracks GD on the reduced net |
//! | [`exp3`] | the reduced net reaches a loss target sooner |

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::RadialProfile;
use crate::compress::{qr_compress, verify_lossless};
use crate::error::{Error, Result};
use crate::network::{RadialNetwork, Widths};
use crate::train::{init, loss_and_grad, verify_thm4_projected, Batch, Loss};

/// Profile used by the experiment networks: `h(r) = σ(r − 1/2)`.
pub const EXPERIMENT_PROFILE: RadialProfile = RadialProfile::ShiftedSigmoid { offset: 0.5 };

/// 121 samples `x_j = −3 + j/20` of `e^{−x²}`.
pub fn gauss1d_batch() -> Batch {
    let xs: Vec<Vec<f64>> = (0..121).map(|j| vec![-3.0 + j as f64 / 20.0]).collect();
    let ys = xs.iter().map(|x| vec![(-x[0] * x[0]).exp()]).collect();
    Batch::new(xs, ys).expect("finite grid")
}

/// 121² samples `(−3 + j/20, −3 + k/20)` of `(e^{−t₁²}, e^{−t₂²})`.
pub fn gauss2d_batch() -> Batch {
    let mut xs = Vec::with_capacity(121 * 121);
    for j in 0..121 {
        for k in 0..121 {
            xs.push(vec![-3.0 + j as f64 / 20.0, -3.0 + k as f64 / 20.0]);
        }
    }
    let ys = xs
        .iter()
        .map(|x| vec![(-x[0] * x[0]).exp(), (-x[1] * x[1]).exp()])
        .collect();
    Batch::new(xs, ys).expect("finite grid")
}

/// Named synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Gauss1d,
    Gauss2d,
}

impl Dataset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gauss1d" => Ok(Self::Gauss1d),
            "gauss2d" => Ok(Self::Gauss2d),
            other => Err(Error::Unsupported(format!(
                "unknown dataset `{other}` (known: gauss1d, gauss2d)"
            ))),
        }
    }

    pub fn batch(self) -> Batch {
        match self {
            Self::Gauss1d => gauss1d_batch(),
            Self::Gauss2d => gauss2d_batch(),
        }
    }
}

/// Outcome of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// Result record shared by all experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub status: Status,
    /// Aggregate metrics; a deterministic function of the configuration.
    pub metrics: BTreeMap<String, f64>,
    /// Per-seed metrics, in seed order.
    pub runs: Vec<BTreeMap<String, f64>>,
    /// Non-numeric facts about the run, such as reduced widths.
    pub details: BTreeMap<String, serde_json::Value>,
    /// Files written while producing the report.
    pub artifacts: Vec<String>,
    /// Resolved configuration.
    pub config: serde_json::Value,
    /// Wall-clock seconds; informational and not reproducible.
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    fn new(name: &str, config: &impl Serialize) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Pass,
            metrics: BTreeMap::new(),
            runs: Vec::new(),
            details: BTreeMap::new(),
            artifacts: Vec::new(),
            config: serde_json::to_value(config).expect("configs serialize"),
            timings: BTreeMap::new(),
        }
    }

    /// Per-seed metrics as CSV, one row per run with a header.
    pub fn runs_csv(&self) -> String {
        let keys: Vec<&String> = self.runs.first().map(|r| r.keys().collect()).unwrap_or_default();
        let mut out = keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",");
        out.push('\n');
        for r in &self.runs {
            let row: Vec<String> = keys.iter().map(|k| r[*k].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_seeds<T, F>(seeds: Vec<u64>, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if parallel {
        seeds.into_par_iter().map(&f).collect()
    } else {
        seeds.into_iter().map(f).collect()
    }
}

fn summarize(report: &mut ExperimentReport, key: &str, values: &[f64]) {
    let (mean, std) = mean_std(values);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    report.metrics.insert(format!("{key}_mean"), mean);
    report.metrics.insert(format!("{key}_std"), std);
    report.metrics.insert(format!("{key}_max"), max);
}

fn seeds(base: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|k| base.wrapping_add(k)).collect()
}

/// Lossless-compression experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Config {
    pub seed: u64,
    pub runs: usize,
    pub widths: Vec<usize>,
    pub profile: RadialProfile,
    pub dataset: Dataset,
    pub tolerance: f64,
    pub parallel: bool,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 10,
            widths: vec![1, 6, 7, 1],
            profile: EXPERIMENT_PROFILE,
            dataset: Dataset::Gauss1d,
            tolerance: 1e-6,
            parallel: false,
        }
    }
}

/// Compresses seeded networks and compares both feedforward functions on the dataset inputs.
pub fn exp1(cfg: &Exp1Config) -> Result<ExperimentReport> {
    let widths = Widths::new(cfg.widths.clone())?;
    let probes = cfg.dataset.batch().inputs;
    let mut report = ExperimentReport::new("exp1", cfg);
    let started = Instant::now();
    let results = run_seeds(seeds(cfg.seed, cfg.runs), cfg.parallel, |seed| {
        let net = init(widths.clone(), RadialNetwork::uniform_profiles(&widths, cfg.profile), seed)?;
        let res = qr_compress(&net)?;
        let rep = verify_lossless(&net, &res, &probes)?;
        Ok((seed, rep, res.reduced.widths().clone()))
    })?;
    report.timings.insert("total_seconds".into(), started.elapsed().as_secs_f64());
    let red = widths.reduced();
    report.details.insert("widths".into(), serde_json::json!(widths.dims()));
    report.details.insert("reduced_widths".into(), serde_json::json!(red.dims()));
    report.details.insert("dataset".into(), serde_json::json!(cfg.dataset));
    let mut means = Vec::new();
    for (seed, rep, reduced) in &results {
        if reduced != &red {
            return Err(Error::Consistency(format!("seed {seed} reduced to {reduced}, expected {red}")));
        }
        means.push(rep.mean_abs_err);
        report.runs.push(BTreeMap::from([
            ("seed".to_string(), *seed as f64),
            ("mean_abs_err".to_string(), rep.mean_abs_err),
            ("max_abs_err".to_string(), rep.max_abs_err),
        ]));
    }
    summarize(&mut report, "mean_abs_err", &means);
    report.metrics.insert("param_count".into(), widths.param_count() as f64);
    report.metrics.insert("param_count_reduced".into(), red.param_count() as f64);
    if means.iter().any(|m| m.is_nan() || *m > cfg.tolerance) {
        report.status = Status::Fail;
    }
    Ok(report)
}

/// Training-equivalence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Config {
    pub seed: u64,
    pub runs: usize,
    pub widths: Vec<usize>,
    pub profile: RadialProfile,
    pub dataset: Dataset,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Steps at which the parameter-level identity is reported.
    pub checkpoints: Vec<usize>,
    pub tolerance: f64,
    pub parallel: bool,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 10,
            widths: vec![1, 6, 7, 1],
            profile: EXPERIMENT_PROFILE,
            dataset: Dataset::Gauss1d,
            epochs: 3000,
            learning_rate: 0.01,
            checkpoints: vec![1, 10, 100],
            tolerance: 1e-6,
            parallel: false,
        }
    }
}

/// Trains the transformed full network by projected GD and the reduced network by GD.
pub fn exp2(cfg: &Exp2Config) -> Result<ExperimentReport> {
    let widths = Widths::new(cfg.widths.clone())?;
    let batch = cfg.dataset.batch();
    let mut report = ExperimentReport::new("exp2", cfg);
    let started = Instant::now();
    let results = run_seeds(seeds(cfg.seed, cfg.runs), cfg.parallel, |seed| {
        let net = init(widths.clone(), RadialNetwork::uniform_profiles(&widths, cfg.profile), seed)?;
        let rep = verify_thm4_projected(&net, &batch, cfg.learning_rate, cfg.epochs, &cfg.checkpoints)?;
        Ok((seed, rep))
    })?;
    report.timings.insert("total_seconds".into(), started.elapsed().as_secs_f64());
    report.details.insert("widths".into(), serde_json::json!(widths.dims()));
    report.details.insert("reduced_widths".into(), serde_json::json!(widths.reduced().dims()));
    report.details.insert("dataset".into(), serde_json::json!(cfg.dataset));
    report.details.insert("loss".into(), serde_json::json!(Loss::Sse));
    let mut gaps = Vec::new();
    let mut param_gaps = Vec::new();
    let mut ok = true;
    for (seed, rep) in &results {
        let mut row = BTreeMap::from([
            ("seed".to_string(), *seed as f64),
            ("loss_projected".to_string(), rep.loss_projected),
            ("loss_reduced".to_string(), rep.loss_reduced),
            ("loss_gap".to_string(), rep.loss_gap),
            ("max_param_gap".to_string(), rep.max_projected_vs_reduced),
        ]);
        for cp in &rep.checkpoints {
            row.insert(format!("param_gap_step_{}", cp.step), cp.projected_vs_reduced);
            ok &= cp.projected_vs_reduced <= cfg.tolerance;
        }
        if rep.checkpoints.len() != cfg.checkpoints.iter().filter(|&&k| k <= cfg.epochs).count() {
            return Err(Error::Consistency("missing checkpoints".into()));
        }
        ok &= rep.loss_gap <= cfg.tolerance;
        gaps.push(rep.loss_gap);
        param_gaps.push(rep.max_projected_vs_reduced);
        report.runs.push(row);
    }
    summarize(&mut report, "loss_gap", &gaps);
    summarize(&mut report, "max_param_gap", &param_gaps);
    if !ok {
        report.status = Status::Fail;
    }
    Ok(report)
}

/// Training-speed experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp3Config {
    pub seed: u64,
    pub runs: usize,
    pub widths: Vec<usize>,
    pub profile: RadialProfile,
    pub output_profile: RadialProfile,
    pub dataset: Dataset,
    pub loss: Loss,
    pub target_loss: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop the full network once it has used more time than the reduced one.
    pub race: bool,
}

impl Default for Exp3Config {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 1,
            widths: vec![2, 16, 64, 128, 16, 2],
            profile: EXPERIMENT_PROFILE,
            output_profile: RadialProfile::Identity,
            dataset: Dataset::Gauss2d,
            loss: Loss::Mse,
            target_loss: 0.01,
            learning_rate: 0.4,
            max_epochs: 20_000,
            race: false,
        }
    }
}

/// Progress of one timed training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedRun {
    pub epochs: usize,
    pub final_loss: f64,
    pub reached: bool,
    pub seconds: f64,
}

/// Plain full-batch GD until the loss reaches `target`, `max_epochs` pass,
/// or `deadline` seconds elapse.
pub fn timed_training(
    net: &RadialNetwork,
    batch: &Batch,
    loss: Loss,
    eta: f64,
    target: f64,
    max_epochs: usize,
    deadline: Option<f64>,
) -> Result<TimedRun> {
    let start = Instant::now();
    let mut cur = net.clone();
    let mut epochs = 0;
    loop {
        let (l, g) = loss_and_grad(&cur, batch, loss)?;
        if !l.is_finite() {
            return Err(Error::Divergence { epoch: epochs, loss: l });
        }
        let seconds = start.elapsed().as_secs_f64();
        if l <= target || epochs == max_epochs || deadline.is_some_and(|d| seconds > d) {
            return Ok(TimedRun {
                epochs,
                final_loss: l,
                reached: l <= target,
                seconds,
            });
        }
        cur = cur.with_params(cur.params().axpy(-eta, &g))?;
        epochs += 1;
    }
}

/// Trains a full network and its QR reduction from the same seed to a loss target.
///
/// Epoch counts and losses are reproducible; wall-clock times are not. With
/// `race` set, the full run is cut off as soon as it has used more time than
/// the reduced run needed, which settles the comparison early.
pub fn exp3(cfg: &Exp3Config) -> Result<ExperimentReport> {
    let widths = Widths::new(cfg.widths.clone())?;
    let batch = cfg.dataset.batch();
    let mut profiles = RadialNetwork::uniform_profiles(&widths, cfg.profile);
    *profiles.last_mut().expect("depth ≥ 1") = cfg.output_profile;
    let mut report = ExperimentReport::new("exp3", cfg);
    report.details.insert("widths".into(), serde_json::json!(widths.dims()));
    report.details.insert("reduced_widths".into(), serde_json::json!(widths.reduced().dims()));

    let mut status = Status::Pass;
    let mut ratios = Vec::new();
    for seed in seeds(cfg.seed, cfg.runs) {
        let net = init(widths.clone(), profiles.clone(), seed)?;
        let reduced = qr_compress(&net)?.reduced;
        let red = timed_training(&reduced, &batch, cfg.loss, cfg.learning_rate, cfg.target_loss, cfg.max_epochs, None)?;
        let deadline = (cfg.race && red.reached).then_some(red.seconds);
        let full = timed_training(&net, &batch, cfg.loss, cfg.learning_rate, cfg.target_loss, cfg.max_epochs, deadline)?;

        let row = BTreeMap::from([
            ("seed".to_string(), seed as f64),
            ("epochs_reduced".to_string(), red.epochs as f64),
            ("loss_reduced".to_string(), red.final_loss),
            ("reached_reduced".to_string(), red.reached as u8 as f64),
        ]);
        report.timings.insert(format!("seconds_reduced_seed_{seed}"), red.seconds);
        report.timings.insert(format!("seconds_full_seed_{seed}"), full.seconds);
        let mut row = row;
        if !cfg.race {
            row.insert("epochs_full".into(), full.epochs as f64);
            row.insert("loss_full".into(), full.final_loss);
            row.insert("reached_full".into(), full.reached as u8 as f64);
        }
        report.runs.push(row);

        if !red.reached {
            status = Status::Inconclusive;
            continue;
        }
        // Without reaching the target, the full run's time is a lower bound,
        // which still decides the comparison once it exceeds the reduced time.
        if !full.reached && full.seconds <= red.seconds {
            status = Status::Inconclusive;
            continue;
        }
        let ratio = full.seconds / red.seconds;
        ratios.push(ratio);
        if status == Status::Pass && ratio <= 1.0 {
            status = Status::Fail;
        }
        report
            .timings
            .insert(format!("speedup_seed_{seed}{}", if full.reached { "" } else { "_lower_bound" }), ratio);
    }
    if !ratios.is_empty() {
        let (mean, _) = mean_std(&ratios);
        report.timings.insert("speedup_mean".into(), mean);
    }
    report.status = status;
    Ok(report)
}
