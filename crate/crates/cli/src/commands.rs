//! The five subcommands, usable without the binary.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slalom_core::controller::run_closed_loop;
use slalom_core::dataset::{load_dataset, Sample};
use slalom_core::expert::{generate_corpus, reference_path, Corpus, ExecutionConfig, ExpertDriver};
use slalom_core::nn::{CnnModel, NnError};
use slalom_core::profile::SpeedProfile;
use slalom_core::sim::Course;
use slalom_core::trace::{read_trace_csv, rollout, RunTrace};
use slalom_core::training::{evaluate, train_model, FitReport, TrainError};

use crate::config::{ExperimentConfig, TrialConfig};
use crate::plot::{loss_chart, paths_chart, speed_chart, steering_chart, steering_overlay_chart, PlotTrace};
use crate::report::{compare_steering, ClosedLoopMetrics, MetricsReport, OfflineMetrics, TrialMetrics};
use crate::CliError;

/// Mixed into the global seed for the trial speed profiles.
const TRIAL_STREAM: u64 = 0x7a1a_15ed;
/// Mixed into the global seed for the expert comparison run.
const EXPERT_STREAM: u64 = 0xe4be_7c0f;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn load_samples(path: &Path) -> Result<Vec<Sample>, CliError> {
    if !path.is_file() {
        return Err(CliError::Input(format!("dataset {} does not exist", path.display())));
    }
    load_dataset(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<CnnModel, CliError> {
    CnnModel::load(path).map_err(|e| match e {
        NnError::Io(io) => CliError::Input(format!("model {}: {io}", path.display())),
        other => CliError::Input(format!("model {}: {other}", path.display())),
    })
}

/// `count` distinct seeded speed profiles for the closed-loop campaign.
pub fn trial_profiles(seed: u64, cfg: &TrialConfig, count: usize) -> Result<Vec<SpeedProfile>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRIAL_STREAM);
    let mut out: Vec<SpeedProfile> = Vec::with_capacity(count);
    while out.len() < count {
        let p = SpeedProfile::random(&mut rng, cfg.speed_min, cfg.speed_max, cfg.profile_horizon)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// One closed-loop run per profile; trial `i` gets run id `i`.
pub fn campaign(
    model: &CnnModel,
    course: &Course,
    cfg: &ExperimentConfig,
    profiles: &[SpeedProfile],
) -> Result<Vec<RunTrace>, CliError> {
    profiles
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(run_closed_loop(model, course, p, &cfg.gains, &cfg.vehicle, &cfg.rollout, i as u32)?))
        .collect()
}

/// The first driver preset on `profile`, without the training-time setpoint
/// perturbation. Returns the trace and the preset name.
pub fn expert_reference_run(
    cfg: &ExperimentConfig,
    course: &Course,
    profile: &SpeedProfile,
    seed: u64,
) -> Result<(RunTrace, String), CliError> {
    let path = reference_path(course, &cfg.vehicle, &cfg.expert.path)?;
    let preset = cfg.expert.presets.first().ok_or_else(|| CliError::Config("no driver presets".into()))?.clone();
    let name = preset.name.clone();
    let exec = ExecutionConfig { perturbation: 0.0, ..cfg.expert.execution };
    let mut driver =
        ExpertDriver::new(&path, preset, cfg.vehicle, cfg.gains.clone(), exec, seed ^ EXPERT_STREAM);
    let trace = rollout(&mut driver, course, &cfg.vehicle, profile, &cfg.rollout, u32::MAX)?;
    Ok((trace, name))
}

fn plot_trace(label: &str, trace: &RunTrace) -> PlotTrace {
    PlotTrace {
        label: label.to_string(),
        rows: trace
            .records
            .iter()
            .map(|r| [r.t, r.state.x, r.state.y, r.state.speed_kmh(), r.state.wheel_angle])
            .collect(),
    }
}

fn write_trace(trace: &RunTrace, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    write_file(path, buf)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Defaults to the configured trial count.
    pub trials: Option<usize>,
    /// Use this profile for every trial instead of random ones.
    pub profile: Option<SpeedProfile>,
    pub compare_expert: bool,
}

pub struct RunOutcome {
    pub report: MetricsReport,
    pub traces: Vec<RunTrace>,
}

/// A validated configuration with its seed and output directory resolved.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub course: Course,
    pub seed: u64,
    pub out: PathBuf,
}

impl Experiment {
    pub fn new(mut cfg: ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        let seed = cfg.resolve_seed(seed)?;
        let course = cfg.validate()?;
        let out = out.unwrap_or_else(|| cfg.out_dir.clone());
        Ok(Self { cfg, course, seed, out })
    }

    /// Writes `train.csv`, `test.csv` and `manifest.json`.
    pub fn collect(&self) -> Result<Corpus, CliError> {
        create_dir(&self.out)?;
        let c = &self.cfg;
        let corpus = generate_corpus(&c.expert, &self.course, &c.vehicle, &c.gains, &c.rollout, self.seed)?;
        corpus.write(&self.out)?;
        info!(
            "wrote {} train and {} test samples to {}",
            corpus.train.len(),
            corpus.test.len(),
            self.out.display()
        );
        Ok(corpus)
    }

    /// Reads `train.csv` (and `test.csv` when present) from `data`; writes
    /// `model.json`, `fit_report.json` and `loss_curve.svg`.
    pub fn train(&self, data: &Path) -> Result<(CnnModel, FitReport), CliError> {
        if !data.is_dir() {
            return Err(CliError::Input(format!("dataset directory {} does not exist", data.display())));
        }
        let train = load_samples(&data.join("train.csv"))?;
        let test_path = data.join("test.csv");
        let test = if test_path.exists() { load_samples(&test_path)? } else { Vec::new() };
        create_dir(&self.out)?;
        let scale = self.cfg.vehicle.wheel_angle_max;
        let result = train_model(&train, &test, &self.cfg.train, scale, |e| {
            info!("epoch {:>2}: train {:.3e}, validation {:?}, lr {:.1e}", e.epoch, e.train_mse, e.val_mse, e.lr)
        });
        let (model, report) = match result {
            Ok(r) => r,
            Err(e @ TrainError::Nn(NnError::NonFiniteLoss { .. })) => {
                let note = serde_json::json!({ "valid": false, "error": e.to_string() });
                write_file(&self.out.join("fit_report.invalid.json"), serde_json::to_string_pretty(&note)?)?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        model.save(&self.out.join("model.json")).map_err(TrainError::from)?;
        write_file(&self.out.join("fit_report.json"), serde_json::to_string_pretty(&report)?)?;
        loss_chart(&report.history)?.write(&self.out.join("loss_curve.svg"))?;
        info!(
            "train R2 {} / test R2 {} after {:.0} s",
            report.train.r2_display(),
            report.test.map_or("n/a".into(), |m| m.r2_display()),
            report.seconds
        );
        Ok((model, report))
    }

    /// Scores `model` on a dataset file (reported under `split`) or on the
    /// `train.csv`/`test.csv` pair of a directory; writes `eval_report.json`.
    pub fn eval_offline(&self, model: &Path, data: &Path, split_is_train: bool) -> Result<MetricsReport, CliError> {
        let model = load_model(model)?;
        let score = |path: &Path| -> Result<_, CliError> {
            let samples = load_samples(path)?;
            evaluate(&model, &samples).map_err(|e| match e {
                TrainError::FeatureVersion { .. } => CliError::Input(e.to_string()),
                other => other.into(),
            })
        };
        let (train, test) = if data.is_dir() {
            let t = data.join("test.csv");
            (Some(score(&data.join("train.csv"))?), if t.exists() { Some(score(&t)?) } else { None })
        } else if split_is_train {
            (Some(score(data)?), None)
        } else {
            (None, Some(score(data)?))
        };
        let report = MetricsReport {
            seed: Some(self.seed),
            offline: Some(OfflineMetrics { target_scale: model.target_scale, train, test }),
            ..MetricsReport::default()
        };
        report.validate()?;
        create_dir(&self.out)?;
        write_file(&self.out.join("eval_report.json"), serde_json::to_string_pretty(&report)?)?;
        Ok(report)
    }

    /// Closed-loop trials. Writes one CSV per trial under `traces/`, the
    /// paths, speed and steering figures, and `closedloop_report.json`.
    pub fn run_trials(&self, model_path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
        let model = load_model(model_path)?;
        let count = opts.trials.unwrap_or(self.cfg.trials.count);
        if count == 0 {
            return Err(CliError::Usage("--trials must be at least 1".into()));
        }
        let profiles = match &opts.profile {
            Some(p) => {
                p.check_range(self.cfg.trials.speed_min, self.cfg.trials.speed_max)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                vec![p.clone(); count]
            }
            None => trial_profiles(self.seed, &self.cfg.trials, count)?,
        };
        let traces = campaign(&model, &self.course, &self.cfg, &profiles)?;
        let dir = self.out.join("traces");
        create_dir(&dir)?;
        let mut plots = Vec::new();
        let mut per_trial = Vec::new();
        for (trace, profile) in traces.iter().zip(&profiles) {
            let label = format!("trial {:02}", trace.run_id);
            write_trace(trace, &dir.join(format!("trial_{:02}.csv", trace.run_id)))?;
            let m = TrialMetrics::from_trace(trace, profile, &self.course, &self.cfg.vehicle);
            if !m.completed {
                warn!("{label}: {}", m.failure.as_deref().unwrap_or("did not finish"));
            }
            per_trial.push(m);
            if !trace.records.is_empty() {
                plots.push(plot_trace(&label, trace));
            }
        }
        paths_chart(&plots, &self.course)?.write(&self.out.join("paths.svg"))?;
        speed_chart(&plots)?.write(&self.out.join("speed.svg"))?;
        steering_chart(&plots)?.write(&self.out.join("steering.svg"))?;

        let comparison = if opts.compare_expert {
            let (expert, preset) = expert_reference_run(&self.cfg, &self.course, &profiles[0], self.seed)?;
            write_trace(&expert, &dir.join("expert.csv"))?;
            let pair = [plot_trace("pilot (trial 00)", &traces[0]), plot_trace(&format!("expert ({preset})"), &expert)];
            steering_overlay_chart(&pair)?.write(&self.out.join("steering_comparison.svg"))?;
            Some(compare_steering(&traces[0], &expert, &self.course, &profiles[0], &preset))
        } else {
            None
        };

        let report = MetricsReport {
            seed: Some(self.seed),
            offline: None,
            closed_loop: Some(ClosedLoopMetrics::new(per_trial)),
            comparison,
        };
        report.validate()?;
        write_file(&self.out.join("closedloop_report.json"), serde_json::to_string_pretty(&report)?)?;
        Ok(RunOutcome { report, traces })
    }

    /// Figures from trace CSVs: paths with cone sets, speed and steering
    /// over time, and steering along the course when several traces are given.
    pub fn plot(&self, traces: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
        if traces.is_empty() {
            return Err(CliError::Usage("plot needs at least one trace file".into()));
        }
        let mut plots = Vec::with_capacity(traces.len());
        for path in traces {
            let file = fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let rows = read_trace_csv(std::io::BufReader::new(file))
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into());
            plots.push(PlotTrace {
                label,
                rows: rows.iter().map(|r| [r.t, r.x, r.y, r.speed_kmh, r.wheel_angle]).collect(),
            });
        }
        let mut charts = vec![
            ("paths.svg", paths_chart(&plots, &self.course)?),
            ("speed.svg", speed_chart(&plots)?),
            ("steering.svg", steering_chart(&plots)?),
        ];
        if plots.len() > 1 {
            charts.push(("steering_comparison.svg", steering_overlay_chart(&plots)?));
        }
        create_dir(&self.out)?;
        let mut written = Vec::new();
        for (name, chart) in charts {
            let path = self.out.join(name);
            chart.write(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}
