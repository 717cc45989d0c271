//! Executes an [`ExperimentConfig`] and writes its artifacts.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.json  run.json  INCOMPLETE (only while running)
//! metrics.csv  losses.csv  aggregate.csv  average.csv  average_aggregate.csv
//! seed_<s>/heatmap.csv  seed_<s>/sigma.bin  seed_<s>/coresets.{csv,bin}
//! ```
//!
//! Linear-regression runs write `linreg_summary.csv`, `step_norms.csv`,
//! `linreg_aggregate.csv` and per-seed `trajectory.csv` / `msegrid.csv`.
//! Everything except `run.json` is a pure function of the config.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use vcl_core::bnn::InitConfig;
use vcl_core::continual::{
    linreg_trajectory, parameter_layers, run_continual, variance_heatmap, write_sigma_snapshots,
    CoresetConfig, LinregConfig, MseGridSpec, RunConfig, RunMetrics, TaskPair, TrainConfig,
    Trajectory,
};
use vcl_core::coresets::{write_coresets_bin, write_coresets_csv, SteinConfig};
use vcl_core::math::{mean, sample_std, Rng};
use vcl_core::optimizers::AdamConfig;
use vcl_core::tasks::{
    linreg_sequence, load_mnist_split, permuted_tasks, split_tasks, Split, TaskData,
    DEFAULT_SPLIT_PAIRS,
};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::CliError;

pub const MARKER: &str = "INCOMPLETE";
pub const METRICS_HEADER: &str = "seed,task_trained,task_eval,accuracy";
pub const LOSSES_HEADER: &str = "seed,task,epoch,loss";
pub const AGGREGATE_HEADER: &str = "task_trained,task_eval,mean,std,n_seeds";
pub const AVERAGE_HEADER: &str = "seed,task_trained,average_accuracy";
pub const AVERAGE_AGGREGATE_HEADER: &str = "task_trained,mean,std,n_seeds";
pub const HEATMAP_HEADER: &str = "param_index,layer,task,delta_sigma";
pub const TRAJECTORY_HEADER: &str = "config,step,mu_w,mu_b";
pub const MSEGRID_HEADER: &str = "mu_w,mu_b,avg_mse";
pub const LINREG_SUMMARY_HEADER: &str = "seed,config,task_trained,seen_task_mse";
pub const STEP_NORMS_HEADER: &str = "seed,config,step_norm_std";
pub const LINREG_AGGREGATE_HEADER: &str = "config,task_trained,mean,std,n_seeds";

pub const DATA_ROOT_ENV: &str = "VCL_DATA_ROOT";
pub const OUTPUT_ROOT_ENV: &str = "VCL_OUTPUT_ROOT";

/// Base directories that relative dataset and output paths are resolved against.
#[derive(Debug, Clone, Default)]
pub struct Roots {
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Roots {
    pub fn from_env() -> Self {
        let var = |name| {
            std::env::var_os(name)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        };
        Self {
            data: var(DATA_ROOT_ENV),
            output: var(OUTPUT_ROOT_ENV),
        }
    }

    fn resolve(root: Option<&PathBuf>, path: &Path) -> PathBuf {
        match root {
            Some(r) if path.is_relative() => r.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn data_path(&self, path: &Path) -> PathBuf {
        Self::resolve(self.data.as_ref(), path)
    }

    pub fn output_path(&self, path: &Path) -> PathBuf {
        Self::resolve(self.output.as_ref(), path)
    }
}

/// The full train and test sets an experiment draws its tasks from.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: TaskData,
    pub test: TaskData,
}

pub fn load_datasets(config: &ExperimentConfig, roots: &Roots) -> Result<Datasets, CliError> {
    let dir = match config.experiment {
        ExperimentKind::Permuted | ExperimentKind::SplitMnist => &config.data.mnist_dir,
        ExperimentKind::SplitFashion => &config.data.fashion_dir,
        ExperimentKind::Linreg => {
            return Err(CliError::Data(
                "linear regression has no dataset files".into(),
            ))
        }
    };
    let dir = roots.data_path(dir);
    let load = |split| {
        load_mnist_split(&dir, split).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
    };
    Ok(Datasets {
        train: load(Split::Train)?,
        test: load(Split::Test)?,
    })
}

/// Task stream for one seed. The training subsample and the pixel
/// permutations are both drawn from `seed`; test sets are never subsampled.
pub fn build_stream(
    config: &ExperimentConfig,
    data: &Datasets,
    seed: u64,
) -> Result<Vec<TaskPair>, CliError> {
    let (train, test) = match config.experiment {
        ExperimentKind::Permuted => {
            let train = match config.train_per_task {
                Some(n) if n < data.train.len() => data
                    .train
                    .subsample(n, &mut Rng::derived(seed, "subsample", 0))?,
                _ => data.train.clone(),
            };
            (
                permuted_tasks(&train, config.n_tasks, seed)?,
                permuted_tasks(&data.test, config.n_tasks, seed)?,
            )
        }
        ExperimentKind::SplitMnist | ExperimentKind::SplitFashion => {
            let pairs = &DEFAULT_SPLIT_PAIRS[..config.n_tasks];
            let train = split_tasks(&data.train, pairs)?
                .into_iter()
                .enumerate()
                .map(|(t, task)| match config.train_per_task {
                    Some(n) if n < task.len() => {
                        task.subsample(n, &mut Rng::derived(seed, "subsample", t as u64))
                    }
                    _ => Ok(task),
                })
                .collect::<Result<Vec<_>, _>>()?;
            (train, split_tasks(&data.test, pairs)?)
        }
        ExperimentKind::Linreg => {
            return Err(CliError::Data(
                "linear regression has no task stream".into(),
            ))
        }
    };
    Ok(train
        .into_iter()
        .zip(test)
        .map(|(train, test)| TaskPair { train, test })
        .collect())
}

pub fn run_config(config: &ExperimentConfig) -> RunConfig {
    let c = &config.coreset;
    RunConfig {
        hidden: config.hidden.clone(),
        init: InitConfig {
            mean_std: config.init_mean_std,
            sigma0: config.sigma0,
        },
        train: train_config(config),
        finetune_epochs: config.finetune_epochs,
        coreset: c.method.method().map(|method| CoresetConfig {
            method,
            size: c.size,
            usage: c.usage,
            stein: SteinConfig {
                steps: c.stein_steps,
                step_size: c.stein_step_size,
            },
        }),
        eval_samples: config.eval_samples,
    }
}

fn train_config(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        optimizer: config.optimizer,
        adam: AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        epochs: config.epochs,
        batch_size: config.batch_size,
        mc_samples: config.mc_samples,
    }
}

pub fn linreg_config(config: &ExperimentConfig) -> LinregConfig {
    let l = &config.linreg;
    LinregConfig {
        sgd_lr: l.sgd_learning_rate,
        lr: config.learning_rate,
        sigma0: config.sigma0,
        mean_std: config.init_mean_std,
        epochs: config.epochs,
        batch_size: config.batch_size,
        mc_samples: config.mc_samples,
        grid: MseGridSpec {
            w_range: l.grid_w,
            b_range: l.grid_b,
            resolution: l.grid_resolution,
        },
        ..LinregConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub seconds: f64,
}

struct Csv(csv::Writer<BufWriter<File>>);

impl Csv {
    fn create(path: &Path, header: &str) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
        let mut w = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
        w.write_record(header.split(',')).map_err(csv_err)?;
        Ok(Csv(w))
    }

    fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.0.write_record(fields).map_err(csv_err)
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.0.flush().map_err(|e| CliError::io("flushing CSV", e))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::io("writing CSV", std::io::Error::other(e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path.display(), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

fn write_binary(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> vcl_core::Result<()>,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

fn seed_dir(out: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let dir = out.join(format!("seed_{seed}"));
    create_dir(&dir)?;
    Ok(dir)
}

/// Runs every seed of `config` and writes the artifacts. The `INCOMPLETE`
/// marker exists from the first write until everything has been flushed.
pub fn run(config: &ExperimentConfig, roots: &Roots) -> Result<RunReport, CliError> {
    run_with_progress(config, roots, &mut |_| {})
}

/// As [`run`], reporting one line per finished seed to `progress`.
pub fn run_with_progress(
    config: &ExperimentConfig,
    roots: &Roots,
    progress: &mut dyn FnMut(&str),
) -> Result<RunReport, CliError> {
    crate::config::validate(config)?;
    let clock = Instant::now();
    let out = roots.output_path(&config.output_dir);
    create_dir(&out)?;
    let marker = out.join(MARKER);
    write_bytes(&marker, b"run in progress\n")?;
    let mut resolved = serde_json::to_string_pretty(config).expect("config serializes");
    resolved.push('\n');
    write_bytes(&out.join("config.json"), resolved.as_bytes())?;

    let timings = match config.experiment {
        ExperimentKind::Linreg => run_linreg(config, &out, progress)?,
        _ => run_classification(config, roots, &out, progress)?,
    };

    let seconds = clock.elapsed().as_secs_f64();
    let report = json!({
        "experiment": config.experiment,
        "seeds": config.seeds,
        "seconds_per_seed": timings,
        "total_seconds": seconds,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_bytes(&out.join("run.json"), text.as_bytes())?;
    fs::remove_file(&marker).map_err(|e| CliError::io(marker.display(), e))?;
    Ok(RunReport {
        output_dir: out,
        seconds,
    })
}

fn run_classification(
    config: &ExperimentConfig,
    roots: &Roots,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let data = load_datasets(config, roots)?;
    let run_cfg = run_config(config);
    let mut results = Vec::with_capacity(config.seeds.len());
    let mut timings = BTreeMap::new();
    for &seed in &config.seeds {
        let stream = build_stream(config, &data, seed)?;
        let metrics = run_continual(&stream, &run_cfg, seed)?;
        check_finite(&metrics, seed)?;
        write_seed_artifacts(config, &metrics, &seed_dir(out, seed)?)?;
        let averages: Vec<String> = metrics.average.iter().map(|a| format!("{a:.4}")).collect();
        progress(&format!(
            "seed {seed}: average accuracy after each task [{}]",
            averages.join(", ")
        ));
        timings.insert(seed.to_string(), metrics.seconds.clone());
        results.push((seed, metrics));
    }
    write_classification_tables(&results, out)?;
    Ok(timings)
}

fn check_finite(metrics: &RunMetrics, seed: u64) -> Result<(), CliError> {
    let accuracies = metrics.accuracy.iter().flatten();
    let losses = metrics.losses.iter().flatten();
    if accuracies.chain(losses).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "seed {seed} produced a non-finite loss or accuracy"
        )))
    }
}

fn write_seed_artifacts(
    config: &ExperimentConfig,
    metrics: &RunMetrics,
    dir: &Path,
) -> Result<(), CliError> {
    write_binary(&dir.join("sigma.bin"), |w| {
        write_sigma_snapshots(&metrics.sigma, w)
    })?;
    if !metrics.coresets.is_empty() {
        write_binary(&dir.join("coresets.csv"), |w| {
            write_coresets_csv(&metrics.coresets, w)
        })?;
        write_binary(&dir.join("coresets.bin"), |w| {
            write_coresets_bin(&metrics.coresets, w)
        })?;
    }
    if config.heatmap {
        write_heatmap(metrics, &dir.join("heatmap.csv"))?;
    }
    Ok(())
}

/// Multi-head runs add a head per task, so only the shared trunk is comparable
/// across snapshots; single-head runs use every parameter.
fn write_heatmap(metrics: &RunMetrics, path: &Path) -> Result<(), CliError> {
    let multi_head = metrics.final_posterior.n_heads() > 1;
    let columns: Vec<Vec<f64>> = metrics
        .sigma
        .iter()
        .map(|s| {
            if multi_head {
                s.trunk().to_vec()
            } else {
                s.values.clone()
            }
        })
        .collect();
    let heat = variance_heatmap(&columns)?;
    let layers = parameter_layers(&metrics.final_posterior);
    let mut csv = Csv::create(path, HEATMAP_HEADER)?;
    for (i, layer) in layers.iter().enumerate().take(heat.rows()) {
        for t in 0..heat.cols() {
            csv.row([
                i.to_string(),
                layer.clone(),
                t.to_string(),
                heat.get(i, t).to_string(),
            ])?;
        }
    }
    csv.finish()
}

fn write_classification_tables(results: &[(u64, RunMetrics)], out: &Path) -> Result<(), CliError> {
    let mut metrics = Csv::create(&out.join("metrics.csv"), METRICS_HEADER)?;
    let mut losses = Csv::create(&out.join("losses.csv"), LOSSES_HEADER)?;
    let mut average = Csv::create(&out.join("average.csv"), AVERAGE_HEADER)?;
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut averages: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (seed, m) in results {
        let seed = seed.to_string();
        for (t, row) in m.accuracy.iter().enumerate() {
            for (s, acc) in row.iter().enumerate() {
                metrics.row([seed.clone(), t.to_string(), s.to_string(), acc.to_string()])?;
                cells.entry((t, s)).or_default().push(*acc);
            }
        }
        for (t, epochs) in m.losses.iter().enumerate() {
            for (e, loss) in epochs.iter().enumerate() {
                losses.row([seed.clone(), t.to_string(), e.to_string(), loss.to_string()])?;
            }
        }
        for (t, avg) in m.average.iter().enumerate() {
            average.row([seed.clone(), t.to_string(), avg.to_string()])?;
            averages.entry(t).or_default().push(*avg);
        }
    }
    metrics.finish()?;
    losses.finish()?;
    average.finish()?;

    let mut agg = Csv::create(&out.join("aggregate.csv"), AGGREGATE_HEADER)?;
    for ((t, s), values) in &cells {
        agg.row([
            t.to_string(),
            s.to_string(),
            mean(values).to_string(),
            sample_std(values).to_string(),
            values.len().to_string(),
        ])?;
    }
    agg.finish()?;
    let mut agg = Csv::create(&out.join("average_aggregate.csv"), AVERAGE_AGGREGATE_HEADER)?;
    for (t, values) in &averages {
        agg.row([
            t.to_string(),
            mean(values).to_string(),
            sample_std(values).to_string(),
            values.len().to_string(),
        ])?;
    }
    agg.finish()
}

fn run_linreg(
    config: &ExperimentConfig,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let lin = linreg_config(config);
    let mut summary = Csv::create(&out.join("linreg_summary.csv"), LINREG_SUMMARY_HEADER)?;
    let mut norms = Csv::create(&out.join("step_norms.csv"), STEP_NORMS_HEADER)?;
    let mut seen: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut timings = BTreeMap::new();
    for &seed in &config.seeds {
        let clock = Instant::now();
        let tasks = linreg_sequence(&config.linreg.true_params, config.linreg.n_per_task, seed)?;
        let (trajectories, grid) = linreg_trajectory(&tasks, &lin, seed)?;
        let dir = seed_dir(out, seed)?;
        write_trajectories(&trajectories, &dir.join("trajectory.csv"))?;
        let mut csv = Csv::create(&dir.join("msegrid.csv"), MSEGRID_HEADER)?;
        for (i, w) in grid.w.iter().enumerate() {
            for (j, b) in grid.b.iter().enumerate() {
                csv.row([
                    w.to_string(),
                    b.to_string(),
                    grid.avg_mse.get(i, j).to_string(),
                ])?;
            }
        }
        csv.finish()?;
        for (k, traj) in trajectories.iter().enumerate() {
            let name = traj.optimizer.name();
            let std = traj.step_norm_std(config.linreg.burn_in);
            if !std.is_finite() {
                return Err(CliError::Numerical(format!(
                    "seed {seed}, {name}: non-finite step norms"
                )));
            }
            norms.row([seed.to_string(), name.to_string(), std.to_string()])?;
            for (t, mse) in traj.seen_task_mse().into_iter().enumerate() {
                summary.row([
                    seed.to_string(),
                    name.to_string(),
                    t.to_string(),
                    mse.to_string(),
                ])?;
                seen.entry((k, t)).or_default().push(mse);
            }
        }
        timings.insert(seed.to_string(), vec![clock.elapsed().as_secs_f64()]);
        progress(&format!("seed {seed}: {} trajectories", trajectories.len()));
    }
    summary.finish()?;
    norms.finish()?;
    let mut agg = Csv::create(&out.join("linreg_aggregate.csv"), LINREG_AGGREGATE_HEADER)?;
    for ((k, t), values) in &seen {
        let name = lin.optimizers[*k].name();
        agg.row([
            name.to_string(),
            t.to_string(),
            mean(values).to_string(),
            sample_std(values).to_string(),
            values.len().to_string(),
        ])?;
    }
    agg.finish()?;
    Ok(timings)
}

fn write_trajectories(trajectories: &[Trajectory], path: &Path) -> Result<(), CliError> {
    let mut csv = Csv::create(path, TRAJECTORY_HEADER)?;
    for traj in trajectories {
        let name = traj.optimizer.name();
        for p in &traj.points {
            csv.row([
                name.to_string(),
                p.step.to_string(),
                p.mu_w.to_string(),
                p.mu_b.to_string(),
            ])?;
        }
    }
    csv.finish()
}
