//! Experiment configuration: JSON files layered over named profiles.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use vcl_core::continual::CoresetUsage;
use vcl_core::coresets::CoresetMethod;
use vcl_core::optimizers::OptimizerKind;
use vcl_core::tasks::DEFAULT_SPLIT_PAIRS;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Permuted,
    SplitMnist,
    SplitFashion,
    Linreg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoresetChoice {
    None,
    Random,
    Kcenter,
    Stein,
}

impl CoresetChoice {
    pub fn method(self) -> Option<CoresetMethod> {
        match self {
            CoresetChoice::None => None,
            CoresetChoice::Random => Some(CoresetMethod::Random),
            CoresetChoice::Kcenter => Some(CoresetMethod::Kcenter),
            CoresetChoice::Stein => Some(CoresetMethod::Stein),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoresetSection {
    pub method: CoresetChoice,
    pub size: usize,
    pub usage: CoresetUsage,
    pub stein_steps: usize,
    pub stein_step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub mnist_dir: PathBuf,
    pub fashion_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinregSection {
    pub true_params: Vec<(f64, f64)>,
    pub n_per_task: usize,
    /// Learning rate of vanilla SGD; `learning_rate` applies to the others.
    pub sgd_learning_rate: f64,
    pub burn_in: usize,
    pub grid_resolution: usize,
    pub grid_w: (f64, f64),
    pub grid_b: (f64, f64),
}

/// Every knob of one experiment. Serialized back in full next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Ignored by `linreg`, which always compares all four optimizers.
    pub optimizer: OptimizerKind,
    pub coreset: CoresetSection,
    /// Permuted: number of tasks. Split: the first `n_tasks` label pairs (at most five).
    pub n_tasks: usize,
    /// Seeded subsample of each task's training set; `null` keeps everything.
    pub train_per_task: Option<usize>,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub eval_samples: usize,
    pub learning_rate: f64,
    pub sigma0: f64,
    pub init_mean_std: f64,
    pub hidden: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Write the per-parameter Δσ heatmap (large for wide networks).
    pub heatmap: bool,
    pub data: DataSection,
    pub linreg: LinregSection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Permuted,
            optimizer: OptimizerKind::AdamGng,
            coreset: CoresetSection {
                method: CoresetChoice::Stein,
                size: 200,
                usage: CoresetUsage::Regret,
                stein_steps: 50,
                stein_step_size: 0.01,
            },
            n_tasks: 3,
            train_per_task: Some(5000),
            epochs: 5,
            finetune_epochs: 5,
            batch_size: 256,
            mc_samples: 1,
            eval_samples: 10,
            learning_rate: 0.01,
            sigma0: (-3.0f64).exp(),
            init_mean_std: 0.1,
            hidden: vec![100, 100],
            seeds: vec![1, 2, 3, 4, 5],
            heatmap: true,
            data: DataSection {
                mnist_dir: PathBuf::from("data/mnist"),
                fashion_dir: PathBuf::from("data/fashion"),
            },
            linreg: LinregSection {
                true_params: vec![(1.0, 0.0), (0.6, 0.3), (0.2, 0.0)],
                n_per_task: 200,
                sgd_learning_rate: 0.001,
                burn_in: 100,
                grid_resolution: 41,
                grid_w: (-0.5, 1.5),
                grid_b: (-1.0, 1.0),
            },
            output_dir: PathBuf::from("runs/permuted_desk"),
        }
    }
}

pub struct Profile {
    pub name: &'static str,
    pub summary: &'static str,
    build: fn() -> ExperimentConfig,
}

impl Profile {
    pub fn config(&self) -> ExperimentConfig {
        (self.build)()
    }
}

fn permuted_desk() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn permuted_full() -> ExperimentConfig {
    ExperimentConfig {
        n_tasks: 10,
        train_per_task: None,
        epochs: 100,
        finetune_epochs: 100,
        mc_samples: 5,
        eval_samples: 100,
        learning_rate: 0.001,
        heatmap: false,
        output_dir: PathBuf::from("runs/permuted_full"),
        ..ExperimentConfig::default()
    }
}

fn split_desk(kind: ExperimentKind, out: &str) -> ExperimentConfig {
    let base = ExperimentConfig::default();
    ExperimentConfig {
        experiment: kind,
        coreset: CoresetSection {
            size: 40,
            ..base.coreset
        },
        n_tasks: 5,
        train_per_task: None,
        learning_rate: 0.003,
        hidden: vec![400],
        heatmap: false,
        output_dir: PathBuf::from(out),
        ..base
    }
}

fn split_full(kind: ExperimentKind, out: &str) -> ExperimentConfig {
    ExperimentConfig {
        epochs: 100,
        finetune_epochs: 100,
        mc_samples: 5,
        eval_samples: 100,
        learning_rate: 0.001,
        hidden: vec![100, 100],
        heatmap: false,
        ..split_desk(kind, out)
    }
}

fn linreg(sigma0: f64, out: &str) -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Linreg,
        optimizer: OptimizerKind::Sgd,
        coreset: CoresetSection {
            method: CoresetChoice::None,
            size: 0,
            ..ExperimentConfig::default().coreset
        },
        n_tasks: 3,
        train_per_task: None,
        epochs: 100,
        batch_size: 20,
        learning_rate: 0.01,
        sigma0,
        hidden: Vec::new(),
        heatmap: false,
        output_dir: PathBuf::from(out),
        ..ExperimentConfig::default()
    }
}

pub const PROFILES: &[Profile] = &[
    Profile {
        name: "permuted_full",
        summary: "permuted MNIST, 10 tasks, full training sets, 2x100 hidden, 100 epochs, batch 256, Adam+GNG, Stein coreset 200 (regret)",
        build: permuted_full,
    },
    Profile {
        name: "permuted_desk",
        summary: "permuted MNIST, 3 tasks x 5,000 examples, 2x100 hidden, 5 epochs, batch 256, Adam+GNG, Stein coreset 200 (regret)",
        build: permuted_desk,
    },
    Profile {
        name: "split_mnist_full",
        summary: "split MNIST, 5 two-class heads, 2x100 hidden, 100 epochs, Adam+GNG, Stein coreset 40 (regret)",
        build: || split_full(ExperimentKind::SplitMnist, "runs/split_mnist_full"),
    },
    Profile {
        name: "split_mnist_desk",
        summary: "split MNIST, 5 two-class heads, 1x400 hidden, 5 epochs, Adam+GNG, Stein coreset 40 (regret)",
        build: || split_desk(ExperimentKind::SplitMnist, "runs/split_mnist_desk"),
    },
    Profile {
        name: "split_fashion_full",
        summary: "split fashion-MNIST, 5 two-class heads, 2x100 hidden, 100 epochs, Adam+GNG, Stein coreset 40 (regret)",
        build: || split_full(ExperimentKind::SplitFashion, "runs/split_fashion_full"),
    },
    Profile {
        name: "split_fashion_desk",
        summary: "split fashion-MNIST, 5 two-class heads, 1x400 hidden, 5 epochs, Adam+GNG, Stein coreset 40 (regret)",
        build: || split_desk(ExperimentKind::SplitFashion, "runs/split_fashion_desk"),
    },
    Profile {
        name: "linreg_fig1",
        summary: "1-D Bayesian linear regression, 3 tasks, all four optimizers, σ₀ = e⁻¹",
        build: || linreg((-1.0f64).exp(), "runs/linreg_fig1"),
    },
    Profile {
        name: "linreg_fig2",
        summary: "1-D Bayesian linear regression, 3 tasks, all four optimizers, σ₀ = e⁻³",
        build: || linreg((-3.0f64).exp(), "runs/linreg_fig2"),
    },
];

pub fn profile(name: &str) -> Option<&'static Profile> {
    PROFILES.iter().find(|p| p.name == name)
}

pub fn list_profiles() -> String {
    let width = PROFILES.iter().map(|p| p.name.len()).max().unwrap_or(0);
    PROFILES
        .iter()
        .map(|p| format!("{:width$}  {}\n", p.name, p.summary))
        .collect()
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses a config document. An optional `"profile"` key picks the base;
/// otherwise the base is `permuted_desk`. Every other key overrides the base.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut doc: Value =
        serde_json::from_str(text).map_err(|e| config_error("<document>", e.to_string()))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| config_error("<document>", "expected a JSON object"))?;
    let base = match obj.remove("profile") {
        None => ExperimentConfig::default(),
        Some(Value::String(name)) => profile(&name)
            .ok_or_else(|| config_error("profile", format!("unknown profile `{name}`")))?
            .config(),
        Some(_) => return Err(config_error("profile", "expected a profile name")),
    };
    let mut merged = serde_json::to_value(&base).expect("config serializes");
    merge(&mut merged, doc);
    let config: ExperimentConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let field = e.path().to_string();
        config_error(field, e.into_inner().to_string())
    })?;
    validate(&config)?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error("<document>", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn validate(c: &ExperimentConfig) -> Result<(), CliError> {
    let positive = |name: &str, v: usize| {
        if v == 0 {
            Err(config_error(name, "must be at least 1"))
        } else {
            Ok(())
        }
    };
    if c.seeds.is_empty() {
        return Err(config_error("seeds", "at least one seed is required"));
    }
    positive("epochs", c.epochs)?;
    positive("batch_size", c.batch_size)?;
    positive("mc_samples", c.mc_samples)?;
    positive("eval_samples", c.eval_samples)?;
    positive("n_tasks", c.n_tasks)?;
    let split = matches!(
        c.experiment,
        ExperimentKind::SplitMnist | ExperimentKind::SplitFashion
    );
    if split && c.n_tasks > DEFAULT_SPLIT_PAIRS.len() {
        return Err(config_error(
            "n_tasks",
            "split experiments have at most five tasks",
        ));
    }
    if let Some(n) = c.train_per_task {
        positive("train_per_task", n)?;
    }
    if !(c.learning_rate >= 0.0 && c.learning_rate.is_finite()) {
        return Err(config_error(
            "learning_rate",
            "must be finite and non-negative",
        ));
    }
    if !(c.sigma0 > 0.0 && c.sigma0.is_finite()) {
        return Err(config_error("sigma0", "must be positive"));
    }
    if !(c.init_mean_std >= 0.0 && c.init_mean_std.is_finite()) {
        return Err(config_error(
            "init_mean_std",
            "must be finite and non-negative",
        ));
    }
    if c.hidden.contains(&0) {
        return Err(config_error("hidden", "layer widths must be at least 1"));
    }
    if !(c.coreset.stein_step_size >= 0.0 && c.coreset.stein_step_size.is_finite()) {
        return Err(config_error(
            "coreset.stein_step_size",
            "must be finite and non-negative",
        ));
    }
    if c.coreset.method == CoresetChoice::Kcenter && c.coreset.size == 0 {
        return Err(config_error(
            "coreset.size",
            "K-center coresets need at least one point",
        ));
    }
    if c.experiment == ExperimentKind::Linreg {
        let l = &c.linreg;
        if l.true_params.is_empty() {
            return Err(config_error(
                "linreg.true_params",
                "at least one task is required",
            ));
        }
        positive("linreg.n_per_task", l.n_per_task)?;
        positive("linreg.grid_resolution", l.grid_resolution)?;
        if !(l.sgd_learning_rate >= 0.0 && l.sgd_learning_rate.is_finite()) {
            return Err(config_error(
                "linreg.sgd_learning_rate",
                "must be finite and non-negative",
            ));
        }
    }
    Ok(())
}
