//! The sequential driver: each task's posterior is the next task's prior.
//!
//! Coresets are used either as a regret term while training later tasks or to
//! finetune a disposable prediction model. Previous output heads are frozen
//! while later tasks train.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bnn::{
    objective_and_grads, predict, Architecture, GaussianMeanField, GradientSet, InitConfig,
    LikelihoodTerm, NoiseBundle,
};
use crate::coresets::{
    kcenter_coreset, random_coreset, refine_coreset, Coreset, CoresetMethod, SteinConfig,
};
use crate::error::{Error, Result};
use crate::io::{BinReader, BinWriter};
use crate::math::{derive_seed, mean, sample_std, Rng, Tensor2};
use crate::optimizers::{AdamConfig, Optimizer, OptimizerKind};
use crate::tasks::{LinRegTask, TaskData, LINREG_NOISE_VAR};

/// A posterior recorded after training `task`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSnapshot {
    task: usize,
    q: GaussianMeanField,
}

impl PosteriorSnapshot {
    pub fn new(task: usize, q: GaussianMeanField) -> Self {
        Self { task, q }
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn posterior(&self) -> &GaussianMeanField {
        &self.q
    }

    pub fn into_posterior(self) -> GaussianMeanField {
        self.q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Plain,
    Regret,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoresetUsage {
    Predictive,
    Regret,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// `adam.lr` is the learning rate for every optimizer; a zero rate leaves
    /// the posterior untouched.
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::AdamGng,
            adam: AdamConfig::default(),
            epochs: 5,
            batch_size: 256,
            mc_samples: 5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::Contract(
                "batch size and MC samples must be ≥ 1".into(),
            ));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Contract(format!(
                "learning rate must be finite and ≥ 0, got {}",
                self.adam.lr
            )));
        }
        Ok(())
    }
}

/// What an observer sees after every optimizer step.
pub struct StepEvent<'a> {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub before: &'a GaussianMeanField,
    pub after: &'a GaussianMeanField,
    pub raw: &'a GradientSet,
}

pub type Observer<'a> = &'a mut dyn FnMut(&StepEvent<'_>);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub posterior: GaussianMeanField,
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

struct Objective<'a> {
    prior: &'a GaussianMeanField,
    kl_scale: f64,
    trainable: Vec<usize>,
    noise_heads: Vec<usize>,
    context: &'a str,
}

fn take_step(
    q: &mut GaussianMeanField,
    opt: &mut Optimizer,
    obj: &Objective<'_>,
    terms: &[LikelihoodTerm<'_>],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<(f64, GradientSet)> {
    let noise = NoiseBundle::sample_heads(q, config.mc_samples, &obj.noise_heads, rng);
    let (loss, mut grads) = objective_and_grads(q, obj.prior, terms, &noise, obj.kl_scale)
        .map_err(|e| match e {
            Error::NonFinite(what) => {
                Error::NonFinite(format!("{what} while training {}", obj.context))
            }
            other => other,
        })?;
    grads.zero_heads_except(&obj.trainable);
    if config.adam.lr > 0.0 {
        opt.step(q, &grads)?;
    }
    Ok((loss, grads))
}

fn heads_of(task: &TaskData, coresets: &[Coreset]) -> Vec<usize> {
    let mut heads = vec![task.head];
    for c in coresets {
        if !heads.contains(&c.data.head) {
            heads.push(c.data.head);
        }
    }
    heads
}

/// Minimizes the negative ELBO of `task` against `prior`, starting from `start`.
///
/// Losses are per training example: `−mean loglik(batch) + KL / N`. In regret
/// mode every previous coreset adds its summed log-likelihood, also divided by
/// `N`. Only `task.head` and the trunk receive updates.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    prior: &GaussianMeanField,
    start: GaussianMeanField,
    task: &TaskData,
    coresets: &[Coreset],
    mode: TrainMode,
    config: &TrainConfig,
    rng: &mut Rng,
    mut observer: Option<Observer<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if task.is_empty() {
        return Err(Error::Empty("training task"));
    }
    if !start.same_shape(prior) {
        return Err(Error::shape(
            "train_task start",
            "congruent with prior",
            "different shape",
        ));
    }
    let coresets: &[Coreset] = match mode {
        TrainMode::Plain => &[],
        TrainMode::Regret => coresets,
    };
    let n = task.len();
    let obj = Objective {
        prior,
        kl_scale: 1.0 / n as f64,
        trainable: vec![task.head],
        noise_heads: heads_of(task, coresets),
        context: &task.name,
    };
    let mut q = start;
    let mut opt = Optimizer::new(config.optimizer.rule(), config.adam, &q);
    let mut outcome = TrainOutcome {
        posterior: q.clone(),
        epoch_losses: Vec::with_capacity(config.epochs),
        step_losses: Vec::new(),
    };
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let order = rng.permutation(n);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = task.select(chunk);
            let mut terms = vec![LikelihoodTerm {
                data: &batch,
                weight: 1.0,
            }];
            terms.extend(coresets.iter().map(|c| LikelihoodTerm {
                data: &c.data,
                weight: c.len() as f64 / n as f64,
            }));
            let before = observer.as_ref().map(|_| q.clone());
            let (loss, raw) = take_step(&mut q, &mut opt, &obj, &terms, config, rng)?;
            if let (Some(f), Some(before)) = (observer.as_mut(), before.as_ref()) {
                f(&StepEvent {
                    step,
                    epoch,
                    loss,
                    before,
                    after: &q,
                    raw: &raw,
                });
            }
            outcome.step_losses.push(loss);
            total += loss;
            batches += 1;
            step += 1;
        }
        outcome.epoch_losses.push(total / batches as f64);
    }
    outcome.posterior = q;
    Ok(outcome)
}

/// Fits a prediction-only copy of `q_star` to the union of `coresets`:
/// maximizes `E_q[log p(C | θ)] − KL(q ‖ q_star)`. The snapshot itself is not
/// modified. Each step sees every coreset point; there are
/// `epochs × ⌈|C| / batch_size⌉` steps.
pub fn finetune_prediction_model(
    q_star: &PosteriorSnapshot,
    coresets: &[Coreset],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<PosteriorSnapshot> {
    config.validate()?;
    let coresets: Vec<&Coreset> = coresets.iter().filter(|c| !c.is_empty()).collect();
    let total: usize = coresets.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Ok(q_star.clone());
    }
    let mut heads: Vec<usize> = Vec::new();
    for c in &coresets {
        if !heads.contains(&c.data.head) {
            heads.push(c.data.head);
        }
    }
    let obj = Objective {
        prior: q_star.posterior(),
        kl_scale: 1.0 / total as f64,
        trainable: heads.clone(),
        noise_heads: heads,
        context: "prediction model",
    };
    let terms: Vec<LikelihoodTerm<'_>> = coresets
        .iter()
        .map(|c| LikelihoodTerm {
            data: &c.data,
            weight: c.len() as f64 / total as f64,
        })
        .collect();
    let mut q = q_star.posterior().clone();
    let mut opt = Optimizer::new(config.optimizer.rule(), config.adam, &q);
    let steps = config.epochs * total.div_ceil(config.batch_size);
    for _ in 0..steps {
        take_step(&mut q, &mut opt, &obj, &terms, config, rng)?;
    }
    Ok(PosteriorSnapshot::new(q_star.task(), q))
}

/// Anything that labels inputs for a given head.
pub trait Predictor {
    fn predict_labels(&self, x: &Tensor2, head: usize, rng: &mut Rng) -> Result<Vec<usize>>;
}

/// Argmax of the Monte-Carlo predictive distribution.
pub struct MonteCarloPredictor<'a> {
    pub q: &'a GaussianMeanField,
    pub n_samples: usize,
}

impl Predictor for MonteCarloPredictor<'_> {
    fn predict_labels(&self, x: &Tensor2, head: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let probs = predict(self.q, x, self.n_samples, rng, head)?;
        Ok(probs
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                        if p > best.1 {
                            (i, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_task: Vec<f64>,
    pub average: f64,
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::shape("accuracy", labels.len(), predicted.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation labels"));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Test accuracy on each task through its own head, and their unweighted mean.
/// Task `t` draws from a stream derived from `(seed, t)`, so repeated calls agree.
pub fn evaluate(predictor: &dyn Predictor, tasks: &[TaskData], seed: u64) -> Result<Evaluation> {
    if tasks.is_empty() {
        return Err(Error::Empty("evaluation tasks"));
    }
    let per_task = tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let labels = task
                .labels()
                .ok_or_else(|| Error::Contract("evaluation needs classification tasks".into()))?;
            let mut rng = Rng::derived(seed, "evaluate", t as u64);
            accuracy(
                &predictor.predict_labels(&task.inputs, task.head, &mut rng)?,
                labels,
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let average = mean(&per_task);
    Ok(Evaluation { per_task, average })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoresetConfig {
    pub method: CoresetMethod,
    pub size: usize,
    pub usage: CoresetUsage,
    pub stein: SteinConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hidden: Vec<usize>,
    pub init: InitConfig,
    pub train: TrainConfig,
    /// Epochs of prediction-model finetuning under predictive coreset usage.
    pub finetune_epochs: usize,
    pub coreset: Option<CoresetConfig>,
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            init: InitConfig::default(),
            train: TrainConfig::default(),
            finetune_epochs: 5,
            coreset: None,
            eval_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPair {
    pub train: TaskData,
    pub test: TaskData,
}

/// `σ` of every parameter after one task, laid out trunk-first then by head.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSnapshot {
    pub task: usize,
    pub trunk_len: usize,
    pub values: Vec<f64>,
}

impl SigmaSnapshot {
    pub fn of(task: usize, q: &GaussianMeanField) -> Self {
        Self {
            task,
            trunk_len: q.mu().trunk().iter().map(|l| l.len()).sum(),
            values: q.sigma().to_vec(),
        }
    }

    pub fn trunk(&self) -> &[f64] {
        &self.values[..self.trunk_len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// `accuracy[t][s]`: accuracy on task `s ≤ t` after training task `t`.
    pub accuracy: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    /// Mean training loss per epoch, one vector per task.
    pub losses: Vec<Vec<f64>>,
    pub sigma: Vec<SigmaSnapshot>,
    pub coresets: Vec<Coreset>,
    pub final_posterior: GaussianMeanField,
    /// Wall-clock seconds per task; excluded from every deterministic artifact.
    pub seconds: Vec<f64>,
}

fn check_stream(stream: &[TaskPair]) -> Result<(usize, usize)> {
    let first = stream.first().ok_or(Error::Empty("task stream"))?;
    let dim = first.train.input_dim();
    let classes = first
        .train
        .n_classes()
        .ok_or_else(|| Error::Contract("continual runs need classification tasks".into()))?;
    let mut heads = 0;
    for (t, pair) in stream.iter().enumerate() {
        for d in [&pair.train, &pair.test] {
            if d.input_dim() != dim {
                return Err(Error::shape("task input dimension", dim, d.input_dim()));
            }
            if d.n_classes() != Some(classes) {
                return Err(Error::Contract(format!(
                    "task {t} does not have {classes} classes"
                )));
            }
        }
        if pair.train.head != pair.test.head {
            return Err(Error::Contract(format!(
                "task {t} trains and tests on different heads"
            )));
        }
        match pair.train.head {
            h if h < heads => {}
            h if h == heads => heads += 1,
            h => {
                return Err(Error::UnknownHead {
                    head: h,
                    available: heads,
                });
            }
        }
    }
    Ok((dim, classes))
}

fn build_coreset(
    data: &TaskData,
    config: Option<&CoresetConfig>,
    task: usize,
    rng: &mut Rng,
) -> Result<(Option<Coreset>, TaskData)> {
    let Some(cc) = config.filter(|c| c.size > 0) else {
        return Ok((None, data.clone()));
    };
    let (mut coreset, rest) = match cc.method {
        CoresetMethod::Random | CoresetMethod::Stein => random_coreset(data, cc.size, task, rng)?,
        CoresetMethod::Kcenter => kcenter_coreset(data, cc.size, task)?,
    };
    coreset.method = cc.method;
    Ok((Some(coreset), rest))
}

/// Runs the whole task sequence for one seed.
///
/// Per task: set the coreset aside, train on the rest, refine a Stein coreset
/// against the new posterior, then evaluate on every task seen so far.
pub fn run_continual(stream: &[TaskPair], config: &RunConfig, seed: u64) -> Result<RunMetrics> {
    let (dim, classes) = check_stream(stream)?;
    config.train.validate()?;
    if config.eval_samples == 0 {
        return Err(Error::Contract(
            "evaluation needs at least one MC sample".into(),
        ));
    }
    let arch = Architecture::classifier(dim, &config.hidden, classes);
    let mut prior = GaussianMeanField::standard_prior(arch.clone(), 0);
    let mut current =
        GaussianMeanField::init(arch, 0, config.init, &mut Rng::derived(seed, "init", 0))?;
    let usage = config.coreset.map(|c| c.usage);
    let mode = if usage == Some(CoresetUsage::Regret) {
        TrainMode::Regret
    } else {
        TrainMode::Plain
    };

    let mut coresets: Vec<Coreset> = Vec::new();
    let mut accuracy = Vec::new();
    let mut average = Vec::new();
    let mut losses = Vec::new();
    let mut sigma = Vec::new();
    let mut seconds = Vec::new();
    for (t, pair) in stream.iter().enumerate() {
        let clock = Instant::now();
        let idx = t as u64;
        let head = pair.train.head;
        if head == current.n_heads() {
            prior.append_prior_head();
            current.append_init_head(config.init, &mut Rng::derived(seed, "head", idx));
        }
        let (coreset, train) = build_coreset(
            &pair.train,
            config.coreset.as_ref(),
            t,
            &mut Rng::derived(seed, "coreset", idx),
        )?;
        let outcome = train_task(
            &prior,
            current,
            &train,
            &coresets,
            mode,
            &config.train,
            &mut Rng::derived(seed, "train", idx),
            None,
        )?;
        let q_t = outcome.posterior;
        if let Some(mut c) = coreset {
            if c.method == CoresetMethod::Stein {
                refine_coreset(
                    &mut c,
                    &q_t,
                    config.coreset.expect("coreset configured").stein,
                )?;
            }
            coresets.push(c);
        }

        let snapshot = PosteriorSnapshot::new(t, q_t);
        let predictive = if usage == Some(CoresetUsage::Predictive) {
            let tune = TrainConfig {
                epochs: config.finetune_epochs,
                ..config.train
            };
            Some(finetune_prediction_model(
                &snapshot,
                &coresets,
                &tune,
                &mut Rng::derived(seed, "finetune", idx),
            )?)
        } else {
            None
        };
        let model = predictive.as_ref().unwrap_or(&snapshot).posterior();
        let tests: Vec<TaskData> = stream[..=t].iter().map(|p| p.test.clone()).collect();
        let eval = evaluate(
            &MonteCarloPredictor {
                q: model,
                n_samples: config.eval_samples,
            },
            &tests,
            derive_seed(seed, "evaluate", idx),
        )?;

        accuracy.push(eval.per_task);
        average.push(eval.average);
        losses.push(outcome.epoch_losses);
        sigma.push(SigmaSnapshot::of(t, snapshot.posterior()));
        // the propagated posterior is q_t, never the finetuned copy
        prior = snapshot.into_posterior();
        current = prior.clone();
        seconds.push(clock.elapsed().as_secs_f64());
    }
    Ok(RunMetrics {
        accuracy,
        average,
        losses,
        sigma,
        coresets,
        final_posterior: prior,
        seconds,
    })
}

/// `Δσ[i][t] = (σ[i][t] − maxᵢ σ[i][0]) / maxᵢ σ[i][0]`, rows = parameters,
/// columns = tasks. All snapshots must cover the same parameters.
pub fn variance_heatmap(snapshots: &[Vec<f64>]) -> Result<Tensor2> {
    let first = snapshots.first().ok_or(Error::Empty("sigma snapshots"))?;
    if first.is_empty() {
        return Err(Error::Empty("sigma snapshot"));
    }
    if let Some(s) = snapshots.iter().find(|s| s.len() != first.len()) {
        return Err(Error::shape(
            "variance_heatmap snapshot",
            first.len(),
            s.len(),
        ));
    }
    if snapshots
        .iter()
        .flatten()
        .any(|&s| !(s > 0.0 && s.is_finite()))
    {
        return Err(Error::Contract(
            "sigma values must be positive and finite".into(),
        ));
    }
    let anchor = first.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Tensor2::from_fn(first.len(), snapshots.len(), |i, t| {
        (snapshots[t][i] - anchor) / anchor
    }))
}

/// Layer label of every parameter index, e.g. `trunk0.w`, `head1.b`.
pub fn parameter_layers(q: &GaussianMeanField) -> Vec<String> {
    let mut labels = Vec::with_capacity(q.n_params());
    let tree = q.mu();
    let named = tree
        .trunk()
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("trunk{i}"), l))
        .chain(
            tree.heads()
                .iter()
                .enumerate()
                .map(|(i, l)| (format!("head{i}"), l)),
        );
    for (name, layer) in named {
        labels.extend(std::iter::repeat_n(
            format!("{name}.w"),
            layer.w.data().len(),
        ));
        labels.extend(std::iter::repeat_n(format!("{name}.b"), layer.b.len()));
    }
    labels
}

const SIGMA_MAGIC: &[u8; 8] = b"VCLSIGMA";
const SIGMA_VERSION: u32 = 1;

/// Little-endian binary: magic, version, snapshot count, an index of
/// `(task, trunk_len, len)` per snapshot, then every snapshot's `f64` values.
pub fn write_sigma_snapshots<W: Write>(snapshots: &[SigmaSnapshot], out: W) -> Result<()> {
    let mut w = BinWriter::new(out);
    w.bytes(SIGMA_MAGIC)?;
    w.u32(SIGMA_VERSION)?;
    w.u64(snapshots.len() as u64)?;
    for s in snapshots {
        w.u64(s.task as u64)?;
        w.u64(s.trunk_len as u64)?;
        w.u64(s.values.len() as u64)?;
    }
    for s in snapshots {
        for &v in &s.values {
            w.f64(v)?;
        }
    }
    w.finish()?;
    Ok(())
}

pub fn read_sigma_snapshots<R: Read>(input: R) -> Result<Vec<SigmaSnapshot>> {
    let mut r = BinReader::new(input);
    r.expect_magic(SIGMA_MAGIC, "sigma file")?;
    let version = r.u32()?;
    if version != SIGMA_VERSION {
        return Err(Error::Format(format!(
            "sigma file version {version} (expected {SIGMA_VERSION})"
        )));
    }
    let count = r.usize()?;
    let mut index = Vec::new();
    for _ in 0..count {
        index.push((r.usize()?, r.usize()?, r.usize()?));
    }
    index
        .into_iter()
        .map(|(task, trunk_len, len)| {
            if trunk_len > len {
                return Err(Error::Format(format!(
                    "sigma snapshot {task}: trunk longer than snapshot"
                )));
            }
            let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
            Ok(SigmaSnapshot {
                task,
                trunk_len,
                values,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseGridSpec {
    pub w_range: (f64, f64),
    pub b_range: (f64, f64),
    pub resolution: usize,
}

impl Default for MseGridSpec {
    fn default() -> Self {
        Self {
            w_range: (-0.5, 1.5),
            b_range: (-1.0, 1.0),
            resolution: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinregConfig {
    pub optimizers: Vec<OptimizerKind>,
    /// Learning rate of vanilla SGD.
    pub sgd_lr: f64,
    /// Learning rate of the other three configurations.
    pub lr: f64,
    pub sigma0: f64,
    pub mean_std: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub grid: MseGridSpec,
}

impl Default for LinregConfig {
    fn default() -> Self {
        Self {
            optimizers: OptimizerKind::ALL.to_vec(),
            sgd_lr: 1e-3,
            lr: 1e-2,
            sigma0: (-1.0f64).exp(),
            mean_std: 0.1,
            epochs: 100,
            batch_size: 20,
            mc_samples: 1,
            grid: MseGridSpec::default(),
        }
    }
}

impl LinregConfig {
    pub fn lr_for(&self, kind: OptimizerKind) -> f64 {
        if kind == OptimizerKind::Sgd {
            self.sgd_lr
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Global step count across tasks; step 0 is the initial state.
    pub step: u64,
    pub task: usize,
    pub mu_w: f64,
    pub mu_b: f64,
    /// `‖Δμ‖` of the step that produced this point.
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub optimizer: OptimizerKind,
    pub points: Vec<TrajectoryPoint>,
    /// `mse[t][s]`: MSE at the posterior mean on task `s ≤ t` after task `t`.
    pub mse: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Sample standard deviation of the step norms after the first `burn_in` steps.
    pub fn step_norm_std(&self, burn_in: usize) -> f64 {
        let norms: Vec<f64> = self
            .points
            .iter()
            .skip(1 + burn_in)
            .map(|p| p.step_norm)
            .collect();
        sample_std(&norms)
    }

    /// After each task, the mean MSE over the tasks seen so far.
    pub fn seen_task_mse(&self) -> Vec<f64> {
        self.mse.iter().map(|row| mean(row)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseGrid {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Rows follow `w`, columns follow `b`.
    pub avg_mse: Tensor2,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Average over `tasks` of each task's MSE on a `(μ_w, μ_b)` lattice.
pub fn mse_grid(tasks: &[LinRegTask], spec: MseGridSpec) -> Result<MseGrid> {
    if tasks.is_empty() {
        return Err(Error::Empty("regression tasks"));
    }
    let w = linspace(spec.w_range.0, spec.w_range.1, spec.resolution);
    let b = linspace(spec.b_range.0, spec.b_range.1, spec.resolution);
    let avg_mse = Tensor2::from_fn(w.len(), b.len(), |i, j| {
        mean(&tasks.iter().map(|t| t.mse(w[i], b[j])).collect::<Vec<_>>())
    });
    Ok(MseGrid { w, b, avg_mse })
}

fn mu_wb(q: &GaussianMeanField) -> (f64, f64) {
    let head = &q.mu().heads()[0];
    (head.w.get(0, 0), head.b[0])
}

/// Sequential Bayesian linear regression with each configured optimizer, all
/// from the same initial posterior. Logs `(μ_w, μ_b)` after every step.
pub fn linreg_trajectory(
    tasks: &[LinRegTask],
    config: &LinregConfig,
    seed: u64,
) -> Result<(Vec<Trajectory>, MseGrid)> {
    let grid = mse_grid(tasks, config.grid)?;
    let data: Vec<TaskData> = tasks
        .iter()
        .enumerate()
        .map(|(t, task)| task.to_task_data(t))
        .collect();
    let arch = Architecture::linear_regression(1, LINREG_NOISE_VAR);
    let init = InitConfig {
        mean_std: config.mean_std,
        sigma0: config.sigma0,
    };
    let q0 = GaussianMeanField::init(arch.clone(), 1, init, &mut Rng::derived(seed, "init", 0))?;
    let trajectories = config
        .optimizers
        .iter()
        .map(|&kind| {
            let train = TrainConfig {
                optimizer: kind,
                adam: AdamConfig {
                    lr: config.lr_for(kind),
                    ..AdamConfig::default()
                },
                epochs: config.epochs,
                batch_size: config.batch_size,
                mc_samples: config.mc_samples,
            };
            let (w0, b0) = mu_wb(&q0);
            let mut points = vec![TrajectoryPoint {
                step: 0,
                task: 0,
                mu_w: w0,
                mu_b: b0,
                step_norm: 0.0,
            }];
            let mut mse = Vec::new();
            let mut prior = GaussianMeanField::standard_prior(arch.clone(), 1);
            let mut q = q0.clone();
            for (t, task) in data.iter().enumerate() {
                let offset = points.len() as u64 - 1;
                let mut log = |e: &StepEvent<'_>| {
                    let (w, b) = mu_wb(e.after);
                    let (pw, pb) = mu_wb(e.before);
                    points.push(TrajectoryPoint {
                        step: offset + e.step + 1,
                        task: t,
                        mu_w: w,
                        mu_b: b,
                        step_norm: ((w - pw).powi(2) + (b - pb).powi(2)).sqrt(),
                    });
                };
                let mut rng = Rng::derived(seed, "linreg-train", t as u64);
                let outcome = train_task(
                    &prior,
                    q,
                    task,
                    &[],
                    TrainMode::Plain,
                    &train,
                    &mut rng,
                    Some(&mut log),
                )?;
                let (w, b) = mu_wb(&outcome.posterior);
                mse.push(tasks[..=t].iter().map(|task| task.mse(w, b)).collect());
                prior = outcome.posterior.clone();
                q = outcome.posterior;
            }
            Ok(Trajectory {
                optimizer: kind,
                points,
                mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trajectories, grid))
}
