//! Update rules for mean-field posteriors.
//!
//! The Gaussian natural gradient (GNG) preconditions raw gradients with the
//! inverse Fisher of each factor: `F_μ = 1/σ²` and `F_v = 2` for `v = ln σ`.
//! It composes with either base rule by transforming first; Adam's moment
//! estimates therefore accumulate the transformed gradients.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bnn::{GaussianMeanField, GradientSet};
use crate::error::{Error, Result};

/// Fisher information of the log-standard-deviation channel.
pub const FISHER_V: f64 = 2.0;

/// `ĝ_μ = σ² ⊙ g_μ`, `ĝ_v = g_v / 2`, with `σ` read from the current `q`.
pub fn gng_transform(grads: &GradientSet, q: &GaussianMeanField) -> Result<GradientSet> {
    if !grads.is_congruent(q) {
        return Err(Error::shape(
            "gng_transform",
            "gradients congruent with posterior",
            "different shape",
        ));
    }
    let mut out = grads.clone();
    for (g, &v) in out.mu.values_mut().zip(q.v().values()) {
        let sigma = v.exp();
        *g *= sigma * sigma;
    }
    for g in out.v.values_mut() {
        *g /= FISHER_V;
    }
    Ok(out)
}

fn check_step_inputs(q: &GaussianMeanField, grads: &GradientSet) -> Result<()> {
    if !grads.is_congruent(q) {
        return Err(Error::shape(
            "optimizer step",
            "gradients congruent with posterior",
            "different shape",
        ));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("optimizer gradients".into()));
    }
    Ok(())
}

/// `θ ← θ − lr · g` on both channels.
pub fn sgd_step(q: &mut GaussianMeanField, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Contract(format!(
            "learning rate must be > 0, got {lr}"
        )));
    }
    check_step_inputs(q, grads)?;
    let (mu, v) = q.channels_mut();
    for (p, g) in mu
        .values_mut()
        .chain(v.values_mut())
        .zip(grads.mu.values().chain(grads.v.values()))
    {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators over the flattened `[μ…, v…]` parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: AdamConfig,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, q: &GaussianMeanField) -> Self {
        let n = 2 * q.n_params();
        Self {
            config,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }
}

/// Bias-corrected Adam: `θ ← θ − α · m̂ / (√ŝ + ε)`.
pub fn adam_step(
    state: &mut OptimizerState,
    q: &mut GaussianMeanField,
    grads: &GradientSet,
) -> Result<()> {
    check_step_inputs(q, grads)?;
    if state.first.len() != 2 * q.n_params() {
        return Err(Error::shape(
            "adam state",
            state.first.len(),
            2 * q.n_params(),
        ));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (mu, v) = q.channels_mut();
    let params = mu.values_mut().chain(v.values_mut());
    let g = grads.mu.values().chain(grads.v.values());
    for (((p, &g), m), s) in params.zip(g).zip(&mut state.first).zip(&mut state.second) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *s = beta2 * *s + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*s / c2).sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseRule {
    Sgd,
    Adam,
}

/// A base rule, optionally fed with natural gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub gng: bool,
    pub base: BaseRule,
}

pub fn compose(gng: bool, base: BaseRule) -> UpdateRule {
    UpdateRule { gng, base }
}

/// The four optimizer configurations compared throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    SgdGng,
    AdamGng,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::SgdGng,
        OptimizerKind::AdamGng,
    ];

    pub fn rule(self) -> UpdateRule {
        match self {
            OptimizerKind::Sgd => compose(false, BaseRule::Sgd),
            OptimizerKind::Adam => compose(false, BaseRule::Adam),
            OptimizerKind::SgdGng => compose(true, BaseRule::Sgd),
            OptimizerKind::AdamGng => compose(true, BaseRule::Adam),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdGng => "sgd_gng",
            OptimizerKind::AdamGng => "adam_gng",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A composed update rule with whatever state its base rule needs.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: UpdateRule,
    lr: f64,
    adam: Option<OptimizerState>,
}

impl Optimizer {
    /// `config.lr` is the learning rate of either base rule; the remaining
    /// fields only matter for Adam.
    pub fn new(rule: UpdateRule, config: AdamConfig, q: &GaussianMeanField) -> Self {
        let adam = (rule.base == BaseRule::Adam).then(|| OptimizerState::new(config, q));
        Self {
            rule,
            lr: config.lr,
            adam,
        }
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn adam_state(&self) -> Option<&OptimizerState> {
        self.adam.as_ref()
    }

    /// Applies one update from raw gradients. Returns the gradients the base
    /// rule consumed (transformed when GNG is on).
    pub fn step(&mut self, q: &mut GaussianMeanField, raw: &GradientSet) -> Result<GradientSet> {
        let grads = if self.rule.gng {
            gng_transform(raw, q)?
        } else {
            raw.clone()
        };
        match &mut self.adam {
            Some(state) => adam_step(state, q, &grads)?,
            None => sgd_step(q, &grads, self.lr)?,
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub param_id: usize,
    pub sigma_sq: f64,
    pub g_mu: f64,
    pub g_hat_mu: f64,
    pub update: f64,
}

/// Append-only per-step trace of selected mean parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepLog {
    records: Vec<StepRecord>,
}

pub const STEP_LOG_HEADER: &str = "step,param_id,sigma_sq,g_mu,g_hat_mu,update";

impl StepLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) {
        self.records.push(record);
    }

    /// Logs `param_ids` (indices into the flattened μ channel) for one step,
    /// with `σ²` taken from the pre-update posterior.
    pub fn record(
        &mut self,
        step: u64,
        param_ids: &[usize],
        before: &GaussianMeanField,
        after: &GaussianMeanField,
        raw: &GradientSet,
    ) {
        let mu_before = before.mu().to_vec();
        let v_before = before.v().to_vec();
        let mu_after = after.mu().to_vec();
        let g = raw.mu.to_vec();
        for &id in param_ids {
            let sigma_sq = (2.0 * v_before[id]).exp();
            self.records.push(StepRecord {
                step,
                param_id: id,
                sigma_sq,
                g_mu: g[id],
                g_hat_mu: sigma_sq * g[id],
                update: mu_after[id] - mu_before[id],
            });
        }
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{STEP_LOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.param_id, r.sigma_sq, r.g_mu, r.g_hat_mu, r.update
            )?;
        }
        Ok(())
    }
}

/// Empirical step-averaged moments of one logged parameter, and how well the
/// two moment decompositions of `ĝ = σ² g` hold on the data:
///
/// * `E[ĝ] = E[σ²] E[g] + cov(σ², g)`
/// * `E[ĝ²] = (E[σ²]² + var(σ²)) E[g²] + cov(σ⁴, g²)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub param_id: usize,
    pub steps: usize,
    pub mean_g: f64,
    pub mean_g_sq: f64,
    pub mean_g_hat: f64,
    pub mean_g_hat_sq: f64,
    pub mean_sigma_sq: f64,
    pub var_sigma_sq: f64,
    pub cov_sigma_sq_g: f64,
    pub cov_sigma4_g_sq: f64,
    pub first_moment_residual: f64,
    pub second_moment_residual: f64,
}

fn population_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n
}

pub fn moment_diagnostics(log: &StepLog) -> Result<Vec<MomentReport>> {
    let mut by_param: BTreeMap<usize, Vec<&StepRecord>> = BTreeMap::new();
    for r in &log.records {
        by_param.entry(r.param_id).or_default().push(r);
    }
    if by_param.is_empty() {
        return Err(Error::Empty("step log"));
    }
    by_param
        .into_iter()
        .map(|(param_id, recs)| {
            if recs.len() < 2 {
                return Err(Error::Contract(format!(
                    "parameter {param_id} has {} logged steps; moments need at least 2",
                    recs.len()
                )));
            }
            let n = recs.len() as f64;
            let s2: Vec<f64> = recs.iter().map(|r| r.sigma_sq).collect();
            let s4: Vec<f64> = s2.iter().map(|s| s * s).collect();
            let g: Vec<f64> = recs.iter().map(|r| r.g_mu).collect();
            let g2: Vec<f64> = g.iter().map(|x| x * x).collect();
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
            let mean_g_hat = recs.iter().map(|r| r.g_hat_mu).sum::<f64>() / n;
            let mean_g_hat_sq = recs.iter().map(|r| r.g_hat_mu * r.g_hat_mu).sum::<f64>() / n;
            let mean_sigma_sq = mean(&s2);
            let var_sigma_sq = population_cov(&s2, &s2);
            let cov_sigma_sq_g = population_cov(&s2, &g);
            let cov_sigma4_g_sq = population_cov(&s4, &g2);
            let (mean_g, mean_g_sq) = (mean(&g), mean(&g2));
            Ok(MomentReport {
                param_id,
                steps: recs.len(),
                mean_g,
                mean_g_sq,
                mean_g_hat,
                mean_g_hat_sq,
                mean_sigma_sq,
                var_sigma_sq,
                cov_sigma_sq_g,
                cov_sigma4_g_sq,
                first_moment_residual: mean_g_hat - (mean_sigma_sq * mean_g + cov_sigma_sq_g),
                second_moment_residual: mean_g_hat_sq
                    - ((mean_sigma_sq * mean_sigma_sq + var_sigma_sq) * mean_g_sq
                        + cov_sigma4_g_sq),
            })
        })
        .collect()
}
