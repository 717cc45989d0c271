//! Mean-field Gaussian Bayesian MLP.
//!
//! Every weight and bias carries an independent `N(μ, σ²)` factor, stored as
//! `(μ, v)` with `v = ln σ`. A shared trunk of hidden layers feeds one or more
//! output heads; each task selects its head by index.
//!
//! Monte-Carlo samples use weight-space reparameterization `θ = μ + σ ⊙ ε`.
//! The noise `ε` lives in a [`NoiseBundle`] that callers create up front, so the
//! objective is a deterministic function of `(μ, v)` for a fixed bundle. That is
//! what lets analytic gradients be compared against finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_softmax_in_place, Rng, Tensor2};
use crate::tasks::{Targets, TaskData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Categorical,
    Gaussian { noise_var: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub likelihood: Likelihood,
}

impl Architecture {
    /// ReLU classifier `input → hidden… → classes`.
    pub fn classifier(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim: classes,
            activation: Activation::Relu,
            likelihood: Likelihood::Categorical,
        }
    }

    /// A single linear unit `y = w·x + b` with Gaussian observation noise.
    pub fn linear_regression(input_dim: usize, noise_var: f64) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            output_dim: 1,
            activation: Activation::Relu,
            likelihood: Likelihood::Gaussian { noise_var },
        }
    }

    fn head_fan_in(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    fn trunk_shapes(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.input_dim;
        self.hidden
            .iter()
            .map(|&w| {
                let s = (fan_in, w);
                fan_in = w;
                s
            })
            .collect()
    }
}

/// Weights `w` (fan_in × fan_out) and biases `b` of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w: Tensor2,
    pub b: Vec<f64>,
}

impl LayerParams {
    fn filled(fan_in: usize, fan_out: usize, value: f64) -> Self {
        Self {
            w: Tensor2::filled(fan_in, fan_out, value),
            b: vec![value; fan_out],
        }
    }

    fn from_fn(fan_in: usize, fan_out: usize, mut f: impl FnMut() -> f64) -> Self {
        let w = Tensor2::from_fn(fan_in, fan_out, |_, _| f());
        let b = (0..fan_out).map(|_| f()).collect();
        Self { w, b }
    }

    pub fn len(&self) -> usize {
        self.w.data().len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.data().iter().chain(self.b.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.data_mut().iter_mut().chain(self.b.iter_mut())
    }

    fn same_shape(&self, other: &LayerParams) -> bool {
        self.w.shape() == other.w.shape() && self.b.len() == other.b.len()
    }
}

/// One value per network parameter, laid out trunk-first then head by head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTree {
    trunk: Vec<LayerParams>,
    heads: Vec<LayerParams>,
}

impl ParamTree {
    fn filled(arch: &Architecture, n_heads: usize, value: f64) -> Self {
        Self {
            trunk: arch
                .trunk_shapes()
                .into_iter()
                .map(|(i, o)| LayerParams::filled(i, o, value))
                .collect(),
            heads: (0..n_heads)
                .map(|_| LayerParams::filled(arch.head_fan_in(), arch.output_dim, value))
                .collect(),
        }
    }

    pub fn trunk(&self) -> &[LayerParams] {
        &self.trunk
    }

    pub fn heads(&self) -> &[LayerParams] {
        &self.heads
    }

    pub fn trunk_mut(&mut self) -> &mut [LayerParams] {
        &mut self.trunk
    }

    pub fn head_mut(&mut self, head: usize) -> &mut LayerParams {
        &mut self.heads[head]
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.trunk.iter().chain(self.heads.iter())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers().flat_map(LayerParams::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .flat_map(LayerParams::values_mut)
    }

    pub fn len(&self) -> usize {
        self.layers().map(LayerParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ParamTree) -> bool {
        self.trunk.len() == other.trunk.len()
            && self.heads.len() == other.heads.len()
            && self
                .layers()
                .zip(other.layers())
                .all(|(a, b)| a.same_shape(b))
    }

    /// Flat index range occupied by `head` in [`ParamTree::values`] order.
    pub fn head_range(&self, head: usize) -> std::ops::Range<usize> {
        let start: usize = self.trunk.iter().map(LayerParams::len).sum::<usize>()
            + self.heads[..head]
                .iter()
                .map(LayerParams::len)
                .sum::<usize>();
        start..start + self.heads[head].len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn zero_heads_except(&mut self, keep: &[usize]) {
        for (h, layer) in self.heads.iter_mut().enumerate() {
            if !keep.contains(&h) {
                layer.values_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Mean-field Gaussian posterior (or prior) over all network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeanField {
    arch: Architecture,
    mu: ParamTree,
    v: ParamTree,
}

/// Initial posterior: means drawn from `N(0, mean_std²)`, every `σ = sigma0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub mean_std: f64,
    pub sigma0: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mean_std: 0.1,
            sigma0: (-3.0f64).exp(),
        }
    }
}

impl GaussianMeanField {
    pub fn init(
        arch: Architecture,
        n_heads: usize,
        init: InitConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(init.sigma0 > 0.0) {
            return Err(Error::Contract(format!(
                "sigma0 must be > 0, got {}",
                init.sigma0
            )));
        }
        let mut mu = ParamTree::filled(&arch, n_heads, 0.0);
        for v in mu.values_mut() {
            *v = init.mean_std * rng.standard_normal();
        }
        let v = ParamTree::filled(&arch, n_heads, init.sigma0.ln());
        Ok(Self { arch, mu, v })
    }

    /// `N(0, 1)` on every parameter.
    pub fn standard_prior(arch: Architecture, n_heads: usize) -> Self {
        Self {
            mu: ParamTree::filled(&arch, n_heads, 0.0),
            v: ParamTree::filled(&arch, n_heads, 0.0),
            arch,
        }
    }

    /// Explicit means and log-standard-deviations; shapes must agree.
    pub fn from_parts(arch: Architecture, mu: ParamTree, v: ParamTree) -> Result<Self> {
        let reference = ParamTree::filled(&arch, mu.heads.len(), 0.0);
        if !reference.same_shape(&mu) || !reference.same_shape(&v) {
            return Err(Error::shape(
                "GaussianMeanField::from_parts",
                "architecture shapes",
                "mismatched trees",
            ));
        }
        Ok(Self { arch, mu, v })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn mu(&self) -> &ParamTree {
        &self.mu
    }

    pub fn v(&self) -> &ParamTree {
        &self.v
    }

    pub fn mu_mut(&mut self) -> &mut ParamTree {
        &mut self.mu
    }

    pub fn v_mut(&mut self) -> &mut ParamTree {
        &mut self.v
    }

    /// Both channels at once, `(μ, v)`.
    pub fn channels_mut(&mut self) -> (&mut ParamTree, &mut ParamTree) {
        (&mut self.mu, &mut self.v)
    }

    /// `σ = exp(v)` per parameter.
    pub fn sigma(&self) -> ParamTree {
        let mut sigma = self.v.clone();
        sigma.values_mut().for_each(|v| *v = v.exp());
        sigma
    }

    pub fn n_heads(&self) -> usize {
        self.mu.heads.len()
    }

    pub fn n_params(&self) -> usize {
        self.mu.len()
    }

    pub fn same_shape(&self, other: &GaussianMeanField) -> bool {
        self.mu.same_shape(&other.mu)
    }

    /// Appends a head with the standard-normal prior `μ = 0, σ = 1`.
    pub fn append_prior_head(&mut self) -> usize {
        let (i, o) = (self.arch.head_fan_in(), self.arch.output_dim);
        self.mu.heads.push(LayerParams::filled(i, o, 0.0));
        self.v.heads.push(LayerParams::filled(i, o, 0.0));
        self.mu.heads.len() - 1
    }

    /// Appends a freshly initialized head.
    pub fn append_init_head(&mut self, init: InitConfig, rng: &mut Rng) -> usize {
        let (i, o) = (self.arch.head_fan_in(), self.arch.output_dim);
        self.mu.heads.push(LayerParams::from_fn(i, o, || {
            init.mean_std * rng.standard_normal()
        }));
        self.v
            .heads
            .push(LayerParams::filled(i, o, init.sigma0.ln()));
        self.mu.heads.len() - 1
    }

    /// `[μ…, v…]` in parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.mu.values().chain(self.v.values()).copied().collect()
    }

    /// Inverse of [`GaussianMeanField::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.n_params();
        if flat.len() != 2 * n {
            return Err(Error::shape(
                "GaussianMeanField::set_flat",
                2 * n,
                flat.len(),
            ));
        }
        for (dst, src) in self.mu.values_mut().chain(self.v.values_mut()).zip(flat) {
            *dst = *src;
        }
        Ok(())
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.n_heads() {
            return Err(Error::UnknownHead {
                head,
                available: self.n_heads(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.arch.input_dim {
            return Err(Error::shape(
                "network input columns",
                self.arch.input_dim,
                x.cols(),
            ));
        }
        Ok(())
    }

    /// `θ = μ + σ ⊙ ε` for the trunk followed by `head`.
    fn sample_layers(&self, eps: &ParamTree, head: usize) -> Vec<LayerParams> {
        let sample = |mu: &LayerParams, v: &LayerParams, e: &LayerParams| {
            let w =
                mu.w.data()
                    .iter()
                    .zip(v.w.data())
                    .zip(e.w.data())
                    .map(|((&m, &lv), &z)| m + lv.exp() * z)
                    .collect();
            LayerParams {
                w: Tensor2::from_vec(mu.w.rows(), mu.w.cols(), w).expect("same shape"),
                b: mu
                    .b
                    .iter()
                    .zip(&v.b)
                    .zip(&e.b)
                    .map(|((&m, &lv), &z)| m + lv.exp() * z)
                    .collect(),
            }
        };
        let mut layers: Vec<LayerParams> = self
            .mu
            .trunk
            .iter()
            .zip(&self.v.trunk)
            .zip(&eps.trunk)
            .map(|((m, v), e)| sample(m, v, e))
            .collect();
        layers.push(sample(
            &self.mu.heads[head],
            &self.v.heads[head],
            &eps.heads[head],
        ));
        layers
    }
}

/// `∂L/∂μ` and `∂L/∂v`, shaped like the posterior they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub mu: ParamTree,
    pub v: ParamTree,
}

impl GradientSet {
    pub fn zeros_like(q: &GaussianMeanField) -> Self {
        Self {
            mu: ParamTree::filled(&q.arch, q.n_heads(), 0.0),
            v: ParamTree::filled(&q.arch, q.n_heads(), 0.0),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.mu.values().chain(self.v.values()).copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.mu.all_finite() && self.v.all_finite()
    }

    pub fn is_congruent(&self, q: &GaussianMeanField) -> bool {
        self.mu.same_shape(&q.mu) && self.v.same_shape(&q.v)
    }

    /// Zeroes every head not listed in `keep`.
    pub fn zero_heads_except(&mut self, keep: &[usize]) {
        self.mu.zero_heads_except(keep);
        self.v.zero_heads_except(keep);
    }
}

/// Frozen standard-normal draws, one parameter tree per Monte-Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    samples: Vec<ParamTree>,
}

impl NoiseBundle {
    pub fn sample(q: &GaussianMeanField, n_samples: usize, rng: &mut Rng) -> Self {
        let heads: Vec<usize> = (0..q.n_heads()).collect();
        Self::sample_heads(q, n_samples, &heads, rng)
    }

    /// Draws for the trunk and the listed heads only; other heads get zeros.
    pub fn sample_heads(
        q: &GaussianMeanField,
        n_samples: usize,
        heads: &[usize],
        rng: &mut Rng,
    ) -> Self {
        let samples = (0..n_samples)
            .map(|_| {
                let mut tree = ParamTree::filled(&q.arch, q.n_heads(), 0.0);
                for layer in &mut tree.trunk {
                    rng.fill_standard_normal(layer.w.data_mut());
                    rng.fill_standard_normal(&mut layer.b);
                }
                for &h in heads {
                    let layer = &mut tree.heads[h];
                    rng.fill_standard_normal(layer.w.data_mut());
                    rng.fill_standard_normal(&mut layer.b);
                }
                tree
            })
            .collect();
        Self { samples }
    }

    /// All-zero noise: every sample is the posterior-mean network.
    pub fn zeros(q: &GaussianMeanField, n_samples: usize) -> Self {
        Self {
            samples: (0..n_samples)
                .map(|_| ParamTree::filled(&q.arch, q.n_heads(), 0.0))
                .collect(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[ParamTree] {
        &self.samples
    }

    fn check(&self, q: &GaussianMeanField) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Empty("noise bundle"));
        }
        if !self.samples.iter().all(|s| s.same_shape(&q.mu)) {
            return Err(Error::shape(
                "NoiseBundle",
                "posterior shape",
                "different shape",
            ));
        }
        Ok(())
    }
}

struct Pass {
    pre: Vec<Tensor2>,
    act: Vec<Tensor2>,
}

impl Pass {
    fn output(&self) -> &Tensor2 {
        self.pre.last().expect("at least one layer")
    }
}

fn run_layers(layers: &[LayerParams], x: &Tensor2, activation: Activation) -> Result<Pass> {
    let mut pre = Vec::with_capacity(layers.len());
    let mut act: Vec<Tensor2> = Vec::with_capacity(layers.len() - 1);
    for (l, layer) in layers.iter().enumerate() {
        let input = if l == 0 { x } else { &act[l - 1] };
        let mut z = input.matmul(&layer.w)?;
        z.add_row_vector(&layer.b)?;
        if l + 1 < layers.len() {
            act.push(z.map(|v| activation.apply(v)));
        }
        pre.push(z);
    }
    Ok(Pass { pre, act })
}

/// Backpropagates `d_out` (gradient w.r.t. the output pre-activation).
/// Returns parameter gradients per layer and, if asked, the input gradient.
fn backprop(
    layers: &[LayerParams],
    x: &Tensor2,
    pass: &Pass,
    d_out: Tensor2,
    activation: Activation,
    want_input_grad: bool,
) -> Result<(Vec<LayerParams>, Option<Tensor2>)> {
    let n = layers.len();
    let mut grads: Vec<Option<LayerParams>> = (0..n).map(|_| None).collect();
    let mut delta = d_out;
    let mut d_input = None;
    for l in (0..n).rev() {
        let input = if l == 0 { x } else { &pass.act[l - 1] };
        grads[l] = Some(LayerParams {
            w: input.matmul_tn(&delta)?,
            b: delta.column_sums(),
        });
        if l > 0 {
            let mut da = delta.matmul_nt(&layers[l].w)?;
            for (d, &z) in da.data_mut().iter_mut().zip(pass.pre[l - 1].data()) {
                *d *= activation.derivative(z);
            }
            delta = da;
        } else if want_input_grad {
            d_input = Some(delta.matmul_nt(&layers[0].w)?);
        }
    }
    Ok((
        grads.into_iter().map(|g| g.expect("filled")).collect(),
        d_input,
    ))
}

/// Logits (or regression outputs) for each Monte-Carlo sample in `noise`.
pub fn forward(
    q: &GaussianMeanField,
    x: &Tensor2,
    noise: &NoiseBundle,
    head: usize,
) -> Result<Vec<Tensor2>> {
    q.check_head(head)?;
    q.check_input(x)?;
    noise.check(q)?;
    noise
        .samples
        .iter()
        .map(|eps| {
            let layers = q.sample_layers(eps, head);
            Ok(run_layers(&layers, x, q.arch.activation)?
                .pre
                .pop()
                .expect("output layer"))
        })
        .collect()
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean over samples of `Σ_batch log softmax(logits)[y]`.
pub fn categorical_loglik(logits: &[Tensor2], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty("categorical_loglik samples"));
    }
    let mut total = 0.0;
    for sample in logits {
        if sample.rows() != labels.len() {
            return Err(Error::shape(
                "categorical_loglik batch",
                sample.rows(),
                labels.len(),
            ));
        }
        check_labels(labels, sample.cols())?;
        let mut row = vec![0.0; sample.cols()];
        for (r, &y) in labels.iter().enumerate() {
            row.copy_from_slice(sample.row(r));
            log_softmax_in_place(&mut row);
            total += row[y];
        }
    }
    Ok(total / logits.len() as f64)
}

/// `log N(y; pred, noise_var)`.
pub fn gaussian_loglik(pred: f64, y: f64, noise_var: f64) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::Contract(format!(
            "noise variance must be > 0, got {noise_var}"
        )));
    }
    let r = y - pred;
    Ok(-0.5 * (2.0 * std::f64::consts::PI * noise_var).ln() - r * r / (2.0 * noise_var))
}

/// `KL(q ‖ p)` summed over all parameters of two congruent mean-field Gaussians.
pub fn kl_diag_gauss(q: &GaussianMeanField, p: &GaussianMeanField) -> Result<f64> {
    if !q.same_shape(p) {
        return Err(Error::shape(
            "kl_diag_gauss",
            "congruent posteriors",
            "different shapes",
        ));
    }
    let mut kl = 0.0;
    for (((&mq, &vq), &mp), &vp) in
        q.mu.values()
            .zip(q.v.values())
            .zip(p.mu.values())
            .zip(p.v.values())
    {
        let var_ratio = (2.0 * (vq - vp)).exp();
        let d = mq - mp;
        kl += vp - vq + 0.5 * (var_ratio + d * d * (-2.0 * vp).exp()) - 0.5;
    }
    Ok(kl)
}

/// One data term of the objective: the mean log-likelihood over `data`,
/// multiplied by `weight`.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodTerm<'a> {
    pub data: &'a TaskData,
    pub weight: f64,
}

/// Gradient of the per-example negative log-likelihood w.r.t. the network
/// output, plus the summed log-likelihood.
fn output_grad(
    likelihood: Likelihood,
    out: &Tensor2,
    targets: &Targets,
    scale: f64,
) -> Result<(f64, Tensor2)> {
    let mut d = Tensor2::zeros(out.rows(), out.cols());
    let mut ll = 0.0;
    match (likelihood, targets) {
        (Likelihood::Categorical, Targets::Classes { labels, .. }) => {
            check_labels(labels, out.cols())?;
            for (r, &y) in labels.iter().enumerate() {
                let row = d.row_mut(r);
                row.copy_from_slice(out.row(r));
                log_softmax_in_place(row);
                ll += row[y];
                for v in row.iter_mut() {
                    *v = v.exp() * scale;
                }
                row[y] -= scale;
            }
        }
        (Likelihood::Gaussian { noise_var }, Targets::Real(y)) => {
            if out.cols() != 1 {
                return Err(Error::shape("gaussian likelihood output", 1, out.cols()));
            }
            let log_norm = -0.5 * (2.0 * std::f64::consts::PI * noise_var).ln();
            for (r, &target) in y.iter().enumerate() {
                let resid = out.get(r, 0) - target;
                ll += log_norm - resid * resid / (2.0 * noise_var);
                d.set(r, 0, scale * resid / noise_var);
            }
        }
        _ => {
            return Err(Error::Contract(
                "targets do not match the model likelihood".into(),
            ))
        }
    }
    Ok((ll, d))
}

/// `−Σ_terms weight·mean_loglik + kl_scale·KL(q ‖ prior)` and its gradients
/// w.r.t. `(μ, v)`, by backpropagation through the reparameterized samples.
pub fn objective_and_grads(
    q: &GaussianMeanField,
    prior: &GaussianMeanField,
    terms: &[LikelihoodTerm<'_>],
    noise: &NoiseBundle,
    kl_scale: f64,
) -> Result<(f64, GradientSet)> {
    if !q.same_shape(prior) {
        return Err(Error::shape(
            "objective prior",
            "congruent with posterior",
            "different shape",
        ));
    }
    noise.check(q)?;
    let terms: Vec<&LikelihoodTerm<'_>> = terms.iter().filter(|t| !t.data.is_empty()).collect();
    for t in &terms {
        q.check_head(t.data.head)?;
        q.check_input(&t.data.inputs)?;
    }

    let n_samples = noise.n_samples() as f64;
    let mut loss = 0.0;
    let mut grads = GradientSet::zeros_like(q);
    let activation = q.arch.activation;

    for eps in &noise.samples {
        let mut d_theta = ParamTree::filled(&q.arch, q.n_heads(), 0.0);
        for t in &terms {
            let head = t.data.head;
            let layers = q.sample_layers(eps, head);
            let pass = run_layers(&layers, &t.data.inputs, activation)?;
            let scale = t.weight / (n_samples * t.data.len() as f64);
            let (ll, d_out) =
                output_grad(q.arch.likelihood, pass.output(), &t.data.targets, scale)?;
            loss -= scale * ll;
            let (layer_grads, _) =
                backprop(&layers, &t.data.inputs, &pass, d_out, activation, false)?;
            let n_trunk = q.mu.trunk.len();
            for (dst, src) in d_theta.trunk.iter_mut().zip(&layer_grads[..n_trunk]) {
                add_into(dst, src);
            }
            add_into(&mut d_theta.heads[head], &layer_grads[n_trunk]);
        }
        // ∂θ/∂μ = 1, ∂θ/∂v = σ ⊙ ε
        for (((gm, gv), (&dt, &v)), &e) in grads
            .mu
            .values_mut()
            .zip(grads.v.values_mut())
            .zip(d_theta.values().zip(q.v.values()))
            .zip(eps.values())
        {
            *gm += dt;
            *gv += dt * v.exp() * e;
        }
    }

    if kl_scale != 0.0 {
        loss += kl_scale * kl_diag_gauss(q, prior)?;
        for ((gm, gv), (((&mq, &vq), &mp), &vp)) in
            grads.mu.values_mut().zip(grads.v.values_mut()).zip(
                q.mu.values()
                    .zip(q.v.values())
                    .zip(prior.mu.values())
                    .zip(prior.v.values()),
            )
        {
            let inv_var_p = (-2.0 * vp).exp();
            *gm += kl_scale * (mq - mp) * inv_var_p;
            *gv += kl_scale * ((2.0 * (vq - vp)).exp() - 1.0);
        }
    }
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::NonFinite("objective or gradient".into()));
    }
    Ok((loss, grads))
}

fn add_into(dst: &mut LayerParams, src: &LayerParams) {
    for (d, s) in dst.values_mut().zip(src.values()) {
        *d += s;
    }
}

/// Minibatch negative ELBO `−mean_loglik(batch) + kl_scale·KL(q ‖ prior)`.
///
/// With `kl_scale = 1/N` for a task of `N` examples, this is the task's
/// negative ELBO divided by `N`. An empty batch leaves only the KL term.
pub fn elbo_and_grads(
    q: &GaussianMeanField,
    prior: &GaussianMeanField,
    batch: &TaskData,
    noise: &NoiseBundle,
    kl_scale: f64,
) -> Result<(f64, GradientSet)> {
    objective_and_grads(
        q,
        prior,
        &[LikelihoodTerm {
            data: batch,
            weight: 1.0,
        }],
        noise,
        kl_scale,
    )
}

/// `∇ₓ` of the sample-averaged `Σᵢ log p(yᵢ | xᵢ, θ)`, one row per input row.
pub fn input_grads(
    q: &GaussianMeanField,
    x: &Tensor2,
    labels: &[usize],
    noise: &NoiseBundle,
    head: usize,
) -> Result<Tensor2> {
    q.check_head(head)?;
    q.check_input(x)?;
    noise.check(q)?;
    if labels.len() != x.rows() {
        return Err(Error::shape("input_grads labels", x.rows(), labels.len()));
    }
    if q.arch.likelihood != Likelihood::Categorical {
        return Err(Error::Contract(
            "input gradients need a categorical model".into(),
        ));
    }
    let targets = Targets::Classes {
        labels: labels.to_vec(),
        n_classes: q.arch.output_dim,
    };
    let scale = 1.0 / noise.n_samples() as f64;
    let mut total = Tensor2::zeros(x.rows(), x.cols());
    for eps in &noise.samples {
        let layers = q.sample_layers(eps, head);
        let pass = run_layers(&layers, x, q.arch.activation)?;
        // output_grad yields ∂(−ll)/∂out; flip the sign for ascent on ll
        let (_, d_out) = output_grad(q.arch.likelihood, pass.output(), &targets, -scale)?;
        let (_, dx) = backprop(&layers, x, &pass, d_out, q.arch.activation, true)?;
        let dx = dx.expect("requested");
        for (t, d) in total.data_mut().iter_mut().zip(dx.data()) {
            *t += d;
        }
    }
    Ok(total)
}

/// Single-example convenience over [`input_grads`].
pub fn input_grad(
    q: &GaussianMeanField,
    x: &[f64],
    label: usize,
    noise: &NoiseBundle,
    head: usize,
) -> Result<Vec<f64>> {
    let x = Tensor2::from_vec(1, x.len(), x.to_vec())?;
    Ok(input_grads(q, &x, &[label], noise, head)?.into_vec())
}

/// Softmax of each sample's logits, averaged over the samples in `noise`.
pub fn predict_with_noise(
    q: &GaussianMeanField,
    x: &Tensor2,
    noise: &NoiseBundle,
    head: usize,
) -> Result<Tensor2> {
    let logits = forward(q, x, noise, head)?;
    let mut probs = Tensor2::zeros(x.rows(), q.arch.output_dim);
    let scale = 1.0 / logits.len() as f64;
    let mut row = vec![0.0; q.arch.output_dim];
    for sample in &logits {
        for r in 0..sample.rows() {
            row.copy_from_slice(sample.row(r));
            log_softmax_in_place(&mut row);
            for (p, l) in probs.row_mut(r).iter_mut().zip(&row) {
                *p += scale * l.exp();
            }
        }
    }
    Ok(probs)
}

/// Monte-Carlo predictive class probabilities from `n_samples` fresh draws.
pub fn predict(
    q: &GaussianMeanField,
    x: &Tensor2,
    n_samples: usize,
    rng: &mut Rng,
    head: usize,
) -> Result<Tensor2> {
    if n_samples == 0 {
        return Err(Error::Contract("predict needs at least one sample".into()));
    }
    q.check_head(head)?;
    let mut probs = Tensor2::zeros(x.rows(), q.arch.output_dim);
    for _ in 0..n_samples {
        let noise = NoiseBundle::sample_heads(q, 1, &[head], rng);
        let p = predict_with_noise(q, x, &noise, head)?;
        for (a, b) in probs.data_mut().iter_mut().zip(p.data()) {
            *a += b / n_samples as f64;
        }
    }
    Ok(probs)
}

/// The objective of [`objective_and_grads`] as a function of the flattened
/// `(μ, v)` vector, for finite-difference checks.
pub fn flat_objective<'a>(
    template: &'a GaussianMeanField,
    prior: &'a GaussianMeanField,
    terms: &'a [LikelihoodTerm<'a>],
    noise: &'a NoiseBundle,
    kl_scale: f64,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |flat: &[f64]| {
        let mut q = template.clone();
        q.set_flat(flat).expect("flat length");
        objective_and_grads(&q, prior, terms, noise, kl_scale).map_or(f64::NAN, |(loss, _)| loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::finite_diff_grad;
    use crate::math::Rng;
    use proptest::prelude::*;

    fn toy_arch() -> Architecture {
        Architecture::classifier(2, &[3], 2)
    }

    fn toy_batch(rng: &mut Rng, n: usize) -> TaskData {
        let x = Tensor2::from_fn(n, 2, |_, _| rng.standard_normal());
        let labels = (0..n).map(|_| rng.below(2)).collect();
        TaskData::classification("toy", x, labels, 2, 0).unwrap()
    }

    fn deterministic_mlp(q: &GaussianMeanField, x: &Tensor2, head: usize) -> Tensor2 {
        // straightforward loops as an independent reference
        let act = |v: f64| v.max(0.0);
        let mut a: Vec<Vec<f64>> = x.row_iter().map(<[f64]>::to_vec).collect();
        let layers: Vec<&LayerParams> = q
            .mu()
            .trunk()
            .iter()
            .chain(std::iter::once(&q.mu().heads()[head]))
            .collect();
        for (l, layer) in layers.iter().enumerate() {
            a = a
                .iter()
                .map(|row| {
                    (0..layer.w.cols())
                        .map(|j| {
                            let z: f64 = row
                                .iter()
                                .enumerate()
                                .map(|(i, xi)| xi * layer.w.get(i, j))
                                .sum::<f64>()
                                + layer.b[j];
                            if l + 1 < layers.len() {
                                act(z)
                            } else {
                                z
                            }
                        })
                        .collect()
                })
                .collect();
        }
        Tensor2::from_rows(&a).unwrap()
    }

    #[test]
    fn zero_noise_forward_is_mean_network() {
        let mut rng = Rng::new(1);
        let q = GaussianMeanField::init(
            Architecture::classifier(4, &[5, 3], 3),
            2,
            InitConfig::default(),
            &mut rng,
        )
        .unwrap();
        let x = Tensor2::from_fn(6, 4, |_, _| rng.uniform());
        let noise = NoiseBundle::zeros(&q, 2);
        for head in 0..2 {
            let out = forward(&q, &x, &noise, head).unwrap();
            let reference = deterministic_mlp(&q, &x, head);
            for sample in &out {
                for (a, b) in sample.data().iter().zip(reference.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_means_give_uniform_predictive() {
        let arch = Architecture::classifier(4, &[5], 10);
        let q = GaussianMeanField::standard_prior(arch, 1);
        let x = Tensor2::filled(3, 4, 0.7);
        let noise = NoiseBundle::zeros(&q, 1);
        let logits = forward(&q, &x, &noise, 0).unwrap();
        assert!(logits[0].data().iter().all(|&v| v == 0.0));
        let p = predict_with_noise(&q, &x, &noise, 0).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn fixed_noise_is_deterministic() {
        let mut rng = Rng::new(2);
        let q = GaussianMeanField::init(toy_arch(), 1, InitConfig::default(), &mut rng).unwrap();
        let noise = NoiseBundle::sample(&q, 3, &mut rng);
        let x = Tensor2::from_fn(4, 2, |_, _| rng.standard_normal());
        assert_eq!(
            forward(&q, &x, &noise, 0).unwrap(),
            forward(&q, &x, &noise, 0).unwrap()
        );
    }

    #[test]
    fn forward_errors() {
        let mut rng = Rng::new(2);
        let q = GaussianMeanField::init(toy_arch(), 1, InitConfig::default(), &mut rng).unwrap();
        let noise = NoiseBundle::zeros(&q, 1);
        assert!(matches!(
            forward(&q, &Tensor2::zeros(1, 3), &noise, 0),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            forward(&q, &Tensor2::zeros(1, 2), &noise, 1),
            Err(Error::UnknownHead { .. })
        ));
    }

    #[test]
    fn categorical_loglik_examples() {
        let uniform = vec![Tensor2::zeros(1, 10)];
        assert!((categorical_loglik(&uniform, &[3]).unwrap() + 10f64.ln()).abs() < 1e-12);
        let confident = vec![Tensor2::from_vec(1, 2, vec![500.0, 0.0]).unwrap()];
        assert!(categorical_loglik(&confident, &[0]).unwrap().abs() < 1e-12);
        assert!(matches!(
            categorical_loglik(&uniform, &[10]),
            Err(Error::LabelOutOfRange { .. })
        ));

        let a = Tensor2::from_vec(2, 3, vec![0.1, 0.5, -1.0, 2.0, 0.0, 0.3]).unwrap();
        let b = Tensor2::from_vec(1, 3, vec![-0.2, 0.9, 0.4]).unwrap();
        let ab = a.vstack(&b).unwrap();
        let joint = categorical_loglik(&[ab], &[1, 0, 2]).unwrap();
        let split =
            categorical_loglik(&[a], &[1, 0]).unwrap() + categorical_loglik(&[b], &[2]).unwrap();
        assert!((joint - split).abs() < 1e-12);
    }

    #[test]
    fn gaussian_loglik_examples() {
        // −½ ln(2π · 0.1)
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 0.1).ln();
        assert!((expected - 0.232_354_8).abs() < 1e-6);
        assert!((gaussian_loglik(1.3, 1.3, 0.1).unwrap() - expected).abs() < 1e-12);
        let var = 1.0 / (2.0 * std::f64::consts::PI);
        assert!(gaussian_loglik(0.0, 0.0, var).unwrap().abs() < 1e-12);
        let mut last = f64::INFINITY;
        for d in [0.0, 0.1, 0.5, 1.0, 3.0] {
            let ll = gaussian_loglik(d, 0.0, 0.1).unwrap();
            assert!(ll < last);
            last = ll;
        }
        assert!(gaussian_loglik(0.0, 0.0, 0.0).is_err());
    }

    fn single_weight(mu: f64, sigma: f64) -> GaussianMeanField {
        // 1 → 1 linear unit; set the bias factor equal in both distributions
        let arch = Architecture::linear_regression(1, 0.1);
        let mut q = GaussianMeanField::standard_prior(arch, 1);
        q.mu_mut().head_mut(0).w.set(0, 0, mu);
        q.v_mut().head_mut(0).w.set(0, 0, sigma.ln());
        q
    }

    #[test]
    fn kl_examples() {
        let p = single_weight(0.0, 1.0);
        assert_eq!(kl_diag_gauss(&p, &p).unwrap(), 0.0);
        assert!((kl_diag_gauss(&single_weight(1.0, 1.0), &p).unwrap() - 0.5).abs() < 1e-12);
        let expected = 0.5f64.ln() + 2.0 - 0.5;
        assert!((expected - 0.806_85).abs() < 1e-5);
        assert!((kl_diag_gauss(&single_weight(0.0, 2.0), &p).unwrap() - expected).abs() < 1e-12);
        let other = GaussianMeanField::standard_prior(toy_arch(), 1);
        assert!(kl_diag_gauss(&p, &other).is_err());
    }

    #[test]
    fn empty_batch_at_prior_is_stationary() {
        let mut rng = Rng::new(3);
        let prior =
            GaussianMeanField::init(toy_arch(), 1, InitConfig::default(), &mut rng).unwrap();
        let empty = TaskData::classification("empty", Tensor2::zeros(0, 2), vec![], 2, 0).unwrap();
        let noise = NoiseBundle::sample(&prior, 2, &mut rng);
        let (loss, grads) = elbo_and_grads(&prior, &prior, &empty, &noise, 0.01).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn kl_scale_zero_is_maximum_likelihood() {
        let mut rng = Rng::new(4);
        let q = GaussianMeanField::init(toy_arch(), 1, InitConfig::default(), &mut rng).unwrap();
        let prior_a = GaussianMeanField::standard_prior(toy_arch(), 1);
        let prior_b = GaussianMeanField::init(
            toy_arch(),
            1,
            InitConfig {
                mean_std: 1.0,
                sigma0: 0.3,
            },
            &mut rng,
        )
        .unwrap();
        let batch = toy_batch(&mut rng, 5);
        let noise = NoiseBundle::sample(&q, 2, &mut rng);
        let (la, ga) = elbo_and_grads(&q, &prior_a, &batch, &noise, 0.0).unwrap();
        let (lb, gb) = elbo_and_grads(&q, &prior_b, &batch, &noise, 0.0).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ga, gb);
        let logits = forward(&q, &batch.inputs, &noise, 0).unwrap();
        let ll = categorical_loglik(&logits, batch.labels().unwrap()).unwrap();
        assert!((la + ll / 5.0).abs() < 1e-12);
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn regression_gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let arch = Architecture::linear_regression(1, 0.1);
        let q = GaussianMeanField::init(
            arch.clone(),
            1,
            InitConfig {
                mean_std: 0.5,
                sigma0: 0.4,
            },
            &mut rng,
        )
        .unwrap();
        let prior = GaussianMeanField::init(
            arch,
            1,
            InitConfig {
                mean_std: 0.5,
                sigma0: 0.7,
            },
            &mut rng,
        )
        .unwrap();
        let x = Tensor2::from_fn(7, 1, |_, _| rng.uniform_in(-1.0, 1.0));
        let y = (0..7).map(|_| rng.standard_normal()).collect();
        let data = TaskData::regression("lr", x, y, 0).unwrap();
        let noise = NoiseBundle::sample(&q, 3, &mut rng);
        let terms = [LikelihoodTerm {
            data: &data,
            weight: 1.0,
        }];
        let (_, grads) = objective_and_grads(&q, &prior, &terms, &noise, 0.2).unwrap();
        let fd = finite_diff_grad(
            flat_objective(&q, &prior, &terms, &noise, 0.2),
            &q.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(max_rel_err(&grads.to_flat(), &fd) < 1e-6);
    }

    #[test]
    fn weighted_terms_on_two_heads_match_finite_differences() {
        let mut rng = Rng::new(6);
        let arch = Architecture::classifier(3, &[4], 2);
        let q = GaussianMeanField::init(
            arch.clone(),
            2,
            InitConfig {
                mean_std: 0.5,
                sigma0: 0.3,
            },
            &mut rng,
        )
        .unwrap();
        let prior = GaussianMeanField::standard_prior(arch, 2);
        let mk = |rng: &mut Rng, head| {
            let x = Tensor2::from_fn(4, 3, |_, _| rng.standard_normal());
            TaskData::classification("t", x, (0..4).map(|i| i % 2).collect(), 2, head).unwrap()
        };
        let (a, b) = (mk(&mut rng, 0), mk(&mut rng, 1));
        let terms = [
            LikelihoodTerm {
                data: &a,
                weight: 1.0,
            },
            LikelihoodTerm {
                data: &b,
                weight: 0.3,
            },
        ];
        let noise = NoiseBundle::sample(&q, 2, &mut rng);
        let (_, grads) = objective_and_grads(&q, &prior, &terms, &noise, 0.05).unwrap();
        let fd = finite_diff_grad(
            flat_objective(&q, &prior, &terms, &noise, 0.05),
            &q.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(max_rel_err(&grads.to_flat(), &fd) < 1e-4);
    }

    #[test]
    fn input_grad_linear_softmax_closed_form() {
        let mut rng = Rng::new(7);
        let arch = Architecture::classifier(3, &[], 4);
        let q = GaussianMeanField::init(
            arch,
            1,
            InitConfig {
                mean_std: 0.8,
                sigma0: 0.1,
            },
            &mut rng,
        )
        .unwrap();
        let x = [0.2, -0.4, 0.9];
        let y = 2;
        let noise = NoiseBundle::zeros(&q, 1);
        let g = input_grad(&q, &x, y, &noise, 0).unwrap();

        let w = &q.mu().heads()[0].w;
        let b = &q.mu().heads()[0].b;
        let logits: Vec<f64> = (0..4)
            .map(|k| (0..3).map(|i| x[i] * w.get(i, k)).sum::<f64>() + b[k])
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        for (i, gi) in g.iter().enumerate() {
            let expected: f64 = (0..4)
                .map(|k| (f64::from(u8::from(k == y)) - p[k]) * w.get(i, k))
                .sum();
            assert!((gi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let arch = Architecture::classifier(5, &[6, 4], 3);
        let q = GaussianMeanField::init(
            arch,
            1,
            InitConfig {
                mean_std: 0.6,
                sigma0: 0.2,
            },
            &mut rng,
        )
        .unwrap();
        let noise = NoiseBundle::sample(&q, 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
        let g = input_grad(&q, &x, 1, &noise, 0).unwrap();
        let f = |xs: &[f64]| {
            let t = Tensor2::from_vec(1, 5, xs.to_vec()).unwrap();
            categorical_loglik(&forward(&q, &t, &noise, 0).unwrap(), &[1]).unwrap()
        };
        let fd = finite_diff_grad(f, &x, 1e-5).unwrap();
        assert!(max_rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn input_grad_is_per_point() {
        let mut rng = Rng::new(9);
        let q = GaussianMeanField::init(
            Architecture::classifier(3, &[4], 2),
            1,
            InitConfig::default(),
            &mut rng,
        )
        .unwrap();
        let noise = NoiseBundle::sample(&q, 2, &mut rng);
        let x = Tensor2::from_fn(2, 3, |_, _| rng.uniform());
        let single = input_grads(&q, &x, &[0, 1], &noise, 0).unwrap();
        let doubled = input_grads(&q, &x.vstack(&x).unwrap(), &[0, 1, 0, 1], &noise, 0).unwrap();
        for r in 0..2 {
            assert_eq!(single.row(r), doubled.row(r));
            assert_eq!(single.row(r), doubled.row(r + 2));
        }
    }

    #[test]
    fn predict_rows_are_distributions() {
        let mut rng = Rng::new(10);
        let q = GaussianMeanField::init(
            Architecture::classifier(4, &[8], 5),
            1,
            InitConfig {
                mean_std: 0.5,
                sigma0: 0.3,
            },
            &mut rng,
        )
        .unwrap();
        let x = Tensor2::from_fn(10, 4, |_, _| rng.uniform());
        let p = predict(&q, &x, 7, &mut rng, 0).unwrap();
        for row in p.row_iter() {
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(predict(&q, &x, 0, &mut rng, 0).is_err());
    }

    #[test]
    fn predictive_variance_shrinks_with_samples() {
        let mut rng = Rng::new(11);
        let q = GaussianMeanField::init(
            Architecture::classifier(3, &[6], 3),
            1,
            InitConfig {
                mean_std: 0.5,
                sigma0: 0.8,
            },
            &mut rng,
        )
        .unwrap();
        let x = Tensor2::from_vec(1, 3, vec![0.3, 0.6, 0.9]).unwrap();
        let spread = |n: usize, rng: &mut Rng| {
            let draws: Vec<f64> = (0..30)
                .map(|_| predict(&q, &x, n, rng, 0).unwrap().get(0, 0))
                .collect();
            crate::math::variance(&draws)
        };
        let (v10, v1000) = (spread(10, &mut rng), spread(1000, &mut rng));
        // Monte-Carlo variance scales as 1/n, so 100x fewer samples should be far noisier
        assert!(v1000 * 10.0 < v10, "v10={v10} v1000={v1000}");
    }

    #[test]
    fn appending_a_head_leaves_the_rest_untouched() {
        let mut rng = Rng::new(12);
        let mut q = GaussianMeanField::init(
            Architecture::classifier(3, &[4], 2),
            1,
            InitConfig::default(),
            &mut rng,
        )
        .unwrap();
        let before = q.clone();
        let x = Tensor2::from_fn(3, 3, |_, _| rng.uniform());
        let out_before = forward(&q, &x, &NoiseBundle::zeros(&q, 1), 0).unwrap();
        q.append_init_head(InitConfig::default(), &mut rng);
        assert_eq!(q.n_heads(), 2);
        assert_eq!(q.mu().trunk(), before.mu().trunk());
        assert_eq!(q.v().trunk(), before.v().trunk());
        assert_eq!(
            forward(&q, &x, &NoiseBundle::zeros(&q, 1), 0).unwrap(),
            out_before
        );
        assert_eq!(q.mu().head_range(1), before.n_params()..q.n_params());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kl_is_nonnegative_and_zero_only_at_identity(seed in any::<u64>(), mean_std in 0.01f64..2.0, s0 in 0.05f64..2.0, s1 in 0.05f64..2.0) {
            let mut rng = Rng::new(seed);
            let arch = Architecture::classifier(3, &[2], 2);
            let q = GaussianMeanField::init(arch.clone(), 1, InitConfig { mean_std, sigma0: s0 }, &mut rng).unwrap();
            let p = GaussianMeanField::init(arch, 1, InitConfig { mean_std, sigma0: s1 }, &mut rng).unwrap();
            prop_assert!(kl_diag_gauss(&q, &p).unwrap() > 0.0);
            prop_assert!(kl_diag_gauss(&q, &q).unwrap().abs() < 1e-12);
        }
    }
}
