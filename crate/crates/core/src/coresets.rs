//! Per-task coresets: random, K-center and Stein-refined.
//!
//! Every constructor returns the coreset together with the task data that
//! remains for training; coreset points never appear in both.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bnn::{input_grads, GaussianMeanField, NoiseBundle};
use crate::error::{Error, Result};
use crate::io::{BinReader, BinWriter};
use crate::math::{gemm, Rng, Tensor2};
use crate::tasks::{Targets, TaskData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoresetMethod {
    Random,
    Kcenter,
    Stein,
}

impl CoresetMethod {
    pub fn name(self) -> &'static str {
        match self {
            CoresetMethod::Random => "random",
            CoresetMethod::Kcenter => "kcenter",
            CoresetMethod::Stein => "stein",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "random" => Some(CoresetMethod::Random),
            "kcenter" => Some(CoresetMethod::Kcenter),
            "stein" => Some(CoresetMethod::Stein),
            _ => None,
        }
    }

    fn tag(self) -> u8 {
        match self {
            CoresetMethod::Random => 0,
            CoresetMethod::Kcenter => 1,
            CoresetMethod::Stein => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        [
            CoresetMethod::Random,
            CoresetMethod::Kcenter,
            CoresetMethod::Stein,
        ]
        .into_iter()
        .find(|m| m.tag() == tag)
    }
}

/// A small labelled sample kept from one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    pub data: TaskData,
    pub source_task: usize,
    pub method: CoresetMethod,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn inputs(&self) -> &Tensor2 {
        &self.data.inputs
    }
}

fn check_size(data: &TaskData, m: usize) -> Result<()> {
    if m > data.len() {
        return Err(Error::Contract(format!(
            "coreset size {m} exceeds the {} available examples",
            data.len()
        )));
    }
    Ok(())
}

/// Uniform draw of `m` examples without replacement.
pub fn random_coreset(
    data: &TaskData,
    m: usize,
    source_task: usize,
    rng: &mut Rng,
) -> Result<(Coreset, TaskData)> {
    check_size(data, m)?;
    let idx = rng.sample_indices(data.len(), m)?;
    let (picked, rest) = data.partition(&idx);
    Ok((
        Coreset {
            data: picked,
            source_task,
            method: CoresetMethod::Random,
        },
        rest,
    ))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices chosen by greedy farthest-first traversal from example 0.
pub fn kcenter_indices(inputs: &Tensor2, m: usize) -> Vec<usize> {
    let n = inputs.rows();
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = inputs
        .row_iter()
        .map(|r| sq_dist(r, inputs.row(0)))
        .collect();
    while chosen.len() < m.min(n) {
        // strict comparison keeps the lowest index among ties
        let mut best = 0;
        for (i, &d) in nearest.iter().enumerate() {
            if d > nearest[best] {
                best = i;
            }
        }
        chosen.push(best);
        let center = inputs.row(best);
        for (d, row) in nearest.iter_mut().zip(inputs.row_iter()) {
            *d = d.min(sq_dist(row, center));
        }
    }
    chosen
}

pub fn kcenter_coreset(
    data: &TaskData,
    m: usize,
    source_task: usize,
) -> Result<(Coreset, TaskData)> {
    if m == 0 {
        return Err(Error::Contract("K-center coreset needs m ≥ 1".into()));
    }
    check_size(data, m)?;
    let idx = kcenter_indices(&data.inputs, m);
    let (picked, rest) = data.partition(&idx);
    Ok((
        Coreset {
            data: picked,
            source_task,
            method: CoresetMethod::Kcenter,
        },
        rest,
    ))
}

/// Symmetric matrix of squared Euclidean distances between rows.
pub fn pairwise_sq_dists(points: &Tensor2) -> Tensor2 {
    let m = points.rows();
    let mut out = Tensor2::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = sq_dist(points.row(i), points.row(j));
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}

fn median_heuristic_from(dists: &Tensor2) -> f64 {
    let m = dists.rows();
    if m <= 1 {
        return 1.0;
    }
    let mut upper: Vec<f64> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .map(|(i, j)| dists.get(i, j))
        .collect();
    let mid = upper.len() / 2;
    let (_, &mut hi, _) = upper.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if upper.len() % 2 == 1 {
        hi
    } else {
        let lo = upper[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if median > 0.0 {
        median / ((m + 1) as f64).ln()
    } else {
        1.0
    }
}

/// RBF bandwidth: median pairwise squared distance over `ln(M + 1)`, or 1 when
/// that is degenerate.
pub fn median_heuristic(points: &Tensor2) -> f64 {
    median_heuristic_from(&pairwise_sq_dists(points))
}

/// RBF Gram matrix `k(a, b) = exp(−‖a − b‖² / h)` over a particle set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEval {
    pub h: f64,
    pub gram: Tensor2,
}

impl KernelEval {
    pub fn new(particles: &Tensor2, h: f64) -> Result<Self> {
        Self::from_sq_dists(&pairwise_sq_dists(particles), h)
    }

    fn from_sq_dists(dists: &Tensor2, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Contract(format!(
                "kernel bandwidth must be positive and finite, got {h}"
            )));
        }
        Ok(Self {
            h,
            gram: dists.map(|d| (-d / h).exp()),
        })
    }

    /// `Σⱼ ∇_{x(j)} k(x(j), x(l)) = (2/h) Σⱼ (x(l) − x(j)) k(x(j), x(l))`, one row per `l`.
    pub fn repulsion(&self, particles: &Tensor2) -> Result<Tensor2> {
        let m = particles.rows();
        if self.gram.rows() != m {
            return Err(Error::shape("kernel repulsion", self.gram.rows(), m));
        }
        let mut out = Tensor2::zeros(m, particles.cols());
        // −(2/h) K X, then add (2/h) (Σⱼ k_jl) x(l)
        gemm(
            -2.0 / self.h,
            &self.gram,
            false,
            particles,
            false,
            0.0,
            &mut out,
        )?;
        for l in 0..m {
            let row_sum: f64 = self.gram.row(l).iter().sum();
            let scale = 2.0 / self.h * row_sum;
            for (o, x) in out.row_mut(l).iter_mut().zip(particles.row(l)) {
                *o += scale * x;
            }
        }
        Ok(out)
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::Contract(format!(
            "Stein step must be finite and ≥ 0, got {step}"
        )));
    }
    Ok(())
}

fn svgd_move(
    particles: &Tensor2,
    scores: &Tensor2,
    kernel: &KernelEval,
    step: f64,
) -> Result<Tensor2> {
    let m = particles.rows();
    let mut phi = kernel.repulsion(particles)?;
    gemm(1.0, &kernel.gram, false, scores, false, 1.0, &mut phi)?;
    let scale = step / m as f64;
    let mut out = particles.clone();
    for (x, p) in out.data_mut().iter_mut().zip(phi.data()) {
        *x += scale * p;
    }
    Ok(out)
}

/// One SVGD step: `x(l) ← x(l) + step · (1/M) Σⱼ [k(x(j), x(l)) s(j) + ∇_{x(j)} k(x(j), x(l))]`.
pub fn stein_update(particles: &Tensor2, scores: &Tensor2, h: f64, step: f64) -> Result<Tensor2> {
    if scores.shape() != particles.shape() {
        return Err(Error::shape(
            "stein_update scores",
            format!("{:?}", particles.shape()),
            format!("{:?}", scores.shape()),
        ));
    }
    if !scores.is_finite() {
        return Err(Error::NonFinite("Stein scores".into()));
    }
    check_step(step)?;
    if particles.rows() == 0 {
        return Ok(particles.clone());
    }
    svgd_move(particles, scores, &KernelEval::new(particles, h)?, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinConfig {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for SteinConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.01,
        }
    }
}

/// One refinement iteration on a labelled particle set: score from the
/// posterior-mean network, fresh median bandwidth, SVGD move, clip to `[0, 1]`.
///
/// Touches only the `M` particles.
pub fn stein_refine_step(
    particles: &Tensor2,
    labels: &[usize],
    q: &GaussianMeanField,
    head: usize,
    step_size: f64,
) -> Result<Tensor2> {
    check_step(step_size)?;
    if particles.rows() == 0 {
        return Ok(particles.clone());
    }
    let scores = input_grads(q, particles, labels, &NoiseBundle::zeros(q, 1), head)?;
    if !scores.is_finite() {
        return Err(Error::NonFinite("Stein scores".into()));
    }
    let dists = pairwise_sq_dists(particles);
    let kernel = KernelEval::from_sq_dists(&dists, median_heuristic_from(&dists))?;
    let moved = svgd_move(particles, &scores, &kernel, step_size)?;
    Ok(moved.map(|x| x.clamp(0.0, 1.0)))
}

/// Refines a coreset's inputs in place with Stein iterations against `q`.
pub fn refine_coreset(
    coreset: &mut Coreset,
    q: &GaussianMeanField,
    config: SteinConfig,
) -> Result<()> {
    let labels = coreset
        .data
        .labels()
        .ok_or_else(|| Error::Contract("Stein coresets need classification data".into()))?
        .to_vec();
    for _ in 0..config.steps {
        coreset.data.inputs = stein_refine_step(
            &coreset.data.inputs,
            &labels,
            q,
            coreset.data.head,
            config.step_size,
        )?;
    }
    Ok(())
}

/// Random initial subset refined by `config.steps` Stein iterations against `q`.
/// Labels stay attached to their initial particles.
pub fn stein_coreset(
    data: &TaskData,
    m: usize,
    q: &GaussianMeanField,
    config: SteinConfig,
    source_task: usize,
    rng: &mut Rng,
) -> Result<(Coreset, TaskData)> {
    let (mut coreset, rest) = random_coreset(data, m, source_task, rng)?;
    coreset.method = CoresetMethod::Stein;
    refine_coreset(&mut coreset, q, config)?;
    Ok((coreset, rest))
}

fn class_info(coreset: &Coreset) -> Result<(&[usize], usize)> {
    match &coreset.data.targets {
        Targets::Classes { labels, n_classes } => Ok((labels, *n_classes)),
        Targets::Real(_) => Err(Error::Contract(
            "only classification coresets can be exported".into(),
        )),
    }
}

fn common_dim(coresets: &[Coreset]) -> Result<usize> {
    let dim = coresets.first().map_or(0, |c| c.data.input_dim());
    if let Some(c) = coresets.iter().find(|c| c.data.input_dim() != dim) {
        return Err(Error::shape("coreset export", dim, c.data.input_dim()));
    }
    Ok(dim)
}

/// One row per point: `x0 … x{d−1}, label, task, head, n_classes, method`.
pub fn write_coresets_csv<W: Write>(coresets: &[Coreset], out: W) -> Result<()> {
    let dim = common_dim(coresets)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.extend(["label", "task", "head", "n_classes", "method"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for c in coresets {
        let (labels, n_classes) = class_info(c)?;
        for (row, &label) in c.data.inputs.row_iter().zip(labels) {
            let mut rec: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            rec.extend([
                label.to_string(),
                c.source_task.to_string(),
                c.data.head.to_string(),
                n_classes.to_string(),
                c.method.name().to_string(),
            ]);
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("coreset CSV: {e}"))
}

#[derive(Default)]
struct Pending {
    rows: Vec<f64>,
    labels: Vec<usize>,
}

fn assemble(key: (usize, usize, usize, CoresetMethod), p: Pending, dim: usize) -> Result<Coreset> {
    let (source_task, head, n_classes, method) = key;
    let inputs = Tensor2::from_vec(p.labels.len(), dim, p.rows)?;
    let data = TaskData::classification(
        format!("coreset-{source_task}"),
        inputs,
        p.labels,
        n_classes,
        head,
    )?;
    Ok(Coreset {
        data,
        source_task,
        method,
    })
}

/// Inverse of [`write_coresets_csv`]. Consecutive rows sharing a task id form
/// one coreset.
pub fn read_coresets_csv<R: Read>(input: R) -> Result<Vec<Coreset>> {
    let mut r = csv::Reader::from_reader(input);
    let dim = r
        .headers()
        .map_err(csv_err)?
        .len()
        .checked_sub(5)
        .ok_or_else(|| Error::Format("coreset CSV: too few columns".into()))?;
    let mut out = Vec::new();
    let mut current: Option<((usize, usize, usize, CoresetMethod), Pending)> = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Format(format!("coreset CSV row {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| bad(what));
        let label = num(dim, "label")?;
        let key = (
            num(dim + 1, "task")?,
            num(dim + 2, "head")?,
            num(dim + 3, "n_classes")?,
            CoresetMethod::parse(&rec[dim + 4]).ok_or_else(|| bad("method"))?,
        );
        let xs = (0..dim)
            .map(|i| rec[i].parse::<f64>().map_err(|_| bad("input")))
            .collect::<Result<Vec<f64>>>()?;
        match &mut current {
            Some((k, p)) if k.0 == key.0 => {
                if *k != key {
                    return Err(bad("metadata (differs within one task)"));
                }
                p.rows.extend(xs);
                p.labels.push(label);
            }
            _ => {
                if let Some((k, p)) = current.take() {
                    out.push(assemble(k, p, dim)?);
                }
                current = Some((
                    key,
                    Pending {
                        rows: xs,
                        labels: vec![label],
                    },
                ));
            }
        }
    }
    if let Some((k, p)) = current {
        out.push(assemble(k, p, dim)?);
    }
    Ok(out)
}

const CORESET_MAGIC: &[u8; 8] = b"VCLCSET\0";
const CORESET_VERSION: u32 = 1;

/// Little-endian binary: magic, version, input dim, coreset count, then per
/// coreset `task, head, n_classes, method tag, rows` followed by each row's
/// inputs (`f64`) and label (`u64`).
pub fn write_coresets_bin<W: Write>(coresets: &[Coreset], out: W) -> Result<()> {
    let dim = common_dim(coresets)?;
    let mut w = BinWriter::new(out);
    w.bytes(CORESET_MAGIC)?;
    w.u32(CORESET_VERSION)?;
    w.u64(dim as u64)?;
    w.u64(coresets.len() as u64)?;
    for c in coresets {
        let (labels, n_classes) = class_info(c)?;
        w.u64(c.source_task as u64)?;
        w.u64(c.data.head as u64)?;
        w.u64(n_classes as u64)?;
        w.u8(c.method.tag())?;
        w.u64(c.len() as u64)?;
        for (row, &label) in c.data.inputs.row_iter().zip(labels) {
            for &x in row {
                w.f64(x)?;
            }
            w.u64(label as u64)?;
        }
    }
    w.finish()?;
    Ok(())
}

pub fn read_coresets_bin<R: Read>(input: R) -> Result<Vec<Coreset>> {
    let mut r = BinReader::new(input);
    r.expect_magic(CORESET_MAGIC, "coreset file")?;
    let version = r.u32()?;
    if version != CORESET_VERSION {
        return Err(Error::Format(format!(
            "coreset file version {version} (expected {CORESET_VERSION})"
        )));
    }
    let dim = r.usize()?;
    let count = r.usize()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let source_task = r.usize()?;
        let head = r.usize()?;
        let n_classes = r.usize()?;
        let tag = r.u8()?;
        let method = CoresetMethod::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("unknown coreset method tag {tag}")))?;
        let rows = r.usize()?;
        let mut p = Pending::default();
        for _ in 0..rows {
            for _ in 0..dim {
                p.rows.push(r.f64()?);
            }
            p.labels.push(r.usize()?);
        }
        out.push(assemble((source_task, head, n_classes, method), p, dim)?);
    }
    Ok(out)
}
