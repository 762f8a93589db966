//! Full-batch gradient descent for the single-layer GCN on node- and
//! graph-classification tasks.
//!
//! Gradients are analytic: with `B_k = L^k x` the filter output is
//! `z = Σ h_k B_k`, so `∂z/∂h_k = B_k` and the chain rule through the
//! nonlinearity gives `σ′(z) ⊙ B_k`.
//!
//! The powers `L^k x` grow like `λ_max^k`, which makes plain gradient descent
//! on `h` ill-conditioned for any useful step size. Updates are therefore
//! preconditioned by `s^{−2k}` for a basis scale `s`, which is plain gradient
//! descent on the rescaled coefficients `h_k s^k`. A scale of 1 recovers the
//! unpreconditioned method.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{gcn_forward, normalized, sigmoid, FilterSpec, GcnLayer, Nonlinearity};
use crate::graph::{apply_perturbation, laplacian, Graph};
use crate::random::{
    community_coded_features, constant_features, cut_size, derive_seed, rng, sample_perturbation,
    PerturbationPolicy,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    None,
    #[default]
    MeanPool,
    SumPool,
}

impl Readout {
    fn pool(self, v: impl Iterator<Item = f64>, n: usize) -> f64 {
        let s: f64 = v.sum();
        match self {
            Readout::MeanPool => s / n as f64,
            Readout::SumPool | Readout::None => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub order: usize,
    pub nonlinearity: Nonlinearity,
    pub loss: Loss,
    pub readout: Readout,
    /// Basis scale `s` of the preconditioner; `None` picks `2·d_max`, an
    /// upper bound on `λ_max`.
    pub basis_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 500,
            seed: 0,
            order: 3,
            nonlinearity: Nonlinearity::Relu,
            loss: Loss::BinaryCrossEntropy,
            readout: Readout::MeanPool,
            basis_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if let Some(s) = self.basis_scale {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::InvalidArgument(format!("basis_scale must be positive, got {s}")));
            }
        }
        FilterSpec::zeros(self.order)?;
        Ok(())
    }

    fn scale_for<'a>(&self, graphs: impl Iterator<Item = &'a Graph>) -> f64 {
        self.basis_scale.unwrap_or_else(|| {
            let dmax = graphs.flat_map(|g| g.degrees()).max().unwrap_or(0);
            (2.0 * dmax as f64).max(1.0)
        })
    }

    fn preconditioner(&self, scale: f64) -> Vec<f64> {
        (0..=self.order).map(|k| scale.powi(-2 * k as i32)).collect()
    }
}

/// A trained model and its per-epoch training loss (before each update).
#[derive(Debug, Clone, PartialEq)]
pub struct Trained<M> {
    pub model: M,
    pub losses: Vec<f64>,
}

impl<M> Trained<M> {
    /// Training log as CSV with columns `epoch,loss`.
    pub fn log_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "loss"])?;
        for (epoch, loss) in self.losses.iter().enumerate() {
            w.write_record([epoch.to_string(), loss.to_string()])?;
        }
        w.into_inner()
            .map_err(|e| Error::Csv(csv::Error::from(e.into_error())))
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.log_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// `[x, Lx, …, L^K x]`.
fn power_basis(l: &DMatrix<f64>, x: &DVector<f64>, order: usize) -> Vec<DVector<f64>> {
    let mut basis = Vec::with_capacity(order + 1);
    basis.push(x.clone());
    for k in 0..order {
        basis.push(l * &basis[k]);
    }
    basis
}

fn combine(basis: &[DVector<f64>], coeffs: &[f64]) -> DVector<f64> {
    let mut z = DVector::zeros(basis[0].len());
    for (b, &h) in basis.iter().zip(coeffs) {
        z.axpy(h, b, 1.0);
    }
    z
}

/// `−[y ln σ(a) + (1−y) ln(1−σ(a))]` for logit `a`.
fn bce_with_logit(a: f64, y: f64) -> f64 {
    // softplus(a) − y·a, stable for large |a|
    let softplus = if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    };
    softplus - y * a
}

/// Node task: the filter output of every node, passed through σ, is the
/// logit of that node's label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledNodeTask {
    pub graph: Graph,
    /// Unit-norm features.
    pub features: DVector<f64>,
    pub labels: Vec<u8>,
}

impl LabeledNodeTask {
    /// Labels are 1 exactly where the raw feature is positive; features are
    /// normalised afterwards.
    pub fn from_raw_features(graph: Graph, raw: &DVector<f64>) -> Result<Self> {
        if raw.len() != graph.n() {
            return Err(Error::DimensionMismatch {
                expected: graph.n(),
                got: raw.len(),
            });
        }
        let labels = raw.iter().map(|&v| u8::from(v > 0.0)).collect();
        Ok(LabeledNodeTask {
            features: normalized(raw)?,
            graph,
            labels,
        })
    }
}

/// Mean binary cross-entropy of the node task and its gradient in `h`.
pub fn node_loss_and_grad(task: &LabeledNodeTask, layer: &GcnLayer) -> (f64, Vec<f64>) {
    let l = laplacian(&task.graph);
    let basis = power_basis(&l, &task.features, layer.filter.order());
    node_loss_from_basis(&basis, &task.labels, layer)
}

fn node_loss_from_basis(basis: &[DVector<f64>], labels: &[u8], layer: &GcnLayer) -> (f64, Vec<f64>) {
    let sigma = layer.nonlinearity;
    let z = combine(basis, layer.filter.coeffs());
    let n = z.len() as f64;
    let mut loss = 0.0;
    let mut dz = DVector::zeros(z.len());
    for (i, &zi) in z.iter().enumerate() {
        let a = sigma.apply(zi);
        let y = f64::from(labels[i]);
        loss += bce_with_logit(a, y);
        dz[i] = (sigmoid(a) - y) * sigma.derivative(zi) / n;
    }
    let grad = basis.iter().map(|b| b.dot(&dz)).collect();
    (loss / n, grad)
}

/// Trains `h_0..h_K` from zero by preconditioned full-batch gradient descent.
pub fn train_node_classifier(task: &LabeledNodeTask, cfg: &TrainConfig) -> Result<Trained<GcnLayer>> {
    cfg.validate()?;
    let l = laplacian(&task.graph);
    let basis = power_basis(&l, &task.features, cfg.order);
    let precond = cfg.preconditioner(cfg.scale_for(std::iter::once(&task.graph)));
    let mut coeffs = vec![0.0; cfg.order + 1];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let layer = GcnLayer::new(FilterSpec::new(coeffs.clone())?, cfg.nonlinearity);
        let (loss, grad) = node_loss_from_basis(&basis, &task.labels, &layer);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss,
                learning_rate: cfg.learning_rate,
            });
        }
        losses.push(loss);
        for ((h, g), p) in coeffs.iter_mut().zip(&grad).zip(&precond) {
            *h -= cfg.learning_rate * g * p;
        }
        if coeffs.iter().any(|h| !h.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: f64::INFINITY,
                learning_rate: cfg.learning_rate,
            });
        }
    }
    Ok(Trained {
        model: GcnLayer::new(FilterSpec::new(coeffs)?, cfg.nonlinearity),
        losses,
    })
}

pub fn node_accuracy(layer: &GcnLayer, task: &LabeledNodeTask) -> Result<f64> {
    let y = gcn_forward(layer, &laplacian(&task.graph), &task.features)?;
    let correct = y
        .iter()
        .zip(&task.labels)
        .filter(|(&a, &lab)| u8::from(sigmoid(a) > 0.5) == lab)
        .count();
    Ok(correct as f64 / task.labels.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// The same value on every node. It lies in the null space of every
    /// Laplacian, so the filter output cannot depend on the topology.
    Constant,
    /// Constant within each community, see
    /// [`community_coded_features`](crate::random::community_coded_features).
    #[default]
    CommunityCoded,
}

impl FeatureMode {
    pub fn features(self, g: &Graph) -> Result<DVector<f64>> {
        match self {
            FeatureMode::Constant => Ok(constant_features(g.n())),
            FeatureMode::CommunityCoded => community_coded_features(g),
        }
    }
}

/// Graphs labelled by whether their cut size exceeds the median.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraphTask {
    pub graphs: Vec<Graph>,
    pub labels: Vec<u8>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub features: FeatureMode,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl LabeledGraphTask {
    /// Label 1 when the cut size is strictly above the median over all
    /// graphs; the first `n_train` graphs form the training split.
    pub fn from_cut_sizes(graphs: Vec<Graph>, n_train: usize, features: FeatureMode) -> Result<Self> {
        if graphs.is_empty() || n_train > graphs.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot take {n_train} training graphs from {}",
                graphs.len()
            )));
        }
        let cuts = graphs
            .iter()
            .map(|g| cut_size(g).map(|c| c as f64))
            .collect::<Result<Vec<_>>>()?;
        let threshold = median(&cuts);
        let labels = cuts.iter().map(|&c| u8::from(c > threshold)).collect();
        Ok(LabeledGraphTask {
            labels,
            train: (0..n_train).collect(),
            test: (n_train..graphs.len()).collect(),
            graphs,
            features,
        })
    }
}

/// Affine head on the standardised readout: `w · (r − centre) / scale + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutHead {
    pub centre: f64,
    pub scale: f64,
    pub weight: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphClassifier {
    pub layer: GcnLayer,
    pub readout: Readout,
    pub head: ReadoutHead,
}

impl GraphClassifier {
    pub fn logit(&self, l: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
        let y = gcn_forward(&self.layer, l, x)?;
        let r = self.readout.pool(y.iter().copied(), y.len());
        let h = &self.head;
        Ok(h.weight * (r - h.centre) / h.scale + h.bias)
    }

    pub fn predict(&self, l: &DMatrix<f64>, x: &DVector<f64>) -> Result<u8> {
        Ok(u8::from(self.logit(l, x)? > 0.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

const STANDARDIZE_EPS: f64 = 1e-12;

/// Trainable parameters of the graph classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    pub coeffs: Vec<f64>,
    pub weight: f64,
    pub bias: f64,
}

struct GraphBatch {
    bases: Vec<Vec<DVector<f64>>>,
    labels: Vec<f64>,
    nonlinearity: Nonlinearity,
    readout: Readout,
}

impl GraphBatch {
    fn new(task: &LabeledGraphTask, indices: &[usize], cfg: &TrainConfig) -> Result<Self> {
        let bases = indices
            .iter()
            .map(|&i| {
                let g = &task.graphs[i];
                Ok(power_basis(&laplacian(g), &task.features.features(g)?, cfg.order))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphBatch {
            bases,
            labels: indices.iter().map(|&i| f64::from(task.labels[i])).collect(),
            nonlinearity: cfg.nonlinearity,
            readout: cfg.readout,
        })
    }

    /// Readouts `r_g`, their batch mean and standard deviation.
    fn readouts(&self, coeffs: &[f64]) -> (Vec<DVector<f64>>, Vec<f64>, f64, f64) {
        let sigma = self.nonlinearity;
        let zs: Vec<DVector<f64>> = self.bases.iter().map(|b| combine(b, coeffs)).collect();
        let rs: Vec<f64> = zs
            .iter()
            .map(|z| self.readout.pool(z.iter().map(|&v| sigma.apply(v)), z.len()))
            .collect();
        let m = rs.len() as f64;
        let mean = rs.iter().sum::<f64>() / m;
        let var = rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m;
        (zs, rs, mean, (var + STANDARDIZE_EPS).sqrt())
    }

    fn loss_and_grad(&self, p: &GraphParams) -> (f64, GraphParams) {
        let sigma = self.nonlinearity;
        let (zs, rs, mean, sd) = self.readouts(&p.coeffs);
        let m = rs.len() as f64;
        let shat: Vec<f64> = rs.iter().map(|r| (r - mean) / sd).collect();
        let mut loss = 0.0;
        let mut d = vec![0.0; rs.len()];
        for (g, &s) in shat.iter().enumerate() {
            let a = p.weight * s + p.bias;
            loss += bce_with_logit(a, self.labels[g]);
            d[g] = (sigmoid(a) - self.labels[g]) / m;
        }
        let gw: f64 = d.iter().zip(&shat).map(|(a, b)| a * b).sum();
        let gb: f64 = d.iter().sum();
        let ds: Vec<f64> = d.iter().map(|v| v * p.weight).collect();
        let ds_mean = ds.iter().sum::<f64>() / m;
        let ds_s_mean = ds.iter().zip(&shat).map(|(a, b)| a * b).sum::<f64>() / m;
        let mut gh = vec![0.0; p.coeffs.len()];
        for (g, z) in zs.iter().enumerate() {
            let dr = (ds[g] - ds_mean - shat[g] * ds_s_mean) / sd;
            let n = z.len();
            let pool_w = match self.readout {
                Readout::MeanPool => 1.0 / n as f64,
                Readout::SumPool | Readout::None => 1.0,
            };
            for (k, b) in self.bases[g].iter().enumerate() {
                let s: f64 = z.iter().zip(b.iter()).map(|(&zi, &bi)| sigma.derivative(zi) * bi).sum();
                gh[k] += dr * pool_w * s;
            }
        }
        (
            loss / m,
            GraphParams {
                coeffs: gh,
                weight: gw,
                bias: gb,
            },
        )
    }
}

/// Training loss and gradient of the graph classifier on the training split.
/// The readout is standardised with the statistics of the current batch.
pub fn graph_loss_and_grad(
    task: &LabeledGraphTask,
    cfg: &TrainConfig,
    params: &GraphParams,
) -> Result<(f64, GraphParams)> {
    let batch = GraphBatch::new(task, &task.train, cfg)?;
    Ok(batch.loss_and_grad(params))
}

/// Trains filter, readout weight and bias by preconditioned full-batch
/// gradient descent. Filter coefficients start from seeded `N(0, 0.1²)`
/// values in the rescaled basis, the head from `w = 1, b = 0`.
pub fn train_graph_classifier(task: &LabeledGraphTask, cfg: &TrainConfig) -> Result<Trained<GraphClassifier>> {
    cfg.validate()?;
    if cfg.readout == Readout::None {
        return Err(Error::InvalidArgument("graph classification needs a pooling readout".into()));
    }
    let batch = GraphBatch::new(task, &task.train, cfg)?;
    let scale = cfg.scale_for(task.train.iter().map(|&i| &task.graphs[i]));
    let precond = cfg.preconditioner(scale);
    let mut init = rng(cfg.seed);
    let mut params = GraphParams {
        coeffs: (0..=cfg.order)
            .map(|k| 0.1 * init.sample::<f64, _>(StandardNormal) / scale.powi(k as i32))
            .collect(),
        weight: 1.0,
        bias: 0.0,
    };
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = batch.loss_and_grad(&params);
        if !loss.is_finite() || grad.coeffs.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss,
                learning_rate: cfg.learning_rate,
            });
        }
        losses.push(loss);
        for ((h, g), p) in params.coeffs.iter_mut().zip(&grad.coeffs).zip(&precond) {
            *h -= cfg.learning_rate * g * p;
        }
        params.weight -= cfg.learning_rate * grad.weight;
        params.bias -= cfg.learning_rate * grad.bias;
        if params.coeffs.iter().chain([&params.weight, &params.bias]).any(|h| !h.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: f64::INFINITY,
                learning_rate: cfg.learning_rate,
            });
        }
    }
    let (_, _, centre, sd) = batch.readouts(&params.coeffs);
    let layer = GcnLayer::new(FilterSpec::new(params.coeffs)?, cfg.nonlinearity);
    Ok(Trained {
        model: GraphClassifier {
            layer,
            readout: cfg.readout,
            head: ReadoutHead {
                centre,
                scale: sd,
                weight: params.weight,
                bias: params.bias,
            },
        },
        losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub correct: usize,
    pub total: usize,
}

const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95%.
pub fn wilson_interval(correct: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let n = total as f64;
    let p = correct as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

impl AccuracyReport {
    pub fn from_counts(correct: usize, total: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(correct, total);
        AccuracyReport {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            ci_low,
            ci_high,
            correct,
            total,
        }
    }
}

/// Test-split accuracy, with each test graph perturbed by `policy` in each
/// of `trials` independent draws. Labels stay those of the unperturbed graphs.
pub fn evaluate_accuracy(
    model: &GraphClassifier,
    task: &LabeledGraphTask,
    policy: Option<&PerturbationPolicy>,
    trials: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    let trials = if policy.is_some() { trials } else { 1 };
    let jobs: Vec<(usize, usize)> = (0..trials)
        .flat_map(|t| task.test.iter().map(move |&i| (t, i)))
        .collect();
    let hits = jobs
        .par_iter()
        .map(|&(t, i)| {
            let g = &task.graphs[i];
            let x = task.features.features(g)?;
            let l = match policy {
                Some(pol) => {
                    let p = sample_perturbation(g, pol, derive_seed(seed, i as u64, t as u64))?;
                    laplacian(&apply_perturbation(g, &p)?)
                }
                None => laplacian(g),
            };
            Ok(usize::from(model.predict(&l, &x)? == task.labels[i]))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(AccuracyReport::from_counts(hits.iter().sum(), jobs.len()))
}
