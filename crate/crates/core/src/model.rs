//! Softmax regression and a one-hidden-layer tanh MLP over flat parameter
//! vectors.
//!
//! Each linear layer is stored row-major as `[out, in + 1]`, the last column
//! of every row being the bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::LayerLayout;
use crate::{seeds, LayeredModel, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    LogisticRegression,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_features: usize,
    pub n_classes: usize,
    layout: LayerLayout,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || n_classes < 2 {
            return Err(Error::Config(format!(
                "model needs features > 0 and classes >= 2 (got {n_features}, {n_classes})"
            )));
        }
        let layout = match kind {
            ModelKind::LogisticRegression => LayerLayout::new([("linear", vec![n_classes, n_features + 1])])?,
            ModelKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::Config("MLP hidden width must be positive".into()));
                }
                LayerLayout::new([("hidden", vec![hidden, n_features + 1]), ("output", vec![n_classes, hidden + 1])])?
            }
        };
        Ok(Self {
            kind,
            n_features,
            n_classes,
            layout,
        })
    }

    pub fn for_dataset(kind: ModelKind, data: &LabeledDataset) -> Result<Self> {
        Self::new(kind, data.n_features(), data.n_classes())
    }

    pub fn layout(&self) -> &LayerLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn view(&self, params: ParamVector) -> Result<LayeredModel> {
        LayeredModel::new(self.layout.clone(), params)
    }

    /// Zeros for softmax regression; Glorot-uniform weights and zero biases
    /// for the MLP.
    pub fn init(&self, seed: u64) -> Result<ParamVector> {
        match self.kind {
            ModelKind::LogisticRegression => ParamVector::zeros(self.param_count()),
            ModelKind::Mlp { hidden } => {
                let mut rng = seeds::stream(seed, "init", 0, 0);
                let mut p = Vec::with_capacity(self.param_count());
                for (fan_in, fan_out) in [(self.n_features, hidden), (hidden, self.n_classes)] {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for _ in 0..fan_out {
                        for _ in 0..fan_in {
                            p.push(rng.random_range(-limit..limit));
                        }
                        p.push(0.0);
                    }
                }
                ParamVector::new(p)
            }
        }
    }

    fn check(&self, params: &[f64], data: &LabeledDataset) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if data.n_features() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                actual: data.n_features(),
            });
        }
        Ok(())
    }

    /// Class logits for one row.
    pub fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::LogisticRegression => affine(params, x, self.n_classes),
            ModelKind::Mlp { hidden } => {
                let split = hidden * (self.n_features + 1);
                let h: Vec<f64> = affine(&params[..split], x, hidden).into_iter().map(f64::tanh).collect();
                affine(&params[split..], &h, self.n_classes)
            }
        }
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        argmax(&self.logits(params, x))
    }

    /// Mean cross-entropy over `indices`, accumulating the mean gradient into
    /// `grad` (which is overwritten).
    pub fn loss_and_grad(&self, params: &[f64], data: &LabeledDataset, indices: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if indices.is_empty() {
            return 0.0;
        }
        let nf = self.n_features;
        let mut loss = 0.0;
        match self.kind {
            ModelKind::LogisticRegression => {
                for &i in indices {
                    let x = data.row(i);
                    let y = data.label(i);
                    let probs = softmax(&affine(params, x, self.n_classes));
                    loss -= probs[y].max(f64::MIN_POSITIVE).ln();
                    for (k, &p) in probs.iter().enumerate() {
                        let delta = p - if k == y { 1.0 } else { 0.0 };
                        let row = &mut grad[k * (nf + 1)..(k + 1) * (nf + 1)];
                        for (g, &xj) in row[..nf].iter_mut().zip(x) {
                            *g += delta * xj;
                        }
                        row[nf] += delta;
                    }
                }
            }
            ModelKind::Mlp { hidden } => {
                let split = hidden * (nf + 1);
                let (w1, w2) = params.split_at(split);
                let (g1, g2) = grad.split_at_mut(split);
                for &i in indices {
                    let x = data.row(i);
                    let y = data.label(i);
                    let h: Vec<f64> = affine(w1, x, hidden).into_iter().map(f64::tanh).collect();
                    let probs = softmax(&affine(w2, &h, self.n_classes));
                    loss -= probs[y].max(f64::MIN_POSITIVE).ln();
                    let mut back = vec![0.0; hidden];
                    for (k, &p) in probs.iter().enumerate() {
                        let delta = p - if k == y { 1.0 } else { 0.0 };
                        let wrow = &w2[k * (hidden + 1)..(k + 1) * (hidden + 1)];
                        let grow = &mut g2[k * (hidden + 1)..(k + 1) * (hidden + 1)];
                        for u in 0..hidden {
                            grow[u] += delta * h[u];
                            back[u] += delta * wrow[u];
                        }
                        grow[hidden] += delta;
                    }
                    for u in 0..hidden {
                        let e = back[u] * (1.0 - h[u] * h[u]);
                        let grow = &mut g1[u * (nf + 1)..(u + 1) * (nf + 1)];
                        for (g, &xj) in grow[..nf].iter_mut().zip(x) {
                            *g += e * xj;
                        }
                        grow[nf] += e;
                    }
                }
            }
        }
        let n = indices.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        loss / n
    }

    /// Mean cross-entropy over the whole dataset.
    pub fn loss(&self, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
        self.check(params.as_slice(), data)?;
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut scratch = vec![0.0; self.param_count()];
        Ok(self.loss_and_grad(params.as_slice(), data, &idx, &mut scratch))
    }

    /// Full-batch gradient as a layered view, for per-layer sensitivity.
    pub fn gradient(&self, params: &ParamVector, data: &LabeledDataset) -> Result<LayeredModel> {
        self.check(params.as_slice(), data)?;
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; self.param_count()];
        self.loss_and_grad(params.as_slice(), data, &idx, &mut grad);
        self.view(ParamVector::new(grad)?)
    }

    pub fn accuracy(&self, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
        self.check(params.as_slice(), data)?;
        if data.is_empty() {
            return Err(Error::UndefinedMetric("accuracy of an empty dataset"));
        }
        let correct = (0..data.len())
            .filter(|&i| self.predict(params.as_slice(), data.row(i)) == data.label(i))
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Fraction of rows classified as `target`.
    pub fn hit_rate(&self, params: &ParamVector, data: &LabeledDataset, target: usize) -> Result<f64> {
        self.check(params.as_slice(), data)?;
        if data.is_empty() {
            return Err(Error::UndefinedMetric("hit rate of an empty dataset"));
        }
        let hits = (0..data.len())
            .filter(|&i| self.predict(params.as_slice(), data.row(i)) == target)
            .count();
        Ok(hits as f64 / data.len() as f64)
    }
}

fn affine(w: &[f64], x: &[f64], n_out: usize) -> Vec<f64> {
    let stride = x.len() + 1;
    (0..n_out)
        .map(|k| {
            let row = &w[k * stride..(k + 1) * stride];
            row[..x.len()].iter().zip(x).fold(row[x.len()], |acc, (&a, &b)| acc + a * b)
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}
