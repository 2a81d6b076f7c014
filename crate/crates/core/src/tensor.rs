//! Parameter vectors, layered model views and the numeric primitives the
//! detection stages are built from.
//!
//! Everything here is a pure function over immutable inputs. Reductions are
//! evaluated left to right so results are bit-reproducible for a fixed input
//! order.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat, finite, non-empty sequence of model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVec<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![T::zero(); len])
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.values.iter()
    }

    /// Applies `f` elementwise. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Self::new(self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Self::new(self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: T, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Self::new(self.values.iter().zip(&other.values).map(|(&a, &b)| a + c * b).collect())
    }

    pub fn squared_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn norm(&self) -> T {
        self.squared_norm().sqrt()
    }

    /// Contiguous sub-range as a new vector.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::Layout(format!("range {:?} outside vector of length {}", range, self.len())));
        }
        Self::from_slice(&self.values[range])
    }
}

impl<T> AsRef<[T]> for ParamVec<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

fn check_dims<T: Scalar>(a: &ParamVec<T>, b: &ParamVec<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub fn dot<T: Scalar>(a: &ParamVec<T>, b: &ParamVec<T>) -> Result<T> {
    check_dims(a, b)?;
    Ok(a.values.iter().zip(&b.values).fold(T::zero(), |acc, (&x, &y)| acc + x * y))
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &ParamVec<T>, b: &ParamVec<T>) -> Result<T> {
    let num = dot(a, b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::DegenerateVector);
    }
    let c = num / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

pub fn squared_l2_distance<T: Scalar>(a: &ParamVec<T>, b: &ParamVec<T>) -> Result<T> {
    check_dims(a, b)?;
    Ok(a.values.iter().zip(&b.values).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    }))
}

pub fn l2_distance<T: Scalar>(a: &ParamVec<T>, b: &ParamVec<T>) -> Result<T> {
    Ok(squared_l2_distance(a, b)?.sqrt())
}

/// Elementwise arithmetic mean, summing in the given order.
pub fn mean<T: Scalar>(vectors: &[&ParamVec<T>]) -> Result<ParamVec<T>> {
    let first = vectors.first().ok_or(Error::EmptyAggregation)?;
    let mut acc = vec![T::zero(); first.len()];
    for v in vectors {
        check_dims(first, v)?;
        for (a, &x) in acc.iter_mut().zip(&v.values) {
            *a += x;
        }
    }
    let n = T::from_usize_lossy(vectors.len());
    ParamVec::new(acc.into_iter().map(|a| a / n).collect())
}

/// Weighted mean `Σ wᵢvᵢ / Σ wᵢ`. Weights must be non-negative with a
/// positive sum.
pub fn weighted_mean<T: Scalar>(vectors: &[&ParamVec<T>], weights: &[T]) -> Result<ParamVec<T>> {
    let first = vectors.first().ok_or(Error::EmptyAggregation)?;
    if weights.len() != vectors.len() {
        return Err(Error::Dimension {
            expected: vectors.len(),
            actual: weights.len(),
        });
    }
    let total: T = weights.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::EmptyAggregation);
    }
    let mut acc = vec![T::zero(); first.len()];
    for (v, &w) in vectors.iter().zip(weights) {
        check_dims(first, v)?;
        for (a, &x) in acc.iter_mut().zip(&v.values) {
            *a += w * x;
        }
    }
    ParamVec::new(acc.into_iter().map(|a| a / total).collect())
}

/// Mean and sample standard deviation of a score list.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreStats<T> {
    pub mean: T,
    pub std_dev: T,
    pub count: usize,
}

/// μ = Σℓ/n and σ = sqrt(Σ(ℓ-μ)²/(n-1)).
pub fn sample_stats<T: Scalar>(scores: &[T]) -> Result<ScoreStats<T>> {
    if scores.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: scores.len(),
        });
    }
    let n = T::from_usize_lossy(scores.len());
    let mean = scores.iter().copied().fold(T::zero(), |a, s| a + s) / n;
    let ss = scores.iter().fold(T::zero(), |a, &s| {
        let d = s - mean;
        a + d * d
    });
    let std_dev = (ss / (n - T::one())).sqrt();
    Ok(ScoreStats {
        mean,
        std_dev,
        count: scores.len(),
    })
}

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous layer extents covering `total` parameters.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerLayout {
    layers: Vec<LayerSpec>,
    total: usize,
}

impl LayerLayout {
    pub fn new<S: Into<String>>(layers: impl IntoIterator<Item = (S, Vec<usize>)>) -> Result<Self> {
        let mut specs = Vec::new();
        let mut offset = 0usize;
        for (name, shape) in layers {
            let name = name.into();
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::Layout(format!("layer {name} has an empty shape {shape:?}")));
            }
            let spec = LayerSpec { name, shape, offset };
            offset += spec.len();
            specs.push(spec);
        }
        if specs.is_empty() {
            return Err(Error::Layout("model needs at least one layer".into()));
        }
        Ok(Self {
            layers: specs,
            total: offset,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Index of the second-to-last layer, or the only layer.
    pub fn importance_index(&self) -> usize {
        self.layers.len().saturating_sub(2)
    }

    /// Parameter range of the importance segment. Single-layer models use the
    /// whole vector.
    pub fn importance_range(&self) -> Range<usize> {
        if self.layers.len() == 1 {
            0..self.total
        } else {
            self.layers[self.importance_index()].range()
        }
    }
}

/// Named, shaped layers over a backing parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel<T> {
    layout: LayerLayout,
    backing: ParamVec<T>,
}

impl<T: Scalar> LayeredModel<T> {
    pub fn new(layout: LayerLayout, backing: ParamVec<T>) -> Result<Self> {
        if layout.total() != backing.len() {
            return Err(Error::Dimension {
                expected: layout.total(),
                actual: backing.len(),
            });
        }
        Ok(Self { layout, backing })
    }

    pub fn layout(&self) -> &LayerLayout {
        &self.layout
    }

    pub fn backing(&self) -> &ParamVec<T> {
        &self.backing
    }

    pub fn into_backing(self) -> ParamVec<T> {
        self.backing
    }

    pub fn layer(&self, index: usize) -> Option<&[T]> {
        self.layout.layers.get(index).map(|l| &self.backing.as_slice()[l.range()])
    }

    pub fn layer_by_name(&self, name: &str) -> Option<&[T]> {
        let idx = self.layout.layers.iter().position(|l| l.name == name)?;
        self.layer(idx)
    }

    /// Parameters of the second-to-last layer; the whole vector for a
    /// single-layer model.
    pub fn importance_layer(&self) -> ParamVec<T> {
        let range = self.layout.importance_range();
        ParamVec {
            values: self.backing.as_slice()[range].to_vec(),
        }
    }

    /// Per-layer Euclidean norm, in layer order.
    pub fn layer_sensitivity(&self) -> Vec<(String, T)> {
        self.layout
            .layers
            .iter()
            .map(|l| {
                let slice = &self.backing.as_slice()[l.range()];
                let sq = slice.iter().fold(T::zero(), |a, &v| a + v * v);
                (l.name.clone(), sq.sqrt())
            })
            .collect()
    }
}
