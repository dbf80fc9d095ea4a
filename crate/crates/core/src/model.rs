//! The black-box model contract and the built-in toy classifiers.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::{logistic, logistic_derivative, Scalar};

/// An evaluate-only classifier over embedding matrices.
///
/// `evaluate` returns the score of the target class (a probability for the
/// built-in models, a raw score for bridged ones). Implementations must be
/// deterministic and `evaluate_batch` must agree with element-wise
/// `evaluate` exactly.
pub trait BlackBoxModel<T: Scalar>: Send + Sync {
    /// Embedding width `m` the model expects.
    fn dim(&self) -> usize;

    fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T>;

    fn evaluate_batch(&self, batch: &[EmbeddingMatrix<T>]) -> Result<Vec<T>> {
        batch.iter().map(|e| self.evaluate(e)).collect()
    }

    /// Whether [`BlackBoxModel::gradient`] is available.
    fn has_gradient(&self) -> bool {
        false
    }

    /// Analytic gradient `∂f/∂a_ij`, same shape as `e`.
    fn gradient(&self, _e: &EmbeddingMatrix<T>) -> Result<Array2<T>> {
        Err(Error::Unsupported("model exposes no analytic gradient".into()))
    }
}

macro_rules! forward_model {
    ($($wrapper:ty),*) => {$(
        impl<T: Scalar, M: BlackBoxModel<T> + ?Sized> BlackBoxModel<T> for $wrapper {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T> {
                (**self).evaluate(e)
            }
            fn evaluate_batch(&self, batch: &[EmbeddingMatrix<T>]) -> Result<Vec<T>> {
                (**self).evaluate_batch(batch)
            }
            fn has_gradient(&self) -> bool {
                (**self).has_gradient()
            }
            fn gradient(&self, e: &EmbeddingMatrix<T>) -> Result<Array2<T>> {
                (**self).gradient(e)
            }
        }
    )*};
}

forward_model!(&M, Box<M>, Arc<M>);

pub(crate) fn check_dim<T: Scalar, M: BlackBoxModel<T> + ?Sized>(model: &M, e: &EmbeddingMatrix<T>) -> Result<()> {
    if model.dim() != e.dim() {
        return Err(Error::Shape(format!(
            "model expects embedding width {}, matrix has {}",
            model.dim(),
            e.dim()
        )));
    }
    Ok(())
}

/// A model score tagged with the class it refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelScore<T> {
    pub value: T,
    pub target_class: usize,
}

impl<T: Scalar> ModelScore<T> {
    /// A probability score; rejects values outside `[0, 1]`.
    pub fn probability(value: T, target_class: usize) -> Result<Self> {
        if !(value >= T::zero() && value <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "probability score {value} outside [0, 1]"
            )));
        }
        Ok(Self { value, target_class })
    }
}

/// Output nonlinearity of [`ToyLinearBagModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logistic,
    Identity,
}

/// `f(E) = link(b + Σᵢ w·Eᵢ)`: a bag-of-embeddings linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLinearBagModel<T> {
    pub weights: Array1<T>,
    pub bias: T,
    pub link: Link,
}

impl<T: Scalar> ToyLinearBagModel<T> {
    pub fn new(weights: Array1<T>, bias: T) -> Self {
        Self {
            weights,
            bias,
            link: Link::Logistic,
        }
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    /// The pre-link score `b + Σᵢ w·Eᵢ`.
    pub fn pre_link(&self, e: &EmbeddingMatrix<T>) -> T {
        let summed = e.sum_axis(Axis(0));
        self.bias + summed.dot(&self.weights)
    }
}

impl<T: Scalar> BlackBoxModel<T> for ToyLinearBagModel<T> {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T> {
        check_dim(self, e)?;
        let s = self.pre_link(e);
        Ok(match self.link {
            Link::Logistic => logistic(s),
            Link::Identity => s,
        })
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, e: &EmbeddingMatrix<T>) -> Result<Array2<T>> {
        check_dim(self, e)?;
        let scale = match self.link {
            Link::Logistic => logistic_derivative(self.pre_link(e)),
            Link::Identity => T::one(),
        };
        let row = self.weights.mapv(|w| w * scale);
        let mut g = Array2::zeros(e.raw_dim());
        for mut r in g.rows_mut() {
            r.assign(&row);
        }
        Ok(g)
    }
}

/// `f(E) = logistic(v · meanᵢ tanh(W Eᵢ + a) + c)`: a one-hidden-layer
/// network with mean pooling over tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTwoLayerModel<T> {
    /// `h × m`.
    pub hidden_weights: Array2<T>,
    pub hidden_bias: Array1<T>,
    pub output_weights: Array1<T>,
    pub output_bias: T,
}

impl<T: Scalar> ToyTwoLayerModel<T> {
    pub fn new(
        hidden_weights: Array2<T>,
        hidden_bias: Array1<T>,
        output_weights: Array1<T>,
        output_bias: T,
    ) -> Result<Self> {
        let h = hidden_weights.nrows();
        if hidden_bias.len() != h || output_weights.len() != h {
            return Err(Error::Shape(format!(
                "hidden width {h} disagrees with bias ({}) or output weights ({})",
                hidden_bias.len(),
                output_weights.len()
            )));
        }
        Ok(Self {
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden_weights.nrows()
    }

    /// Hidden activations per token (`n × h`) and the pre-link score.
    fn forward(&self, e: &EmbeddingMatrix<T>) -> (Array2<T>, T) {
        let mut act = e.dot(&self.hidden_weights.t());
        for mut row in act.rows_mut() {
            row.zip_mut_with(&self.hidden_bias, |a, b| *a = (*a + *b).tanh());
        }
        let n = T::from_count(e.tokens());
        let pooled = act.sum_axis(Axis(0)).mapv(|v| v / n);
        let s = pooled.dot(&self.output_weights) + self.output_bias;
        (act, s)
    }
}

impl<T: Scalar> BlackBoxModel<T> for ToyTwoLayerModel<T> {
    fn dim(&self) -> usize {
        self.hidden_weights.ncols()
    }

    fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T> {
        check_dim(self, e)?;
        Ok(logistic(self.forward(e).1))
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, e: &EmbeddingMatrix<T>) -> Result<Array2<T>> {
        check_dim(self, e)?;
        let (act, s) = self.forward(e);
        let outer = logistic_derivative(s) / T::from_count(e.tokens());
        // d tanh = 1 - tanh², scaled by the output weight of each unit.
        let delta = act.mapv(|t| T::one() - t * t) * &self.output_weights;
        Ok(delta.dot(&self.hidden_weights).mapv(|v| v * outer))
    }
}

/// Wraps a model so that the listed token positions are zeroed before
/// scoring; the model is then provably blind to those positions.
#[derive(Debug, Clone)]
pub struct IgnorePositions<M> {
    pub inner: M,
    pub positions: Vec<usize>,
}

impl<T: Scalar, M: BlackBoxModel<T>> BlackBoxModel<T> for IgnorePositions<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T> {
        let e = self.strip(e)?;
        self.inner.evaluate(&e)
    }

    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }

    fn gradient(&self, e: &EmbeddingMatrix<T>) -> Result<Array2<T>> {
        let stripped = self.strip(e)?;
        let mut g = self.inner.gradient(&stripped)?;
        for &i in &self.positions {
            g.row_mut(i).fill(T::zero());
        }
        Ok(g)
    }
}

impl<M> IgnorePositions<M> {
    fn strip<T: Scalar>(&self, e: &EmbeddingMatrix<T>) -> Result<EmbeddingMatrix<T>> {
        if let Some(&bad) = self.positions.iter().find(|&&i| i >= e.tokens()) {
            return Err(Error::Shape(format!(
                "ignored position {bad} out of range for {} tokens",
                e.tokens()
            )));
        }
        Ok(e.with_masked(&self.positions))
    }
}

/// Scores class 0 of a binary model as `1 − f` and class 1 as `f`.
#[derive(Debug, Clone)]
pub struct BinaryClassView<M> {
    pub inner: M,
    pub class: usize,
}

impl<T: Scalar, M: BlackBoxModel<T>> BlackBoxModel<T> for BinaryClassView<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T> {
        let p = self.inner.evaluate(e)?;
        Ok(if self.class == 1 { p } else { T::one() - p })
    }

    fn evaluate_batch(&self, batch: &[EmbeddingMatrix<T>]) -> Result<Vec<T>> {
        let mut scores = self.inner.evaluate_batch(batch)?;
        if self.class != 1 {
            scores.iter_mut().for_each(|p| *p = T::one() - *p);
        }
        Ok(scores)
    }

    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }

    fn gradient(&self, e: &EmbeddingMatrix<T>) -> Result<Array2<T>> {
        let g = self.inner.gradient(e)?;
        Ok(if self.class == 1 { g } else { -g })
    }
}

/// A model defined by a closure; handy for synthetic response surfaces.
pub struct FnModel<F> {
    dim: usize,
    f: F,
}

impl<F> FnModel<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> BlackBoxModel<T> for FnModel<F>
where
    T: Scalar,
    F: Fn(&EmbeddingMatrix<T>) -> T + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T> {
        check_dim(self, e)?;
        Ok((self.f)(e))
    }
}

/// Central finite-difference gradient, `2nm` model evaluations.
pub fn finite_difference_gradient<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    step: T,
) -> Result<Array2<T>> {
    check_dim(model, e)?;
    let mut grad = Array2::zeros(e.raw_dim());
    let mut probe = e.view().to_owned();
    let two = T::lit(2.0);
    for i in 0..e.tokens() {
        for j in 0..e.dim() {
            let orig = probe[[i, j]];
            probe[[i, j]] = orig + step;
            let up = model.evaluate(&EmbeddingMatrix::from_trusted(probe.clone()))?;
            probe[[i, j]] = orig - step;
            let down = model.evaluate(&EmbeddingMatrix::from_trusted(probe.clone()))?;
            probe[[i, j]] = orig;
            grad[[i, j]] = (up - down) / (two * step);
        }
    }
    Ok(grad)
}

/// Analytic gradient when available, central differences (step `1e-5`)
/// otherwise.
pub fn gradient_or_finite_difference<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
) -> Result<Array2<T>> {
    if model.has_gradient() {
        model.gradient(e)
    } else {
        finite_difference_gradient(model, e, T::lit(1e-5))
    }
}

/// A toy model that can be saved to and loaded from a key/value text file.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyModel<T> {
    LinearBag(ToyLinearBagModel<T>),
    TwoLayer(ToyTwoLayerModel<T>),
}

impl<T: Scalar> BlackBoxModel<T> for ToyModel<T> {
    fn dim(&self) -> usize {
        match self {
            ToyModel::LinearBag(m) => m.dim(),
            ToyModel::TwoLayer(m) => m.dim(),
        }
    }

    fn evaluate(&self, e: &EmbeddingMatrix<T>) -> Result<T> {
        match self {
            ToyModel::LinearBag(m) => m.evaluate(e),
            ToyModel::TwoLayer(m) => m.evaluate(e),
        }
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, e: &EmbeddingMatrix<T>) -> Result<Array2<T>> {
        match self {
            ToyModel::LinearBag(m) => m.gradient(e),
            ToyModel::TwoLayer(m) => m.gradient(e),
        }
    }
}

fn write_floats<T: Scalar>(out: &mut String, key: &str, values: impl IntoIterator<Item = T>) {
    write!(out, "{key} =").unwrap();
    for v in values {
        write!(out, " {:.16e}", v.as_f64()).unwrap();
    }
    out.push('\n');
}

impl<T: Scalar> ToyModel<T> {
    /// Serializes the weights with 17 significant digits so that `f64`
    /// models reload bit-exactly.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        match self {
            ToyModel::LinearBag(m) => {
                s.push_str("kind = linear-bag\n");
                let link = match m.link {
                    Link::Logistic => "logistic",
                    Link::Identity => "identity",
                };
                writeln!(s, "link = {link}").unwrap();
                writeln!(s, "dim = {}", m.weights.len()).unwrap();
                write_floats(&mut s, "bias", [m.bias]);
                write_floats(&mut s, "weights", m.weights.iter().copied());
            }
            ToyModel::TwoLayer(m) => {
                s.push_str("kind = two-layer\n");
                writeln!(s, "dim = {}", m.dim()).unwrap();
                writeln!(s, "hidden = {}", m.hidden()).unwrap();
                write_floats(&mut s, "hidden_weights", m.hidden_weights.iter().copied());
                write_floats(&mut s, "hidden_bias", m.hidden_bias.iter().copied());
                write_floats(&mut s, "output_weights", m.output_weights.iter().copied());
                write_floats(&mut s, "output_bias", [m.output_bias]);
            }
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected 'key = value'", lineno + 1)))?;
            if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key {}", lineno + 1, k.trim())));
            }
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Parse(format!("missing key {k}")))
        };
        let usize_of =
            |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| Error::Parse(format!("key {k}: {e}"))) };
        let floats = |k: &str, expect: usize| -> Result<Vec<T>> {
            let v = get(k)?
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map(T::lit)
                        .map_err(|e| Error::Parse(format!("key {k}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if v.len() != expect {
                return Err(Error::Parse(format!(
                    "key {k}: expected {expect} values, found {}",
                    v.len()
                )));
            }
            Ok(v)
        };
        let model = match get("kind")? {
            "linear-bag" => {
                let dim = usize_of("dim")?;
                let link = match get("link")? {
                    "logistic" => Link::Logistic,
                    "identity" => Link::Identity,
                    other => return Err(Error::Parse(format!("unknown link {other}"))),
                };
                ToyModel::LinearBag(ToyLinearBagModel {
                    weights: Array1::from(floats("weights", dim)?),
                    bias: floats("bias", 1)?[0],
                    link,
                })
            }
            "two-layer" => {
                let dim = usize_of("dim")?;
                let hidden = usize_of("hidden")?;
                let hw = Array2::from_shape_vec((hidden, dim), floats("hidden_weights", hidden * dim)?)
                    .map_err(|e| Error::Parse(e.to_string()))?;
                ToyModel::TwoLayer(ToyTwoLayerModel::new(
                    hw,
                    Array1::from(floats("hidden_bias", hidden)?),
                    Array1::from(floats("output_weights", hidden)?),
                    floats("output_bias", 1)?[0],
                )?)
            }
            other => return Err(Error::Parse(format!("unknown model kind {other}"))),
        };
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn mat(rows: Array2<f64>) -> EmbeddingMatrix<f64> {
        EmbeddingMatrix::new(rows).unwrap()
    }

    #[test]
    fn linear_bag_reference_values() {
        let m = ToyLinearBagModel::new(array![1.0, 0.0], 0.0);
        assert_eq!(m.evaluate(&mat(array![[0.0, 0.0]])).unwrap(), 0.5);
        // logistic(2) = 1 / (1 + e^-2)
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        let v = m.evaluate(&mat(array![[1.0, 0.0], [1.0, 0.0]])).unwrap();
        assert_relative_eq!(v, expected, max_relative = 1e-15);
        assert_relative_eq!(v, 0.880797, epsilon = 1e-6);
        let tiny = m.evaluate(&mat(array![[-1e6, 0.0]])).unwrap();
        assert!(tiny >= 0.0);
        assert!(tiny <= 1e-300);
    }

    #[test]
    fn linear_bag_dimension_mismatch() {
        let m = ToyLinearBagModel::new(array![1.0, 0.0], 0.0);
        assert!(matches!(
            m.evaluate(&mat(array![[0.0, 0.0, 1.0]])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn linear_bag_gradient_at_origin() {
        let m = ToyLinearBagModel::new(array![1.0, 0.0], 0.0);
        let g = m.gradient(&mat(array![[0.0, 0.0]])).unwrap();
        assert_eq!(g, array![[0.25, 0.0]]);
    }

    #[test]
    fn zero_output_two_layer_has_zero_gradient() {
        let m = ToyTwoLayerModel::new(
            array![[1.0, -2.0], [0.5, 0.3], [2.0, 1.0]],
            array![0.1, 0.2, -0.3],
            array![0.0, 0.0, 0.0],
            0.7,
        )
        .unwrap();
        let g = m.gradient(&mat(array![[0.3, 0.2], [-1.0, 4.0]])).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_unsupported_without_capability() {
        let m = FnModel::new(2, |_e: &EmbeddingMatrix<f64>| 0.3);
        assert!(matches!(
            m.gradient(&mat(array![[0.0, 1.0]])),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn ignored_position_has_exactly_zero_gradient() {
        let m = IgnorePositions {
            inner: ToyLinearBagModel::new(array![0.4, -1.2], 0.3),
            positions: vec![1],
        };
        let e = mat(array![[0.3, 0.1], [2.0, -1.0], [0.5, 0.5]]);
        let g = m.gradient(&e).unwrap();
        assert!(g.row(1).iter().all(|v| *v == 0.0));
        assert!(g.row(0).iter().any(|v| *v != 0.0));
        let fd = finite_difference_gradient(&m, &e, 1e-5).unwrap();
        assert!(fd.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn class_view_complements_score() {
        let m = ToyLinearBagModel::new(array![1.0, 0.0], 0.0);
        let e = mat(array![[1.0, 0.0]]);
        let p = m.evaluate(&e).unwrap();
        let neg = BinaryClassView { inner: &m, class: 0 };
        assert_eq!(neg.evaluate(&e).unwrap(), 1.0 - p);
        assert_eq!(neg.gradient(&e).unwrap(), -m.gradient(&e).unwrap());
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let two = ToyModel::TwoLayer(
            ToyTwoLayerModel::new(
                array![[0.1, -1.0 / 3.0], [2.0f64.sqrt(), 1e-17]],
                array![0.2, -0.7],
                array![1.5, -2.25],
                std::f64::consts::PI,
            )
            .unwrap(),
        );
        let lin = ToyModel::LinearBag(
            ToyLinearBagModel::new(array![1.0 / 7.0, -3.3e-5, 12.0], -0.1).with_link(Link::Identity),
        );
        for model in [two, lin] {
            let mut buf = Vec::new();
            model.write_text(&mut buf).unwrap();
            let back = ToyModel::<f64>::read_text(buf.as_slice()).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn model_file_rejects_wrong_counts() {
        let text = "kind = linear-bag\nlink = logistic\ndim = 3\nbias = 0\nweights = 1 2\n";
        assert!(ToyModel::<f64>::read_text(text.as_bytes()).is_err());
    }

    #[test]
    fn model_score_range() {
        assert!(ModelScore::probability(0.3, 1).is_ok());
        assert!(ModelScore::probability(1.3, 1).is_err());
    }
}
