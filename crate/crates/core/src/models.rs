//! Small differentiable classifiers and the client-side SGD trainer.
//!
//! # Parameter layout
//!
//! Parameters are one flat [`ParamVector`]. Layers are stored in order; each
//! layer contributes its weight matrix (`fan_in x fan_out`, row-major, so the
//! weight from input `i` to output `j` sits at `i * fan_out + j`) followed by
//! its bias vector (`fan_out` entries).
//!
//! * softmax regression: one layer `input_dim -> num_classes`
//! * mlp2: `input_dim -> hidden -> hidden -> num_classes`, with logistic
//!   sigmoid activations on both hidden layers
//!
//! Both kinds end in a softmax and are trained with mean cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, Matrix};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};
use crate::vecmath::ParamVector;

const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp2 { hidden: usize },
}

impl ModelKind {
    /// Width of every layer boundary, input first.
    fn widths(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        match *self {
            ModelKind::SoftmaxRegression => vec![input_dim, num_classes],
            ModelKind::Mlp2 { hidden } => vec![input_dim, hidden, hidden, num_classes],
        }
    }

    pub fn param_count(&self, input_dim: usize, num_classes: usize) -> usize {
        self.widths(input_dim, num_classes)
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    kind: ModelKind,
    input_dim: usize,
    num_classes: usize,
    params: ParamVector,
}

impl Model {
    /// Model with weights drawn uniformly from `[-0.05, 0.05]`.
    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(kind, input_dim, num_classes)?;
        let mut rng = rng_for(seed, Stream::Init, &[]);
        for p in model.params.as_mut_slice() {
            *p = rng.random_range(-INIT_RANGE..=INIT_RANGE);
        }
        Ok(model)
    }

    pub fn zeroed(kind: ModelKind, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Shape(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        if let ModelKind::Mlp2 { hidden: 0 } = kind {
            return Err(Error::Shape("hidden width must be positive".into()));
        }
        let n = kind.param_count(input_dim, num_classes);
        Ok(Self {
            kind,
            input_dim,
            num_classes,
            params: ParamVector::zeros(n),
        })
    }

    pub fn with_params(
        kind: ModelKind,
        input_dim: usize,
        num_classes: usize,
        params: ParamVector,
    ) -> Result<Self> {
        let mut model = Self::zeroed(kind, input_dim, num_classes)?;
        model.set_params(params)?;
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.dim() != self.params.dim() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.dim(),
                params.dim()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        self.kind.widths(self.input_dim, self.num_classes)
    }

    /// Class probabilities, one row per example.
    pub fn predict_proba(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        let net = Net::new(self.widths(), self.params.as_slice());
        let mut out = Matrix::zeros(features.rows(), self.num_classes);
        let mut acts = net.buffers();
        for i in 0..features.rows() {
            net.forward(features.row(i), &mut acts);
            let logits = acts.last().unwrap();
            let lse = log_sum_exp(logits);
            for (o, z) in out.row_mut(i).iter_mut().zip(logits) {
                *o = (z - lse).exp();
            }
        }
        Ok(out)
    }

    /// Arg-max class per example; ties go to the lowest class index.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        self.check_features(features)?;
        let net = Net::new(self.widths(), self.params.as_slice());
        let mut acts = net.buffers();
        Ok((0..features.rows())
            .map(|i| {
                net.forward(features.row(i), &mut acts);
                argmax(acts.last().unwrap())
            })
            .collect())
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "feature width {} does not match model input {}",
                features.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_batch(&self, features: &Matrix, labels: &[usize]) -> Result<()> {
        self.check_features(features)?;
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Shape(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Borrowed view of a flat parameter vector as a stack of dense layers.
struct Net<'a> {
    widths: Vec<usize>,
    params: &'a [f64],
    offsets: Vec<usize>,
}

impl<'a> Net<'a> {
    fn new(widths: Vec<usize>, params: &'a [f64]) -> Self {
        let mut offsets = Vec::with_capacity(widths.len());
        let mut off = 0;
        for w in widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        Self {
            widths,
            params,
            offsets,
        }
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn buffers(&self) -> Vec<Vec<f64>> {
        self.widths.iter().map(|&w| vec![0.0; w]).collect()
    }

    /// Fills `acts[0]` with the input, hidden activations after the sigmoid,
    /// and raw logits in the last buffer.
    fn forward(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[self.offsets[l]..self.offsets[l] + fan_in * fan_out];
            let b = &self.params[self.offsets[l] + fan_in * fan_out..][..fan_out];
            let (head, tail) = acts.split_at_mut(l + 1);
            let (input, out) = (&head[l], &mut tail[0]);
            out.copy_from_slice(b);
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, wij) in out.iter_mut().zip(&w[i * fan_out..(i + 1) * fan_out]) {
                    *o += a * wij;
                }
            }
            if l + 1 < self.layers() {
                out.iter_mut().for_each(|z| *z = sigmoid(*z));
            }
        }
    }

    /// Mean cross-entropy over the selected rows and, when `grad` is given,
    /// accumulates the gradient of that mean into it.
    fn loss_and_grad(
        &self,
        features: &Matrix,
        labels: &[usize],
        rows: &[usize],
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let n = rows.len() as f64;
        let mut acts = self.buffers();
        let mut deltas = self.buffers();
        let mut total = 0.0;
        for &r in rows {
            self.forward(features.row(r), &mut acts);
            let y = labels[r];
            let logits = acts.last().unwrap();
            let lse = log_sum_exp(logits);
            total += lse - logits[y];
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            let top = deltas.last_mut().unwrap();
            for (d, z) in top.iter_mut().zip(logits) {
                *d = (z - lse).exp() / n;
            }
            top[y] -= 1.0 / n;
            for l in (0..self.layers()).rev() {
                let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
                let off = self.offsets[l];
                let (lower, upper) = deltas.split_at_mut(l + 1);
                let delta_out = &upper[0];
                let input = &acts[l];
                for (i, &a) in input.iter().enumerate() {
                    let gw = &mut g[off + i * fan_out..off + (i + 1) * fan_out];
                    for (gij, d) in gw.iter_mut().zip(delta_out) {
                        *gij += a * d;
                    }
                }
                for (gb, d) in g[off + fan_in * fan_out..][..fan_out]
                    .iter_mut()
                    .zip(delta_out)
                {
                    *gb += d;
                }
                if l > 0 {
                    let w = &self.params[off..off + fan_in * fan_out];
                    let delta_in = &mut lower[l];
                    for (i, di) in delta_in.iter_mut().enumerate() {
                        let back: f64 = w[i * fan_out..(i + 1) * fan_out]
                            .iter()
                            .zip(delta_out)
                            .map(|(wij, d)| wij * d)
                            .sum();
                        let a = input[i];
                        *di = back * a * (1.0 - a);
                    }
                }
            }
        }
        total / n
    }
}

/// Mean cross-entropy of `model` on a batch.
pub fn forward_loss(model: &Model, features: &Matrix, labels: &[usize]) -> Result<f64> {
    model.check_batch(features, labels)?;
    let rows: Vec<usize> = (0..labels.len()).collect();
    let net = Net::new(model.widths(), model.params.as_slice());
    Ok(net.loss_and_grad(features, labels, &rows, None))
}

/// Exact gradient of [`forward_loss`] with respect to the flat parameters.
pub fn gradient(model: &Model, features: &Matrix, labels: &[usize]) -> Result<ParamVector> {
    Ok(loss_and_gradient(model, features, labels)?.1)
}

pub fn loss_and_gradient(
    model: &Model,
    features: &Matrix,
    labels: &[usize],
) -> Result<(f64, ParamVector)> {
    model.check_batch(features, labels)?;
    let rows: Vec<usize> = (0..labels.len()).collect();
    let net = Net::new(model.widths(), model.params.as_slice());
    let mut g = vec![0.0; model.params.dim()];
    let loss = net.loss_and_grad(features, labels, &rows, Some(&mut g));
    Ok((loss, ParamVector::new(g)?))
}

/// Minibatch size; `"full"` or a positive integer in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub enum BatchSize {
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Size(usize),
    Name(String),
}

impl TryFrom<BatchRepr> for BatchSize {
    type Error = String;

    fn try_from(r: BatchRepr) -> std::result::Result<Self, String> {
        match r {
            BatchRepr::Size(n) => Ok(BatchSize::Size(n)),
            BatchRepr::Name(s) if s == "full" => Ok(BatchSize::Full),
            BatchRepr::Name(s) => Err(format!(
                "batch size must be \"full\" or an integer, got \"{s}\""
            )),
        }
    }
}

impl From<BatchSize> for BatchRepr {
    fn from(b: BatchSize) -> Self {
        match b {
            BatchSize::Full => BatchRepr::Name("full".into()),
            BatchSize::Size(n) => BatchRepr::Size(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(Error::config(
                "train.batch_size",
                "must be positive or `full`",
            ));
        }
        Ok(())
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Pseudo-gradient: received parameters minus locally trained parameters.
    pub grad: ParamVector,
    /// Mean training loss at the received parameters, before any local step.
    pub loss: f64,
    pub round: usize,
    pub num_samples: usize,
}

/// Example order used by minibatch SGD in one local epoch.
pub fn epoch_order(
    cfg: &LocalTrainConfig,
    round: usize,
    client_id: usize,
    epoch: usize,
    n: usize,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.batch_size != BatchSize::Full {
        let mut rng = rng_for(
            cfg.shuffle_seed,
            Stream::Shuffle,
            &[round as u64, client_id as u64, epoch as u64],
        );
        order.shuffle(&mut rng);
    }
    order
}

/// Runs `epochs` of minibatch SGD from a private copy of `model` on the
/// client's training split and returns the resulting pseudo-gradient.
pub fn local_train(
    model: &Model,
    data: &ClientDataset,
    cfg: &LocalTrainConfig,
    round: usize,
    client_id: usize,
) -> Result<ClientUpdate> {
    let train = &data.train;
    if train.is_empty() {
        return Err(Error::EmptyDataset {
            client_id,
            part: "training",
        });
    }
    if cfg.epochs == 0 {
        return Err(Error::config("train.epochs", "must be at least 1"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::config("train.learning_rate", "must be non-negative"));
    }
    let loss = forward_loss(model, &train.features, &train.labels)?;

    let n = train.len();
    let batch = match cfg.batch_size {
        BatchSize::Full => n,
        BatchSize::Size(0) => return Err(Error::config("train.batch_size", "must be positive")),
        BatchSize::Size(b) => b.min(n),
    };
    let widths = model.widths();
    let start = model.params.as_slice();
    let mut params = start.to_vec();
    let mut g = vec![0.0; params.len()];
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg, round, client_id, epoch, n);
        for rows in order.chunks(batch) {
            g.iter_mut().for_each(|v| *v = 0.0);
            let net = Net::new(widths.clone(), &params);
            net.loss_and_grad(&train.features, &train.labels, rows, Some(&mut g));
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= cfg.learning_rate * gi;
            }
        }
    }
    let grad: Vec<f64> = start.iter().zip(&params).map(|(s, e)| s - e).collect();
    Ok(ClientUpdate {
        client_id,
        grad: ParamVector::new(grad)?,
        loss,
        round,
        num_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledData;
    use crate::vecmath::norm;

    fn toy_batch() -> (Matrix, Vec<usize>) {
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![-0.5, 0.3],
            vec![0.2, -1.0],
            vec![1.5, 0.1],
        ])
        .unwrap();
        (x, vec![0, 1, 1, 0])
    }

    fn client(x: Matrix, y: Vec<usize>) -> ClientDataset {
        let cols = x.cols();
        ClientDataset {
            client_id: 0,
            train: LabeledData::new(x, y).unwrap(),
            test: LabeledData::empty(cols),
        }
    }

    #[test]
    fn layout_sizes() {
        assert_eq!(ModelKind::SoftmaxRegression.param_count(4, 3), 15);
        assert_eq!(
            ModelKind::Mlp2 { hidden: 5 }.param_count(4, 3),
            25 + 30 + 18
        );
        assert!(Model::zeroed(ModelKind::Mlp2 { hidden: 0 }, 2, 2).is_err());
    }

    #[test]
    fn zero_params_give_log_c() {
        let (x, y) = toy_batch();
        for c in [2usize, 3, 7] {
            let m = Model::zeroed(ModelKind::SoftmaxRegression, 2, c).unwrap();
            let l = forward_loss(&m, &x, &y).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_vanishes_for_confident_correct_logits() {
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let mut last = f64::INFINITY;
        for scale in [1.0, 5.0, 20.0, 80.0] {
            // weight row for input 0: [scale, -scale], biases zero
            let p = ParamVector::new(vec![scale, -scale, 0.0, 0.0]).unwrap();
            let m = Model::with_params(ModelKind::SoftmaxRegression, 1, 2, p).unwrap();
            let l = forward_loss(&m, &x, &[0]).unwrap();
            assert!(l <= last && l >= 0.0);
            last = l;
        }
        assert!(last < 1e-15);
    }

    #[test]
    fn loss_matches_scalar_reimplementation() {
        let (x, y) = toy_batch();
        let w = [0.3, -0.2, 0.1, 0.4];
        let b = [0.05, -0.1];
        let p = ParamVector::new(vec![w[0], w[1], w[2], w[3], b[0], b[1]]).unwrap();
        let m = Model::with_params(ModelKind::SoftmaxRegression, 2, 2, p).unwrap();
        let mut expected = 0.0;
        for (i, &label) in y.iter().enumerate() {
            let r = x.row(i);
            let z0 = r[0] * w[0] + r[1] * w[2] + b[0];
            let z1 = r[0] * w[1] + r[1] * w[3] + b[1];
            let p0 = z0.exp() / (z0.exp() + z1.exp());
            expected -= if label == 0 { p0.ln() } else { (1.0 - p0).ln() };
        }
        expected /= 4.0;
        assert!((forward_loss(&m, &x, &y).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn symmetric_batch_is_stationary_at_zero() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.5],
            vec![-1.0, -0.5],
            vec![1.0, 0.5],
            vec![-1.0, -0.5],
        ])
        .unwrap();
        let y = vec![0, 0, 1, 1];
        for kind in [ModelKind::SoftmaxRegression, ModelKind::Mlp2 { hidden: 3 }] {
            let m = Model::zeroed(kind, 2, 2).unwrap();
            assert!(norm(&gradient(&m, &x, &y).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn doubled_features_double_weight_gradient_at_zero() {
        let (x, y) = toy_batch();
        let x2 = x.map(|v| 2.0 * v);
        let m = Model::zeroed(ModelKind::SoftmaxRegression, 2, 2).unwrap();
        let g1 = finite_difference(&m, &x, &y, 1e-5);
        let g2 = finite_difference(&m, &x2, &y, 1e-5);
        for i in 0..4 {
            assert!((g2[i] - 2.0 * g1[i]).abs() < 1e-8);
        }
        // biases see the same predictive error either way
        for i in 4..6 {
            assert!((g2[i] - g1[i]).abs() < 1e-8);
        }
        let analytic = gradient(&m, &x2, &y).unwrap();
        for i in 0..6 {
            assert!((analytic[i] - g2[i]).abs() < 1e-8);
        }
    }

    fn finite_difference(m: &Model, x: &Matrix, y: &[usize], h: f64) -> Vec<f64> {
        let base = m.params().as_slice().to_vec();
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                let mp = Model::with_params(
                    m.kind(),
                    m.input_dim(),
                    m.num_classes(),
                    ParamVector::new(plus).unwrap(),
                )
                .unwrap();
                let mm = Model::with_params(
                    m.kind(),
                    m.input_dim(),
                    m.num_classes(),
                    ParamVector::new(minus).unwrap(),
                )
                .unwrap();
                (forward_loss(&mp, x, y).unwrap() - forward_loss(&mm, x, y).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let (x, y) = toy_batch();
        let m = Model::new(ModelKind::Mlp2 { hidden: 3 }, 2, 2, 9).unwrap();
        let m = Model::with_params(m.kind(), 2, 2, m.params().scaled(20.0)).unwrap();
        let fd = finite_difference(&m, &x, &y, 1e-5);
        let g = gradient(&m, &x, &y).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_errors() {
        let (x, y) = toy_batch();
        let m = Model::zeroed(ModelKind::SoftmaxRegression, 3, 2).unwrap();
        assert!(matches!(forward_loss(&m, &x, &y), Err(Error::Shape(_))));
        let m = Model::zeroed(ModelKind::SoftmaxRegression, 2, 2).unwrap();
        assert!(matches!(
            forward_loss(&m, &x, &y[..2]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward_loss(&m, &Matrix::zeros(0, 2), &[]),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            forward_loss(&m, &x, &[0, 1, 2, 0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_learning_rate_does_not_move() {
        let (x, y) = toy_batch();
        let m = Model::new(ModelKind::SoftmaxRegression, 2, 2, 3).unwrap();
        let cfg = LocalTrainConfig {
            epochs: 3,
            batch_size: BatchSize::Size(3),
            learning_rate: 0.0,
            shuffle_seed: 1,
        };
        let u = local_train(&m, &client(x.clone(), y.clone()), &cfg, 0, 0).unwrap();
        assert!(u.grad.is_zero());
        assert_eq!(u.loss, forward_loss(&m, &x, &y).unwrap());
    }

    #[test]
    fn full_batch_single_epoch_is_one_gradient_step() {
        let (x, y) = toy_batch();
        let m = Model::new(ModelKind::Mlp2 { hidden: 4 }, 2, 2, 5).unwrap();
        let cfg = LocalTrainConfig {
            epochs: 1,
            batch_size: BatchSize::Full,
            learning_rate: 0.3,
            shuffle_seed: 1,
        };
        let u = local_train(&m, &client(x.clone(), y.clone()), &cfg, 4, 2).unwrap();
        let g = gradient(&m, &x, &y).unwrap();
        for (a, b) in u.grad.iter().zip(g.iter()) {
            assert!((a - 0.3 * b).abs() <= 1e-12);
        }
        assert_eq!(u.round, 4);
        assert_eq!(u.client_id, 2);
        assert_eq!(u.num_samples, 4);
    }

    #[test]
    fn minibatch_trace_matches_scripted_steps() {
        let (x, y) = toy_batch();
        let m = Model::new(ModelKind::SoftmaxRegression, 2, 2, 11).unwrap();
        let cfg = LocalTrainConfig {
            epochs: 1,
            batch_size: BatchSize::Size(2),
            learning_rate: 0.5,
            shuffle_seed: 42,
        };
        let u = local_train(&m, &client(x.clone(), y.clone()), &cfg, 1, 3).unwrap();

        let order = epoch_order(&cfg, 1, 3, 0, 4);
        let mut theta = m.clone();
        let mut total = ParamVector::zeros(theta.params().dim());
        for rows in order.chunks(2) {
            let bx = x.select_rows(rows);
            let by: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            let step = gradient(&theta, &bx, &by).unwrap().scaled(0.5);
            total.add_scaled(1.0, &step).unwrap();
            let next = theta.params().sub(&step).unwrap();
            theta.set_params(next).unwrap();
        }
        for (a, b) in u.grad.iter().zip(total.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn reported_loss_ignores_training_hyperparameters() {
        let (x, y) = toy_batch();
        let data = client(x, y);
        let m = Model::new(ModelKind::SoftmaxRegression, 2, 2, 1).unwrap();
        let losses: Vec<f64> = [(1, BatchSize::Full, 0.1), (3, BatchSize::Size(1), 1.0)]
            .into_iter()
            .map(|(epochs, batch_size, learning_rate)| {
                let cfg = LocalTrainConfig {
                    epochs,
                    batch_size,
                    learning_rate,
                    shuffle_seed: 7,
                };
                local_train(&m, &data, &cfg, 0, 0).unwrap().loss
            })
            .collect();
        assert_eq!(losses[0], losses[1]);
    }

    #[test]
    fn empty_client_is_rejected() {
        let m = Model::zeroed(ModelKind::SoftmaxRegression, 2, 2).unwrap();
        let data = client(Matrix::zeros(0, 2), vec![]);
        let cfg = LocalTrainConfig {
            epochs: 1,
            batch_size: BatchSize::Full,
            learning_rate: 0.1,
            shuffle_seed: 0,
        };
        assert!(matches!(
            local_train(&m, &data, &cfg, 0, 0),
            Err(Error::EmptyDataset { .. })
        ));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, _) = toy_batch();
        let m = Model::new(ModelKind::Mlp2 { hidden: 4 }, 2, 3, 2).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for i in 0..p.rows() {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
