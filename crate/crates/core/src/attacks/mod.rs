//! White-box membership inference: features are a model's output logits
//! plus its loss on each example, and the attack is a class-weighted
//! logistic regression on those features.

mod experiment;

pub use experiment::{run_membership_experiment, MembershipExperiment, MembershipOutcome};

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{sigmoid, softplus, LabeledPoint};
use crate::Scalar;

/// A trained classifier the attacker can query.
pub trait MembershipModel<T: Scalar>: Sync {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &[T]) -> Vec<T>;
    /// Cross-entropy of `x` with class `label`.
    fn loss(&self, x: &[T], label: usize) -> T;
}

/// Binary logistic regression `P(y = 1 | x) = sigmoid(w·x)`, exposed with
/// logits `(0, w·x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLogistic<T> {
    pub w: Vec<T>,
}

impl<T: Scalar> MembershipModel<T> for BinaryLogistic<T> {
    fn num_classes(&self) -> usize {
        2
    }

    fn logits(&self, x: &[T]) -> Vec<T> {
        vec![T::zero(), linalg::dot(&self.w, x)]
    }

    fn loss(&self, x: &[T], label: usize) -> T {
        let z = linalg::dot(&self.w, x);
        softplus(z) - if label == 1 { z } else { T::zero() }
    }
}

/// Multiclass linear softmax model with a `classes × d` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax<T> {
    pub weights: Matrix<T>,
}

impl<T: Scalar> MembershipModel<T> for LinearSoftmax<T> {
    fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    fn logits(&self, x: &[T]) -> Vec<T> {
        self.weights.matvec(x)
    }

    fn loss(&self, x: &[T], label: usize) -> T {
        let z = self.logits(x);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        lse - z[label]
    }
}

/// Attack dataset: one feature row per example, `true` for members.
#[derive(Debug, Clone, PartialEq)]
pub struct MiaDataset<T> {
    pub features: Vec<Vec<T>>,
    pub labels: Vec<bool>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl<T: Scalar> MiaDataset<T> {
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Copy with membership labels randomly permuted across all examples.
    pub fn with_shuffled_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut out = self.clone();
        out.labels.shuffle(rng);
        out
    }

    fn rows(&self, idx: &[usize]) -> (Vec<&[T]>, Vec<bool>) {
        (
            idx.iter().map(|&i| self.features[i].as_slice()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// How members and non-members are divided between attack train and test.
///
/// The test split holds `test_fraction` of the non-members and the same
/// number of members. The train split holds the remaining non-members and
/// `train_member_fraction` of all members, taken from those not in test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiaSplit {
    pub test_fraction: f64,
    pub train_member_fraction: f64,
}

impl Default for MiaSplit {
    fn default() -> Self {
        Self {
            test_fraction: 0.5,
            train_member_fraction: 0.1,
        }
    }
}

fn point_key<T: Scalar>(p: &LabeledPoint<T>) -> Vec<u64> {
    p.x.iter().chain(std::iter::once(&p.y)).map(|v| v.as_f64().to_bits()).collect()
}

fn label_index<T: Scalar>(y: T, classes: usize) -> Result<usize> {
    let k = y.to_usize().filter(|&k| T::from_usize_lossy(k) == y && k < classes);
    k.ok_or_else(|| Error::invalid("label", format!("must be a class index below {classes}")))
}

pub fn mia_features<T: Scalar, M: MembershipModel<T> + ?Sized>(model: &M, p: &LabeledPoint<T>) -> Result<Vec<T>> {
    let label = label_index(p.y, model.num_classes())?;
    let mut f = model.logits(&p.x);
    f.push(model.loss(&p.x, label));
    Ok(f)
}

pub fn build_mia_dataset<T, M, R>(
    model: &M,
    members: &[LabeledPoint<T>],
    nonmembers: &[LabeledPoint<T>],
    split: MiaSplit,
    rng: &mut R,
) -> Result<MiaDataset<T>>
where
    T: Scalar,
    M: MembershipModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for (name, f) in [("test_fraction", split.test_fraction), ("train_member_fraction", split.train_member_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(name, "must lie in (0, 1)"));
        }
    }
    let seen: HashSet<Vec<u64>> = members.iter().map(point_key).collect();
    if nonmembers.iter().any(|p| seen.contains(&point_key(p))) {
        return Err(Error::NotDisjoint);
    }

    let mut mem_idx: Vec<usize> = (0..members.len()).collect();
    let mut non_idx: Vec<usize> = (0..nonmembers.len()).collect();
    mem_idx.shuffle(rng);
    non_idx.shuffle(rng);
    let n_test = ((nonmembers.len() as f64 * split.test_fraction).round() as usize).clamp(1, nonmembers.len());
    if n_test >= members.len() {
        return Err(Error::TooFewSamples {
            needed: n_test + 1,
            got: members.len(),
        });
    }
    let n_train_mem = ((members.len() as f64 * split.train_member_fraction).round() as usize).clamp(1, members.len() - n_test);

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut push = |p: &LabeledPoint<T>, member: bool, into_test: bool| -> Result<()> {
        let i = features.len();
        features.push(mia_features(model, p)?);
        labels.push(member);
        if into_test {
            test.push(i);
        } else {
            train.push(i);
        }
        Ok(())
    };
    for (k, &i) in non_idx.iter().enumerate() {
        push(&nonmembers[i], false, k < n_test)?;
    }
    for (k, &i) in mem_idx.iter().take(n_test + n_train_mem).enumerate() {
        push(&members[i], true, k < n_test)?;
    }
    let ds = MiaDataset {
        features,
        labels,
        train,
        test,
    };
    for (name, idx) in [("train", &ds.train), ("test", &ds.test)] {
        let pos = idx.iter().filter(|&&i| ds.labels[i]).count();
        if pos == 0 || pos == idx.len() {
            return Err(Error::SingleClass(name));
        }
    }
    Ok(ds)
}

/// Ridge added to the attack objective; keeps the Newton system positive
/// definite and the optimum finite on separable features.
pub const MIA_RIDGE: f64 = 1e-6;
pub const MIA_GRAD_TOL: f64 = 1e-6;

/// Logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct MiaClassifier<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
    /// Weights on the standardized features followed by the intercept.
    pub theta: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> MiaClassifier<T> {
    fn design(&self, x: &[T]) -> Vec<T> {
        let mut z: Vec<T> = x.iter().zip(&self.mean).zip(&self.scale).map(|((&v, &m), &s)| (v - m) / s).collect();
        z.push(T::one());
        z
    }

    /// Attack score: estimated probability of membership.
    pub fn score(&self, x: &[T]) -> T {
        sigmoid(linalg::dot(&self.theta, &self.design(x)))
    }
}

fn objective<T: Scalar>(theta: &[T], rows: &[Vec<T>], y: &[bool], wts: &[T], ridge: T) -> T {
    let mut total = T::zero();
    for ((x, &label), &s) in rows.iter().zip(y).zip(wts) {
        let z = linalg::dot(theta, x);
        total += s * (softplus(z) - if label { z } else { T::zero() });
    }
    total + T::lit(0.5) * ridge * linalg::norm_sq(theta)
}

/// Damped Newton on the class-weighted, ridge-regularized log loss, for at
/// most `epochs` iterations or until the gradient norm is at most
/// [`MIA_GRAD_TOL`]. Inverse-frequency class weights when `class_reweighting`.
pub fn fit_mia_classifier<T: Scalar>(
    dataset: &MiaDataset<T>,
    epochs: usize,
    class_reweighting: bool,
) -> Result<MiaClassifier<T>> {
    if dataset.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (xs, y) = dataset.rows(&dataset.train);
    let n = xs.len();
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass("train"));
    }
    let d = xs[0].len();
    let nf = T::from_usize_lossy(n);
    let mut mean = vec![T::zero(); d];
    for x in &xs {
        linalg::axpy(T::one() / nf, x, &mut mean);
    }
    let mut scale = vec![T::zero(); d];
    for x in &xs {
        for j in 0..d {
            scale[j] += (x[j] - mean[j]) * (x[j] - mean[j]) / nf;
        }
    }
    for s in &mut scale {
        *s = if *s > T::zero() { s.sqrt() } else { T::one() };
    }
    let mut clf = MiaClassifier {
        mean,
        scale,
        theta: vec![T::zero(); d + 1],
        iterations: 0,
        converged: false,
    };
    let rows: Vec<Vec<T>> = xs.iter().map(|x| clf.design(x)).collect();
    let weight_of = |label: bool| {
        let count = if label { pos } else { n - pos };
        if class_reweighting {
            T::one() / (T::lit(2.0) * T::from_usize_lossy(count))
        } else {
            T::one() / nf
        }
    };
    let wts: Vec<T> = y.iter().map(|&b| weight_of(b)).collect();
    let ridge = T::lit(MIA_RIDGE);
    let p = d + 1;
    let mut current = objective(&clf.theta, &rows, &y, &wts, ridge);

    for _ in 0..epochs {
        let mut grad = linalg::scale(ridge, &clf.theta);
        let mut hess = Matrix::identity(p).scaled(ridge);
        for ((x, &label), &s) in rows.iter().zip(&y).zip(&wts) {
            let prob = sigmoid(linalg::dot(&clf.theta, x));
            let r = prob - if label { T::one() } else { T::zero() };
            linalg::axpy(s * r, x, &mut grad);
            let c = s * prob * (T::one() - prob);
            for i in 0..p {
                for j in 0..p {
                    hess[(i, j)] += c * x[i] * x[j];
                }
            }
        }
        if linalg::norm(&grad) <= T::lit(MIA_GRAD_TOL) {
            clf.converged = true;
            break;
        }
        clf.iterations += 1;
        let step = hess.cholesky_solve(&grad)?;
        let mut t = T::one();
        let slope = linalg::dot(&grad, &step);
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<T> = clf.theta.iter().zip(&step).map(|(&a, &b)| a - t * b).collect();
            let value = objective(&trial, &rows, &y, &wts, ridge);
            if value <= current - T::lit(1e-4) * t * slope {
                clf.theta = trial;
                current = value;
                accepted = true;
                break;
            }
            t *= T::lit(0.5);
        }
        if !accepted {
            // No further decrease representable: at the optimum to rounding.
            clf.converged = true;
            break;
        }
    }
    if !linalg::all_finite(&clf.theta) {
        return Err(Error::NonFinite("attack weights"));
    }
    Ok(clf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Area under the ROC curve by the rank statistic, with tied scores given
/// their mean rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&b| b).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("scores"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("attack score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Threshold-0.5 metrics plus AUC for given scores.
pub fn report_from_scores(scores: &[f64], labels: &[bool]) -> Result<MiaReport> {
    let auc = roc_auc(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MiaReport {
        accuracy: ratio(tp + tn, scores.len()),
        precision,
        recall,
        f1,
        auc,
    })
}

pub fn evaluate_mia<T: Scalar>(classifier: &MiaClassifier<T>, dataset: &MiaDataset<T>) -> Result<MiaReport> {
    if dataset.test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (xs, y) = dataset.rows(&dataset.test);
    let scores: Vec<f64> = xs.iter().map(|x| classifier.score(x).as_f64()).collect();
    report_from_scores(&scores, &y)
}

/// One labelled report row.
#[derive(Debug, Clone, PartialEq)]
pub struct MiaRow {
    pub model_id: String,
    /// `None` for a non-private model, written as `inf`.
    pub epsilon: Option<f64>,
    pub report: MiaReport,
}

/// `model_id,epsilon,accuracy,precision,recall,f1,auc`.
pub fn write_mia_csv<W: Write>(out: W, rows: &[MiaRow]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["model_id", "epsilon", "accuracy", "precision", "recall", "f1", "auc"])?;
    for row in rows {
        let r = row.report;
        w.write_record([
            row.model_id.clone(),
            row.epsilon.map_or_else(|| "inf".to_string(), |e| e.to_string()),
            r.accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.auc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
