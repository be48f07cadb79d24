//! Per-sequence training losses with closed-form gradients with respect to
//! the predicted probabilities.
//!
//! The anticipation loss weighs false negatives at full strength from the
//! first frame while ramping the false-positive weight linearly as `t/T`.
//! CE, ECE and LGL are the comparison baselines: CE reads only the final
//! frame, ECE weighs frames by `e^{-(T-t)}` and LGL by `t/T`.
//!
//! All four are negated log-likelihood style losses minimized by descent.
//! Frames are indexed 1..T, so the anticipation false-positive weight at
//! the first frame is `1/T` and reaches 1 exactly at `t = T`. Probabilities
//! are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any logarithm;
//! gradients are zero on clamped entries.

use crate::matrix::Matrix;
use crate::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Anticipation,
    Ce,
    Ece,
    Lgl,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Anticipation, LossKind::Ce, LossKind::Ece, LossKind::Lgl];
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::Anticipation => "anticipation",
            LossKind::Ce => "ce",
            LossKind::Ece => "ece",
            LossKind::Lgl => "lgl",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anticipation" => Ok(LossKind::Anticipation),
            "ce" => Ok(LossKind::Ce),
            "ece" => Ok(LossKind::Ece),
            "lgl" => Ok(LossKind::Lgl),
            other => Err(Error::argument(format!(
                "unknown loss kind {other:?} (expected anticipation, ce, ece or lgl)"
            ))),
        }
    }
}

/// One-hot class label, constant across all frames of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    n_classes: usize,
    frames: usize,
    class: usize,
}

impl LabelSequence {
    pub fn new(n_classes: usize, frames: usize, class: usize) -> Result<Self> {
        if n_classes < 1 || frames < 1 {
            return Err(Error::argument(format!(
                "label sequence needs n_classes >= 1 and frames >= 1, got {n_classes} and {frames}"
            )));
        }
        if class >= n_classes {
            return Err(Error::argument(format!(
                "class {class} out of range for {n_classes} classes"
            )));
        }
        Ok(LabelSequence {
            n_classes,
            frames,
            class,
        })
    }

    /// Validates a `T x N` binary matrix: each row one-hot, same class
    /// throughout.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let mut class = None;
        for t in 0..m.rows() {
            let row = m.row(t);
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, _)| k)
                .collect();
            if ones.len() != 1 || row[ones[0]] != 1.0 {
                return Err(Error::argument(format!("row {t} of label matrix is not one-hot")));
            }
            match class {
                None => class = Some(ones[0]),
                Some(c) if c != ones[0] => {
                    return Err(Error::argument(format!(
                        "label class changes from {c} to {} at frame {t}",
                        ones[0]
                    )))
                }
                _ => {}
            }
        }
        LabelSequence::new(m.cols(), m.rows(), class.unwrap_or(0))
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn class(&self) -> usize {
        self.class
    }

    #[inline]
    pub fn indicator(&self, k: usize) -> f64 {
        if k == self.class {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-frame class probability rows (`T x N`), each summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeries {
    probs: Matrix,
}

impl PredictionSeries {
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.rows() < 1 || probs.cols() < 1 {
            return Err(Error::argument("prediction series must be non-degenerate"));
        }
        for t in 0..probs.rows() {
            let row = probs.row(t);
            let sum: f64 = row.iter().sum();
            if !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::argument(format!(
                    "prediction row {t} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::argument(format!(
                    "prediction row {t} has entries outside [0, 1]"
                )));
            }
        }
        Ok(PredictionSeries { probs })
    }

    pub fn n_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    #[inline]
    pub fn prob(&self, t: usize, k: usize) -> f64 {
        self.probs.get(t, k)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.probs
    }
}

fn check_shapes(y: &LabelSequence, p: &PredictionSeries) -> Result<()> {
    if y.n_classes() != p.n_classes() || y.frames() != p.frames() {
        return Err(Error::shape(format!(
            "labels {}x{} vs predictions {}x{}",
            y.frames(),
            y.n_classes(),
            p.frames(),
            p.n_classes()
        )));
    }
    Ok(())
}

#[inline]
fn clamp(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, false)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, false)
    } else {
        (p, true)
    }
}

/// Frame-level binary cross-entropy over all classes:
/// `-sum_k [y log q + (1-y) log(1-q)]`, with its gradient row.
fn bce_frame(y: &LabelSequence, p: &PredictionSeries, t: usize) -> (f64, Vec<f64>) {
    let n = y.n_classes();
    let mut acc = 0.0;
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let yk = y.indicator(k);
        let (q, active) = clamp(p.prob(t, k));
        acc += yk * q.ln() + (1.0 - yk) * (1.0 - q).ln();
        if active {
            grad[k] = -(yk / q - (1.0 - yk) / (1.0 - q));
        }
    }
    (-acc, grad)
}

/// Anticipation loss:
/// `L = -(1/N) sum_k sum_t [y log q + (t/T)(1-y) log(1-q)]`, `t = 1..T`.
pub fn anticipation_loss(y: &LabelSequence, p: &PredictionSeries) -> Result<(f64, Matrix)> {
    check_shapes(y, p)?;
    let (n, frames) = (y.n_classes(), y.frames());
    let nf = n as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(frames, n);
    for t in 0..frames {
        let w = (t + 1) as f64 / frames as f64;
        for k in 0..n {
            let yk = y.indicator(k);
            let (q, active) = clamp(p.prob(t, k));
            total += yk * q.ln() + w * ((1.0 - yk) * (1.0 - q).ln());
            if active {
                grad.set(t, k, -(yk / q - w * (1.0 - yk) / (1.0 - q)) / nf);
            }
        }
    }
    Ok((-total / nf, grad))
}

/// Cross-entropy on the final frame only.
pub fn ce_loss(y: &LabelSequence, p: &PredictionSeries) -> Result<(f64, Matrix)> {
    check_shapes(y, p)?;
    let last = y.frames() - 1;
    let (loss, row) = bce_frame(y, p, last);
    let mut grad = Matrix::zeros(y.frames(), y.n_classes());
    for (k, g) in row.into_iter().enumerate() {
        grad.set(last, k, g);
    }
    Ok((loss, grad))
}

/// Exponentially weighted cross-entropy: `sum_t e^{-(T-t)} BCE_t`.
pub fn ece_loss(y: &LabelSequence, p: &PredictionSeries) -> Result<(f64, Matrix)> {
    check_shapes(y, p)?;
    let frames = y.frames();
    let mut total = 0.0;
    let mut grad = Matrix::zeros(frames, y.n_classes());
    for t in 0..frames {
        let w = (-((frames - (t + 1)) as f64)).exp();
        let (bce, row) = bce_frame(y, p, t);
        total += w * bce;
        for (k, g) in row.into_iter().enumerate() {
            grad.set(t, k, w * g);
        }
    }
    Ok((total, grad))
}

/// Linearly growing cross-entropy: `sum_t (t/T) BCE_t`.
pub fn lgl_loss(y: &LabelSequence, p: &PredictionSeries) -> Result<(f64, Matrix)> {
    check_shapes(y, p)?;
    let frames = y.frames();
    let mut total = 0.0;
    let mut grad = Matrix::zeros(frames, y.n_classes());
    for t in 0..frames {
        let w = (t + 1) as f64 / frames as f64;
        let (bce, row) = bce_frame(y, p, t);
        total += w * bce;
        for (k, g) in row.into_iter().enumerate() {
            grad.set(t, k, w * g);
        }
    }
    Ok((total, grad))
}

pub fn loss_dispatch(kind: LossKind, y: &LabelSequence, p: &PredictionSeries) -> Result<(f64, Matrix)> {
    match kind {
        LossKind::Anticipation => anticipation_loss(y, p),
        LossKind::Ce => ce_loss(y, p),
        LossKind::Ece => ece_loss(y, p),
        LossKind::Lgl => lgl_loss(y, p),
    }
}
