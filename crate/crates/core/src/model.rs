//! Two-stage context-then-action recurrent classifier, its fusion-variant
//! ablations, training step, and temporal average-pooling inference.
//!
//! The multi-stage model runs an LSTM over the context stream, reads class
//! probabilities off every hidden state through a softmax layer, and feeds
//! the hidden activations (not the probabilities) concatenated with the
//! action stream into a second LSTM with its own softmax readout. The
//! overall training loss averages the per-sample sum of both stage losses.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::losses::{loss_dispatch, LabelSequence, LossKind, PredictionSeries};
use crate::lstm::{
    lstm_backward, lstm_forward_trace, LstmGrads, LstmParams, LstmTrace, LSTM_PARAM_NAMES,
};
use crate::matrix::{argmax, softmax, Matrix};
use crate::rng::SplitMix64;
use crate::sgd::SgdState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchitectureVariant {
    /// Context LSTM first, hidden states concatenated with action features
    /// into a second LSTM.
    MultiStage,
    /// Same wiring with the two feature streams exchanged.
    Swapped,
    /// Single LSTM over the concatenated features.
    Concatenation,
    /// Two independent LSTMs, hidden states merged into one softmax layer.
    Parallel,
}

impl ArchitectureVariant {
    pub const ALL: [ArchitectureVariant; 4] = [
        ArchitectureVariant::MultiStage,
        ArchitectureVariant::Swapped,
        ArchitectureVariant::Concatenation,
        ArchitectureVariant::Parallel,
    ];

    /// Variants whose loss has both a context-stage and an action-stage term.
    pub fn two_series(&self) -> bool {
        matches!(self, ArchitectureVariant::MultiStage | ArchitectureVariant::Swapped)
    }
}

impl std::fmt::Display for ArchitectureVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ArchitectureVariant::MultiStage => "MultiStage",
            ArchitectureVariant::Swapped => "Swapped",
            ArchitectureVariant::Concatenation => "Concatenation",
            ArchitectureVariant::Parallel => "Parallel",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ArchitectureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MultiStage" => Ok(ArchitectureVariant::MultiStage),
            "Swapped" => Ok(ArchitectureVariant::Swapped),
            "Concatenation" => Ok(ArchitectureVariant::Concatenation),
            "Parallel" => Ok(ArchitectureVariant::Parallel),
            other => Err(Error::argument(format!(
                "unknown architecture variant {other:?}"
            ))),
        }
    }
}

/// Fully-connected softmax readout (pre-softmax affine part).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Matrix,
    pub b: Matrix,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            w: Matrix::zeros(out_dim, in_dim),
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn init(out_dim: usize, in_dim: usize, rng: &mut SplitMix64) -> Self {
        let s = (6.0 / (out_dim + in_dim) as f64).sqrt();
        let mut w = Matrix::zeros(out_dim, in_dim);
        for v in w.data_mut() {
            *v = rng.uniform(-s, s);
        }
        Linear {
            w,
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.w.matvec(x)?;
        for (k, zk) in z.iter_mut().enumerate() {
            *zk += self.b.get(k, 0);
        }
        Ok(z)
    }
}

#[derive(Debug, Clone)]
pub struct MsLstmModel {
    pub n_classes: usize,
    pub d_ctx: usize,
    pub d_act: usize,
    pub hidden: usize,
    pub variant: ArchitectureVariant,
    pub stage1: LstmParams,
    pub fc1: Linear,
    pub stage2: Option<LstmParams>,
    pub fc2: Option<Linear>,
}

fn stage_dims(
    variant: ArchitectureVariant,
    d_ctx: usize,
    d_act: usize,
    hidden: usize,
) -> (usize, usize, Option<usize>, bool) {
    // (stage1 input, fc1 input, stage2 input, has fc2)
    match variant {
        ArchitectureVariant::MultiStage => (d_ctx, hidden, Some(hidden + d_act), true),
        ArchitectureVariant::Swapped => (d_act, hidden, Some(hidden + d_ctx), true),
        ArchitectureVariant::Concatenation => (d_ctx + d_act, hidden, None, false),
        ArchitectureVariant::Parallel => (d_ctx, 2 * hidden, Some(d_act), false),
    }
}

impl MsLstmModel {
    pub fn zeros(
        n_classes: usize,
        d_ctx: usize,
        d_act: usize,
        hidden: usize,
        variant: ArchitectureVariant,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::argument(format!(
                "model needs at least 2 classes, got {n_classes}"
            )));
        }
        if hidden < 1 {
            return Err(Error::argument("model needs at least 1 hidden unit"));
        }
        let (s1_in, fc1_in, s2_in, has_fc2) = stage_dims(variant, d_ctx, d_act, hidden);
        Ok(MsLstmModel {
            n_classes,
            d_ctx,
            d_act,
            hidden,
            variant,
            stage1: LstmParams::zeros(s1_in, hidden),
            fc1: Linear::zeros(n_classes, fc1_in),
            stage2: s2_in.map(|d| LstmParams::zeros(d, hidden)),
            fc2: if has_fc2 {
                Some(Linear::zeros(n_classes, hidden))
            } else {
                None
            },
        })
    }

    pub fn init(
        n_classes: usize,
        d_ctx: usize,
        d_act: usize,
        hidden: usize,
        variant: ArchitectureVariant,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let mut m = MsLstmModel::zeros(n_classes, d_ctx, d_act, hidden, variant)?;
        let (s1_in, fc1_in, s2_in, has_fc2) = stage_dims(variant, d_ctx, d_act, hidden);
        m.stage1 = LstmParams::init(s1_in, hidden, rng);
        m.fc1 = Linear::init(n_classes, fc1_in, rng);
        if let Some(d) = s2_in {
            m.stage2 = Some(LstmParams::init(d, hidden, rng));
        }
        if has_fc2 {
            m.fc2 = Some(Linear::init(n_classes, hidden, rng));
        }
        Ok(m)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for n in LSTM_PARAM_NAMES {
            names.push(format!("stage1.{n}"));
        }
        names.push("fc1.w".to_string());
        names.push("fc1.b".to_string());
        if self.stage2.is_some() {
            for n in LSTM_PARAM_NAMES {
                names.push(format!("stage2.{n}"));
            }
        }
        if self.fc2.is_some() {
            names.push("fc2.w".to_string());
            names.push("fc2.b".to_string());
        }
        names
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        let (head, tail) = name.split_once('.')?;
        match head {
            "stage1" => self.stage1.param(tail),
            "stage2" => self.stage2.as_ref().and_then(|p| p.param(tail)),
            "fc1" => match tail {
                "w" => Some(&self.fc1.w),
                "b" => Some(&self.fc1.b),
                _ => None,
            },
            "fc2" => self.fc2.as_ref().and_then(|fc| match tail {
                "w" => Some(&fc.w),
                "b" => Some(&fc.b),
                _ => None,
            }),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let (head, tail) = name.split_once('.')?;
        match head {
            "stage1" => self.stage1.param_mut(tail),
            "stage2" => self.stage2.as_mut().and_then(|p| p.param_mut(tail)),
            "fc1" => match tail {
                "w" => Some(&mut self.fc1.w),
                "b" => Some(&mut self.fc1.b),
                _ => None,
            },
            "fc2" => self.fc2.as_mut().and_then(|fc| match tail {
                "w" => Some(&mut fc.w),
                "b" => Some(&mut fc.b),
                _ => None,
            }),
            _ => None,
        }
    }

    fn check_inputs(&self, ctx: &Matrix, act: &Matrix) -> Result<usize> {
        if ctx.cols() != self.d_ctx || act.cols() != self.d_act {
            return Err(Error::shape(format!(
                "model expects ctx T x {} and act T x {}, got T x {} and T x {}",
                self.d_ctx,
                self.d_act,
                ctx.cols(),
                act.cols()
            )));
        }
        if ctx.rows() != act.rows() || ctx.rows() == 0 {
            return Err(Error::shape(format!(
                "ctx has {} frames, act has {}",
                ctx.rows(),
                act.rows()
            )));
        }
        Ok(ctx.rows())
    }

    pub fn forward(&self, ctx: &Matrix, act: &Matrix) -> Result<ForwardTrace> {
        let frames = self.check_inputs(ctx, act)?;
        let rows = |m: &Matrix| -> Vec<Vec<f64>> { (0..frames).map(|t| m.row(t).to_vec()).collect() };
        let concat = |a: &[f64], b: &[f64]| -> Vec<f64> {
            let mut v = Vec::with_capacity(a.len() + b.len());
            v.extend_from_slice(a);
            v.extend_from_slice(b);
            v
        };
        let readout = |fc: &Linear, inputs: Vec<Vec<f64>>| -> Result<PredictionSeries> {
            let mut probs = Matrix::zeros(frames, self.n_classes);
            for (t, x) in inputs.iter().enumerate() {
                let p = softmax(&fc.forward(x)?)?;
                probs.row_mut(t).copy_from_slice(&p);
            }
            PredictionSeries::new(probs)
        };
        match self.variant {
            ArchitectureVariant::MultiStage | ArchitectureVariant::Swapped => {
                let (first, second) = if self.variant == ArchitectureVariant::MultiStage {
                    (rows(ctx), rows(act))
                } else {
                    (rows(act), rows(ctx))
                };
                let t1 = lstm_forward_trace(&self.stage1, &first)?;
                let yhat_c = readout(
                    &self.fc1,
                    (0..frames).map(|t| t1.hidden(t).to_vec()).collect(),
                )?;
                let xs2: Vec<Vec<f64>> = (0..frames)
                    .map(|t| concat(t1.hidden(t), &second[t]))
                    .collect();
                let t2 = lstm_forward_trace(self.stage2.as_ref().unwrap(), &xs2)?;
                let yhat_a = readout(
                    self.fc2.as_ref().unwrap(),
                    (0..frames).map(|t| t2.hidden(t).to_vec()).collect(),
                )?;
                Ok(ForwardTrace {
                    variant: self.variant,
                    yhat_c,
                    yhat_a,
                    t1,
                    t2: Some(t2),
                })
            }
            ArchitectureVariant::Concatenation => {
                let xs: Vec<Vec<f64>> = (0..frames)
                    .map(|t| concat(ctx.row(t), act.row(t)))
                    .collect();
                let t1 = lstm_forward_trace(&self.stage1, &xs)?;
                let yhat = readout(
                    &self.fc1,
                    (0..frames).map(|t| t1.hidden(t).to_vec()).collect(),
                )?;
                Ok(ForwardTrace {
                    variant: self.variant,
                    yhat_c: yhat.clone(),
                    yhat_a: yhat,
                    t1,
                    t2: None,
                })
            }
            ArchitectureVariant::Parallel => {
                let t1 = lstm_forward_trace(&self.stage1, &rows(ctx))?;
                let t2 = lstm_forward_trace(self.stage2.as_ref().unwrap(), &rows(act))?;
                let yhat = readout(
                    &self.fc1,
                    (0..frames)
                        .map(|t| concat(t1.hidden(t), t2.hidden(t)))
                        .collect(),
                )?;
                Ok(ForwardTrace {
                    variant: self.variant,
                    yhat_c: yhat.clone(),
                    yhat_a: yhat,
                    t1,
                    t2: Some(t2),
                })
            }
        }
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, opt: &mut SgdState) -> Result<()> {
        for name in self.param_names() {
            if let Some(g) = grads.get(&name) {
                let g = g.clone();
                let param = self.param_mut(&name).unwrap();
                opt.update(&name, param, &g)?;
            }
        }
        Ok(())
    }
}

/// Recorded forward pass of the full model; both probability series plus
/// the per-frame internals backprop needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub variant: ArchitectureVariant,
    pub yhat_c: PredictionSeries,
    pub yhat_a: PredictionSeries,
    t1: LstmTrace,
    t2: Option<LstmTrace>,
}

impl ForwardTrace {
    pub fn frames(&self) -> usize {
        self.yhat_a.frames()
    }

    pub fn stage2_inputs(&self) -> Option<&[Vec<f64>]> {
        self.t2.as_ref().map(|t| t.xs.as_slice())
    }
}

/// Named parameter gradients accumulated over a batch.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.map.get(name)
    }

    pub fn accum(&mut self, name: &str, grad: &Matrix) -> Result<()> {
        match self.map.get_mut(name) {
            Some(existing) => existing.add_scaled(grad, 1.0),
            None => {
                self.map.insert(name.to_string(), grad.clone());
                Ok(())
            }
        }
    }

    pub fn accum_lstm(&mut self, prefix: &str, grads: &LstmGrads) -> Result<()> {
        for name in LSTM_PARAM_NAMES {
            self.accum(&format!("{prefix}.{name}"), grads.by_name(name).unwrap())?;
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }
}

/// `dL/dz` for `p = softmax(z)` given `dL/dp`.
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = dp.iter().zip(p.iter()).map(|(g, q)| g * q).sum();
    p.iter().zip(dp.iter()).map(|(q, g)| q * (g - dot)).collect()
}

/// Backward through a per-frame softmax readout. Accumulates the layer's
/// gradients and returns the gradient on each frame's input.
fn fc_backward(
    fc: &Linear,
    prefix: &str,
    inputs: &[&[f64]],
    probs: &PredictionSeries,
    dprobs: &Matrix,
    grads: &mut Gradients,
) -> Result<Vec<Vec<f64>>> {
    let mut dw = Matrix::zeros(fc.w.rows(), fc.w.cols());
    let mut db = Matrix::zeros(fc.b.rows(), 1);
    let mut dinputs = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        let dz = softmax_backward(probs.matrix().row(t), dprobs.row(t));
        dw.add_outer(&dz, x)?;
        for (k, d) in dz.iter().enumerate() {
            db.set(k, 0, db.get(k, 0) + d);
        }
        dinputs.push(fc.w.matvec_t(&dz)?);
    }
    grads.accum(&format!("{prefix}.w"), &dw)?;
    grads.accum(&format!("{prefix}.b"), &db)?;
    Ok(dinputs)
}

/// Per-sample loss under the recorded trace: both stage terms for the
/// two-series variants, only the final series otherwise.
pub fn sample_loss(kind: LossKind, trace: &ForwardTrace, label: &LabelSequence) -> Result<f64> {
    let (l_a, _) = loss_dispatch(kind, label, &trace.yhat_a)?;
    if trace.variant.two_series() {
        let (l_c, _) = loss_dispatch(kind, label, &trace.yhat_c)?;
        Ok(l_c + l_a)
    } else {
        Ok(l_a)
    }
}

/// Batch objective: mean over samples of the per-sample loss.
pub fn overall_loss(kind: LossKind, items: &[(&ForwardTrace, &LabelSequence)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::argument("overall_loss over an empty batch"));
    }
    let mut total = 0.0;
    for (trace, label) in items {
        total += sample_loss(kind, trace, label)?;
    }
    Ok(total / items.len() as f64)
}

/// Full-model backward pass for one sample. Gradients are accumulated into
/// `grads` scaled by `scale` (the batch-mean factor); the returned value is
/// the unscaled sample loss.
fn backward_sample(
    model: &MsLstmModel,
    trace: &ForwardTrace,
    kind: LossKind,
    label: &LabelSequence,
    grads: &mut Gradients,
    scale: f64,
) -> Result<f64> {
    let frames = trace.frames();
    let (l_a, mut dya) = loss_dispatch(kind, label, &trace.yhat_a)?;
    dya.scale(scale);
    match trace.variant {
        ArchitectureVariant::MultiStage | ArchitectureVariant::Swapped => {
            let (l_c, mut dyc) = loss_dispatch(kind, label, &trace.yhat_c)?;
            dyc.scale(scale);
            let t2 = trace.t2.as_ref().unwrap();
            let stage2 = model.stage2.as_ref().unwrap();
            let fc2 = model.fc2.as_ref().unwrap();
            let h2: Vec<&[f64]> = (0..frames).map(|t| t2.hidden(t)).collect();
            let dh2 = fc_backward(fc2, "fc2", &h2, &trace.yhat_a, &dya, grads)?;
            let (g2, dx2) = lstm_backward(stage2, t2, &dh2)?;
            grads.accum_lstm("stage2", &g2)?;
            let h1: Vec<&[f64]> = (0..frames).map(|t| trace.t1.hidden(t)).collect();
            let mut dh1 = fc_backward(&model.fc1, "fc1", &h1, &trace.yhat_c, &dyc, grads)?;
            for t in 0..frames {
                for k in 0..model.hidden {
                    dh1[t][k] += dx2[t][k];
                }
            }
            let (g1, _) = lstm_backward(&model.stage1, &trace.t1, &dh1)?;
            grads.accum_lstm("stage1", &g1)?;
            Ok(l_c + l_a)
        }
        ArchitectureVariant::Concatenation => {
            let h1: Vec<&[f64]> = (0..frames).map(|t| trace.t1.hidden(t)).collect();
            let dh1 = fc_backward(&model.fc1, "fc1", &h1, &trace.yhat_a, &dya, grads)?;
            let (g1, _) = lstm_backward(&model.stage1, &trace.t1, &dh1)?;
            grads.accum_lstm("stage1", &g1)?;
            Ok(l_a)
        }
        ArchitectureVariant::Parallel => {
            let t2 = trace.t2.as_ref().unwrap();
            let cat: Vec<Vec<f64>> = (0..frames)
                .map(|t| {
                    let mut v = trace.t1.hidden(t).to_vec();
                    v.extend_from_slice(t2.hidden(t));
                    v
                })
                .collect();
            let cat_refs: Vec<&[f64]> = cat.iter().map(|v| v.as_slice()).collect();
            let dcat = fc_backward(&model.fc1, "fc1", &cat_refs, &trace.yhat_a, &dya, grads)?;
            let h = model.hidden;
            let dh1: Vec<Vec<f64>> = dcat.iter().map(|d| d[..h].to_vec()).collect();
            let dh2: Vec<Vec<f64>> = dcat.iter().map(|d| d[h..].to_vec()).collect();
            let (g1, _) = lstm_backward(&model.stage1, &trace.t1, &dh1)?;
            grads.accum_lstm("stage1", &g1)?;
            let (g2, _) = lstm_backward(model.stage2.as_ref().unwrap(), t2, &dh2)?;
            grads.accum_lstm("stage2", &g2)?;
            Ok(l_a)
        }
    }
}

/// Forward + backward over a batch of `(ctx, act, label)` samples; returns
/// the batch loss and the mean gradients.
pub fn batch_gradients(
    model: &MsLstmModel,
    batch: &[(&Matrix, &Matrix, &LabelSequence)],
    kind: LossKind,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::argument("batch_gradients over an empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::default();
    let mut total = 0.0;
    for (ctx, act, label) in batch {
        let trace = model.forward(ctx, act)?;
        total += backward_sample(model, &trace, kind, label, &mut grads, scale)?;
    }
    Ok((total / batch.len() as f64, grads))
}

/// One SGD step on a batch. Deterministic given the model, batch order and
/// optimizer state.
pub fn train_step(
    model: &mut MsLstmModel,
    batch: &[(&Matrix, &Matrix, &LabelSequence)],
    kind: LossKind,
    opt: &mut SgdState,
) -> Result<f64> {
    let (loss, grads) = batch_gradients(model, batch, kind)?;
    model.apply_gradients(&grads, opt)?;
    Ok(loss)
}

/// Class decision after observing `t` frames (1-based). With pooling, the
/// per-frame probability vectors up to `t` are averaged before the argmax.
pub fn infer(trace: &ForwardTrace, t: usize, avg_pool: bool) -> Result<(usize, Vec<f64>)> {
    let frames = trace.frames();
    if t < 1 || t > frames {
        return Err(Error::argument(format!(
            "frame index {t} out of range 1..={frames}"
        )));
    }
    let n = trace.yhat_a.n_classes();
    let pooled = if avg_pool {
        let mut acc = vec![0.0; n];
        for s in 0..t {
            for k in 0..n {
                acc[k] += trace.yhat_a.prob(s, k);
            }
        }
        for a in acc.iter_mut() {
            *a /= t as f64;
        }
        acc
    } else {
        (0..n).map(|k| trace.yhat_a.prob(t - 1, k)).collect()
    };
    Ok((argmax(&pooled), pooled))
}

/// Checkpoint text format: header `mslstm N D_ctx D_act H variant`, then one
/// block per parameter (`name rows cols` + one line per row). Values use
/// shortest round-trip decimal printing, so save/load is bit-exact.
pub fn save_model(model: &MsLstmModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mslstm {} {} {} {} {}",
        model.n_classes, model.d_ctx, model.d_act, model.hidden, model.variant
    );
    for name in model.param_names() {
        let m = model.param(&name).unwrap();
        let _ = writeln!(out, "{} {} {}", name, m.rows(), m.cols());
        for r in 0..m.rows() {
            let vals: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MsLstmModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty checkpoint"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "mslstm" {
        return Err(Error::parse(path, 1, "header must be `mslstm N D_ctx D_act H variant`"));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(path, 1, format!("bad dimension {s:?}")))
    };
    let n = parse_dim(fields[1])?;
    let d_ctx = parse_dim(fields[2])?;
    let d_act = parse_dim(fields[3])?;
    let hidden = parse_dim(fields[4])?;
    let variant: ArchitectureVariant = fields[5].parse()?;
    let mut model = MsLstmModel::zeros(n, d_ctx, d_act, hidden, variant)?;
    let expected = model.param_names();
    for name in &expected {
        let (idx, block_header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing parameter block {name}")))?;
        let parts: Vec<&str> = block_header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != name {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected block header for {name}, found {block_header:?}"),
            ));
        }
        let rows = parse_dim(parts[1])?;
        let cols = parse_dim(parts[2])?;
        let target = model.param_mut(name).unwrap();
        if (rows, cols) != target.shape() {
            return Err(Error::parse(
                path,
                idx + 1,
                format!(
                    "parameter {name} has shape {rows}x{cols}, expected {}x{}",
                    target.shape().0,
                    target.shape().1
                ),
            ));
        }
        for r in 0..rows {
            let (ridx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, idx + 1, format!("truncated block {name}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(path, ridx + 1, format!("bad value {s:?}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(Error::parse(
                    path,
                    ridx + 1,
                    format!("expected {cols} values, found {}", vals.len()),
                ));
            }
            model
                .param_mut(name)
                .unwrap()
                .row_mut(r)
                .copy_from_slice(&vals);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_seq(frames: usize, dim: usize, rng: &mut SplitMix64) -> Matrix {
        Matrix::from_vec(frames, dim, (0..frames * dim).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_series() {
        let m = MsLstmModel::zeros(4, 3, 2, 5, ArchitectureVariant::MultiStage).unwrap();
        let mut rng = SplitMix64::new(1);
        let ctx = random_seq(1, 3, &mut rng);
        let act = random_seq(1, 2, &mut rng);
        let trace = m.forward(&ctx, &act).unwrap();
        for series in [&trace.yhat_c, &trace.yhat_a] {
            for k in 0..4 {
                assert!((series.prob(0, k) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn multistage_and_swapped_are_symmetric() {
        let mut rng1 = SplitMix64::new(99);
        let mut rng2 = SplitMix64::new(99);
        let ms = MsLstmModel::init(3, 4, 4, 5, ArchitectureVariant::MultiStage, &mut rng1).unwrap();
        let sw = MsLstmModel::init(3, 4, 4, 5, ArchitectureVariant::Swapped, &mut rng2).unwrap();
        let mut rng = SplitMix64::new(7);
        let a = random_seq(4, 4, &mut rng);
        let b = random_seq(4, 4, &mut rng);
        // Swapped on (ctx=a, act=b) routes b first; MultiStage on (ctx=b, act=a)
        // does the same. Identical parameter draws make the traces equal.
        let t_ms = ms.forward(&b, &a).unwrap();
        let t_sw = sw.forward(&a, &b).unwrap();
        assert_eq!(t_ms.yhat_c, t_sw.yhat_c);
        assert_eq!(t_ms.yhat_a, t_sw.yhat_a);
        // And with identical streams the two variants agree directly.
        let t1 = ms.forward(&a, &a).unwrap();
        let t2 = sw.forward(&a, &a).unwrap();
        assert_eq!(t1.yhat_a, t2.yhat_a);
    }

    #[test]
    fn stage2_input_is_hidden_concat_action() {
        let mut rng = SplitMix64::new(5);
        let m = MsLstmModel::init(3, 4, 2, 3, ArchitectureVariant::MultiStage, &mut rng).unwrap();
        let ctx = random_seq(3, 4, &mut rng);
        let act = random_seq(3, 2, &mut rng);
        let trace = m.forward(&ctx, &act).unwrap();
        let h1 = crate::lstm::lstm_forward(
            &m.stage1,
            &(0..3).map(|t| ctx.row(t).to_vec()).collect::<Vec<_>>(),
        )
        .unwrap();
        let xs2 = trace.stage2_inputs().unwrap();
        for t in 0..3 {
            let mut expect = h1[t].0.clone();
            expect.extend_from_slice(act.row(t));
            assert_eq!(xs2[t], expect);
        }
    }

    #[test]
    fn infer_examples() {
        let mut probs = Matrix::zeros(2, 2);
        probs.row_mut(0).copy_from_slice(&[0.6, 0.4]);
        probs.row_mut(1).copy_from_slice(&[0.2, 0.8]);
        let series = PredictionSeries::new(probs).unwrap();
        let trace = ForwardTrace {
            variant: ArchitectureVariant::Concatenation,
            yhat_c: series.clone(),
            yhat_a: series,
            t1: lstm_forward_trace(&LstmParams::zeros(1, 1), &[vec![0.0], vec![0.0]]).unwrap(),
            t2: None,
        };
        // t = 1: pooling cannot change anything.
        let (c1, p1) = infer(&trace, 1, true).unwrap();
        let (c2, p2) = infer(&trace, 1, false).unwrap();
        assert_eq!((c1, &p1), (c2, &p2));
        assert_eq!(c1, 0);
        // Hand average at t = 2.
        let (c, p) = infer(&trace, 2, true).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        assert_eq!(c, 1);
        let (c_nopool, _) = infer(&trace, 2, false).unwrap();
        assert_eq!(c_nopool, 1);
        assert!(infer(&trace, 0, true).is_err());
        assert!(infer(&trace, 3, true).is_err());
    }

    #[test]
    fn overall_loss_mean_semantics() {
        let mut rng = SplitMix64::new(13);
        let m = MsLstmModel::init(3, 2, 2, 4, ArchitectureVariant::MultiStage, &mut rng).unwrap();
        let samples: Vec<(Matrix, Matrix, LabelSequence)> = (0..3)
            .map(|i| {
                (
                    random_seq(4, 2, &mut rng),
                    random_seq(4, 2, &mut rng),
                    LabelSequence::new(3, 4, i % 3).unwrap(),
                )
            })
            .collect();
        let traces: Vec<ForwardTrace> = samples
            .iter()
            .map(|(c, a, _)| m.forward(c, a).unwrap())
            .collect();
        let items: Vec<(&ForwardTrace, &LabelSequence)> = traces
            .iter()
            .zip(samples.iter())
            .map(|(t, (_, _, l))| (t, l))
            .collect();
        // V = 1 is the bare sum of the two stage terms.
        let single = overall_loss(LossKind::Anticipation, &items[..1]).unwrap();
        let expect = sample_loss(LossKind::Anticipation, items[0].0, items[0].1).unwrap();
        assert_eq!(single, expect);
        // A duplicated sample leaves the mean unchanged.
        let dup = overall_loss(LossKind::Anticipation, &[items[0], items[0]]).unwrap();
        assert!((dup - single).abs() < 1e-15);
        // V = 3 equals the arithmetic-mean oracle over per-sample values.
        let all = overall_loss(LossKind::Anticipation, &items).unwrap();
        let mean = items
            .iter()
            .map(|(t, l)| sample_loss(LossKind::Anticipation, t, l).unwrap())
            .sum::<f64>()
            / 3.0;
        assert_eq!(all, mean);
        assert!(overall_loss(LossKind::Ce, &[]).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut rng = SplitMix64::new(21);
        let mut m =
            MsLstmModel::init(3, 2, 2, 4, ArchitectureVariant::MultiStage, &mut rng).unwrap();
        let before = m.clone();
        let ctx = random_seq(3, 2, &mut rng);
        let act = random_seq(3, 2, &mut rng);
        let label = LabelSequence::new(3, 3, 1).unwrap();
        let mut opt = SgdState::new(0.0, 0.9, 0.0);
        let loss = train_step(&mut m, &[(&ctx, &act, &label)], LossKind::Anticipation, &mut opt)
            .unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        for name in before.param_names() {
            assert_eq!(before.param(&name), m.param(&name), "{name} changed");
        }
    }

    #[test]
    fn one_step_decreases_singleton_batch_loss() {
        for variant in ArchitectureVariant::ALL {
            let mut rng = SplitMix64::new(33);
            let mut m = MsLstmModel::init(3, 2, 2, 4, variant, &mut rng).unwrap();
            let ctx = random_seq(4, 2, &mut rng);
            let act = random_seq(4, 2, &mut rng);
            let label = LabelSequence::new(3, 4, 2).unwrap();
            let batch = [(&ctx, &act, &label)];
            let before = {
                let trace = m.forward(&ctx, &act).unwrap();
                sample_loss(LossKind::Anticipation, &trace, &label).unwrap()
            };
            let mut opt = SgdState::new(0.01, 0.0, 0.0);
            train_step(&mut m, &batch, LossKind::Anticipation, &mut opt).unwrap();
            let after = {
                let trace = m.forward(&ctx, &act).unwrap();
                sample_loss(LossKind::Anticipation, &trace, &label).unwrap()
            };
            assert!(after < before, "{variant}: {after} >= {before}");
        }
    }

    #[test]
    fn forward_shape_errors() {
        let m = MsLstmModel::zeros(2, 3, 2, 2, ArchitectureVariant::MultiStage).unwrap();
        let bad_ctx = Matrix::zeros(2, 4);
        let act = Matrix::zeros(2, 2);
        assert!(matches!(m.forward(&bad_ctx, &act), Err(Error::Shape(_))));
        let ctx = Matrix::zeros(2, 3);
        let short_act = Matrix::zeros(1, 2);
        assert!(matches!(m.forward(&ctx, &short_act), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for variant in ArchitectureVariant::ALL {
            let mut rng = SplitMix64::new(55);
            let m = MsLstmModel::init(3, 2, 4, 3, variant, &mut rng).unwrap();
            let p1 = dir.path().join(format!("{variant}.ckpt"));
            save_model(&m, &p1).unwrap();
            let loaded = load_model(&p1).unwrap();
            for name in m.param_names() {
                assert_eq!(m.param(&name), loaded.param(&name), "{variant} {name}");
            }
            let p2 = dir.path().join(format!("{variant}2.ckpt"));
            save_model(&loaded, &p2).unwrap();
            assert_eq!(
                std::fs::read(&p1).unwrap(),
                std::fs::read(&p2).unwrap(),
                "{variant} round trip not byte-identical"
            );
        }
    }
}
