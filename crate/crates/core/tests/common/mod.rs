//! Helpers shared by the integration suites.

use anticipate_core::datagen::LabeledSequence;
use anticipate_core::losses::{LabelSequence, LossKind};
use anticipate_core::matrix::Matrix;
use anticipate_core::model::{batch_gradients, overall_loss, MsLstmModel};
use anticipate_core::rng::SplitMix64;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// A tiny labeled batch with the given shapes.
pub fn random_batch(
    n_samples: usize,
    n_classes: usize,
    frames: usize,
    d_ctx: usize,
    d_act: usize,
    rng: &mut SplitMix64,
) -> Vec<LabeledSequence> {
    (0..n_samples)
        .map(|i| LabeledSequence {
            ctx: random_matrix(frames, d_ctx, rng),
            act: random_matrix(frames, d_act, rng),
            label: LabelSequence::new(n_classes, frames, i % n_classes).unwrap(),
        })
        .collect()
}

fn batch_loss(model: &MsLstmModel, batch: &[LabeledSequence], kind: LossKind) -> f64 {
    let traces: Vec<_> = batch
        .iter()
        .map(|s| model.forward(&s.ctx, &s.act).unwrap())
        .collect();
    let items: Vec<_> = traces
        .iter()
        .zip(batch.iter())
        .map(|(t, s)| (t, &s.label))
        .collect();
    overall_loss(kind, &items).unwrap()
}

/// Central finite difference of the batch loss with respect to one entry.
pub fn numeric_grad(
    model: &mut MsLstmModel,
    batch: &[LabeledSequence],
    kind: LossKind,
    name: &str,
    r: usize,
    c: usize,
    eps: f64,
) -> f64 {
    let orig = model.param(name).unwrap().get(r, c);
    model.param_mut(name).unwrap().set(r, c, orig + eps);
    let plus = batch_loss(model, batch, kind);
    model.param_mut(name).unwrap().set(r, c, orig - eps);
    let minus = batch_loss(model, batch, kind);
    model.param_mut(name).unwrap().set(r, c, orig);
    (plus - minus) / (2.0 * eps)
}

/// Checks every parameter entry of `model` against central differences.
/// Returns the worst relative error seen.
pub fn check_all_gradients(
    model: &mut MsLstmModel,
    batch: &[LabeledSequence],
    kind: LossKind,
    eps: f64,
) -> f64 {
    let refs: Vec<_> = batch.iter().map(|s| (&s.ctx, &s.act, &s.label)).collect();
    let (_, grads) = batch_gradients(model, &refs, kind).unwrap();
    let mut worst = 0.0_f64;
    for name in model.param_names() {
        let (rows, cols) = {
            let p = model.param(&name).unwrap();
            (p.rows(), p.cols())
        };
        for r in 0..rows {
            for c in 0..cols {
                let analytic = grads.get(&name).map_or(0.0, |g| g.get(r, c));
                let numeric = numeric_grad(model, batch, kind, &name, r, c, eps);
                let scale = analytic.abs().max(numeric.abs()).max(1.0);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}
