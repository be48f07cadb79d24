//! Experiment runner: loss comparison, pooling effect, feature and
//! architecture ablations, with deterministic seeding and CSV output.
//!
//! Every experiment cell (loss kind or variant crossed with a seed) owns its
//! dataset view, model and RNG sub-streams, so cells can run concurrently;
//! rows are sorted before assembly, which makes the output order-independent
//! and byte-stable across runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cam::{
    action_aware_mask, cam_map, class_scores, format_volume, gap_features, read_volume,
    select_cam_class, write_pgm, ActivationVolume,
};
use crate::datagen::{generate, LabeledSequence, SyntheticConfig};
use crate::losses::LossKind;
use crate::matrix::Matrix;
use crate::model::{
    infer, train_step, ArchitectureVariant, MsLstmModel,
};
use crate::rng::SplitMix64;
use crate::sgd::SgdState;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: SyntheticConfig,
    pub kinds: Vec<LossKind>,
    pub variants: Vec<ArchitectureVariant>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub avg_pool: bool,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SyntheticConfig::default(),
            kinds: LossKind::ALL.to_vec(),
            variants: ArchitectureVariant::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            epochs: 30,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 8,
            hidden: 32,
            avg_pool: true,
            dataset: None,
            checkpoint: None,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.kinds.is_empty() || self.seeds.is_empty() || self.variants.is_empty() {
            return Err(Error::argument("kinds, variants and seeds must be nonempty"));
        }
        if self.epochs < 1 {
            return Err(Error::argument("epochs must be >= 1"));
        }
        if self.batch_size < 1 || self.hidden < 1 {
            return Err(Error::argument("batch_size and hidden must be >= 1"));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, idx + 1, format!("expected `key = value`, found {raw:?}")))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::parse(path, idx + 1, format!("bad {what} value {value:?}"));
            let parse_usize = || value.parse::<usize>().map_err(|_| bad("integer"));
            let parse_f64 = || value.parse::<f64>().map_err(|_| bad("number"));
            match key {
                "n_classes" => cfg.data.n_classes = parse_usize()?,
                "frames" => cfg.data.frames = parse_usize()?,
                "d_ctx" => cfg.data.d_ctx = parse_usize()?,
                "d_act" => cfg.data.d_act = parse_usize()?,
                "v_train" => cfg.data.v_train = parse_usize()?,
                "v_test" => cfg.data.v_test = parse_usize()?,
                "noise_sigma" => cfg.data.noise_sigma = parse_f64()?,
                "group_size" => cfg.data.group_size = parse_usize()?,
                "ramp_start" => cfg.data.ramp_start = parse_f64()?,
                "ctx_class_scale" => cfg.data.ctx_class_scale = parse_f64()?,
                "act_group_scale" => cfg.data.act_group_scale = parse_f64()?,
                "kinds" => {
                    cfg.kinds = value
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<Result<_>>()
                        .map_err(|_| bad("loss kinds"))?
                }
                "variants" => {
                    cfg.variants = value
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<Result<_>>()
                        .map_err(|_| bad("variants"))?
                }
                "seeds" => {
                    cfg.seeds = value
                        .split(',')
                        .map(|s| s.trim().parse::<u64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("seeds"))?
                }
                "epochs" => cfg.epochs = parse_usize()?,
                "lr" => cfg.lr = parse_f64()?,
                "momentum" => cfg.momentum = parse_f64()?,
                "weight_decay" => cfg.weight_decay = parse_f64()?,
                "batch_size" => cfg.batch_size = parse_usize()?,
                "hidden" => cfg.hidden = parse_usize()?,
                "avg_pool" => {
                    cfg.avg_pool = parse_bool(value).ok_or_else(|| bad("avg_pool"))?
                }
                "dataset" => cfg.dataset = Some(PathBuf::from(value)),
                "checkpoint" => cfg.checkpoint = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::parse(path, idx + 1, format!("unknown key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text, path)
    }
}

/// Which feature streams a model consumes. Single-stream baselines run one
/// plain LSTM over their stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Combined(ArchitectureVariant),
    ContextOnly,
    ActionOnly,
}

impl FeatureMode {
    pub fn column_name(&self) -> String {
        match self {
            FeatureMode::Combined(v) => v.to_string(),
            FeatureMode::ContextOnly => "ContextOnly".to_string(),
            FeatureMode::ActionOnly => "ActionOnly".to_string(),
        }
    }

    fn model_dims(&self, d_ctx: usize, d_act: usize) -> (ArchitectureVariant, usize, usize) {
        match self {
            FeatureMode::Combined(v) => (*v, d_ctx, d_act),
            FeatureMode::ContextOnly => (ArchitectureVariant::Concatenation, d_ctx, 0),
            FeatureMode::ActionOnly => (ArchitectureVariant::Concatenation, d_act, 0),
        }
    }

    fn inputs<'a>(
        &self,
        sample: &'a LabeledSequence,
        empty: &'a Matrix,
    ) -> (&'a Matrix, &'a Matrix) {
        match self {
            FeatureMode::Combined(_) => (&sample.ctx, &sample.act),
            FeatureMode::ContextOnly => (&sample.ctx, empty),
            FeatureMode::ActionOnly => (&sample.act, empty),
        }
    }
}

/// Trains one model on the given split. Deterministic given the seed: model
/// init and epoch shuffling use independent sub-streams.
pub fn run_training(
    cfg: &ExperimentConfig,
    train: &[LabeledSequence],
    kind: LossKind,
    mode: FeatureMode,
    seed: u64,
) -> Result<(MsLstmModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::argument("training split is empty"));
    }
    let first = &train[0];
    let frames = first.label.frames();
    let (variant, d_ctx, d_act) = mode.model_dims(first.ctx.cols(), first.act.cols());
    let mut init_rng = SplitMix64::stream(seed, "init");
    let mut model = MsLstmModel::init(
        first.label.n_classes(),
        d_ctx,
        d_act,
        cfg.hidden,
        variant,
        &mut init_rng,
    )?;
    let mut opt = SgdState::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut shuffle_rng = SplitMix64::stream(seed, "shuffle");
    let empty = Matrix::zeros(frames, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|i| {
                    let (ctx, act) = mode.inputs(&train[*i], &empty);
                    (ctx, act, &train[*i].label)
                })
                .collect();
            epoch_loss += train_step(&mut model, &batch, kind, &mut opt)?;
            batches += 1;
        }
        loss_log.push(epoch_loss / batches as f64);
    }
    Ok((model, loss_log))
}

/// Accuracy after observing `k = 1..T` frames; index `k - 1` in the result.
pub fn evaluate_curve(
    model: &MsLstmModel,
    test: &[LabeledSequence],
    mode: FeatureMode,
    avg_pool: bool,
) -> Result<Vec<f64>> {
    if test.is_empty() {
        return Err(Error::argument("test split is empty"));
    }
    let frames = test[0].label.frames();
    let empty = Matrix::zeros(frames, 0);
    let mut correct = vec![0usize; frames];
    for sample in test {
        let (ctx, act) = mode.inputs(sample, &empty);
        let trace = model.forward(ctx, act)?;
        for k in 1..=frames {
            let (class, _) = infer(&trace, k, avg_pool)?;
            if class == sample.label.class() {
                correct[k - 1] += 1;
            }
        }
    }
    Ok(correct
        .into_iter()
        .map(|c| c as f64 / test.len() as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub loss: String,
    pub variant: String,
    pub seed: u64,
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<CsvRow>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub loss: String,
    pub variant: String,
    pub earliest: f64,
    pub latest: f64,
}

fn sort_rows(rows: &mut [CsvRow]) {
    rows.sort_by(|a, b| {
        (&a.loss, &a.variant, a.seed, a.k).cmp(&(&b.loss, &b.variant, b.seed, b.k))
    });
}

/// Per (loss, variant) mean accuracy at `k = 1` and `k = T`, computed from
/// sorted rows in row order so it can be reproduced exactly from the CSV.
pub fn summarize(rows: &[CsvRow]) -> Vec<SummaryRow> {
    let t_max = rows.iter().map(|r| r.k).max().unwrap_or(0);
    let mut out: Vec<SummaryRow> = Vec::new();
    for row in rows {
        if !out
            .iter()
            .any(|s| s.loss == row.loss && s.variant == row.variant)
        {
            out.push(SummaryRow {
                loss: row.loss.clone(),
                variant: row.variant.clone(),
                earliest: 0.0,
                latest: 0.0,
            });
        }
    }
    for s in out.iter_mut() {
        let mut early_sum = 0.0;
        let mut early_n = 0usize;
        let mut late_sum = 0.0;
        let mut late_n = 0usize;
        for row in rows {
            if row.loss == s.loss && row.variant == s.variant {
                if row.k == 1 {
                    early_sum += row.accuracy;
                    early_n += 1;
                }
                if row.k == t_max {
                    late_sum += row.accuracy;
                    late_n += 1;
                }
            }
        }
        s.earliest = early_sum / early_n.max(1) as f64;
        s.latest = late_sum / late_n.max(1) as f64;
    }
    out
}

/// CSV text: header, sorted data rows, then `# summary` comment lines.
/// Floats use shortest round-trip decimal printing; line endings are LF.
pub fn format_csv(result: &ExperimentResult) -> String {
    let mut out = String::new();
    out.push_str("loss,variant,seed,k,accuracy\n");
    for r in &result.rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.loss, r.variant, r.seed, r.k, r.accuracy);
    }
    for s in &result.summary {
        let _ = writeln!(
            out,
            "# summary,{},{},{},{}",
            s.loss, s.variant, s.earliest, s.latest
        );
    }
    out
}

pub fn write_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    std::fs::write(path, format_csv(result)).map_err(|e| Error::io(path, e))
}

/// Reads back data rows and summary lines from CSV text.
pub fn parse_csv(text: &str, path: &Path) -> Result<ExperimentResult> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "loss,variant,seed,k,accuracy" {
                return Err(Error::parse(path, 1, "bad CSV header"));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# summary,") {
            let fields: Vec<&str> = rest.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::parse(path, idx + 1, "bad summary line"));
            }
            summary.push(SummaryRow {
                loss: fields[0].to_string(),
                variant: fields[1].to_string(),
                earliest: fields[2]
                    .parse()
                    .map_err(|_| Error::parse(path, idx + 1, "bad summary earliest"))?,
                latest: fields[3]
                    .parse()
                    .map_err(|_| Error::parse(path, idx + 1, "bad summary latest"))?,
            });
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, idx + 1, format!("bad CSV row {line:?}")));
        }
        rows.push(CsvRow {
            loss: fields[0].to_string(),
            variant: fields[1].to_string(),
            seed: fields[2]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "bad seed"))?,
            k: fields[3]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "bad k"))?,
            accuracy: fields[4]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "bad accuracy"))?,
        });
    }
    Ok(ExperimentResult { rows, summary })
}

pub fn read_csv(path: &Path) -> Result<ExperimentResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

fn dataset_for_seed(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>)> {
    generate(&cfg.data, seed)
}

fn finish(mut rows: Vec<CsvRow>) -> ExperimentResult {
    sort_rows(&mut rows);
    let summary = summarize(&rows);
    ExperimentResult { rows, summary }
}

/// Trains one model per (loss kind, seed) on the multi-stage architecture
/// and evaluates the full accuracy curve with and without average pooling.
/// The `variant` CSV column carries `pooled` / `unpooled`.
pub fn compare_losses(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let cells: Vec<(LossKind, u64)> = cfg
        .kinds
        .iter()
        .flat_map(|kind| cfg.seeds.iter().map(move |seed| (*kind, *seed)))
        .collect();
    let rows: Vec<Vec<CsvRow>> = cells
        .par_iter()
        .map(|(kind, seed)| -> Result<Vec<CsvRow>> {
            let (train, test) = dataset_for_seed(cfg, *seed)?;
            let mode = FeatureMode::Combined(ArchitectureVariant::MultiStage);
            let (model, _) = run_training(cfg, &train, *kind, mode, *seed)?;
            let mut out = Vec::new();
            for (tag, pool) in [("pooled", true), ("unpooled", false)] {
                let curve = evaluate_curve(&model, &test, mode, pool)?;
                for (i, acc) in curve.iter().enumerate() {
                    out.push(CsvRow {
                        loss: kind.to_string(),
                        variant: tag.to_string(),
                        seed: *seed,
                        k: i + 1,
                        accuracy: *acc,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(finish(rows.into_iter().flatten().collect()))
}

/// Context-only and action-only single-LSTM baselines against the full
/// multi-stage model, all under the anticipation loss.
pub fn ablate_features(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let modes = [
        FeatureMode::ContextOnly,
        FeatureMode::ActionOnly,
        FeatureMode::Combined(ArchitectureVariant::MultiStage),
    ];
    let cells: Vec<(FeatureMode, u64)> = modes
        .iter()
        .flat_map(|m| cfg.seeds.iter().map(move |seed| (*m, *seed)))
        .collect();
    let rows: Vec<Vec<CsvRow>> = cells
        .par_iter()
        .map(|(mode, seed)| -> Result<Vec<CsvRow>> {
            let (train, test) = dataset_for_seed(cfg, *seed)?;
            let (model, _) = run_training(cfg, &train, LossKind::Anticipation, *mode, *seed)?;
            let curve = evaluate_curve(&model, &test, *mode, cfg.avg_pool)?;
            Ok(curve
                .iter()
                .enumerate()
                .map(|(i, acc)| CsvRow {
                    loss: LossKind::Anticipation.to_string(),
                    variant: mode.column_name(),
                    seed: *seed,
                    k: i + 1,
                    accuracy: *acc,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(finish(rows.into_iter().flatten().collect()))
}

/// All four fusion architectures under the anticipation loss.
pub fn ablate_arch(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let cells: Vec<(ArchitectureVariant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|v| cfg.seeds.iter().map(move |seed| (*v, *seed)))
        .collect();
    let rows: Vec<Vec<CsvRow>> = cells
        .par_iter()
        .map(|(variant, seed)| -> Result<Vec<CsvRow>> {
            let (train, test) = dataset_for_seed(cfg, *seed)?;
            let mode = FeatureMode::Combined(*variant);
            let (model, _) = run_training(cfg, &train, LossKind::Anticipation, mode, *seed)?;
            let curve = evaluate_curve(&model, &test, mode, cfg.avg_pool)?;
            Ok(curve
                .iter()
                .enumerate()
                .map(|(i, acc)| CsvRow {
                    loss: LossKind::Anticipation.to_string(),
                    variant: variant.to_string(),
                    seed: *seed,
                    k: i + 1,
                    accuracy: *acc,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(finish(rows.into_iter().flatten().collect()))
}

#[derive(Debug, Clone)]
pub struct CamDemoReport {
    pub class: usize,
    pub map_sum: f64,
    pub score: f64,
}

/// Weight file: header `L N`, then `L` lines of `N` values.
pub fn read_cam_weights(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Err(Error::parse(path, 1, "empty weight file"));
    }
    let dims: Vec<usize> = lines[0]
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, format!("bad header field {s:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::parse(path, 1, "header must be `L N`"));
    }
    let (l, n) = (dims[0], dims[1]);
    let mut m = Matrix::zeros(l, n);
    for r in 0..l {
        let idx = r + 1;
        let line = lines
            .get(idx)
            .ok_or_else(|| Error::parse(path, lines.len(), "truncated weight file"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(path, idx + 1, format!("bad value {s:?}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != n {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected {n} values, found {}", vals.len()),
            ));
        }
        m.row_mut(r).copy_from_slice(&vals);
    }
    Ok(m)
}

/// Runs the CAM pipeline on a stored volume: pools features, scores classes,
/// selects the masking class, and writes the map, the masked volume, and a
/// PGM heatmap into `out_dir`.
pub fn cam_demo(volume_path: &Path, weights_path: &Path, out_dir: &Path) -> Result<CamDemoReport> {
    let volume = read_volume(volume_path)?;
    let weights = read_cam_weights(weights_path)?;
    let features = gap_features(&volume);
    let scores = class_scores(&features, &weights)?;
    let class = select_cam_class(&scores);
    let map = cam_map(&volume, &weights, class)?;
    let masked = action_aware_mask(&volume, &map)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let map_vol = ActivationVolume::new(map.rows(), map.cols(), 1, map.data().to_vec())?;
    std::fs::write(out_dir.join("cam.txt"), format_volume(&map_vol))
        .map_err(|e| Error::io(out_dir.join("cam.txt"), e))?;
    std::fs::write(out_dir.join("masked.txt"), format_volume(&masked))
        .map_err(|e| Error::io(out_dir.join("masked.txt"), e))?;
    write_pgm(&map, &out_dir.join("cam.pgm"))?;
    Ok(CamDemoReport {
        class,
        map_sum: map.data().iter().sum(),
        score: scores[class],
    })
}
