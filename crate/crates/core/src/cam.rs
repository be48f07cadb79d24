//! Class activation maps and the action-aware masking layer.
//!
//! From a spatial activation stack, per-unit features are pooled by spatial
//! summation, class scores come from a linear layer, and the per-location
//! class evidence map `M_k(x,y) = sum_l w_l^k f_l(x,y)` gates every channel
//! of the convolutional volume through `ReLU(M_k)`.

use std::fmt::Write as _;
use std::path::Path;

use crate::matrix::Matrix;
use crate::{Error, Result};

/// `H x W x L` activation stack. Values are stored row-major over the
/// spatial grid with the unit index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVolume {
    height: usize,
    width: usize,
    units: usize,
    data: Vec<f64>,
}

impl ActivationVolume {
    pub fn new(height: usize, width: usize, units: usize, data: Vec<f64>) -> Result<Self> {
        if height < 1 || width < 1 || units < 1 {
            return Err(Error::argument(format!(
                "activation volume dims must be >= 1, got {height}x{width}x{units}"
            )));
        }
        if data.len() != height * width * units {
            return Err(Error::shape(format!(
                "volume data length {} does not match {height}x{width}x{units}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("activation volume has non-finite values"));
        }
        Ok(ActivationVolume {
            height,
            width,
            units,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, units: usize) -> Self {
        ActivationVolume {
            height,
            width,
            units,
            data: vec![0.0; height * width * units],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn units(&self) -> usize {
        self.units
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize, l: usize) -> f64 {
        self.data[(y * self.width + x) * self.units + l]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, l: usize, v: f64) {
        self.data[(y * self.width + x) * self.units + l] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Spatial-sum pooled feature per unit: `F_l = sum_{x,y} f_l(x,y)`.
pub fn gap_features(vol: &ActivationVolume) -> Vec<f64> {
    let mut out = vec![0.0; vol.units()];
    for y in 0..vol.height() {
        for x in 0..vol.width() {
            for l in 0..vol.units() {
                out[l] += vol.value(y, x, l);
            }
        }
    }
    out
}

/// Class scores `S_k = sum_l w_l^k F_l` for an `L x N` weight matrix.
pub fn class_scores(features: &[f64], weights: &Matrix) -> Result<Vec<f64>> {
    if features.len() != weights.rows() {
        return Err(Error::shape(format!(
            "class_scores: {} features vs weight matrix {}x{}",
            features.len(),
            weights.rows(),
            weights.cols()
        )));
    }
    weights.matvec_t(features)
}

/// Class activation map `M_k(x,y) = sum_l w_l^k f_l(x,y)` as an `H x W` matrix.
pub fn cam_map(vol: &ActivationVolume, weights: &Matrix, class: usize) -> Result<Matrix> {
    if vol.units() != weights.rows() {
        return Err(Error::shape(format!(
            "cam_map: volume has {} units, weight matrix is {}x{}",
            vol.units(),
            weights.rows(),
            weights.cols()
        )));
    }
    if class >= weights.cols() {
        return Err(Error::argument(format!(
            "class {class} out of range for {} classes",
            weights.cols()
        )));
    }
    let mut map = Matrix::zeros(vol.height(), vol.width());
    for y in 0..vol.height() {
        for x in 0..vol.width() {
            let mut acc = 0.0;
            for l in 0..vol.units() {
                acc += weights.get(l, class) * vol.value(y, x, l);
            }
            map.set(y, x, acc);
        }
    }
    Ok(map)
}

/// Action-aware masking: every channel of `conv` at `(x,y)` multiplied by
/// `max(0, M_k(x,y))`.
pub fn action_aware_mask(conv: &ActivationVolume, map: &Matrix) -> Result<ActivationVolume> {
    if conv.height() != map.rows() || conv.width() != map.cols() {
        return Err(Error::shape(format!(
            "mask: volume {}x{} vs map {}x{}",
            conv.height(),
            conv.width(),
            map.rows(),
            map.cols()
        )));
    }
    let mut out = ActivationVolume::zeros(conv.height(), conv.width(), conv.units());
    for y in 0..conv.height() {
        for x in 0..conv.width() {
            let gate = map.get(y, x).max(0.0);
            for l in 0..conv.units() {
                out.set(y, x, l, conv.value(y, x, l) * gate);
            }
        }
    }
    Ok(out)
}

/// Masking class at inference: argmax of the scores, ties to the lowest index.
pub fn select_cam_class(scores: &[f64]) -> usize {
    crate::matrix::argmax(scores)
}

/// Text format: header `H W L`, then `H*W` lines of `L` values, row-major
/// over the spatial grid.
pub fn format_volume(vol: &ActivationVolume) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", vol.height(), vol.width(), vol.units());
    for y in 0..vol.height() {
        for x in 0..vol.width() {
            let vals: Vec<String> = (0..vol.units())
                .map(|l| vol.value(y, x, l).to_string())
                .collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
    }
    out
}

pub fn write_volume(vol: &ActivationVolume, path: &Path) -> Result<()> {
    std::fs::write(path, format_volume(vol)).map_err(|e| Error::io(path, e))
}

pub fn parse_volume(text: &str, path: &Path) -> Result<ActivationVolume> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty volume file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, format!("bad header field {s:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::parse(path, 1, "header must be `H W L`"));
    }
    let (h, w, l) = (dims[0], dims[1], dims[2]);
    let mut data = Vec::with_capacity(h * w * l);
    for _ in 0..h * w {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, h * w + 1, "truncated volume data"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(path, idx + 1, format!("bad value {s:?}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != l {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected {l} values, found {}", vals.len()),
            ));
        }
        data.extend(vals);
    }
    ActivationVolume::new(h, w, l, data)
}

pub fn read_volume(path: &Path) -> Result<ActivationVolume> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_volume(&text, path)
}

/// Exports an `H x W` map as P2 grayscale after min-max normalization to
/// 0..255. A constant map exports as all zeros.
pub fn write_pgm(map: &Matrix, path: &Path) -> Result<()> {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = String::new();
    let _ = writeln!(out, "P2");
    let _ = writeln!(out, "{} {}", map.cols(), map.rows());
    let _ = writeln!(out, "255");
    for r in 0..map.rows() {
        let vals: Vec<String> = (0..map.cols())
            .map(|c| {
                let v = if span > 0.0 {
                    ((map.get(r, c) - lo) / span * 255.0).round() as u32
                } else {
                    0
                };
                v.to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
