//! Per-heterogeneity-class image and label transforms.
//!
//! Feature transforms (rotations, inversion, zoom, dilation/erosion) map a
//! square [0,1] image to another image of the same size and never touch
//! labels; label swaps permute labels and never touch features.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A single transform applied to every image (or label) of one
/// heterogeneity class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg")]
pub enum TransformDescriptor {
    /// No-op; class 0 of every heterogeneity kind.
    Identity,
    /// Counterclockwise rotation; quarter turns only, so the rotation is an
    /// exact pixel permutation.
    Rotate(u16),
    /// Grayscale inversion p → 1 − p.
    Invert,
    /// Central 75% crop followed by nearest-neighbor upscale to the
    /// original size.
    Zoom,
    /// Inversion composed with zoom (the second medical-variant class pair).
    InvertZoom,
    /// n applications of a 2×2 max filter.
    Dilate(u8),
    /// n applications of a 2×2 min filter.
    Erode(u8),
    /// Label permutation table, `table[old] = new`. Features untouched.
    LabelSwap(Vec<u8>),
}

impl TransformDescriptor {
    /// True when the descriptor changes labels rather than features.
    pub fn is_label_swap(&self) -> bool {
        matches!(self, TransformDescriptor::LabelSwap(_))
    }

    /// Validate structural constraints (rotation angle, permutation table).
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            TransformDescriptor::Rotate(deg) if deg % 90 != 0 || *deg >= 360 => Err(
                Error::Config(format!("rotation must be a quarter turn, got {deg}°")),
            ),
            TransformDescriptor::LabelSwap(table) => {
                let mut seen = vec![false; num_classes];
                if table.len() != num_classes {
                    return Err(Error::Config(format!(
                        "label swap table has {} entries for {num_classes} classes",
                        table.len()
                    )));
                }
                for &t in table {
                    if usize::from(t) >= num_classes || seen[usize::from(t)] {
                        return Err(Error::Config(
                            "label swap table is not a permutation".into(),
                        ));
                    }
                    seen[usize::from(t)] = true;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Apply a feature transform to one square image. `LabelSwap` is an
/// identity here (it only affects labels; see [`apply_label_swap`]).
pub fn apply_transform(descriptor: &TransformDescriptor, image: &[f64], side: usize) -> Vec<f64> {
    debug_assert_eq!(image.len(), side * side, "image must be square");
    match descriptor {
        TransformDescriptor::Identity | TransformDescriptor::LabelSwap(_) => image.to_vec(),
        TransformDescriptor::Rotate(deg) => {
            let mut out = image.to_vec();
            for _ in 0..(deg / 90) % 4 {
                out = rotate90(&out, side);
            }
            out
        }
        TransformDescriptor::Invert => image.iter().map(|p| 1.0 - p).collect(),
        TransformDescriptor::Zoom => zoom(image, side),
        TransformDescriptor::InvertZoom => {
            let inverted: Vec<f64> = image.iter().map(|p| 1.0 - p).collect();
            zoom(&inverted, side)
        }
        TransformDescriptor::Dilate(times) => {
            let mut out = image.to_vec();
            for _ in 0..*times {
                out = filter_2x2(&out, side, f64::max);
            }
            out
        }
        TransformDescriptor::Erode(times) => {
            let mut out = image.to_vec();
            for _ in 0..*times {
                out = filter_2x2(&out, side, f64::min);
            }
            out
        }
    }
}

/// Map labels through a permutation table.
pub fn apply_label_swap(table: &[u8], labels: &[u8]) -> Vec<u8> {
    labels.iter().map(|&l| table[usize::from(l)]).collect()
}

/// One 90° counterclockwise quarter turn: out(r, c) = in(c, side−1−r).
fn rotate90(image: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            out[r * side + c] = image[c * side + (side - 1 - r)];
        }
    }
    out
}

/// 2×2 morphological filter anchored at the top-left pixel; the window is
/// truncated at the right/bottom edges.
fn filter_2x2(image: &[f64], side: usize, op: fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let mut v = image[r * side + c];
            if c + 1 < side {
                v = op(v, image[r * side + c + 1]);
            }
            if r + 1 < side {
                v = op(v, image[(r + 1) * side + c]);
                if c + 1 < side {
                    v = op(v, image[(r + 1) * side + c + 1]);
                }
            }
            out[r * side + c] = v;
        }
    }
    out
}

/// Central 75% crop + nearest-neighbor upscale back to `side`.
fn zoom(image: &[f64], side: usize) -> Vec<f64> {
    let crop = (side * 3) / 4;
    let start = (side - crop) / 2;
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let src_r = start + r * crop / side;
            let src_c = start + c * crop / side;
            out[r * side + c] = image[src_r * side + src_c];
        }
    }
    out
}
