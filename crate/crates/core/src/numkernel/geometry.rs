use serde::{Deserialize, Serialize};

use super::model::ModelSpec;
use crate::error::{Error, Result};

/// Pixel rectangle with inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        assert!(x0 <= x1 && y0 <= y1, "degenerate rect ({x0},{y0})-({x1},{y1})");
        Rect { x0, y0, x1, y1 }
    }

    /// Square of side `side` with top-left corner at (x, y).
    pub fn square(x: usize, y: usize, side: usize) -> Self {
        Rect::new(x, y, x + side - 1, y + side - 1)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn translate(&self, dx: usize, dy: usize) -> Rect {
        Rect::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }
}

/// Input rectangle that can influence the output of `layer` at `(row, col)`.
///
/// Each window layer maps an output interval `[lo, hi]` back to
/// `[lo * s - p, hi * s - p + k - 1]`; the result is clipped to the input.
pub fn receptive_field(spec: &ModelSpec, layer: usize, row: usize, col: usize) -> Result<Rect> {
    let shapes = spec.output_shapes()?;
    let out = shapes
        .get(layer)
        .ok_or_else(|| Error::OutOfRange(format!("layer {layer} of {}", shapes.len())))?;
    if out.len() != 3 {
        return Err(Error::NotSpatial(layer));
    }
    if row >= out[1] || col >= out[2] {
        return Err(Error::OutOfRange(format!(
            "location ({row}, {col}) outside {}x{} map of layer {layer}",
            out[1], out[2]
        )));
    }
    let (mut ylo, mut yhi) = (row as i64, row as i64);
    let (mut xlo, mut xhi) = (col as i64, col as i64);
    for l in spec.layers[..=layer].iter().rev() {
        let g = l.window().ok_or(Error::NotSpatial(layer))?;
        let (s, p) = (g.stride as i64, g.pad as i64);
        ylo = ylo * s - p;
        yhi = yhi * s - p + g.kernel.0 as i64 - 1;
        xlo = xlo * s - p;
        xhi = xhi * s - p + g.kernel.1 as i64 - 1;
    }
    let [_, h, w] = spec.input_shape;
    let clip = |v: i64, max: usize| v.clamp(0, max as i64 - 1) as usize;
    Ok(Rect::new(clip(xlo, w), clip(ylo, h), clip(xhi, w), clip(yhi, h)))
}
