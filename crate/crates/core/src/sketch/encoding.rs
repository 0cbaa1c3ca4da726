//! Composite row encoding.
//!
//! Every row carries every primitive type at once:
//!
//! ```text
//! [ flag (2) | class (5) | line (4) | circle (3) | arc (5) | point (2) ]
//! ```
//!
//! The flag block is `[regular, construction]`, the class block follows
//! [`PrimitiveKind`] order with `None` last. A decoded row takes the most
//! probable class and reads only that class's parameter slice.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1};

use crate::error::{Error, Result};
use crate::gs_diffusion::smooth_probs;
use crate::simplex::argmax;

use super::primitive::{Primitive, PrimitiveKind, SketchRecord};

/// Rows per sketch matrix.
pub const MAX_PRIMITIVES: usize = 16;
pub const FLAG_BLOCK: Range<usize> = 0..2;
pub const CLASS_BLOCK: Range<usize> = 2..7;
pub const LINE_PARAMS: Range<usize> = 7..11;
pub const CIRCLE_PARAMS: Range<usize> = 11..14;
pub const ARC_PARAMS: Range<usize> = 14..19;
pub const POINT_PARAMS: Range<usize> = 19..21;
pub const PARAM_BLOCK: Range<usize> = 7..21;
/// Row width. The block sizes above add up to 21.
pub const FEATURE_DIM: usize = 21;
pub const NUM_FLAGS: usize = 2;
pub const NUM_CLASSES: usize = 5;

/// The two categorical blocks of a row.
pub const DISCRETE_BLOCKS: [Range<usize>; 2] = [FLAG_BLOCK, CLASS_BLOCK];

pub fn param_slice(kind: PrimitiveKind) -> Option<Range<usize>> {
    match kind {
        PrimitiveKind::Line => Some(LINE_PARAMS),
        PrimitiveKind::Circle => Some(CIRCLE_PARAMS),
        PrimitiveKind::Arc => Some(ARC_PARAMS),
        PrimitiveKind::Point => Some(POINT_PARAMS),
        PrimitiveKind::None => None,
    }
}

/// An `n x d` sketch matrix with `n = MAX_PRIMITIVES`, `d = FEATURE_DIM`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchMatrix(Array2<f64>);

impl SketchMatrix {
    pub fn from_array(a: Array2<f64>) -> Result<Self> {
        if a.dim() != (MAX_PRIMITIVES, FEATURE_DIM) {
            return Err(Error::InvalidInput(format!(
                "sketch matrix must be {MAX_PRIMITIVES}x{FEATURE_DIM}, got {:?}",
                a.dim()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sketch matrix has non-finite entries".into()));
        }
        Ok(Self(a))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Kinds of all rows, `None` padding included.
    pub fn kinds(&self) -> Vec<PrimitiveKind> {
        self.0.rows().into_iter().map(row_kind).collect()
    }
}

pub fn row_kind(row: ArrayView1<'_, f64>) -> PrimitiveKind {
    let block = row.slice(s![CLASS_BLOCK]);
    let probs: Vec<f64> = block.iter().copied().collect();
    PrimitiveKind::from_index(argmax(&probs)).expect("class block has 5 entries")
}

fn write_onehot(mut block: ArrayViewMut1<'_, f64>, index: usize, k: f64) {
    let mut onehot = vec![0.0; block.len()];
    onehot[index] = 1.0;
    for (dst, v) in block.iter_mut().zip(smooth_probs(&onehot, k)) {
        *dst = v;
    }
}

/// Encode a record; discrete blocks become `k`-smoothed one-hots.
pub fn encode_sketch(rec: &SketchRecord, k: f64) -> Result<SketchMatrix> {
    if rec.primitives.len() > MAX_PRIMITIVES {
        return Err(Error::Capacity { count: rec.primitives.len(), capacity: MAX_PRIMITIVES });
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::InvalidConfig(format!("smoothing k must lie in (0, 1), got {k}")));
    }
    rec.validate()?;
    let mut m = Array2::zeros((MAX_PRIMITIVES, FEATURE_DIM));
    for i in 0..MAX_PRIMITIVES {
        let prim = rec.primitives.get(i);
        let (kind, construction) = prim.map_or((PrimitiveKind::None, false), |p| (p.kind, p.construction));
        let mut row = m.row_mut(i);
        write_onehot(row.slice_mut(s![FLAG_BLOCK]), construction as usize, k);
        write_onehot(row.slice_mut(s![CLASS_BLOCK]), kind.index(), k);
        if let (Some(p), Some(range)) = (prim, param_slice(kind)) {
            for (dst, v) in row.slice_mut(s![range]).iter_mut().zip(&p.params) {
                *dst = *v;
            }
        }
    }
    Ok(SketchMatrix(m))
}

/// Decode one row: argmax class, argmax flag, and the winner's parameters.
pub fn decode_row(row: ArrayView1<'_, f64>) -> Primitive {
    let kind = row_kind(row);
    let flags: Vec<f64> = row.slice(s![FLAG_BLOCK]).iter().copied().collect();
    let construction = argmax(&flags) == 1;
    let params = param_slice(kind)
        .map(|r| row.slice(s![r]).to_vec())
        .unwrap_or_default();
    Primitive { kind, construction, params }
}

/// Decode every non-`None` row, preserving row order.
pub fn decode_sketch(m: ArrayView2<'_, f64>, id: impl Into<String>) -> SketchRecord {
    let primitives = m
        .rows()
        .into_iter()
        .map(decode_row)
        .filter(|p| p.kind != PrimitiveKind::None)
        .collect();
    SketchRecord::new(id, primitives)
}

/// Replace each categorical block with the hard one-hot of its argmax.
pub fn harden_blocks(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        for block in DISCRETE_BLOCKS {
            let mut b = row.slice_mut(s![block]);
            let idx = argmax(&b.to_vec());
            b.fill(0.0);
            b[idx] = 1.0;
        }
    }
    out
}
