//! Bounding-box normalization and quantized canonical keys for dedup.

use std::collections::HashSet;

use crate::error::{Error, Result};

use super::arc::arc_geometry;
use super::primitive::{Primitive, PrimitiveKind, SketchRecord};

/// Half-width of the normalized frame: sketches live in `[-0.5, 0.5]^2`.
pub const HALF_EXTENT: f64 = 0.5;
/// Quantization range for lengths (radii and signed radii).
pub const LENGTH_RANGE: f64 = 1.0;

/// Axis-aligned bounds `(min_x, min_y, max_x, max_y)` of the drawn geometry.
pub fn primitive_bounds(p: &Primitive) -> Result<Option<(f64, f64, f64, f64)>> {
    let v = &p.params;
    Ok(match p.kind {
        PrimitiveKind::Line => Some((v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]), v[1].max(v[3]))),
        PrimitiveKind::Circle => {
            let r = v[2].abs();
            Some((v[0] - r, v[1] - r, v[0] + r, v[1] + r))
        }
        PrimitiveKind::Arc => Some(arc_geometry(v[0], v[1], v[2], v[3], v[4])?.bounds()),
        PrimitiveKind::Point => Some((v[0], v[1], v[0], v[1])),
        PrimitiveKind::None => None,
    })
}

pub fn sketch_bounds(rec: &SketchRecord) -> Result<Option<(f64, f64, f64, f64)>> {
    let mut acc: Option<(f64, f64, f64, f64)> = None;
    for p in &rec.primitives {
        if let Some(b) = primitive_bounds(p)? {
            acc = Some(match acc {
                None => b,
                Some(a) => (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)),
            });
        }
    }
    Ok(acc)
}

/// Center the bounding box on the origin and scale uniformly so its longer
/// side is 1. Radii and signed radii scale by the same factor.
pub fn normalize_sketch(rec: &SketchRecord) -> Result<SketchRecord> {
    rec.validate()?;
    let (x0, y0, x1, y1) = sketch_bounds(rec)?
        .ok_or_else(|| Error::Degenerate("sketch has no drawable primitives".into()))?;
    let extent = (x1 - x0).max(y1 - y0);
    if !(extent > 0.0) {
        return Err(Error::Degenerate("sketch has zero extent".into()));
    }
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let scale = 1.0 / extent;
    let primitives = rec
        .primitives
        .iter()
        .map(|p| {
            let params = p
                .params
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    if p.kind.is_length_param(i) {
                        v * scale
                    } else if i % 2 == 0 {
                        (v - cx) * scale
                    } else {
                        (v - cy) * scale
                    }
                })
                .collect();
            Primitive { kind: p.kind, construction: p.construction, params }
        })
        .collect();
    Ok(SketchRecord { id: rec.id.clone(), primitives, provenance: rec.provenance })
}

/// Map `v` in `[-half, half]` onto 256 equal bins.
fn quantize(v: f64, half: f64) -> u8 {
    let x = ((v + half) / (2.0 * half) * 256.0).floor();
    x.clamp(0.0, 255.0) as u8
}

fn row_key(p: &Primitive) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + p.params.len());
    out.push(p.kind.index() as u8);
    out.push(p.construction as u8);
    for (i, v) in p.params.iter().enumerate() {
        let half = if p.kind.is_length_param(i) { LENGTH_RANGE } else { HALF_EXTENT };
        out.push(quantize(*v, half));
    }
    out
}

/// Order-independent identity of a normalized sketch: every parameter
/// quantized to 8 bits, rows sorted, then concatenated. Rows are
/// length-prefixed so different kinds never alias.
pub fn canonical_key(rec: &SketchRecord) -> Vec<u8> {
    let mut rows: Vec<Vec<u8>> = rec
        .primitives
        .iter()
        .filter(|p| p.kind != PrimitiveKind::None)
        .map(row_key)
        .collect();
    rows.sort();
    let mut key = Vec::new();
    for r in rows {
        key.push(r.len() as u8);
        key.extend(r);
    }
    key
}

/// Keep the first record of every canonical-key group. Returns the kept
/// records and the number of duplicates dropped.
pub fn dedup(records: Vec<SketchRecord>) -> (Vec<SketchRecord>, usize) {
    let mut seen = HashSet::new();
    let total = records.len();
    let kept: Vec<SketchRecord> = records
        .into_iter()
        .filter(|r| seen.insert(canonical_key(r)))
        .collect();
    let dropped = total - kept.len();
    (kept, dropped)
}
