//! Sketch data model: primitives, the composite matrix encoding, geometry,
//! preprocessing, synthetic data, rendering and persistence.

pub mod arc;
pub mod encoding;
pub mod io;
pub mod normalize;
pub mod primitive;
pub mod svg;
pub mod synth;

pub use arc::{arc_geometry, ArcGeometry};
pub use encoding::{
    decode_row, decode_sketch, encode_sketch, harden_blocks, param_slice, row_kind, SketchMatrix,
    ARC_PARAMS, CIRCLE_PARAMS, CLASS_BLOCK, FEATURE_DIM, FLAG_BLOCK, LINE_PARAMS, MAX_PRIMITIVES,
    NUM_CLASSES, NUM_FLAGS, PARAM_BLOCK, POINT_PARAMS,
};
pub use io::{load_jsonl, save_jsonl};
pub use normalize::{canonical_key, dedup, normalize_sketch};
pub use primitive::{Primitive, PrimitiveKind, Provenance, SketchRecord};
pub use svg::{render_svg, SvgOptions};
pub use synth::{duplicate_fixture, gen_synthetic};
