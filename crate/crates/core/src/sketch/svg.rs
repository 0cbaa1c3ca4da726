//! Deterministic SVG rendering of normalized sketches.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arc::arc_geometry;
use super::primitive::{Primitive, PrimitiveKind, SketchRecord};

pub const SVG_FORMAT_VERSION: u32 = 1;
const VIEW_HALF: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    /// Seed of the per-primitive color palette.
    pub palette_seed: u64,
    pub stroke_width: f64,
    /// Rendered size in pixels; the viewBox is fixed.
    pub size_px: u32,
    pub point_radius: f64,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self { palette_seed: 0, stroke_width: 0.006, size_px: 512, point_radius: 0.008 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSvg {
    pub svg: String,
    /// One message per primitive that could not be drawn.
    pub warnings: Vec<String>,
}

fn palette(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let [r, g, b]: [u8; 3] = std::array::from_fn(|_| rng.random_range(30..=200));
            format!("#{r:02x}{g:02x}{b:02x}")
        })
        .collect()
}

fn shape(p: &Primitive, color: &str, opts: &SvgOptions) -> Result<String, String> {
    let v = &p.params;
    let dash = if p.construction { r#" stroke-dasharray="0.02 0.012""# } else { "" };
    let stroke = format!(r#"stroke="{color}"{dash}"#);
    Ok(match p.kind {
        PrimitiveKind::Line => format!(
            r#"<line x1="{:.6}" y1="{:.6}" x2="{:.6}" y2="{:.6}" {stroke}/>"#,
            v[0], v[1], v[2], v[3]
        ),
        PrimitiveKind::Circle => {
            if !(v[2] > 0.0) {
                return Err(format!("circle radius {} is not positive", v[2]));
            }
            format!(r#"<circle cx="{:.6}" cy="{:.6}" r="{:.6}" {stroke}/>"#, v[0], v[1], v[2])
        }
        PrimitiveKind::Arc => {
            let g = arc_geometry(v[0], v[1], v[2], v[3], v[4]).map_err(|e| e.to_string())?;
            // The group flips y, so sweep-flag 1 is counter-clockwise here.
            format!(
                r#"<path d="M {:.6} {:.6} A {:.6} {:.6} 0 0 {} {:.6} {:.6}" {stroke}/>"#,
                v[0], v[1], g.radius, g.radius, g.ccw as u8, v[2], v[3]
            )
        }
        PrimitiveKind::Point => format!(
            r#"<circle cx="{:.6}" cy="{:.6}" r="{:.6}" fill="{color}" stroke="none"/>"#,
            v[0], v[1], opts.point_radius
        ),
        PrimitiveKind::None => unreachable!("None rows are filtered before drawing"),
    })
}

pub fn render_svg(rec: &SketchRecord, opts: &SvgOptions) -> RenderedSvg {
    let colors = palette(rec.primitives.len(), opts.palette_seed);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" data-sketch-svg-version="{SVG_FORMAT_VERSION}" width="{px}" height="{px}" viewBox="{lo} {lo} {span} {span}">"#,
        px = opts.size_px,
        lo = -VIEW_HALF,
        span = 2.0 * VIEW_HALF,
    );
    let _ = writeln!(
        svg,
        r#"<g transform="scale(1,-1)" fill="none" stroke-width="{:.6}" stroke-linecap="round">"#,
        opts.stroke_width
    );
    let mut warnings = Vec::new();
    for (i, p) in rec.primitives.iter().enumerate() {
        if p.kind == PrimitiveKind::None {
            continue;
        }
        match p.validate().map_err(|e| e.to_string()).and_then(|_| shape(p, &colors[i], opts)) {
            Ok(el) => {
                svg.push_str(&el);
                svg.push('\n');
            }
            Err(e) => warnings.push(format!("{}: primitive {i} ({:?}) skipped: {e}", rec.id, p.kind)),
        }
    }
    svg.push_str("</g>\n</svg>\n");
    RenderedSvg { svg, warnings }
}
