//! Arc geometry under the signed-radius reading of `kappa`.
//!
//! `|kappa|` is the radius. The center sits on the perpendicular bisector of
//! the chord, on the left of `p1 -> p2` for positive `kappa` and on the right
//! for negative `kappa`. The arc is always the minor arc, so flipping the
//! sign of `kappa` mirrors it across the chord.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Relative slack accepted when `2|kappa|` equals the chord length up to
/// rounding (semicircles).
const CHORD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcGeometry {
    pub center: (f64, f64),
    pub radius: f64,
    pub start_angle: f64,
    pub end_angle: f64,
    /// `true` when the arc runs counter-clockwise from start to end.
    pub ccw: bool,
}

impl ArcGeometry {
    /// Signed angular extent, positive for counter-clockwise arcs.
    pub fn sweep(&self) -> f64 {
        let mut d = self.end_angle - self.start_angle;
        if self.ccw {
            while d <= 0.0 {
                d += TAU;
            }
            while d > TAU {
                d -= TAU;
            }
        } else {
            while d >= 0.0 {
                d -= TAU;
            }
            while d < -TAU {
                d += TAU;
            }
        }
        d
    }

    /// Point at fraction `s` in `[0, 1]` of the way from start to end.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let a = self.start_angle + s * self.sweep();
        (self.center.0 + self.radius * a.cos(), self.center.1 + self.radius * a.sin())
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)` of the arc.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let (sx, sy) = self.point_at(0.0);
        let (ex, ey) = self.point_at(1.0);
        let mut b = (sx.min(ex), sy.min(ey), sx.max(ex), sy.max(ey));
        let sweep = self.sweep();
        for q in 0..4 {
            let axis = q as f64 * PI / 2.0;
            // Fraction along the sweep at which the arc reaches this axis angle.
            let mut off = if sweep >= 0.0 { axis - self.start_angle } else { self.start_angle - axis };
            off = off.rem_euclid(TAU);
            if off <= sweep.abs() {
                let x = self.center.0 + self.radius * axis.cos();
                let y = self.center.1 + self.radius * axis.sin();
                b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
            }
        }
        b
    }
}

pub fn arc_geometry(x1: f64, y1: f64, x2: f64, y2: f64, kappa: f64) -> Result<ArcGeometry> {
    let (dx, dy) = (x2 - x1, y2 - y1);
    let chord = dx.hypot(dy);
    if chord == 0.0 {
        return Err(Error::Degenerate("arc endpoints coincide".into()));
    }
    let radius = kappa.abs();
    if 2.0 * radius < chord * (1.0 - CHORD_SLACK) {
        return Err(Error::ImpossibleArc { diameter: 2.0 * radius, chord });
    }
    let half = chord / 2.0;
    // Inside the slack the arc is an exact semicircle; the square root below
    // would otherwise amplify rounding in kappa into a visible center offset.
    let offset = if radius <= half * (1.0 + CHORD_SLACK) {
        0.0
    } else {
        (radius * radius - half * half).sqrt()
    };
    let (ux, uy) = (dx / chord, dy / chord);
    let (nx, ny) = (-uy, ux);
    let side = if kappa > 0.0 { 1.0 } else { -1.0 };
    let center = (
        (x1 + x2) / 2.0 + side * offset * nx,
        (y1 + y2) / 2.0 + side * offset * ny,
    );
    let radius = if offset == 0.0 { half } else { radius };
    Ok(ArcGeometry {
        center,
        radius,
        start_angle: (y1 - center.1).atan2(x1 - center.0),
        end_angle: (y2 - center.1).atan2(x2 - center.0),
        ccw: kappa > 0.0,
    })
}
