//! Seeded synthetic sketch corpus built from a few parametric part families.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoding::MAX_PRIMITIVES;
use super::normalize::normalize_sketch;
use super::primitive::{Primitive, SketchRecord};

pub const MIN_SYNTH_PRIMITIVES: usize = 8;

fn rotate(p: (f64, f64), theta: f64, c: (f64, f64)) -> (f64, f64) {
    let (s, co) = theta.sin_cos();
    (c.0 + co * p.0 - s * p.1, c.1 + s * p.0 + co * p.1)
}

fn center<R: Rng>(rng: &mut R) -> (f64, f64) {
    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn rectangle<R: Rng>(rng: &mut R) -> Vec<Primitive> {
    let c = center(rng);
    let (w, h) = (rng.random_range(0.2..1.2), rng.random_range(0.2..1.2));
    let theta = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..PI) };
    let corners = [(-w, -h), (w, -h), (w, h), (-w, h)].map(|(x, y)| rotate((x / 2.0, y / 2.0), theta, c));
    (0..4)
        .map(|i| {
            let (a, b) = (corners[i], corners[(i + 1) % 4]);
            Primitive::line(a.0, a.1, b.0, b.1)
        })
        .collect()
}

fn circle_mark<R: Rng>(rng: &mut R) -> Vec<Primitive> {
    let c = center(rng);
    let r = rng.random_range(0.05..0.5);
    vec![Primitive::circle(c.0, c.1, r), Primitive::point(c.0, c.1)]
}

/// Two parallel lines closed by two outward semicircles.
fn slot<R: Rng>(rng: &mut R) -> Vec<Primitive> {
    let c = center(rng);
    let len = rng.random_range(0.2..1.0);
    let width = rng.random_range(0.1..0.5);
    let theta = rng.random_range(0.0..PI);
    let (hl, hw) = (len / 2.0, width / 2.0);
    let p = |x: f64, y: f64| rotate((x, y), theta, c);
    let (a, b, cc, d) = (p(-hl, -hw), p(hl, -hw), p(hl, hw), p(-hl, hw));
    vec![
        Primitive::line(a.0, a.1, b.0, b.1),
        Primitive::line(cc.0, cc.1, d.0, d.1),
        // Counter-clockwise from each end's first corner bulges outward.
        Primitive::arc(b.0, b.1, cc.0, cc.1, hw),
        Primitive::arc(d.0, d.1, a.0, a.1, hw),
    ]
}

fn construction_line<R: Rng>(rng: &mut R) -> Vec<Primitive> {
    let (a, b) = (center(rng), center(rng));
    vec![Primitive::line(a.0, a.1, b.0, b.1).as_construction()]
}

fn lone_point<R: Rng>(rng: &mut R) -> Vec<Primitive> {
    let c = center(rng);
    vec![Primitive::point(c.0, c.1)]
}

type Family = fn(&mut ChaCha8Rng) -> Vec<Primitive>;

const FAMILIES: [(usize, Family); 5] = [
    (4, rectangle),
    (2, circle_mark),
    (4, slot),
    (1, construction_line),
    (1, lone_point),
];

fn one_record(rng: &mut ChaCha8Rng, id: String) -> SketchRecord {
    let target = rng.random_range(MIN_SYNTH_PRIMITIVES..=MAX_PRIMITIVES);
    let mut prims = slot(rng);
    prims.extend(circle_mark(rng));
    prims.extend(construction_line(rng));
    while prims.len() < target {
        let room = target - prims.len();
        let fits: Vec<&(usize, Family)> = FAMILIES.iter().filter(|(n, _)| *n <= room).collect();
        let (_, family) = fits[rng.random_range(0..fits.len())];
        prims.extend(family(rng));
    }
    prims.shuffle(rng);
    let rec = SketchRecord::new(id, prims);
    normalize_sketch(&rec).expect("generated sketches have positive extent")
}

/// `count` normalized records with 8 to 16 primitives each.
pub fn gen_synthetic(count: usize, seed: u64) -> Vec<SketchRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| one_record(&mut rng, format!("syn-{seed}-{i:05}"))).collect()
}

/// `unique` distinct records followed by `duplicates` row-shuffled copies of
/// them, for exercising dedup.
pub fn duplicate_fixture(unique: usize, duplicates: usize, seed: u64) -> Vec<SketchRecord> {
    let mut out = gen_synthetic(unique, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in 0..duplicates {
        let mut dup = out[i % unique].clone();
        dup.id = format!("dup-{seed}-{i:05}");
        dup.primitives.shuffle(&mut rng);
        out.push(dup);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::primitive::PrimitiveKind;
    use crate::sketch::normalize::sketch_bounds;

    #[test]
    fn zero_count_is_empty() {
        assert!(gen_synthetic(0, 1).is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_synthetic(20, 4), gen_synthetic(20, 4));
        assert_ne!(gen_synthetic(20, 4), gen_synthetic(20, 5));
    }

    #[test]
    fn coverage_and_sizes() {
        let corpus = gen_synthetic(1000, 3);
        for rec in &corpus {
            assert!((MIN_SYNTH_PRIMITIVES..=MAX_PRIMITIVES).contains(&rec.primitives.len()));
            let (x0, y0, x1, y1) = sketch_bounds(rec).unwrap().unwrap();
            assert!(((x1 - x0).max(y1 - y0) - 1.0).abs() < 1e-12, "{:?}", (x0, y0, x1, y1));
        }
        for chunk in corpus.chunks(100) {
            for kind in [PrimitiveKind::Line, PrimitiveKind::Circle, PrimitiveKind::Arc, PrimitiveKind::Point] {
                assert!(chunk.iter().any(|r| r.primitives.iter().any(|p| p.kind == kind)));
            }
            for flag in [false, true] {
                assert!(chunk.iter().any(|r| r.primitives.iter().any(|p| p.construction == flag)));
            }
        }
    }
}
