use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Primitive class. The discriminant is the column inside the class block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Line = 0,
    Circle = 1,
    Arc = 2,
    Point = 3,
    None = 4,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 5] = [
        PrimitiveKind::Line,
        PrimitiveKind::Circle,
        PrimitiveKind::Arc,
        PrimitiveKind::Point,
        PrimitiveKind::None,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Line `(x1, y1, x2, y2)`, Circle `(x, y, r)`, Arc `(x1, y1, x2, y2, kappa)`,
    /// Point `(x, y)`.
    pub fn param_count(self) -> usize {
        match self {
            PrimitiveKind::Line => 4,
            PrimitiveKind::Circle => 3,
            PrimitiveKind::Arc => 5,
            PrimitiveKind::Point => 2,
            PrimitiveKind::None => 0,
        }
    }

    /// Whether parameter `i` is a length (radius or signed radius) rather
    /// than a coordinate.
    pub fn is_length_param(self, i: usize) -> bool {
        matches!((self, i), (PrimitiveKind::Circle, 2) | (PrimitiveKind::Arc, 4))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub construction: bool,
    pub params: Vec<f64>,
}

impl Primitive {
    pub fn new(kind: PrimitiveKind, construction: bool, params: Vec<f64>) -> Result<Self> {
        let p = Self { kind, construction, params };
        p.validate()?;
        Ok(p)
    }

    pub fn line(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { kind: PrimitiveKind::Line, construction: false, params: vec![x1, y1, x2, y2] }
    }

    pub fn circle(x: f64, y: f64, r: f64) -> Self {
        Self { kind: PrimitiveKind::Circle, construction: false, params: vec![x, y, r] }
    }

    pub fn arc(x1: f64, y1: f64, x2: f64, y2: f64, kappa: f64) -> Self {
        Self { kind: PrimitiveKind::Arc, construction: false, params: vec![x1, y1, x2, y2, kappa] }
    }

    pub fn point(x: f64, y: f64) -> Self {
        Self { kind: PrimitiveKind::Point, construction: false, params: vec![x, y] }
    }

    pub fn none() -> Self {
        Self { kind: PrimitiveKind::None, construction: false, params: Vec::new() }
    }

    pub fn as_construction(mut self) -> Self {
        self.construction = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.kind.param_count() {
            return Err(Error::InvalidInput(format!(
                "{:?} takes {} parameters, got {}",
                self.kind,
                self.kind.param_count(),
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("{:?} has non-finite parameters", self.kind)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Synthetic,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchRecord {
    pub id: String,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl SketchRecord {
    pub fn new(id: impl Into<String>, primitives: Vec<Primitive>) -> Self {
        Self { id: id.into(), primitives, provenance: Provenance::Synthetic }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }
}
