use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;

const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    /// Simple polygon, vertices in order (either winding), tile units.
    Polygon { vertices: Vec<Point2> },
    Disc { center: Point2, radius: f64 },
}

/// An object's contact footprint and mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub name: String,
    pub geometry: Geometry,
    /// Arbitrary units; only pressure-mode readings depend on it.
    pub mass: f64,
}

/// Rigid placement: rotate about the shape's own centroid, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Placement {
    pub translation: Point2,
    pub rotation: f64,
}

impl Placement {
    pub fn new(x: f64, y: f64, rotation: f64) -> Self {
        Self {
            translation: Point2::new(x, y),
            rotation,
        }
    }
}

/// Signed shoelace area.
fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

pub fn polygon_centroid(v: &[Point2]) -> Result<Point2> {
    let area = signed_area(v);
    if v.len() < 3 || area.abs() <= AREA_EPS {
        return Err(Error::Geometry(format!(
            "polygon with {} vertices has area {area:e}",
            v.len()
        )));
    }
    let n = v.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let cross = a.x * b.y - b.x * a.y;
        cx += (a.x + b.x) * cross;
        cy += (a.y + b.y) * cross;
    }
    Ok(Point2::new(cx / (6.0 * area), cy / (6.0 * area)))
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn is_simple(v: &[Point2]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

impl ShapeSpec {
    pub fn polygon(name: impl Into<String>, vertices: Vec<Point2>, mass: f64) -> Result<Self> {
        let name = name.into();
        polygon_centroid(&vertices)?;
        if !is_simple(&vertices) {
            return Err(Error::Geometry(format!("polygon '{name}' self-intersects")));
        }
        Ok(Self {
            name,
            geometry: Geometry::Polygon { vertices },
            mass,
        })
    }

    pub fn disc(name: impl Into<String>, radius: f64, mass: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Geometry(format!("disc radius must be positive, got {radius}")));
        }
        Ok(Self {
            name: name.into(),
            geometry: Geometry::Disc {
                center: Point2::default(),
                radius,
            },
            mass,
        })
    }

    /// Axis-aligned `w x h` rectangle with its lower corner at the origin.
    pub fn rectangle(name: impl Into<String>, w: f64, h: f64, mass: f64) -> Result<Self> {
        Self::polygon(
            name,
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(w, 0.0),
                Point2::new(w, h),
                Point2::new(0.0, h),
            ],
            mass,
        )
    }

    pub fn area(&self) -> f64 {
        match &self.geometry {
            Geometry::Polygon { vertices } => signed_area(vertices).abs(),
            Geometry::Disc { radius, .. } => std::f64::consts::PI * radius * radius,
        }
    }

    /// Centroid of the unplaced shape.
    pub fn centroid(&self) -> Point2 {
        match &self.geometry {
            Geometry::Polygon { vertices } => polygon_centroid(vertices).expect("validated at construction"),
            Geometry::Disc { center, .. } => *center,
        }
    }

    pub fn placed(&self, placement: &Placement) -> Result<Footprint> {
        match &self.geometry {
            Geometry::Polygon { vertices } => {
                let c = polygon_centroid(vertices)?;
                let vertices = vertices
                    .iter()
                    .map(|&p| p.rotate_about(c, placement.rotation) + placement.translation)
                    .collect();
                Ok(Footprint::Polygon(vertices))
            }
            Geometry::Disc { center, radius } => Ok(Footprint::Disc {
                center: *center + placement.translation,
                radius: *radius,
            }),
        }
    }
}

/// Stand-ins for the reference object set, in tile units.
pub fn default_shapes() -> Vec<ShapeSpec> {
    let p = Point2::new;
    vec![
        ShapeSpec::rectangle("square", 2.0, 2.0, 1.0).expect("valid"),
        ShapeSpec::rectangle("rectangle", 3.0, 1.5, 1.0).expect("valid"),
        ShapeSpec::disc("disc", 1.25, 1.0).expect("valid"),
        ShapeSpec::polygon(
            "triangle",
            vec![p(0.0, 0.0), p(3.0, 0.0), p(0.0, 3.0)],
            1.0,
        )
        .expect("valid"),
        ShapeSpec::polygon(
            "l-shape",
            vec![
                p(0.0, 0.0),
                p(3.0, 0.0),
                p(3.0, 1.5),
                p(1.5, 1.5),
                p(1.5, 3.0),
                p(0.0, 3.0),
            ],
            1.0,
        )
        .expect("valid"),
    ]
}

/// A shape after placement, in grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Footprint {
    Polygon(Vec<Point2>),
    Disc { center: Point2, radius: f64 },
}

impl Footprint {
    /// Even-odd point-in-polygon / point-in-disc.
    pub fn contains(&self, q: Point2) -> bool {
        match self {
            Footprint::Polygon(v) => {
                let mut inside = false;
                let n = v.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (a, b) = (v[i], v[j]);
                    if (a.y > q.y) != (b.y > q.y) && q.x < (b.x - a.x) * (q.y - a.y) / (b.y - a.y) + a.x {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
            Footprint::Disc { center, radius } => q.distance_sq(*center) <= radius * radius,
        }
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounds(&self) -> (Point2, Point2) {
        match self {
            Footprint::Polygon(v) => v.iter().fold(
                (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
                |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
            ),
            Footprint::Disc { center, radius } => (
                Point2::new(center.x - radius, center.y - radius),
                Point2::new(center.x + radius, center.y + radius),
            ),
        }
    }

    pub fn centroid(&self) -> Result<Point2> {
        match self {
            Footprint::Polygon(v) => polygon_centroid(v),
            Footprint::Disc { center, .. } => Ok(*center),
        }
    }
}

/// Geometric center of the placed footprint.
pub fn true_center(shape: &ShapeSpec, placement: &Placement) -> Result<Point2> {
    shape.placed(placement)?.centroid()
}
