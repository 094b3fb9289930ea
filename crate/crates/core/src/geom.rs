//! SE2 poses, oriented boxes and the overlap geometry used everywhere else.
//!
//! Headings are stored as (cos, sin) pairs rather than raw angles, so frame
//! changes never wrap. All polygon work assumes convex CCW input, which is
//! all we ever produce (box footprints).

use serde::{Deserialize, Serialize};

/// Rigid 2-D pose: translation plus heading stored as a unit (cos, sin) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub cos_h: f64,
    pub sin_h: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading_rad: f64) -> Self {
        Self {
            x,
            y,
            cos_h: heading_rad.cos(),
            sin_h: heading_rad.sin(),
        }
    }

    /// Build from a possibly unnormalized (cos, sin) pair.
    pub fn from_parts(x: f64, y: f64, cos_h: f64, sin_h: f64) -> Self {
        let mut p = Self { x, y, cos_h, sin_h };
        p.normalize();
        p
    }

    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            cos_h: 1.0,
            sin_h: 0.0,
        }
    }

    /// Rescale (cos, sin) onto the unit circle. A zero pair degenerates to
    /// heading 0 rather than NaN.
    pub fn normalize(&mut self) {
        let n = (self.cos_h * self.cos_h + self.sin_h * self.sin_h).sqrt();
        if n > 1e-12 {
            self.cos_h /= n;
            self.sin_h /= n;
        } else {
            self.cos_h = 1.0;
            self.sin_h = 0.0;
        }
    }

    pub fn heading(&self) -> f64 {
        self.sin_h.atan2(self.cos_h)
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Group composition `self ∘ other`: apply `other` in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            x: self.x + self.cos_h * other.x - self.sin_h * other.y,
            y: self.y + self.sin_h * other.x + self.cos_h * other.y,
            cos_h: self.cos_h * other.cos_h - self.sin_h * other.sin_h,
            sin_h: self.sin_h * other.cos_h + self.cos_h * other.sin_h,
        }
    }

    pub fn inverse(&self) -> Pose2 {
        Pose2 {
            x: -(self.cos_h * self.x + self.sin_h * self.y),
            y: -(-self.sin_h * self.x + self.cos_h * self.y),
            cos_h: self.cos_h,
            sin_h: -self.sin_h,
        }
    }

    /// Map a point expressed in this pose's frame out to the world frame.
    pub fn from_frame(&self, local: (f64, f64)) -> (f64, f64) {
        (
            self.x + self.cos_h * local.0 - self.sin_h * local.1,
            self.y + self.sin_h * local.0 + self.cos_h * local.1,
        )
    }
}

/// Express a world point in the coordinate frame of `frame`.
pub fn into_frame(world_point: (f64, f64), frame: &Pose2) -> (f64, f64) {
    let dx = world_point.0 - frame.x;
    let dy = world_point.1 - frame.y;
    (
        frame.cos_h * dx + frame.sin_h * dy,
        -frame.sin_h * dx + frame.cos_h * dy,
    )
}

/// Pose of `b` expressed in the frame of `a`, i.e. `a⁻¹ ∘ b`.
pub fn relative_pose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.inverse().compose(b)
}

/// 2-D oriented bounding box. `length` runs along the heading axis,
/// `width` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub pose: Pose2,
    pub width: f64,
    pub length: f64,
}

impl OrientedBox {
    pub fn new(pose: Pose2, width: f64, length: f64) -> Self {
        assert!(
            width > 0.0 && length > 0.0,
            "box extents must be positive, got w={width} l={length}"
        );
        Self {
            pose,
            width,
            length,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.length
    }

    /// Footprint corners, counter-clockwise.
    pub fn corners(&self) -> ConvexPolygon {
        let hl = self.length * 0.5;
        let hw = self.width * 0.5;
        // CCW in the local frame, starting front-right.
        let local = [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)];
        ConvexPolygon::new(local.iter().map(|&p| self.pose.from_frame(p)).collect())
    }

    pub fn contains(&self, point: (f64, f64)) -> bool {
        let (lx, ly) = into_frame(point, &self.pose);
        lx.abs() <= self.length * 0.5 && ly.abs() <= self.width * 0.5
    }
}

/// Convex polygon with counter-clockwise winding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<(f64, f64)>,
}

impl ConvexPolygon {
    /// Wrap a CCW convex vertex list. Debug builds verify the winding.
    pub fn new(vertices: Vec<(f64, f64)>) -> Self {
        debug_assert!(vertices.len() >= 3, "polygon needs at least 3 vertices");
        debug_assert!(
            is_convex_ccw(&vertices),
            "vertices must be convex and counter-clockwise"
        );
        Self { vertices }
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Shoelace area; non-negative for CCW input.
    pub fn area(&self) -> f64 {
        shoelace(&self.vertices).abs()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.vertices.len() as f64;
        let (sx, sy) = self
            .vertices
            .iter()
            .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if cross(a, b, p) < 0.0 {
                return false;
            }
        }
        true
    }

    pub fn axis_aligned_bounds(&self) -> ((f64, f64), (f64, f64)) {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.vertices {
            min.0 = min.0.min(x);
            min.1 = min.1.min(y);
            max.0 = max.0.max(x);
            max.1 = max.1.max(y);
        }
        (min, max)
    }
}

fn shoelace(v: &[(f64, f64)]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = v[i];
        let (x1, y1) = v[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc * 0.5
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn is_convex_ccw(v: &[(f64, f64)]) -> bool {
    let n = v.len();
    (0..n).all(|i| cross(v[i], v[(i + 1) % n], v[(i + 2) % n]) >= -1e-9)
}

/// Area of the intersection of two convex CCW polygons via
/// Sutherland–Hodgman clipping. Zero when disjoint.
pub fn polygon_intersection_area(p: &ConvexPolygon, q: &ConvexPolygon) -> f64 {
    let mut subject: Vec<(f64, f64)> = p.vertices.clone();
    let clip = &q.vertices;
    let n = clip.len();
    for i in 0..n {
        if subject.is_empty() {
            return 0.0;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % n];
        let input = std::mem::take(&mut subject);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = cross(e0, e1, cur) >= 0.0;
            let prev_in = cross(e0, e1, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    subject.push(line_intersection(prev, cur, e0, e1));
                }
                subject.push(cur);
            } else if prev_in {
                subject.push(line_intersection(prev, cur, e0, e1));
            }
        }
    }
    if subject.len() < 3 {
        return 0.0;
    }
    shoelace(&subject).abs()
}

fn line_intersection(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> (f64, f64) {
    let r = (b.0 - a.0, b.1 - a.1);
    let s = (d.0 - c.0, d.1 - c.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-30 {
        // Parallel edge grazing; either endpoint is equally valid.
        return b;
    }
    let t = ((c.0 - a.0) * s.1 - (c.1 - a.1) * s.0) / denom;
    (a.0 + t * r.0, a.1 + t * r.1)
}

/// Intersection over union of two oriented boxes.
pub fn iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = polygon_intersection_area(&a.corners(), &b.corners());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Intersection over the obstacle's own area. Not symmetric.
pub fn iop(a: &OrientedBox, obstacle: &OrientedBox) -> f64 {
    let inter = polygon_intersection_area(&a.corners(), &obstacle.corners());
    (inter / obstacle.area()).clamp(0.0, 1.0)
}

/// Euclidean distance from a point to the boundary of a box, negative when
/// the point lies inside.
pub fn signed_min_distance(point: (f64, f64), b: &OrientedBox) -> f64 {
    let (lx, ly) = into_frame(point, &b.pose);
    let dx = lx.abs() - b.length * 0.5;
    let dy = ly.abs() - b.width * 0.5;
    if dx > 0.0 || dy > 0.0 {
        let ox = dx.max(0.0);
        let oy = dy.max(0.0);
        (ox * ox + oy * oy).sqrt()
    } else {
        // Inside: distance to the nearest face.
        dx.max(dy)
    }
}

/// Three circles inscribed along a box's long axis, approximating its
/// footprint for penetration costing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostingCircleSet {
    pub centers: [(f64, f64); 3],
    pub radius: f64,
}

/// Place three inscribed circles along the longer box axis. A box that is
/// wider than long swaps roles so the circles stay inside the footprint.
pub fn costing_circles(b: &OrientedBox) -> CostingCircleSet {
    let (longitudinal, radius) = if b.length >= b.width {
        (b.length, b.width * 0.5)
    } else {
        (b.width, b.length * 0.5)
    };
    let half_span = (longitudinal * 0.5 - radius).max(0.0);
    let offsets = [-half_span, 0.0, half_span];
    let along_length = b.length >= b.width;
    let centers = offsets.map(|o| {
        let local = if along_length { (o, 0.0) } else { (0.0, o) };
        b.pose.from_frame(local)
    });
    CostingCircleSet { centers, radius }
}
