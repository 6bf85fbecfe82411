//! Small geometry helpers shared across the crate: Euler rotations,
//! rotated-rectangle footprints, convex polygon clipping, and ray-box tests.

use nalgebra::{Matrix3, Point2, Vector2, Vector3};

/// Rotation matrix from (roll, pitch, yaw), applied as R = Rz(yaw) Ry(pitch) Rx(roll).
pub fn rotation_rpy(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Recover (roll, pitch, yaw) with R = Rz(yaw) Ry(pitch) Rx(roll).
pub fn rpy_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-r[(2, 0)]).asin();
    let (roll, yaw) = if pitch.cos().abs() > 1e-9 {
        (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
    } else {
        // Gimbal lock: fold everything into roll.
        ((-r[(1, 2)]).atan2(r[(1, 1)]), 0.0)
    };
    Vector3::new(roll, pitch, yaw)
}

/// Normalize an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = a % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Fold an angle difference into [-45deg, 45deg] under 90-degree symmetry.
pub fn wrap_quarter(a: f64) -> f64 {
    let quarter = std::f64::consts::FRAC_PI_2;
    let mut a = a % quarter;
    if a > quarter / 2.0 {
        a -= quarter;
    } else if a < -quarter / 2.0 {
        a += quarter;
    }
    a
}

/// Corners of a yaw-rotated rectangle footprint (counter-clockwise).
pub fn rect_corners(center: Vector2<f64>, half: Vector2<f64>, yaw: f64) -> [Point2<f64>; 4] {
    let (s, c) = yaw.sin_cos();
    let rot = |x: f64, y: f64| {
        Point2::new(center.x + c * x - s * y, center.y + s * x + c * y)
    };
    [
        rot(-half.x, -half.y),
        rot(half.x, -half.y),
        rot(half.x, half.y),
        rot(-half.x, half.y),
    ]
}

/// Area of a convex polygon (shoelace, vertices counter-clockwise).
pub fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    acc.abs() * 0.5
}

/// Sutherland-Hodgman clip of a convex polygon against another convex polygon.
pub fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut output: Vec<Point2<f64>> = subject.to_vec();
    // Clip polygon must be counter-clockwise for the inside test below.
    let clip = ensure_ccw(clip);
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let inside = |p: Point2<f64>| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0;
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = inside(cur);
            let prev_in = inside(prev);
            if cur_in {
                if !prev_in {
                    output.push(line_intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersect(prev, cur, a, b));
            }
        }
    }
    output
}

fn ensure_ccw(poly: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    if acc < 0.0 {
        poly.iter().rev().copied().collect()
    } else {
        poly.to_vec()
    }
}

fn line_intersect(p: Point2<f64>, q: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> Point2<f64> {
    let dir = q - p;
    let edge = b - a;
    let denom = dir.x * edge.y - dir.y * edge.x;
    if denom.abs() < 1e-15 {
        return q;
    }
    let t = ((a.x - p.x) * edge.y - (a.y - p.y) * edge.x) / denom;
    p + dir * t
}

/// Intersection area of two yaw-rotated rectangles.
pub fn rotated_rect_intersection_area(
    c1: Vector2<f64>,
    h1: Vector2<f64>,
    yaw1: f64,
    c2: Vector2<f64>,
    h2: Vector2<f64>,
    yaw2: f64,
) -> f64 {
    let r1 = rect_corners(c1, h1, yaw1);
    let r2 = rect_corners(c2, h2, yaw2);
    polygon_area(&clip_convex(&r1, &r2))
}

/// IoU of two axis-aligned pixel rectangles given as (min, max) corners.
pub fn aabb_iou(min1: Vector2<f64>, max1: Vector2<f64>, min2: Vector2<f64>, max2: Vector2<f64>) -> f64 {
    let ix = (max1.x.min(max2.x) - min1.x.max(min2.x)).max(0.0);
    let iy = (max1.y.min(max2.y) - min1.y.max(min2.y)).max(0.0);
    let inter = ix * iy;
    let a1 = (max1.x - min1.x).max(0.0) * (max1.y - min1.y).max(0.0);
    let a2 = (max2.x - min2.x).max(0.0) * (max2.y - min2.y).max(0.0);
    let union = a1 + a2 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Ray / oriented-box intersection (slab test in the box frame).
///
/// `rot` is the box's world-from-object rotation, `center` its world center
/// and `half` its half-extents. Returns the entry parameter t along the ray
/// if it hits with t in (t_min, t_max).
pub fn ray_box_hit(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    center: Vector3<f64>,
    rot: &Matrix3<f64>,
    half: Vector3<f64>,
    t_min: f64,
    t_max: f64,
) -> Option<f64> {
    let o = rot.transpose() * (origin - center);
    let d = rot.transpose() * dir;
    let mut t0 = t_min;
    let mut t1 = t_max;
    for axis in 0..3 {
        if d[axis].abs() < 1e-12 {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut near = (-half[axis] - o[axis]) * inv;
        let mut far = (half[axis] - o[axis]) * inv;
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}
