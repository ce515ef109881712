//! Small fixed-size linear algebra shared across the crate.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rotation about the vertical (y) axis, right-handed.
pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation matrix for an axis-angle vector (Rodrigues).
pub fn axis_angle_to_matrix(aa: [f64; 3]) -> Mat3 {
    let v = Vec3::from(aa);
    let angle = v.norm();
    if angle < 1e-12 {
        // first-order expansion keeps tiny rotations smooth
        let k = cross_matrix(&v);
        return Mat3::identity() + k;
    }
    let axis = v / angle;
    let k = cross_matrix(&axis);
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

/// Axis-angle vector of a rotation matrix; the inverse of [`axis_angle_to_matrix`]
/// for angles in `[0, pi]`.
pub fn matrix_to_axis_angle(r: &Mat3) -> [f64; 3] {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = libm::acos(cos);
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-7 {
        let v = w * 0.5;
        return [v.x, v.y, v.z];
    }
    let sin = libm::sin(angle);
    if sin > 1e-4 {
        let v = w * (angle / (2.0 * sin));
        return [v.x, v.y, v.z];
    }
    // near pi: recover the axis from the symmetric part, R + I = 2 a a^T (approximately)
    let b = (r + Mat3::identity()) * 0.5;
    let diag = [b[(0, 0)], b[(1, 1)], b[(2, 2)]];
    let i = if diag[0] >= diag[1] && diag[0] >= diag[2] {
        0
    } else if diag[1] >= diag[2] {
        1
    } else {
        2
    };
    let mut axis = Vec3::new(b[(0, i)], b[(1, i)], b[(2, i)]);
    axis /= libm::sqrt(diag[i].max(1e-300));
    axis = axis.normalize();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    let v = axis * angle;
    [v.x, v.y, v.z]
}

fn cross_matrix(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Closest points between segments `p0-p1` and `q0-q1`.
///
/// Returns `(s, t)` with the closest points at `p0 + s (p1 - p0)` and
/// `q0 + t (q1 - q0)`, both parameters clamped to `[0, 1]`.
pub fn closest_segment_params(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> (f64, f64) {
    const EPS: f64 = 1e-12;
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > EPS {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Distance between two segments along with the closest points.
pub fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> (f64, Vec3, Vec3) {
    let (s, t) = closest_segment_params(p0, p1, q0, q1);
    let cp = p0 + (p1 - p0) * s;
    let cq = q0 + (q1 - q0) * t;
    ((cq - cp).norm(), cp, cq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let a = p0 + (p1 - p0) * (i as f64 / n as f64);
            // closest point on q-segment to a is exact projection
            let d = q1 - q0;
            let t = if d.norm_squared() > 0.0 {
                ((a - q0).dot(&d) / d.norm_squared()).clamp(0.0, 1.0)
            } else {
                0.0
            };
            best = best.min((a - (q0 + d * t)).norm());
        }
        best
    }

    #[test]
    fn segment_distance_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut v = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (p0, p1, q0, q1) = (v(), v(), v(), v());
            let (d, _, _) = segment_distance(&p0, &p1, &q0, &q1);
            let b = brute_segment_distance(&p0, &p1, &q0, &q1);
            assert!(d <= b + 1e-12, "{d} > {b}");
            assert!(b - d < 5e-3, "{d} vs {b}");
        }
    }

    #[test]
    fn parallel_segments() {
        let (d, _, _) = segment_distance(
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.5, 1.0, 0.0),
            &Vec3::new(2.0, 1.0, 0.0),
        );
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_angle_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let aa = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let n = libm::sqrt(aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]);
            if n > 3.1 {
                continue;
            }
            let back = matrix_to_axis_angle(&axis_angle_to_matrix(aa));
            for k in 0..3 {
                assert!((back[k] - aa[k]).abs() < 1e-9, "{aa:?} -> {back:?}");
            }
        }
        let near_pi = [0.0, core::f64::consts::PI - 1e-9, 0.0];
        let m = axis_angle_to_matrix(near_pi);
        let back = axis_angle_to_matrix(matrix_to_axis_angle(&m));
        assert!((m - back).abs().max() < 1e-7);
    }
}
