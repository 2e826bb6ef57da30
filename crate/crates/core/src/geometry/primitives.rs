//! Triangle-level intersection and distance kernels.

use nalgebra::Vector3;

use crate::scalar::Real;

/// Watertight ray/triangle test (shear-and-scale formulation).
///
/// `dir` need not be unit length; the returned parameter is in units of
/// `dir`. Edge and vertex hits are reported consistently for triangles
/// sharing them, and hits at `λ = 0` count.
pub fn ray_triangle<T: Real>(origin: &Vector3<T>, dir: &Vector3<T>, tri: &[Vector3<T>; 3]) -> Option<T> {
    let abs = dir.abs();
    let kz = if abs.x >= abs.y && abs.x >= abs.z {
        0
    } else if abs.y >= abs.z {
        1
    } else {
        2
    };
    if dir[kz] == T::zero() {
        return None;
    }
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if dir[kz] < T::zero() {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = dir[kx] / dir[kz];
    let sy = dir[ky] / dir[kz];
    let sz = T::one() / dir[kz];

    let a = tri[0] - origin;
    let b = tri[1] - origin;
    let c = tri[2] - origin;
    let ax = a[kx] - sx * a[kz];
    let ay = a[ky] - sy * a[kz];
    let bx = b[kx] - sx * b[kz];
    let by = b[ky] - sy * b[kz];
    let cx = c[kx] - sx * c[kz];
    let cy = c[ky] - sy * c[kz];

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    let zero = T::zero();
    if (u < zero || v < zero || w < zero) && (u > zero || v > zero || w > zero) {
        return None;
    }
    let det = u + v + w;
    if det == zero {
        return None;
    }
    let t_scaled = u * sz * a[kz] + v * sz * b[kz] + w * sz * c[kz];
    let lambda = t_scaled / det;
    if lambda < zero {
        return None;
    }
    Some(lambda)
}

/// Closest point on a triangle to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle<T: Real>(p: &Vector3<T>, tri: &[Vector3<T>; 3]) -> Vector3<T> {
    let [a, b, c] = *tri;
    let zero = T::zero();
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= zero && d2 <= zero {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= zero && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= zero && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && (d4 - d3) >= zero && (d5 - d6) >= zero {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Squared distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_segment_distance_squared<T: Real>(
    p1: &Vector3<T>,
    q1: &Vector3<T>,
    p2: &Vector3<T>,
    q2: &Vector3<T>,
) -> T {
    let zero = T::zero();
    let one = T::one();
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let tiny = T::EPS * T::EPS;
    let (s, t);
    if a <= tiny && e <= tiny {
        return r.norm_squared();
    }
    if a <= tiny {
        s = zero;
        t = (f / e).clamp(zero, one);
    } else {
        let c = d1.dot(&r);
        if e <= tiny {
            t = zero;
            s = (-c / a).clamp(zero, one);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > zero {
                ((b * f - c * e) / denom).clamp(zero, one)
            } else {
                zero
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < zero {
                t0 = zero;
                s0 = (-c / a).clamp(zero, one);
            } else if t0 > one {
                t0 = one;
                s0 = ((b - c) / a).clamp(zero, one);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm_squared()
}

/// Squared distance between segment `[a, b]` and a triangle; zero when the
/// segment pierces or touches it.
pub fn segment_triangle_distance_squared<T: Real>(
    a: &Vector3<T>,
    b: &Vector3<T>,
    tri: &[Vector3<T>; 3],
) -> T {
    let dir = b - a;
    if let Some(lambda) = ray_triangle(a, &dir, tri) {
        if lambda <= T::one() {
            return T::zero();
        }
    }
    let mut best = (closest_point_on_triangle(a, tri) - a)
        .norm_squared()
        .min((closest_point_on_triangle(b, tri) - b).norm_squared());
    for k in 0..3 {
        let d = segment_segment_distance_squared(a, b, &tri[k], &tri[(k + 1) % 3]);
        best = best.min(d);
    }
    best
}

/// Signed solid angle subtended by a triangle at `p` (van Oosterom–Strackee).
pub fn solid_angle<T: Real>(p: &Vector3<T>, tri: &[Vector3<T>; 3]) -> T {
    let a = tri[0] - p;
    let b = tri[1] - p;
    let c = tri[2] - p;
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
    T::lit(2.0) * num.atan2(den)
}
