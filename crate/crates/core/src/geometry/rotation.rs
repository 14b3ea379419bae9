use serde::{Deserialize, Serialize};

use super::{cross, dot, norm, scale, sub, Point};
use crate::error::{Error, Result};

/// Norm below which a 6D seed is considered degenerate.
pub const DEGENERACY_EPS: f64 = 1e-8;

/// Continuous 6D rotation parameterization: two 3-vectors that are
/// Gram-Schmidt orthonormalized into the first two rows of a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D {
    pub a1: Point,
    pub a2: Point,
}

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D { a1: [1.0, 0.0, 0.0], a2: [0.0, 1.0, 0.0] };

    pub fn to_array(&self) -> [f64; 6] {
        [self.a1[0], self.a1[1], self.a1[2], self.a2[0], self.a2[1], self.a2[2]]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self { a1: [v[0], v[1], v[2]], a2: [v[3], v[4], v[5]] }
    }
}

/// A 3x3 rotation stored by rows `r1, r2, r3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix =
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Rotation by `angle` radians about the unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: Point, angle: f64) -> Self {
        let a = scale(axis, 1.0 / norm(axis));
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let [x, y, z] = a;
        RotationMatrix([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }
}

struct Frame {
    n1: f64,
    r1: Point,
    u2: Point,
    n2: f64,
    r2: Point,
    r3: Point,
}

fn frame(p: &Rotation6D) -> Result<Frame> {
    let n1 = norm(p.a1);
    if !(n1 > DEGENERACY_EPS) {
        return Err(Error::DegenerateRotationSeed);
    }
    let r1 = scale(p.a1, 1.0 / n1);
    let u2 = sub(p.a2, scale(r1, dot(r1, p.a2)));
    let n2 = norm(u2);
    if !(n2 > DEGENERACY_EPS) {
        return Err(Error::DegenerateRotationSeed);
    }
    let r2 = scale(u2, 1.0 / n2);
    let r3 = cross(r1, r2);
    Ok(Frame { n1, r1, u2, n2, r2, r3 })
}

pub fn rotation_from_6d(p: &Rotation6D) -> Result<RotationMatrix> {
    let f = frame(p)?;
    Ok(RotationMatrix([f.r1, f.r2, f.r3]))
}

type M3 = [[f64; 3]; 3];

fn outer(a: Point, b: Point) -> M3 {
    [scale(b, a[0]), scale(b, a[1]), scale(b, a[2])]
}

fn eye_minus(m: M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = if i == j { 1.0 } else { 0.0 } - m[i][j];
        }
    }
    out
}

fn mscale(m: M3, s: f64) -> M3 {
    m.map(|r| scale(r, s))
}

fn mmul(a: &M3, b: &M3) -> M3 {
    super::mat_mul(a, b)
}

/// Matrix `[v]x` such that `[v]x w = v x w`.
fn skew(v: Point) -> M3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

/// Jacobian of `vec(R)` (row-major, `R[row][col]` at `3 * row + col`) with
/// respect to `(a1, a2)`.
pub fn rotation_jacobian(p: &Rotation6D) -> Result<[[f64; 6]; 9]> {
    let Frame { n1, r1, u2, n2, r2, .. } = frame(p)?;

    let dr1_da1 = mscale(eye_minus(outer(r1, r1)), 1.0 / n1);
    // u2 = a2 - (r1 . a2) r1
    let du2_dr1 = {
        let mut m = mscale(outer(r1, p.a2), -1.0);
        let c = dot(r1, p.a2);
        for (i, row) in m.iter_mut().enumerate() {
            row[i] -= c;
        }
        m
    };
    let du2_da2 = eye_minus(outer(r1, r1));
    let dr2_du2 = mscale(eye_minus(outer(r2, r2)), 1.0 / n2);
    debug_assert!((norm(u2) - n2).abs() < 1e-12 * n2.max(1.0));

    let dr2_da1 = mmul(&dr2_du2, &mmul(&du2_dr1, &dr1_da1));
    let dr2_da2 = mmul(&dr2_du2, &du2_da2);
    // r3 = r1 x r2 = -[r2]x r1 = [r1]x r2
    let neg_skew_r2 = mscale(skew(r2), -1.0);
    let skew_r1 = skew(r1);
    let dr3_da1 = {
        let a = mmul(&neg_skew_r2, &dr1_da1);
        let b = mmul(&skew_r1, &dr2_da1);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][j] + b[i][j];
            }
        }
        out
    };
    let dr3_da2 = mmul(&skew_r1, &dr2_da2);

    let blocks: [(M3, M3); 3] = [
        (dr1_da1, [[0.0; 3]; 3]),
        (dr2_da1, dr2_da2),
        (dr3_da1, dr3_da2),
    ];
    let mut jac = [[0.0; 6]; 9];
    for (row, (da1, da2)) in blocks.iter().enumerate() {
        for k in 0..3 {
            let out = &mut jac[3 * row + k];
            out[..3].copy_from_slice(&da1[k]);
            out[3..].copy_from_slice(&da2[k]);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{det, dist2, mat_mul, mat_vec, transpose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E1: Point = [1.0, 0.0, 0.0];
    const E2: Point = [0.0, 1.0, 0.0];

    fn random_seed(rng: &mut ChaCha8Rng) -> Rotation6D {
        loop {
            let mut v = [0.0; 6];
            v.iter_mut().for_each(|x| *x = rng.random_range(-2.0..2.0));
            let p = Rotation6D::from_array(v);
            // Keep well away from the degenerate set so finite differences are clean.
            if let Ok(f) = frame(&p) {
                if f.n1 > 0.1 && f.n2 > 0.1 {
                    return p;
                }
            }
        }
    }

    #[test]
    fn identity_cases() {
        let r = rotation_from_6d(&Rotation6D { a1: E1, a2: E2 }).unwrap();
        assert_eq!(r, RotationMatrix::IDENTITY);
        let r = rotation_from_6d(&Rotation6D { a1: [2.0, 0.0, 0.0], a2: [1.0, 1.0, 0.0] }).unwrap();
        assert_eq!(r, RotationMatrix::IDENTITY);
    }

    #[test]
    fn parallel_seed_is_degenerate() {
        assert!(matches!(
            rotation_from_6d(&Rotation6D { a1: E1, a2: E1 }),
            Err(Error::DegenerateRotationSeed)
        ));
        assert!(matches!(
            rotation_from_6d(&Rotation6D { a1: [0.0; 3], a2: E2 }),
            Err(Error::DegenerateRotationSeed)
        ));
        assert!(rotation_jacobian(&Rotation6D { a1: E1, a2: [3.0, 0.0, 0.0] }).is_err());
    }

    #[test]
    fn orthonormal_on_random_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut v = [0.0; 6];
            v.iter_mut().for_each(|x| *x = rng.random_range(-5.0..5.0));
            let Ok(r) = rotation_from_6d(&Rotation6D::from_array(v)) else { continue };
            let rtr = mat_mul(&transpose(&r.0), &r.0);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((rtr[i][j] - e).abs() < 1e-9);
                }
            }
            assert!((det(&r.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..30).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        for _ in 0..20 {
            let r = rotation_from_6d(&random_seed(&mut rng)).unwrap();
            let rp: Vec<Point> = pts.iter().map(|&p| mat_vec(&r.0, p)).collect();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    assert!((dist2(pts[i], pts[j]).sqrt() - dist2(rp[i], rp[j]).sqrt()).abs() < 1e-9);
                }
            }
        }
    }

    fn fd_jacobian(p: &Rotation6D, h: f64) -> [[f64; 6]; 9] {
        let mut jac = [[0.0; 6]; 9];
        let base = p.to_array();
        for c in 0..6 {
            let mut plus = base;
            let mut minus = base;
            plus[c] += h;
            minus[c] -= h;
            let rp = rotation_from_6d(&Rotation6D::from_array(plus)).unwrap().0;
            let rm = rotation_from_6d(&Rotation6D::from_array(minus)).unwrap().0;
            for i in 0..3 {
                for j in 0..3 {
                    jac[3 * i + j][c] = (rp[i][j] - rm[i][j]) / (2.0 * h);
                }
            }
        }
        jac
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = random_seed(&mut rng);
            let analytic = rotation_jacobian(&p).unwrap();
            let numeric = fd_jacobian(&p, 1e-6);
            let scale_ = analytic.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
                assert!((a - n).abs() <= 1e-5 * scale_.max(1e-3), "{a} vs {n}");
            }
        }
    }

    #[test]
    fn scaling_a1_along_r1_is_a_null_direction() {
        let jac = rotation_jacobian(&Rotation6D { a1: E1, a2: E2 }).unwrap();
        // Column 0 is d/d a1.x, i.e. along r1 = e1.
        assert!(jac.iter().all(|row| row[0].abs() < 1e-15));
    }

    #[test]
    fn out_of_plane_a2_moves_only_r2_and_r3() {
        let jac = rotation_jacobian(&Rotation6D { a1: E1, a2: E2 }).unwrap();
        // Column 5 is d/d a2.z; e3 is orthogonal to span(r1, r2).
        for k in 0..3 {
            assert_eq!(jac[k][5], 0.0);
        }
        // r2 tilts toward e3 and r3 tilts back toward -e2.
        assert_eq!(jac[3 + 2][5], 1.0);
        assert_eq!(jac[6 + 1][5], -1.0);
    }
}
