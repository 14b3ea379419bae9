use serde::{Deserialize, Serialize};

use super::config::LossKind;
use super::transform::{Linear, TransformParams};
use crate::error::{Error, Result};
use crate::geometry::chamfer::grad_from_terms;
use crate::geometry::{add, mat_t_vec, mat_vec, rotation_jacobian, ChamferTerms, Point, PointCloud};

/// Loss value, its two terms, and gradients with respect to every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub loss: f64,
    pub distance_term: f64,
    pub reg_term: f64,
    /// Gradient for the linear part: `(a1, a2)` for rotations (6 values),
    /// the row-major matrix for affine maps (9 values).
    pub grad_linear: Vec<f64>,
    pub grad_delta: Vec<Point>,
}

impl LossOutput {
    /// Gradient laid out like [`TransformParams::to_flat`].
    pub fn flat_grad(&self) -> Vec<f64> {
        let mut g = self.grad_linear.clone();
        g.extend(self.grad_delta.iter().flatten());
        g
    }
}

/// `D(target, y) + lambda * sum_j w_j |delta_j|^2` with `y = (x + Delta) M^T`.
///
/// `target` is the denoised estimate and is treated as a constant. The
/// gradient of the distance term is chained through the transformation by
/// hand: `dL/d delta_j = M^T g_j + 2 lambda w_j delta_j` and
/// `dL/dM = sum_j g_j (x_j + delta_j)^T`, which the rotation Jacobian maps
/// back onto the 6D parameters.
pub fn adaptation_loss(
    x: &PointCloud,
    params: &TransformParams,
    target: &PointCloud,
    weights: &[f64],
    lambda: f64,
    kind: LossKind,
) -> Result<LossOutput> {
    let n = x.len();
    if params.delta.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: params.delta.len() });
    }
    if weights.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: weights.len() });
    }
    let m = params.linear.matrix()?;
    let moved: Vec<Point> = x.points.iter().zip(&params.delta).map(|(&p, &d)| add(p, d)).collect();
    let y: Vec<Point> = moved.iter().map(|&v| mat_vec(&m, v)).collect();

    let (distance_term, g) = match kind {
        LossKind::Chamfer => {
            if target.is_empty() {
                return Err(Error::EmptyCloud);
            }
            let terms = ChamferTerms::compute(&target.points, &y);
            (terms.distance(), grad_from_terms(&terms, &target.points, &y))
        }
        LossKind::SquaredL2 => {
            let yc = PointCloud { points: y, label: None };
            let d = crate::geometry::squared_l2(target, &yc)?;
            (d, crate::geometry::squared_l2_grad(target, &yc)?)
        }
    };

    let mut reg_term = 0.0;
    let mut grad_delta = Vec::with_capacity(n);
    let mut gm = [[0.0; 3]; 3];
    for ((gj, dj), (vj, &wj)) in g.iter().zip(&params.delta).zip(moved.iter().zip(weights)) {
        reg_term += wj * (dj[0] * dj[0] + dj[1] * dj[1] + dj[2] * dj[2]);
        let back = mat_t_vec(&m, *gj);
        let c = 2.0 * lambda * wj;
        grad_delta.push([back[0] + c * dj[0], back[1] + c * dj[1], back[2] + c * dj[2]]);
        for a in 0..3 {
            for b in 0..3 {
                gm[a][b] += gj[a] * vj[b];
            }
        }
    }

    let grad_linear = match &params.linear {
        Linear::Rotation(r) => {
            let jac = rotation_jacobian(r)?;
            let mut out = vec![0.0; 6];
            for a in 0..3 {
                for b in 0..3 {
                    let gab = gm[a][b];
                    for (o, j) in out.iter_mut().zip(&jac[3 * a + b]) {
                        *o += gab * j;
                    }
                }
            }
            out
        }
        Linear::Affine(_) => gm.iter().flatten().copied().collect(),
    };

    Ok(LossOutput {
        loss: distance_term + lambda * reg_term,
        distance_term,
        reg_term,
        grad_linear,
        grad_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::config::TransformKind;
    use crate::adapt::transform::{apply_transform, compute_reg_weights};
    use crate::geometry::{chamfer_grad, Rotation6D};
    use crate::rng::stream;
    use crate::schedule::standard_normal;
    use rand::Rng;

    #[test]
    fn zero_at_global_minimum() {
        let mut rng = stream(1, &[]);
        let x = PointCloud::new(standard_normal(10, &mut rng)).unwrap();
        let mut p = TransformParams::identity(10, TransformKind::Rotation);
        p.linear = Linear::Rotation(Rotation6D { a1: [0.3, 1.0, -0.2], a2: [0.5, 0.1, 0.9] });
        let target = apply_transform(&x, &p).unwrap();
        let w = compute_reg_weights(&x, 3).unwrap();
        let out = adaptation_loss(&x, &p, &target, &w, 5.0, LossKind::Chamfer).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.flat_grad().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_point_chain_rule() {
        let x = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let target = PointCloud::new(vec![[1.0, 1.0, 0.0]]).unwrap();
        let mut p = TransformParams::identity(1, TransformKind::Rotation);
        // 90 degrees about z: y = (0, 1, 0)
        p.linear = Linear::Rotation(Rotation6D { a1: [0.0, -1.0, 0.0], a2: [1.0, 0.0, 0.0] });
        let out = adaptation_loss(&x, &p, &target, &[1.0], 0.0, LossKind::Chamfer).unwrap();
        let y = apply_transform(&x, &p).unwrap();
        let g = chamfer_grad(&target, &y).unwrap()[0];
        // dL/d delta = R^T g, R^T = rows (0,1,0), (-1,0,0), (0,0,1)
        assert_eq!(g, [-4.0, 0.0, 0.0]);
        assert_eq!(out.grad_delta[0], [0.0, 4.0, 0.0]);
        assert_eq!(out.distance_term, 2.0);
    }

    fn fd_check(kind: LossKind, tk: TransformKind, seed: u64) {
        let mut rng = stream(seed, &[]);
        let n = 6;
        let x = PointCloud::new(standard_normal(n, &mut rng)).unwrap();
        let target = PointCloud::new(standard_normal(n, &mut rng)).unwrap();
        let w = compute_reg_weights(&x, 2).unwrap();
        let lambda = rng.random_range(0.0..5.0);
        let mut p = TransformParams::identity(n, tk);
        let mut flat = p.to_flat();
        for v in flat.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        p.set_flat(&flat);
        let out = adaptation_loss(&x, &p, &target, &w, lambda, kind).unwrap();
        let g = out.flat_grad();
        let h = 1e-5;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            fp[i] += h;
            let mut fm = flat.clone();
            fm[i] -= h;
            let mut pp = p.clone();
            pp.set_flat(&fp);
            let mut pm = p.clone();
            pm.set_flat(&fm);
            let lp = adaptation_loss(&x, &pp, &target, &w, lambda, kind).unwrap().loss;
            let lm = adaptation_loss(&x, &pm, &target, &w, lambda, kind).unwrap().loss;
            let num = (lp - lm) / (2.0 * h);
            let err = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-3 * scale);
            assert!(err < 1e-4, "param {i}: analytic {} numeric {num}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            fd_check(LossKind::Chamfer, TransformKind::Rotation, seed);
            fd_check(LossKind::SquaredL2, TransformKind::Rotation, 100 + seed);
            fd_check(LossKind::Chamfer, TransformKind::Affine, 200 + seed);
        }
    }
}
