use super::{dist2, Point, PointCloud};
use crate::error::{Error, Result};
use crate::numeric::exact_sum;

/// Nearest-neighbour assignments in both directions between two point sets.
#[derive(Debug, Clone)]
pub struct ChamferTerms {
    /// For every point of the first set: (index into the second set, squared distance).
    pub forward: Vec<(usize, f64)>,
    /// For every point of the second set: (index into the first set, squared distance).
    pub backward: Vec<(usize, f64)>,
}

impl ChamferTerms {
    /// Computes both assignment directions. Ties resolve to the lowest index
    /// on either side, exactly as an exhaustive double loop would.
    pub fn compute(x: &[Point], y: &[Point]) -> Self {
        Self { forward: nearest(x, y), backward: nearest(y, x) }
    }

    /// `mean(forward) + mean(backward)`. The sums are correctly rounded, so the
    /// value is independent of point order.
    pub fn distance(&self) -> f64 {
        let f = exact_sum(self.forward.iter().map(|t| t.1));
        let b = exact_sum(self.backward.iter().map(|t| t.1));
        f / self.forward.len() as f64 + b / self.backward.len() as f64
    }
}

/// Nearest point of `target` for every point of `query` (lowest index on ties).
///
/// Sweeps outward from the query along the target sorted by x and stops once
/// the x gap alone exceeds the best distance. Distances are computed with
/// [`dist2`], so results equal the brute-force scan bit for bit.
pub fn nearest(query: &[Point], target: &[Point]) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by(|&a, &b| target[a][0].total_cmp(&target[b][0]));
    let xs: Vec<f64> = order.iter().map(|&j| target[j][0]).collect();
    query
        .iter()
        .map(|&q| {
            let mut best = (usize::MAX, f64::INFINITY);
            let start = xs.partition_point(|&v| v < q[0]);
            let mut up = start;
            let mut down = start;
            loop {
                let gap_up = xs.get(up).map(|&v| (v - q[0]) * (v - q[0]));
                let gap_down = down.checked_sub(1).map(|k| (q[0] - xs[k]) * (q[0] - xs[k]));
                let up_ok = gap_up.is_some_and(|g| g <= best.1);
                let down_ok = gap_down.is_some_and(|g| g <= best.1);
                if !up_ok && !down_ok {
                    break;
                }
                if up_ok {
                    consider(&mut best, q, target, order[up]);
                    up += 1;
                }
                if down_ok {
                    down -= 1;
                    consider(&mut best, q, target, order[down]);
                }
            }
            best
        })
        .collect()
}

fn consider(best: &mut (usize, f64), q: Point, target: &[Point], j: usize) {
    let d = dist2(q, target[j]);
    if d < best.1 || (d == best.1 && j < best.0) {
        *best = (j, d);
    }
}

/// Symmetric Chamfer distance with squared Euclidean point distances.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(ChamferTerms::compute(&x.points, &y.points).distance())
}

/// Gradient of `chamfer(fixed, variable)` with respect to `variable`, holding
/// `fixed` constant and the nearest-neighbour assignment frozen.
pub fn chamfer_grad(fixed: &PointCloud, variable: &PointCloud) -> Result<Vec<Point>> {
    if fixed.is_empty() || variable.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let terms = ChamferTerms::compute(&fixed.points, &variable.points);
    Ok(grad_from_terms(&terms, &fixed.points, &variable.points))
}

pub(crate) fn grad_from_terms(terms: &ChamferTerms, fixed: &[Point], variable: &[Point]) -> Vec<Point> {
    let cf = 2.0 / fixed.len() as f64;
    let cv = 2.0 / variable.len() as f64;
    let mut grad: Vec<Point> = variable
        .iter()
        .zip(&terms.backward)
        .map(|(&v, &(i, _))| {
            let f = fixed[i];
            [cv * (v[0] - f[0]), cv * (v[1] - f[1]), cv * (v[2] - f[2])]
        })
        .collect();
    for (&f, &(j, _)) in fixed.iter().zip(&terms.forward) {
        let v = variable[j];
        let g = &mut grad[j];
        g[0] += cf * (v[0] - f[0]);
        g[1] += cf * (v[1] - f[1]);
        g[2] += cf * (v[2] - f[2]);
    }
    grad
}

/// Mean squared per-row distance; the order-dependent alternative to Chamfer.
pub fn squared_l2(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch { expected: x.len(), got: y.len() });
    }
    if x.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let s: f64 = x.points.iter().zip(&y.points).map(|(&a, &b)| dist2(a, b)).sum();
    Ok(s / x.len() as f64)
}

/// Gradient of [`squared_l2`]`(fixed, variable)` with respect to `variable`.
pub fn squared_l2_grad(fixed: &PointCloud, variable: &PointCloud) -> Result<Vec<Point>> {
    if fixed.len() != variable.len() {
        return Err(Error::ShapeMismatch { expected: fixed.len(), got: variable.len() });
    }
    let c = 2.0 / variable.len() as f64;
    Ok(fixed
        .points
        .iter()
        .zip(&variable.points)
        .map(|(&f, &v)| [c * (v[0] - f[0]), c * (v[1] - f[1]), c * (v[2] - f[2])])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mat_vec, rotation_from_6d, Rotation6D};
    use proptest::prelude::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    /// Exhaustive double loop, accumulating in index order.
    fn oracle(x: &[Point], y: &[Point]) -> f64 {
        let mut a = Vec::new();
        for &xi in x {
            let mut m = f64::INFINITY;
            for &yj in y {
                let d = dist2(xi, yj);
                if d < m {
                    m = d;
                }
            }
            a.push(m);
        }
        let mut b = Vec::new();
        for &yj in y {
            let mut m = f64::INFINITY;
            for &xi in x {
                let d = dist2(xi, yj);
                if d < m {
                    m = d;
                }
            }
            b.push(m);
        }
        exact_sum(a) / x.len() as f64 + exact_sum(b) / y.len() as f64
    }

    #[test]
    fn hand_values() {
        let x = cloud(&[[0.0, 0.0, 0.0]]);
        let y = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        assert_eq!(chamfer(&x, &y).unwrap(), 2.0);
        let x2 = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&x2, &x).unwrap(), 2.0);
    }

    #[test]
    fn grad_hand_values() {
        let f = cloud(&[[0.0, 0.0, 0.0]]);
        let v = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_grad(&f, &v).unwrap(), vec![[4.0, 0.0, 0.0]]);
        let g = chamfer_grad(&v, &v).unwrap();
        assert!(g.iter().all(|p| p == &[0.0; 3]));
    }

    fn pts_strategy(max: usize) -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..=max)
    }

    proptest! {
        #[test]
        fn matches_oracle_bitwise(x in pts_strategy(8), y in pts_strategy(8)) {
            let got = chamfer(&cloud(&x), &cloud(&y)).unwrap();
            prop_assert_eq!(got.to_bits(), oracle(&x, &y).to_bits());
        }

        #[test]
        fn symmetric_and_permutation_invariant(x in pts_strategy(12), y in pts_strategy(12), rot in 0usize..100) {
            let a = chamfer(&cloud(&x), &cloud(&y)).unwrap();
            let b = chamfer(&cloud(&y), &cloud(&x)).unwrap();
            prop_assert_eq!(a, b);
            let mut xp = x.clone();
            xp.rotate_left(rot % x.len());
            xp.reverse();
            let mut yp = y.clone();
            yp.reverse();
            let c = chamfer(&cloud(&xp), &cloud(&yp)).unwrap();
            prop_assert_eq!(a.to_bits(), c.to_bits());
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn rigid_invariance(x in pts_strategy(10), y in pts_strategy(10),
                            a1 in prop::array::uniform3(-1.0f64..1.0),
                            a2 in prop::array::uniform3(-1.0f64..1.0),
                            t in prop::array::uniform3(-3.0f64..3.0)) {
            let Ok(r) = rotation_from_6d(&Rotation6D { a1, a2 }) else { return Ok(()); };
            let mv = |p: &Point| { let q = mat_vec(&r.0, *p); [q[0] + t[0], q[1] + t[1], q[2] + t[2]] };
            let xr: Vec<Point> = x.iter().map(mv).collect();
            let yr: Vec<Point> = y.iter().map(mv).collect();
            let a = chamfer(&cloud(&x), &cloud(&y)).unwrap();
            let b = chamfer(&cloud(&xr), &cloud(&yr)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn permutation_invariance_is_exact_for_integer_grids() {
        // Integer coordinates make every sum exact, so reordering cannot change bits.
        let x: Vec<Point> = (0..20).map(|i| [(i % 5) as f64, (i / 5) as f64, (i * 7 % 3) as f64]).collect();
        let y: Vec<Point> = (0..15).map(|i| [(i % 4) as f64 + 0.5, (i % 3) as f64, 1.0]).collect();
        let a = chamfer(&cloud(&x), &cloud(&y)).unwrap();
        let mut xs = x.clone();
        xs.reverse();
        let mut ys = y.clone();
        ys.rotate_left(4);
        assert_eq!(a, chamfer(&cloud(&xs), &cloud(&ys)).unwrap());
    }

    fn brute_nearest(query: &[Point], target: &[Point]) -> Vec<(usize, f64)> {
        query
            .iter()
            .map(|&q| {
                let mut best = (usize::MAX, f64::INFINITY);
                for (j, &t) in target.iter().enumerate() {
                    let d = dist2(q, t);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect()
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(x in pts_strategy(200), y in pts_strategy(200)) {
            prop_assert_eq!(nearest(&x, &y), brute_nearest(&x, &y));
        }

        #[test]
        fn sweep_ties_pick_lowest_index(
            x in prop::collection::vec(prop::array::uniform3(-3i8..3), 1..60),
            y in prop::collection::vec(prop::array::uniform3(-3i8..3), 1..60),
        ) {
            let f = |v: &[[i8; 3]]| v.iter().map(|p| p.map(f64::from)).collect::<Vec<Point>>();
            let (x, y) = (f(&x), f(&y));
            prop_assert_eq!(nearest(&x, &y), brute_nearest(&x, &y));
        }
    }

    #[test]
    fn squared_l2_shape_mismatch() {
        let x = cloud(&[[0.0; 3]]);
        let y = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(squared_l2(&x, &y), Err(Error::ShapeMismatch { .. })));
        assert_eq!(squared_l2(&y, &y).unwrap(), 0.0);
    }
}
