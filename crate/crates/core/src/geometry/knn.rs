use super::{dist2, PointCloud};
use crate::error::{Error, Result};

/// Indices of the `k` nearest neighbours of every point (self excluded),
/// ordered by ascending distance with ties going to the lower index.
pub fn knn(pc: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    Ok(knn_with_dist(pc, k)?
        .into_iter()
        .map(|row| row.into_iter().map(|(j, _)| j).collect())
        .collect())
}

/// Like [`knn`] but also returns the Euclidean (not squared) distances.
pub fn knn_with_dist(pc: &PointCloud, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = pc.len();
    if k == 0 || k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    let pts = &pc.points;
    let mut out = Vec::with_capacity(n);
    // (squared distance, index), kept sorted; insertion is O(k) which beats a
    // heap for the small k used here.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..n {
        best.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = dist2(pts[i], pts[j]);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            // j increases monotonically, so an equal distance already in the
            // buffer always has the lower index and must stay in front.
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, j));
            best.truncate(k);
        }
        out.push(best.iter().map(|&(d, j)| (j, d.sqrt())).collect());
    }
    Ok(out)
}
