//! Nearest-neighbor transfer of sparse-point visibility to dense points.

use rayon::prelude::*;

use crate::geometry::Vec3;
use crate::sfm_io::{DenseCloud, NvmModel};

/// Static 3-d tree over a point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Implicit balanced tree: the median of `order[lo..hi]` is the node.
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, query: &Vec3) -> Option<usize> {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(query, 0, self.order.len(), 0, &mut best);
        (best.1 != usize::MAX).then_some(best.1)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, axis: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.0 || (d2 == best.0 && idx < best.1) {
            *best = (d2, idx);
        }
        let diff = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, next, best);
        // `<=` keeps equal-distance candidates reachable for the tie rule.
        if diff * diff <= best.0 {
            self.search(q, far.0, far.1, next, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], axis: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    let next = (axis + 1) % 3;
    build(points, left, next);
    build(points, &mut right[1..], next);
}

/// Gives every dense point the camera list of its nearest sparse point,
/// sorted and deduplicated. Both clouds must share a frame.
pub fn transfer_sparse_visibility(cloud: &DenseCloud, model: &NvmModel) -> Vec<Vec<usize>> {
    let lists: Vec<Vec<usize>> = model
        .points
        .iter()
        .map(|p| {
            let mut cams: Vec<usize> = p.measurements.iter().map(|m| m.camera_index).collect();
            cams.sort_unstable();
            cams.dedup();
            cams
        })
        .collect();
    let tree = KdTree::new(model.points.iter().map(|p| p.position).collect());
    cloud
        .points
        .par_iter()
        .map(|p| tree.nearest(&p.position).map(|i| lists[i].clone()).unwrap_or_default())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SplitMix64;
    use proptest::prelude::*;

    fn brute(points: &[Vec3], q: &Vec3) -> Option<usize> {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        (best.1 != usize::MAX).then_some(best.1)
    }

    #[test]
    fn empty_tree() {
        assert_eq!(KdTree::new(vec![]).nearest(&Vec3::zeros()), None);
    }

    #[test]
    fn duplicates_pick_lowest_index() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()];
        assert_eq!(KdTree::new(pts).nearest(&Vec3::new(0.1, 0.0, 0.0)), Some(1));
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in any::<u64>(), n in 1usize..200, grid in any::<bool>()) {
            let mut rng = SplitMix64::new(seed);
            let coord = |rng: &mut SplitMix64| {
                let v = rng.uniform(-5.0, 5.0);
                if grid { v.round() } else { v }
            };
            let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng))).collect();
            let tree = KdTree::new(pts.clone());
            for _ in 0..20 {
                let q = Vec3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng));
                prop_assert_eq!(tree.nearest(&q), brute(&pts, &q));
            }
        }
    }
}
