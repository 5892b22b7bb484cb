// SPDX-License-Identifier: Apache-2.0

//! k-d tree under the Chebyshev (max-coordinate) metric.
//!
//! Shared by the correlation-sum counter and the kNN entropy estimator.
//! Every distance the tree reports is computed by [`chebyshev`] on the
//! original coordinates, so results agree bit-for-bit with a direct scan.

use crate::series::PointCloud;

const LEAF_SIZE: usize = 16;
const NO_CHILD: u32 = u32::MAX;

#[inline]
pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == NO_CHILD
    }
}

#[derive(Debug)]
pub struct KdTree<'a> {
    dim: usize,
    data: &'a [f64],
    order: Vec<u32>,
    nodes: Vec<Node>,
    // per-node bounding boxes, `dim` lows then `dim` highs
    boxes: Vec<f64>,
}

impl<'a> KdTree<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        Self::from_flat(cloud.dim(), cloud.as_flat())
    }

    pub fn from_flat(dim: usize, data: &'a [f64]) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        let n = data.len() / dim;
        assert!(n < u32::MAX as usize, "too many points for the index");
        let mut tree = Self {
            dim,
            data,
            order: (0..n as u32).collect(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            boxes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    #[inline]
    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let dim = self.dim;
        let id = self.nodes.len() as u32;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            let p = &self.data[i as usize * dim..(i as usize + 1) * dim];
            for c in 0..dim {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);
        self.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let split = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[split] - lo[split] == 0.0 {
            // all points coincide
            return id;
        }
        let mid = start + (end - start) / 2;
        let data = self.data;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a as usize * dim + split].total_cmp(&data[b as usize * dim + split])
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        let node = &mut self.nodes[id as usize];
        node.left = left;
        node.right = right;
        id
    }

    #[inline]
    fn bbox(&self, node: u32) -> (&[f64], &[f64]) {
        let off = node as usize * 2 * self.dim;
        (
            &self.boxes[off..off + self.dim],
            &self.boxes[off + self.dim..off + 2 * self.dim],
        )
    }

    #[inline]
    fn min_dist(&self, node: u32, q: &[f64]) -> f64 {
        let (lo, hi) = self.bbox(node);
        let mut m = 0.0_f64;
        for c in 0..self.dim {
            m = m.max(lo[c] - q[c]).max(q[c] - hi[c]);
        }
        m
    }

    #[inline]
    fn max_dist(&self, node: u32, q: &[f64]) -> f64 {
        let (lo, hi) = self.bbox(node);
        let mut m = 0.0_f64;
        for c in 0..self.dim {
            m = m.max((q[c] - lo[c]).abs()).max((q[c] - hi[c]).abs());
        }
        m
    }

    /// Distance from point `i` to its `k`-th nearest neighbor, skipping every
    /// `j` with `|i - j| <= theiler` (so the point itself is always skipped).
    ///
    /// Returns `None` when fewer than `k` admissible neighbors exist.
    pub fn kth_distance(&self, i: usize, k: usize, theiler: usize) -> Option<f64> {
        assert!(k >= 1);
        let q = self.point(i);
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        self.knn_visit(0, q, i, k, theiler, &mut best);
        (best.len() == k).then(|| best[k - 1])
    }

    fn knn_visit(
        &self,
        node: u32,
        q: &[f64],
        qi: usize,
        k: usize,
        theiler: usize,
        best: &mut Vec<f64>,
    ) {
        let n = &self.nodes[node as usize];
        if n.is_leaf() {
            for &j in &self.order[n.start as usize..n.end as usize] {
                let j = j as usize;
                if j.abs_diff(qi) <= theiler {
                    continue;
                }
                let d = chebyshev(q, self.point(j));
                if best.len() < k {
                    let pos = best.partition_point(|&b| b <= d);
                    best.insert(pos, d);
                } else if d < best[k - 1] {
                    let pos = best.partition_point(|&b| b <= d);
                    best.insert(pos, d);
                    best.pop();
                }
            }
            return;
        }
        let (l, r) = (n.left, n.right);
        let (dl, dr) = (self.min_dist(l, q), self.min_dist(r, q));
        let (first, d_first, second, d_second) = if dl <= dr {
            (l, dl, r, dr)
        } else {
            (r, dr, l, dl)
        };
        if best.len() < k || d_first < best[k - 1] {
            self.knn_visit(first, q, qi, k, theiler, best);
        }
        if best.len() < k || d_second < best[k - 1] {
            self.knn_visit(second, q, qi, k, theiler, best);
        }
    }

    /// Adds, for the query point `q`, the number of tree points at distance
    /// strictly below each radius into a difference array.
    ///
    /// `diff` has `radii.len() + 1` slots; a point at distance `d` increments
    /// the slot of the first radius exceeding `d`, so the prefix sum of
    /// `diff[..=j]` is the count for `radii[j]`. Radii must be increasing.
    pub fn accumulate_radius_counts(&self, q: &[f64], radii: &[f64], diff: &mut [i64]) {
        debug_assert_eq!(diff.len(), radii.len() + 1);
        if !self.is_empty() {
            self.count_visit(0, q, radii, diff);
        }
    }

    fn count_visit(&self, node: u32, q: &[f64], radii: &[f64], diff: &mut [i64]) {
        let n = &self.nodes[node as usize];
        let first_above_min = radii.partition_point(|&r| r <= self.min_dist(node, q));
        if first_above_min == radii.len() {
            return;
        }
        let first_above_max = radii.partition_point(|&r| r <= self.max_dist(node, q));
        if first_above_min == first_above_max {
            diff[first_above_max] += (n.end - n.start) as i64;
            return;
        }
        if n.is_leaf() {
            for &j in &self.order[n.start as usize..n.end as usize] {
                let d = chebyshev(q, self.point(j as usize));
                diff[radii.partition_point(|&r| r <= d)] += 1;
            }
            return;
        }
        self.count_visit(n.left, q, radii, diff);
        self.count_visit(n.right, q, radii, diff);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flat(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.random::<f64>()).collect()
    }

    fn brute_kth(data: &[f64], dim: usize, i: usize, k: usize, w: usize) -> Option<f64> {
        let n = data.len() / dim;
        let q = &data[i * dim..(i + 1) * dim];
        let mut d: Vec<f64> = (0..n)
            .filter(|j| j.abs_diff(i) > w)
            .map(|j| chebyshev(q, &data[j * dim..(j + 1) * dim]))
            .collect();
        d.sort_by(f64::total_cmp);
        d.get(k - 1).copied()
    }

    #[test]
    fn knn_matches_scan() {
        for (dim, seed) in [(1, 1), (2, 2), (3, 3)] {
            let data = random_flat(300, dim, seed);
            let tree = KdTree::from_flat(dim, &data);
            for i in 0..300 {
                for (k, w) in [(1, 0), (4, 0), (4, 5)] {
                    assert_eq!(
                        tree.kth_distance(i, k, w),
                        brute_kth(&data, dim, i, k, w)
                    );
                }
            }
        }
    }

    #[test]
    fn knn_with_duplicates_and_grid() {
        // integer lattice: lots of exact ties
        let data: Vec<f64> = (0..200).flat_map(|i| [(i % 10) as f64, (i / 20) as f64]).collect();
        let tree = KdTree::from_flat(2, &data);
        for i in 0..200 {
            assert_eq!(tree.kth_distance(i, 3, 0), brute_kth(&data, 2, i, 3, 0));
        }
    }

    #[test]
    fn too_few_neighbors() {
        let data = [0.0, 1.0, 2.0];
        let tree = KdTree::from_flat(1, &data);
        assert_eq!(tree.kth_distance(0, 2, 0), Some(2.0));
        assert_eq!(tree.kth_distance(0, 3, 0), None);
        assert_eq!(tree.kth_distance(1, 1, 1), None);
    }

    #[test]
    fn radius_counts_match_scan() {
        let data = random_flat(400, 2, 9);
        let tree = KdTree::from_flat(2, &data);
        let radii = [0.01, 0.05, 0.1, 0.2, 0.4, 0.8, 1.5];
        for i in (0..400).step_by(7) {
            let q = &data[2 * i..2 * i + 2];
            let mut diff = vec![0i64; radii.len() + 1];
            tree.accumulate_radius_counts(q, &radii, &mut diff);
            let mut acc = 0;
            for (j, r) in radii.iter().enumerate() {
                acc += diff[j];
                let brute = (0..400)
                    .filter(|&m| chebyshev(q, &data[2 * m..2 * m + 2]) < *r)
                    .count() as i64;
                assert_eq!(acc, brute);
            }
        }
    }
}
