//! Exact k-d tree for k-nearest-neighbour and fixed-radius queries.
//!
//! Results are deterministic: neighbours are ordered by `(distance, index)`,
//! so equal distances resolve to the lower point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// A neighbour hit: squared distance and original point index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist_sq: f64,
    pub index: usize,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut tree = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64; D] {
        &self.points[index]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for &i in &self.order[start..end] {
            for a in 0..D {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..D)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, ascending by `(distance, index)`.
    /// `exclude` drops one index (typically the query point itself).
    pub fn knn(&self, query: &[f64; D], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, exclude, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    fn knn_rec(
        &self,
        node: usize,
        q: &[f64; D],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Neighbor {
                        dist_sq: dist_sq(q, &self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, exclude, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |n| n.dist_sq)
                };
                if diff * diff <= worst {
                    self.knn_rec(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Indices of all points with distance `<= radius`, ascending by index.
    pub fn within(&self, query: &[f64; D], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_rec(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &[f64; D], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| dist_sq(q, &self.points[i]) <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.within_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.within_rec(right, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[[f64; 2]], q: &[f64; 2], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| Neighbor {
                dist_sq: dist_sq(q, p),
                index: i,
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        // four points at equal distance from the origin query
        let pts = vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [5.0, 5.0]];
        let tree = KdTree::new(pts);
        let nn = tree.knn(&[0.0, 0.0], 2, None);
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn duplicate_points_do_not_break_build() {
        let tree = KdTree::new(vec![[1.0, 1.0, 1.0]; 100]);
        assert_eq!(tree.knn(&[1.0, 1.0, 1.0], 3, Some(0)).len(), 3);
        assert_eq!(tree.within(&[1.0, 1.0, 1.0], 0.0).len(), 100);
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..200),
            q in (-12.0f64..12.0, -12.0f64..12.0),
            k in 1usize..20,
        ) {
            // quantize so that exact ties actually happen
            let pts: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [(x * 2.0).round() / 2.0, (y * 2.0).round() / 2.0]).collect();
            let q = [q.0, q.1];
            let tree = KdTree::new(pts.clone());
            prop_assert_eq!(tree.knn(&q, k, None), brute_knn(&pts, &q, k, None));
            prop_assert_eq!(tree.knn(&pts[0], k, Some(0)), brute_knn(&pts, &pts[0], k, Some(0)));
        }

        #[test]
        fn within_matches_brute_force(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..200),
            r in 0.0f64..6.0,
        ) {
            let pts: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let tree = KdTree::new(pts.clone());
            let q = pts[0];
            let expect: Vec<usize> = (0..pts.len()).filter(|&i| dist_sq(&q, &pts[i]) <= r * r).collect();
            prop_assert_eq!(tree.within(&q, r), expect);
        }
    }
}
