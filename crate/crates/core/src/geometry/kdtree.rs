use std::cmp::Ordering;

use super::Vec3;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static 3-d tree over a borrowed point slice.
///
/// All queries break distance ties by the lowest point index so results are
/// identical to an exhaustive linear scan.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        self.cmp_key(other) == Ordering::Less
    }

    fn cmp_key(&self, other: &Candidate) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &'a [Vec3] {
        self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = pts[self.order[mid]][axis];
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

    /// Closest point to `query` as `(index, distance)`.
    pub fn nearest(&self, query: &Vec3) -> Result<(usize, f64)> {
        if self.is_empty() {
            return Err(Error::Size("nearest-neighbour query on an empty cloud".into()));
        }
        let mut best = Candidate {
            dist2: f64::INFINITY,
            index: usize::MAX,
        };
        self.nearest_rec(0, query, &mut best);
        Ok((best.index, best.dist2.sqrt()))
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if c.better_than(best) {
                        *best = c;
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
                self.nearest_rec(near, q, best);
                // `<=` keeps equal-distance candidates with lower indices reachable.
                if diff * diff <= best.dist2 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by (distance, index).
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap: Vec<Candidate> = Vec::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        heap.sort_by(|a, b| a.cmp_key(b));
        heap.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, found: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if found.len() < k {
                        found.push(c);
                    } else {
                        let (wi, worst) = worst_of(found);
                        if c.better_than(&worst) {
                            found[wi] = c;
                        }
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
                self.knn_rec(near, q, k, found);
                if found.len() < k || diff * diff <= worst_of(found).1.dist2 {
                    self.knn_rec(far, q, k, found);
                }
            }
        }
    }

    /// Indices of all points within `radius` (inclusive), ascending.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.radius_rec(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
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
                    self.radius_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_rec(right, q, r2, out);
                }
            }
        }
    }
}

fn worst_of(found: &[Candidate]) -> (usize, Candidate) {
    let mut wi = 0;
    for (i, c) in found.iter().enumerate() {
        if found[wi].better_than(c) {
            wi = i;
        }
    }
    (wi, found[wi])
}
