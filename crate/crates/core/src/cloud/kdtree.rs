//! Static KD-tree over a point snapshot with exact closed-ball queries.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Spatial index used for radius neighborhoods.
///
/// Indices returned by queries refer to the point slice the tree was built
/// from. Results are sorted ascending so callers get a deterministic order.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    root: Node,
}

impl NeighborIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let points = points.to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = build(&points, &mut order, 0, points.len());
        Self {
            points,
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Indices of all points `q` with `|q - p| <= r`.
    pub fn radius_neighbors(&self, p: &Vector3<f64>, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if r.is_nan() || r < 0.0 || self.points.is_empty() {
            return out;
        }
        let r2 = r * r;
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match node {
                Node::Leaf { start, end } => {
                    for &i in &self.order[*start..*end] {
                        if (self.points[i] - p).norm_squared() <= r2 {
                            out.push(i);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let d = p[*axis] - value;
                    // Left holds coordinates <= value, right holds >= value.
                    if d <= r {
                        stack.push(left);
                    }
                    if d >= -r {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize) -> Node {
    let n = end - start;
    if n <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let extent = hi - lo;
    let axis = extent.imax();
    if extent[axis] <= 0.0 {
        return Node::Leaf { start, end };
    }
    let mid = n / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    let left = build(points, order, start, start + mid);
    let right = build(points, order, start + mid, end);
    Node::Split {
        axis,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}
