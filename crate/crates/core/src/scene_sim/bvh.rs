//! Bounding-volume hierarchy over scene triangles.

use nalgebra::Vector3;

use super::Triangle;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.min[a] - origin[a]) * inv_dir[a];
            let mut far = (self.max[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN arises for a zero direction component on a slab boundary;
            // treat it as non-restricting.
            if !near.is_nan() {
                t0 = t0.max(near);
            }
            if !far.is_nan() {
                t1 = t1.min(far * (1.0 + 1e-12));
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        bounds: Aabb,
        start: usize,
        end: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub(crate) fn build(triangles: &[Triangle]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..triangles.len()).collect(),
        };
        if !triangles.is_empty() {
            let centroids: Vec<Vector3<f64>> =
                triangles.iter().map(|t| (t.a + t.b + t.c) / 3.0).collect();
            bvh.build_node(triangles, &centroids, 0, triangles.len());
        }
        bvh
    }

    fn build_node(
        &mut self,
        tris: &[Triangle],
        centroids: &[Vector3<f64>],
        start: usize,
        end: usize,
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..end] {
            for v in [&tris[i].a, &tris[i].b, &tris[i].c] {
                bounds.grow(v);
            }
            cbounds.grow(&centroids[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { bounds, start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (cbounds.max - cbounds.min).imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(tris, centroids, start, mid);
        let right = self.build_node(tris, centroids, mid, end);
        self.nodes[id] = Node::Inner {
            bounds,
            left,
            right,
        };
        id
    }

    /// Nearest intersection as `(distance, triangle index)`. Equal distances
    /// resolve to the lower triangle index.
    pub(crate) fn intersect(
        &self,
        tris: &[Triangle],
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        max_range: f64,
    ) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = dir.map(|d| 1.0 / d);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let limit = best.map_or(max_range, |b| b.0);
            if self.nodes[n]
                .bounds()
                .hit(origin, &inv_dir, limit)
                .is_none()
            {
                continue;
            }
            match self.nodes[n] {
                Node::Leaf { start, end, .. } => {
                    for &i in &self.order[start..end] {
                        if let Some(t) = tris[i].intersect(origin, dir) {
                            let better = match best {
                                None => t <= max_range,
                                Some((bt, bi)) => t < bt || (t == bt && i < bi),
                            };
                            if better {
                                best = Some((t, i));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().hit(origin, &inv_dir, limit);
                    let dr = self.nodes[right].bounds().hit(origin, &inv_dir, limit);
                    match (dl, dr) {
                        (Some(a), Some(b)) if a <= b => {
                            stack.push(right);
                            stack.push(left);
                        }
                        (Some(_), Some(_)) => {
                            stack.push(left);
                            stack.push(right);
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }
}
