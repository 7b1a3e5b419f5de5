use std::sync::Arc;

use nalgebra::Vector3;

use super::aabb::Aabb;
use super::ray::{Hit, Ray, WatertightRay};
use super::SpatialError;
use crate::par::{self, Parallelism};
use crate::tileset::TriangleMesh;

/// Maximum triangles per leaf.
pub const MAX_LEAF_SIZE: usize = 4;
const SAH_BINS: usize = 16;
// Below this many triangles subtrees are built on the calling thread.
const PARALLEL_CUTOFF: usize = 4096;
// Slack on box tests so rounding in box construction never culls a hit.
const TRAVERSAL_PAD_M: f64 = 1e-6;

/// A triangle in the scene: which mesh, which triangle of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriRef {
    pub mesh_id: u32,
    pub triangle: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// `refs[first..first + count]`.
    Leaf { first: u32, count: u32 },
    /// The left child is stored directly after its parent.
    Interior { left: u32, right: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub aabb: Aabb,
    pub kind: NodeKind,
}

/// Bounding volume hierarchy over the triangles of a set of meshes.
///
/// Node boxes live in absolute ECEF coordinates; triangle tests run in each
/// mesh's tile-local frame so vertex precision is never lost to the large
/// ECEF magnitudes.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    refs: Vec<TriRef>,
    meshes: Vec<Arc<TriangleMesh>>,
}

struct PrimInfo {
    aabb: Aabb,
    centroid: Vector3<f64>,
}

enum BuildNode {
    Leaf { start: usize, count: usize, aabb: Aabb },
    Interior { aabb: Aabb, left: Box<BuildNode>, right: Box<BuildNode> },
}

impl BuildNode {
    fn aabb(&self) -> Aabb {
        match self {
            BuildNode::Leaf { aabb, .. } | BuildNode::Interior { aabb, .. } => *aabb,
        }
    }
}

fn triangle_aabb(mesh: &TriangleMesh, t: usize) -> Aabb {
    let origin = mesh.tile_origin.to_vector();
    let corners = mesh.triangle_local(t).map(|p| origin + p);
    Aabb::from_points(&corners)
}

impl Bvh {
    pub fn build(meshes: Vec<Arc<TriangleMesh>>) -> Result<Self, SpatialError> {
        Self::build_with(meshes, Parallelism::default())
    }

    /// Builds with surface-area-heuristic binning, falling back to a median
    /// split when binning cannot separate the triangles. Output is identical
    /// for both parallelism modes.
    pub fn build_with(meshes: Vec<Arc<TriangleMesh>>, mode: Parallelism) -> Result<Self, SpatialError> {
        let refs: Vec<TriRef> = meshes
            .iter()
            .enumerate()
            .flat_map(|(m, mesh)| {
                (0..mesh.triangle_count()).map(move |t| TriRef { mesh_id: m as u32, triangle: t as u32 })
            })
            .collect();
        if refs.is_empty() {
            return Err(SpatialError::EmptyScene);
        }
        let info: Vec<PrimInfo> = par::map(mode, &refs, |r| {
            let aabb = triangle_aabb(&meshes[r.mesh_id as usize], r.triangle as usize);
            PrimInfo { centroid: aabb.center(), aabb }
        });

        let mut order: Vec<u32> = (0..refs.len() as u32).collect();
        let root = build_range(&info, &mut order, 0, mode);

        let mut nodes = Vec::with_capacity(2 * refs.len() / MAX_LEAF_SIZE + 1);
        flatten(&root, &mut nodes);
        let refs = order.iter().map(|&i| refs[i as usize]).collect();
        Ok(Self { nodes, refs, meshes })
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn refs(&self) -> &[TriRef] {
        &self.refs
    }

    pub fn meshes(&self) -> &[Arc<TriangleMesh>] {
        &self.meshes
    }

    pub fn triangle_count(&self) -> usize {
        self.refs.len()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].aabb
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }

    /// Closest hit along the ray. Equal distances resolve to the lowest
    /// (mesh id, triangle index), so results are deterministic.
    pub fn raycast(&self, ray: &Ray) -> Option<Hit> {
        let origin = ray.origin.to_vector();
        let inv_dir = ray.direction.map(|c| 1.0 / c);
        let shear = WatertightRay::new(&ray.direction);

        let mut best: Option<(f64, TriRef, f64, f64)> = None;
        let mut limit = ray.t_max;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        if self.nodes[0].aabb.ray_entry(&origin, &inv_dir, limit, TRAVERSAL_PAD_M).is_some() {
            stack.push((0, 0.0));
        }
        let mut local_origin: Option<(u32, Vector3<f64>)> = None;

        while let Some((index, entry)) = stack.pop() {
            if entry > limit + TRAVERSAL_PAD_M {
                continue;
            }
            let node = &self.nodes[index as usize];
            match node.kind {
                NodeKind::Leaf { first, count } => {
                    for r in &self.refs[first as usize..(first + count) as usize] {
                        let mesh = &self.meshes[r.mesh_id as usize];
                        let o = match local_origin {
                            Some((m, o)) if m == r.mesh_id => o,
                            _ => {
                                let o = origin - mesh.tile_origin.to_vector();
                                local_origin = Some((r.mesh_id, o));
                                o
                            }
                        };
                        let [a, b, c] = mesh.triangle_local(r.triangle as usize);
                        let Some(x) = shear.intersect(&(a - o), &(b - o), &(c - o), limit) else {
                            continue;
                        };
                        let better = match best {
                            None => true,
                            Some((t, key, _, _)) => x.t < t || (x.t == t && *r < key),
                        };
                        if better {
                            best = Some((x.t, *r, x.u, x.v));
                            limit = x.t;
                        }
                    }
                }
                NodeKind::Interior { left, right } => {
                    let l = self.nodes[left as usize].aabb.ray_entry(&origin, &inv_dir, limit, TRAVERSAL_PAD_M);
                    let r = self.nodes[right as usize].aabb.ray_entry(&origin, &inv_dir, limit, TRAVERSAL_PAD_M);
                    match (l, r) {
                        (Some(tl), Some(tr)) => {
                            // nearer child on top of the stack
                            if tl <= tr {
                                stack.push((right, tr));
                                stack.push((left, tl));
                            } else {
                                stack.push((left, tl));
                                stack.push((right, tr));
                            }
                        }
                        (Some(tl), None) => stack.push((left, tl)),
                        (None, Some(tr)) => stack.push((right, tr)),
                        (None, None) => {}
                    }
                }
            }
        }

        best.map(|(t, r, u, v)| {
            let mesh = &self.meshes[r.mesh_id as usize];
            let [a, b, c] = mesh.triangle_local(r.triangle as usize);
            let n = (b - a).cross(&(c - a)).normalize();
            Hit { t, point: ray.at(t), mesh_id: r.mesh_id, triangle_index: r.triangle, u, v, normal: [n.x, n.y, n.z] }
        })
    }

    pub fn raycast_batch(&self, rays: &[Ray], mode: Parallelism) -> Vec<Option<Hit>> {
        par::map(mode, rays, |r| self.raycast(r))
    }

    /// Calls `f` for every triangle in a leaf whose box passes `keep`;
    /// interior boxes failing `keep` prune their subtree.
    pub fn visit_triangles(&self, keep: impl Fn(&Aabb) -> bool, mut f: impl FnMut(TriRef)) {
        let mut stack = vec![0u32];
        while let Some(index) = stack.pop() {
            let node = &self.nodes[index as usize];
            if !keep(&node.aabb) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { first, count } => {
                    for r in &self.refs[first as usize..(first + count) as usize] {
                        f(*r);
                    }
                }
                NodeKind::Interior { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }

    /// Structural audit: every triangle referenced exactly once, leaf boxes
    /// contain their triangles, interior boxes contain their children.
    pub fn validate(&self) -> Result<(), String> {
        let total: usize = self.meshes.iter().map(|m| m.triangle_count()).sum();
        if total != self.refs.len() {
            return Err(format!("{} refs for {total} triangles", self.refs.len()));
        }
        let mut seen: Vec<Vec<bool>> = self.meshes.iter().map(|m| vec![false; m.triangle_count()]).collect();
        let mut leaf_refs = 0usize;
        for (i, node) in self.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Leaf { first, count } => {
                    if count == 0 || count as usize > MAX_LEAF_SIZE {
                        return Err(format!("leaf {i} holds {count} triangles"));
                    }
                    for r in &self.refs[first as usize..(first + count) as usize] {
                        let slot = &mut seen[r.mesh_id as usize][r.triangle as usize];
                        if *slot {
                            return Err(format!("triangle {r:?} referenced twice"));
                        }
                        *slot = true;
                        leaf_refs += 1;
                        let tb = triangle_aabb(&self.meshes[r.mesh_id as usize], r.triangle as usize);
                        if !node.aabb.contains(&tb) {
                            return Err(format!("leaf {i} does not contain triangle {r:?}"));
                        }
                    }
                }
                NodeKind::Interior { left, right } => {
                    if left as usize != i + 1 || right as usize <= i || right as usize >= self.nodes.len() {
                        return Err(format!("node {i} has bad child links"));
                    }
                    for c in [left, right] {
                        if !node.aabb.contains(&self.nodes[c as usize].aabb) {
                            return Err(format!("node {i} does not contain child {c}"));
                        }
                    }
                }
            }
        }
        if leaf_refs != total {
            return Err(format!("leaves cover {leaf_refs} of {total} triangles"));
        }
        Ok(())
    }
}

fn range_bounds(info: &[PrimInfo], order: &[u32]) -> (Aabb, Aabb) {
    let mut bounds = Aabb::empty();
    let mut centroids = Aabb::empty();
    for &i in order {
        let p = &info[i as usize];
        bounds = bounds.union(&p.aabb);
        centroids.grow(&p.centroid);
    }
    (bounds, centroids)
}

fn build_range(info: &[PrimInfo], order: &mut [u32], start: usize, mode: Parallelism) -> BuildNode {
    let (aabb, centroids) = range_bounds(info, order);
    let count = order.len();
    if count <= MAX_LEAF_SIZE {
        return BuildNode::Leaf { start, count, aabb };
    }

    let mid = sah_partition(info, order, &centroids).unwrap_or_else(|| median_partition(info, order, &centroids));
    let (lo, hi) = order.split_at_mut(mid);
    let sub_mode = if count >= PARALLEL_CUTOFF { mode } else { Parallelism::Sequential };
    let (left, right) =
        par::join(sub_mode, || build_range(info, lo, start, sub_mode), || build_range(info, hi, start + mid, sub_mode));
    BuildNode::Interior { aabb, left: Box::new(left), right: Box::new(right) }
}

/// Binned SAH split; returns the size of the left partition, or `None` when
/// every candidate leaves one side empty.
fn sah_partition(info: &[PrimInfo], order: &mut [u32], centroids: &Aabb) -> Option<usize> {
    let extent = centroids.diagonal();
    let mut best: Option<(f64, usize, usize)> = None; // cost, axis, split bin
    for axis in 0..3 {
        if !(extent[axis] > 0.0) {
            continue;
        }
        let scale = SAH_BINS as f64 / extent[axis];
        let bin_of = |c: f64| (((c - centroids.min[axis]) * scale) as usize).min(SAH_BINS - 1);
        let mut bins = [(Aabb::empty(), 0usize); SAH_BINS];
        for &i in order.iter() {
            let p = &info[i as usize];
            let b = &mut bins[bin_of(p.centroid[axis])];
            b.0 = b.0.union(&p.aabb);
            b.1 += 1;
        }
        // sweep from the right to collect suffix areas
        let mut right_area = [0.0; SAH_BINS];
        let mut right_count = [0usize; SAH_BINS];
        let mut acc = (Aabb::empty(), 0usize);
        for k in (1..SAH_BINS).rev() {
            acc = (acc.0.union(&bins[k].0), acc.1 + bins[k].1);
            right_area[k] = acc.0.surface_area();
            right_count[k] = acc.1;
        }
        let mut left = (Aabb::empty(), 0usize);
        for k in 1..SAH_BINS {
            left = (left.0.union(&bins[k - 1].0), left.1 + bins[k - 1].1);
            if left.1 == 0 || right_count[k] == 0 {
                continue;
            }
            let cost = left.0.surface_area() * left.1 as f64 + right_area[k] * right_count[k] as f64;
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, axis, k));
            }
        }
    }
    let (_, axis, split) = best?;
    let scale = SAH_BINS as f64 / extent[axis];
    let goes_left = |i: &u32| {
        let c = info[*i as usize].centroid[axis];
        ((((c - centroids.min[axis]) * scale) as usize).min(SAH_BINS - 1)) < split
    };
    Some(partition_in_place(order, goes_left))
}

fn median_partition(info: &[PrimInfo], order: &mut [u32], centroids: &Aabb) -> usize {
    let extent = centroids.diagonal();
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |a, b| {
        info[*a as usize].centroid[axis].total_cmp(&info[*b as usize].centroid[axis]).then(a.cmp(b))
    });
    mid
}

/// Deterministic in-place partition: the result depends only on the input.
fn partition_in_place(order: &mut [u32], pred: impl Fn(&u32) -> bool) -> usize {
    let mut next = 0;
    for i in 0..order.len() {
        if pred(&order[i]) {
            order.swap(i, next);
            next += 1;
        }
    }
    next
}

fn flatten(node: &BuildNode, out: &mut Vec<BvhNode>) -> u32 {
    let index = out.len() as u32;
    match node {
        BuildNode::Leaf { start, count, aabb } => {
            out.push(BvhNode { aabb: *aabb, kind: NodeKind::Leaf { first: *start as u32, count: *count as u32 } })
        }
        BuildNode::Interior { left, right, .. } => {
            out.push(BvhNode { aabb: node.aabb(), kind: NodeKind::Interior { left: 0, right: 0 } });
            let l = flatten(left, out);
            let r = flatten(right, out);
            out[index as usize].kind = NodeKind::Interior { left: l, right: r };
        }
    }
    index
}
